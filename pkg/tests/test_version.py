"""Tests for app.version."""

from __future__ import annotations

import subprocess
import unittest
from unittest.mock import patch

from app import version


class TestCommit(unittest.TestCase):
    def setUp(self) -> None:
        version.get_commit.cache_clear()
        self.addCleanup(version.get_commit.cache_clear)

    def test_env_override(self) -> None:
        with patch.dict("os.environ", {"LEVPAIR_COMMIT": "abc123"}):
            self.assertEqual(version.get_commit(), "abc123")

    def test_clean_and_dirty_checkout(self) -> None:
        with patch.dict("os.environ", {"LEVPAIR_COMMIT": ""}):
            with patch("app.version._git", side_effect=["0123456789ab", ""]):
                self.assertEqual(version.get_commit(), "0123456789ab")
            version.get_commit.cache_clear()
            with patch("app.version._git", side_effect=["0123456789ab", " M app/cli.py"]):
                self.assertEqual(version.get_commit(), "0123456789ab-dirty")

    def test_no_checkout(self) -> None:
        err = subprocess.CalledProcessError(128, ["git"])
        with patch.dict("os.environ", {"LEVPAIR_COMMIT": ""}), patch("app.version._git", side_effect=err):
            self.assertEqual(version.get_commit(), "unknown")

    def test_result_is_cached(self) -> None:
        with patch.dict("os.environ", {"LEVPAIR_COMMIT": "first"}):
            version.get_commit()
        with patch.dict("os.environ", {"LEVPAIR_COMMIT": "second"}):
            self.assertEqual(version.get_commit(), "first")


class TestVersion(unittest.TestCase):
    def test_version_is_a_string(self) -> None:
        self.assertIsInstance(version.get_version(), str)
        self.assertTrue(version.get_version())


if __name__ == "__main__":
    unittest.main()
