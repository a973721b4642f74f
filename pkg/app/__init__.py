"""Leveraged-token pair allocator: data, accounting, LSTM training and backtests."""

from .version import get_version

__version__ = get_version()

__all__ = ["__version__"]
