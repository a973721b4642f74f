"""LSTM allocator: one LSTM layer, a dense head and a 2-way softmax.

Parameters live in a plain ``dict[str, np.ndarray]`` keyed by
``PARAM_NAMES``. Gate columns of ``W_x``, ``W_h`` and ``b`` are ordered
input, forget, cell, output. ``forward_batch`` runs over a batch of
windows at once and accepts either arrays or tape ``Var`` parameters.

Windows are fed oldest row first. Within a step the accumulation order is
``x @ W_x + h @ W_h + b``.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from ..data import N_FEATURES, FeatureWindow
from ..utils import CheckpointError, ShapeError
from . import autodiff as ad

logger = logging.getLogger(__name__)

Params = dict[str, np.ndarray]

PARAM_NAMES: tuple[str, ...] = ("W_x", "W_h", "b", "W_o", "b_o")
N_ASSETS = 2
HIDDEN_SIZE = 64
FORGET_BIAS = 1.0

CHECKPOINT_MAGIC = b"LPCK"
CHECKPOINT_VERSION = 1


def param_shapes(hidden: int = HIDDEN_SIZE, n_input: int = N_FEATURES) -> dict[str, tuple[int, ...]]:
    return {
        "W_x": (n_input, 4 * hidden),
        "W_h": (hidden, 4 * hidden),
        "b": (4 * hidden,),
        "W_o": (hidden, N_ASSETS),
        "b_o": (N_ASSETS,),
    }


def init_params(seed: int, hidden: int = HIDDEN_SIZE, n_input: int = N_FEATURES) -> Params:
    """Uniform(-1/sqrt(hidden), 1/sqrt(hidden)) everywhere, forget-gate bias shifted by +1."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden)
    params = {
        name: rng.uniform(-bound, bound, size=shape)
        for name, shape in param_shapes(hidden, n_input).items()
    }
    params["b"][hidden:2 * hidden] += FORGET_BIAS
    return params


def hidden_size(params: Mapping[str, Any]) -> int:
    return ad.value_of(params["W_h"]).shape[0]


def forward_batch(params: Mapping[str, Any], windows: np.ndarray) -> Any:
    """Softmax weights ``(N, 2)`` for windows shaped ``(N, L, n_input)``."""
    x = np.asarray(windows, dtype=np.float64)
    n_input = ad.value_of(params["W_x"]).shape[0]
    if x.ndim != 3 or x.shape[2] != n_input:
        raise ShapeError(f"expected windows (N, L, {n_input}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeError("feature windows contain non-finite values")

    H = hidden_size(params)
    n, L, _ = x.shape
    h: Any = np.zeros((n, H))
    c: Any = np.zeros((n, H))
    for t in range(L):
        gates = ad.add(ad.add(ad.matmul(x[:, t, :], params["W_x"]), ad.matmul(h, params["W_h"])), params["b"])
        i_g = ad.sigmoid(ad.index(gates, (slice(None), slice(0, H))))
        f_g = ad.sigmoid(ad.index(gates, (slice(None), slice(H, 2 * H))))
        g_g = ad.tanh(ad.index(gates, (slice(None), slice(2 * H, 3 * H))))
        o_g = ad.sigmoid(ad.index(gates, (slice(None), slice(3 * H, 4 * H))))
        c = ad.add(ad.mul(f_g, c), ad.mul(i_g, g_g))
        h = ad.mul(o_g, ad.tanh(c))
    logits = ad.add(ad.matmul(h, params["W_o"]), params["b_o"])
    return ad.softmax(logits, axis=1)


def forward(params: Params, window: FeatureWindow | np.ndarray) -> np.ndarray:
    """Allocation ``(w_u, w_d)`` for one ``L x 18`` window."""
    matrix = window.matrix if isinstance(window, FeatureWindow) else np.asarray(window)
    if matrix.ndim != 2:
        raise ShapeError(f"expected an L x {N_FEATURES} window, got {matrix.shape}")
    return np.asarray(forward_batch(params, matrix[None, :, :]))[0]


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(params: Params, path: str | Path, seed: int, extra: dict | None = None) -> Path:
    """Write ``LPCK | version | header length | JSON header | float64 LE payload``.

    Identical parameters and metadata give identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "names": list(PARAM_NAMES),
        "shapes": [list(params[n].shape) for n in PARAM_NAMES],
        "dtype": "<f8",
        "seed": seed,
        "hidden_size": hidden_size(params),
        "input_size": params["W_x"].shape[0],
        "extra": extra or {},
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with path.open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
    return path


def load_checkpoint(path: str | Path) -> tuple[Params, dict]:
    """Read a checkpoint; returns ``(params, header)``."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    blob = path.read_bytes()
    prefix = len(CHECKPOINT_MAGIC) + struct.calcsize("<HI")
    if len(blob) < prefix or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack("<HI", blob[4:prefix])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[prefix:prefix + head_len])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc

    offset = prefix + head_len
    params: Params = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        params[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes")
    if set(params) != set(PARAM_NAMES):
        raise CheckpointError(f"{path}: unexpected tensors {sorted(params)}")
    return params, header
