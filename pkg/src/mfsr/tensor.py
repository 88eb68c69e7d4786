"""Dense tensor plumbing: precision control, parameter containers, binary I/O.

Tensors are plain numpy arrays throughout the package (64-bit by default,
32-bit selectable per run). Image tensors use NCHW layout.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"MFT1"

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR_KIND = {"float32": 0, "float64": 1}


class InvariantError(RuntimeError):
    """An internal invariant was violated (maps to CLI exit code 2)."""


def resolve_dtype(precision) -> np.dtype:
    """Map a precision name ("f32"/"f64" or numpy dtype) to a numpy dtype."""
    if isinstance(precision, np.dtype):
        if precision not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"unsupported precision {precision}")
        return precision
    name = str(precision).lower()
    if name in ("f32", "float32", "single"):
        return np.dtype(np.float32)
    if name in ("f64", "float64", "double"):
        return np.dtype(np.float64)
    raise ValueError(f"unsupported precision {precision!r} (use f32 or f64)")


def assert_finite(arr: np.ndarray, what: str) -> None:
    """Raise InvariantError if arr contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise InvariantError(f"{what}: non-finite values detected")


class LayerParams:
    """Weights, biases, gradients, and (for batch norm) running statistics.

    For conv/deconv layers `weight` is the 4-D kernel tensor and `bias` a
    per-output-channel vector. For batch norm layers `weight` is the
    per-channel scale (gamma) and `bias` the per-channel shift (beta);
    such layers additionally track running mean/variance.

    bias may be None for bias-free convolutions (a bias feeding batch norm
    is exactly unobservable, so such layers omit it).
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray | None,
                 track_stats: bool = False):
        self.weight = weight
        self.bias = bias
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = None if bias is None else np.zeros_like(bias)
        if track_stats:
            n = weight.shape[0]
            self.running_mean = np.zeros(n, dtype=weight.dtype)
            self.running_var = np.ones(n, dtype=weight.dtype)
        else:
            self.running_mean = None
            self.running_var = None

    @property
    def tracks_stats(self) -> bool:
        return self.running_mean is not None

    def zero_grads(self) -> None:
        self.grad_weight.fill(0.0)
        if self.grad_bias is not None:
            self.grad_bias.fill(0.0)

    def state_tensors(self):
        """Named persistent tensors (what a checkpoint stores), in fixed order."""
        items = [("weight", self.weight)]
        if self.bias is not None:
            items.append(("bias", self.bias))
        if self.tracks_stats:
            items += [("running_mean", self.running_mean),
                      ("running_var", self.running_var)]
        return items

    def set_state_tensor(self, field: str, value: np.ndarray) -> None:
        current = getattr(self, field)
        if current is None:
            raise ValueError(f"layer does not track {field}")
        if current.shape != value.shape:
            raise ValueError(
                f"{field}: shape mismatch {value.shape} vs expected {current.shape}")
        setattr(self, field, value)
        if field == "weight":
            self.grad_weight = np.zeros_like(value)
        elif field == "bias":
            self.grad_bias = np.zeros_like(value)


def save_tensor(fh, arr: np.ndarray) -> None:
    """Write one tensor in the MFT1 format (little-endian, raw data)."""
    arr = np.ascontiguousarray(arr)
    if arr.dtype.name not in _TAG_FOR_KIND:
        raise ValueError(f"unsupported dtype {arr.dtype} for serialization")
    tag = _TAG_FOR_KIND[arr.dtype.name]
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", tag, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes())


def load_tensor(fh) -> np.ndarray:
    """Read one MFT1 tensor; raises ValueError on malformed input."""
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    tag, rank = struct.unpack("<BB", fh.read(2))
    if tag not in _DTYPE_TAGS:
        raise ValueError(f"unknown dtype tag {tag}")
    shape = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
    dtype = _DTYPE_TAGS[tag]
    count = int(np.prod(shape)) if shape else 1
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ValueError("truncated tensor data")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def save_tensor_file(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        save_tensor(fh, arr)


def load_tensor_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return load_tensor(fh)
