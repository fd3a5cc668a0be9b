"""Minimal dense tensor core.

Tensors are immutable wrappers around row-major numpy arrays with explicit
broadcasting rules: only extent-1 (singleton) dimensions broadcast, any other
mismatch raises :class:`ShapeMismatch`.  All operations are pure functions
returning new tensors.

Two pieces of global state are provided as context managers:

* :func:`deterministic_mode` -- when on (the default), reductions accumulate
  strictly left to right so results are bitwise reproducible.
* :class:`AllocationTracker` -- counts elements of every tensor allocated
  through this module, so kernels can report the largest temporary they built.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import InvalidTemperature, ShapeMismatch

__all__ = [
    "Tensor",
    "AllocationTracker",
    "deterministic_mode",
    "is_deterministic",
    "matmul",
    "elementwise",
    "reduce_sum",
    "softmax",
    "tril_mask",
    "transpose",
    "reshape",
]

_DETERMINISTIC = True
_TRACKERS: list["AllocationTracker"] = []


@contextmanager
def deterministic_mode(enabled: bool = True):
    """Toggle strict left-to-right reduction order within a scope."""
    global _DETERMINISTIC
    prev = _DETERMINISTIC
    _DETERMINISTIC = enabled
    try:
        yield
    finally:
        _DETERMINISTIC = prev


def is_deterministic() -> bool:
    return _DETERMINISTIC


class AllocationTracker:
    """Records element counts of tensors allocated while active.

    ``largest`` is the element count of the single biggest tensor seen,
    ``total`` the cumulative count.  Only allocations that go through the
    tensor core are counted (not numpy scratch space), which is exactly the
    accounting the space-complexity checks need.
    """

    def __init__(self):
        self.largest = 0
        self.total = 0

    def __enter__(self) -> "AllocationTracker":
        _TRACKERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TRACKERS.remove(self)


def _record_alloc(count: int) -> None:
    for tracker in _TRACKERS:
        tracker.total += count
        if count > tracker.largest:
            tracker.largest = count


class Tensor:
    """Dense row-major tensor of 64-bit floats (32-bit mode available)."""

    __slots__ = ("data",)

    def __init__(self, data, dtype=np.float64, _shared: bool = False):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        arr.flags.writeable = False
        self.data = arr
        if not _shared:
            _record_alloc(arr.size)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def tolist(self):
        return self.data.tolist()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    @staticmethod
    def zeros(shape, dtype=np.float64) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), dtype=dtype)

    @staticmethod
    def from_array(arr, dtype=None) -> "Tensor":
        arr = np.asarray(arr)
        return Tensor(arr, dtype=dtype or arr.dtype)


def _wrap_shared(arr: np.ndarray) -> Tensor:
    """Wrap an existing buffer without counting a new allocation."""
    t = Tensor.__new__(Tensor)
    view = arr.view()
    view.flags.writeable = False
    t.data = view
    return t


def _wrap_new(arr: np.ndarray) -> Tensor:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    t = Tensor.__new__(Tensor)
    t.data = arr
    _record_alloc(arr.size)
    return t


def _check_batch_dims(a_shape, b_shape) -> None:
    for da, db in zip(a_shape, b_shape):
        if da != db and da != 1 and db != 1:
            raise ShapeMismatch(
                f"batch dims {a_shape} and {b_shape} differ on a non-singleton extent"
            )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix multiplication contracting the last dim of ``a`` with
    the second-to-last dim of ``b``; leading dims broadcast on singletons."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands need at least 2 dimensions")
    if a.ndim != b.ndim:
        raise ShapeMismatch(f"matmul rank mismatch: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(
            f"contracted dims differ: {a.shape[-1]} vs {b.shape[-2]}"
        )
    _check_batch_dims(a.shape[:-2], b.shape[:-2])
    return _wrap_new(np.matmul(a.data, b.data))


_ELEMENTWISE_OPS = ("add", "sub", "mul", "div", "scale")


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Componentwise op with singleton-only broadcasting.

    ``b`` may be a scalar; ``scale`` requires a scalar operand.
    """
    if op not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown elementwise op {op!r}")
    if isinstance(b, Tensor):
        if op == "scale":
            raise ShapeMismatch("scale takes a scalar operand")
        if a.ndim != b.ndim:
            raise ShapeMismatch(f"rank mismatch: {a.shape} vs {b.shape}")
        _check_batch_dims(a.shape, b.shape)
        rhs = b.data
    else:
        rhs = float(b)
    if op == "add":
        out = a.data + rhs
    elif op == "sub":
        out = a.data - rhs
    elif op == "div":
        out = a.data / rhs
    else:  # mul, scale
        out = a.data * rhs
    return _wrap_new(out)


def reduce_sum(a: Tensor, dim_index: int) -> Tensor:
    """Sum along one dimension, keeping it as a singleton.

    In deterministic mode the accumulation is strictly left to right along
    the reduced dimension (matching a sequential loop bit for bit).
    """
    if not 0 <= dim_index < a.ndim:
        raise IndexError(f"dim {dim_index} out of range for shape {a.shape}")
    if a.shape[dim_index] == 1:
        return _wrap_new(a.data.copy())
    if _DETERMINISTIC:
        # cumsum accumulates sequentially; its last slice is the L-to-R sum
        out = np.cumsum(a.data, axis=dim_index)
        idx = [slice(None)] * a.ndim
        idx[dim_index] = slice(-1, None)
        out = out[tuple(idx)].copy()
    else:
        out = np.sum(a.data, axis=dim_index, keepdims=True)
    return _wrap_new(out)


def softmax(y: Tensor, temperature: float, dim: int = 1) -> Tensor:
    """Temperature softmax along ``dim`` with max-subtraction for stability."""
    if not temperature > 0:
        raise InvalidTemperature(f"temperature must be > 0, got {temperature}")
    z = y.data / temperature
    z = z - np.max(z, axis=dim, keepdims=True)
    e = np.exp(z)
    return _wrap_new(e / np.sum(e, axis=dim, keepdims=True))


def tril_mask(n: int, dtype=np.float64) -> Tensor:
    """n x n lower-triangular matrix of ones (diagonal inclusive)."""
    if n < 1:
        raise ShapeMismatch(f"tril_mask needs n >= 1, got {n}")
    return _wrap_new(np.tril(np.ones((n, n), dtype=dtype)))


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute dimensions (default: swap the last two); copies to row-major."""
    if axes is None:
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    return _wrap_new(np.transpose(a.data, axes).copy())


def reshape(a: Tensor, shape) -> Tensor:
    """Reinterpret the row-major buffer under a new shape; never copies."""
    if int(np.prod(shape)) != a.size:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {tuple(shape)}")
    return _wrap_shared(a.data.reshape(shape))
