"""Dense float64 image tensors and linear/log domain conversion.

Every image-like quantity in this package (inputs, albedo, shading,
variance maps) is a PlaneTensor: a row-major height x width x channels
array of float64. Working in float64 keeps finite-difference gradient
checks and solver/oracle comparisons well below 1e-6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EWISE_OPS = ("add", "sub", "mul")

DEFAULT_LOG_EPSILON = 1e-4


class PlaneTensor:
    """Immutable dense rank-3 image tensor (h, w, c), float64, row-major."""

    __slots__ = ("_array",)

    def __init__(self, array) -> None:
        # Always copy: freezing a view would freeze the caller's buffer.
        arr = np.array(array, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected rank-2 or rank-3 array, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise ValueError(f"all dimensions must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor elements must be finite")
        arr.flags.writeable = False
        self._array = arr

    @property
    def array(self) -> np.ndarray:
        """Read-only (h, w, c) view of the data."""
        return self._array

    @property
    def height(self) -> int:
        return self._array.shape[0]

    @property
    def width(self) -> int:
        return self._array.shape[1]

    @property
    def channels(self) -> int:
        return self._array.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._array.shape

    def __repr__(self) -> str:
        h, w, c = self.shape
        return f"PlaneTensor({h}x{w}x{c})"


@dataclass(frozen=True)
class LogDomainImage:
    """A PlaneTensor whose elements are log(max(linear value, epsilon))."""

    planes: PlaneTensor
    epsilon: float

    @property
    def array(self) -> np.ndarray:
        return self.planes.array

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.planes.shape


def to_log(img: PlaneTensor, epsilon: float = DEFAULT_LOG_EPSILON) -> LogDomainImage:
    """Convert a non-negative linear image to log domain, clamping at epsilon."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    arr = img.array
    if np.any(arr < 0):
        raise ValueError("linear image must be non-negative for log conversion")
    return LogDomainImage(PlaneTensor(np.log(np.maximum(arr, epsilon))), epsilon)


def from_log(img: LogDomainImage) -> PlaneTensor:
    """Invert to_log by element-wise exp (exact inverse above the clamp floor)."""
    return PlaneTensor(np.exp(img.array))


def ewise(a: PlaneTensor, b: PlaneTensor | np.ndarray, op: str) -> PlaneTensor:
    """Element-wise add/sub/mul of two tensors.

    `b` must match `a`'s shape exactly, or be a length-c vector applied as a
    per-channel scalar.
    """
    if op not in _EWISE_OPS:
        raise ValueError(f"op must be one of {_EWISE_OPS}, got {op!r}")
    barr = b.array if isinstance(b, PlaneTensor) else np.asarray(b, dtype=np.float64)
    if barr.shape != a.shape:
        if barr.ndim == 1 and barr.shape[0] == a.channels:
            barr = barr[None, None, :]
        else:
            raise ValueError(
                f"shape mismatch: {a.shape} vs {barr.shape} "
                "(need equal shapes or a per-channel vector)"
            )
    if op == "add":
        out = a.array + barr
    elif op == "sub":
        out = a.array - barr
    else:
        out = a.array * barr
    return PlaneTensor(out)
