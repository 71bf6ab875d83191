"""Flat row-major tensor container shared by all kernels, models and passes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ELEMENT_SIZES = {"f32": 4, "f64": 8, "i8": 1}

_KIND_TO_DTYPE = {
    "f32": np.dtype(np.float32),
    "f64": np.dtype(np.float64),
    "i8": np.dtype(np.int8),
}
_DTYPE_TO_KIND = {dt: kind for kind, dt in _KIND_TO_DTYPE.items()}


class ShapeError(ValueError):
    """Operand dimensions do not line up; the message names the offending dims."""


@dataclass(frozen=True)
class Tensor:
    """N-dimensional numeric array with an element kind and optional int8 scale.

    The payload is a C-contiguous (row-major) numpy array whose dtype is one
    of float32, float64 or int8.  ``quant_scale`` is present exactly when the
    element kind is int8; dequantized values are ``data * quant_scale``.
    Tensors are treated as immutable once constructed.
    """

    data: np.ndarray
    quant_scale: float | None = None

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data)
        if arr.dtype not in _DTYPE_TO_KIND:
            raise ValueError(f"unsupported element dtype {arr.dtype}; "
                             f"expected one of float32, float64, int8")
        object.__setattr__(self, "data", arr)
        kind = _DTYPE_TO_KIND[arr.dtype]
        if kind == "i8":
            if self.quant_scale is None:
                raise ValueError("int8 tensor requires a quant_scale")
            if not (np.isfinite(self.quant_scale) and self.quant_scale > 0):
                raise ValueError(f"quant_scale must be finite and > 0, got {self.quant_scale}")
            object.__setattr__(self, "quant_scale", float(self.quant_scale))
        elif self.quant_scale is not None:
            raise ValueError(f"quant_scale only allowed for int8 tensors, not {kind}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def elem_kind(self) -> str:
        return _DTYPE_TO_KIND[self.data.dtype]

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def flat(self) -> np.ndarray:
        """Row-major flat view of the payload."""
        return self.data.reshape(-1)

    def byte_size(self) -> int:
        """Storage bytes: elements times element size, plus 4 per quant scale."""
        n = self.size * ELEMENT_SIZES[self.elem_kind]
        if self.quant_scale is not None:
            n += 4
        return n

    def dequantized(self) -> np.ndarray:
        """Float32 view of the values (identity for float tensors)."""
        if self.elem_kind == "i8":
            return self.data.astype(np.float32) * np.float32(self.quant_scale)
        return self.data


def f32(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float32))


def f64(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64))


def i8(values, scale: float) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.int8), quant_scale=scale)
