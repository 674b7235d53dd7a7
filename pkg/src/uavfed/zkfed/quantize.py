"""Fixed-point quantization of weight vectors for commitment.

Scale 2^16, round-half-even, coordinates clamped to [-2^31, 2^31). The
clamp range and a client-count cap of 2^20 keep every plaintext sum far
below q/2, so summed field embeddings never wrap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["SCALE_BITS", "QuantizedVector", "quantize", "dequantize", "MAX_CLIENTS"]

SCALE_BITS = 16
_LIMIT = 1 << 31  # 2^15 whole units at 2^16 fractional scale
MAX_CLIENTS = 1 << 20


@dataclass(frozen=True)
class QuantizedVector:
    """Signed fixed-point coordinates plus a count of clamped entries."""

    values: np.ndarray
    scale_bits: int = SCALE_BITS
    n_clamped: int = 0

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.int64)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def quantize(vec: np.ndarray, scale_bits: int = SCALE_BITS) -> QuantizedVector:
    if not np.all(np.isfinite(vec)):
        raise ValueError("cannot quantize non-finite values")
    scaled = np.rint(np.asarray(vec, dtype=float) * (1 << scale_bits))
    clamped = np.clip(scaled, -_LIMIT, _LIMIT - 1)
    n_clamped = int(np.sum(clamped != scaled))
    return QuantizedVector(
        values=clamped.astype(np.int64), scale_bits=scale_bits, n_clamped=n_clamped
    )


def dequantize(qv: QuantizedVector) -> np.ndarray:
    return qv.values.astype(float) / (1 << qv.scale_bits)
