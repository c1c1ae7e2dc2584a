"""Effective-CIR extraction and the board-to-phone transfer latency model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import CIR_LENGTH, CirRecord, fmt_real
from .errors import OutOfDomainError, TruncatedWindowError

ECIR_LENGTH = 135
ECIR_MARGIN = 5
N_DIAGNOSTICS = 8


@dataclass(frozen=True, eq=False)
class Ecir:
    values: np.ndarray
    origin_index: int

    def __post_init__(self) -> None:
        if self.values.shape != (ECIR_LENGTH,):
            raise ValueError(f"eCIR must have {ECIR_LENGTH} values")
        if self.origin_index < 0:
            raise ValueError("origin_index must be non-negative")

    def embed(self, length: int = CIR_LENGTH) -> np.ndarray:
        """Place the window back into a zero vector of the full record length."""
        out = np.zeros(length)
        out[self.origin_index:self.origin_index + ECIR_LENGTH] = self.values
        return out

    def to_row(self) -> list[str]:
        return [str(self.origin_index)] + [fmt_real(v) for v in self.values]

    @classmethod
    def from_row(cls, row: list[str]) -> "Ecir":
        return cls(values=np.array(row[1:], dtype=np.float64), origin_index=int(row[0]))


def extract_ecir(record: CirRecord) -> Ecir:
    start = record.diagnostics.fp_index - ECIR_MARGIN
    if start < 0 or start + ECIR_LENGTH > len(record.magnitudes):
        raise TruncatedWindowError(
            f"eCIR window [{start}, {start + ECIR_LENGTH}) falls outside the record")
    return Ecir(values=record.magnitudes[start:start + ECIR_LENGTH].copy(), origin_index=start)


@dataclass(frozen=True)
class LatencyModel:
    """Two measured transfer points; latency is affine between (and beyond) them."""

    full_ms: float = 223.4
    ecir_ms: float = 17.8
    full_units: int = CIR_LENGTH + N_DIAGNOSTICS
    ecir_units: int = ECIR_LENGTH

    @property
    def slope_ms(self) -> float:
        return (self.full_ms - self.ecir_ms) / (self.full_units - self.ecir_units)

    @property
    def intercept_ms(self) -> float:
        return self.ecir_ms - self.slope_ms * self.ecir_units


def transfer_latency(n_units: float, model: LatencyModel = LatencyModel()) -> float:
    if n_units < model.ecir_units:
        raise OutOfDomainError(f"latency model is only defined for n >= {model.ecir_units}")
    # exact at the far calibration point regardless of rounding in the slope
    if n_units == model.full_units:
        return model.full_ms
    return model.ecir_ms + model.slope_ms * (n_units - model.ecir_units)


def meets_realtime(latency_ms: float, ranging_interval_ms: float) -> bool:
    if latency_ms <= 0 or ranging_interval_ms <= 0:
        raise ValueError("latency and interval must be positive")
    return latency_ms < ranging_interval_ms
