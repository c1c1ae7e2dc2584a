"""Synthetic 1016-sample UWB channel impulse responses and their diagnostics.

A record is an accumulator readout at 1 ns spacing: complex Gaussian noise
everywhere, and from the first-path index on a multipath envelope with random
per-sample phase. LOS envelopes are one strong, exponentially decaying path.
NLOS envelopes have a weak first path followed by a diffuse body carrying
Poisson-arriving clusters (Saleh-Valenzuela style), cut off at a maximum
excess delay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import NoFirstPathError
from .poses import Condition, Pose

CIR_LENGTH = 1016
INT16_MIN, INT16_MAX = -32768, 32767
DEFAULT_NOISE_WINDOW = (0, 650)
DETECTION_FACTOR = 1.0
DETECTION_RUN = 2


@dataclass(frozen=True)
class Diagnostics:
    fp_index: int
    fp_ampl: tuple[float, float, float]
    max_noise: float
    std_noise: float

    def __post_init__(self) -> None:
        if not 0 <= self.fp_index <= CIR_LENGTH - 4:
            raise ValueError(f"fp_index {self.fp_index} leaves no room for three FP_AMPL samples")
        if self.std_noise > self.max_noise:
            raise ValueError("std_noise exceeds max_noise")


@dataclass(frozen=True)
class ChannelParams:
    fp_index_range: tuple[int, int] = (700, 780)
    noise_scale: float = 368.0
    los_peak_snr: tuple[float, float] = (5.0, 10.0)
    nlos_peak_snr: tuple[float, float] = (1.5, 3.0)
    los_decay_ns: float = 29.5
    nlos_cluster_rate: float = 6.0
    nlos_excess_ns: float = 126.0
    rng_seed: int = 0
    # NLOS body shape; exposed for calibration, not part of the public knob set
    nlos_body_level: tuple[float, float] = (1.6, 2.2)
    nlos_cluster_gain: tuple[float, float] = (0.8, 2.0)
    nlos_cluster_decay_ns: float = 6.0

    def __post_init__(self) -> None:
        lo, hi = self.fp_index_range
        if not (5 <= lo <= hi <= CIR_LENGTH - 135 + 5):
            raise ValueError(f"fp_index_range {self.fp_index_range} out of bounds")
        if self.los_peak_snr[0] <= self.nlos_peak_snr[1]:
            raise ValueError("los_peak_snr lower bound must exceed nlos_peak_snr upper bound")
        for name in ("noise_scale", "los_decay_ns", "nlos_cluster_rate", "nlos_excess_ns",
                     "nlos_cluster_decay_ns"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class CirRecord:
    """One reception's CIR.

    ``samples`` is the int (1016, 2) re/im readout when the record came from
    the generator; records loaded from magnitude-only CSV files carry
    ``samples=None``.
    """

    magnitudes: np.ndarray
    diagnostics: Diagnostics
    label: Condition | None = None
    pose: Pose | None = None
    samples: np.ndarray | None = None
    saturated: bool = False
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.magnitudes.shape != (CIR_LENGTH,):
            raise ValueError(f"expected {CIR_LENGTH} magnitudes, got {self.magnitudes.shape}")
        if self.label is not None and self.pose is not None and self.pose.condition != self.label:
            raise ValueError(f"label {self.label.name} inconsistent with pose {self.pose.name}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CirRecord):
            return NotImplemented
        same_samples = (self.samples is None and other.samples is None) or (
            self.samples is not None and other.samples is not None
            and np.array_equal(self.samples, other.samples))
        return (np.array_equal(self.magnitudes, other.magnitudes)
                and self.diagnostics == other.diagnostics
                and self.label == other.label and self.pose == other.pose
                and self.saturated == other.saturated and same_samples)


def magnitude(re, im):
    """Magnitude of a complex accumulator sample; vectorises over arrays."""
    return np.hypot(np.asarray(re, dtype=np.float64), np.asarray(im, dtype=np.float64))


def compute_diagnostics(samples: np.ndarray, noise_window: tuple[int, int] = DEFAULT_NOISE_WINDOW
                        ) -> Diagnostics:
    """Diagnostics from a (1016, 2) complex readout or a 1016 magnitude vector.

    The first path is the first index whose magnitude exceeds max_noise for
    two consecutive samples.
    """
    samples = np.asarray(samples)
    mags = magnitude(samples[:, 0], samples[:, 1]) if samples.ndim == 2 else samples.astype(np.float64)
    start, stop = noise_window
    if not 0 <= start < stop <= len(mags):
        raise ValueError(f"bad noise window {noise_window}")
    noise = mags[start:stop]
    return _diagnostics(mags, float(noise.max()), float(noise.std()), search_from=stop)


def _diagnostics(mags: np.ndarray, max_noise: float, std_noise: float, search_from: int = 0
                 ) -> Diagnostics:
    above = mags > DETECTION_FACTOR * max_noise
    run = above[:-1] & above[1:]
    run[:search_from] = False
    run[CIR_LENGTH - 4:] = False
    hits = np.flatnonzero(run)
    if hits.size == 0:
        raise NoFirstPathError("no sample run crosses max_noise")
    fp = int(hits[0])
    ampl = tuple(float(a) for a in mags[fp + 1:fp + 4])
    return Diagnostics(fp_index=fp, fp_ampl=ampl, max_noise=max_noise, std_noise=std_noise)


def _los_envelope(n: int, peak: float, params: ChannelParams) -> np.ndarray:
    t = np.arange(n, dtype=np.float64)
    return peak * np.exp(-t / params.los_decay_ns)


def _nlos_envelope(n: int, peak: float, max_noise: float, params: ChannelParams,
                   rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n, dtype=np.float64)
    length = params.nlos_excess_ns
    first = peak * np.exp(-t / 3.0)
    body_level = rng.uniform(*params.nlos_body_level) * max_noise
    # diffuse body: ramps in over a few ns, flat, then falls off sharply at the excess delay
    body = body_level * (1.0 - np.exp(-(t + 1.0) / 4.0))
    body = np.where(t < length, body, body * np.exp(-(t - length) / 1.5))
    n_clusters = rng.poisson(params.nlos_cluster_rate * length / 100.0)
    arrivals = np.sort(rng.uniform(2.0, length - 8.0, size=n_clusters))
    gains = rng.uniform(*params.nlos_cluster_gain, size=n_clusters) * max_noise
    power = first**2 + body**2
    for t0, g in zip(arrivals, gains):
        dt = t - t0
        cl = np.where(dt >= 0, g * np.exp(-np.clip(dt, 0, None) / params.nlos_cluster_decay_ns), 0.0)
        power += cl**2
    return np.sqrt(power)


def _support(envelope: np.ndarray, floor: float) -> int:
    """Number of leading envelope samples carrying non-negligible signal."""
    idx = np.flatnonzero(envelope > floor)
    return int(idx[-1]) + 1 if idx.size else 0


def generate_cir(condition: Condition, params: ChannelParams, rng: np.random.Generator,
                 pose: Pose | None = None) -> CirRecord:
    """Draw one labelled CIR record.

    max_noise is the largest noise-only magnitude in the record (everything
    before the first path and after the multipath tail), so no pure-noise
    sample ever exceeds it. Peak amplitudes are drawn relative to that value.
    """
    condition = Condition(condition)
    if pose is not None and Pose(pose).condition != condition:
        raise ValueError(f"pose {Pose(pose).name} is not a {condition.name} pose")
    lo, hi = params.fp_index_range
    fp = int(rng.integers(lo, hi + 1))
    noise = rng.normal(0.0, params.noise_scale, size=(CIR_LENGTH, 2))
    noise_mag = np.hypot(noise[:, 0], noise[:, 1])

    n_tail = CIR_LENGTH - fp
    # provisional max_noise over the prefix sets the signal scale; the final
    # value is taken over every noise-only sample once the support is known
    prefix_max = float(noise_mag[:fp].max())
    if condition is Condition.LOS:
        snr = rng.uniform(*params.los_peak_snr)
        env = _los_envelope(n_tail, snr * prefix_max, params)
    else:
        snr = rng.uniform(*params.nlos_peak_snr)
        env = _nlos_envelope(n_tail, snr * prefix_max, prefix_max, params, rng)
    phase = rng.uniform(0.0, 2 * np.pi, size=n_tail)

    support = _support(env, 0.5 * params.noise_scale)
    signal = np.zeros((CIR_LENGTH, 2))
    signal[fp:, 0] = env * np.cos(phase)
    signal[fp:, 1] = env * np.sin(phase)
    raw = np.rint(noise + signal)
    saturated = bool((raw < INT16_MIN).any() or (raw > INT16_MAX).any())
    quantized = np.clip(raw, INT16_MIN, INT16_MAX).astype(np.int32)
    mags = magnitude(quantized[:, 0], quantized[:, 1])

    noise_only = np.ones(CIR_LENGTH, dtype=bool)
    noise_only[fp:fp + support] = False
    max_noise = float(mags[noise_only].max())
    std_noise = float(mags[noise_only].std())
    ampl = tuple(float(a) for a in mags[fp + 1:fp + 4])
    diag = Diagnostics(fp_index=fp, fp_ampl=ampl, max_noise=max_noise, std_noise=std_noise)
    return CirRecord(
        magnitudes=mags,
        diagnostics=diag,
        label=condition,
        pose=None if pose is None else Pose(pose),
        samples=quantized,
        saturated=saturated,
    )


def above_noise_count(record: CirRecord) -> int:
    """Samples at or after FP_INDEX whose magnitude exceeds max_noise."""
    d = record.diagnostics
    return int((record.magnitudes[d.fp_index:] > d.max_noise).sum())


# --- CSV -------------------------------------------------------------------

CSV_HEADER = (["label", "pose", "fp_index", "fp_ampl1", "fp_ampl2", "fp_ampl3",
               "max_noise", "std_noise"] + [f"cir{i}" for i in range(CIR_LENGTH)])


def fmt_real(v: float) -> str:
    """Shortest text that parses back to the same float; integral values print bare."""
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def record_to_row(record: CirRecord) -> list[str]:
    d = record.diagnostics
    return ([str(int(record.label)) if record.label is not None else "",
             str(int(record.pose)) if record.pose is not None else "",
             str(d.fp_index)] + [fmt_real(a) for a in d.fp_ampl]
            + [fmt_real(d.max_noise), fmt_real(d.std_noise)]
            + [fmt_real(m) for m in record.magnitudes])


def row_to_record(row: Sequence[str]) -> CirRecord:
    if len(row) != len(CSV_HEADER):
        raise ValueError(f"expected {len(CSV_HEADER)} columns, got {len(row)}")
    label = Condition(int(row[0])) if row[0] != "" else None
    pose = Pose(int(row[1])) if row[1] != "" else None
    diag = Diagnostics(
        fp_index=int(row[2]),
        fp_ampl=(float(row[3]), float(row[4]), float(row[5])),
        max_noise=float(row[6]),
        std_noise=float(row[7]),
    )
    mags = np.array(row[8:], dtype=np.float64)
    return CirRecord(magnitudes=mags, diagnostics=diag, label=label, pose=pose)


def write_csv(records: Iterable[CirRecord], fh: TextIO) -> int:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    n = 0
    for rec in records:
        writer.writerow(record_to_row(rec))
        n += 1
    return n


def read_csv(fh: TextIO) -> list[CirRecord]:
    reader = csv.reader(fh)
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError("not a native CIR dataset file")
    return [row_to_record(row) for row in reader]
