"""Double-sided two-way ranging (DS-TWR) between a gate and a mobile device.

Session timing is simulated with exact rational arithmetic. A 1 ms reply
interval stored as a float64 has an ulp of about 1e-10 ns, which is larger
than the cancellation error the ToF formula is supposed to be free of, so the
simulated stamps are kept as :class:`fractions.Fraction` until the result is
reported.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Sequence, TextIO

import numpy as np

from .errors import InvalidTimestampsError

SPEED_OF_LIGHT_M_PER_NS = 0.299792458
MAX_DRIFT_PPM = 100.0

_C = Fraction(SPEED_OF_LIGHT_M_PER_NS)


@dataclass(frozen=True)
class ClockModel:
    """Affine device clock: ``local = offset + true * (1 + drift_ppm * 1e-6)``."""

    drift_ppm: float = 0.0
    offset: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.drift_ppm) > MAX_DRIFT_PPM:
            raise ValueError(f"|drift_ppm| must be <= {MAX_DRIFT_PPM}, got {self.drift_ppm}")

    @property
    def _rate(self) -> Fraction:
        return 1 + Fraction(self.drift_ppm) / 1_000_000

    def local_time(self, true_ns):
        return Fraction(self.offset) + Fraction(true_ns) * self._rate

    def true_time(self, local_ns):
        return (Fraction(local_ns) - Fraction(self.offset)) / self._rate


@dataclass(frozen=True)
class RangingTimestamps:
    t_round1: float
    t_reply1: float
    t_round2: float
    t_reply2: float


@dataclass(frozen=True)
class RangingResult:
    tof_ns: float
    distance_m: float
    session_index: int = 0
    timestamp_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


class MessageKind(str, Enum):
    RIM = "RIM"
    RRM = "RRM"
    RFM = "RFM"


@dataclass(frozen=True)
class RangingMessage:
    kind: MessageKind
    tx_local_time: float
    rx_local_time: float


def compute_tof(ts: RangingTimestamps):
    """Time of flight from the four DS-TWR intervals.

    Works on floats or Fractions; the result has the type of the inputs' arithmetic.
    May be slightly negative under stamp noise, callers clamp.
    """
    denom = ts.t_round1 + ts.t_round2 + ts.t_reply1 + ts.t_reply2
    if not denom > 0:
        raise InvalidTimestampsError(f"non-positive interval sum {denom}")
    return (ts.t_round1 * ts.t_round2 - ts.t_reply1 * ts.t_reply2) / denom


def _stamp(clock: ClockModel, true_ns, noise_ns: float, rng: np.random.Generator | None):
    local = clock.local_time(true_ns)
    if noise_ns > 0:
        local += Fraction(float(rng.normal(0.0, noise_ns)))
    return local


def run_session(
    distance_m: float,
    initiator_clock: ClockModel,
    responder_clock: ClockModel,
    reply_delays_ns: tuple[float, float] = (1e6, 1e6),
    *,
    start_ns: float = 0.0,
    stamp_noise_ns: float = 0.0,
    rng: np.random.Generator | None = None,
    session_index: int = 0,
    timestamp_ms: float = 0.0,
) -> tuple[RangingResult, RangingTimestamps, list[RangingMessage]]:
    """Simulate one RIM -> RRM -> RFM exchange and estimate the distance.

    ``reply_delays_ns`` are the responder's and initiator's turnaround times,
    each counted on the replying device's own clock.
    """
    if distance_m < 0:
        raise ValueError("distance_m must be non-negative")
    reply1, reply2 = reply_delays_ns
    if reply1 <= 0 or reply2 <= 0:
        raise ValueError("reply delays must be positive")
    if stamp_noise_ns > 0 and rng is None:
        raise ValueError("stamp noise requires an rng")

    tof = Fraction(distance_m) / _C
    ini, res = initiator_clock, responder_clock

    # RIM: initiator -> responder
    t_rim_tx = Fraction(start_ns)
    # tx instants are scheduled exactly; only receive stamps carry noise
    i_tx1 = ini.local_time(t_rim_tx)
    r_rx1 = _stamp(res, t_rim_tx + tof, stamp_noise_ns, rng)
    # RRM: responder waits reply1 on its own clock
    r_tx2 = res.local_time(t_rim_tx + tof) + Fraction(reply1)
    t_rrm_tx = res.true_time(r_tx2)
    i_rx2 = _stamp(ini, t_rrm_tx + tof, stamp_noise_ns, rng)
    # RFM: initiator waits reply2 on its own clock
    i_tx3 = ini.local_time(t_rrm_tx + tof) + Fraction(reply2)
    t_rfm_tx = ini.true_time(i_tx3)
    r_rx3 = _stamp(res, t_rfm_tx + tof, stamp_noise_ns, rng)

    exact = RangingTimestamps(
        t_round1=i_rx2 - i_tx1,
        t_reply1=r_tx2 - r_rx1,
        t_round2=r_rx3 - r_tx2,
        t_reply2=i_tx3 - i_rx2,
    )
    raw_tof = compute_tof(exact)
    tof_ns = max(float(raw_tof), 0.0)
    result = RangingResult(
        tof_ns=tof_ns,
        distance_m=tof_ns * SPEED_OF_LIGHT_M_PER_NS,
        session_index=session_index,
        timestamp_ms=timestamp_ms,
    )
    timestamps = RangingTimestamps(*(float(v) for v in (
        exact.t_round1, exact.t_reply1, exact.t_round2, exact.t_reply2)))
    trace = [
        RangingMessage(MessageKind.RIM, float(i_tx1), float(r_rx1)),
        RangingMessage(MessageKind.RRM, float(r_tx2), float(i_rx2)),
        RangingMessage(MessageKind.RFM, float(i_tx3), float(r_rx3)),
    ]
    return result, timestamps, trace


def linear_walk(start_m: float = 4.0, speed_mps: float = 1.0) -> Callable[[float], float]:
    """Distance-vs-time (ms) for a walk straight at the gate, stopping at 0 m."""

    def position(t_ms: float) -> float:
        return max(start_m - speed_mps * t_ms / 1000.0, 0.0)

    return position


def ranging_stream(
    cadence_ms: float,
    walk: Callable[[float], float],
    duration_ms: float,
    initiator_clock: ClockModel = ClockModel(),
    responder_clock: ClockModel = ClockModel(),
    rng: np.random.Generator | None = None,
    *,
    reply_delays_ns: tuple[float, float] = (1e6, 1e6),
    stamp_noise_ns: float = 0.0,
) -> Iterator[RangingResult]:
    """One ranging session per cadence tick at ``t = k * cadence_ms < duration_ms``."""
    if cadence_ms <= 0:
        raise ValueError("cadence must be positive")
    n_ticks = int(np.ceil(duration_ms / cadence_ms - 1e-9))
    for k in range(n_ticks):
        t_ms = k * cadence_ms
        result, _, _ = run_session(
            walk(t_ms),
            initiator_clock,
            responder_clock,
            reply_delays_ns,
            start_ns=t_ms * 1e6,
            stamp_noise_ns=stamp_noise_ns,
            rng=rng,
            session_index=k,
            timestamp_ms=t_ms,
        )
        yield result


def write_jsonl(results: Iterable[RangingResult], fh: TextIO) -> int:
    n = 0
    for r in results:
        fh.write(r.to_json() + "\n")
        n += 1
    return n


def read_jsonl(lines: Sequence[str] | TextIO) -> list[RangingResult]:
    return [RangingResult(**json.loads(line)) for line in lines if line.strip()]
