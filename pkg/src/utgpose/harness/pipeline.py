"""The real-time event loop: merged IMU and ranging ticks, per-tick pose estimates,
and transition-delay measurement."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence, TextIO

import numpy as np

from ..channel import ChannelParams, generate_cir
from ..cirproc import extract_ecir
from ..imusim import GaitParams, ImuStream, ImuWindow
from ..models import (EWMA_ALPHA, EwmaState, ModelBundle, classify_los, decide_los, detect_pose,
                      pose_from_branch)
from ..poses import Condition, Pose
from ..ranging import ClockModel, linear_walk, run_session

IMU, RANGING = 0, 1  # tie order: IMU first

# every ordered pair that crosses the LOS/NLOS boundary
TRANSITION_PAIRS = tuple((a, b) for a in Pose for b in Pose if a.condition != b.condition)


@dataclass(frozen=True)
class WalkScenario:
    """A walk towards the gate. A schedule entry ``(t_s, pose)`` governs ticks
    strictly after ``t_s``; the first entry also covers the ticks up to it."""

    speed_mps: float = 1.0
    pose_schedule: tuple[tuple[float, Pose], ...] = ((0.0, Pose.LOS_HAND),)
    duration_ms: float = 6000.0
    seed: int = 0
    start_distance_m: float = 4.0
    ranging_interval_ms: float = 200.0
    imu_interval_ms: float = 60.0
    initiator_drift_ppm: float = 0.0
    responder_drift_ppm: float = 0.0
    stamp_noise_ns: float = 0.0

    def __post_init__(self) -> None:
        sched = tuple((float(t), Pose(p)) for t, p in self.pose_schedule)
        object.__setattr__(self, "pose_schedule", sched)
        if not sched:
            raise ValueError("pose_schedule must not be empty")
        times = [t for t, _ in sched]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        if self.ranging_interval_ms <= 0 or self.imu_interval_ms <= 0:
            raise ValueError("tick intervals must be positive")
        if self.duration_ms <= 0:
            raise ValueError("duration_ms must be positive")

    def pose_at(self, t_ms: float) -> Pose:
        pose = self.pose_schedule[0][1]
        for t_s, p in self.pose_schedule:
            if t_s < t_ms:
                pose = p
        return pose

    @property
    def switches(self) -> list[tuple[float, Pose, Pose]]:
        s = self.pose_schedule
        return [(t, s[i - 1][1], p) for i, (t, p) in enumerate(s) if i > 0 and p != s[i - 1][1]]


@dataclass(frozen=True)
class PoseEstimate:
    """``raw_p_los`` and ``smoothed_p_los`` are the LOS/NLOS classifier's output
    (probability of NLOS) before and after smoothing."""

    t_ms: float
    raw_p_los: float
    smoothed_p_los: float
    los_label: Condition
    pose: Pose
    distance_m: float
    true_pose: Pose | None = None

    def to_json(self) -> str:
        d = asdict(self)
        d["los_label"] = self.los_label.name
        d["pose"] = self.pose.name
        d["true_pose"] = self.true_pose.name if self.true_pose is not None else None
        return json.dumps(d)


def write_jsonl(estimates: Sequence[PoseEstimate], fh: TextIO) -> None:
    for e in estimates:
        fh.write(e.to_json() + "\n")


def read_jsonl(fh: TextIO) -> list[PoseEstimate]:
    out = []
    for line in fh:
        if not line.strip():
            continue
        d = json.loads(line)
        d["los_label"] = Condition[d["los_label"]]
        d["pose"] = Pose[d["pose"]]
        d["true_pose"] = Pose[d["true_pose"]] if d["true_pose"] else None
        out.append(PoseEstimate(**d))
    return out


def tick_times(interval_ms: float, duration_ms: float) -> list[float]:
    n = int(np.ceil(duration_ms / interval_ms - 1e-9))
    return [k * interval_ms for k in range(n)]


def merged_ticks(scenario: WalkScenario) -> Iterator[tuple[float, int]]:
    """(t_ms, kind) in timestamp order, IMU before ranging on equal times."""
    events = [(t, IMU) for t in tick_times(scenario.imu_interval_ms, scenario.duration_ms)]
    events += [(t, RANGING) for t in tick_times(scenario.ranging_interval_ms, scenario.duration_ms)]
    return iter(sorted(events))


class OracleBundle:
    """Stand-in for trained models that reports ground truth with certainty."""


@dataclass
class WalkResult:
    estimates: list[PoseEstimate] = field(default_factory=list)
    n_ranging_ticks: int = 0
    n_imu_ticks: int = 0
    n_suppressed: int = 0

    def accuracy(self) -> float:
        if not self.estimates:
            return float("nan")
        return float(np.mean([e.pose == e.true_pose for e in self.estimates]))

    def los_accuracy(self) -> float:
        if not self.estimates:
            return float("nan")
        return float(np.mean([e.los_label == e.true_pose.condition for e in self.estimates]))


def run_walk(scenario: WalkScenario, bundle: ModelBundle | OracleBundle,
             channel_params: ChannelParams = ChannelParams(),
             gait_params: GaitParams = GaitParams()) -> WalkResult:
    """Replay a walk through the pipeline.

    The EWMA sees every ranging tick, including the warm-up ticks before the
    IMU window holds 18 samples; estimates are only emitted once it does.
    """
    ch_seq, imu_seq, rng_seq = np.random.SeedSequence([scenario.seed, 4]).spawn(3)
    ch_rng = np.random.default_rng(ch_seq)
    imu = ImuStream(gait_params, np.random.default_rng(imu_seq))
    rng_rng = np.random.default_rng(rng_seq)
    oracle = isinstance(bundle, OracleBundle)
    alpha = EWMA_ALPHA if oracle else bundle.alpha
    state = EwmaState(alpha=alpha)
    window = ImuWindow()
    walk = linear_walk(scenario.start_distance_m, scenario.speed_mps)
    ini = ClockModel(scenario.initiator_drift_ppm)
    res = ClockModel(scenario.responder_drift_ppm)
    out = WalkResult()

    for t, kind in merged_ticks(scenario):
        pose = scenario.pose_at(t)
        if kind == IMU:
            window.push(imu.sample(t, pose))
            out.n_imu_ticks += 1
            continue
        session = out.n_ranging_ticks
        out.n_ranging_ticks += 1
        ranged, _, _ = run_session(
            walk(t), ini, res, start_ns=t * 1e6, stamp_noise_ns=scenario.stamp_noise_ns,
            rng=rng_rng, session_index=session, timestamp_ms=t)
        record = generate_cir(pose.condition, channel_params, ch_rng, pose=pose)
        if oracle:
            decision, state = decide_los(float(pose.condition), state)
        else:
            decision, state = classify_los(extract_ecir(record), bundle.los, state,
                                           max_noise=record.diagnostics.max_noise)
        if not window.ready:
            out.n_suppressed += 1
            continue
        if oracle:
            # ground-truth branch detector: certain about the pocket, whichever branch runs
            estimate_pose = _oracle_pose(decision.label, pose)
        else:
            estimate_pose = detect_pose(decision, window, bundle.pose[Condition.LOS],
                                        bundle.pose[Condition.NLOS])
        out.estimates.append(PoseEstimate(
            t_ms=t, raw_p_los=decision.raw_p, smoothed_p_los=decision.smoothed_p,
            los_label=decision.label, pose=estimate_pose, distance_m=ranged.distance_m,
            true_pose=pose))
    return out


def _oracle_pose(label: Condition, truth: Pose) -> Pose:
    return pose_from_branch(label, float(truth.in_pocket))


# --- transition delay ------------------------------------------------------

@dataclass(frozen=True)
class TransitionRecord:
    from_pose: Pose
    to_pose: Pose
    switch_ms: float
    delay_ms: float | None  # None when the new pose was never reported


def measure_transition_delay(estimates: Sequence[PoseEstimate],
                             schedule: Sequence[tuple[float, Pose]]) -> list[TransitionRecord]:
    """Per switch: time from the scheduled switch to the first estimate (before
    the next switch) reporting the new pose."""
    sched = [(float(t), Pose(p)) for t, p in schedule]
    out = []
    for i in range(1, len(sched)):
        t_s, new = sched[i]
        old = sched[i - 1][1]
        if new == old:
            continue
        t_end = sched[i + 1][0] if i + 1 < len(sched) else float("inf")
        delay = next((e.t_ms - t_s for e in estimates
                      if t_s < e.t_ms <= t_end and e.pose == new), None)
        out.append(TransitionRecord(old, new, t_s, delay))
    return out


@dataclass(frozen=True)
class DelayStats:
    mean_ms: float
    std_ms: float
    n: int
    n_censored: int


def aggregate_delays(records: Sequence[TransitionRecord]) -> dict[tuple[Pose, Pose], DelayStats]:
    groups: dict[tuple[Pose, Pose], list] = {}
    for r in records:
        groups.setdefault((r.from_pose, r.to_pose), []).append(r.delay_ms)
    out = {}
    for key in sorted(groups):
        vals = [d for d in groups[key] if d is not None]
        n_c = len(groups[key]) - len(vals)
        if vals:
            mean = float(np.mean(vals))
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        else:
            mean = std = float("nan")
        out[key] = DelayStats(mean, std, len(vals), n_c)
    return out


def transition_trials(pairs: Sequence[tuple[Pose, Pose]], n_trials: int,
                      bundle: ModelBundle | OracleBundle, seed: int = 0,
                      channel_params: ChannelParams = ChannelParams(),
                      gait_params: GaitParams = GaitParams(),
                      settle_ms: float = 2000.0, after_ms: float = 2000.0
                      ) -> list[TransitionRecord]:
    """Walks that start in one pose and switch once, at a ranging tick drawn
    from a one-second range after ``settle_ms``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 5]))
    records = []
    for a, b in pairs:
        for trial in range(n_trials):
            switch = settle_ms + 200.0 * int(rng.integers(0, 6))
            sc = WalkScenario(pose_schedule=((0.0, a), (switch, b)),
                              duration_ms=switch + after_ms,
                              seed=int(rng.integers(2**31)))
            walk = run_walk(sc, bundle, channel_params, gait_params)
            records += measure_transition_delay(walk.estimates, sc.pose_schedule)
    return records
