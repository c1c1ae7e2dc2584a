"""Held-out evaluation: LOS/NLOS accuracy with and without smoothing, and
two-stage pose accuracy, on streamed test sequences."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..channel import CirRecord
from ..imusim import sliding_windows
from ..models import THRESHOLD, ModelBundle, pose_from_branch, smooth
from ..poses import Condition, Pose
from .datasets import cir_arrays
from .pipeline import DelayStats

SEQUENCE_LENGTH = 20


@dataclass
class EvalReport:
    """Accuracies are fractions of ranging events; ``pose_acc_walk`` counts
    each test sequence once, by majority vote over its events."""

    los_acc: dict[Pose, float]
    los_acc_no_lpf: dict[Pose, float]
    pose_acc: dict[Pose, float]
    pose_acc_walk: dict[Pose, float]
    counts: dict[Pose, int]
    overall_los_acc: float
    overall_los_acc_no_lpf: float
    overall_pose_acc: float
    outlier_rate: float = 0.0
    delays: dict[tuple[Pose, Pose], DelayStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def per_pose(d):
            return {p.name: round(v, 6) for p, v in d.items()}

        return {
            "outlier_rate": self.outlier_rate,
            "counts": {p.name: n for p, n in self.counts.items()},
            "los_acc": per_pose(self.los_acc),
            "los_acc_no_lpf": per_pose(self.los_acc_no_lpf),
            "pose_acc": per_pose(self.pose_acc),
            "pose_acc_walk": per_pose(self.pose_acc_walk),
            "overall_los_acc": round(self.overall_los_acc, 6),
            "overall_los_acc_no_lpf": round(self.overall_los_acc_no_lpf, 6),
            "overall_pose_acc": round(self.overall_pose_acc, 6),
            "transition_delay_ms": [
                {"from": a.name, "to": b.name, "mean": _r(s.mean_ms), "std": _r(s.std_ms),
                 "n": s.n, "censored": s.n_censored}
                for (a, b), s in self.delays.items()],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_table(self) -> str:
        lines = [f"{'pose':<10} {'n':>6} {'LOS/NLOS':>9} {'no LPF':>8} {'pose':>7} {'per walk':>9}"]
        for p in self.counts:
            lines.append(f"{p.name:<10} {self.counts[p]:>6} {self.los_acc[p]:>9.3f} "
                         f"{self.los_acc_no_lpf[p]:>8.3f} {self.pose_acc[p]:>7.3f} "
                         f"{self.pose_acc_walk[p]:>9.3f}")
        lines.append(f"{'overall':<10} {sum(self.counts.values()):>6} {self.overall_los_acc:>9.3f} "
                     f"{self.overall_los_acc_no_lpf:>8.3f} {self.overall_pose_acc:>7.3f}")
        if self.delays:
            lines += ["", f"{'transition':<22} {'mean ms':>8} {'std':>7} {'n':>4} {'cens':>5}"]
            for (a, b), s in self.delays.items():
                lines.append(f"{a.name + '->' + b.name:<22} {s.mean_ms:>8.1f} {s.std_ms:>7.1f} "
                             f"{s.n:>4} {s.n_censored:>5}")
        return "\n".join(lines) + "\n"


def _r(v: float):
    return None if np.isnan(v) else round(v, 3)


def inject_outliers(raw: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Flip a ``rate`` fraction of probabilities to their complement."""
    if not 0 <= rate <= 1:
        raise ValueError("outlier rate must be in [0, 1]")
    flip = rng.random(len(raw)) < rate
    return np.where(flip, 1.0 - raw, raw)


def evaluate(bundle: ModelBundle, cir_test: Sequence[CirRecord],
             imu_test: dict[Pose, np.ndarray], *, outlier_rate: float = 0.0,
             sequence_length: int = SEQUENCE_LENGTH, seed: int = 0) -> EvalReport:
    """Stream each pose's test records as sequences of ``sequence_length``
    ranging events, each paired with a test IMU window of the same pose.

    The smoothed column runs a fresh EWMA per sequence; the no-LPF column
    thresholds the raw probability directly. Pose accuracy uses the smoothed
    label to pick the branch detector.
    """
    records = [r for r in cir_test if r.pose is not None]
    if not records:
        raise ValueError("empty test set (records need pose labels)")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 6]))
    x, noise, _ = cir_arrays(records)
    raw_all = bundle.los.probs(x, noise)
    poses_all = np.array([int(r.pose) for r in records])

    los_acc, no_lpf, pose_acc, walk_acc, counts = {}, {}, {}, {}, {}
    for pose in Pose:
        sel = np.flatnonzero(poses_all == int(pose))
        if len(sel) == 0:
            continue
        windows = sliding_windows(imu_test.get(pose, np.zeros((0, 6))))
        if len(windows) == 0:
            raise ValueError(f"no IMU test windows for {pose.name}")
        raw = inject_outliers(raw_all[sel], outlier_rate, rng)
        # one IMU window per event, walking through the test trace
        w_idx = (rng.integers(len(windows)) + np.arange(len(sel)) * 3) % len(windows)
        p_branch = {b: bundle.pose[b].probs(windows[w_idx]) for b in Condition}
        truth = pose.condition
        ok_lpf = ok_raw = ok_pose = 0
        walks_ok = []
        for start in range(0, len(sel), sequence_length):
            sl = slice(start, start + sequence_length)
            sm = smooth(raw[sl], bundle.alpha)
            lab = np.where(sm >= THRESHOLD, 1, 0)
            ok_lpf += int((lab == int(truth)).sum())
            ok_raw += int(((raw[sl] >= THRESHOLD).astype(int) == int(truth)).sum())
            est = [pose_from_branch(Condition(lb), float(p_branch[Condition(lb)][start + i]))
                   for i, lb in enumerate(lab)]
            hits = [e == pose for e in est]
            ok_pose += sum(hits)
            walks_ok.append(sum(hits) * 2 > len(hits))
        n = len(sel)
        counts[pose] = n
        los_acc[pose], no_lpf[pose] = ok_lpf / n, ok_raw / n
        pose_acc[pose] = ok_pose / n
        walk_acc[pose] = float(np.mean(walks_ok))

    total = sum(counts.values())

    def weighted(d):
        return sum(d[p] * counts[p] for p in counts) / total

    return EvalReport(
        los_acc=los_acc, los_acc_no_lpf=no_lpf, pose_acc=pose_acc, pose_acc_walk=walk_acc,
        counts=counts, overall_los_acc=weighted(los_acc),
        overall_los_acc_no_lpf=weighted(no_lpf), overall_pose_acc=weighted(pose_acc),
        outlier_rate=outlier_rate)
