"""Synthetic gravity + linear-acceleration traces and the sliding IMU window.

Device frame: x to the right of the screen, y up the screen, z out of the
screen. Gravity is expressed as the reading of an upright sensor rotated by
the pose's pitch (about x) and roll (about y), so a phone lying flat reads
(0, 0, 9.81) and one standing on its bottom edge reads (0, 9.81, 0).
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .channel import fmt_real
from .errors import OutOfOrderError, WindowNotReadyError
from .poses import Pose

G = 9.81
IMU_INTERVAL_MS = 60.0
WINDOW_STEPS = 18
N_FEATURES = 6

# (pitch, roll) in degrees
DEFAULT_ORIENTATIONS = {
    Pose.LOS_HAND: (40.0, 0.0),
    Pose.NLOS_HAND: (40.0, 12.0),
    Pose.FRONT: (90.0, 0.0),
    Pose.BACK: (-90.0, 0.0),
}


@dataclass(frozen=True)
class ImuSample:
    t_ms: float
    accel: tuple[float, float, float]
    gravity: tuple[float, float, float]

    def row(self) -> list[float]:
        return [*self.accel, *self.gravity]


@dataclass(frozen=True)
class GaitParams:
    step_rate_hz: float = 3.0
    hand_amp: float = 1.0
    pocket_amp: float = 2.5
    noise_sigma: float = 0.3
    orientations: dict = field(default_factory=lambda: dict(DEFAULT_ORIENTATIONS))
    orientation_jitter_deg: float = 5.0
    wobble_deg: float = 3.0
    amp_jitter: float = 0.15
    gravity_noise: float = 0.02
    interval_ms: float = IMU_INTERVAL_MS
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.step_rate_hz <= 0:
            raise ValueError("step_rate_hz must be positive")
        if not self.pocket_amp > self.hand_amp:
            raise ValueError("pocket_amp must exceed hand_amp")

    def amplitude(self, pose: Pose) -> float:
        return self.pocket_amp if Pose(pose).in_pocket else self.hand_amp


def _gravity(pitch_rad: float, roll_rad: float) -> np.ndarray:
    # R_y(roll) @ R_x(pitch) @ (0, 0, G)
    gx = G * np.cos(pitch_rad) * np.sin(roll_rad)
    gy = G * np.sin(pitch_rad)
    gz = G * np.cos(pitch_rad) * np.cos(roll_rad)
    return np.array([gx, gy, gz])


class ImuStream:
    """Sample-by-sample generator that can switch pose mid-stream.

    Each pose segment draws its own amplitude, orientation and phase offsets
    when it starts; the gait phase itself runs on absolute time, so switching
    pose does not reset the stride.
    """

    def __init__(self, params: GaitParams, rng: np.random.Generator) -> None:
        self.params = params
        self.rng = rng
        self._pose: Pose | None = None
        self._seg: dict = {}
        self._phase = rng.uniform(0, 2 * np.pi, size=3)

    def _start_segment(self, pose: Pose) -> None:
        p, rng = self.params, self.rng
        pitch, roll = p.orientations[pose]
        jit = rng.uniform(-p.orientation_jitter_deg, p.orientation_jitter_deg, size=2)
        self._seg = {
            "amp": p.amplitude(pose) * rng.uniform(1 - p.amp_jitter, 1 + p.amp_jitter),
            "pitch": np.radians(pitch + jit[0]),
            "roll": np.radians(roll + jit[1]),
        }
        self._pose = pose

    def sample(self, t_ms: float, pose: Pose) -> ImuSample:
        pose = Pose(pose)
        if pose != self._pose:
            self._start_segment(pose)
        p, s, rng = self.params, self._seg, self.rng
        t = t_ms / 1000.0
        w = 2 * np.pi * p.step_rate_hz
        ph = self._phase
        wobble = np.radians(p.wobble_deg) * np.sin(w * t + ph[2])
        grav = _gravity(s["pitch"] + wobble, s["roll"])
        grav = grav + rng.normal(0, p.gravity_noise, 3)
        up = grav / np.linalg.norm(grav)
        side = np.array([1.0, 0.0, 0.0])
        bounce = np.sin(w * t + ph[0]) + 0.5 * np.sin(2 * w * t + ph[1])
        sway = 0.4 * np.sin(w * t + ph[0] + np.pi / 2)
        accel = s["amp"] * (bounce * up + sway * side)
        accel = accel + rng.normal(0, p.noise_sigma, 3)
        return ImuSample(float(t_ms), tuple(float(a) for a in accel), tuple(float(g) for g in grav))


def generate_imu_trace(pose: Pose, duration_ms: float, params: GaitParams,
                       rng: np.random.Generator, t0_ms: float = 0.0) -> list[ImuSample]:
    """Samples every ``params.interval_ms`` for ``t0 <= t < t0 + duration``."""
    if duration_ms < WINDOW_STEPS * params.interval_ms:
        raise ValueError(f"duration must cover one {WINDOW_STEPS}-step window")
    stream = ImuStream(params, rng)
    n = int(np.ceil(duration_ms / params.interval_ms - 1e-9))
    return [stream.sample(t0_ms + k * params.interval_ms, pose) for k in range(n)]


class ImuWindow:
    """The most recent 18 samples, oldest first."""

    def __init__(self, size: int = WINDOW_STEPS) -> None:
        self.size = size
        self.samples: deque[ImuSample] = deque(maxlen=size)

    @property
    def ready(self) -> bool:
        return len(self.samples) == self.size

    def push(self, sample: ImuSample) -> "ImuWindow":
        if self.samples and sample.t_ms <= self.samples[-1].t_ms:
            raise OutOfOrderError(
                f"sample at {sample.t_ms} ms is not after {self.samples[-1].t_ms} ms")
        self.samples.append(sample)
        return self

    def tensor(self) -> np.ndarray:
        if not self.ready:
            raise WindowNotReadyError(f"window holds {len(self.samples)}/{self.size} samples")
        return np.array([s.row() for s in self.samples])


def push_window(window: ImuWindow, sample: ImuSample) -> ImuWindow:
    return window.push(sample)


def window_tensor(window: ImuWindow) -> np.ndarray:
    return window.tensor()


def sliding_windows(rows: np.ndarray, size: int = WINDOW_STEPS, stride: int = 1) -> np.ndarray:
    """(n, 6) feature rows -> (m, size, 6) windows."""
    rows = np.asarray(rows)
    if len(rows) < size:
        return np.zeros((0, size, rows.shape[1]))
    view = np.lib.stride_tricks.sliding_window_view(rows, size, axis=0)  # (n-size+1, 6, size)
    return np.ascontiguousarray(view.transpose(0, 2, 1)[::stride])


def accel_rms(window: np.ndarray) -> float:
    """RMS of the acceleration magnitude over a (T, 6) window."""
    a = np.asarray(window)[:, :3]
    return float(np.sqrt((a**2).sum(axis=1).mean()))


# --- CSV -------------------------------------------------------------------

CSV_HEADER = ["t_ms", "ax", "ay", "az", "gx", "gy", "gz", "pose_label"]


def write_csv(samples: Iterable[tuple[ImuSample, Pose]], fh: TextIO) -> int:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(CSV_HEADER)
    n = 0
    for s, pose in samples:
        w.writerow([fmt_real(s.t_ms)] + [fmt_real(v) for v in s.row()] + [int(pose)])
        n += 1
    return n


def read_csv(fh: TextIO) -> list[tuple[ImuSample, Pose]]:
    r = csv.reader(fh)
    header = next(r)
    if header != CSV_HEADER:
        raise ValueError("not an IMU dataset file")
    out = []
    for row in r:
        v = [float(x) for x in row[1:7]]
        out.append((ImuSample(float(row[0]), tuple(v[:3]), tuple(v[3:])), Pose(int(row[7]))))
    return out


def samples_to_array(samples: Sequence[ImuSample]) -> np.ndarray:
    return np.array([s.row() for s in samples]).reshape(-1, N_FEATURES)
