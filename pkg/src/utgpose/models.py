"""The eCIR LOS/NLOS classifier, the two IMU pose detectors, EWMA smoothing
and the two-stage pose decision."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .cirproc import ECIR_LENGTH, Ecir
from .errors import InputRangeError, MissingModelError
from .imusim import N_FEATURES, WINDOW_STEPS, ImuWindow
from .neural import (LSTM, Conv1D, Conv2D, Dense, Dropout, Flatten, InstanceNorm, MaxPool,
                     Network, ReLU, Sigmoid, TrainConfig, TrainResult, train)
from .poses import Condition, Pose

LOS_KERNELS = (5, 11, 17, 5)
LOS_FILTERS = (64, 128, 256, 512)
POSE_KERNELS = (2, 2, 2)
POSE_FILTERS = (64, 128, 256)
# per-block pooling over (time, feature); feature axis is pooled once, in the
# middle block, so every 2x2 convolution still sees at least two columns
POSE_POOLS = ((2, 1), (1, 2), (2, 1))
LSTM_UNITS = 128
DROPOUT = 0.2
EWMA_ALPHA = 0.8
THRESHOLD = 0.5

LOS_TRAIN = TrainConfig(batch_size=50, max_epochs=20)
POSE_TRAIN = TrainConfig(batch_size=100, max_epochs=100)


def build_los_classifier(seed: int = 0, input_length: int = ECIR_LENGTH, dtype=np.float32) -> Network:
    layers = []
    for k, f in zip(LOS_KERNELS, LOS_FILTERS):
        layers += [Conv1D(k, f), InstanceNorm(), ReLU(), Dropout(DROPOUT), MaxPool(2)]
    layers += [Flatten(), Dense(1), Sigmoid()]
    return Network(layers, (input_length, 1), seed=seed, dtype=dtype)


def build_pose_detector(branch: Condition, seed: int | None = None, dtype=np.float32) -> Network:
    branch = Condition(branch)
    layers = []
    for k, f, pool in zip(POSE_KERNELS, POSE_FILTERS, POSE_POOLS):
        layers += [Conv2D(k, f), InstanceNorm(), ReLU(), Dropout(DROPOUT), MaxPool(pool)]
    layers += [LSTM(LSTM_UNITS), Flatten(), Dense(1), Sigmoid()]
    seed = int(branch) + 1 if seed is None else seed
    return Network(layers, (WINDOW_STEPS, N_FEATURES, 1), seed=seed, dtype=dtype)


# --- EWMA ------------------------------------------------------------------

@dataclass(frozen=True)
class EwmaState:
    """``alpha`` weights the previous smoothed value: y <- alpha*y + (1-alpha)*raw."""

    alpha: float = EWMA_ALPHA
    y: float = 0.0
    initialized: bool = False

    def __post_init__(self) -> None:
        if not 0 <= self.alpha < 1:
            raise ValueError("alpha must be in [0, 1)")


def ewma_update(state: EwmaState, raw: float) -> EwmaState:
    if not 0.0 <= raw <= 1.0:
        raise InputRangeError(f"probability {raw} outside [0, 1]")
    if not state.initialized:
        return replace(state, y=float(raw), initialized=True)
    return replace(state, y=state.alpha * state.y + (1 - state.alpha) * float(raw))


def smooth(raw: Sequence[float], alpha: float = EWMA_ALPHA) -> np.ndarray:
    state = EwmaState(alpha=alpha)
    out = []
    for r in raw:
        state = ewma_update(state, r)
        out.append(state.y)
    return np.array(out)


# --- decisions -------------------------------------------------------------

@dataclass(frozen=True)
class LosDecision:
    raw_p: float
    smoothed_p: float
    label: Condition


class LosScorer(Protocol):
    def prob(self, ecir_values: np.ndarray, max_noise: float) -> float: ...


class PoseScorer(Protocol):
    def prob(self, window: np.ndarray) -> float: ...


def normalize_ecir(values: np.ndarray, max_noise: float) -> np.ndarray:
    if max_noise <= 0:
        raise ValueError("max_noise must be positive")
    return np.asarray(values, dtype=np.float64) / max_noise


@dataclass
class LosModel:
    net: Network

    def prob(self, ecir_values: np.ndarray, max_noise: float) -> float:
        return float(self.net.forward(normalize_ecir(ecir_values, max_noise)[:, None]).reshape(-1)[0])

    def probs(self, values: np.ndarray, max_noise: np.ndarray) -> np.ndarray:
        x = np.asarray(values, dtype=np.float64) / np.asarray(max_noise)[:, None]
        return self.net.predict(x[..., None])


@dataclass
class PoseModel:
    net: Network
    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def standardize(self, windows: np.ndarray) -> np.ndarray:
        return (np.asarray(windows, dtype=np.float64) - self.mean) / self.std

    def prob(self, window: np.ndarray) -> float:
        return float(self.net.forward(self.standardize(window)[..., None]).reshape(-1)[0])

    def probs(self, windows: np.ndarray) -> np.ndarray:
        return self.net.predict(self.standardize(windows)[..., None])


def classify_los(ecir: Ecir, model: LosScorer, state: EwmaState, *, max_noise: float
                 ) -> tuple[LosDecision, EwmaState]:
    raw = model.prob(ecir.values, max_noise)
    return decide_los(raw, state)


def decide_los(raw: float, state: EwmaState) -> tuple[LosDecision, EwmaState]:
    state = ewma_update(state, raw)
    label = Condition.NLOS if state.y >= THRESHOLD else Condition.LOS
    return LosDecision(raw_p=float(raw), smoothed_p=state.y, label=label), state


def pose_from_branch(label: Condition, p: float) -> Pose:
    if label is Condition.LOS:
        return Pose.FRONT if p >= THRESHOLD else Pose.LOS_HAND
    return Pose.BACK if p >= THRESHOLD else Pose.NLOS_HAND


def detect_pose(decision: LosDecision, window: ImuWindow | np.ndarray,
                los_model: PoseScorer, nlos_model: PoseScorer) -> Pose:
    """Pick the branch from the smoothed LOS/NLOS label, then threshold its detector."""
    tensor = window.tensor() if isinstance(window, ImuWindow) else np.asarray(window)
    model = los_model if decision.label is Condition.LOS else nlos_model
    return pose_from_branch(decision.label, model.prob(tensor))


# --- training --------------------------------------------------------------

def pose_target(pose: Pose) -> int:
    """Detector target within a branch: 1 for the pocket pose, 0 for the hand pose."""
    return int(Pose(pose).in_pocket)


def train_los_classifier(values: np.ndarray, max_noise: np.ndarray, labels: np.ndarray,
                         config: TrainConfig = LOS_TRAIN, seed: int = 0
                         ) -> tuple[LosModel, TrainResult]:
    values = np.asarray(values)
    net = build_los_classifier(seed=seed, input_length=values.shape[1])
    x = (values / np.asarray(max_noise)[:, None])[..., None]
    result = train(net, x, labels, config)
    return LosModel(net), result


def feature_stats(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = np.asarray(windows).reshape(-1, N_FEATURES)
    std = flat.std(axis=0)
    return flat.mean(axis=0), np.where(std > 1e-9, std, 1.0)


def train_pose_detector(branch: Condition, windows: np.ndarray, poses: Sequence[Pose],
                        config: TrainConfig = POSE_TRAIN, seed: int | None = None
                        ) -> tuple[PoseModel, TrainResult]:
    branch = Condition(branch)
    poses = [Pose(p) for p in poses]
    if any(p.condition is not branch for p in poses):
        raise ValueError(f"training poses must all belong to the {branch.name} branch")
    mean, std = feature_stats(windows)
    model = PoseModel(build_pose_detector(branch, seed=seed), mean, std)
    y = np.array([pose_target(p) for p in poses])
    result = train(model.net, model.standardize(windows)[..., None], y, config)
    return model, result


# --- persistence -----------------------------------------------------------

LOS_STEM = "los_classifier"
POSE_STEMS = {Condition.LOS: "pose_los", Condition.NLOS: "pose_nlos"}


@dataclass
class ModelBundle:
    los: LosScorer
    pose: dict[Condition, PoseScorer]
    alpha: float = EWMA_ALPHA
    threshold: float = THRESHOLD


def save_los_model(directory: str | Path, model: LosModel, alpha: float = EWMA_ALPHA) -> None:
    meta = {"role": "los_classifier", "normalization": "divide by max_noise",
            "alpha": alpha, "threshold": THRESHOLD}
    model.net.save(Path(directory) / LOS_STEM, meta)


def save_pose_model(directory: str | Path, branch: Condition, model: PoseModel) -> None:
    branch = Condition(branch)
    meta = {"role": "pose_detector", "branch": branch.name, "threshold": THRESHOLD,
            "positive_pose": (Pose.FRONT if branch is Condition.LOS else Pose.BACK).name,
            "feature_mean": [float(v) for v in model.mean],
            "feature_std": [float(v) for v in model.std]}
    model.net.save(Path(directory) / POSE_STEMS[branch], meta)


def _require(stem: Path) -> None:
    for suffix in (".json", ".bin"):
        if not stem.with_suffix(suffix).exists():
            raise MissingModelError(f"missing model file {stem.with_suffix(suffix)}")


def load_los_model(directory: str | Path) -> tuple[LosModel, dict]:
    stem = Path(directory) / LOS_STEM
    _require(stem)
    net, meta = Network.load(stem)
    return LosModel(net), meta


def load_pose_model(directory: str | Path, branch: Condition) -> PoseModel:
    stem = Path(directory) / POSE_STEMS[Condition(branch)]
    _require(stem)
    net, meta = Network.load(stem)
    return PoseModel(net, np.array(meta["feature_mean"]), np.array(meta["feature_std"]))


def load_bundle(directory: str | Path) -> ModelBundle:
    los, meta = load_los_model(directory)
    pose = {b: load_pose_model(directory, b) for b in Condition}
    return ModelBundle(los=los, pose=pose, alpha=meta.get("alpha", EWMA_ALPHA),
                       threshold=meta.get("threshold", THRESHOLD))


def read_manifest(directory: str | Path, stem: str) -> dict:
    return json.loads((Path(directory) / stem).with_suffix(".json").read_text())
