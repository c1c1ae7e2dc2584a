"""TOML configuration: one section per parameter type.

    [channel]     ChannelParams
    [gait]        GaitParams
    [train_los]   TrainConfig for the LOS/NLOS classifier
    [train_pose]  TrainConfig for both pose detectors
    [walk]        WalkScenario
    [import]      ImportSchema
    [data]        dataset counts (cir_per_pose, imu_per_pose)
    [eval]        outlier_rate, sequence_length, trials
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..channel import ChannelParams
from ..errors import ConfigError
from ..imusim import GaitParams
from ..models import LOS_TRAIN, POSE_TRAIN
from ..neural import TrainConfig
from ..poses import Pose
from .datasets import DEFAULT_CIR_PER_POSE, DEFAULT_IMU_PER_POSE, ImportSchema
from .evaluation import SEQUENCE_LENGTH
from .pipeline import WalkScenario


@dataclass(frozen=True)
class DataParams:
    cir_per_pose: int = DEFAULT_CIR_PER_POSE
    imu_per_pose: int = DEFAULT_IMU_PER_POSE


@dataclass(frozen=True)
class EvalParams:
    outlier_rate: float = 0.0
    sequence_length: int = SEQUENCE_LENGTH
    trials: int = 50


@dataclass(frozen=True)
class Config:
    channel: ChannelParams = ChannelParams()
    gait: GaitParams = GaitParams()
    train_los: TrainConfig = LOS_TRAIN
    train_pose: TrainConfig = POSE_TRAIN
    walk: WalkScenario = WalkScenario()
    import_schema: ImportSchema = ImportSchema()
    data: DataParams = DataParams()
    eval: EvalParams = field(default_factory=EvalParams)


SECTIONS = {"channel": "channel", "gait": "gait", "train_los": "train_los",
            "train_pose": "train_pose", "walk": "walk", "import": "import_schema",
            "data": "data", "eval": "eval"}


def _coerce(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _pose(value: Any) -> Pose:
    if isinstance(value, str):
        try:
            return Pose[value.upper()]
        except KeyError:
            raise ConfigError(f"unknown pose {value!r}") from None
    return Pose(int(value))


def apply_section(base, section: dict, where: str):
    """Overlay a TOML table onto a frozen params dataclass."""
    known = {f.name for f in fields(base)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    updates = {}
    for key, value in section.items():
        if key == "pose_schedule":
            updates[key] = tuple((float(t), _pose(p)) for t, p in value)
        elif key == "orientations":
            updates[key] = {_pose(k): tuple(float(x) for x in v) for k, v in value.items()}
        else:
            updates[key] = _coerce(value)
    try:
        return replace(base, **updates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def parse_config(doc: dict, base: Config = Config()) -> Config:
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    updates = {}
    for section, attr in SECTIONS.items():
        if section in doc:
            if not isinstance(doc[section], dict):
                raise ConfigError(f"[{section}] must be a table")
            updates[attr] = apply_section(getattr(base, attr), doc[section], section)
    return dataclasses.replace(base, **updates)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


def load_scenario(path: str | Path, base: WalkScenario = WalkScenario()) -> WalkScenario:
    """A scenario file is either a bare table of WalkScenario keys or has them under [walk]."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return apply_section(base, doc.get("walk", doc), "walk")
