"""Synthetic dataset generation, public-corpus import and train/test splits."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence, TextIO

import numpy as np

from .. import channel, imusim
from ..channel import CIR_LENGTH, ChannelParams, CirRecord, Diagnostics, generate_cir
from ..errors import NoFirstPathError, SchemaError
from ..imusim import GaitParams, ImuSample, ImuStream
from ..poses import Condition, Pose

log = logging.getLogger(__name__)

CIR_FILE = "cir.csv"
IMU_FILE = "imu.csv"
MANIFEST_FILE = "manifest.json"
DEFAULT_CIR_PER_POSE = 2000
DEFAULT_IMU_PER_POSE = 6600
IMU_SEGMENT = 100
TRAIN_FRACTION = 0.8


def record_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream per record so generation order never matters."""
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


@dataclass(frozen=True)
class DatasetManifest:
    n_los: int
    n_nlos: int
    n_per_pose: int
    n_imu_per_pose: int
    split: tuple[float, float] = (TRAIN_FRACTION, 1 - TRAIN_FRACTION)
    source: str = "synthetic"
    seed: int = 0
    channel_params: dict = field(default_factory=dict)
    gait_params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if abs(sum(self.split) - 1.0) > 1e-12:
            raise ValueError("split fractions must sum to 1")

    def to_json(self) -> str:
        d = asdict(self)
        d["split"] = list(self.split)
        return json.dumps(d, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(obj):
    if isinstance(obj, tuple):
        return list(obj)
    if isinstance(obj, (Pose, Condition)):
        return obj.name
    raise TypeError(f"cannot serialise {type(obj)}")


def _params_dict(params) -> dict:
    d = asdict(params)
    if "orientations" in d:
        d["orientations"] = {Pose(k).name: list(v) for k, v in d["orientations"].items()}
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def generate_cir_dataset(n_per_pose: int, params: ChannelParams = ChannelParams(), seed: int = 0
                         ) -> list[CirRecord]:
    if n_per_pose < 1:
        raise ValueError("need at least one record per pose")
    records = []
    for pose in Pose:
        for i in range(n_per_pose):
            rng = record_rng(seed, 1, int(pose), i)
            records.append(generate_cir(pose.condition, params, rng, pose=pose))
    return records


def generate_imu_dataset(n_per_pose: int, params: GaitParams = GaitParams(), seed: int = 0
                         ) -> list[tuple[ImuSample, Pose]]:
    """Per pose, a continuous-time trace built from 100-sample segments that
    each redraw gait amplitude, orientation and phase."""
    if n_per_pose < 1:
        raise ValueError("need at least one IMU sample per pose")
    out = []
    for pose in Pose:
        k = 0
        seg = 0
        while k < n_per_pose:
            stream = ImuStream(params, record_rng(seed, 2, int(pose), seg))
            for _ in range(min(IMU_SEGMENT, n_per_pose - k)):
                out.append((stream.sample(k * params.interval_ms, pose), pose))
                k += 1
            seg += 1
    return out


def generate_datasets(out_dir: str | Path, cir_per_pose: int = DEFAULT_CIR_PER_POSE,
                      imu_per_pose: int = DEFAULT_IMU_PER_POSE,
                      channel_params: ChannelParams = ChannelParams(),
                      gait_params: GaitParams = GaitParams(), seed: int = 0) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = generate_cir_dataset(cir_per_pose, channel_params, seed)
    with open(out / CIR_FILE, "w", newline="") as fh:
        channel.write_csv(records, fh)
    imu = generate_imu_dataset(imu_per_pose, gait_params, seed)
    with open(out / IMU_FILE, "w", newline="") as fh:
        imusim.write_csv(imu, fh)
    n_los = sum(r.label is Condition.LOS for r in records)
    manifest = DatasetManifest(
        n_los=n_los, n_nlos=len(records) - n_los, n_per_pose=cir_per_pose,
        n_imu_per_pose=imu_per_pose, seed=seed,
        channel_params=_params_dict(channel_params), gait_params=_params_dict(gait_params))
    (out / MANIFEST_FILE).write_text(manifest.to_json())
    return manifest


def load_cir_dataset(path: str | Path) -> list[CirRecord]:
    with open(path, newline="") as fh:
        return channel.read_csv(fh)


def load_imu_dataset(path: str | Path) -> list[tuple[ImuSample, Pose]]:
    with open(path, newline="") as fh:
        return imusim.read_csv(fh)


# --- splits ----------------------------------------------------------------

@dataclass
class CirSplit:
    train: list[CirRecord]
    test: list[CirRecord]


def split_cir(records: Sequence[CirRecord], seed: int = 0,
              train_fraction: float = TRAIN_FRACTION) -> CirSplit:
    """Random split stratified by pose (records without a pose by label)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    groups: dict = {}
    for i, r in enumerate(records):
        key = ("pose", int(r.pose)) if r.pose is not None else ("label", int(r.label))
        groups.setdefault(key, []).append(i)
    train, test = [], []
    for key in sorted(groups):
        idx = np.array(groups[key])
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(train_fraction * len(idx)))
        train += [records[i] for i in sorted(idx[:cut])]
        test += [records[i] for i in sorted(idx[cut:])]
    return CirSplit(train, test)


@dataclass
class ImuSplit:
    train: dict[Pose, np.ndarray]
    test: dict[Pose, np.ndarray]


def split_imu(samples: Sequence[tuple[ImuSample, Pose]],
              train_fraction: float = TRAIN_FRACTION) -> ImuSplit:
    """Per pose, the first 80% of the time-ordered trace trains and the rest tests;
    windows never straddle the cut."""
    by_pose: dict[Pose, list[ImuSample]] = {p: [] for p in Pose}
    for s, pose in samples:
        by_pose[pose].append(s)
    train, test = {}, {}
    for pose, seq in by_pose.items():
        seq = sorted(seq, key=lambda s: s.t_ms)
        rows = imusim.samples_to_array(seq)
        cut = int(round(train_fraction * len(rows)))
        train[pose], test[pose] = rows[:cut], rows[cut:]
    return ImuSplit(train, test)


def branch_windows(rows_by_pose: dict[Pose, np.ndarray], branch: Condition, stride: int = 1
                   ) -> tuple[np.ndarray, list[Pose]]:
    xs, poses = [], []
    for pose in Pose:
        if pose.condition is not Condition(branch) or pose not in rows_by_pose:
            continue
        w = imusim.sliding_windows(rows_by_pose[pose], stride=stride)
        xs.append(w)
        poses += [pose] * len(w)
    if not xs:
        return np.zeros((0, imusim.WINDOW_STEPS, imusim.N_FEATURES)), []
    return np.concatenate(xs), poses


def cir_arrays(records: Sequence[CirRecord], full: bool = False
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(inputs, max_noise, labels); inputs are eCIR windows unless ``full``."""
    from ..cirproc import extract_ecir

    if full:
        x = np.stack([r.magnitudes for r in records])
    else:
        x = np.stack([extract_ecir(r).values for r in records])
    noise = np.array([r.diagnostics.max_noise for r in records])
    y = np.array([int(r.label) for r in records])
    return x, noise, y


# --- public corpus import --------------------------------------------------

@dataclass(frozen=True)
class ImportSchema:
    """Column mapping for a magnitude-only CIR corpus.

    Defaults follow the layout of the widely used DWM1001 LOS/NLOS corpus
    (NLOS label, FP_IDX, FP_AMP1..3, STDEV_NOISE, MAX_NOISE, CIR0..CIR1015).
    """

    label_column: str = "NLOS"
    cir_prefix: str = "CIR"
    fp_index_column: str | None = "FP_IDX"
    fp_ampl_columns: tuple[str, str, str] | None = ("FP_AMP1", "FP_AMP2", "FP_AMP3")
    max_noise_column: str | None = "MAX_NOISE"
    std_noise_column: str | None = "STDEV_NOISE"
    pose_column: str | None = None
    noise_window: tuple[int, int] = channel.DEFAULT_NOISE_WINDOW


@dataclass
class ImportReport:
    n_rows: int = 0
    n_imported: int = 0
    n_skipped: int = 0
    n_healed: int = 0
    files: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _corpus_files(path: Path) -> list[Path]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".csv")
        if not files:
            raise FileNotFoundError(f"no .csv files in {path}")
        return files
    if not path.exists():
        raise FileNotFoundError(path)
    return [path]


def _column_index(header: list[str], schema: ImportSchema) -> dict:
    pos = {name: i for i, name in enumerate(header)}
    if schema.label_column not in pos:
        raise SchemaError(f"label column {schema.label_column!r} not found")
    cir_cols = [f"{schema.cir_prefix}{i}" for i in range(CIR_LENGTH)]
    missing = [c for c in cir_cols if c not in pos]
    if missing:
        raise SchemaError(f"{len(missing)} CIR columns missing (first: {missing[0]})")

    def opt(name):
        return pos.get(name) if name else None

    ampl = None
    if schema.fp_ampl_columns and all(c in pos for c in schema.fp_ampl_columns):
        ampl = [pos[c] for c in schema.fp_ampl_columns]
    return {
        "label": pos[schema.label_column],
        "cir": [pos[c] for c in cir_cols],
        "fp_index": opt(schema.fp_index_column),
        "fp_ampl": ampl,
        "max_noise": opt(schema.max_noise_column),
        "std_noise": opt(schema.std_noise_column),
        "pose": opt(schema.pose_column),
    }


def _parse_row(row: list[str], cols: dict, schema: ImportSchema) -> tuple[CirRecord, bool]:
    """Returns the record and whether its diagnostics had to be recomputed."""
    label = Condition(int(float(row[cols["label"]])))
    mags = np.array([float(row[i]) for i in cols["cir"]])
    if not np.isfinite(mags).all() or (mags < 0).any():
        raise ValueError("invalid CIR magnitude")
    pose = None
    if cols["pose"] is not None and row[cols["pose"]].strip() != "":
        pose = Pose(int(float(row[cols["pose"]])))

    def cell(key):
        i = cols[key]
        return None if i is None or row[i].strip() == "" else row[i]

    fp, mx, sd = cell("fp_index"), cell("max_noise"), cell("std_noise")
    ampl = None if cols["fp_ampl"] is None else [row[i] for i in cols["fp_ampl"]]
    have_all = fp is not None and mx is not None and sd is not None and ampl is not None \
        and all(a.strip() != "" for a in ampl)
    if have_all:
        diag = Diagnostics(fp_index=int(float(fp)), fp_ampl=tuple(float(a) for a in ampl),
                           max_noise=float(mx), std_noise=float(sd))
        healed = False
    else:
        diag = channel.compute_diagnostics(mags, schema.noise_window)
        healed = True
    return CirRecord(magnitudes=mags, diagnostics=diag, label=label, pose=pose), healed


def iter_corpus(path: str | Path, schema: ImportSchema = ImportSchema(),
                report: ImportReport | None = None) -> Iterator[CirRecord]:
    """Stream validated records from one corpus file or a directory of them."""
    report = report if report is not None else ImportReport()
    for file in _corpus_files(Path(path)):
        report.files.append(file.name)
        with open(file, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise SchemaError(f"{file} is empty") from None
            cols = _column_index(header, schema)
            for row in reader:
                if not row:
                    continue
                report.n_rows += 1
                if len(row) != len(header):
                    report.n_skipped += 1
                    continue
                try:
                    record, healed = _parse_row(row, cols, schema)
                except (ValueError, NoFirstPathError):
                    report.n_skipped += 1
                    continue
                report.n_imported += 1
                report.n_healed += healed
                yield record


def import_cir_corpus(path: str | Path, out: TextIO | None = None,
                      schema: ImportSchema = ImportSchema()) -> tuple[list[CirRecord], ImportReport]:
    """Import into the native schema. With ``out`` the rows are streamed to
    that file and the returned record list is empty (constant memory)."""
    report = ImportReport()
    records: list[CirRecord] = []
    stream = iter_corpus(path, schema, report)
    if out is None:
        records = list(stream)
    else:
        channel.write_csv(stream, out)
    log.info("imported %d/%d rows (%d healed, %d skipped)", report.n_imported, report.n_rows,
             report.n_healed, report.n_skipped)
    return records, report
