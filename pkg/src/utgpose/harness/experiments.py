"""Directory-level experiment steps shared by the CLI and the test suite."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ..cirproc import ECIR_LENGTH, meets_realtime, transfer_latency
from ..models import (LOS_STEM, POSE_STEMS, ModelBundle, load_bundle, save_los_model,
                      save_pose_model, train_los_classifier, train_pose_detector)
from ..neural import TrainConfig, TrainResult
from ..poses import Condition
from ..ranging import ClockModel, linear_walk, ranging_stream
from . import datasets as ds
from .config import Config
from .evaluation import EvalReport, evaluate
from .pipeline import TRANSITION_PAIRS, OracleBundle, aggregate_delays, transition_trials

log = logging.getLogger(__name__)

FULL_CIR_UNITS = 1024


@dataclass
class DataSplit:
    cir: ds.CirSplit
    imu: ds.ImuSplit
    seed: int


def data_seed(data_dir: Path) -> int:
    manifest = Path(data_dir) / ds.MANIFEST_FILE
    if manifest.exists():
        return int(json.loads(manifest.read_text()).get("seed", 0))
    return 0


def load_split(data_dir: str | Path, need_imu: bool = True) -> DataSplit:
    """The 80/20 split is keyed on the dataset's own seed so every step sees the same one."""
    data_dir = Path(data_dir)
    seed = data_seed(data_dir)
    cir = ds.split_cir(ds.load_cir_dataset(data_dir / ds.CIR_FILE), seed)
    imu = ds.split_imu(ds.load_imu_dataset(data_dir / ds.IMU_FILE)) if need_imu else None
    return DataSplit(cir, imu, seed)


def _write_loss(path: Path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        result.write_csv(fh)


def train_los_stage(data_dir: str | Path, out_dir: str | Path, config: TrainConfig,
                    seed: int = 0, corpus: str | Path | None = None) -> TrainResult:
    """Train the eCIR classifier on the training split plus an optional imported corpus
    (used for LOS/NLOS only, since its rows carry no pose)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_records = load_split(data_dir, need_imu=False).cir.train
    if corpus is not None:
        train_records = train_records + ds.load_cir_dataset(corpus)
    x, noise, y = ds.cir_arrays(train_records)
    model, result = train_los_classifier(x, noise, y, replace(config, seed=seed), seed=seed)
    save_los_model(out, model)
    _write_loss(out / f"{LOS_STEM}_loss.csv", result)
    return result


def train_pose_stage(data_dir: str | Path, out_dir: str | Path, config: TrainConfig,
                     seed: int = 0, stride: int = 3) -> dict[Condition, TrainResult]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    imu = ds.split_imu(ds.load_imu_dataset(Path(data_dir) / ds.IMU_FILE))
    results = {}
    for branch in Condition:
        x, poses = ds.branch_windows(imu.train, branch, stride=stride)
        if len(x) == 0:
            raise ValueError(f"no training windows for the {branch.name} branch")
        model, res = train_pose_detector(branch, x, poses, replace(config, seed=seed + int(branch)),
                                         seed=seed + int(branch) + 1)
        save_pose_model(out, branch, model)
        _write_loss(out / f"{POSE_STEMS[branch]}_loss.csv", res)
        results[branch] = res
    return results


def evaluate_stage(data_dir: str | Path, models_dir: str | Path, cfg: Config, seed: int = 0,
                   outlier_rate: float | None = None) -> EvalReport:
    bundle = load_bundle(models_dir)
    split = load_split(data_dir)
    rate = cfg.eval.outlier_rate if outlier_rate is None else outlier_rate
    return evaluate(bundle, split.cir.test, split.imu.test, outlier_rate=rate,
                    sequence_length=cfg.eval.sequence_length, seed=seed)


def latency_table() -> list[dict]:
    rows = []
    for name, units in (("eCIR", ECIR_LENGTH), ("full CIR", FULL_CIR_UNITS)):
        lat = transfer_latency(units)
        rows.append({"input": name, "units": units, "latency_ms": round(lat, 6),
                     "meets_200ms": meets_realtime(lat, 200.0)})
    return rows


def ranging_summary(seed: int = 0, n_walks: int = 20, drift_ppm: float = 20.0) -> dict:
    """Distance error over approach walks with opposing clock drifts."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    errors = []
    for _ in range(n_walks):
        walk = linear_walk(4.0, 1.0)
        d = rng.uniform(-drift_ppm, drift_ppm, size=2)
        for r in ranging_stream(200.0, walk, 4000.0, ClockModel(d[0]), ClockModel(d[1])):
            errors.append(r.distance_m - walk(r.timestamp_ms))
    errors = np.abs(errors)
    return {"sessions": int(errors.size), "drift_ppm": drift_ppm,
            "max_abs_error_m": float(errors.max()), "mean_abs_error_m": float(errors.mean())}


def build_report(data_dir: str | Path, models_dir: str | Path, cfg: Config, seed: int = 0,
                 trials: int | None = None) -> dict:
    bundle: ModelBundle = load_bundle(models_dir)
    split = load_split(data_dir)
    trials = cfg.eval.trials if trials is None else trials
    clean = evaluate(bundle, split.cir.test, split.imu.test, outlier_rate=0.0,
                     sequence_length=cfg.eval.sequence_length, seed=seed)
    noisy = evaluate(bundle, split.cir.test, split.imu.test, outlier_rate=0.1,
                     sequence_length=cfg.eval.sequence_length, seed=seed)
    learned = aggregate_delays(transition_trials(
        TRANSITION_PAIRS, trials, bundle, seed, cfg.channel, cfg.gait))
    oracle = aggregate_delays(transition_trials(
        TRANSITION_PAIRS, min(trials, 5), OracleBundle(), seed, cfg.channel, cfg.gait))
    clean.delays = learned
    return {
        "evaluation": clean.to_dict(),
        "evaluation_outliers": noisy.to_dict(),
        "oracle_transition_delay_ms": [
            {"from": a.name, "to": b.name, "mean": s.mean_ms, "n": s.n}
            for (a, b), s in oracle.items()],
        "latency": latency_table(),
        "ranging": ranging_summary(seed),
        "tables": {"clean": clean.to_table(), "outliers": noisy.to_table()},
    }


def write_report(report: dict, out_dir: str | Path) -> list[Path]:
    """JSON, a text summary, and flat CSVs meant for external plotting."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "report.txt", out / "accuracy.csv",
             out / "transition_delay.csv", out / "latency.csv"]
    body = {k: v for k, v in report.items() if k != "tables"}
    paths[0].write_text(json.dumps(body, indent=2) + "\n")
    r = report["ranging"]
    text = ["LOS/NLOS and pose accuracy", report["tables"]["clean"],
            "With 10% outlier flips", report["tables"]["outliers"],
            "Transfer latency"]
    text += [f"  {row['input']:<9} {row['units']:>5} units  {row['latency_ms']:8.1f} ms  "
             f"{'meets' if row['meets_200ms'] else 'misses'} 200 ms" for row in report["latency"]]
    text += ["", f"Ranging: {r['sessions']} sessions at +/-{r['drift_ppm']} ppm, "
             f"max |error| {r['max_abs_error_m']:.3e} m"]
    paths[1].write_text("\n".join(text) + "\n")

    with open(paths[2], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "pose", "n", "los_acc", "los_acc_no_lpf", "pose_acc", "pose_acc_walk"])
        for setting in ("evaluation", "evaluation_outliers"):
            e = report[setting]
            for pose, n in e["counts"].items():
                w.writerow([setting, pose, n, e["los_acc"][pose], e["los_acc_no_lpf"][pose],
                            e["pose_acc"][pose], e["pose_acc_walk"][pose]])
    with open(paths[3], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["from", "to", "mean_ms", "std_ms", "n", "censored"])
        for row in report["evaluation"]["transition_delay_ms"]:
            w.writerow([row["from"], row["to"], row["mean"], row["std"], row["n"], row["censored"]])
    with open(paths[4], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["input", "units", "latency_ms", "meets_200ms"])
        for row in report["latency"]:
            w.writerow([row["input"], row["units"], row["latency_ms"], row["meets_200ms"]])
    return paths
