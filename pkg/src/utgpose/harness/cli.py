"""``utgpose`` command line.

Exit codes: 0 success, 1 validation or usage error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import UtgError
from ..models import load_bundle
from . import datasets as ds
from . import experiments as ex
from .config import load_config, load_scenario
from .pipeline import OracleBundle, run_walk, write_jsonl

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    p.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")
    p.add_argument("--config", type=Path, default=None, help="TOML configuration file")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="utgpose", description="UWB + IMU pose detection simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic CIR and IMU datasets")
    p.add_argument("--cir-per-pose", type=int, default=None)
    p.add_argument("--imu-per-pose", type=int, default=None)

    p = sub.add_parser("import", parents=[common], help="import a public CIR corpus")
    p.add_argument("--input", type=Path, required=True, help="corpus CSV file or directory")

    p = sub.add_parser("train-los", parents=[common], help="train the eCIR LOS/NLOS classifier")
    p.add_argument("--data", type=Path, default=None, help="dataset directory (default: out-dir)")
    p.add_argument("--corpus", type=Path, default=None, help="extra imported CIR file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--stop-loss", type=float, default=None)

    p = sub.add_parser("train-pose", parents=[common], help="train both pose detectors")
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--stop-loss", type=float, default=None)
    p.add_argument("--stride", type=int, default=3, help="window stride over the IMU trace")

    p = sub.add_parser("eval", parents=[common], help="evaluate trained models on the test split")
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--models", type=Path, default=None, help="model directory (default: out-dir)")
    p.add_argument("--outlier-rate", type=float, default=None)

    p = sub.add_parser("walk", parents=[common], help="run one walk scenario")
    p.add_argument("--scenario", type=Path, default=None, help="TOML scenario file")
    p.add_argument("--models", type=Path, default=None)
    p.add_argument("--oracle", action="store_true", help="use ground truth instead of models")

    p = sub.add_parser("report", parents=[common], help="full evaluation report")
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--models", type=Path, default=None)
    p.add_argument("--trials", type=int, default=None, help="walks per transition pair")
    return parser


def _train_config(base, args):
    updates = {}
    if args.epochs is not None:
        updates["max_epochs"] = args.epochs
    if args.stop_loss is not None:
        updates["stop_loss"] = args.stop_loss
    return replace(base, **updates)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    explicit_seed = args.seed is not None
    args.seed = args.seed if explicit_seed else 0
    out: Path = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    data = getattr(args, "data", None) or out
    models = getattr(args, "models", None) or out

    if args.command == "gen":
        m = ds.generate_datasets(
            out, args.cir_per_pose or cfg.data.cir_per_pose,
            args.imu_per_pose or cfg.data.imu_per_pose, cfg.channel, cfg.gait, args.seed)
        print(f"wrote {m.n_los + m.n_nlos} CIR records ({m.n_los} LOS, {m.n_nlos} NLOS) "
              f"and {4 * m.n_imu_per_pose} IMU samples to {out}")
    elif args.command == "import":
        with open(out / "imported_cir.csv", "w", newline="") as fh:
            _, report = ds.import_cir_corpus(args.input, fh, cfg.import_schema)
        (out / "import_report.json").write_text(report.to_json())
        print(f"imported {report.n_imported} of {report.n_rows} rows "
              f"({report.n_healed} healed, {report.n_skipped} skipped)")
    elif args.command == "train-los":
        res = ex.train_los_stage(data, out, _train_config(cfg.train_los, args), args.seed,
                                 args.corpus)
        print(f"LOS/NLOS classifier: {len(res.loss_curve)} epochs, "
              f"final loss {res.loss_curve[-1]:.4f}")
    elif args.command == "train-pose":
        results = ex.train_pose_stage(data, out, _train_config(cfg.train_pose, args), args.seed,
                                      args.stride)
        for branch, res in results.items():
            print(f"{branch.name} pose detector: {len(res.loss_curve)} epochs, "
                  f"final loss {res.loss_curve[-1]:.4f}")
    elif args.command == "eval":
        report = ex.evaluate_stage(data, models, cfg, args.seed, args.outlier_rate)
        (out / "eval.json").write_text(report.to_json())
        sys.stdout.write(report.to_table())
    elif args.command == "walk":
        scenario = load_scenario(args.scenario, cfg.walk) if args.scenario else cfg.walk
        if explicit_seed:
            scenario = replace(scenario, seed=args.seed)
        bundle = OracleBundle() if args.oracle else load_bundle(models)
        result = run_walk(scenario, bundle, cfg.channel, cfg.gait)
        with open(out / "estimates.jsonl", "w") as fh:
            write_jsonl(result.estimates, fh)
        summary = {"ranging_ticks": result.n_ranging_ticks, "imu_ticks": result.n_imu_ticks,
                   "estimates": len(result.estimates), "suppressed": result.n_suppressed,
                   "pose_accuracy": result.accuracy(), "los_accuracy": result.los_accuracy()}
        _dump(out / "walk_summary.json", summary)
        for key, value in summary.items():
            print(f"{key:<15} {value:.3f}" if isinstance(value, float) else f"{key:<15} {value}")
    elif args.command == "report":
        report = ex.build_report(data, models, cfg, args.seed, args.trials)
        paths = ex.write_report(report, out)
        sys.stdout.write(paths[1].read_text())
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (UtgError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
