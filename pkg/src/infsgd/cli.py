"""Command-line entry point.

    infsgd simulate CONFIG    write train.txt and test_truth.csv
    infsgd fit CONFIG         fit train.txt, write trajectory.csv and fit.json
    infsgd evaluate CONFIG    score fit.json on test_truth.csv, write eval.json
    infsgd run CONFIG         all of the above, for every replicate
    infsgd sweep CONFIG       ``run`` once per sweep value

CONFIG is a path or the name of a bundled config (``mm1k_fast.json``).
Output goes to ``--out-dir``, else ``$INFSGD_OUT_DIR/<label>``, else
``runs/<label>``. Exit status is 0 on success, 2 on a configuration error
and 1 on any other failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .harness import experiment as ex
from .harness.config import bundled_config, load_config
from .harness.dataio import write_dataset
from .models import Relaxation

OUT_DIR_ENV = "INFSGD_OUT_DIR"

log = logging.getLogger("infsgd")


def resolve_config(name):
    path = Path(name)
    if path.is_file():
        return load_config(path)
    if path.parent == Path(".") and not path.exists():
        return load_config(bundled_config(path.name))
    raise ConfigError(f"config file {name} not found", path="")


def output_dir(args, cfg):
    if args.out_dir:
        return Path(args.out_dir)
    root = os.environ.get(OUT_DIR_ENV) or "runs"
    return Path(root) / cfg.label


def apply_seed(cfg, seed):
    if seed is None:
        return cfg
    return cfg.with_value("simulate.seed", seed).with_value("optimizer.seed", seed)


def _print(args, *fields):
    if not args.quiet:
        print(*fields)


def cmd_simulate(args, cfg, out):
    out.mkdir(parents=True, exist_ok=True)
    seeds = ex.replicate_seeds(cfg)
    ds, truth = ex.simulate(cfg, seeds)
    write_dataset(out / "train.txt", ds)
    ex.write_truth(out / "test_truth.csv", truth)
    ex.write_json(out / "manifest.json", ex.manifest(cfg, [seeds]))
    counts = sum(w.total for w in ds.windows)
    _print(args, f"windows {len(ds.windows)}  observed_counts {counts}  out {out}")


def cmd_fit(args, cfg, out):
    ds, truth = ex.load_run(out)
    seeds = ex.replicate_seeds(cfg)
    result = ex.fit_dataset(cfg, ds, truth, seeds)
    ex.write_trajectory(out / "trajectory.csv", result.trajectory)
    ex.write_json(out / "fit.json", ex.fit_payload(result))
    last = result.trajectory[-1]
    _print(args, "theta_hat", " ".join(ex.fmt(v) for v in result.theta_hat))
    _print(args, f"train_nll {ex.fmt(last.train_nll)}  test_mape {ex.fmt(last.test_mape)}")


def cmd_evaluate(args, cfg, out):
    fit_file = out / "fit.json"
    if not fit_file.is_file():
        raise FileNotFoundError(f"{fit_file} not found; run 'fit' first")
    payload = json.loads(fit_file.read_text(encoding="utf-8"))
    _, truth = ex.load_run(out)
    relax = None
    if payload.get("q_tilde_hat") is not None:
        relax = Relaxation(np.array(payload["q_tilde_hat"]), cfg.optimizer.alpha or 0.0)
    report = ex.evaluate_fit(cfg, np.array(payload["theta_hat"]), truth, relax)
    ex.write_json(out / "eval.json", report.to_dict())
    _print(args, f"mape {ex.fmt(report.mape)}  mse {ex.fmt(report.mse)}")


def _print_summary(args, summary):
    rep = summary["report"]
    theta = " ".join(ex.fmt(v) for v in summary["theta_hat_mean"])
    _print(args, f"{summary['label']}  engine {summary['engine']}  theta_hat {theta}")
    _print(args, f"  mape {ex.fmt(rep['mape'])} +/- {ex.fmt(rep['ci95']['mape'])}"
                 f"  mse {ex.fmt(rep['mse'])} +/- {ex.fmt(rep['ci95']['mse'])}")


def cmd_run(args, cfg, out):
    _print_summary(args, ex.run_experiment(cfg, out))


def cmd_sweep(args, cfg, out):
    for row in ex.run_sweep(cfg, out):
        _print(args, f"{row['parameter']} = {row['value']}")
        _print_summary(args, row)


HELP = {
    "simulate": "write train.txt and test_truth.csv",
    "fit": "fit train.txt; write trajectory.csv and fit.json",
    "evaluate": "score fit.json against test_truth.csv; write eval.json",
    "run": "simulate, fit and evaluate every replicate",
    "sweep": "run once per sweep value",
}

COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "sweep": cmd_sweep,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="JSON config path or bundled config name")
    common.add_argument("--seed", type=int, default=None,
                        help="override simulate.seed and optimizer.seed")
    common.add_argument("--out-dir", default=None,
                        help=f"output directory (default: ${OUT_DIR_ENV}/<label> or runs/<label>)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    parser = argparse.ArgumentParser(prog="infsgd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_seed(resolve_config(args.config), args.seed)
        out = output_dir(args, cfg)
        COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI reports, never tracebacks
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
