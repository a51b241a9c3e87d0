"""Config-driven pipeline: simulate, fit, evaluate, replicate, sweep.

Every run directory gets::

    train.txt         training windows (dataset text format)
    test_truth.csv    x, true failure probability
    trajectory.csv    epoch, train_nll, test_mape, test_mse
    fit.json          theta_hat, diagnostics
    eval.json         EvalReport
    manifest.json     config hash, seeds, code version

With ``evaluate.replicates > 1`` each replicate gets its own ``rep<r>/``
directory and the top level holds the pooled ``report.json`` with 95%
half-widths across replicates.
"""
from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import __version__
from ..exceptions import CTMCError, StageFailure
from ..optimizer import fit
from ..simulator import SimulationConfig, draw_loads, generate_dataset
from .dataio import Dataset, read_dataset, write_dataset
from .metrics import EvalReport, ci95, evaluate, ground_truth

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("epoch", "train_nll", "test_mape", "test_mse")


def fmt(value):
    """Six significant digits, the house style for every printed number."""
    if value is None:
        return ""
    return f"{value:.6g}"


@dataclass(frozen=True)
class Seeds:
    data: int
    test: int
    optimizer: int

    def to_dict(self):
        return {"data": self.data, "test": self.test, "optimizer": self.optimizer}


def replicate_seeds(cfg, replicate=0):
    """Seeds of one replicate; replicates shift every seed by their index."""
    base = cfg.raw["simulate"]["seed"]
    return Seeds(data=base + replicate, test=base + replicate + 1_000_000,
                 optimizer=cfg.raw["optimizer"]["seed"] + replicate)


def _stage(name, func, *args, **kwargs):
    try:
        return func(*args, **kwargs)
    except (CTMCError, ValueError, FloatingPointError) as exc:
        if isinstance(exc, StageFailure):
            raise
        raise StageFailure(name, exc) from exc


# -- stages ------------------------------------------------------------------

def simulate(cfg, seeds):
    """Training dataset and exact test truth for one replicate."""
    sim = cfg.raw["simulate"]

    def run():
        scfg = SimulationConfig(
            model=cfg.model, theta_star=cfg.theta_star, n_windows=sim["n_windows"],
            lambda_min=cfg.train_loads[0], lambda_max=cfg.train_loads[1],
            window_length=sim["window_length"], observed=cfg.observed,
            seed=seeds.data, slack=sim["slack"], label=cfg.label)
        windows = generate_dataset(scfg)
        loads = draw_loads(*cfg.test_loads, sim["n_test"], seeds.test)
        truth = ground_truth(cfg.model, cfg.theta_star, loads, cfg.failure_states,
                             slack=sim["slack"])
        ds = Dataset(model=cfg.model, windows=windows, observed=cfg.observed,
                     theta_star=cfg.theta_star, seed=seeds.data)
        return ds, truth

    return _stage("simulate", run)


def fit_dataset(cfg, ds, truth, seeds, callback=None):
    ocfg = cfg.optimizer.__class__(**{**cfg.optimizer.to_dict(), "seed": seeds.optimizer})
    return _stage("fit", fit, ds.windows, cfg.model, cfg.observed, ocfg,
                  theta0=cfg.theta0, test=truth, failure_states=cfg.failure_states,
                  callback=callback)


def evaluate_fit(cfg, theta_hat, truth, relax=None):
    return _stage("evaluate", evaluate, theta_hat, cfg.model, truth, cfg.failure_states,
                  relax, cfg.raw["simulate"]["slack"])


# -- files -------------------------------------------------------------------

def write_truth(path, truth):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "truth"])
        for x, t in truth:
            w.writerow([repr(float(x)), repr(float(t))])


def read_truth(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(float(r["x"]), float(r["truth"])) for r in rows]


def write_trajectory(path, trajectory):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for rec in trajectory:
            w.writerow([rec.epoch, fmt(rec.train_nll), fmt(rec.test_mape), fmt(rec.test_mse)])


def write_json(path, payload):
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def fit_payload(result):
    return {
        "theta_hat": [float(v) for v in result.theta_hat],
        "q_tilde_hat": (None if result.q_tilde_hat is None
                        else result.q_tilde_hat.q_tilde.tolist()),
        "diagnostics": result.diagnostics,
    }


def manifest(cfg, seeds):
    return {
        "config_sha256": cfg.digest(),
        "config": cfg.raw,
        "seeds": [s.to_dict() for s in seeds],
        "code_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


# -- pipelines ---------------------------------------------------------------

def run_replicate(cfg, out_dir, replicate=0):
    """simulate -> fit -> evaluate for one replicate; returns (FitResult, EvalReport)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = replicate_seeds(cfg, replicate)
    ds, truth = simulate(cfg, seeds)
    write_dataset(out / "train.txt", ds)
    write_truth(out / "test_truth.csv", truth)
    result = fit_dataset(cfg, ds, truth, seeds)
    write_trajectory(out / "trajectory.csv", result.trajectory)
    write_json(out / "fit.json", fit_payload(result))
    report = evaluate_fit(cfg, result.theta_hat, truth, result.q_tilde_hat)
    write_json(out / "eval.json", report.to_dict())
    write_json(out / "manifest.json", manifest(cfg, [seeds]))
    return result, report


def pool_reports(reports, thetas):
    """Mean MAPE/MSE across replicates with 95% half-widths."""
    mapes = [r.mape for r in reports]
    mses = [r.mse for r in reports]
    thetas = np.asarray(thetas, dtype=float)
    pooled = EvalReport(
        mape=float(np.mean(mapes)), mse=float(np.mean(mses)),
        per_window=reports[0].per_window if len(reports) == 1 else [],
        ci95={"mape": ci95(mapes), "mse": ci95(mses),
              "theta": [ci95(col) for col in thetas.T]},
        excluded=max(r.excluded for r in reports))
    return pooled


def run_experiment(cfg, out_dir):
    """Full pipeline with ``evaluate.replicates`` seed replicates.

    Returns a summary dict (also written as ``report.json``).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = cfg.replicates
    results, reports, seeds = [], [], []
    for r in range(n):
        rdir = out if n == 1 else out / f"rep{r}"
        res, rep = run_replicate(cfg, rdir, r)
        log.info("replicate %d: theta_hat=%s mape=%s", r,
                 " ".join(fmt(v) for v in res.theta_hat), fmt(rep.mape))
        results.append(res)
        reports.append(rep)
        seeds.append(replicate_seeds(cfg, r))
    thetas = [res.theta_hat for res in results]
    pooled = pool_reports(reports, thetas)
    summary = {
        "label": cfg.label,
        "engine": cfg.optimizer.engine,
        "theta_star": list(cfg.theta_star),
        "theta_hat": [[float(v) for v in t] for t in thetas],
        "theta_hat_mean": [float(v) for v in np.mean(thetas, axis=0)],
        "report": pooled.to_dict(),
    }
    write_json(out / "report.json", summary)
    write_json(out / "manifest.json", manifest(cfg, seeds))
    return summary


def sweep_label(param, value):
    return f"{param.split('.')[-1]}={value}"


def run_sweep(cfg, out_dir):
    """One experiment per sweep value, each in its own sub-directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    param = cfg.raw["sweep"]["parameter"]
    rows = []
    for value, point in cfg.sweep_points():
        sub = out if value is None else out / sweep_label(param, value)
        summary = run_experiment(point, sub)
        rows.append({"parameter": param, "value": value, **summary})
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "value", "mape", "mape_ci95", "mse", "mse_ci95", "theta_hat_mean"])
        for row in rows:
            rep = row["report"]
            w.writerow([row["parameter"], row["value"], fmt(rep["mape"]), fmt(rep["ci95"]["mape"]),
                        fmt(rep["mse"]), fmt(rep["ci95"]["mse"]),
                        " ".join(fmt(v) for v in row["theta_hat_mean"])])
    return rows


def load_run(out_dir):
    """Read back ``train.txt`` and ``test_truth.csv`` written by :func:`simulate` runs."""
    out = Path(out_dir)
    for name in ("train.txt", "test_truth.csv"):
        if not (out / name).is_file():
            raise FileNotFoundError(f"{out / name} not found; run 'simulate' first")
    return read_dataset(out / "train.txt"), read_truth(out / "test_truth.csv")
