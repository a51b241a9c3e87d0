import csv
import json
import re

import numpy as np
import pytest

from infsgd import cli
from infsgd.exceptions import ConfigError, StageFailure, ZeroTruth
from infsgd.harness import experiment as ex
from infsgd.harness.config import ExperimentConfig, bundled_config, load_config
from infsgd.harness.dataio import (
    Dataset,
    DatasetFormatError,
    format_dataset,
    parse_dataset,
    read_dataset,
    write_dataset,
)
from infsgd.harness.metrics import (
    ci95,
    evaluate,
    ground_truth,
    predict_failure_prob,
)
from infsgd.likelihood import ObservationWindow
from infsgd.models import ParametricModel

MM1K_K20 = ParametricModel("MM1K", 20)

TINY = {
    "model": {"kind": "MM1K", "K": 5},
    "simulate": {"theta_star": [2.0], "n_windows": 8, "train_loads": [0.8, 1.2],
                 "test_loads": [1.5, 3.0], "n_test": 6},
    "optimizer": {"epochs": 3, "eta0": 0.2, "batch_size": 4},
    "evaluate": {"label": "tiny"},
}


def tiny(**sections):
    raw = json.loads(json.dumps(TINY))
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    return raw


@pytest.fixture
def tiny_file(tmp_path):
    def write(**sections):
        path = tmp_path / "tiny.json"
        path.write_text(json.dumps(tiny(**sections)), encoding="utf-8")
        return path
    return write


class TestMetrics:
    def test_mm1k_k2_failure_probability(self):
        p = predict_failure_prob(ParametricModel("MM1K", 2), [2.0], 1.0)
        assert p == pytest.approx(1 / 7, abs=1e-12)

    def test_light_load_limit(self):
        probs = [predict_failure_prob(MM1K_K20, [25.0], x) for x in (10.0, 1.0, 0.1)]
        assert probs[0] > probs[1] > probs[2]
        assert probs[2] < 1e-40

    def test_loss_grows_with_load(self):
        assert predict_failure_prob(MM1K_K20, [25.0], 60.0) > predict_failure_prob(MM1K_K20, [25.0], 31.0)

    def test_bad_load(self):
        with pytest.raises(ValueError):
            predict_failure_prob(MM1K_K20, [25.0], 0.0)

    @pytest.mark.parametrize("model, theta", [
        (MM1K_K20, [25.0]),
        (ParametricModel("MMmK", 20, m=5), [5.0]),
        (ParametricModel("MMMultipleK", 20), [15.0, 10.0, 5.0]),
        (ParametricModel("UpperTriangular", 4), np.linspace(0.5, 3.0, 15)),
    ])
    def test_truth_scores_zero(self, model, theta):
        truth = ground_truth(model, theta, [31.0, 45.0, 60.0])
        report = evaluate(theta, model, truth)
        assert report.mape == 0.0 and report.mse == 0.0
        assert len(report.per_window) == 3

    def test_doubled_prediction_gives_unit_mape(self):
        truth = ground_truth(MM1K_K20, [25.0], [31.0, 45.0, 60.0])
        halved = [(x, t / 2) for x, t in truth]
        assert evaluate([25.0], MM1K_K20, halved).mape == pytest.approx(1.0, rel=1e-12)

    def test_permutation_invariance(self):
        truth = ground_truth(MM1K_K20, [25.0], [31.0, 45.0, 60.0])
        a = evaluate([23.0], MM1K_K20, truth)
        b = evaluate([23.0], MM1K_K20, truth[::-1])
        assert a.mape == pytest.approx(b.mape, rel=1e-14)
        assert a.mse == pytest.approx(b.mse, rel=1e-14)

    def test_zero_truth(self):
        report = evaluate([25.0], MM1K_K20, [(31.0, 0.0), (45.0, 0.1)])
        assert report.excluded == 1
        with pytest.raises(ZeroTruth):
            evaluate([25.0], MM1K_K20, [(31.0, 0.0)])

    def test_ci95(self):
        assert ci95([1.0]) == 0.0
        assert ci95([1.0, 3.0]) == pytest.approx(1.96 * np.sqrt(2) / np.sqrt(2))


class TestConfig:
    def test_bundled_configs_validate(self):
        from importlib import resources
        names = [p.name for p in resources.files("infsgd").joinpath("configs").iterdir()
                 if p.name.endswith(".json")]
        assert "mm1k_fast.json" in names and "mm1k_fast_p_sweep.json" in names
        for name in names:
            assert load_config(bundled_config(name)).replicates >= 1

    def test_fast_config_values(self):
        cfg = load_config(bundled_config("mm1k_fast.json"))
        assert cfg.theta_star == (25.0,)
        assert cfg.train_loads == (11.0, 15.0)
        assert cfg.observed == (0, 1)
        assert cfg.failure_states == (20,)
        assert cfg.raw["simulate"]["n_windows"] == 50

    @pytest.mark.parametrize("raw, path", [
        ({**TINY, "extra": {}}, "extra"),
        (tiny(simulate={"bogus": 1}), "simulate.bogus"),
        ({"model": {"kind": "MM1K", "K": 5}}, "simulate.theta_star"),
        (tiny(simulate={"theta_star": [1.0, 2.0]}), "simulate.theta_star"),
        (tiny(simulate={"train_loads": [5, 1]}), "simulate.train_loads"),
        (tiny(observe={"states": [9]}), "observe.states"),
        (tiny(optimizer={"engine": "adam"}), "optimizer"),
        (tiny(model={"kind": "Erlang"}), "model"),
        (tiny(sweep={"parameter": "model.K", "values": [1]}), "sweep.parameter"),
        (tiny(evaluate={"replicates": 0}), "evaluate.replicates"),
    ])
    def test_rejects(self, raw, path):
        with pytest.raises(ConfigError) as info:
            ExperimentConfig(raw)
        assert info.value.path == path

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_digest_tracks_content(self):
        a = ExperimentConfig(tiny())
        assert a.digest() == ExperimentConfig(tiny()).digest()
        assert a.digest() != a.with_value("optimizer.p", 0.01).digest()

    def test_sweep_points(self):
        cfg = load_config(bundled_config("mm1k_fast_p_sweep.json"))
        assert [v for v, _ in cfg.sweep_points()] == [0.1, 0.01]
        assert [c.optimizer.p for _, c in cfg.sweep_points()] == [0.1, 0.01]
        assert ExperimentConfig(tiny()).sweep_points()[0][0] is None


class TestDataio:
    ds = Dataset(model=ParametricModel("MMmK", 6, m=2),
                 windows=[ObservationWindow(12.748120300751879, {0: 31, 1: 0}),
                          ObservationWindow(0.1 + 0.2, {0: 2, 1: 9})],
                 observed=(0, 1), theta_star=(5.0,), seed=3)

    def test_round_trip(self, tmp_path):
        write_dataset(tmp_path / "d.txt", self.ds)
        back = read_dataset(tmp_path / "d.txt")
        assert back == self.ds

    def test_text_layout(self):
        lines = format_dataset(self.ds).splitlines()
        assert lines[0] == '# model: {"K": 6, "kind": "MMmK", "m": 2}'
        assert lines[2] == "# observed: 0 1"
        assert lines[4] == "0 12.748120300751879 0:31 1:0"

    @pytest.mark.parametrize("text", [
        "# observed: 0 1\n0 1.0 0:1\n",
        '# model: {"kind": "MM1K", "K": 2}\n# observed: 0\n1 1.0 0:1\n',
        '# model: {"kind": "MM1K", "K": 2}\n# observed: 0\n0 1.0 1:4\n',
        '# model: {"kind": "MM1K", "K": 2}\n# observed: 0\n0 abc 0:4\n',
        '# model\n',
    ])
    def test_malformed(self, text):
        with pytest.raises(DatasetFormatError):
            parse_dataset(text)


class TestPipeline:
    def test_replicate_artifacts(self, tmp_path):
        cfg = ExperimentConfig(tiny())
        result, report = ex.run_replicate(cfg, tmp_path)
        for name in ("train.txt", "test_truth.csv", "trajectory.csv", "fit.json",
                     "eval.json", "manifest.json"):
            assert (tmp_path / name).is_file()
        with open(tmp_path / "trajectory.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_nll", "test_mape", "test_mse"]
        assert len(rows) - 1 == cfg.optimizer.epochs + 1
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert ExperimentConfig(manifest["config"]).digest() == manifest["config_sha256"]
        assert manifest["seeds"] == [{"data": 0, "test": 1_000_000, "optimizer": 0}]
        assert json.loads((tmp_path / "eval.json").read_text())["mape"] == report.mape

    def test_byte_identical_rerun(self, tmp_path):
        cfg = ExperimentConfig(tiny())
        ex.run_replicate(cfg, tmp_path / "a")
        ex.run_replicate(cfg, tmp_path / "b")
        for name in ("train.txt", "test_truth.csv", "trajectory.csv", "fit.json", "eval.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_replicates_pool(self, tmp_path):
        summary = ex.run_experiment(ExperimentConfig(tiny(evaluate={"replicates": 3})), tmp_path)
        assert len(summary["theta_hat"]) == 3
        assert (tmp_path / "rep2" / "eval.json").is_file()
        assert summary["report"]["ci95"]["mape"] > 0
        assert json.loads((tmp_path / "report.json").read_text()) == summary

    def test_sweep_emits_one_run_per_value(self, tmp_path):
        cfg = ExperimentConfig(tiny(sweep={"parameter": "optimizer.p", "values": [0.1, 0.01]}))
        rows = ex.run_sweep(cfg, tmp_path)
        assert [r["value"] for r in rows] == [0.1, 0.01]
        for sub in ("p=0.1", "p=0.01"):
            assert (tmp_path / sub / "trajectory.csv").is_file()
        with open(tmp_path / "sweep.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) == 3

    def test_stage_failure_names_stage(self):
        cfg = ExperimentConfig(tiny())
        seeds = ex.replicate_seeds(cfg)
        ds, truth = ex.simulate(cfg, seeds)
        with pytest.raises(StageFailure, match="evaluate stage failed"):
            ex.evaluate_fit(cfg, np.array([2.0]), [(1.0, 0.0)])
        assert ds.seed == 0 and len(truth) == 6


SIG_DIGITS = re.compile(r"(?<![\w.])-?(\d+\.?\d*)(?:e[+-]?\d+)?")


def significant_digits(token):
    return len(token.replace(".", "").lstrip("0")) or 1


class TestCli:
    def test_run_and_six_digit_output(self, tiny_file, tmp_path, capsys):
        assert cli.main(["run", str(tiny_file()), "--out-dir", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert "theta_hat" in out and "mape" in out
        numbers = [m.group(1) for m in SIG_DIGITS.finditer(out)]
        assert numbers and all(significant_digits(n) <= 6 for n in numbers)

    def test_stepwise_with_env_dir(self, tiny_file, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUT_DIR_ENV, str(tmp_path / "env"))
        path = str(tiny_file())
        for cmd in ("simulate", "fit", "evaluate"):
            assert cli.main([cmd, path, "--quiet"]) == 0
        assert (tmp_path / "env" / "tiny" / "eval.json").is_file()

    def test_seed_flag(self, tiny_file, tmp_path):
        out = tmp_path / "s"
        assert cli.main(["simulate", str(tiny_file()), "--seed", "7", "--out-dir", str(out),
                         "--quiet"]) == 0
        assert read_dataset(out / "train.txt").seed == 7

    def test_config_error_exit_code(self, tiny_file, tmp_path, capsys):
        path = tiny_file(simulate={"bogus": 1})
        assert cli.main(["run", str(path), "--out-dir", str(tmp_path)]) == 2
        assert "simulate.bogus" in capsys.readouterr().err
        assert cli.main(["run", str(tmp_path / "missing" / "x.json")]) == 2

    def test_other_failure_exit_code(self, tiny_file, tmp_path):
        assert cli.main(["fit", str(tiny_file()), "--out-dir", str(tmp_path / "empty")]) == 1

    def test_sweep(self, tiny_file, tmp_path):
        path = tiny_file(sweep={"parameter": "optimizer.p", "values": [0.1, 0.01]})
        assert cli.main(["sweep", str(path), "--out-dir", str(tmp_path), "--quiet"]) == 0
        assert (tmp_path / "sweep.csv").is_file()

    def test_bundled_name_resolves(self):
        cfg = cli.resolve_config("mm1k_fast.json")
        assert cfg.label == "mm1k_fast"
