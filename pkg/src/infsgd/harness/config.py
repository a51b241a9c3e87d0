"""Experiment configuration: one JSON document, strictly validated.

Layout::

    {
      "model":     {"kind": "MM1K", "K": 20},
      "simulate":  {"theta_star": [25], "n_windows": 50, "train_loads": [11, 15],
                    "test_loads": [31, 60], "n_test": 50, "window_length": 1.0},
      "observe":   {"states": [0, 1], "failure_states": [20]},
      "optimizer": {"engine": "infsgd", "epochs": 50, "eta0": 1.0, ...},
      "evaluate":  {"replicates": 5, "label": "mm1k-fast"},
      "sweep":     {"parameter": "optimizer.p", "values": [0.1, 0.01]}
    }

Only ``model`` and ``simulate.theta_star`` are required. Unknown keys at any
level raise :class:`ConfigError` naming the offending path.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from ..ctmc import DEFAULT_SLACK
from ..exceptions import ConfigError
from ..models import EPS_FLOOR, ParametricModel
from ..optimizer import OptimizerConfig

SECTIONS = ("model", "simulate", "observe", "optimizer", "evaluate", "sweep")

DEFAULTS = {
    "model": {"kind": None, "K": None, "m": 1, "d": 3},
    "simulate": {
        "theta_star": None,
        "n_windows": 50,
        "train_loads": [11.0, 15.0],
        "test_loads": [31.0, 60.0],
        "n_test": 50,
        "window_length": 1.0,
        "seed": 0,
        "slack": DEFAULT_SLACK,
    },
    "observe": {"states": [0, 1], "failure_states": None},
    "optimizer": {
        "engine": "infsgd",
        "epochs": 50,
        "eta0": 0.1,
        "schedule": "constant",
        "decay": 0.0,
        "p": 0.1,
        "T": 7,
        "eps_floor": EPS_FLOOR,
        "alpha": None,
        "seed": 0,
        "batch_size": None,
        "theta0": None,
    },
    "evaluate": {"replicates": 1, "label": ""},
    "sweep": {"parameter": None, "values": []},
}

REQUIRED = (("model", "kind"), ("model", "K"), ("simulate", "theta_star"))


def _merge(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", path="")
    for key in raw:
        if key not in SECTIONS:
            raise ConfigError(f"unknown section {key!r}", path=key)
    out = copy.deepcopy(DEFAULTS)
    for section, values in raw.items():
        if not isinstance(values, dict):
            raise ConfigError("section must be an object", path=section)
        for key, value in values.items():
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r}", path=f"{section}.{key}")
            out[section][key] = value
    for section, key in REQUIRED:
        if out[section][key] is None:
            raise ConfigError("required value missing", path=f"{section}.{key}")
    return out


def _pair(value, path):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)):
        raise ConfigError("expected [min, max]", path=path)
    lo, hi = float(value[0]), float(value[1])
    if not 0 < lo <= hi:
        raise ConfigError("need 0 < min <= max", path=path)
    return lo, hi


class ExperimentConfig:
    """Validated view over the merged JSON document.

    ``raw`` keeps the fully defaulted document, which is what gets hashed
    into the manifest.
    """

    def __init__(self, raw):
        self.raw = _merge(raw)
        self._validate()

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}", path="") from exc
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", path="") from exc
        return cls(raw)

    def _validate(self):
        r = self.raw
        try:
            self.model = ParametricModel.from_dict(r["model"])
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), path="model") from exc

        sim = r["simulate"]
        theta_star = sim["theta_star"]
        if not isinstance(theta_star, list) or not theta_star:
            raise ConfigError("expected a non-empty list", path="simulate.theta_star")
        if len(theta_star) != self.model.n_params:
            raise ConfigError(f"model needs {self.model.n_params} values, got {len(theta_star)}",
                              path="simulate.theta_star")
        if any(not isinstance(v, (int, float)) or v < 0 for v in theta_star):
            raise ConfigError("rates must be nonnegative numbers", path="simulate.theta_star")
        self.theta_star = tuple(float(v) for v in theta_star)
        self.train_loads = _pair(sim["train_loads"], "simulate.train_loads")
        self.test_loads = _pair(sim["test_loads"], "simulate.test_loads")
        for key in ("n_windows", "n_test"):
            if not isinstance(sim[key], int) or sim[key] < 1:
                raise ConfigError("expected a positive integer", path=f"simulate.{key}")
        if not isinstance(sim["window_length"], (int, float)) or sim["window_length"] <= 0:
            raise ConfigError("expected a positive number", path="simulate.window_length")
        if not isinstance(sim["seed"], int):
            raise ConfigError("expected an integer", path="simulate.seed")

        obs = r["observe"]
        n = self.model.n_states
        states = obs["states"]
        if (not isinstance(states, list) or not states
                or any(not isinstance(s, int) or not 0 <= s < n for s in states)):
            raise ConfigError(f"expected a non-empty list of states in 0..{n - 1}",
                              path="observe.states")
        self.observed = tuple(sorted(set(states)))
        fail = obs["failure_states"]
        if fail is None:
            self.failure_states = self.model.failure_states
        elif (not isinstance(fail, list) or not fail
              or any(not isinstance(s, int) or not 0 <= s < n for s in fail)):
            raise ConfigError(f"expected a non-empty list of states in 0..{n - 1}",
                              path="observe.failure_states")
        else:
            self.failure_states = tuple(sorted(set(fail)))

        opt = dict(r["optimizer"])
        theta0 = opt.pop("theta0")
        if theta0 is not None and (not isinstance(theta0, list)
                                   or len(theta0) != self.model.n_params):
            raise ConfigError(f"expected a list of {self.model.n_params} numbers",
                              path="optimizer.theta0")
        self.theta0 = theta0
        try:
            self.optimizer = OptimizerConfig(slack=sim["slack"], **opt)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc), path="optimizer") from exc

        ev = r["evaluate"]
        if not isinstance(ev["replicates"], int) or ev["replicates"] < 1:
            raise ConfigError("expected a positive integer", path="evaluate.replicates")
        if not isinstance(ev["label"], str):
            raise ConfigError("expected a string", path="evaluate.label")

        sw = r["sweep"]
        if sw["parameter"] is not None:
            section, _, key = str(sw["parameter"]).partition(".")
            if section not in ("simulate", "observe", "optimizer") or key not in DEFAULTS.get(section, {}):
                raise ConfigError(f"cannot sweep {sw['parameter']!r}", path="sweep.parameter")
            if not isinstance(sw["values"], list) or not sw["values"]:
                raise ConfigError("expected a non-empty list", path="sweep.values")

    @property
    def label(self):
        return self.raw["evaluate"]["label"] or self.model.kind

    @property
    def replicates(self):
        return self.raw["evaluate"]["replicates"]

    def canonical(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self):
        """SHA-256 of the canonical, fully defaulted document."""
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def with_value(self, dotted, value):
        """Copy with one ``section.key`` replaced (used by sweeps and ``--seed``)."""
        raw = copy.deepcopy(self.raw)
        section, _, key = dotted.partition(".")
        if section not in raw or key not in raw[section]:
            raise ConfigError(f"unknown key {dotted!r}", path=dotted)
        raw[section][key] = value
        return ExperimentConfig(raw)

    def sweep_points(self):
        """``[(value, config)]`` for every sweep value; ``[(None, self)]`` without a sweep."""
        param = self.raw["sweep"]["parameter"]
        if param is None:
            return [(None, self)]
        return [(v, self.with_value(param, v)) for v in self.raw["sweep"]["values"]]


def load_config(path):
    return ExperimentConfig.from_file(path)


def bundled_config(name):
    """Path of a config shipped with the package, e.g. ``"mm1k_fast.json"``."""
    here = Path(__file__).resolve().parent.parent / "configs" / name
    if not here.is_file():
        raise ConfigError(f"no bundled config named {name!r}", path="")
    return here
