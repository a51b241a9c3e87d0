"""Plain-text dataset files.

A file starts with ``#`` header lines naming the model, the true rates (when
the data is synthetic), the observed states and the seed, followed by one
line per window::

    # model: {"K": 20, "kind": "MM1K"}
    # theta_star: 25.0
    # observed: 0 1
    # seed: 0
    0 12.7481203 0:31 1:12
    1 14.0203114 0:27 1:15

Loads are written with ``repr`` so a read-back reproduces them exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..likelihood import ObservationWindow
from ..models import ParametricModel


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    model: ParametricModel
    windows: list
    observed: tuple
    theta_star: tuple | None = None
    seed: int | None = None


def format_dataset(ds: Dataset):
    lines = [
        "# model: " + json.dumps(ds.model.to_dict(), sort_keys=True),
        "# theta_star: " + ("none" if ds.theta_star is None
                            else " ".join(repr(float(v)) for v in ds.theta_star)),
        "# observed: " + " ".join(str(s) for s in ds.observed),
        "# seed: " + ("none" if ds.seed is None else str(ds.seed)),
    ]
    for i, w in enumerate(ds.windows):
        pairs = " ".join(f"{s}:{w.counts.get(s, 0)}" for s in ds.observed)
        lines.append(f"{i} {float(w.x)!r} {pairs}".rstrip())
    return "\n".join(lines) + "\n"


def write_dataset(path, ds: Dataset):
    Path(path).write_text(format_dataset(ds), encoding="utf-8")


def parse_dataset(text):
    header = {}
    windows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if not sep:
                raise DatasetFormatError(f"line {lineno}: header needs 'key: value'")
            header[key.strip()] = value.strip()
            continue
        fields = line.split()
        if len(fields) < 2:
            raise DatasetFormatError(f"line {lineno}: expected 'window_id x state:count ...'")
        try:
            wid = int(fields[0])
            x = float(fields[1])
            counts = {}
            for pair in fields[2:]:
                s, c = pair.split(":")
                counts[int(s)] = int(c)
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from exc
        if wid != len(windows):
            raise DatasetFormatError(f"line {lineno}: window ids must run 0, 1, 2, ...")
        windows.append(ObservationWindow(x, counts))

    for key in ("model", "observed"):
        if key not in header:
            raise DatasetFormatError(f"missing '# {key}:' header")
    try:
        model = ParametricModel.from_dict(json.loads(header["model"]))
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"bad model header: {exc}") from exc
    observed = tuple(int(s) for s in header["observed"].split())
    ts = header.get("theta_star", "none")
    theta_star = None if ts == "none" else tuple(float(v) for v in ts.split())
    seed = header.get("seed", "none")
    seed = None if seed == "none" else int(seed)
    for i, w in enumerate(windows):
        extra = set(w.counts) - set(observed)
        if extra:
            raise DatasetFormatError(f"window {i}: counts for unobserved states {sorted(extra)}")
    return Dataset(model=model, windows=windows, observed=observed,
                   theta_star=theta_star, seed=seed)


def read_dataset(path):
    return parse_dataset(Path(path).read_text(encoding="utf-8"))
