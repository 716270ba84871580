from __future__ import annotations

import json

import numpy as np
import pytest

from siteshap.config import load_config, load_datasets, parse_config
from siteshap.errors import ConfigError


def write_site(path, ages, views, seed):
    rng = np.random.default_rng(seed)
    lines = ["prob,y,age,view"]
    for i, (a, v) in enumerate(zip(ages, views)):
        lines.append(f"{rng.random():.6f},{i % 2},{a},{v}")
    path.write_text("\n".join(lines) + "\n")


BASE = {
    "seed": 3,
    "reference": {"path": "r.csv", "site": "R"},
    "external": {"path": "e.csv", "site": "E"},
    "schema": {"score": "prob", "label": "y"},
    "factors": [{"name": "age", "kind": "continuous-binned", "bins": 4}, {"name": "view"}],
}


def test_binning_and_vocabulary_union(tmp_path):
    write_site(tmp_path / "r.csv", range(20, 100), ["AP", "PA"] * 40, 0)
    write_site(tmp_path / "e.csv", range(0, 80), ["PA", "LL"] * 40, 1)
    (tmp_path / "c.json").write_text(json.dumps(BASE))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.reference.path == tmp_path / "r.csv"
    assert cfg.bins == {"age": 4}
    ref, ext = load_datasets(cfg)
    assert ref.spec("age").edges == ext.spec("age").edges
    assert len(ref.spec("age").edges) == 3
    assert ref.spec("view").vocabulary == ext.spec("view").vocabulary == ("AP", "LL", "PA")
    resolved = cfg.resolved()
    assert resolved["factors"][0]["bins"] == 4 and resolved["seed"] == 3


def test_overrides_win():
    cfg = parse_config(BASE, overrides={"seed": 9, "tolerance": 0.01, "max_iterations": 50, "min_stratum": 2})
    assert (cfg.seed, cfg.stopping.tolerance, cfg.stopping.max_iterations, cfg.min_stratum) == (9, 0.01, 50, 2)


@pytest.mark.parametrize("change, message", [
    ({"seed": None}, "seed is required"),
    ({"seed": -1}, "non-negative"),
    ({"factors": []}, "at least one factor"),
    ({"factors": [{"name": "v"}, {"name": "v"}]}, "unique"),
    ({"missing_policy": "guess"}, "missing_policy"),
    ({"stopping": {"tolerence": 1}}, "unknown"),
    ({"seeding": "random"}, "seeding"),
    ({"bootstrap_replicates": 10}, "bootstrap_replicates"),
    ({"output": {"formats": ["pdf"]}}, "formats"),
    ({"drill_down": "nope"}, "drill_down"),
    ({"factors": [{"name": "age", "kind": "continuous-binned", "bins": 1}]}, "bins"),
    ({"factors": [{"name": "c", "kind": "weird"}]}, "kind"),
])
def test_config_errors(change, message):
    with pytest.raises(ConfigError, match=message):
        parse_config({**BASE, **change})


def test_formats_all():
    cfg = parse_config({**BASE, "output": {"formats": "all"}})
    assert cfg.formats == ("json", "csv", "svg")


def test_invalid_json(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(tmp_path / "c.json")
