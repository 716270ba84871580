"""Run configuration: a JSON file declaring data, factors and estimator settings.

Example::

    {
      "seed": 7,
      "reference": {"path": "nih.csv", "site": "NIH"},
      "external": {"path": "shc.csv", "site": "SHC"},
      "schema": {"score": "prob", "label": "pneumothorax",
                 "columns": {"comorbidities": ["atel", "cardio"]}},
      "factors": [
        {"name": "sex", "kind": "categorical"},
        {"name": "age", "kind": "continuous-binned", "bins": 10},
        {"name": "comorbidities", "kind": "group", "members": ["atelectasis", "cardiomegaly"]}
      ],
      "missing_policy": "drop-row",
      "stopping": {"tolerance": 0.005, "max_iterations": 2000, "min_iterations": 30},
      "min_stratum": 5,
      "output": {"dir": "out", "name": "nih_on_shc", "formats": ["json", "csv"]}
    }

Relative paths resolve against the config file's directory. A site block may
carry its own ``schema`` that overrides the top-level one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .dataset import CONTINUOUS, FactorSpec, MISSING_POLICIES, ScoredDataset, Schema, bin_continuous, ingest
from .errors import ConfigError
from .shapley import SEEDING_MODES, StoppingRule

FORMATS = ("json", "csv", "svg")
DEFAULT_BINS = 10

_TOP_LEVEL = {
    "seed", "reference", "external", "schema", "factors", "missing_policy", "stopping",
    "min_stratum", "resample_reps", "bootstrap_replicates", "workers", "seeding", "output",
    "label", "drill_down",
}


@dataclass(frozen=True)
class SiteInput:
    path: Path
    site: str
    schema: Schema


@dataclass(frozen=True)
class RunConfig:
    seed: int
    reference: SiteInput
    external: SiteInput
    factors: tuple[FactorSpec, ...]
    bins: Mapping[str, int]
    missing_policy: str = "drop-row"
    stopping: StoppingRule = field(default_factory=StoppingRule)
    min_stratum: int = 5
    resample_reps: int = 1
    bootstrap_replicates: int = 1000
    workers: int = 1
    seeding: str = "permutation"
    output_dir: Path = Path(".")
    output_name: str = "report"
    formats: tuple[str, ...] = ("json", "csv")
    label: str | None = None
    drill_down: tuple[str, ...] = ()

    def resolved(self) -> dict:
        """Fully resolved config, embedded in every report."""
        return {
            "seed": self.seed,
            "reference": {"path": str(self.reference.path), "site": self.reference.site,
                          "schema": self.reference.schema.to_dict()},
            "external": {"path": str(self.external.path), "site": self.external.site,
                         "schema": self.external.schema.to_dict()},
            "factors": [
                {**f.to_dict(), **({"bins": self.bins[f.name]} if f.name in self.bins else {})}
                for f in self.factors
            ],
            "missing_policy": self.missing_policy,
            "stopping": asdict(self.stopping),
            "min_stratum": self.min_stratum,
            "resample_reps": self.resample_reps,
            "bootstrap_replicates": self.bootstrap_replicates,
            "workers": self.workers,
            "seeding": self.seeding,
            "output": {"dir": str(self.output_dir), "name": self.output_name, "formats": list(self.formats)},
            "label": self.label,
            "drill_down": list(self.drill_down),
        }


def _int(d: Mapping, key: str, default: int, minimum: int = 0) -> int:
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {v!r}")
    return v


def _site(d: Any, which: str, base: Path, schema: Schema) -> SiteInput:
    if isinstance(d, str):
        d = {"path": d}
    if not isinstance(d, Mapping) or "path" not in d:
        raise ConfigError(f"{which} must give a data 'path'")
    path = Path(d["path"])
    if not path.is_absolute():
        path = base / path
    site_schema = Schema.from_dict(d["schema"]) if "schema" in d else schema
    return SiteInput(path=path, site=str(d.get("site", which)), schema=site_schema)


def parse_config(data: Mapping[str, Any], base_dir: Path | str = ".", overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Validate a config mapping; ``overrides`` (CLI flags) win over file values."""
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    stopping = dict(data.get("stopping", {}))
    for key, field_name in (("tolerance", "tolerance"), ("max_iterations", "max_iterations")):
        if key in overrides:
            stopping[field_name] = overrides.pop(key)
    data.update(overrides)
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
    if data.get("seed") is None:
        raise ConfigError("seed is required")
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    base = Path(base_dir)
    schema = Schema.from_dict(data.get("schema"))
    for which in ("reference", "external"):
        if which not in data:
            raise ConfigError(f"{which} dataset is required")
    reference = _site(data["reference"], "reference", base, schema)
    external = _site(data["external"], "external", base, schema)

    raw_factors = data.get("factors")
    if not raw_factors:
        raise ConfigError("factors: at least one factor is required")
    factors, bins = [], {}
    for f in raw_factors:
        if not isinstance(f, Mapping):
            raise ConfigError("factors must be a list of objects")
        spec = FactorSpec.from_dict(f)
        if spec.kind == CONTINUOUS and spec.edges is None:
            b = f.get("bins", DEFAULT_BINS)
            if isinstance(b, bool) or not isinstance(b, int) or b < 2:
                raise ConfigError(f"factor {spec.name!r}: bins must be an integer >= 2")
            bins[spec.name] = b
        factors.append(spec)
    names = [f.name for f in factors]
    if len(set(names)) != len(names):
        raise ConfigError("factor names must be unique")

    missing = data.get("missing_policy", "drop-row")
    if missing not in MISSING_POLICIES:
        raise ConfigError(f"missing_policy must be one of {MISSING_POLICIES}")
    st = data.get("stopping", {})
    st = {**st, **stopping}
    unknown = set(st) - {"tolerance", "max_iterations", "min_iterations"}
    if unknown:
        raise ConfigError(f"stopping: unknown field(s) {sorted(unknown)}")
    try:
        rule = StoppingRule(**st)
    except TypeError as exc:
        raise ConfigError(f"stopping: {exc}") from None
    seeding = data.get("seeding", "permutation")
    if seeding not in SEEDING_MODES:
        raise ConfigError(f"seeding must be one of {SEEDING_MODES}")
    bootstrap = _int(data, "bootstrap_replicates", 1000)
    if 0 < bootstrap < 100:
        raise ConfigError("bootstrap_replicates must be 0 (disabled) or at least 100")

    out = data.get("output", {})
    formats = out.get("formats", ["json", "csv"])
    if isinstance(formats, str):
        formats = list(FORMATS) if formats == "all" else [formats]
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"output.formats: unknown format(s) {bad}; choose from {FORMATS} or 'all'")
    out_dir = Path(out.get("dir", "."))
    if not out_dir.is_absolute():
        out_dir = base / out_dir
    drill = data.get("drill_down", [])
    drill = [drill] if isinstance(drill, str) else list(drill)
    for g in drill:
        if g not in names:
            raise ConfigError(f"drill_down names unknown factor {g!r}")

    return RunConfig(
        seed=seed,
        reference=reference,
        external=external,
        factors=tuple(factors),
        bins=bins,
        missing_policy=missing,
        stopping=rule,
        min_stratum=_int(data, "min_stratum", 5),
        resample_reps=_int(data, "resample_reps", 1, minimum=1),
        bootstrap_replicates=bootstrap,
        workers=_int(data, "workers", 1, minimum=1),
        seeding=seeding,
        output_dir=out_dir,
        output_name=str(out.get("name", "report")),
        formats=tuple(dict.fromkeys(formats)),
        label=data.get("label"),
        drill_down=tuple(drill),
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_config(data, path.parent, overrides)


def load_datasets(config: RunConfig) -> tuple[ScoredDataset, ScoredDataset]:
    """Ingest both sites and bin continuous factors on the reference quantiles."""
    datasets = []
    for site in (config.reference, config.external):
        datasets.append(ingest(site.path, site.schema, config.factors, config.missing_policy, site=site.site))
    reference, external = datasets
    # categorical vocabularies inferred per file; share the union so codes agree
    for spec in config.factors:
        if spec.kind == "categorical" and spec.vocabulary is None:
            vocab = tuple(sorted(set(reference.spec(spec.name).vocabulary) | set(external.spec(spec.name).vocabulary)))
            reference = reference.with_spec(replace(reference.spec(spec.name), vocabulary=vocab))
            external = external.with_spec(replace(external.spec(spec.name), vocabulary=vocab))
    for name, count in config.bins.items():
        spec = bin_continuous(reference, name, count, reference=reference)
        reference = reference.with_spec(spec)
        external = external.with_spec(spec)
    return reference, external
