"""Scored datasets: ingestion, validation, binning and factor marginals.

A scored dataset holds, for one site, the model score and ground-truth label
of every record together with the values of the site factors ("players")
that the attribution will match on. Factor storage is columnar:

* categorical factors: ``int32`` codes into ``FactorSpec.vocabulary``
* continuous-binned factors: raw ``float64`` values; bins come from the
  spec's reference-anchored edges
* group factors: a boolean ``(n, len(members))`` flag matrix
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataValidationError

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
CONTINUOUS = "continuous-binned"
GROUP = "group"
KINDS = (CATEGORICAL, CONTINUOUS, GROUP)

MISSING_TOKEN = "<missing>"
MISSING_POLICIES = ("drop-row", "own-category")

_TRUE = {"1", "1.0", "true", "yes"}
_FALSE = {"0", "0.0", "false", "no"}


@dataclass(frozen=True)
class FactorSpec:
    """Declaration of one site factor.

    ``edges`` are interior bin boundaries: a value ``v`` falls in bin
    ``#{e in edges : e <= v}``, so there are ``len(edges) + 1`` bins with
    unbounded outer bins. ``edges=None`` on a continuous factor means it has
    not been binned yet.
    """

    name: str
    kind: str = CATEGORICAL
    vocabulary: tuple[str, ...] | None = None
    edges: tuple[float, ...] | None = None
    members: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ConfigError("factor name must be a non-empty string")
        if self.kind not in KINDS:
            raise ConfigError(f"factor {self.name!r}: unknown kind {self.kind!r}; expected one of {KINDS}")
        if self.vocabulary is not None:
            vocab = tuple(str(v) for v in self.vocabulary)
            if len(set(vocab)) != len(vocab):
                raise ConfigError(f"factor {self.name!r}: duplicate vocabulary tokens")
            object.__setattr__(self, "vocabulary", vocab)
        if self.kind == CONTINUOUS:
            if self.edges is not None:
                edges = tuple(float(e) for e in self.edges)
                if any(not math.isfinite(e) for e in edges):
                    raise ConfigError(f"factor {self.name!r}: bin edges must be finite")
                if any(b <= a for a, b in zip(edges, edges[1:])):
                    raise ConfigError(f"factor {self.name!r}: bin edges must be strictly increasing")
                object.__setattr__(self, "edges", edges)
        elif self.edges is not None:
            raise ConfigError(f"factor {self.name!r}: edges are only valid for {CONTINUOUS} factors")
        if self.kind == GROUP:
            members = tuple(str(m) for m in (self.members or ()))
            if not members:
                raise ConfigError(f"group factor {self.name!r} needs at least one member")
            if len(set(members)) != len(members):
                raise ConfigError(f"group factor {self.name!r}: duplicate members")
            object.__setattr__(self, "members", members)
            object.__setattr__(self, "vocabulary", members)
        elif self.members is not None:
            raise ConfigError(f"factor {self.name!r}: members are only valid for group factors")

    @property
    def n_bins(self) -> int:
        if self.kind != CONTINUOUS:
            raise ConfigError(f"factor {self.name!r} is not continuous")
        if self.edges is None:
            raise ConfigError(f"factor {self.name!r} has not been binned")
        return len(self.edges) + 1

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.kind == GROUP:
            out["members"] = list(self.members)
        elif self.vocabulary is not None:
            out["vocabulary"] = list(self.vocabulary)
        if self.edges is not None:
            out["edges"] = list(self.edges)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FactorSpec":
        unknown = set(d) - {"name", "kind", "vocabulary", "edges", "members", "bins"}
        if unknown:
            raise ConfigError(f"factor {d.get('name')!r}: unknown fields {sorted(unknown)}")
        if "name" not in d:
            raise ConfigError("factor declaration is missing 'name'")
        vocab = d.get("vocabulary")
        edges = d.get("edges")
        members = d.get("members")
        return cls(
            name=d["name"],
            kind=d.get("kind", CATEGORICAL),
            vocabulary=tuple(vocab) if vocab is not None else None,
            edges=tuple(edges) if edges is not None else None,
            members=tuple(members) if members is not None else None,
        )


@dataclass(frozen=True)
class ScoredRecord:
    """Row view: score, label and factor values.

    Factor values are a token (categorical), a bin index (continuous, once
    binned; the raw float otherwise) or a frozenset of flagged members (group).
    """

    score: float
    label: int
    factors: dict[str, Any]


@dataclass(frozen=True)
class Schema:
    """Column mapping from a file to the dataset fields.

    ``columns`` maps factor name to a column name (or, for group factors, to
    a list of flag columns in member order). Unmapped factors default to a
    column with the factor's own name; unmapped groups to one column per
    member name.
    """

    score: str = "score"
    label: str = "label"
    columns: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any] | None) -> "Schema":
        if d is None:
            return cls()
        if isinstance(d, Schema):
            return d
        unknown = set(d) - {"score", "label", "columns"}
        if unknown:
            raise ConfigError(f"schema: unknown fields {sorted(unknown)}")
        return cls(score=d.get("score", "score"), label=d.get("label", "label"), columns=dict(d.get("columns", {})))

    def factor_columns(self, spec: FactorSpec) -> list[str]:
        col = self.columns.get(spec.name)
        if spec.kind == GROUP:
            if col is None:
                return list(spec.members)
            if isinstance(col, str) or len(col) != len(spec.members):
                raise ConfigError(
                    f"schema for group {spec.name!r} must list {len(spec.members)} flag columns"
                )
            return list(col)
        if col is None:
            return [spec.name]
        if not isinstance(col, str):
            raise ConfigError(f"schema for factor {spec.name!r} must be a single column name")
        return [col]

    def to_dict(self) -> dict:
        return {"score": self.score, "label": self.label, "columns": dict(self.columns)}


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScoredDataset:
    """Immutable, validated scored records for one site."""

    site: str
    scores: np.ndarray
    labels: np.ndarray
    specs: tuple[FactorSpec, ...]
    columns: Mapping[str, np.ndarray]
    diagnostics: tuple[str, ...] = ()

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if scores.ndim != 1 or labels.shape != scores.shape:
            raise DataValidationError("scores and labels must be 1-d arrays of equal length")
        n = len(scores)
        if n == 0:
            raise DataValidationError(f"site {self.site!r}: dataset is empty")
        if not np.all(np.isfinite(scores)) or scores.min() < 0 or scores.max() > 1:
            raise DataValidationError(f"site {self.site!r}: scores must be finite and in [0, 1]")
        if not np.all((labels == 0) | (labels == 1)):
            raise DataValidationError(f"site {self.site!r}: labels must be 0 or 1")
        labels = labels.astype(np.int8)
        n_pos = int(labels.sum())
        if n_pos == 0 or n_pos == n:
            raise DataValidationError(
                f"site {self.site!r}: labels contain a single class; AUC is undefined"
            )
        specs = tuple(self.specs)
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise DataValidationError("factor names must be unique")
        cols = {}
        for spec in specs:
            if spec.name not in self.columns:
                raise DataValidationError(f"missing column data for factor {spec.name!r}")
            cols[spec.name] = _readonly(_check_column(spec, np.asarray(self.columns[spec.name]), n))
        object.__setattr__(self, "scores", _readonly(scores))
        object.__setattr__(self, "labels", _readonly(labels))
        object.__setattr__(self, "specs", specs)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def factor_names(self) -> list[str]:
        return [s.name for s in self.specs]

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos

    def spec(self, name: str) -> FactorSpec:
        for s in self.specs:
            if s.name == name:
                return s
        raise ConfigError(f"unknown factor {name!r}; known factors: {self.factor_names}")

    def strata(self, name: str, member: str | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
        """Integer stratum codes for one matching variable plus their tokens.

        Group factors are matched member by member, so ``member`` selects one
        flag (tokens ``("0", "1")``).
        """
        spec = self.spec(name)
        col = self.columns[name]
        if spec.kind == CATEGORICAL:
            if member is not None:
                raise ConfigError(f"factor {name!r} is not a group")
            return col.astype(np.int64), spec.vocabulary
        if spec.kind == CONTINUOUS:
            if member is not None:
                raise ConfigError(f"factor {name!r} is not a group")
            if spec.edges is None:
                raise ConfigError(f"continuous factor {name!r} must be binned before matching")
            codes = np.searchsorted(np.asarray(spec.edges, dtype=float), col, side="right")
            return codes.astype(np.int64), tuple(str(i) for i in range(spec.n_bins))
        if member is None:
            raise ConfigError(f"group factor {name!r} is matched per member; pass member=")
        try:
            j = spec.members.index(member)
        except ValueError:
            raise ConfigError(f"group {name!r} has no member {member!r}") from None
        return col[:, j].astype(np.int64), ("0", "1")

    def factor_value(self, name: str, i: int):
        spec = self.spec(name)
        col = self.columns[name]
        if spec.kind == CATEGORICAL:
            return spec.vocabulary[col[i]]
        if spec.kind == CONTINUOUS:
            if spec.edges is None:
                return float(col[i])
            return int(np.searchsorted(np.asarray(spec.edges), col[i], side="right"))
        return frozenset(m for m, f in zip(spec.members, col[i]) if f)

    def record(self, i: int) -> ScoredRecord:
        return ScoredRecord(
            score=float(self.scores[i]),
            label=int(self.labels[i]),
            factors={s.name: self.factor_value(s.name, i) for s in self.specs},
        )

    @property
    def records(self) -> list[ScoredRecord]:
        return [self.record(i) for i in range(len(self))]

    def with_spec(self, spec: FactorSpec) -> "ScoredDataset":
        """Copy with one factor's spec replaced (e.g. after binning)."""
        old = self.spec(spec.name)
        if old.kind != spec.kind:
            raise ConfigError(f"cannot change kind of factor {spec.name!r}")
        specs = tuple(spec if s.name == spec.name else s for s in self.specs)
        columns = dict(self.columns)
        if spec.kind == CATEGORICAL and spec.vocabulary != old.vocabulary:
            lookup = {tok: i for i, tok in enumerate(spec.vocabulary)}
            try:
                columns[spec.name] = np.array([lookup[old.vocabulary[c]] for c in columns[spec.name]], dtype=np.int32)
            except KeyError as exc:
                raise DataValidationError(f"factor {spec.name!r}: value {exc.args[0]!r} missing from new vocabulary") from None
        if spec.kind == GROUP and spec.members != old.members:
            raise ConfigError(f"cannot change members of group {spec.name!r}")
        return replace(self, specs=specs, columns=columns)

    def subset(self, indices: Sequence[int] | np.ndarray, site: str | None = None) -> "ScoredDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ScoredDataset(
            site=site or self.site,
            scores=self.scores[idx],
            labels=self.labels[idx],
            specs=self.specs,
            columns={k: v[idx] for k, v in self.columns.items()},
        )


def _check_column(spec: FactorSpec, col: np.ndarray, n: int) -> np.ndarray:
    if spec.kind == GROUP:
        if col.shape != (n, len(spec.members)):
            raise DataValidationError(f"group {spec.name!r}: flag matrix must have shape ({n}, {len(spec.members)})")
        return col.astype(bool)
    if col.shape != (n,):
        raise DataValidationError(f"factor {spec.name!r}: column length does not match records")
    if spec.kind == CATEGORICAL:
        if spec.vocabulary is None:
            raise DataValidationError(f"factor {spec.name!r}: categorical factor needs a vocabulary")
        col = col.astype(np.int32)
        if len(col) and (col.min() < 0 or col.max() >= len(spec.vocabulary)):
            raise DataValidationError(f"factor {spec.name!r}: codes outside vocabulary")
        return col
    col = col.astype(np.float64)
    if not np.all(np.isfinite(col)):
        raise DataValidationError(f"factor {spec.name!r}: continuous values must be finite")
    return col


# -- ingestion ---------------------------------------------------------------


def _read_rows(path: Path) -> tuple[list[str], list[dict[str, Any]]]:
    suffix = path.suffix.lower()
    try:
        if suffix in (".jsonl", ".ndjson", ".json"):
            rows = []
            with path.open(encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise DataValidationError(f"{path}: invalid JSON on line {lineno}: {exc.msg}") from None
                    if not isinstance(obj, dict):
                        raise DataValidationError(f"{path}: line {lineno} is not a JSON object")
                    rows.append(obj)
            header: list[str] = []
            for r in rows:
                header.extend(k for k in r if k not in header)
            return header, rows
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            return list(reader.fieldnames or []), rows
    except OSError as exc:
        raise DataValidationError(f"cannot read {path}: {exc.strerror or exc}") from None
    except UnicodeDecodeError:
        raise DataValidationError(f"cannot read {path}: not UTF-8 text") from None


_MISSING_STRINGS = {"", "na", "n/a", "nan", "null", "none"}


def _is_missing(v) -> bool:
    if v is None:
        return True
    if isinstance(v, str):
        return v.strip().lower() in _MISSING_STRINGS
    return isinstance(v, float) and math.isnan(v)


def _parse_flag(v) -> bool | None:
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, float)) and v in (0, 1):
        return bool(v)
    s = str(v).strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    return None


def ingest(
    path: str | Path,
    schema: Schema | Mapping[str, Any] | None = None,
    specs: Sequence[FactorSpec] = (),
    missing_policy: str = "drop-row",
    site: str | None = None,
) -> ScoredDataset:
    """Read a CSV or JSON-lines file into a validated :class:`ScoredDataset`.

    Rows with an invalid score or label are rejected and reported in
    ``dataset.diagnostics`` as ``"<problem> at row k"`` (k counts data rows
    from 1). Missing factor values either drop the row or become the
    ``<missing>`` category, per ``missing_policy``. Continuous factors have no
    bin for a missing value, so such rows are always dropped.
    """
    path = Path(path)
    schema = Schema.from_dict(schema) if not isinstance(schema, Schema) else schema
    if missing_policy not in MISSING_POLICIES:
        raise ConfigError(f"missing_policy must be one of {MISSING_POLICIES}, got {missing_policy!r}")
    specs = list(specs)
    header, rows = _read_rows(path)
    needed = {schema.score: "score", schema.label: "label"}
    fcols = {}
    for spec in specs:
        fcols[spec.name] = schema.factor_columns(spec)
        for c in fcols[spec.name]:
            needed[c] = spec.name
    unknown = [c for c in needed if c not in header]
    if unknown:
        raise DataValidationError(f"{path}: unknown column(s) {unknown}; file has {header}")

    diagnostics: list[str] = []
    scores: list[float] = []
    labels: list[int] = []
    raw: dict[str, list] = {s.name: [] for s in specs}
    own = missing_policy == "own-category"

    for k, row in enumerate(rows, start=1):
        problem = None
        try:
            s = float(row.get(schema.score))
        except (TypeError, ValueError):
            problem = f"score not a number at row {k}"
        else:
            if math.isnan(s):
                problem = f"score not a number at row {k}"
            elif not math.isfinite(s) or s < 0.0 or s > 1.0:
                problem = f"score out of [0,1] at row {k}"
        if problem is None:
            y = _parse_flag(row.get(schema.label))
            if y is None:
                problem = f"label not in {{0,1}} at row {k}"
        values = {}
        if problem is None:
            for spec in specs:
                cols = fcols[spec.name]
                if spec.kind == GROUP:
                    flags = []
                    for m, c in zip(spec.members, cols):
                        v = row.get(c)
                        if _is_missing(v):
                            if not own:
                                problem = f"missing value for {spec.name}.{m} at row {k}"
                                break
                            flags.append(False)
                            continue
                        f = _parse_flag(v)
                        if f is None:
                            problem = f"flag {c!r} not in {{0,1}} at row {k}"
                            break
                        flags.append(f)
                    values[spec.name] = flags
                elif spec.kind == CONTINUOUS:
                    v = row.get(cols[0])
                    x = float("nan")
                    if not _is_missing(v):
                        try:
                            x = float(v)
                        except (TypeError, ValueError):
                            problem = f"factor {spec.name!r} not a number at row {k}"
                    if problem is None and not math.isfinite(x):
                        problem = f"missing value for {spec.name} at row {k}"
                    values[spec.name] = x
                else:
                    v = row.get(cols[0])
                    if _is_missing(v):
                        if not own:
                            problem = f"missing value for {spec.name} at row {k}"
                        v = MISSING_TOKEN
                    else:
                        v = str(v).strip()
                        if spec.vocabulary is not None and v not in spec.vocabulary:
                            problem = f"value {v!r} not in vocabulary of {spec.name} at row {k}"
                    values[spec.name] = v
                if problem is not None:
                    break
        if problem is not None:
            diagnostics.append(problem)
            continue
        scores.append(s)
        labels.append(int(y))
        for name, v in values.items():
            raw[name].append(v)

    for d in diagnostics:
        logger.warning("%s: %s", path.name, d)
    if not scores:
        raise DataValidationError(f"{path}: zero rows survived validation" + (f" (first problem: {diagnostics[0]})" if diagnostics else ""))
    if len(set(labels)) < 2:
        raise DataValidationError(f"{path}: label column has a single class; AUC is undefined")

    final_specs = []
    columns = {}
    for spec in specs:
        vals = raw[spec.name]
        if spec.kind == CATEGORICAL:
            vocab = spec.vocabulary
            if vocab is None:
                vocab = tuple(sorted(set(vals)))
            elif MISSING_TOKEN in vals and MISSING_TOKEN not in vocab:
                vocab = vocab + (MISSING_TOKEN,)
            spec = replace(spec, vocabulary=vocab)
            lookup = {t: i for i, t in enumerate(vocab)}
            columns[spec.name] = np.array([lookup[v] for v in vals], dtype=np.int32)
        elif spec.kind == CONTINUOUS:
            columns[spec.name] = np.array(vals, dtype=np.float64)
        else:
            columns[spec.name] = np.array(vals, dtype=bool).reshape(len(vals), len(spec.members))
        final_specs.append(spec)

    return ScoredDataset(
        site=site or path.stem,
        scores=np.array(scores, dtype=np.float64),
        labels=np.array(labels, dtype=np.int8),
        specs=tuple(final_specs),
        columns=columns,
        diagnostics=tuple(diagnostics),
    )


def write_dataset(dataset: ScoredDataset, path: str | Path, fmt: str | None = None) -> Path:
    """Write the canonical on-disk form (CSV, or JSON lines for ``.jsonl``).

    Floats use 17 significant digits so re-ingesting is bit-exact. Group
    factors become one 0/1 column per member.
    """
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix.lower() in (".jsonl", ".ndjson") else "csv")
    header = ["score", "label"]
    for spec in dataset.specs:
        header.extend(spec.members if spec.kind == GROUP else [spec.name])

    def cells(i: int) -> list:
        out: list[Any] = [format(dataset.scores[i], ".17g"), int(dataset.labels[i])]
        for spec in dataset.specs:
            col = dataset.columns[spec.name]
            if spec.kind == GROUP:
                out.extend(int(f) for f in col[i])
            elif spec.kind == CONTINUOUS:
                out.append(format(col[i], ".17g"))
            else:
                out.append(spec.vocabulary[col[i]])
        return out

    if fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i in range(len(dataset)):
                w.writerow(cells(i))
    elif fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for i in range(len(dataset)):
                row = dict(zip(header, cells(i)))
                row["score"] = float(dataset.scores[i])
                for spec in dataset.specs:
                    if spec.kind == CONTINUOUS:
                        row[spec.name] = float(dataset.columns[spec.name][i])
                fh.write(json.dumps(row) + "\n")
    else:
        raise ConfigError(f"unknown dataset format {fmt!r}")
    return path


# -- binning and marginals ----------------------------------------------------


def bin_continuous(
    dataset: ScoredDataset,
    factor: str,
    bin_count: int = 10,
    reference: ScoredDataset | None = None,
) -> FactorSpec:
    """Equal-frequency bins for a continuous factor, anchored on ``reference``.

    Edges are the reference quantiles at ``k / bin_count``. Edges that would
    leave a reference bin empty are dropped, so a factor with fewer distinct
    values than bins degrades to fewer bins (with a warning). Apply the result
    to every dataset with :meth:`ScoredDataset.with_spec`.
    """
    if bin_count < 2:
        raise ConfigError(f"bin_count must be at least 2, got {bin_count}")
    spec = dataset.spec(factor)
    if spec.kind != CONTINUOUS:
        raise ConfigError(f"factor {factor!r} is {spec.kind}, not {CONTINUOUS}")
    reference = dataset if reference is None else reference
    ref_spec = reference.spec(factor)
    if ref_spec.kind != CONTINUOUS:
        raise ConfigError(f"factor {factor!r} is not continuous in the reference dataset")
    values = np.asarray(reference.columns[factor], dtype=float)
    qs = np.quantile(values, np.arange(1, bin_count) / bin_count)
    lo, hi = values.min(), values.max()
    edges = [float(e) for e in np.unique(qs) if lo < e <= hi]
    if len(edges) + 1 < bin_count:
        warnings.warn(
            f"factor {factor!r}: only {len(edges) + 1} distinct bin(s) possible, {bin_count} requested",
            stacklevel=2,
        )
    return replace(spec, edges=tuple(edges))


def marginal(dataset: ScoredDataset, factor: str) -> dict:
    """Observed distribution of one factor.

    Categorical factors map token to proportion, binned factors map bin index
    to proportion; group factors map each member to the fraction of records
    carrying that flag (one Bernoulli per member).
    """
    spec = dataset.spec(factor)
    n = len(dataset)
    col = dataset.columns[factor]
    if spec.kind == GROUP:
        return {m: float(col[:, j].sum()) / n for j, m in enumerate(spec.members)}
    codes, tokens = dataset.strata(factor)
    counts = np.bincount(codes, minlength=len(tokens))
    keys: Iterable = tokens if spec.kind == CATEGORICAL else range(len(tokens))
    return {k: c / n for k, c in zip(keys, counts.tolist()) if c > 0}


def check_compatible(reference: ScoredDataset, external: ScoredDataset, factors: Sequence[str]) -> None:
    """Both datasets must declare the named factors identically enough to match."""
    for name in factors:
        a, b = reference.spec(name), external.spec(name)
        if a.kind != b.kind:
            raise ConfigError(f"factor {name!r} is {a.kind} in reference but {b.kind} in external")
        if a.kind == CONTINUOUS and a.edges != b.edges:
            raise ConfigError(f"factor {name!r}: bin edges differ between datasets; bin both from the reference")
        if a.kind == GROUP and a.members != b.members:
            raise ConfigError(f"group {name!r}: members differ between datasets")
