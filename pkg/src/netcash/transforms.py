"""Feature transforms with strict fit-on-train semantics.

A chain is a tuple of transform specs applied left to right. ``fit_chain``
learns every parameter from the training table alone; ``apply_chain`` is
row-local given those parameters, so the order or content of any other row
never changes an output row. The target column is never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import data as D
from .errors import ValidationError

MAX_CATEGORIES = 64
GLOBAL = "global"
PER_GROUP = "per_group"


# --- specs ---------------------------------------------------------------

@dataclass(frozen=True)
class DropColumns:
    names: tuple

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))

    def describe(self) -> str:
        return f"drop({','.join(self.names)})"


@dataclass(frozen=True)
class Impute:
    columns: tuple
    strategy: str = "mean"

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.strategy not in ("mean", "mode"):
            raise ValidationError(f"unknown impute strategy {self.strategy!r}")

    def describe(self) -> str:
        return f"impute[{self.strategy}]({','.join(self.columns)})"


@dataclass(frozen=True)
class OneHot:
    column: str
    max_categories: int = MAX_CATEGORIES

    def describe(self) -> str:
        return f"onehot({self.column})"


@dataclass(frozen=True)
class Standardize:
    """Empty ``columns`` means every numeric feature column present at fit time."""

    columns: tuple = ()
    scope: str = GLOBAL

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        if self.scope not in (GLOBAL, PER_GROUP):
            raise ValidationError(f"unknown standardize scope {self.scope!r}")

    def describe(self) -> str:
        cols = ",".join(self.columns) if self.columns else "*"
        return f"standardize[{self.scope}]({cols})"


@dataclass(frozen=True)
class GroupSize:
    key: str

    @property
    def output(self) -> str:
        return f"{self.key}_size"

    def describe(self) -> str:
        return f"groupsize({self.key})"


@dataclass(frozen=True)
class GroupAggregate:
    entity_key: str
    source: str
    stats: tuple = ("mean", "std", "count")

    def __post_init__(self):
        object.__setattr__(self, "stats", tuple(self.stats))
        bad = set(self.stats) - {"mean", "std", "count"}
        if bad or not self.stats:
            raise ValidationError(f"GroupAggregate stats must be a non-empty subset of mean/std/count, got {self.stats}")

    def outputs(self) -> list[str]:
        return [f"{self.source}_by_{self.entity_key}_{s}" for s in self.stats]

    def describe(self) -> str:
        return f"aggregate({self.source} by {self.entity_key}: {','.join(self.stats)})"


SPEC_TYPES = {cls.__name__: cls for cls in (DropColumns, Impute, OneHot, Standardize, GroupSize, GroupAggregate)}


def kind(spec) -> str:
    return type(spec).__name__


def spec_to_dict(spec) -> dict:
    out = {"kind": kind(spec)}
    for k, v in spec.__dict__.items():
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def spec_from_dict(d: dict):
    d = dict(d)
    cls = SPEC_TYPES[d.pop("kind")]
    return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def chain_to_dict(chain) -> list[dict]:
    return [spec_to_dict(s) for s in chain]


def chain_from_dict(items) -> tuple:
    return tuple(spec_from_dict(i) for i in items)


def describe_chain(chain) -> str:
    return " > ".join(s.describe() for s in chain) or "identity"


# --- fitting ---------------------------------------------------------------

def _require(table: D.Table, name: str, what: str):
    if name not in table.schema:
        raise ValidationError(f"{what}: missing required column {name!r}")
    if name == table.schema.target.name:
        raise ValidationError(f"{what}: may not operate on the target column {name!r}")
    return table.schema[name]


def _numeric_features(table: D.Table) -> list[str]:
    return [c.name for c in table.schema.columns if c.role == D.FEATURE and c.dtype == D.NUMERIC]


def _mode(values) -> str | None:
    counts: dict = {}
    for v in values:
        if v is not None:
            counts[v] = counts.get(v, 0) + 1
    if not counts:
        return None
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def _pop_stats(x: np.ndarray) -> tuple[float, float]:
    x = x[~np.isnan(x)]
    if x.size == 0:
        return 0.0, 0.0
    return float(x.mean()), float(x.std())


@dataclass
class FittedStep:
    spec: object
    params: dict
    flags: list = field(default_factory=list)

    def apply(self, table: D.Table) -> tuple[D.Table, list[str]]:
        return _APPLY[kind(self.spec)](self.spec, self.params, table)

    def to_dict(self) -> dict:
        return {"spec": spec_to_dict(self.spec), "params": _jsonable(self.params), "flags": list(self.flags)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _fit_drop(spec: DropColumns, table):
    for n in spec.names:
        _require(table, n, "DropColumns")
    return {}, []


def _fit_impute(spec: Impute, table):
    fills, flags = {}, []
    for n in spec.columns:
        col = _require(table, n, "Impute")
        values = table.column(n)
        if spec.strategy == "mean":
            if col.dtype != D.NUMERIC:
                raise ValidationError(f"Impute[mean] needs a numeric column, {n!r} is {col.dtype}")
            mean, _ = _pop_stats(values)
            if np.isnan(values).all():
                flags.append(f"{n}: no observed values, filled with 0")
            fills[n] = mean
        else:
            if col.is_float:
                raise ValidationError(f"Impute[mode] needs a categorical column, {n!r} is {col.dtype}")
            m = _mode(values)
            if m is None:
                flags.append(f"{n}: no observed values, filled with '__missing__'")
                m = "__missing__"
            fills[n] = m
    return {"fill": fills}, flags


def _fit_onehot(spec: OneHot, table):
    col = _require(table, spec.column, "OneHot")
    if col.dtype not in (D.CATEGORICAL, D.IDENTIFIER):
        raise ValidationError(f"OneHot needs a categorical column, {spec.column!r} is {col.dtype}")
    vocab = sorted({v for v in table.column(spec.column) if v is not None})
    if len(vocab) > spec.max_categories:
        raise ValidationError(
            f"OneHot({spec.column}): {len(vocab)} categories exceeds max_categories={spec.max_categories}"
        )
    return {"vocab": vocab}, []


def _fit_standardize(spec: Standardize, table):
    columns = list(spec.columns) or _numeric_features(table)
    flags = []
    for n in columns:
        col = _require(table, n, "Standardize")
        if col.dtype != D.NUMERIC:
            raise ValidationError(f"Standardize needs numeric columns, {n!r} is {col.dtype}")
    glob = {}
    for n in columns:
        mean, std = _pop_stats(table.column(n))
        if std == 0:
            flags.append(f"{n}: zero variance, std stored as 1")
            std = 1.0
        glob[n] = [mean, std]
    params = {"columns": columns, "global": glob}
    if spec.scope == PER_GROUP:
        key = table.schema.group_key
        if key is None:
            raise ValidationError("Standardize[per_group] needs a group_key column")
        groups: dict = {}
        keys = table.column(key)
        for g in dict.fromkeys(keys):
            mask = keys == g
            stats = {}
            for n in columns:
                mean, std = _pop_stats(table.column(n)[mask])
                if std == 0:
                    flags.append(f"{n}@{g}: zero variance, std stored as 1")
                    std = 1.0
                stats[n] = [mean, std]
            groups[g] = stats
        params["key"] = key
        params["groups"] = groups
    return params, flags


def _fit_groupsize(spec: GroupSize, table):
    col = _require(table, spec.key, "GroupSize")
    if col.is_float:
        raise ValidationError(f"GroupSize needs a categorical key, {spec.key!r} is {col.dtype}")
    counts: dict = {}
    for v in table.column(spec.key):
        counts[v] = counts.get(v, 0) + 1
    return {"counts": counts}, []


def _fit_aggregate(spec: GroupAggregate, table):
    _require(table, spec.entity_key, "GroupAggregate")
    src = _require(table, spec.source, "GroupAggregate")
    if src.dtype != D.NUMERIC:
        raise ValidationError(f"GroupAggregate source must be numeric, {spec.source!r} is {src.dtype}")
    keys = table.column(spec.entity_key)
    x = table.column(spec.source)
    per: dict = {}
    for g in dict.fromkeys(keys):
        vals = x[keys == g]
        mean, std = _pop_stats(vals)
        per[g] = {"mean": mean, "std": std, "count": float((~np.isnan(vals)).sum())}
    mean, std = _pop_stats(x)
    return {"entities": per, "fallback": {"mean": mean, "std": std, "count": 0.0}}, []


_FIT = {
    "DropColumns": _fit_drop, "Impute": _fit_impute, "OneHot": _fit_onehot,
    "Standardize": _fit_standardize, "GroupSize": _fit_groupsize, "GroupAggregate": _fit_aggregate,
}


# --- applying ----------------------------------------------------------------

def _apply_drop(spec, params, table):
    for n in spec.names:
        _require(table, n, "DropColumns")
    return table.drop(spec.names), []


def _apply_impute(spec, params, table):
    out = table
    for n, fill in params["fill"].items():
        c = _require(table, n, "Impute")
        values = table.column(n)
        if c.is_float:
            filled = np.where(np.isnan(values), fill, values)
        else:
            filled = np.array([fill if v is None else v for v in values], dtype=object)
        out = out.with_column(c, filled)
    return out, []


def _apply_onehot(spec, params, table):
    c = _require(table, spec.column, "OneHot")
    values = table.column(spec.column)
    vocab = params["vocab"]
    known = set(vocab)
    unseen = sum(1 for v in values if v is not None and v not in known)
    out = table.drop([spec.column]) if c.role == D.FEATURE else table
    out = out.with_columns([(D.ColumnSpec(f"{spec.column}={v}", D.NUMERIC, D.FEATURE), (values == v).astype(float))
                            for v in vocab])
    flags = [f"OneHot({spec.column}): {unseen} row(s) with unseen categories encoded as zeros"] if unseen else []
    return out, flags


def _apply_standardize(spec, params, table):
    columns = params["columns"]
    for n in columns:
        _require(table, n, "Standardize")
    glob = params["global"]
    out = table
    if spec.scope == GLOBAL:
        for n in columns:
            mean, std = glob[n]
            out = out.with_column(table.schema[n], (table.column(n) - mean) / std)
        return out, []
    key = params["key"]
    _require(table, key, "Standardize[per_group]")
    keys = table.column(key)
    groups = params["groups"]
    unseen = np.array([k not in groups for k in keys], dtype=bool)
    for n in columns:
        means = np.array([groups[k][n][0] if k in groups else glob[n][0] for k in keys], dtype=float)
        stds = np.array([groups[k][n][1] if k in groups else glob[n][1] for k in keys], dtype=float)
        out = out.with_column(table.schema[n], (table.column(n) - means) / stds)
    flags = []
    if unseen.any():
        flags.append(f"Standardize[per_group]: {int(unseen.sum())} row(s) from unseen groups used global statistics")
    return out, flags


def _apply_groupsize(spec, params, table):
    _require(table, spec.key, "GroupSize")
    counts = params["counts"]
    keys = table.column(spec.key)
    values = np.array([counts.get(k, 0) for k in keys], dtype=float)
    unseen = sum(1 for k in keys if k not in counts)
    flags = [f"GroupSize({spec.key}): {unseen} row(s) from unseen groups got size 0"] if unseen else []
    return table.with_column(D.ColumnSpec(spec.output, D.NUMERIC, D.FEATURE), values), flags


def _apply_aggregate(spec, params, table):
    _require(table, spec.entity_key, "GroupAggregate")
    _require(table, spec.source, "GroupAggregate")
    ents = params["entities"]
    fallback = params["fallback"]
    keys = table.column(spec.entity_key)
    out = table
    for stat, name in zip(spec.stats, spec.outputs()):
        values = np.array([ents[k][stat] if k in ents else fallback[stat] for k in keys], dtype=float)
        out = out.with_column(D.ColumnSpec(name, D.NUMERIC, D.FEATURE), values)
    unseen = sum(1 for k in keys if k not in ents)
    flags = [f"GroupAggregate({spec.entity_key}): {unseen} row(s) from unseen entities used global statistics"] if unseen else []
    return out, flags


_APPLY = {
    "DropColumns": _apply_drop, "Impute": _apply_impute, "OneHot": _apply_onehot,
    "Standardize": _apply_standardize, "GroupSize": _apply_groupsize, "GroupAggregate": _apply_aggregate,
}


@dataclass
class FittedChain:
    chain: tuple
    steps: list
    train_fingerprint: str = ""

    @property
    def flags(self) -> list[str]:
        return [f for s in self.steps for f in s.flags]

    def step(self, index: int) -> FittedStep:
        return self.steps[index]

    def to_dict(self) -> dict:
        return {"chain": chain_to_dict(self.chain), "steps": [s.to_dict() for s in self.steps],
                "train_fingerprint": self.train_fingerprint}


def fit_chain(chain, train: D.Table) -> FittedChain:
    """Learn every step's parameters from ``train``; each step fits on the previous steps' output."""
    chain = tuple(chain)
    steps = []
    current = train
    for spec in chain:
        params, flags = _FIT[kind(spec)](spec, current)
        step = FittedStep(spec, params, flags)
        steps.append(step)
        current, _ = step.apply(current)
    return FittedChain(chain, steps, train.fingerprint())


def apply_chain(fitted: FittedChain, table: D.Table, *, return_flags: bool = False):
    current = table
    flags = []
    for step in fitted.steps:
        current, f = step.apply(current)
        flags.extend(f)
    return (current, flags) if return_flags else current


def fit_apply(chain, train: D.Table) -> tuple[FittedChain, D.Table]:
    fitted = fit_chain(chain, train)
    return fitted, apply_chain(fitted, train)


# --- enumeration -------------------------------------------------------------

def baseline_chain(constraints, schema: D.Schema) -> tuple:
    """Mandatory drops, removal of unencodable columns, imputation, one-hot encoding."""
    chain = []
    if constraints.mandatory_drops:
        chain.append(DropColumns(tuple(constraints.mandatory_drops)))
    dropped = set(constraints.mandatory_drops)
    kept = [c for c in schema.columns if c.name not in dropped and c.role != D.TARGET]
    numeric = [c.name for c in kept if c.role == D.FEATURE and c.dtype == D.NUMERIC]
    categorical = [c.name for c in kept if c.role == D.FEATURE and c.dtype == D.CATEGORICAL]
    unusable = [c.name for c in kept if c.role == D.FEATURE and c.dtype == D.TIMESTAMP]
    identifiers = [c.name for c in kept if c.role == D.FEATURE and c.dtype == D.IDENTIFIER]
    if constraints.encode_identifiers:
        categorical += identifiers
        entity = constraints.entity_key
        if entity is not None and entity in schema and entity not in dropped and entity not in categorical:
            if schema[entity].dtype in (D.CATEGORICAL, D.IDENTIFIER):
                categorical.append(entity)
    else:
        unusable += identifiers
    if unusable:
        chain.append(DropColumns(tuple(unusable)))
    if numeric:
        chain.append(Impute(tuple(numeric), "mean"))
    if categorical:
        chain.append(Impute(tuple(categorical), "mode"))
    chain.extend(OneHot(c) for c in categorical)
    return tuple(chain)


def enumerate_transform_choices(constraints, schema: D.Schema) -> list[tuple]:
    """The fixed menu of at most 12 chains, baseline first.

    Extras (group size, per-entity aggregates of numeric features, both) are
    crossed with scaling (none, global, per-group).
    """
    allowed = constraints.allowed_transforms
    base = baseline_chain(constraints, schema)
    dropped = set(constraints.mandatory_drops)
    group_key = constraints.group_key if constraints.group_key in schema else None
    entity_key = constraints.entity_key if constraints.entity_key in schema else None
    numeric = [c.name for c in schema.columns
               if c.role == D.FEATURE and c.dtype == D.NUMERIC and c.name not in dropped]

    extras = [()]
    size = (GroupSize(group_key),) if group_key and group_key not in dropped and "GroupSize" in allowed else ()
    agg = ()
    if entity_key and entity_key not in dropped and numeric and "GroupAggregate" in allowed:
        agg = tuple(GroupAggregate(entity_key, n) for n in numeric)
    if size:
        extras.append(size)
    if agg:
        extras.append(agg)
    if size and agg:
        extras.append(size + agg)

    scalings = [()]
    if "Standardize" in allowed:
        scalings.append((Standardize((), GLOBAL),))
        if group_key and group_key not in dropped:
            scalings.append((Standardize((), PER_GROUP),))

    return [base + extra + scale for extra in extras for scale in scalings]


def n_model_features(table: D.Table) -> int:
    return len(table.schema.feature_names())
