"""Declarative problem context: parsing, validation, and compilation into search constraints.

Context files hold one ``key = value`` statement per line. Keys are dotted
lowercase identifiers; values are numbers, ``true``/``false``, double-quoted
strings, or lists of quoted strings. ``#`` starts a comment. Unknown keys are
rejected so that a typo can never silently reshape the search space::

    category = "latency_estimation"
    target = "avg_latency_us"
    group_key = "cluster"
    entity_key = "vm_name"
    columns.categorical = ["cluster", "vnet_id", "host"]
    columns.identifier = ["vm_name"]
    budget.max_trials = 20
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import data as D
from .errors import DataIOError, ValidationError
from .learners import ALGORITHMS, CLASSIFICATION, REGRESSION
from .splitting import GroupAware, Random, TimeOrdered

CATEGORIES = {
    "latency_estimation": REGRESSION,
    "failure_classification": CLASSIFICATION,
    "generic_regression": REGRESSION,
    "generic_classification": CLASSIFICATION,
}
METRICS = {REGRESSION: ("r2",), CLASSIFICATION: ("accuracy", "f1_macro")}
DEFAULT_METRIC = {REGRESSION: "r2", CLASSIFICATION: "accuracy"}
PARTITION_MODES = ("on", "off", "auto")

POOLED = "pooled"
PER_GROUP = "per_group"

TRANSFORM_KINDS = ("DropColumns", "Impute", "OneHot", "Standardize", "GroupSize", "GroupAggregate")


@dataclass(frozen=True)
class Budget:
    max_trials: int = 20
    max_seconds: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if int(self.max_trials) != self.max_trials or self.max_trials < 1:
            raise ValidationError("budget.max_trials must be a positive integer")
        if not self.max_seconds > 0:
            raise ValidationError("budget.max_seconds must be positive")


@dataclass(frozen=True)
class FeasibilityThresholds:
    min_abs_spearman: float = 0.1
    infeasible_r2: float = 0.05
    feasible_r2: float = 0.3
    infeasible_accuracy_margin: float = 0.02
    feasible_accuracy_margin: float = 0.1


@dataclass(frozen=True)
class ContextSpec:
    category: str
    target: str | None = None
    group_key: str | None = None
    entity_key: str | None = None
    time_key: str | None = None
    drop_features: tuple = ()
    partition_by_group: str = "auto"
    metric: str | None = None
    budget: Budget = field(default_factory=Budget)
    identifier_features_allowed: bool = False
    test_fraction: float = 0.25
    min_groups: int = 2
    min_rows_per_group: int = 20
    numeric: tuple = ()
    categorical: tuple = ()
    identifier: tuple = ()
    timestamp: tuple = ()
    thresholds: FeasibilityThresholds = field(default_factory=FeasibilityThresholds)

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValidationError(f"unsupported category {self.category!r}; expected one of {sorted(CATEGORIES)}")
        if self.partition_by_group not in PARTITION_MODES:
            raise ValidationError(f"partition_by_group must be one of {PARTITION_MODES}")
        if not 0 < self.test_fraction < 1:
            raise ValidationError("split.test_fraction must lie strictly between 0 and 1")
        for name in ("drop_features", "numeric", "categorical", "identifier", "timestamp"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.metric is None:
            object.__setattr__(self, "metric", DEFAULT_METRIC[self.task])

    @property
    def task(self) -> str:
        return CATEGORIES[self.category]

    def fingerprint(self) -> str:
        return hashlib.sha256(format_context(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SearchConstraints:
    task: str
    allowed_algorithms: frozenset
    allowed_transforms: frozenset
    split_policy: object
    partition_mode: str
    metric: str
    group_key: str | None = None
    entity_key: str | None = None
    mandatory_drops: tuple = ()
    encode_identifiers: bool = False

    def __post_init__(self):
        if not self.allowed_algorithms:
            raise ValidationError("allowed_algorithms must not be empty")


# --- grammar -------------------------------------------------------------

_KEY_RE = re.compile(r"^[a-z][a-z0-9_]*(\.[a-z][a-z0-9_]*)*$")
_NUM_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")

# key -> (attribute path, kind)
_KEYS = {
    "category": ("category", "str"),
    "target": ("target", "str"),
    "group_key": ("group_key", "str"),
    "entity_key": ("entity_key", "str"),
    "time_key": ("time_key", "str"),
    "drop_features": ("drop_features", "list"),
    "partition_by_group": ("partition_by_group", "str"),
    "metric": ("metric", "str"),
    "identifier_features_allowed": ("identifier_features_allowed", "bool"),
    "budget.max_trials": ("budget.max_trials", "int"),
    "budget.max_seconds": ("budget.max_seconds", "float"),
    "budget.seed": ("budget.seed", "int"),
    "split.test_fraction": ("test_fraction", "float"),
    "partition.min_groups": ("min_groups", "int"),
    "partition.min_rows_per_group": ("min_rows_per_group", "int"),
    "columns.numeric": ("numeric", "list"),
    "columns.categorical": ("categorical", "list"),
    "columns.identifier": ("identifier", "list"),
    "columns.timestamp": ("timestamp", "list"),
    "feasibility.min_abs_spearman": ("thresholds.min_abs_spearman", "float"),
    "feasibility.infeasible_r2": ("thresholds.infeasible_r2", "float"),
    "feasibility.feasible_r2": ("thresholds.feasible_r2", "float"),
    "feasibility.infeasible_accuracy_margin": ("thresholds.infeasible_accuracy_margin", "float"),
    "feasibility.feasible_accuracy_margin": ("thresholds.feasible_accuracy_margin", "float"),
}


def _strip_comment(line: str) -> str:
    in_str = escaped = False
    for i, ch in enumerate(line):
        if escaped:
            escaped = False
        elif ch == "\\" and in_str:
            escaped = True
        elif ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def _parse_string(text: str, line_no: int) -> tuple[str, str]:
    """Parse a leading double-quoted string; return (value, rest)."""
    if not text.startswith('"'):
        raise ValidationError(f"line {line_no}: expected a quoted string")
    out = []
    i = 1
    while i < len(text):
        ch = text[i]
        if ch == "\\":
            if i + 1 >= len(text) or text[i + 1] not in '"\\':
                raise ValidationError(f"line {line_no}: bad escape in string")
            out.append(text[i + 1])
            i += 2
            continue
        if ch == '"':
            return "".join(out), text[i + 1:]
        out.append(ch)
        i += 1
    raise ValidationError(f"line {line_no}: unterminated string")


def _parse_value(text: str, line_no: int):
    text = text.strip()
    if not text:
        raise ValidationError(f"line {line_no}: missing value")
    if text in ("true", "false"):
        return text == "true"
    if text.startswith('"'):
        value, rest = _parse_string(text, line_no)
        if rest.strip():
            raise ValidationError(f"line {line_no}: unexpected text after string")
        return value
    if text.startswith("["):
        if not text.endswith("]"):
            raise ValidationError(f"line {line_no}: unterminated list")
        body = text[1:-1].strip()
        items = []
        while body:
            value, body = _parse_string(body, line_no)
            items.append(value)
            body = body.strip()
            if body.startswith(","):
                body = body[1:].strip()
                if not body:
                    raise ValidationError(f"line {line_no}: trailing comma in list")
            elif body:
                raise ValidationError(f"line {line_no}: expected ',' between list items")
        return items
    if _NUM_RE.match(text):
        return float(text) if any(c in text for c in ".eE") else int(text)
    raise ValidationError(f"line {line_no}: cannot parse value {text!r}")


def _coerce(key: str, kind: str, value, line_no: int):
    bad = ValidationError(f"line {line_no}: {key} expects {kind}, got {value!r}")
    if kind == "str":
        if not isinstance(value, str):
            raise bad
        return value
    if kind == "list":
        if not isinstance(value, list):
            raise bad
        return tuple(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise bad
    return float(value)


def parse_context_text(text: str) -> ContextSpec:
    top, budget, thresholds = {}, {}, {}
    seen = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {line_no}: expected 'key = value'")
        key, _, value_text = line.partition("=")
        key = key.strip()
        if not _KEY_RE.match(key):
            raise ValidationError(f"line {line_no}: malformed key {key!r}")
        if key not in _KEYS:
            raise ValidationError(f"line {line_no}: unknown field {key!r}")
        if key in seen:
            raise ValidationError(f"line {line_no}: duplicate field {key!r} (first set on line {seen[key]})")
        seen[key] = line_no
        attr, kind = _KEYS[key]
        value = _coerce(key, kind, _parse_value(value_text, line_no), line_no)
        if attr.startswith("budget."):
            budget[attr.split(".", 1)[1]] = value
        elif attr.startswith("thresholds."):
            thresholds[attr.split(".", 1)[1]] = value
        else:
            top[attr] = value
    if "category" not in top:
        raise ValidationError("missing required field 'category'")
    if top["category"] not in CATEGORIES:
        raise ValidationError(
            f"line {seen['category']}: unsupported category {top['category']!r}; "
            f"expected one of {sorted(CATEGORIES)}"
        )
    try:
        return ContextSpec(budget=Budget(**budget), thresholds=FeasibilityThresholds(**thresholds), **top)
    except ValidationError as exc:
        raise ValidationError(f"invalid context: {exc}") from None


def parse_context(path) -> ContextSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: not UTF-8 ({exc})") from exc
    return parse_context_text(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    return "[" + ", ".join(_fmt(v) for v in value) + "]"


def format_context(spec: ContextSpec) -> str:
    """Canonical text form; parsing it yields an equal ContextSpec."""
    lines = []
    for key, (attr, _) in _KEYS.items():
        obj = spec
        for part in attr.split("."):
            obj = getattr(obj, part)
        if obj is None:
            continue
        lines.append(f"{key} = {_fmt(obj)}")
    return "\n".join(lines) + "\n"


# --- schema binding and validation ---------------------------------------

def build_schema(spec: ContextSpec, header) -> D.Schema:
    """Declare a schema for a CSV header from the context's column declarations."""
    declared = {}
    for dtype, names in ((D.NUMERIC, spec.numeric), (D.CATEGORICAL, spec.categorical),
                         (D.IDENTIFIER, spec.identifier), (D.TIMESTAMP, spec.timestamp)):
        for n in names:
            if n in declared:
                raise ValidationError(f"column {n!r} declared with two dtypes")
            declared[n] = dtype
    if spec.target is None:
        raise ValidationError("context must name the target column")
    if spec.target not in declared:
        declared[spec.target] = D.NUMERIC if spec.task == REGRESSION else D.CATEGORICAL
    undeclared = [h for h in header if h not in declared]
    if undeclared:
        raise ValidationError(f"columns without a declared dtype: {undeclared}")
    roles = {spec.target: D.TARGET}
    for role, name in ((D.GROUP_KEY, spec.group_key), (D.ENTITY_KEY, spec.entity_key), (D.TIME_KEY, spec.time_key)):
        if name is not None:
            roles.setdefault(name, role)
    return D.Schema(tuple(D.ColumnSpec(h, declared[h], roles.get(h, D.FEATURE)) for h in header))


def bind_roles(spec: ContextSpec, table: D.Table) -> D.Table:
    """Re-label key roles on ``table`` so they agree with ``spec``."""
    wanted = {spec.group_key: D.GROUP_KEY, spec.entity_key: D.ENTITY_KEY, spec.time_key: D.TIME_KEY}
    wanted.pop(None, None)
    cols = []
    for c in table.schema.columns:
        if c.role == D.TARGET:
            cols.append(c)
        elif c.name in wanted:
            cols.append(D.ColumnSpec(c.name, c.dtype, wanted[c.name]))
        elif c.role in D.KEY_ROLES:
            cols.append(D.ColumnSpec(c.name, c.dtype, D.FEATURE))
        else:
            cols.append(c)
    schema = D.Schema(tuple(cols))
    if schema == table.schema:
        return table
    return D.Table(schema, table.columns)


def validate(spec: ContextSpec, schema: D.Schema) -> list[str]:
    problems = []
    if spec.target is not None and spec.target != schema.target.name:
        if spec.target in schema:
            problems.append(f"target {spec.target!r} is not the schema's target column {schema.target.name!r}")
        else:
            problems.append(f"target column {spec.target!r} does not exist")
    for label, name in (("group_key", spec.group_key), ("entity_key", spec.entity_key), ("time_key", spec.time_key)):
        if name is not None and name not in schema:
            problems.append(f"{label} column {name!r} does not exist")
    if spec.time_key is not None and spec.time_key in schema:
        if schema[spec.time_key].dtype not in (D.TIMESTAMP, D.NUMERIC):
            problems.append(f"time_key column {spec.time_key!r} must be a timestamp")
    for name in spec.drop_features:
        if name not in schema:
            problems.append(f"drop_features column {name!r} does not exist")
        elif name == schema.target.name:
            problems.append(f"drop_features may not name the target {name!r}")
    for name in spec.numeric + spec.categorical + spec.identifier + spec.timestamp:
        if name not in schema:
            problems.append(f"declared column {name!r} does not exist")
    target = schema.target
    if spec.task == REGRESSION and target.dtype != D.NUMERIC:
        problems.append(f"category {spec.category} needs a numeric target, {target.name!r} is {target.dtype}")
    if spec.task == CLASSIFICATION and target.dtype != D.CATEGORICAL:
        problems.append(f"category {spec.category} needs a categorical target, {target.name!r} is {target.dtype}")
    if spec.metric not in METRICS[spec.task]:
        problems.append(f"metric {spec.metric!r} not available for {spec.task}; choose from {METRICS[spec.task]}")
    return problems


def _group_counts(table: D.Table, key: str) -> dict:
    counts: dict = {}
    for v in table.column(key):
        counts[v] = counts.get(v, 0) + 1
    return counts


def resolve_partition_mode(spec: ContextSpec, table: D.Table) -> str:
    if spec.group_key is None or spec.partition_by_group == "off":
        return POOLED
    if spec.partition_by_group == "on":
        return PER_GROUP
    counts = _group_counts(table, spec.group_key)
    big = sum(1 for c in counts.values() if c >= spec.min_rows_per_group)
    return PER_GROUP if big >= spec.min_groups else POOLED


def derive_constraints(spec: ContextSpec, table: D.Table) -> SearchConstraints:
    """Compile the context into the conditional search restrictions.

    Takes the table rather than only its schema because ``auto`` partitioning
    depends on per-group row counts.
    """
    task = spec.task
    algorithms = frozenset(a for a, info in ALGORITHMS.items() if info.task == task)
    kinds = {"DropColumns", "Impute", "OneHot", "Standardize"}
    if spec.group_key is not None:
        kinds.add("GroupSize")
    if spec.entity_key is not None:
        kinds.add("GroupAggregate")
    if spec.entity_key is not None:
        policy = GroupAware(spec.entity_key, spec.test_fraction, spec.budget.seed)
    elif spec.time_key is not None:
        policy = TimeOrdered(spec.test_fraction, spec.time_key)
    else:
        policy = Random(spec.test_fraction, spec.budget.seed)
    return SearchConstraints(
        task=task,
        allowed_algorithms=algorithms,
        allowed_transforms=frozenset(kinds),
        split_policy=policy,
        partition_mode=resolve_partition_mode(spec, table),
        metric=spec.metric,
        group_key=spec.group_key,
        entity_key=spec.entity_key,
        mandatory_drops=tuple(spec.drop_features),
        encode_identifiers=spec.identifier_features_allowed,
    )


def with_budget(spec: ContextSpec, **changes) -> ContextSpec:
    return replace(spec, budget=replace(spec.budget, **changes))
