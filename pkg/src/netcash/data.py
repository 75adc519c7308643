"""Typed columnar tables with semantic column roles, plus CSV ingestion.

Columns are stored as numpy arrays: numeric and timestamp columns as
``float64`` with ``nan`` for missing cells, categorical and identifier
columns as ``object`` arrays of ``str`` with ``None`` for missing cells.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataIOError, ValidationError

log = logging.getLogger(__name__)

NUMERIC = "numeric"
CATEGORICAL = "categorical"
IDENTIFIER = "identifier"
TIMESTAMP = "timestamp"
DTYPES = (NUMERIC, CATEGORICAL, IDENTIFIER, TIMESTAMP)

FEATURE = "feature"
TARGET = "target"
GROUP_KEY = "group_key"
ENTITY_KEY = "entity_key"
TIME_KEY = "time_key"
IGNORED = "ignored"
ROLES = (FEATURE, TARGET, GROUP_KEY, ENTITY_KEY, TIME_KEY, IGNORED)
KEY_ROLES = (GROUP_KEY, ENTITY_KEY, TIME_KEY)

_FLOAT_DTYPES = (NUMERIC, TIMESTAMP)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    dtype: str
    role: str = FEATURE

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise ValidationError(f"column {self.name!r}: unknown dtype {self.dtype!r}")
        if self.role not in ROLES:
            raise ValidationError(f"column {self.name!r}: unknown role {self.role!r}")
        if self.role == TARGET and self.dtype not in (NUMERIC, CATEGORICAL):
            raise ValidationError(
                f"target column {self.name!r} must be numeric or categorical, got {self.dtype}"
            )

    @property
    def is_float(self) -> bool:
        return self.dtype in _FLOAT_DTYPES


@dataclass(frozen=True)
class Schema:
    columns: tuple

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValidationError(f"duplicate column names: {dupes}")
        targets = [c.name for c in self.columns if c.role == TARGET]
        if len(targets) != 1:
            raise ValidationError(f"schema needs exactly one target column, found {len(targets)}")
        for role in KEY_ROLES:
            holders = [c.name for c in self.columns if c.role == role]
            if len(holders) > 1:
                raise ValidationError(f"at most one {role} column allowed, found {holders}")

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def __contains__(self, name) -> bool:
        return any(c.name == name for c in self.columns)

    def __getitem__(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def target(self) -> ColumnSpec:
        return next(c for c in self.columns if c.role == TARGET)

    def key(self, role: str) -> str | None:
        for c in self.columns:
            if c.role == role:
                return c.name
        return None

    @property
    def group_key(self) -> str | None:
        return self.key(GROUP_KEY)

    @property
    def entity_key(self) -> str | None:
        return self.key(ENTITY_KEY)

    @property
    def time_key(self) -> str | None:
        return self.key(TIME_KEY)

    def feature_names(self) -> list[str]:
        return [c.name for c in self.columns if c.role == FEATURE]

    def without(self, names: Iterable[str]) -> "Schema":
        drop = set(names)
        return Schema(tuple(c for c in self.columns if c.name not in drop))

    def to_dict(self) -> list[dict]:
        return [{"name": c.name, "dtype": c.dtype, "role": c.role} for c in self.columns]

    @classmethod
    def from_dict(cls, items: Sequence[Mapping]) -> "Schema":
        return cls(tuple(ColumnSpec(i["name"], i["dtype"], i.get("role", FEATURE)) for i in items))


def _as_column(spec: ColumnSpec, values) -> np.ndarray:
    if spec.is_float:
        if isinstance(values, np.ndarray) and values.dtype != object:
            arr = np.asarray(values, dtype=float)
        else:
            arr = np.array([np.nan if v is None else v for v in values], dtype=float)
        if np.isinf(arr).any():
            raise ValidationError(f"column {spec.name!r} contains non-finite values")
        return arr
    if isinstance(values, np.ndarray) and values.dtype == object:
        return values
    arr = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        arr[i] = None if v is None else str(v)
    return arr


class Table:
    """Immutable columnar table. Construct once, share freely."""

    __slots__ = ("schema", "_cols", "row_count")

    def __init__(self, schema: Schema, columns: Mapping[str, Sequence]):
        missing = [n for n in schema.names if n not in columns]
        if missing:
            raise ValidationError(f"missing data for columns {missing}")
        cols = {}
        lengths = set()
        for spec in schema.columns:
            arr = _as_column(spec, columns[spec.name])
            arr.flags.writeable = False
            cols[spec.name] = arr
            lengths.add(len(arr))
        if len(lengths) > 1:
            raise ValidationError(f"ragged columns: lengths {sorted(lengths)}")
        self.schema = schema
        self._cols = cols
        self.row_count = lengths.pop() if lengths else 0

    @classmethod
    def from_rows(cls, schema: Schema, rows: Iterable[Sequence]) -> "Table":
        rows = [tuple(r) for r in rows]
        width = len(schema.columns)
        for i, r in enumerate(rows, start=1):
            if len(r) != width:
                raise ValidationError(f"row {i} has {len(r)} values, expected {width}")
        cols = {c.name: [r[j] for r in rows] for j, c in enumerate(schema.columns)}
        return cls(schema, cols)

    def __len__(self) -> int:
        return self.row_count

    def __repr__(self) -> str:
        return f"Table({self.row_count} rows, columns={self.schema.names})"

    def column(self, name: str) -> np.ndarray:
        try:
            return self._cols[name]
        except KeyError:
            raise KeyError(f"no column {name!r}") from None

    @property
    def columns(self) -> dict[str, np.ndarray]:
        return dict(self._cols)

    @property
    def rows(self) -> list[tuple]:
        out = []
        arrays = [self._cols[n] for n in self.schema.names]
        floats = [c.is_float for c in self.schema.columns]
        for i in range(self.row_count):
            row = []
            for arr, is_float in zip(arrays, floats):
                v = arr[i]
                if is_float:
                    v = None if math.isnan(v) else float(v)
                row.append(v)
            out.append(tuple(row))
        return out

    @property
    def target(self) -> np.ndarray:
        return self._cols[self.schema.target.name]

    def take(self, indices) -> "Table":
        idx = np.asarray(indices, dtype=np.intp)
        return Table(self.schema, {n: a[idx] for n, a in self._cols.items()})

    def with_column(self, spec: ColumnSpec, values) -> "Table":
        return self.with_columns([(spec, values)])

    def with_columns(self, items) -> "Table":
        """Replace or append columns; replaced columns keep their position."""
        cols = list(self.schema.columns)
        data = dict(self._cols)
        for spec, values in items:
            for i, c in enumerate(cols):
                if c.name == spec.name:
                    cols[i] = spec
                    break
            else:
                cols.append(spec)
            data[spec.name] = values
        return Table(Schema(tuple(cols)), data)

    def drop(self, names: Iterable[str]) -> "Table":
        names = set(names)
        schema = self.schema.without(names)
        return Table(schema, {n: a for n, a in self._cols.items() if n not in names})

    def feature_matrix(self) -> np.ndarray:
        """Numeric feature-role columns as an (n, p) float matrix."""
        names = self.schema.feature_names()
        if not names:
            return np.empty((self.row_count, 0))
        return np.column_stack([np.asarray(self._cols[n], dtype=float) for n in names])

    def equals(self, other: "Table") -> bool:
        if self.schema != other.schema or self.row_count != other.row_count:
            return False
        for spec in self.schema.columns:
            a, b = self._cols[spec.name], other._cols[spec.name]
            if spec.is_float:
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif list(a) != list(b):
                return False
        return True

    def fingerprint(self) -> str:
        """Content hash over schema and cell values (row order sensitive)."""
        h = hashlib.sha256()
        for spec in self.schema.columns:
            h.update(f"{spec.name}|{spec.dtype}|{spec.role}\n".encode())
            arr = self._cols[spec.name]
            if spec.is_float:
                h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
            else:
                h.update("\x1f".join("\x00" if v is None else v for v in arr).encode())
        return h.hexdigest()[:16]


def concat(tables: Sequence[Table]) -> Table:
    if not tables:
        raise ValueError("nothing to concatenate")
    schema = tables[0].schema
    for t in tables[1:]:
        if t.schema != schema:
            raise ValidationError("cannot concatenate tables with different schemas")
    return Table(schema, {n: np.concatenate([t.column(n) for t in tables]) for n in schema.names})


def _parse_cell(spec: ColumnSpec, cell: str, row_no: int):
    cell = cell.strip()
    if cell == "":
        return None
    if spec.dtype == NUMERIC:
        try:
            value = float(cell)
        except ValueError:
            value = math.nan
        if not math.isfinite(value):
            raise ValidationError(f"row {row_no}, column {spec.name!r}: cannot parse {cell!r} as a finite number")
        return value
    if spec.dtype == TIMESTAMP:
        try:
            return int(cell)
        except ValueError:
            raise ValidationError(
                f"row {row_no}, column {spec.name!r}: timestamps must be integer epoch seconds, got {cell!r}"
            ) from None
    return cell


def load_csv(path, schema: Schema) -> Table:
    """Read a UTF-8 CSV whose header matches ``schema`` (in any order).

    Empty cells become missing values. Rows with a missing target are
    dropped and the count is logged.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file, expected a header row") from None
        except (UnicodeDecodeError, csv.Error) as exc:
            raise ValidationError(f"{path}: {exc}") from exc
        header = [h.strip() for h in header]
        if sorted(header) != sorted(schema.names):
            missing = sorted(set(schema.names) - set(header))
            extra = sorted(set(header) - set(schema.names))
            raise ValidationError(f"{path}: header mismatch (missing {missing}, unexpected {extra})")
        position = {name: header.index(name) for name in schema.names}
        rows = []
        try:
            for row_no, raw in enumerate(reader, start=1):
                if not raw:
                    continue
                if len(raw) != len(header):
                    raise ValidationError(f"row {row_no}: expected {len(header)} fields, got {len(raw)}")
                rows.append(tuple(_parse_cell(c, raw[position[c.name]], row_no) for c in schema.columns))
        except (UnicodeDecodeError, csv.Error) as exc:
            raise ValidationError(f"{path}: {exc}") from exc

    t_idx = schema.names.index(schema.target.name)
    kept = [r for r in rows if r[t_idx] is not None]
    if len(kept) < len(rows):
        log.warning("dropped %d row(s) with a missing target in %s", len(rows) - len(kept), path)
    return Table.from_rows(schema, kept)


def format_value(spec: ColumnSpec, value) -> str:
    if value is None:
        return ""
    if spec.dtype == TIMESTAMP:
        return str(int(value))
    if spec.dtype == NUMERIC:
        return repr(float(value))
    return str(value)


def write_csv(table: Table, path) -> None:
    """Write ``table`` with floats in shortest round-trip form."""
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.schema.names)
            specs = table.schema.columns
            for row in table.rows:
                w.writerow([format_value(s, v) for s, v in zip(specs, row)])
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def partition_by_group(table: Table) -> list[tuple[object, Table]]:
    """Split rows by the group-key column, groups ordered by first appearance."""
    key = table.schema.group_key
    if key is None:
        raise ValidationError("schema has no group_key column")
    values = table.column(key)
    order: dict = {}
    for i, v in enumerate(values):
        order.setdefault(v, []).append(i)
    return [(g, table.take(idx)) for g, idx in order.items()]


def select_columns(table: Table, names: Sequence[str]) -> Table:
    unknown = [n for n in names if n not in table.schema]
    if unknown:
        raise ValidationError(f"unknown column(s): {unknown}")
    keep = set(names) | {table.schema.target.name}
    schema = Schema(tuple(c for c in table.schema.columns if c.name in keep))
    if not schema.feature_names():
        raise ValidationError("selection leaves no feature columns")
    return Table(schema, {n: table.column(n) for n in schema.names})


def shuffled_indices(n_rows: int, n_take: int, seed: int) -> np.ndarray:
    """Partial Fisher-Yates: position i swaps with a uniform draw from [i, n_rows)."""
    rng = np.random.default_rng(seed)
    idx = np.arange(n_rows)
    for i in range(min(n_take, n_rows)):
        j = int(rng.integers(i, n_rows))
        idx[i], idx[j] = idx[j], idx[i]
    return idx[: min(n_take, n_rows)]


def subsample(table: Table, n: int, seed: int) -> Table:
    if n < 1:
        raise ValueError("n must be >= 1")
    return table.take(shuffled_indices(table.row_count, n, seed))


def read_header(path) -> list[str]:
    """Column names from the first line of a CSV file."""
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), None)
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    except (UnicodeDecodeError, csv.Error) as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if header is None:
        raise ValidationError(f"{path}: empty file, expected a header row")
    return [h.strip() for h in header]
