"""Train/test splitting under leakage boundaries.

Three policies:

* ``Random`` -- seeded shuffle, the first ``n_test`` shuffled rows become test.
* ``TimeOrdered`` -- stable sort by the time key, the last ``n_test`` rows become test.
* ``GroupAware`` -- distinct entities (first-appearance order) are shuffled with
  ``numpy.random.default_rng(seed).permutation`` and moved whole into the
  test set until its row count first reaches ``test_fraction * n``. The last
  remaining entity always stays in train.

``n_test = clamp(floor(test_fraction * n + 0.5), 1, n - 1)`` for the row-wise
policies. Both halves keep the input's row order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Table
from .errors import ValidationError


@dataclass(frozen=True)
class Random:
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        _check_fraction(self.test_fraction)


@dataclass(frozen=True)
class TimeOrdered:
    test_fraction: float = 0.25
    time_key: str = ""

    def __post_init__(self):
        _check_fraction(self.test_fraction)


@dataclass(frozen=True)
class GroupAware:
    entity_key: str
    test_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        _check_fraction(self.test_fraction)


def _check_fraction(f):
    if not 0 < f < 1:
        raise ValidationError(f"test_fraction must be in (0, 1), got {f}")


def policy_to_dict(policy) -> dict:
    out = {"kind": type(policy).__name__}
    out.update(policy.__dict__)
    return out


def policy_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    return {"Random": Random, "TimeOrdered": TimeOrdered, "GroupAware": GroupAware}[kind](**d)


@dataclass(frozen=True)
class SplitResult:
    train: Table
    test: Table
    policy: object
    train_index: np.ndarray
    test_index: np.ndarray
    entity_overlap: int = 0


def n_test_rows(n: int, fraction: float) -> int:
    return min(n - 1, max(1, math.floor(fraction * n + 0.5)))


def first_appearance(values) -> dict:
    """Map each distinct value to the row indices holding it, in first-appearance order."""
    out: dict = {}
    for i, v in enumerate(values):
        out.setdefault(v, []).append(i)
    return out


def _overlap(table: Table, train_idx, test_idx, key) -> int:
    if key is None or key not in table.schema:
        return 0
    col = table.column(key)
    return len(set(col[train_idx]) & set(col[test_idx]))


def split(table: Table, policy) -> SplitResult:
    n = table.row_count
    if n < 2:
        raise ValidationError("need at least 2 rows to split")
    if isinstance(policy, Random):
        perm = np.random.default_rng(policy.seed).permutation(n)
        is_test = np.zeros(n, dtype=bool)
        is_test[perm[: n_test_rows(n, policy.test_fraction)]] = True
    elif isinstance(policy, TimeOrdered):
        if policy.time_key not in table.schema:
            raise ValidationError(f"time key {policy.time_key!r} not in table")
        t = table.column(policy.time_key)
        if np.isnan(t).any():
            raise ValidationError(f"time key {policy.time_key!r} has missing values")
        order = np.argsort(t, kind="stable")
        is_test = np.zeros(n, dtype=bool)
        is_test[order[n - n_test_rows(n, policy.test_fraction):]] = True
    elif isinstance(policy, GroupAware):
        if policy.entity_key not in table.schema:
            raise ValidationError(f"entity key {policy.entity_key!r} not in table")
        groups = first_appearance(table.column(policy.entity_key))
        if len(groups) < 2:
            raise ValidationError("GroupAware split needs at least 2 distinct entities")
        entities = list(groups)
        order = np.random.default_rng(policy.seed).permutation(len(entities))
        target = policy.test_fraction * n
        is_test = np.zeros(n, dtype=bool)
        taken = 0
        for pos in order[:-1]:
            rows = groups[entities[pos]]
            is_test[rows] = True
            taken += len(rows)
            if taken >= target:
                break
    else:
        raise ValidationError(f"unknown split policy {policy!r}")

    test_idx = np.flatnonzero(is_test)
    train_idx = np.flatnonzero(~is_test)
    key = policy.entity_key if isinstance(policy, GroupAware) else table.schema.entity_key
    return SplitResult(
        train=table.take(train_idx),
        test=table.take(test_idx),
        policy=policy,
        train_index=train_idx,
        test_index=test_idx,
        entity_overlap=_overlap(table, train_idx, test_idx, key),
    )


def check_leakage(result: SplitResult, entity_key: str) -> list:
    """Entity values present on both sides of the split, sorted."""
    shared = set(result.train.column(entity_key)) & set(result.test.column(entity_key))
    return sorted(shared, key=lambda v: (v is None, str(v)))
