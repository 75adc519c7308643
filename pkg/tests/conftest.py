import numpy as np
import pytest

from netcash import data as D
from netcash.context import ContextSpec


def numeric_table(X, y, names=None, target="y", extra=()):
    """Regression table from a matrix; ``extra`` is a sequence of (ColumnSpec, values)."""
    X = np.asarray(X, dtype=float)
    names = names or [f"x{i}" for i in range(X.shape[1])]
    specs = [D.ColumnSpec(n, D.NUMERIC) for n in names] + [s for s, _ in extra] + [
        D.ColumnSpec(target, D.NUMERIC, D.TARGET)]
    cols = {n: X[:, i] for i, n in enumerate(names)}
    cols.update({s.name: v for s, v in extra})
    cols[target] = np.asarray(y, dtype=float)
    return D.Table(D.Schema(tuple(specs)), cols)


def label_table(X, labels, names=None, target="label"):
    X = np.asarray(X, dtype=float)
    names = names or [f"x{i}" for i in range(X.shape[1])]
    specs = [D.ColumnSpec(n, D.NUMERIC) for n in names] + [D.ColumnSpec(target, D.CATEGORICAL, D.TARGET)]
    cols = {n: X[:, i] for i, n in enumerate(names)}
    cols[target] = [str(v) for v in labels]
    return D.Table(D.Schema(tuple(specs)), cols)


def grouped_linear_table(n_groups=3, rows_per_group=30, seed=0):
    """y = slope_g * x + noise with a per-group slope, plus an entity column (5 rows per entity)."""
    rng = np.random.default_rng(seed)
    g, e, x, y = [], [], [], []
    for k in range(n_groups):
        slope = 1.0 + 2.0 * k
        xs = rng.uniform(0, 10, rows_per_group)
        g += [f"g{k}"] * rows_per_group
        e += [f"g{k}-e{i // 5}" for i in range(rows_per_group)]
        x += list(xs)
        y += list(slope * xs + rng.normal(0, 0.5, rows_per_group))
    schema = D.Schema((
        D.ColumnSpec("grp", D.CATEGORICAL, D.GROUP_KEY),
        D.ColumnSpec("ent", D.IDENTIFIER, D.ENTITY_KEY),
        D.ColumnSpec("x", D.NUMERIC),
        D.ColumnSpec("y", D.NUMERIC, D.TARGET),
    ))
    return D.Table(schema, {"grp": g, "ent": e, "x": x, "y": y})


@pytest.fixture
def linear_table():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(80, 2))
    y = 2.0 * X[:, 0] + rng.normal(0, 0.1, 80)
    return numeric_table(X, y)


@pytest.fixture
def regression_spec():
    return ContextSpec(category="generic_regression", target="y")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
