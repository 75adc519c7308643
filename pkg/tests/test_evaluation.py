import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from netcash import evaluation as ev
from netcash.feasibility import average_ranks, spearman
from netcash.learners import fit

from conftest import numeric_table


def r2_brute(y, yhat):
    n = len(y)
    mean = sum(y) / n
    ss_tot = sum((v - mean) ** 2 for v in y)
    ss_res = sum((a - b) ** 2 for a, b in zip(y, yhat))
    return 0.0 if ss_tot == 0 else 1 - ss_res / ss_tot


def spearman_brute(x, y):
    """Pearson correlation of average ranks, computed by counting."""
    def ranks(v):
        return [sum(w < a for w in v) + (sum(w == a for w in v) + 1) / 2 for a in v]
    rx, ry = ranks(list(x)), ranks(list(y))
    mx, my = sum(rx) / len(rx), sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sx = math.sqrt(sum((a - mx) ** 2 for a in rx))
    sy = math.sqrt(sum((b - my) ** 2 for b in ry))
    return 0.0 if sx == 0 or sy == 0 else cov / (sx * sy)


def test_r2_and_spearman_match_brute_force_on_1000_vectors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(3, 40))
        y = rng.normal(size=n)
        yhat = y + rng.normal(size=n) * rng.uniform(0, 3)
        if rng.random() < 0.3:
            y = np.round(y, 0)  # ties
        assert abs(ev.r2(y, yhat) - r2_brute(y, yhat)) <= 1e-12
        assert abs(spearman(y, yhat) - spearman_brute(y, yhat)) <= 1e-12


@given(st.lists(st.integers(-5, 5), min_size=3, max_size=30), st.integers(0, 10_000))
@settings(max_examples=100, deadline=None)
def test_spearman_agrees_with_scipy(xs, seed):
    x = np.array(xs, dtype=float)
    y = np.random.default_rng(seed).integers(-3, 3, len(x)).astype(float)
    rho, flagged = spearman(x, y, return_flag=True)
    if np.all(x == x[0]) or np.all(y == y[0]):
        assert flagged and rho == 0.0
    else:
        assert rho == pytest.approx(stats.spearmanr(x, y).statistic, abs=1e-12)


def test_average_ranks_match_scipy():
    x = np.array([3.0, 1.0, 3.0, 2.0, 3.0, 1.0])
    assert np.array_equal(average_ranks(x), stats.rankdata(x))


def test_r2_exact_reference_points():
    y = np.array([1.0, 4.0, 2.5, 7.0, 0.3])
    assert ev.r2(y, np.full_like(y, y.mean())) == 0.0
    assert ev.r2(y, y) == 1.0
    assert ev.r2([2.0, 2.0], [1.0, 3.0]) == 0.0  # constant target is degenerate
    with pytest.raises(ValueError):
        ev.r2([1.0], [1.0])


def test_classification_metrics_by_hand():
    y = ["a", "a", "b", "b", "b"]
    yhat = ["a", "b", "b", "b", "a"]
    m = ev.classification_metrics(y, yhat)
    assert m["accuracy"] == pytest.approx(0.6)
    assert m["per_class"]["a"]["precision"] == pytest.approx(0.5)
    assert m["per_class"]["b"]["recall"] == pytest.approx(2 / 3)
    assert ev.f1_macro(y, yhat) == pytest.approx((0.5 + 2 * (2 / 3) * (2 / 3) / (4 / 3)) / 2)


def test_never_predicted_class_is_flagged():
    m = ev.classification_metrics(["a", "b"], ["a", "a"])
    assert m["per_class"]["b"]["precision"] == 0.0
    assert any("'b'" in f for f in m["flags"])


def test_per_group_average_and_ci():
    assert ev.per_group_average({"a": 0.2, "b": 0.6}) == pytest.approx(0.4)
    assert ev.per_group_average({"a": 0.2, "b": 0.6}, {"a": 3, "b": 1}) == pytest.approx(0.3)
    v = [0.5, 0.7, 0.6]
    assert ev.ci_half_width(v) == pytest.approx(1.96 * np.std(v, ddof=1) / math.sqrt(3))
    assert math.isnan(ev.ci_half_width([0.5]))


def test_min_rows():
    assert ev.min_rows("r2") == 2 and ev.min_rows("accuracy") == 1


@pytest.mark.parametrize("p,pct", [(0.8, 80), (0.805, 81), (0.125, 13), (1 / 3, 33), (1.0, 100), (0.0, 0)])
def test_percent_rounds_half_up(p, pct):
    assert ev.percent_half_up(p) == pct


def test_explanation_golden_sentence():
    rep = ev.EvaluationReport("accuracy", "classification", 0.8,
                              class_metrics={"per_class": {"slow": {"precision": 0.80}}, "flags": []})
    assert ev.render_explanation(rep, "classification") == [
        'When the system outputs "slow" it is likely to be correct 80% of the time.']


def test_regression_explanation_mentions_ci_and_top_features():
    rep = ev.EvaluationReport("r2", "regression", 0.5, repeated_scores=[0.5, 0.6, 0.55],
                              importances={"a": 0.1, "b": 0.3, "c": 0.0, "d": 0.2})
    (s,) = ev.render_explanation(rep, "regression")
    assert "r2 = 0.500" in s and "95% confidence over 3 repeated splits" in s
    assert s.endswith("b, d, a.")


def test_permutation_importance_finds_the_signal(linear_table):
    m = fit("LinearLeastSquares", {}, linear_table)
    imp = ev.permutation_importance(m, linear_table, "r2", seed=0, repeats=3)
    assert imp["x0"] > 0.5 and abs(imp["x1"]) < 0.05
    assert imp == ev.permutation_importance(m, linear_table, "r2", seed=0, repeats=3)


def test_unknown_metric():
    with pytest.raises(ValueError):
        ev.score("mae", [1.0], [1.0])


def test_top_features_skip_inputs_that_do_not_matter():
    assert ev.top_features({"a": 0.2, "b": 0.0, "c": -0.1, "d": 0.5}) == ["d", "a"]
