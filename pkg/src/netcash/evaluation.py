"""Metrics, per-group aggregation, confidence intervals, permutation importance,
and templated explanations.

All scores are oriented so that larger is better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import data as D

Z_95 = 1.96


def r2(y, yhat) -> float:
    """Coefficient of determination; a constant ``y`` is degenerate and scores 0."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape[0]} targets vs {yhat.shape[0]} predictions")
    if y.size < 2:
        raise ValueError("r2 needs at least 2 values")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        return 0.0
    ss_res = float(((y - yhat) ** 2).sum())
    return 1.0 - ss_res / ss_tot


def is_constant(y) -> bool:
    y = np.asarray(y, dtype=float)
    return bool(y.size and (y == y[0]).all())


def accuracy(y, yhat) -> float:
    y, yhat = list(y), list(yhat)
    if len(y) != len(yhat):
        raise ValueError(f"length mismatch: {len(y)} labels vs {len(yhat)} predictions")
    if not y:
        raise ValueError("accuracy needs at least 1 label")
    return sum(a == b for a, b in zip(y, yhat)) / len(y)


def classification_metrics(y, yhat) -> dict:
    """Accuracy plus per-class precision, recall, and F1.

    A class never predicted has undefined precision; it is reported as 0
    and listed under ``flags``.
    """
    y, yhat = list(y), list(yhat)
    acc = accuracy(y, yhat)
    classes = sorted(set(y) | set(yhat), key=str)
    per_class, flags = {}, []
    for c in classes:
        tp = sum(1 for a, b in zip(y, yhat) if a == c and b == c)
        predicted = sum(1 for b in yhat if b == c)
        actual = sum(1 for a in y if a == c)
        if predicted == 0:
            precision = 0.0
            flags.append(f"precision undefined for class {c!r} (never predicted)")
        else:
            precision = tp / predicted
        recall = tp / actual if actual else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[c] = {"precision": precision, "recall": recall, "f1": f1, "support": actual}
    return {"accuracy": acc, "per_class": per_class, "flags": flags}


def f1_macro(y, yhat) -> float:
    per = classification_metrics(y, yhat)["per_class"]
    return sum(v["f1"] for v in per.values()) / len(per)


METRIC_FUNCTIONS = {"r2": r2, "accuracy": accuracy, "f1_macro": f1_macro}


def score(metric: str, y, yhat) -> float:
    try:
        fn = METRIC_FUNCTIONS[metric]
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}") from None
    return float(fn(y, yhat))


def min_rows(metric: str) -> int:
    return 2 if metric == "r2" else 1


def per_group_average(scores: dict, weights: dict | None = None) -> float:
    """Unweighted mean of per-group scores; pass ``weights`` (e.g. row counts) for a weighted mean."""
    if not scores:
        raise ValueError("per_group_average needs at least one group")
    if weights is None:
        return math.fsum(scores.values()) / len(scores)
    total = math.fsum(weights[g] for g in scores)
    return math.fsum(scores[g] * weights[g] for g in scores) / total


def ci_half_width(values) -> float:
    """Normal-approximation 95% half-width, ``1.96 * sd / sqrt(n)`` with sample sd."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return float("nan")
    return float(Z_95 * v.std(ddof=1) / math.sqrt(v.size))


def model_score(model, table: D.Table, metric: str) -> float:
    if hasattr(model, "score_table"):
        return model.score_table(table, metric)
    return score(metric, table.target, model.predict(table))


def importance_columns(table: D.Table) -> list[str]:
    """Columns permuted by default: everything except the target and the group key."""
    skip = {table.schema.target.name, table.schema.group_key}
    return [n for n in table.schema.names if n not in skip]


def permutation_importance(model, test: D.Table, metric: str, seed: int = 0, repeats: int = 5,
                           features=None) -> dict:
    """Mean score drop when each column is shuffled within ``test``.

    One generator seeded with ``seed`` supplies, feature by feature and
    repeat by repeat, the permutation of row positions.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    features = list(features) if features is not None else importance_columns(test)
    baseline = model_score(model, test, metric)
    rng = np.random.default_rng(seed)
    out = {}
    for name in features:
        spec = test.schema[name]
        col = test.column(name)
        drops = []
        for _ in range(repeats):
            shuffled = test.with_column(spec, col[rng.permutation(test.row_count)])
            drops.append(baseline - model_score(model, shuffled, metric))
        out[name] = float(np.mean(drops))
    return out


@dataclass
class EvaluationReport:
    metric: str
    task: str
    score: float
    per_group: dict = field(default_factory=dict)
    repeated_scores: list = field(default_factory=list)
    importances: dict = field(default_factory=dict)
    class_metrics: dict | None = None
    explanation: list = field(default_factory=list)
    timing: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.repeated_scores)) if self.repeated_scores else self.score

    @property
    def half_width(self) -> float:
        return ci_half_width(self.repeated_scores)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric, "task": self.task, "score": self.score,
            "per_group": {str(k): v for k, v in self.per_group.items()},
            "repeated_scores": list(self.repeated_scores),
            "repeated_mean": self.mean,
            "ci_half_width": None if math.isnan(self.half_width) else self.half_width,
            "importances": dict(self.importances),
            "class_metrics": self.class_metrics,
            "explanation": list(self.explanation),
        }


def percent_half_up(fraction: float) -> int:
    return int(Decimal(repr(fraction * 100)).quantize(Decimal("1"), rounding=ROUND_HALF_UP))


def top_features(importances: dict, n: int = 3) -> list[str]:
    """Up to ``n`` inputs whose permutation lowers the score, largest drop first."""
    ranked = sorted(((k, v) for k, v in importances.items() if v > 0), key=lambda kv: (-kv[1], kv[0]))
    return [name for name, _ in ranked[:n]]


def render_explanation(report: EvaluationReport, task: str) -> list[str]:
    """Deterministic sentences describing what the model's numbers mean."""
    if task == "classification":
        per_class = (report.class_metrics or {}).get("per_class", {})
        return [
            f'When the system outputs "{cls}" it is likely to be correct '
            f"{percent_half_up(m['precision'])}% of the time."
            for cls, m in sorted(per_class.items(), key=lambda kv: str(kv[0]))
        ]
    sentence = f"The model reaches {report.metric} = {report.score:.3f} on held-out data"
    hw = report.half_width
    if report.repeated_scores and not math.isnan(hw):
        sentence += (f" (mean {report.mean:.3f} ± {hw:.3f} at 95% confidence over "
                     f"{len(report.repeated_scores)} repeated splits)")
    top = top_features(report.importances)
    if top:
        sentence += "; the most influential inputs are " + ", ".join(top)
    return [sentence + "."]
