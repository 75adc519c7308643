"""Pre-search feasibility check: a rank-correlation screen plus cheap probe models.

The verdict is a pure function of the screen, the probe scores and the
thresholds; :func:`verdict` can be called directly on hand-made numbers.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data as D
from .context import ContextSpec, FeasibilityThresholds, derive_constraints
from .engine import Candidate, evaluate_candidate
from .evaluation import is_constant
from .splitting import split
from .transforms import baseline_chain

FEASIBLE = "feasible"
BORDERLINE = "borderline"
INFEASIBLE = "infeasible"
VERDICTS = (FEASIBLE, BORDERLINE, INFEASIBLE)

PROBE_MAX_ROWS = 2000
PROBE_K = 5
WORST = -math.inf


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the positions they occupy."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    sx = x[order]
    n = x.size
    # boundaries of runs of equal values in sorted order
    starts = np.flatnonzero(np.r_[True, sx[1:] != sx[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0  # mean of positions start+1 .. end
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(x, y, *, return_flag: bool = False):
    """Pearson correlation of average ranks. A constant input gives 0 (flagged degenerate)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise ValueError("spearman needs at least 3 values")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("spearman needs finite values")
    rx, ry = average_ranks(x), average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if den == 0:
        return (0.0, True) if return_flag else 0.0
    rho = max(-1.0, min(1.0, float(rx @ ry) / den))
    return (rho, False) if return_flag else rho


def _target_signals(table: D.Table, task: str) -> dict:
    """Numeric views of the target to correlate against: the values, or one indicator per class."""
    y = table.target
    if task == "regression":
        return {"": np.asarray(y, dtype=float)}
    labels = sorted({str(v) for v in y})
    if len(labels) == 2:
        return {"": np.array([str(v) == labels[1] for v in y], dtype=float)}
    return {f"[{c}]": np.array([str(v) == c for v in y], dtype=float) for c in labels}


def spearman_screen(table: D.Table, task: str) -> tuple[dict, list]:
    """|rho| of every numeric feature against the target (max over class indicators).

    Rows missing the feature are skipped for that feature. Categorical and
    identifier features are not screened (their ranks are undefined).
    """
    targets = _target_signals(table, task)
    out, notes = {}, []
    for spec in table.schema.columns:
        if spec.role != D.FEATURE:
            continue
        if spec.dtype != D.NUMERIC:
            notes.append(f"{spec.name}: {spec.dtype} feature excluded from the rank screen")
            continue
        x = table.column(spec.name)
        ok = ~np.isnan(x)
        if ok.sum() < 3:
            notes.append(f"{spec.name}: fewer than 3 non-missing values, not screened")
            continue
        best = 0.0
        for suffix, t in targets.items():
            rho, degenerate = spearman(x[ok], t[ok], return_flag=True)
            if degenerate:
                notes.append(f"{spec.name}{suffix}: constant input, rho defined as 0")
            if abs(rho) >= abs(best):
                best = rho
        out[spec.name] = best
    return out, notes


def probe_candidates(task: str, chain) -> dict:
    if task == "regression":
        return {
            "constant": Candidate("ConstantMean", {}, chain),
            "linear": Candidate("LinearLeastSquares", {}, chain),
            "knn": Candidate("KNNRegressor", {"k": PROBE_K, "weighting": "uniform"}, chain),
        }
    return {
        "constant": Candidate("MajorityClass", {}, chain),
        "knn": Candidate("KNNClassifier", {"k": PROBE_K, "weighting": "uniform"}, chain),
    }


def probe(table: D.Table, spec: ContextSpec, seed: int = 0) -> tuple[dict, float | None, dict]:
    """Score the probe models on a leakage-safe split of at most 2000 rows.

    Returns ``(scores, base_rate, failures)``; a failed probe scores ``-inf``.
    ``base_rate`` is the majority-class share of the probe test rows
    (classification only).
    """
    constraints = derive_constraints(spec, table)
    sub = table if table.row_count <= PROBE_MAX_ROWS else D.subsample(table, PROBE_MAX_ROWS, seed)
    parts = split(sub, constraints.split_policy)
    chain = baseline_chain(constraints, sub.schema)
    scores, failures = {}, {}
    for name, cand in probe_candidates(spec.task, chain).items():
        trial = evaluate_candidate(cand, parts, spec.metric, constraints.partition_mode, seed,
                                   group_key=constraints.group_key)
        if trial.failed:
            scores[name] = WORST
            failures[name] = trial.reason
        else:
            scores[name] = trial.score
    base_rate = None
    if spec.task == "classification":
        labels = [str(v) for v in parts.test.target]
        base_rate = max(labels.count(c) for c in set(labels)) / len(labels)
    return scores, base_rate, failures


def verdict(max_abs_spearman: float, probe_scores: dict, task: str, thresholds: FeasibilityThresholds,
            base_rate: float | None = None) -> tuple[str, str]:
    """``(verdict, rationale)`` from the screen and probe numbers alone."""
    best_name = max(sorted(probe_scores), key=lambda k: probe_scores[k]) if probe_scores else None
    best = probe_scores[best_name] if best_name else WORST
    if task == "regression":
        low, high, unit = thresholds.infeasible_r2, thresholds.feasible_r2, "R^2"
    else:
        base = base_rate or 0.0
        low = base + thresholds.infeasible_accuracy_margin
        high = base + thresholds.feasible_accuracy_margin
        unit = f"score (base rate {base:.3f})"
    cites = (f"max |spearman| = {max_abs_spearman:.3f} (threshold {thresholds.min_abs_spearman}); "
             f"best probe {best_name} {unit} = {best:.3f}")
    if max_abs_spearman < thresholds.min_abs_spearman and best < low:
        return INFEASIBLE, f"{cites} < {low:.3f}: no feature is rank-correlated with the target and no probe beats the floor"
    if best >= high:
        return FEASIBLE, f"{cites} >= {high:.3f}"
    return BORDERLINE, f"{cites} lies between {low:.3f} and {high:.3f} or the screen found signal"


@dataclass
class FeasibilityReport:
    per_feature_spearman: dict
    max_abs_spearman: float
    probe_scores: dict
    verdict: str
    rationale: str
    thresholds: FeasibilityThresholds
    base_rate: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict, "rationale": self.rationale,
            "per_feature_spearman": dict(self.per_feature_spearman),
            "max_abs_spearman": self.max_abs_spearman,
            "probe_scores": {k: (None if v == WORST else v) for k, v in self.probe_scores.items()},
            "base_rate": self.base_rate, "thresholds": asdict(self.thresholds), "notes": list(self.notes),
        }

    def render(self) -> list[str]:
        lines = [f"verdict: {self.verdict}", f"rationale: {self.rationale}",
                 f"max_abs_spearman: {self.max_abs_spearman:.4f}"]
        for name, rho in self.per_feature_spearman.items():
            lines.append(f"  spearman {name}: {rho:+.4f}")
        for name, s in self.probe_scores.items():
            lines.append(f"  probe {name}: {s:.4f}")
        lines.extend(f"  note: {n}" for n in self.notes)
        return lines


def assess(table: D.Table, spec: ContextSpec, seed: int = 0) -> FeasibilityReport:
    rhos, notes = spearman_screen(table, spec.task)
    max_abs = max((abs(r) for r in rhos.values()), default=0.0)
    if spec.task == "regression" and is_constant(table.target):
        notes.append("target is constant")
    scores, base_rate, failures = probe(table, spec, seed)
    notes.extend(f"probe {k} failed: {v}" for k, v in failures.items())
    v, why = verdict(max_abs, scores, spec.task, spec.thresholds, base_rate)
    return FeasibilityReport(rhos, max_abs, scores, v, why, spec.thresholds, base_rate, notes)
