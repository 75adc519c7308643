"""Staged search over the conditional algorithm x hyper-parameter x transform space.

Stage 1 probes every allowed algorithm once (domain-default parameters,
baseline chain) and keeps the better half. Stage 2 tunes the survivors:
warm-start candidates first, then either exhaustive enumeration of the
discretized space (when it fits in the trial budget) or seeded random
sampling, round-robin across survivors.

Scores are maximized. Every trial of one search fits its model with the same
seed, so a candidate's score is a pure function of (candidate, split, seed)
and the leaderboard never depends on trial order.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from .context import PER_GROUP, POOLED, SearchConstraints
from .errors import SearchError
from .evaluation import min_rows, per_group_average, score
from .learners import (CATALOG_ORDER, FittedModel, check_assignment, default_assignment, default_domain,
                       grid_size, sample_assignment)
from .learners import fit as fit_model
from .learners import predict as predict_model
from .splitting import SplitResult, first_appearance
from .transforms import (FittedChain, apply_chain, chain_from_dict, chain_to_dict, describe_chain,
                         enumerate_transform_choices, fit_chain)

log = logging.getLogger(__name__)

MIN_GROUP_TRAIN_ROWS = 5
PROBE_MAX_ROWS = 2000
PROBE_SHARE = 0.25

POOLED_SCORING = "pooled"
GROUP_AVERAGE_SCORING = "group_average"


@dataclass(frozen=True)
class Candidate:
    algorithm: str
    params: dict
    chain: tuple

    def key(self) -> str:
        return json.dumps([self.algorithm, self.params, chain_to_dict(self.chain)], sort_keys=True)

    def __hash__(self):
        return hash(self.key())

    def __eq__(self, other):
        return isinstance(other, Candidate) and self.key() == other.key()

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "params": dict(self.params), "chain": chain_to_dict(self.chain)}

    @classmethod
    def from_dict(cls, d: dict) -> "Candidate":
        return cls(d["algorithm"], dict(d["params"]), chain_from_dict(d["chain"]))

    def describe(self) -> str:
        params = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.params.items())
        return f"{self.algorithm}({params}) | {describe_chain(self.chain)}"


@dataclass
class SearchSpace:
    constraints: SearchConstraints
    algorithms: tuple
    domains: dict
    chains: list

    @property
    def stage1_size(self) -> int:
        return len(self.algorithms) * len(self.chains)

    def discrete_size(self, algorithms=None) -> int:
        algorithms = self.algorithms if algorithms is None else algorithms
        return sum(grid_size(self.domains[a]) for a in algorithms) * len(self.chains)

    def contains(self, cand: Candidate) -> bool:
        if cand.algorithm not in self.algorithms or tuple(cand.chain) not in [tuple(c) for c in self.chains]:
            return False
        try:
            check_assignment(self.domains[cand.algorithm], cand.params)
        except ValueError:
            return False
        return True

    def enumerate(self, algorithms=None):
        """Every point of the discretized space: algorithm, then parameter grid, then chain."""
        for alg in (self.algorithms if algorithms is None else algorithms):
            dom = self.domains[alg]
            names = list(dom)
            for values in itertools.product(*(dom[n].grid() for n in names)):
                for chain in self.chains:
                    yield Candidate(alg, dict(zip(names, values)), tuple(chain))


def build_space(constraints: SearchConstraints, schema: D.Schema, *, domains=None, chains=None) -> SearchSpace:
    algorithms = tuple(a for a in CATALOG_ORDER if a in constraints.allowed_algorithms)
    if not algorithms:
        raise SearchError("search space has no algorithms")
    doms = {a: (domains or {}).get(a, default_domain(a)) for a in algorithms}
    menu = [tuple(c) for c in (chains if chains is not None else enumerate_transform_choices(constraints, schema))]
    if not menu:
        raise SearchError("search space has no transform chains")
    space = SearchSpace(constraints, algorithms, doms, menu)
    log.info("search space: %d algorithms x %d chains", len(algorithms), len(menu))
    return space


# --- fitted pipelines ---------------------------------------------------------

@dataclass
class FittedPipeline:
    chain: FittedChain
    model: FittedModel

    @property
    def n_features(self) -> int:
        return len(self.model.features)

    def predict(self, table: D.Table) -> np.ndarray:
        return predict_model(self.model, apply_chain(self.chain, table))

    def score_table(self, table: D.Table, metric: str) -> float:
        return score(metric, table.target, self.predict(table))

    def group_scores(self, table: D.Table, metric: str, key: str) -> dict:
        yhat = self.predict(table)
        return _scores_by_group(table, yhat, metric, key)


@dataclass
class GroupedPipeline:
    """One pipeline per group; rows of groups without a model predict missing."""

    group_key: str
    members: dict
    skipped: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return max((p.n_features for p in self.members.values()), default=0)

    def predict(self, table: D.Table) -> np.ndarray:
        keys = table.column(self.group_key)
        out = None
        for g, rows in first_appearance(keys).items():
            if g not in self.members:
                continue
            yhat = self.members[g].predict(table.take(rows))
            if out is None:
                out = np.full(table.row_count, np.nan) if yhat.dtype != object else np.full(table.row_count, None, dtype=object)
            out[rows] = yhat
        if out is None:
            return np.full(table.row_count, np.nan)
        return out

    def group_scores(self, table: D.Table, metric: str, key: str | None = None) -> dict:
        scores = {}
        for g, rows in first_appearance(table.column(self.group_key)).items():
            if g in self.members and len(rows) >= min_rows(metric):
                sub = table.take(rows)
                scores[g] = self.members[g].score_table(sub, metric)
        return scores

    def score_table(self, table: D.Table, metric: str) -> float:
        scores = self.group_scores(table, metric)
        if not scores:
            raise SearchError("no group has both a model and enough test rows")
        return per_group_average(scores)


def _scores_by_group(table: D.Table, yhat, metric: str, key: str) -> dict:
    out = {}
    y = table.target
    for g, rows in first_appearance(table.column(key)).items():
        if len(rows) >= min_rows(metric):
            out[g] = score(metric, y[rows], yhat[rows])
    return out


def fit_pipeline(cand: Candidate, train: D.Table, seed: int) -> FittedPipeline:
    fitted = fit_chain(cand.chain, train)
    model = fit_model(cand.algorithm, cand.params, apply_chain(fitted, train), seed, check_domain=False)
    return FittedPipeline(fitted, model)


def fit_grouped(cand: Candidate, train: D.Table, seed: int, key: str, groups=None) -> GroupedPipeline:
    """Fit one pipeline per group of ``train`` with at least 5 rows (optionally only ``groups``)."""
    members, skipped = {}, {}
    for g, rows in first_appearance(train.column(key)).items():
        if groups is not None and g not in groups:
            continue
        if len(rows) < MIN_GROUP_TRAIN_ROWS:
            skipped[g] = f"{len(rows)} train rows < {MIN_GROUP_TRAIN_ROWS}"
            continue
        members[g] = fit_pipeline(cand, train.take(rows), seed)
    return GroupedPipeline(key, members, skipped)


# --- trials -------------------------------------------------------------------

@dataclass
class TrialRecord:
    index: int
    candidate: Candidate
    score: float | None
    seed: int
    partition_mode: str
    per_group_scores: dict = field(default_factory=dict)
    skipped_groups: dict = field(default_factory=dict)
    n_features: int = 0
    fit_seconds: float = 0.0
    total_seconds: float = 0.0
    failed: bool = False
    reason: str = ""
    stage: int = 2

    def to_dict(self) -> dict:
        return {
            "index": self.index, "stage": self.stage, "candidate": self.candidate.to_dict(),
            "score": self.score, "failed": self.failed, "reason": self.reason, "seed": self.seed,
            "partition_mode": self.partition_mode, "n_features": self.n_features,
            "per_group_scores": {str(k): v for k, v in self.per_group_scores.items()},
            "skipped_groups": {str(k): v for k, v in self.skipped_groups.items()},
            "fit_seconds": self.fit_seconds, "total_seconds": self.total_seconds,
        }


def evaluate_candidate(candidate: Candidate, split: SplitResult, metric: str, partition_mode: str = POOLED,
                       seed: int = 0, *, group_key: str | None = None, scoring: str = POOLED_SCORING,
                       index: int = 0, stage: int = 2) -> TrialRecord:
    """Fit on ``split.train`` and score on ``split.test``. Failures are recorded, never raised.

    In per-group mode a group is scored when it has at least 5 train rows and
    enough test rows for the metric (2 for R^2, else 1); the trial score is
    the unweighted mean over scored groups.
    """
    key = group_key or split.train.schema.group_key
    rec = TrialRecord(index, candidate, None, seed, partition_mode, stage=stage)
    t0 = time.perf_counter()
    try:
        if partition_mode == PER_GROUP:
            if key is None:
                raise SearchError("per-group training needs a group key")
            test_groups = first_appearance(split.test.column(key))
            train_groups = first_appearance(split.train.column(key))
            eligible, skipped = set(), {}
            for g, rows in train_groups.items():
                n_test = len(test_groups.get(g, ()))
                if len(rows) < MIN_GROUP_TRAIN_ROWS:
                    skipped[g] = f"{len(rows)} train rows < {MIN_GROUP_TRAIN_ROWS}"
                elif n_test < min_rows(metric):
                    skipped[g] = f"{n_test} test rows"
                else:
                    eligible.add(g)
            model = fit_grouped(candidate, split.train, seed, key, groups=eligible)
            rec.fit_seconds = time.perf_counter() - t0
            rec.skipped_groups = skipped
            rec.per_group_scores = model.group_scores(split.test, metric)
            if not rec.per_group_scores:
                raise SearchError("no group had enough train and test rows")
            rec.score = per_group_average(rec.per_group_scores)
        else:
            model = fit_pipeline(candidate, split.train, seed)
            rec.fit_seconds = time.perf_counter() - t0
            yhat = model.predict(split.test)
            if key is not None and key in split.test.schema:
                rec.per_group_scores = _scores_by_group(split.test, yhat, metric, key)
            if scoring == GROUP_AVERAGE_SCORING:
                if not rec.per_group_scores:
                    raise SearchError("no group had enough test rows for per-group scoring")
                rec.score = per_group_average(rec.per_group_scores)
            else:
                rec.score = score(metric, split.test.target, yhat)
        rec.n_features = model.n_features
        if not math.isfinite(rec.score):
            raise SearchError(f"non-finite score {rec.score}")
    except Exception as exc:  # noqa: BLE001 - a failed trial must not stop the search
        rec.failed = True
        rec.score = None
        rec.reason = f"{type(exc).__name__}: {exc}"
    rec.total_seconds = time.perf_counter() - t0
    return rec


@dataclass
class Leaderboard:
    trials: list

    def __post_init__(self):
        self.trials = sorted(self.trials, key=rank_key)

    @property
    def ok(self) -> list:
        return [t for t in self.trials if not t.failed]

    @property
    def best(self) -> TrialRecord | None:
        ok = self.ok
        return ok[0] if ok else None

    def __len__(self):
        return len(self.trials)

    def to_dict(self) -> dict:
        return {"trials": [t.to_dict() for t in self.trials]}


def rank_key(t: TrialRecord):
    """Best first: higher score, then fewer features, then earlier trial; failures last."""
    if t.failed:
        return (1, 0.0, 0, t.index)
    return (0, -t.score, t.n_features, t.index)


# --- stage 1 --------------------------------------------------------------------

@dataclass
class StageOneResult:
    ranked: list
    survivors: list
    trials: list


def n_survivors(n: int) -> int:
    return min(n, max(2, math.ceil(n / 2)))


def select_algorithm_stage(space: SearchSpace, probe: SplitResult, budget_seconds: float = math.inf,
                           seed: int = 0, *, scoring: str = POOLED_SCORING) -> StageOneResult:
    """Probe each algorithm once with default parameters on the first (baseline) chain."""
    c = space.constraints
    chain = space.chains[0]
    start = time.perf_counter()
    trials = []
    for i, alg in enumerate(space.algorithms):
        cand = Candidate(alg, default_assignment(space.domains[alg]), chain)
        if time.perf_counter() - start > budget_seconds:
            trials.append(TrialRecord(i, cand, None, seed, c.partition_mode, failed=True,
                                      reason="probe budget exhausted", stage=1))
            continue
        trials.append(evaluate_candidate(cand, probe, c.metric, c.partition_mode, seed,
                                         group_key=c.group_key, scoring=scoring, index=i, stage=1))
    ordered = sorted(trials, key=lambda t: (t.failed, -(t.score or 0.0), t.index))
    if all(t.failed for t in trials):
        reasons = {t.candidate.algorithm: t.reason for t in trials}
        raise SearchError("no viable algorithm: every probe failed", reasons)
    ranked = [t.candidate.algorithm for t in ordered]
    viable = [t.candidate.algorithm for t in ordered if not t.failed]
    survivors = viable[:n_survivors(len(ranked))] or viable[:1]
    return StageOneResult(ranked, survivors, trials)


# --- stage 2 --------------------------------------------------------------------

def stage_two_algorithms(space: SearchSpace, stage1: StageOneResult, max_trials: int) -> list:
    """Algorithms tuned in stage 2.

    Normally the stage-1 survivors. When every viable algorithm's full grid
    fits in the trial budget, pruning could only lose the optimum, so all
    viable algorithms are enumerated instead (stage 1 still reports its ranking).
    """
    viable = [a for a in stage1.ranked if any(t.candidate.algorithm == a and not t.failed for t in stage1.trials)]
    if space.discrete_size(viable) <= max_trials:
        return viable
    return list(stage1.survivors)


def stage_two_candidates(survivors, space: SearchSpace, max_trials: int, seed: int, warm=()):
    """Lazily yield the stage-2 trial stream."""
    seen = set()
    count = 0
    for cand in warm:
        if count >= max_trials:
            return
        if not space.contains(cand):
            log.info("warm-start candidate outside the space skipped: %s", cand.describe())
            continue
        if cand in seen:
            continue
        seen.add(cand)
        count += 1
        yield cand
    if space.discrete_size(survivors) <= max_trials:
        for cand in space.enumerate(survivors):
            if count >= max_trials:
                return
            if cand in seen:
                continue
            seen.add(cand)
            count += 1
            yield cand
        return
    rng = np.random.default_rng(seed)
    i = 0
    while count < max_trials:
        alg = survivors[i % len(survivors)]
        params = sample_assignment(space.domains[alg], rng)
        chain = space.chains[int(rng.integers(len(space.chains)))]
        i += 1
        count += 1
        yield Candidate(alg, params, chain)


def _evaluate_job(args):
    cand, split, metric, mode, seed, key, scoring, index = args
    return evaluate_candidate(cand, split, metric, mode, seed, group_key=key, scoring=scoring, index=index)


def tune_stage(survivors, space: SearchSpace, split: SplitResult, budget, *, warm=(), deadline=None,
               scoring: str = POOLED_SCORING, jobs: int = 1) -> Leaderboard:
    """Evaluate the stage-2 stream until ``budget.max_trials`` or the deadline."""
    if not survivors:
        raise SearchError("stage 2 needs at least one surviving algorithm")
    c = space.constraints
    if deadline is None:
        deadline = time.perf_counter() + budget.max_seconds
    stream = stage_two_candidates(list(survivors), space, budget.max_trials, budget.seed, warm)
    trials = []
    if jobs <= 1:
        for index, cand in enumerate(stream):
            if time.perf_counter() >= deadline:
                break
            trials.append(evaluate_candidate(cand, split, c.metric, c.partition_mode, budget.seed,
                                             group_key=c.group_key, scoring=scoring, index=index))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            index = 0
            while True:
                batch = list(itertools.islice(stream, jobs))
                if not batch or time.perf_counter() >= deadline:
                    break
                args = [(cand, split, c.metric, c.partition_mode, budget.seed, c.group_key, scoring, index + k)
                        for k, cand in enumerate(batch)]
                trials.extend(pool.map(_evaluate_job, args))
                index += len(batch)
    board = Leaderboard(trials)
    if board.best is None:
        reasons = {f"trial {t.index}": t.reason for t in trials} or {"budget": "deadline reached before any trial"}
        raise SearchError("budget exhausted before any successful trial", reasons)
    return board


def probe_split(table: D.Table, policy, seed: int, split_fn) -> SplitResult:
    """Split of at most ``PROBE_MAX_ROWS`` rows used by stage 1 (the main split when the table is small)."""
    if table.row_count <= PROBE_MAX_ROWS:
        return split_fn(table, policy)
    return split_fn(D.subsample(table, PROBE_MAX_ROWS, seed), policy)


def brute_force_best(space: SearchSpace, algorithms, split: SplitResult, seed: int,
                     scoring: str = POOLED_SCORING) -> float:
    """Best score over the whole discretized space, ignoring any budget."""
    c = space.constraints
    best = -math.inf
    for cand in space.enumerate(algorithms):
        t = evaluate_candidate(cand, split, c.metric, c.partition_mode, seed, group_key=c.group_key, scoring=scoring)
        if not t.failed:
            best = max(best, t.score)
    return best
