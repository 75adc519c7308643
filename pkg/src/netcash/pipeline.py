"""End-to-end search: feasibility -> split -> stage 1 -> stage 2 -> refit -> evaluation -> store -> feedback."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

from . import data as D
from . import engine as E
from .context import PER_GROUP, ContextSpec, SearchConstraints, derive_constraints, validate
from .errors import ValidationError
from .evaluation import (EvaluationReport, classification_metrics, model_score, permutation_importance,
                         render_explanation)
from .feasibility import INFEASIBLE, FeasibilityReport, assess
from .metastore import (FeedbackItem, RunRecord, RunStore, compute_meta_features, customization_flags,
                        generate_feedback, new_record, warm_start)
from .splitting import GroupAware, Random, SplitResult, split

log = logging.getLogger(__name__)

WARM_START_K = 3
EVAL_REPEATS = 3
IMPORTANCE_REPEATS = 3


@dataclass
class SearchOutcome:
    spec: ContextSpec
    feasibility: FeasibilityReport | None
    aborted: bool = False
    constraints: SearchConstraints | None = None
    space_summary: dict = field(default_factory=dict)
    stage1: E.StageOneResult | None = None
    leaderboard: E.Leaderboard | None = None
    warm_candidates: list = field(default_factory=list)
    model: object = None
    split: SplitResult | None = None
    evaluation: EvaluationReport | None = None
    feedback: list = field(default_factory=list)
    record: RunRecord | None = None
    scoring: str = E.POOLED_SCORING
    timing: dict = field(default_factory=dict)

    @property
    def best(self) -> E.TrialRecord | None:
        return self.leaderboard.best if self.leaderboard else None

    @property
    def total_fit_seconds(self) -> float:
        trials = (self.stage1.trials if self.stage1 else []) + (self.leaderboard.trials if self.leaderboard else [])
        return math.fsum(t.fit_seconds for t in trials)


def refit_best(cand: E.Candidate, train: D.Table, constraints: SearchConstraints, seed: int):
    """Refit the winning candidate on the full training half (every group with enough rows)."""
    if constraints.partition_mode == PER_GROUP:
        return E.fit_grouped(cand, train, seed, constraints.group_key)
    return E.fit_pipeline(cand, train, seed)


def _reseeded(policy, seed: int):
    if isinstance(policy, (Random, GroupAware)):
        return dataclasses.replace(policy, seed=seed)
    return policy


def evaluate_outcome(outcome: SearchOutcome, table: D.Table, *, repeats: int = EVAL_REPEATS,
                     importance_repeats: int = IMPORTANCE_REPEATS) -> EvaluationReport:
    spec, c, best = outcome.spec, outcome.constraints, outcome.best
    seed = spec.budget.seed
    test = outcome.split.test
    if outcome.scoring == E.GROUP_AVERAGE_SCORING:
        overall = best.score
    else:
        overall = model_score(outcome.model, test, c.metric)
    repeated = [overall]
    for r in range(1, repeats):
        alt = split(table, _reseeded(c.split_policy, seed + r))
        t = E.evaluate_candidate(best.candidate, alt, c.metric, c.partition_mode, seed,
                                 group_key=c.group_key, scoring=outcome.scoring)
        if not t.failed:
            repeated.append(t.score)
    importances = {}
    if importance_repeats > 0:
        importances = permutation_importance(outcome.model, test, c.metric, seed, importance_repeats)
    class_metrics = None
    if spec.task == "classification":
        yhat = outcome.model.predict(test)
        keep = [i for i, v in enumerate(yhat) if v is not None and not (isinstance(v, float) and math.isnan(v))]
        class_metrics = classification_metrics(test.target[keep], yhat[keep])
    report = EvaluationReport(c.metric, spec.task, overall, dict(best.per_group_scores), repeated,
                              importances, class_metrics)
    report.explanation = render_explanation(report, spec.task)
    return report


def run_search(table: D.Table, spec: ContextSpec, *, store: RunStore | None = None,
               override_infeasible: bool = False, check_feasibility: bool = True, chains=None, domains=None,
               scoring: str = E.POOLED_SCORING, jobs: int = 1, evaluate: bool = True,
               eval_repeats: int = EVAL_REPEATS, importance_repeats: int = IMPORTANCE_REPEATS) -> SearchOutcome:
    problems = validate(spec, table.schema)
    if problems:
        raise ValidationError("; ".join(problems))
    seed = spec.budget.seed
    start = time.perf_counter()
    timing = {}

    report = None
    if check_feasibility:
        report = assess(table, spec, seed)
        timing["feasibility_seconds"] = time.perf_counter() - start
        if report.verdict == INFEASIBLE and not override_infeasible:
            log.warning("infeasible dataset, search aborted: %s", report.rationale)
            return SearchOutcome(spec, report, aborted=True, timing=timing)

    search_start = time.perf_counter()
    deadline = search_start + spec.budget.max_seconds
    constraints = derive_constraints(spec, table)
    space = E.build_space(constraints, table.schema, domains=domains, chains=chains)
    main = split(table, constraints.split_policy)
    probe = E.probe_split(table, constraints.split_policy, seed, split)

    records = store.load() if store is not None else []
    meta = compute_meta_features(table, spec) if store is not None else None
    warm = warm_start(meta, spec.category, WARM_START_K, records) if records else []

    stage1 = E.select_algorithm_stage(space, probe, E.PROBE_SHARE * spec.budget.max_seconds, seed, scoring=scoring)
    timing["stage1_seconds"] = time.perf_counter() - search_start
    t2 = time.perf_counter()
    tuned = E.stage_two_algorithms(space, stage1, spec.budget.max_trials)
    board = E.tune_stage(tuned, space, main, spec.budget, warm=warm, deadline=deadline,
                         scoring=scoring, jobs=jobs)
    timing["stage2_seconds"] = time.perf_counter() - t2

    outcome = SearchOutcome(spec, report, constraints=constraints, stage1=stage1, leaderboard=board,
                            warm_candidates=warm, split=main, scoring=scoring, timing=timing)
    outcome.space_summary = {
        "algorithms": list(space.algorithms), "n_chains": len(space.chains),
        "stage1_size": space.stage1_size, "stage2_algorithms": tuned,
        "stage2_discrete_size": space.discrete_size(tuned),
        "probe_share": E.PROBE_SHARE, "probe_rows": probe.train.row_count + probe.test.row_count,
    }
    t3 = time.perf_counter()
    outcome.model = refit_best(board.best.candidate, main.train, constraints, seed)
    timing["refit_seconds"] = time.perf_counter() - t3
    if evaluate:
        t4 = time.perf_counter()
        outcome.evaluation = evaluate_outcome(outcome, table, repeats=eval_repeats,
                                              importance_repeats=importance_repeats)
        timing["evaluation_seconds"] = time.perf_counter() - t4

    if store is not None:
        best = board.best
        record = new_record(
            category=spec.category, metric=constraints.metric, context_fingerprint=spec.fingerprint(),
            dataset_fingerprint=table.fingerprint(), meta_features=meta,
            best_candidate=best.candidate.to_dict(), best_score=best.score,
            partition_mode=constraints.partition_mode, n_features=best.n_features,
            total_fit_seconds=outcome.total_fit_seconds,
            flags=customization_flags(best.candidate, table.schema, constraints.partition_mode),
        )
        store.append(record)
        outcome.record = record
        outcome.feedback = generate_feedback(record, records, group_key_available=spec.group_key is not None)
    timing["total_seconds"] = time.perf_counter() - start
    return outcome


__all__ = ["SearchOutcome", "run_search", "refit_best", "evaluate_outcome", "FeedbackItem"]
