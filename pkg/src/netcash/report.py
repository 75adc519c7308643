"""Run report: plain-text sections followed by a JSON trailer.

Layout::

    NETCASH SEARCH REPORT
    == FEASIBILITY ==
    == LEADERBOARD ==
    == EVALUATION ==
    == EXPLANATION ==
    == FEEDBACK ==
    == TRAILER ==
    { ...json, one key per line... }

Only the trailer carries wall-clock values, always under keys ending in
``seconds``; :func:`strip_timing` removes those lines, and what remains is
identical for identical inputs and seeds. ``replay_hash`` covers exactly the
fields replay needs, so editing any of them is detected.
"""

from __future__ import annotations

import hashlib
import json
import math
import re

from . import engine as E
from .context import format_context, parse_context_text
from .errors import ValidationError
from .splitting import policy_from_dict, policy_to_dict, split

FORMAT_VERSION = 1
HEADER = "NETCASH SEARCH REPORT"
SECTIONS = ("FEASIBILITY", "LEADERBOARD", "EVALUATION", "EXPLANATION", "FEEDBACK")
TRAILER = "== TRAILER =="
LEADERBOARD_ROWS = 20

_TIMING_LINE = re.compile(r'^\s*"[A-Za-z0-9_]*seconds": ')


def _num(x) -> str:
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:.4f}"


def replay_payload(outcome) -> dict:
    best = outcome.best
    return {
        "context": format_context(outcome.spec),
        "dataset_fingerprint": outcome.split.train.fingerprint() + ":" + outcome.split.test.fingerprint(),
        "split_policy": policy_to_dict(outcome.constraints.split_policy),
        "partition_mode": outcome.constraints.partition_mode,
        "group_key": outcome.constraints.group_key,
        "metric": outcome.constraints.metric,
        "scoring": outcome.scoring,
        "seed": best.seed,
        "candidate": best.candidate.to_dict(),
        "score": best.score,
    }


def payload_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _feasibility_lines(outcome) -> list[str]:
    if outcome.feasibility is None:
        return ["skipped"]
    return outcome.feasibility.render()


def _leaderboard_lines(outcome) -> list[str]:
    if outcome.leaderboard is None:
        return ["search aborted"]
    s = outcome.space_summary
    lines = [
        f"algorithms: {', '.join(s['algorithms'])}",
        f"stage 1 ranking: {', '.join(outcome.stage1.ranked)} -> survivors {', '.join(outcome.stage1.survivors)}",
        f"stage 1 probe: {s['probe_rows']} rows, {s['probe_share']:.0%} of max_seconds "
        "(budget split between stages is a fixed choice)",
        f"stage 2: {len(outcome.leaderboard)} trials over {', '.join(s['stage2_algorithms'])}, "
        f"a discretized space of {s['stage2_discrete_size']} points, "
        f"{len(outcome.warm_candidates)} warm-start candidate(s)",
        f"partition mode: {outcome.constraints.partition_mode}; scoring: {outcome.scoring}; "
        f"metric: {outcome.constraints.metric}",
        f"{'rank':>4} {'trial':>5} {'score':>9} {'feats':>5}  candidate",
    ]
    for rank, t in enumerate(outcome.leaderboard.trials[:LEADERBOARD_ROWS], start=1):
        if t.failed:
            lines.append(f"{rank:>4} {t.index:>5} {'failed':>9} {'-':>5}  {t.candidate.describe()} [{t.reason}]")
        else:
            lines.append(f"{rank:>4} {t.index:>5} {t.score:9.4f} {t.n_features:>5}  {t.candidate.describe()}")
    hidden = len(outcome.leaderboard) - LEADERBOARD_ROWS
    if hidden > 0:
        lines.append(f"... {hidden} more trial(s) in the trailer")
    return lines


def _evaluation_lines(outcome) -> list[str]:
    ev = outcome.evaluation
    if ev is None:
        return ["not evaluated"]
    lines = [f"{ev.metric}: {_num(ev.score)}",
             f"repeated splits: n={len(ev.repeated_scores)} mean={_num(ev.mean)} ci95 +/- {_num(ev.half_width)}"]
    for g, v in ev.per_group.items():
        lines.append(f"  group {g}: {_num(v)}")
    for name, drop in sorted(ev.importances.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f"  importance {name}: {drop:+.4f}")
    if ev.class_metrics:
        for cls, m in sorted(ev.class_metrics["per_class"].items(), key=lambda kv: str(kv[0])):
            lines.append(f"  class {cls}: precision {m['precision']:.4f} recall {m['recall']:.4f} "
                         f"f1 {m['f1']:.4f} support {m['support']}")
        lines.extend(f"  flag: {f}" for f in ev.class_metrics["flags"])
    return lines


def _feedback_lines(outcome) -> list[str]:
    if not outcome.feedback:
        return ["no suggestions"]
    return [f"[{f.confidence}] {f.suggestion} (evidence: {', '.join(f.record_ids)})" for f in outcome.feedback]


def render(outcome) -> str:
    explanation = outcome.evaluation.explanation if outcome.evaluation else []
    body = {
        "FEASIBILITY": _feasibility_lines(outcome),
        "LEADERBOARD": _leaderboard_lines(outcome),
        "EVALUATION": _evaluation_lines(outcome),
        "EXPLANATION": list(explanation) or ["none"],
        "FEEDBACK": _feedback_lines(outcome),
    }
    out = [HEADER]
    for name in SECTIONS:
        out.append(f"== {name} ==")
        out.extend(body[name])
    trailer = {
        "format_version": FORMAT_VERSION,
        "aborted": outcome.aborted,
        "context": format_context(outcome.spec),
        "feasibility": outcome.feasibility.to_dict() if outcome.feasibility else None,
        "timing": dict(outcome.timing),
    }
    if not outcome.aborted:
        payload = replay_payload(outcome)
        trailer.update({
            "replay": payload,
            "replay_hash": payload_hash(payload),
            "stage1": {"ranked": outcome.stage1.ranked, "survivors": outcome.stage1.survivors,
                       "trials": [t.to_dict() for t in outcome.stage1.trials]},
            "leaderboard": [t.to_dict() for t in outcome.leaderboard.trials],
            "evaluation": outcome.evaluation.to_dict() if outcome.evaluation else None,
            "feedback": [f.to_dict() for f in outcome.feedback],
            "record_id": outcome.record.record_id if outcome.record else None,
            "total_fit_seconds": outcome.total_fit_seconds,
        })
    out.append(TRAILER)
    out.append(json.dumps(trailer, indent=1, sort_keys=True, allow_nan=True))
    return "\n".join(out) + "\n"


def strip_timing(text: str) -> str:
    return "\n".join(line for line in text.split("\n") if not _TIMING_LINE.match(line))


def parse_trailer(text: str) -> dict:
    if TRAILER not in text:
        raise ValidationError("report has no trailer block")
    try:
        return json.loads(text.split(TRAILER, 1)[1])
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report trailer is not valid JSON: {exc}") from None


def replay_context(trailer: dict):
    return parse_context_text(verified_payload(trailer)["context"])


def verified_payload(trailer: dict) -> dict:
    payload = trailer.get("replay")
    if payload is None:
        raise ValidationError("report holds no replayable result (aborted search)")
    if payload_hash(payload) != trailer.get("replay_hash"):
        raise ValidationError("replay hash mismatch: the report was modified")
    return payload


def replay(trailer: dict, table) -> tuple[float, float]:
    """Re-run the recorded best candidate; returns ``(recorded, recomputed)`` scores."""
    payload = verified_payload(trailer)
    parts = split(table, policy_from_dict(payload["split_policy"]))
    fp = parts.train.fingerprint() + ":" + parts.test.fingerprint()
    if fp != payload["dataset_fingerprint"]:
        raise ValidationError("dataset does not match the one recorded in the report")
    trial = E.evaluate_candidate(E.Candidate.from_dict(payload["candidate"]), parts, payload["metric"],
                                 payload["partition_mode"], payload["seed"], group_key=payload["group_key"],
                                 scoring=payload["scoring"])
    if trial.failed:
        raise ValidationError(f"replayed trial failed: {trial.reason}")
    return payload["score"], trial.score
