"""Run history: meta-features, the append-only JSONL store, warm start and feedback rules."""

from __future__ import annotations

import fcntl
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as D
from .context import ContextSpec
from .engine import Candidate
from .errors import DataIOError
from .feasibility import spearman_screen

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
STORE_ENV = "NETCASH_STORE"

HIGH_EVIDENCE = 5
MEDIUM_EVIDENCE = 2
PER_GROUP_GAIN = 0.1
IDENTIFIER_SCORE_TOLERANCE = 0.02
FEATURE_GROWTH_SCORE_DROP = 0.05


@dataclass(frozen=True)
class MetaFeatures:
    n_rows: int
    n_features: int
    fraction_categorical: float
    n_groups: int
    target_cv: float
    max_abs_spearman: float

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)


def coefficient_of_variation(values) -> float:
    v = np.asarray(values, dtype=float)
    mean = float(v.mean())
    if mean == 0:
        return 0.0
    return float(v.std() / abs(mean))


def compute_meta_features(table: D.Table, spec: ContextSpec) -> MetaFeatures:
    feats = [c for c in table.schema.columns if c.role == D.FEATURE]
    n_cat = sum(c.dtype in (D.CATEGORICAL, D.IDENTIFIER) for c in feats)
    key = table.schema.group_key
    n_groups = len(set(table.column(key))) if key else 1
    if spec.task == "regression":
        cv = coefficient_of_variation(table.target)
    else:
        labels = [str(v) for v in table.target]
        cv = coefficient_of_variation([labels.count(c) for c in sorted(set(labels))])
    rhos, _ = spearman_screen(table, spec.task)
    return MetaFeatures(
        n_rows=table.row_count,
        n_features=len(feats),
        fraction_categorical=n_cat / len(feats) if feats else 0.0,
        n_groups=n_groups,
        target_cv=cv,
        max_abs_spearman=max((abs(r) for r in rhos.values()), default=0.0),
    )


@dataclass
class RunRecord:
    record_id: str
    timestamp: float
    category: str
    metric: str
    context_fingerprint: str
    dataset_fingerprint: str
    meta_features: MetaFeatures
    best_candidate: dict
    best_score: float
    partition_mode: str
    n_features: int
    total_fit_seconds: float
    flags: dict = field(default_factory=dict)

    @property
    def candidate(self) -> Candidate:
        return Candidate.from_dict(self.best_candidate)

    def to_dict(self) -> dict:
        d = {"format_version": FORMAT_VERSION}
        d.update(asdict(self))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        d = dict(d)
        version = d.pop("format_version", None)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported store format_version {version!r}")
        d["meta_features"] = MetaFeatures(**d["meta_features"])
        return cls(**d)


def customization_flags(candidate: Candidate, schema: D.Schema, partition_mode: str) -> dict:
    """Which customizations a run used: per-group training, identifier removal, aggregate features."""
    dropped = set()
    for step in candidate.chain:
        if type(step).__name__ == "DropColumns":
            dropped.update(step.names)
    identifiers = [c.name for c in schema.columns if c.dtype == D.IDENTIFIER or c.role == D.ENTITY_KEY]
    return {
        "per_group": partition_mode == "per_group",
        "has_identifiers": bool(identifiers),
        "dropped_identifiers": bool(identifiers) and all(n in dropped for n in identifiers),
        "aggregate_features": any(type(s).__name__ in ("GroupSize", "GroupAggregate") for s in candidate.chain),
    }


def default_store_path(flag=None):
    """The ``--store`` flag wins over the environment variable; ``None`` means no store."""
    if flag:
        return Path(flag)
    env = os.environ.get(STORE_ENV)
    return Path(env) if env else None


class RunStore:
    """Append-only newline-delimited JSON, one record per line, guarded by ``flock``."""

    def __init__(self, path):
        self.path = Path(path)

    def load(self) -> list[RunRecord]:
        if not self.path.exists():
            return []
        try:
            with open(self.path, "r", encoding="utf-8") as fh:
                fcntl.flock(fh, fcntl.LOCK_SH)
                try:
                    lines = fh.read().split("\n")
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)
        except OSError as exc:
            raise DataIOError(f"cannot read run store {self.path}: {exc}") from None
        records = []
        for no, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                log.warning("run store %s line %d skipped: %s", self.path, no, exc)
        return records

    def __len__(self):
        return len(self.load())

    def append(self, record: RunRecord) -> str:
        """Append ``record`` durably. An empty ``record_id`` is assigned from the content and store length."""
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a+", encoding="utf-8") as fh:
                fcntl.flock(fh, fcntl.LOCK_EX)
                try:
                    fh.seek(0)
                    existing = fh.read()
                    ids = set()
                    for line in existing.split("\n"):
                        try:
                            ids.add(json.loads(line)["record_id"])
                        except (ValueError, KeyError, TypeError):
                            pass
                    if not record.record_id:
                        record.record_id = make_record_id(record, len(ids))
                    while record.record_id in ids:
                        record.record_id = hashlib.sha256(record.record_id.encode()).hexdigest()[:16]
                    prefix = "" if not existing or existing.endswith("\n") else "\n"
                    fh.write(prefix + json.dumps(record.to_dict(), sort_keys=True) + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)
        except OSError as exc:
            raise DataIOError(f"cannot write run store {self.path}: {exc}") from None
        return record.record_id


def make_record_id(record: RunRecord, store_length: int) -> str:
    payload = json.dumps([record.context_fingerprint, record.dataset_fingerprint, record.best_candidate,
                          store_length], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def new_record(**kwargs) -> RunRecord:
    kwargs.setdefault("record_id", "")
    kwargs.setdefault("timestamp", time.time())
    return RunRecord(**kwargs)


# --- warm start ---------------------------------------------------------------

def standardized_distances(meta: MetaFeatures, records) -> list[float]:
    """Euclidean distance after standardizing each field by the mean/sd of all ``records``.

    Fields whose sd is 0 across the store are skipped.
    """
    if not records:
        return []
    M = np.array([r.meta_features.vector() for r in records])
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    keep = sd > 0
    q = meta.vector()
    Z = (M[:, keep] - mu[keep]) / sd[keep]
    zq = (q[keep] - mu[keep]) / sd[keep]
    return [float(math.sqrt(((row - zq) ** 2).sum())) for row in Z]


def nearest_records(meta: MetaFeatures, category: str, records, k: int | None = None, exclude=()):
    """Same-category records nearest first; standardization uses the whole store."""
    dist = standardized_distances(meta, records)
    pool = [(d, r.record_id, r) for d, r in zip(dist, records)
            if r.category == category and r.record_id not in exclude]
    pool.sort(key=lambda t: (t[0], t[1]))
    pool = pool if k is None else pool[:k]
    return [(r, d) for d, _, r in pool]


def warm_start(meta: MetaFeatures, category: str, k: int, records) -> list[Candidate]:
    if k < 1:
        raise ValueError("k must be positive")
    return [r.candidate for r, _ in nearest_records(meta, category, records, k)]


# --- feedback -----------------------------------------------------------------

@dataclass(frozen=True)
class FeedbackItem:
    suggestion: str
    record_ids: tuple
    deltas: dict
    confidence: str

    def to_dict(self) -> dict:
        return {"suggestion": self.suggestion, "record_ids": list(self.record_ids),
                "deltas": dict(self.deltas), "confidence": self.confidence}


def confidence(n_records: int) -> str:
    if n_records >= HIGH_EVIDENCE:
        return "high"
    if n_records >= MEDIUM_EVIDENCE:
        return "medium"
    return "low"


def generate_feedback(current: RunRecord, records, *, group_key_available: bool) -> list[FeedbackItem]:
    """Apply the three history rules to ``current``; evidence is same-category, same-metric records."""
    history = [r for r in records if r.record_id != current.record_id
               and r.category == current.category and r.metric == current.metric]
    items = []

    per_group = [r for r in history if r.flags.get("per_group")]
    pooled = [r for r in history if not r.flags.get("per_group")]
    if per_group and pooled and not current.flags.get("per_group") and group_key_available:
        gain = float(np.mean([r.best_score for r in per_group]) - np.mean([r.best_score for r in pooled]))
        if gain >= PER_GROUP_GAIN:
            ev = per_group + pooled
            items.append(FeedbackItem(
                f"Past {current.category} runs trained per group scored {gain:.2f} higher on average than "
                f"pooled runs; consider partition_by_group = \"on\".",
                tuple(r.record_id for r in ev), {"mean_per_group_minus_pooled": gain}, confidence(len(ev))))

    dropped = [r for r in history if r.flags.get("has_identifiers") and r.flags.get("dropped_identifiers")]
    kept = [r for r in history if r.flags.get("has_identifiers") and not r.flags.get("dropped_identifiers")]
    if dropped and kept and current.flags.get("has_identifiers") and not current.flags.get("dropped_identifiers"):
        d_score = float(np.mean([r.best_score for r in dropped]) - np.mean([r.best_score for r in kept]))
        d_time = float(np.mean([r.total_fit_seconds for r in dropped]) - np.mean([r.total_fit_seconds for r in kept]))
        if abs(d_score) <= IDENTIFIER_SCORE_TOLERANCE and d_time < 0:
            ev = dropped + kept
            items.append(FeedbackItem(
                "Past runs that dropped identifier columns matched the score of runs that kept them "
                f"(difference {d_score:+.3f}) and trained faster; consider dropping identifiers.",
                tuple(r.record_id for r in ev), {"score": d_score, "fit_seconds": d_time}, confidence(len(ev))))

    near = nearest_records(current.meta_features, current.category, history, 1)
    if near:
        ref, _ = near[0]
        drop = ref.best_score - current.best_score
        if current.n_features > ref.n_features and drop >= FEATURE_GROWTH_SCORE_DROP:
            items.append(FeedbackItem(
                f"This run uses {current.n_features} features against {ref.n_features} in the most similar "
                f"past run, yet scores {drop:.2f} lower; more features need more training rows.",
                (ref.record_id,), {"score": -drop, "n_features": current.n_features - ref.n_features},
                confidence(1)))
    return items
