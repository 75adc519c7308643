"""Build a small run history and watch warm start and feedback kick in.

Pooled and per-cluster searches are stored side by side; a later pooled run
starts from the stored best candidate of the most similar past run and gets
history-based suggestions. The per-group rule compares history *averages*:
a pooled run whose short budget never reached a chain with cluster-level
features (GroupSize(cluster), per-cluster Standardize) drags the pooled mean
down, even though the better pooled runs beat per-cluster training.

    python3 demos/history_feedback.py
"""

import tempfile
from pathlib import Path

from netcash.context import Budget, ContextSpec
from netcash.metastore import RunStore
from netcash.pipeline import run_search
from netcash.synth import CLUSTER, LATENCY, VM, SynthConfig, generate

store = RunStore(Path(tempfile.mkdtemp(prefix="netcash-history-")) / "runs.jsonl")


def context(partition, seed):
    return ContextSpec(category="latency_estimation", target=LATENCY, group_key=CLUSTER, entity_key=VM,
                       drop_features=(VM,), partition_by_group=partition, identifier_features_allowed=True,
                       budget=Budget(max_trials=6, max_seconds=30.0, seed=seed))


for seed in range(4):
    table = generate(SynthConfig(seed=seed))
    for partition in ("on", "off"):
        # Pooled, the cluster-scoped labels carry no usable signal and the feasibility check says
        # "infeasible"; we search anyway so the history holds both framings.
        out = run_search(table, context(partition, seed), store=store, evaluate=False, override_infeasible=True)
        print(f"seed {seed} partition={partition:<3} best {out.best.score:+.3f}  {out.best.candidate.describe()}")

table = generate(SynthConfig(seed=99))
out = run_search(table, context("off", 99), store=store, evaluate=False, override_infeasible=True)
first = min(out.leaderboard.trials, key=lambda t: t.index)
print(f"\nwarm-start trial #1: {first.candidate.describe()}")
for item in out.feedback:
    print(f"[{item.confidence}] {item.suggestion}")
