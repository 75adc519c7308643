"""Synthetic VNet latency telemetry and the nine-step experiment ladder.

Each row is one VM. Its latency is the sum of

* a cluster base, log-spaced from ``base_latency_low`` to ``base_latency_low * base_ratio``,
* a host effect drawn once per host, uniform in ``[0, 0.25 * base]``,
* ``alpha`` microseconds per VM in the VM's VNet,
* Gaussian noise with sd ``noise_sd``.

VNet and host labels are scoped to their cluster ("vnet-1" exists in every
cluster), so only the cluster column tells them apart. ``vm_name`` is a
random string with no signal.

The absolute scores of the original production study cannot be reproduced
from synthetic data; the ladder only checks the direction of the changes.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import data as D
from . import engine as E
from .context import Budget, ContextSpec, derive_constraints
from .errors import SearchError, ValidationError
from .evaluation import ci_half_width
from .pipeline import run_search
from .transforms import GroupSize, Standardize, baseline_chain

HOST_EFFECT_SHARE = 0.25
VM_ALPHABET = "abcd"

CLUSTER, VNET, HOST, VM, LATENCY = "cluster", "vnet_id", "host", "vm_name", "avg_latency_us"
SCHEMA = D.Schema((
    D.ColumnSpec(CLUSTER, D.CATEGORICAL, D.GROUP_KEY),
    D.ColumnSpec(VNET, D.CATEGORICAL),
    D.ColumnSpec(HOST, D.CATEGORICAL),
    D.ColumnSpec(VM, D.IDENTIFIER, D.ENTITY_KEY),
    D.ColumnSpec(LATENCY, D.NUMERIC, D.TARGET),
))


@dataclass(frozen=True)
class SynthConfig:
    n_clusters: int = 12
    base_latency_low: float = 200.0
    base_ratio: float = 4.0
    vnets_per_cluster: int = 4
    vms_per_vnet: tuple = (5, 12)
    n_hosts_per_cluster: int = 6
    noise_sd: float = 8.0
    vm_name_entropy: int = 1
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.vms_per_vnet
        for name in ("n_clusters", "vnets_per_cluster", "n_hosts_per_cluster", "vm_name_entropy"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if not 1 <= lo <= hi:
            raise ValidationError("vms_per_vnet must be a range (lo, hi) with 1 <= lo <= hi")
        if not self.base_ratio > 1:
            raise ValidationError("base_ratio must exceed 1")
        if self.noise_sd < 0 or self.base_latency_low <= 0:
            raise ValidationError("noise_sd must be >= 0 and base_latency_low > 0")


def cluster_bases(config: SynthConfig) -> np.ndarray:
    n = config.n_clusters
    if n == 1:
        return np.array([config.base_latency_low])
    return config.base_latency_low * config.base_ratio ** (np.arange(n) / (n - 1))


def generate(config: SynthConfig) -> D.Table:
    rng = np.random.default_rng(config.seed)
    lo, hi = config.vms_per_vnet
    cols = {CLUSTER: [], VNET: [], HOST: [], VM: [], LATENCY: []}
    for c, base in enumerate(cluster_bases(config)):
        host_effect = rng.uniform(0.0, HOST_EFFECT_SHARE * base, config.n_hosts_per_cluster)
        for v in range(config.vnets_per_cluster):
            size = int(rng.integers(lo, hi + 1))
            hosts = rng.integers(0, config.n_hosts_per_cluster, size)
            letters = rng.integers(0, len(VM_ALPHABET), (size, config.vm_name_entropy))
            noise = rng.normal(0.0, config.noise_sd, size) if config.noise_sd > 0 else np.zeros(size)
            for i in range(size):
                cols[CLUSTER].append(f"c{c:02d}")
                cols[VNET].append(f"vnet-{v}")
                cols[HOST].append(f"h{hosts[i]:02d}")
                cols[VM].append("vm-" + "".join(VM_ALPHABET[j] for j in letters[i]))
                cols[LATENCY].append(float(base + host_effect[hosts[i]] + config.alpha * size + noise[i]))
    return D.Table(SCHEMA, cols)


def vnet_host_features(table: D.Table) -> D.Table:
    """Add one 0/1 column per host label: is that host used by any VM of this row's VNet?"""
    cluster, vnet, host = table.column(CLUSTER), table.column(VNET), table.column(HOST)
    members: dict = {}
    for c, v, h in zip(cluster, vnet, host):
        members.setdefault((c, v), set()).add(h)
    labels = sorted(set(host))
    items = []
    for h in labels:
        values = np.array([float(h in members[(c, v)]) for c, v in zip(cluster, vnet)])
        items.append((D.ColumnSpec(f"vnet_host={h}", D.NUMERIC), values))
    return table.with_columns(items)


def ladder_context(budget: Budget, test_fraction: float, partition: str, drops=()) -> ContextSpec:
    return ContextSpec(
        category="latency_estimation", target=LATENCY, group_key=CLUSTER, entity_key=VM,
        drop_features=tuple(drops), partition_by_group=partition, budget=budget,
        identifier_features_allowed=True, test_fraction=test_fraction,
    )


@dataclass(frozen=True)
class Experiment:
    id: int
    description: str
    large_split: bool = False
    per_group_scoring: bool = False
    standardize_per_group: bool = False
    partitioned: bool = False
    drop_vm_name: bool = False
    group_size: bool = False
    vnet_hosts: bool = False


SMALL_TEST_FRACTION = 0.5
LARGE_TEST_FRACTION = 0.25

EXPERIMENTS = (
    Experiment(1, "pooled search, small train split"),
    Experiment(2, "pooled search, larger train split", large_split=True),
    Experiment(3, "(1) scored by averaging per-cluster test scores", per_group_scoring=True),
    Experiment(4, "(3) + per-cluster Standardize, pooled model", per_group_scoring=True,
               standardize_per_group=True),
    Experiment(5, "(4) + per-cluster partitioned training", per_group_scoring=True, standardize_per_group=True,
               partitioned=True),
    Experiment(6, "(5) + DropColumns(vm_name)", per_group_scoring=True, standardize_per_group=True,
               partitioned=True, drop_vm_name=True),
    Experiment(7, "(6) + GroupSize(vnet_id)", per_group_scoring=True, standardize_per_group=True,
               partitioned=True, drop_vm_name=True, group_size=True),
    Experiment(8, "(7) + VNet member-host one-hot features", per_group_scoring=True,
               standardize_per_group=True, partitioned=True, drop_vm_name=True, group_size=True, vnet_hosts=True),
    Experiment(9, "(8) with the larger train split", large_split=True, per_group_scoring=True,
               standardize_per_group=True, partitioned=True, drop_vm_name=True, group_size=True, vnet_hosts=True),
)


def run_experiment(exp: Experiment, table: D.Table, budget: Budget):
    """One search for one experiment; returns (score, total fit seconds, outcome)."""
    if exp.vnet_hosts:
        table = vnet_host_features(table)
    spec = ladder_context(budget, LARGE_TEST_FRACTION if exp.large_split else SMALL_TEST_FRACTION,
                          "on" if exp.partitioned else "off", (VM,) if exp.drop_vm_name else ())
    constraints = derive_constraints(spec, table)
    chain = baseline_chain(constraints, table.schema)
    if exp.group_size:
        chain = (GroupSize(VNET),) + chain  # before one-hot encoding removes vnet_id
    if exp.standardize_per_group:
        chain += (Standardize((), "per_group"),)
    scoring = E.GROUP_AVERAGE_SCORING if exp.per_group_scoring and not exp.partitioned else E.POOLED_SCORING
    outcome = run_search(table, spec, check_feasibility=False, chains=[chain], scoring=scoring, evaluate=False)
    return outcome.best.score, outcome.total_fit_seconds, outcome


@dataclass
class ExperimentResult:
    id: int
    description: str
    scores: list = field(default_factory=list)
    fit_seconds: list = field(default_factory=list)
    best: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def half_width(self) -> float:
        return ci_half_width(self.scores)

    @property
    def mean_fit_seconds(self) -> float:
        return float(np.mean(self.fit_seconds))

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description, "scores": list(self.scores),
                "mean": self.mean, "ci_half_width": self.half_width, "fit_seconds": list(self.fit_seconds),
                "mean_fit_seconds": self.mean_fit_seconds, "best": list(self.best)}


@dataclass
class LadderReport:
    experiments: dict
    seeds: list
    config: SynthConfig
    budget: Budget
    wall_seconds: float = 0.0

    def __getitem__(self, i) -> ExperimentResult:
        return self.experiments[i]

    def checks(self) -> list[tuple[str, bool, str]]:
        e = self.experiments
        gain = e[5].mean - e[1].mean
        drift = abs(e[6].mean - e[5].mean)
        return [
            ("score(5) - score(1) >= 0.2", gain >= 0.2, f"{e[5].mean:.3f} - {e[1].mean:.3f} = {gain:.3f}"),
            ("|score(6) - score(5)| <= 0.05", drift <= 0.05, f"|{e[6].mean:.3f} - {e[5].mean:.3f}| = {drift:.3f}"),
            ("fit time(6) <= fit time(5)", e[6].mean_fit_seconds <= e[5].mean_fit_seconds,
             f"{e[6].mean_fit_seconds:.3f}s vs {e[5].mean_fit_seconds:.3f}s"),
            ("score(8) < score(6)", e[8].mean < e[6].mean, f"{e[8].mean:.3f} vs {e[6].mean:.3f}"),
        ]

    @property
    def passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks())

    def render(self) -> str:
        lines = [
            "NETCASH LADDER (synthetic VNet telemetry; only the direction of changes is meaningful,",
            "absolute scores are not comparable to production measurements)",
            f"seeds: {self.seeds}  budget: max_trials={self.budget.max_trials} max_seconds={self.budget.max_seconds}",
            "",
            f"{'exp':>3}  {'score':>8}  {'+/-95%':>7}  {'fit s':>7}  description",
        ]
        for i in sorted(self.experiments):
            r = self.experiments[i]
            hw = r.half_width
            lines.append(f"{i:>3}  {r.mean:8.3f}  {hw:7.3f}  {r.mean_fit_seconds:7.3f}  {r.description}")
        lines.append("")
        for name, ok, detail in self.checks():
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        lines.append(f"wall time: {self.wall_seconds:.1f}s")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"seeds": list(self.seeds), "config": dataclasses.asdict(self.config),
                "budget": dataclasses.asdict(self.budget),
                "experiments": {str(k): v.to_dict() for k, v in self.experiments.items()},
                "checks": [{"name": n, "passed": ok, "detail": d} for n, ok, d in self.checks()]}


def run_ladder(config: SynthConfig, budget: Budget, seeds, experiments=EXPERIMENTS) -> LadderReport:
    seeds = list(seeds)
    if len(seeds) < 3:
        raise ValidationError("the ladder needs at least 3 seeds")
    start = time.perf_counter()
    results = {e.id: ExperimentResult(e.id, e.description) for e in experiments}
    for s in seeds:
        table = generate(dataclasses.replace(config, seed=s))
        run_budget = dataclasses.replace(budget, seed=s)
        for exp in experiments:
            try:
                score, fit_s, outcome = run_experiment(exp, table, run_budget)
            except SearchError as exc:
                raise SearchError(f"experiment {exp.id}, seed {s}: {exc}", exc.reasons) from None
            r = results[exp.id]
            r.scores.append(score)
            r.fit_seconds.append(fit_s)
            r.best.append(outcome.best.candidate.describe())
    return LadderReport(results, seeds, config, budget, time.perf_counter() - start)
