"""``netcash`` command line: check, search, synth, ladder, replay.

Exit codes: 0 success, 2 validation error, 3 infeasible without override,
4 search/runtime failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as D
from . import report as R
from .context import Budget, bind_roles, build_schema, parse_context, with_budget
from .errors import DataIOError, InfeasibleError, NetcashError, SearchError, ValidationError
from .feasibility import INFEASIBLE, assess
from .metastore import RunStore, default_store_path
from .pipeline import run_search

OK, INVALID, INFEASIBLE_EXIT, FAILED, IO_ERROR = 0, 2, 3, 4, 5

log = logging.getLogger("netcash")


def load_dataset(path, spec) -> D.Table:
    schema = build_schema(spec, D.read_header(path))
    return bind_roles(spec, D.load_csv(path, schema))


def _write(text: str, path) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from None


def _load(args):
    spec = parse_context(args.context)
    if getattr(args, "seed", None) is not None:
        spec = with_budget(spec, seed=args.seed)
    return spec, load_dataset(args.data, spec)


def cmd_check(args) -> int:
    spec, table = _load(args)
    rep = assess(table, spec, spec.budget.seed)
    _write("== FEASIBILITY ==\n" + "\n".join(rep.render()) + "\n", args.report)
    return INFEASIBLE_EXIT if rep.verdict == INFEASIBLE else OK


def cmd_search(args) -> int:
    spec, table = _load(args)
    store_path = default_store_path(args.store)
    store = RunStore(store_path) if store_path else None
    outcome = run_search(table, spec, store=store, override_infeasible=args.override_infeasible, jobs=args.jobs)
    _write(R.render(outcome), args.report)
    if outcome.aborted:
        log.error("dataset judged infeasible; rerun with --override-infeasible to search anyway")
        return INFEASIBLE_EXIT
    return OK


def _synth_config(args):
    from .synth import SynthConfig
    return SynthConfig(n_clusters=args.n_clusters, base_latency_low=args.base_latency_low,
                       base_ratio=args.base_ratio, vnets_per_cluster=args.vnets_per_cluster,
                       vms_per_vnet=tuple(args.vms_per_vnet), n_hosts_per_cluster=args.hosts_per_cluster,
                       noise_sd=args.noise_sd, vm_name_entropy=args.vm_name_entropy, alpha=args.alpha,
                       seed=args.seed)


SYNTH_CONTEXT = """\
# Context for tables written by `netcash synth`.
category = "latency_estimation"
target = "avg_latency_us"
group_key = "cluster"
entity_key = "vm_name"
identifier_features_allowed = true
columns.categorical = ["cluster", "vnet_id", "host"]
columns.identifier = ["vm_name"]
columns.numeric = ["avg_latency_us"]
"""


def cmd_synth(args) -> int:
    from .synth import cluster_bases, generate
    config = _synth_config(args)
    table = generate(config)
    D.write_csv(table, args.out)
    if args.context_out:
        _write(SYNTH_CONTEXT, args.context_out)
    bases = cluster_bases(config)
    print(f"wrote {table.row_count} rows to {args.out} (cluster base ratio {bases.max() / bases.min():.6g})")
    return OK


def cmd_ladder(args) -> int:
    from .synth import run_ladder
    config = _synth_config(args)
    budget = Budget(max_trials=args.max_trials, max_seconds=args.max_seconds, seed=0)
    seeds = [args.seed + i for i in range(args.seeds)]
    lad = run_ladder(config, budget, seeds)
    _write(lad.render(), args.report)
    if args.json:
        _write(json.dumps(lad.to_dict(), indent=1, sort_keys=True) + "\n", args.json)
    if args.require_pass and not lad.passed:
        return FAILED
    return OK


def cmd_replay(args) -> int:
    try:
        text = Path(args.report).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read {args.report}: {exc}") from None
    trailer = R.parse_trailer(text)
    spec = R.replay_context(trailer)
    table = load_dataset(args.data, spec)
    recorded, recomputed = R.replay(trailer, table)
    print(f"recorded score {recorded!r}, replayed score {recomputed!r}")
    if recorded != recomputed:
        log.error("replayed score differs from the recorded one")
        return FAILED
    return OK


def _add_synth_flags(p):
    from .synth import SynthConfig
    d = SynthConfig()
    p.add_argument("--n-clusters", type=int, default=d.n_clusters)
    p.add_argument("--base-latency-low", type=float, default=d.base_latency_low)
    p.add_argument("--base-ratio", type=float, default=d.base_ratio)
    p.add_argument("--vnets-per-cluster", type=int, default=d.vnets_per_cluster)
    p.add_argument("--vms-per-vnet", type=int, nargs=2, default=list(d.vms_per_vnet), metavar=("LO", "HI"))
    p.add_argument("--hosts-per-cluster", type=int, default=d.n_hosts_per_cluster)
    p.add_argument("--noise-sd", type=float, default=d.noise_sd)
    p.add_argument("--vm-name-entropy", type=int, default=d.vm_name_entropy)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--seed", type=int, default=d.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netcash", description="Context-aware AutoML for network telemetry.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate inputs and assess feasibility")
    p.add_argument("--data", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--report", help="write the feasibility report here instead of stdout")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("search", help="run the full search and write a report")
    p.add_argument("--data", required=True)
    p.add_argument("--context", required=True)
    p.add_argument("--store", help="run store path (default: $NETCASH_STORE)")
    p.add_argument("--override-infeasible", action="store_true")
    p.add_argument("--report", help="report path (default: stdout)")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="maximum worker processes for stage-2 trials")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("synth", help="write a synthetic VNet latency table")
    _add_synth_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--context-out", help="also write a matching context file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ladder", help="run the nine-experiment ladder on synthetic data")
    _add_synth_flags(p)
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds starting at --seed")
    p.add_argument("--max-trials", type=int, default=8)
    p.add_argument("--max-seconds", type=float, default=60.0)
    p.add_argument("--report", help="text report path (default: stdout)")
    p.add_argument("--json", help="also write the structured report here")
    p.add_argument("--require-pass", action="store_true", help="exit 4 when an ordering check fails")
    p.set_defaults(func=cmd_ladder)

    p = sub.add_parser("replay", help="re-run a report's best candidate and compare scores")
    p.add_argument("--report", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INFEASIBLE_EXIT
    except SearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for k, v in exc.reasons.items():
            print(f"  {k}: {v}", file=sys.stderr)
        return FAILED
    except DataIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return IO_ERROR
    except NetcashError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
