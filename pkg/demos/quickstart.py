"""Generate telemetry, check feasibility, search, and replay the winner.

    python3 demos/quickstart.py
"""

import tempfile
from pathlib import Path

from netcash import report
from netcash.cli import load_dataset
from netcash.context import parse_context
from netcash.data import write_csv
from netcash.metastore import RunStore
from netcash.pipeline import run_search
from netcash.synth import SynthConfig, generate

HERE = Path(__file__).parent

work = Path(tempfile.mkdtemp(prefix="netcash-demo-"))
csv = work / "latency.csv"
write_csv(generate(SynthConfig(seed=7)), csv)

spec = parse_context(HERE / "latency_context.toml")
table = load_dataset(csv, spec)
print(f"{table.row_count} rows, columns {table.schema.names}")

store = RunStore(work / "runs.jsonl")
outcome = run_search(table, spec, store=store)
text = report.render(outcome)
print(text.split(report.TRAILER)[0])

recorded, replayed = report.replay(report.parse_trailer(text), table)
print(f"replay: recorded {recorded!r}, recomputed {replayed!r}")
print(f"artifacts in {work}")
