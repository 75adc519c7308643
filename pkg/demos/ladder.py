"""Run the nine-experiment ladder and print the score table.

    python3 demos/ladder.py [n_seeds]
"""

import sys

from netcash.context import Budget
from netcash.synth import SynthConfig, run_ladder

n = int(sys.argv[1]) if len(sys.argv) > 1 else 5
print(run_ladder(SynthConfig(), Budget(max_trials=8, max_seconds=60.0), seeds=range(n)).render())
