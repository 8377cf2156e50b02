"""Plan a window crossing with PSO on the reduced model, then fly it in the FDM.

    python3 demos/window_crossing.py path/to/bank.csv
"""

import sys

from flexcable import io, scenarios

bank = io.read_bank(sys.argv[1], 3)
cfg = scenarios.load_config("sim")
plan = scenarios.make_plan(cfg, bank)
print(f"plan: feasible={plan.report.feasible} iterations={plan.iterations} margin={plan.report.margin:.3f}")
rec, report, ctrl = scenarios.track_plan(cfg, bank, plan)
print(f"FDM rollout: feasible={report.feasible} margin={report.margin:.3f} crossings={len(report.crossings)}")
