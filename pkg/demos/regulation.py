"""Drop a horizontal cable and regulate it with NMPC and with PID.

    python3 demos/regulation.py path/to/bank.csv
"""

import sys

from flexcable import io, scenarios

bank = io.read_bank(sys.argv[1], 3)
cfg = scenarios.load_config("sim", overrides=["regulation.duration=8"])
for controller in ("pid", "nmpc"):
    rec, X, x_score, ctrl = scenarios.regulation_rollout(cfg, bank, controller)
    m = scenarios.regulation_metrics(cfg, bank, rec, X, x_score)
    print(f"{controller:5s} f_e {m['f_e']:8.1f}  first-mode ratio at 4 s {m['a1_ratio_4s']:.3f}  final head {m['final_head']}")
