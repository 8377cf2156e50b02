"""Collect a sweep run, reduce it to a mode bank and print the energy spectrum.

    python3 demos/build_bank.py [out_dir]
"""

import sys

from flexcable import io, scenarios

out = sys.argv[1] if len(sys.argv) > 1 else "out/demo_bank"
cfg = scenarios.load_config("sim")
print("collecting sweep:", scenarios.run_collect(cfg, out))
metrics = scenarios.run_reduce(cfg, f"{out}/snapshots.npz", out)
print("reduced:", metrics)
bank = io.read_bank(f"{out}/bank.csv")
for i, e in enumerate(bank.energy()[:5], 1):
    print(f"mode {i}: energy share {e:.6f}")
