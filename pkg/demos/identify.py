"""Recover drag coefficient and Young's modulus from a synthetic release recording.

    python3 demos/identify.py [recording.csv]
"""

import sys

from flexcable import scenarios

cfg = scenarios.load_config("experiment")
recording = sys.argv[1] if len(sys.argv) > 1 else None
print(scenarios.run_identify(cfg, "out/demo_identify", recording))
