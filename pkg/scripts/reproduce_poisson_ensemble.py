"""Run the bundled Poisson-load ensemble preset and summarise the result.

Usage: python scripts/reproduce_poisson_ensemble.py [output_root]
"""
import json
import os
import sys

from socmodels.cli import load_config, run_config

if len(sys.argv) > 1:
    os.environ["SOCMODELS_OUTPUT"] = sys.argv[1]

out, written = run_config(load_config("fig2"))
print(f"wrote {len(written)} files to {out}")
report = json.loads((out / "performance.json").read_text())
for key, value in report.items():
    print(f"{key:>12}: {value}")
