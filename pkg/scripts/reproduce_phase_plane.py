"""Run the bundled phase-plane preset and print the end-of-life table.

Usage: python scripts/reproduce_phase_plane.py [output_root]
"""
import csv
import os
import sys

from socmodels.cli import load_config, run_config

if len(sys.argv) > 1:
    os.environ["SOCMODELS_OUTPUT"] = sys.argv[1]

out, written = run_config(load_config("fig1"))
print(f"wrote {len(written)} files to {out}")
with open(out / "end_of_life.csv") as fh:
    rows = list(csv.reader(fh))
widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
for r in rows:
    print("  ".join(c.ljust(w) for c, w in zip(r, widths)))
