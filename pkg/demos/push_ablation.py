"""Run the push-recovery scenario with MPC+IC and with the QP ablation, then compare.

    python demos/push_ablation.py [--out runs/push]
"""
import argparse
from pathlib import Path

from terrain_mpc import cli

ROOT = Path(__file__).resolve().parents[1]

ap = argparse.ArgumentParser()
ap.add_argument("--out", default="runs/push")
ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "disturbance"))
args = ap.parse_args()

out = Path(args.out)
cli.run(args.scenario, out=out / "mpc_ic")
cli.run(args.scenario, ablate="mpc", out=out / "qp")
print()
print(cli.format_comparison(cli.compare(out / "mpc_ic", out / "qp")))
