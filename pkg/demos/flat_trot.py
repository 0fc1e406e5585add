"""Trot on flat ground at 0.5 m/s and print the tracking summary.

    python demos/flat_trot.py [--duration 15] [--out runs/demo_flat]
"""
import argparse

from terrain_mpc.sim import CommandSegment, SimConfig, run_closed_loop, summarize

ap = argparse.ArgumentParser()
ap.add_argument("--duration", type=float, default=15.0)
ap.add_argument("--speed", type=float, default=0.5)
ap.add_argument("--out")
args = ap.parse_args()

cfg = SimConfig(duration=args.duration, commands=[CommandSegment(0.0, (args.speed, 0.0))])
log = run_closed_loop(cfg)
s = summarize(log)
print(f"mean forward velocity over the final 5 s (whole run if shorter): {s['mean_forward_velocity']:.3f} m/s "
      f"(commanded {args.speed})")
for leg, e in s["foothold_error"].items():
    print(f"leg {leg}: RMS(e) {e['rms']:.4f} m  max|e| {e['max']:.4f} m")
print(f"MPC solves: {s['solve_time']['count']}, mean {1e3 * s['solve_time']['mean']:.1f} ms")
if args.out:
    log.write_csv(args.out)
    print(f"logs in {args.out}")
