"""Print the foothold cost grid around a nominal point just before a beam edge.

Cells marked '#' are rejected (unknown, on an edge band or colliding);
'*' is the chosen cell, digits are the cost in tenths of the finite range.

    python demos/foothold_map.py [--x 2.29] [--y 0.0]
"""
import argparse

import numpy as np

from terrain_mpc.foothold import FootholdConfig, SwingGeometry, evaluate_foothold
from terrain_mpc.terrain import beam_course_description, crop, load_heightmap

ap = argparse.ArgumentParser()
ap.add_argument("--x", type=float, default=2.29)
ap.add_argument("--y", type=float, default=0.0)
args = ap.parse_args()

cfg = FootholdConfig()
hmap = load_heightmap(beam_course_description())
local = crop(hmap, (args.x, args.y), cfg.half_extent)
k = (local.width - 1) // 2
choice = evaluate_foothold(local, (k, k), SwingGeometry(np.array([args.x - 0.3, args.y, 0.0]),
                                                        cfg.swing_height), cfg)
c = choice.costs
finite = np.isfinite(c)
lo, hi = c[finite].min(), c[finite].max()
scale = (c - lo) / (hi - lo if hi > lo else 1.0)
for i in reversed(range(local.height)):        # +y at the top
    row = ""
    for j in range(local.width):
        if (i, j) == choice.cell:
            row += "*"
        elif not finite[i, j]:
            row += "#"
        else:
            row += str(min(int(scale[i, j] * 10), 9))
    print(row)
print(f"offset from nominal: {choice.offset[0]:+.3f}, {choice.offset[1]:+.3f} m")
