"""Sample the alignment cost over x/y translation around the true pose.

The coarsest pyramid level's cost is evaluated on a grid of translations
with rotation and z fixed at the reference, the standard way to visualise
the convergence basin.  The grid is written as CSV for external plotting.

Run:  python3 demos/05_cost_landscape.py [out.csv]
"""

import sys

import numpy as np

from rgbdalign import exp, log, make_pair
from rgbdalign.dataset import SynthScene
from rgbdalign.geometry import Pose
from rgbdalign.residuals import build_feature_system, precompute_template

scene = SynthScene.plane_scene()
truth = exp(np.array([0.02, -0.01, 0.0, 0.0, 0.01, 0.02]))
frame_a, frame_b, _ = make_pair(scene, truth)

level = 3
template = precompute_template(frame_b, level)
half_extent, steps = 0.3, 41
offsets = np.linspace(-half_extent, half_extent, steps)

costs = np.full((steps, steps), np.nan)
for iy, dy in enumerate(offsets):
    for ix, dx in enumerate(offsets):
        moved = Pose(truth.rotation, truth.translation + np.array([dx, dy, 0.0]))
        try:
            costs[iy, ix] = build_feature_system(frame_a, template, log(moved), level).cost
        except Exception:
            pass

best = np.unravel_index(np.nanargmin(costs), costs.shape)
print(f"grid: {steps}x{steps} over +-{half_extent} m at level {level}")
print(f"minimum cost {np.nanmin(costs):.4e} at offset "
      f"({offsets[best[1]]:+.3f}, {offsets[best[0]]:+.3f}) m from the true pose")

print("\ncoarse ascii view (darker = lower cost):")
shades = " .:-=+*#%@"
lo, hi = np.nanmin(costs), np.nanmax(costs)
for iy in range(0, steps, 4):
    row = ""
    for ix in range(0, steps, 2):
        c = costs[iy, ix]
        row += "?" if np.isnan(c) else shades[int((c - lo) / (hi - lo) * (len(shades) - 1))]
    print("  " + row)

out = sys.argv[1] if len(sys.argv) > 1 else "landscape.csv"
with open(out, "w") as fh:
    fh.write("dx_m,dy_m,cost\n")
    for iy, dy in enumerate(offsets):
        for ix, dx in enumerate(offsets):
            fh.write(f"{dx:.6f},{dy:.6f},{costs[iy, ix]:.9e}\n")
print(f"\nwrote {out} for external plotting")
