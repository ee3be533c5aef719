"""Why per-pixel uncertainty matters: downweighting corrupted regions.

One frame gets a synthetic "lighting change": a bright blob added to part of
the image after rendering, so the feature-constancy assumption breaks there.
Tracking with flat uncertainty treats those pixels like all others; an
uncertainty map that is large inside the corrupted region suppresses them in
the weighted least squares and restores accuracy.

Run:  python3 demos/03_uncertainty_weighting.py
"""

import math
from dataclasses import replace

import numpy as np

from rgbdalign import exp, make_pair, track
from rgbdalign.dataset import SynthScene, render_view
from rgbdalign.evaluation import rpe
from rgbdalign.features import make_frame
from rgbdalign.geometry import Pose
from rgbdalign.imagegrid import DenseMap, Pyramid

scene = SynthScene.plane_scene()
truth = exp(np.array([0.03, -0.01, 0.0, 0.0, 0.01, math.radians(2)]))

gray_a, depth_a = render_view(scene, Pose.identity())
gray_b, depth_b = render_view(scene, truth)

# simulated local lighting change in frame A: a smooth bright blob
ys, xs = np.meshgrid(np.arange(120), np.arange(160), indexing="ij")
blob = 0.6 * np.exp(-(((xs - 112) / 18.0) ** 2 + ((ys - 48) / 14.0) ** 2))
gray_a_corrupt = gray_a + blob

frame_b = make_frame(gray_b, depth_b, scene.intrinsics)


def sigma_pyramid(template, weight_fn):
    levels = []
    for grid, k in template.levels:
        yy, xx = np.meshgrid(
            np.arange(grid.height, dtype=float), np.arange(grid.width, dtype=float),
            indexing="ij",
        )
        sigma = weight_fn(xx / grid.width * 160, yy / grid.height * 120)
        levels.append((DenseMap(sigma[:, :, None], np.ones_like(sigma, bool)), k))
    return Pyramid(tuple(levels))


frame_a = make_frame(gray_a_corrupt, depth_a, scene.intrinsics)

flat = replace(frame_a, uncertainty=sigma_pyramid(frame_a.uncertainty, lambda x, y: np.ones_like(x)))
informed = replace(
    frame_a,
    uncertainty=sigma_pyramid(
        frame_a.uncertainty,
        # high predicted uncertainty where the blob corrupted the features
        lambda x, y: 1.0 + 25.0 * np.exp(-(((x - 112) / 18.0) ** 2 + ((y - 48) / 14.0) ** 2)),
    ),
)

for label, frame in (("flat sigma", flat), ("informed sigma", informed)):
    result = track(frame, frame_b)
    trans_err, rot_err = rpe(truth, result.pose)
    print(f"{label:15s}: translation error {trans_err * 1000:7.3f} mm, "
          f"rotation error {math.degrees(rot_err):7.4f} deg")

print("\nthe corrupted region pulls the flat-weight estimate off; marking it")
print("uncertain restores near-noise-floor accuracy without masking anything.")
