"""End-to-end sequence pipeline on a generated mini-dataset.

Writes a constant-motion synthetic sequence to disk in the standard
rgb.txt / depth.txt / groundtruth.txt layout, loads it back through the
dataset reader (16-bit depth rasters, timestamp association, ground-truth
interpolation), tracks consecutive pairs, and evaluates against the stored
ground truth.

Run:  python3 demos/06_sequence_pipeline.py
"""

import math
import statistics
import tempfile

import numpy as np

from rgbdalign import SolverConfig, exp, track
from rgbdalign.dataset import (
    DEFAULT_SYNTH_INTRINSICS,
    SynthScene,
    load_frame,
    load_sequence,
    subsample_pairs,
    write_synth_sequence,
)
from rgbdalign.evaluation import (
    accumulate,
    backprojected_points,
    epe,
    rpe,
    write_trajectory,
)
from rgbdalign.solver import initialize

scene = SynthScene.plane_scene()
step = exp(np.array([0.012, 0.006, 0.002, 0.002, 0.001, math.radians(1.0)]))

with tempfile.TemporaryDirectory() as tmp:
    write_synth_sequence(tmp, scene, step, n_frames=8)
    index = load_sequence(tmp)
    print(f"loaded {len(index.associated)} associated frames from {tmp}")

    pairs = subsample_pairs(index, 1)
    config = SolverConfig(initializer="constvel")
    frames = {}

    def frame_at(i):
        if i not in frames:
            frames[i] = load_frame(index.associated[i], DEFAULT_SYNTH_INTRINSICS)
        return frames[i]

    prev = None
    chain = []
    epes, rots = [], []
    for pair in pairs:
        init = initialize(prev, None, config)
        result = track(frame_at(pair.index_a), frame_at(pair.index_b), config, init)
        prev = result.pose
        chain.append((pair.frame_b.timestamp, result.pose))
        epes.append(epe(pair.gt_relative, result.pose, backprojected_points(frame_at(pair.index_b))))
        trans, rot = rpe(pair.gt_relative, result.pose)
        rots.append(math.degrees(rot))
        print(f"  pair ({pair.index_a},{pair.index_b}): epe {epes[-1] * 1000:6.3f} mm, "
              f"rot err {rots[-1]:7.4f} deg, converged={result.converged}")

    print(f"\nmean epe {statistics.mean(epes) * 1000:.3f} mm, "
          f"median rot err {statistics.median(rots):.4f} deg")
    # note: quantised 8-bit intensity and 16-bit depth put these a bit above
    # the in-memory tracking noise floor

    record = accumulate(chain, start_timestamp=index.associated[0].timestamp)
    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
        write_trajectory(fh.name, record)
        print(f"accumulated trajectory written to {fh.name}")
