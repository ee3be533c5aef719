"""Rigid-motion arithmetic: twists, poses, and the pinhole camera.

Run:  python3 demos/01_se3_basics.py
"""

import math

import numpy as np

from rgbdalign import CameraIntrinsics, backproject, compose, exp, inverse, log, project
from rgbdalign.geometry import format_pose_line, transform_point

print("== twists and poses ==")
xi = np.array([0.10, -0.05, 0.02, 0.0, 0.0, math.radians(30)])
pose = exp(xi)
print(f"twist (m, rad): {np.round(xi, 4)}")
print("rotation:")
print(np.round(pose.rotation, 4))
print(f"translation: {np.round(pose.translation, 4)}")
print(f"log(exp(xi)) recovers the twist: {np.allclose(log(pose), xi, atol=1e-12)}")

print("\n== group structure ==")
step = exp(np.array([0.01, 0, 0, 0, 0, math.radians(5)]))
chained = exp(np.zeros(6))
for _ in range(6):
    chained = compose(chained, step)
print(f"six 5-degree steps compose to {math.degrees(np.linalg.norm(log(chained)[3:])):.1f} degrees")
round_trip = compose(chained, inverse(chained))
print(f"T * T^-1 translation magnitude: {np.linalg.norm(round_trip.translation):.2e}")

print("\n== pinhole projection ==")
K = CameraIntrinsics(fx=110.0, fy=110.0, cx=80.0, cy=60.0, width=160, height=120)
point = np.array([0.3, -0.1, 2.0])
pixel = project(point, K)
print(f"3D point {point} projects to pixel {np.round(pixel, 3)}")
lifted = backproject(pixel, point[2], K)
print(f"backprojecting at the same depth returns {np.round(lifted, 6)}")

moved = transform_point(pose, point)
print(f"after the motion the point sits at {np.round(moved, 4)}")
print(f"pose as a trajectory-file line: {format_pose_line(pose)}")
