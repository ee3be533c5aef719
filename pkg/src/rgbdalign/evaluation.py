"""Pose-accuracy metrics and trajectory accumulation.

All metrics are pure functions.  Trajectories use the text form
``timestamp tx ty tz qx qy qz qw`` with world-from-camera poses; per-pair
metrics are emitted as CSV with the fixed header below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyPointSetError, ParseError
from .features import Frame
from .geometry import (
    Pose,
    compose,
    format_pose_line,
    inverse,
    parse_pose_line,
    rotation_angle,
    transform_point,
)

METRICS_CSV_HEADER = "timestamp,epe_m,rpe_trans_m,rpe_rot_rad"


@dataclass(frozen=True)
class TrajectoryRecord:
    """Timestamped world-from-camera poses, strictly increasing in time."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        times = [t for t, _ in entries]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class PairMetrics:
    timestamp: float
    epe: float
    rpe_trans: float
    rpe_rot: float


def epe(gt: Pose, est: Pose, points: np.ndarray) -> float:
    """Mean 3D end-point error: average displacement of the point set under
    the ground-truth versus the estimated transform, in meters."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if points.shape[0] == 0:
        raise EmptyPointSetError("end-point error needs at least one point")
    diff = transform_point(gt, points) - transform_point(est, points)
    return float(np.linalg.norm(diff, axis=1).mean())


def rpe(gt: Pose, est: Pose) -> tuple[float, float]:
    """Relative pose error: translation norm and rotation angle of gt^-1 * est."""
    error = compose(inverse(gt), est)
    return float(np.linalg.norm(error.translation)), rotation_angle(error.rotation)


def backprojected_points(frame: Frame, level: int = 0) -> np.ndarray:
    """All valid depth pixels of a frame lifted to 3D, the usual EPE point set."""
    depth = frame.depth_levels.level(level)
    intr = frame.level_intrinsics(level)
    ys, xs = np.nonzero(depth.valid)
    z = depth.plane()[ys, xs]
    return np.stack(
        [(xs - intr.cx) * z / intr.fx, (ys - intr.cy) * z / intr.fy, z], axis=1
    )


def accumulate(pair_poses, start_timestamp: float | None = None) -> TrajectoryRecord:
    """Chain relative poses into a world trajectory starting at identity.

    ``pair_poses`` holds ``(timestamp, T_AB)`` per step, stamped with the
    arriving frame's time.  When ``start_timestamp`` is given an identity
    entry for the starting frame is prepended.
    """
    entries = []
    world = Pose.identity()
    if start_timestamp is not None:
        entries.append((start_timestamp, world))
    for timestamp, rel in pair_poses:
        world = compose(world, rel)
        entries.append((timestamp, world))
    return TrajectoryRecord(tuple(entries))


def write_trajectory(path, record: TrajectoryRecord) -> None:
    with open(path, "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n")
        for timestamp, pose in record.entries:
            fh.write(f"{timestamp:.6f} {format_pose_line(pose)}\n")


def read_trajectory(path) -> TrajectoryRecord:
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ParseError(path, lineno, f"expected 8 fields, got {len(parts)}")
            try:
                stamp = float(parts[0])
                pose = parse_pose_line(" ".join(parts[1:]))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            entries.append((stamp, pose))
    return TrajectoryRecord(tuple(entries))


def write_metrics_csv(path, rows) -> None:
    """Rows of :class:`PairMetrics`; NaN fields are written as empty cells."""

    def cell(value: float) -> str:
        return "" if math.isnan(value) else f"{value:.9f}"

    with open(path, "w") as fh:
        fh.write(METRICS_CSV_HEADER + "\n")
        for row in rows:
            fh.write(
                f"{row.timestamp:.6f},{cell(row.epe)},{cell(row.rpe_trans)},{cell(row.rpe_rot)}\n"
            )


def read_metrics_csv(path) -> list:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != METRICS_CSV_HEADER:
            raise ParseError(path, 1, f"unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(path, lineno, f"expected 4 columns, got {len(parts)}")
            values = [float(p) if p else math.nan for p in parts]
            rows.append(PairMetrics(values[0], values[1], values[2], values[3]))
    return rows
