import math

import numpy as np
import pytest

from rgbdalign.dataset import SynthScene, make_pair
from rgbdalign.errors import EmptyPointSetError, ParseError
from rgbdalign.evaluation import (
    METRICS_CSV_HEADER,
    PairMetrics,
    TrajectoryRecord,
    accumulate,
    backprojected_points,
    epe,
    read_metrics_csv,
    read_trajectory,
    rpe,
    write_metrics_csv,
    write_trajectory,
)
from rgbdalign.geometry import Pose, compose, exp, inverse, rotation_angle


def random_pose(rng, angle=1.0, trans=1.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    xi = np.concatenate([rng.uniform(-trans, trans, 3), axis * rng.uniform(0, angle)])
    return exp(xi)


class TestEpe:
    def test_equal_poses_zero(self):
        rng = np.random.default_rng(0)
        pose = random_pose(rng)
        points = rng.normal(size=(50, 3))
        assert epe(pose, pose, points) == 0.0

    def test_pure_translation_offset(self):
        rng = np.random.default_rng(1)
        gt = random_pose(rng)
        offset = np.array([0.03, -0.04, 0.12])
        est = Pose(gt.rotation, gt.translation + offset)
        points = rng.normal(size=(100, 3))
        assert epe(gt, est, points) == pytest.approx(np.linalg.norm(offset), rel=1e-12)

    def test_matches_per_point_brute_force(self):
        rng = np.random.default_rng(2)
        gt, est = random_pose(rng), random_pose(rng)
        points = rng.normal(size=(1000, 3))
        total = 0.0
        for p in points:
            a = gt.rotation @ p + gt.translation
            b = est.rotation @ p + est.translation
            total += math.sqrt(((a - b) ** 2).sum())
        assert epe(gt, est, points) == pytest.approx(total / 1000, rel=1e-12)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        gt, est = random_pose(rng), random_pose(rng)
        points = rng.normal(size=(64, 3))
        shuffled = points[rng.permutation(64)]
        assert epe(gt, est, points) == pytest.approx(epe(gt, est, shuffled), rel=1e-12)

    def test_empty_point_set(self):
        with pytest.raises(EmptyPointSetError):
            epe(Pose.identity(), Pose.identity(), np.zeros((0, 3)))

    def test_backprojected_points_cover_valid_depth(self):
        frame, _, _ = make_pair(SynthScene.plane_scene(), Pose.identity())
        points = backprojected_points(frame)
        assert len(points) == frame.depth.valid.sum()
        assert points[:, 2].min() >= 0.5


class TestRpe:
    def test_equal_poses(self):
        rng = np.random.default_rng(4)
        pose = random_pose(rng)
        trans, rot = rpe(pose, pose)
        assert trans == 0.0
        # arccos((trace-1)/2) resolves angles only to ~sqrt(eps) near zero
        assert rot < 1e-7

    def test_one_degree_rotation(self):
        rng = np.random.default_rng(5)
        gt = random_pose(rng)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        delta = exp(np.concatenate([np.zeros(3), axis * math.radians(1.0)]))
        est = compose(gt, delta)
        _, rot = rpe(gt, est)
        assert rot == pytest.approx(math.radians(1.0), abs=1e-9)

    def test_left_composition_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            gt, est, left = random_pose(rng), random_pose(rng), random_pose(rng)
            base = rpe(gt, est)
            moved = rpe(compose(left, gt), compose(left, est))
            assert moved[0] == pytest.approx(base[0], rel=1e-9, abs=1e-12)
            assert moved[1] == pytest.approx(base[1], rel=1e-7, abs=1e-9)

    def test_rot_clamped_never_nan(self):
        # slightly denormalised rotation must still give a finite angle
        rot = np.eye(3) * (1 + 5e-10)
        assert rotation_angle(rot) == 0.0


class TestAccumulate:
    def test_identity_steps_constant_trajectory(self):
        pairs = [(float(k), Pose.identity()) for k in range(1, 5)]
        record = accumulate(pairs, start_timestamp=0.0)
        assert len(record) == 5
        for _, pose in record.entries:
            np.testing.assert_array_equal(pose.translation, np.zeros(3))

    def test_commuting_translations_chain_linearly(self):
        step = Pose(np.eye(3), np.array([0.1, 0.0, -0.05]))
        pairs = [(float(k), step) for k in range(1, 11)]
        record = accumulate(pairs)
        np.testing.assert_allclose(
            record.entries[-1][1].translation, 10 * step.translation, atol=1e-12
        )

    def test_timestamps_must_increase(self):
        with pytest.raises(ValueError):
            TrajectoryRecord(((1.0, Pose.identity()), (1.0, Pose.identity())))


class TestTrajectoryIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        entries = []
        for k in range(20):
            entries.append((0.1 * k, random_pose(rng)))
        record = TrajectoryRecord(tuple(entries))
        path = tmp_path / "traj.txt"
        write_trajectory(path, record)
        back = read_trajectory(path)
        assert len(back) == 20
        for (t0, p0), (t1, p1) in zip(record.entries, back.entries):
            assert t0 == pytest.approx(t1, abs=1e-6)
            np.testing.assert_allclose(p1.translation, p0.translation, atol=1e-7)
            np.testing.assert_allclose(p1.rotation, p0.rotation, atol=1e-7)

    def test_read_rejects_malformed(self, tmp_path):
        path = tmp_path / "traj.txt"
        path.write_text("1.0 0 0 0 0 0 1\n")  # 7 fields, needs 8
        with pytest.raises(ParseError):
            read_trajectory(path)


class TestMetricsCsv:
    def test_round_trip_with_nan(self, tmp_path):
        rows = [
            PairMetrics(1.0, 0.01, 0.005, 0.001),
            PairMetrics(2.0, math.nan, 0.002, 0.0005),
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, rows)
        assert path.read_text().splitlines()[0] == METRICS_CSV_HEADER
        back = read_metrics_csv(path)
        assert back[0].epe == pytest.approx(0.01)
        assert math.isnan(back[1].epe)
        assert back[1].rpe_rot == pytest.approx(0.0005)
