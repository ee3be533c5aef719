import math
import os

import numpy as np
import pytest

from rgbdalign.dataset import (
    DEFAULT_SYNTH_INTRINSICS,
    SynthScene,
    associate_timestamps,
    interpolate_groundtruth,
    load_frame,
    load_sequence,
    make_pair,
    render_view,
    subsample_pairs,
    write_synth_sequence,
)
from rgbdalign.errors import (
    EmptyAssociationError,
    MissingFileError,
    OutOfFrustumError,
    ParseError,
)
from rgbdalign.geometry import Pose, compose, exp, inverse, log, rotation_angle


def brute_force_association(times_a, times_b, max_dt):
    candidates = []
    for i, ta in enumerate(times_a):
        for j, tb in enumerate(times_b):
            if abs(ta - tb) <= max_dt:
                candidates.append((abs(ta - tb), i, j))
    candidates.sort()
    taken_a, taken_b, out = set(), set(), []
    for _, i, j in candidates:
        if i not in taken_a and j not in taken_b:
            taken_a.add(i)
            taken_b.add(j)
            out.append((i, j))
    return sorted(out)


class TestAssociation:
    def test_aligned_timestamps_all_match(self):
        times = [0.1 * i for i in range(20)]
        matches = associate_timestamps(times, times, 0.02)
        assert matches == [(i, i) for i in range(20)]

    def test_large_offset_matches_nothing(self):
        times = [0.09 * i for i in range(20)]
        shifted = [t + 0.5 for t in times]
        assert associate_timestamps(times, shifted, 0.02) == []

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            times_a = np.sort(rng.uniform(0, 10, size=30)).tolist()
            times_b = np.sort(rng.uniform(0, 10, size=28)).tolist()
            got = associate_timestamps(times_a, times_b, 0.15)
            assert got == brute_force_association(times_a, times_b, 0.15)

    def test_rerun_on_own_output_is_fixed_point(self):
        rng = np.random.default_rng(1)
        times_a = np.sort(rng.uniform(0, 5, size=25)).tolist()
        times_b = (np.asarray(times_a) + rng.uniform(-0.01, 0.01, size=25)).tolist()
        first = associate_timestamps(times_a, times_b, 0.02)
        sub_a = [times_a[i] for i, _ in first]
        sub_b = [times_b[j] for _, j in first]
        second = associate_timestamps(sub_a, sub_b, 0.02)
        assert second == [(k, k) for k in range(len(first))]


class TestGroundTruthInterpolation:
    def make_entries(self):
        entries = []
        for k in range(5):
            rotation = exp([0, 0, 0, 0, 0, 0.2 * k]).rotation
            pose = Pose(rotation, np.array([0.1 * k, 0.0, 0.0]))
            entries.append((float(k), pose))
        return entries

    def test_exact_node_returns_stored_pose(self):
        entries = self.make_entries()
        pose = interpolate_groundtruth(entries, 2.0)
        np.testing.assert_array_equal(pose.rotation, entries[2][1].rotation)
        np.testing.assert_array_equal(pose.translation, entries[2][1].translation)

    def test_midpoint_translation_linear(self):
        entries = self.make_entries()
        pose = interpolate_groundtruth(entries, 1.5)
        np.testing.assert_allclose(pose.translation[0], 0.15, atol=1e-12)

    def test_midpoint_rotation_slerp(self):
        entries = self.make_entries()
        pose = interpolate_groundtruth(entries, 1.5)
        # rotations about a fixed axis interpolate angle linearly
        assert rotation_angle(pose.rotation) == pytest.approx(0.3, abs=1e-9)

    def test_outside_span_returns_none(self):
        entries = self.make_entries()
        assert interpolate_groundtruth(entries, -0.5) is None
        assert interpolate_groundtruth(entries, 4.5) is None


class TestSynthScene:
    def test_identity_motion_identical_frames(self):
        scene = SynthScene.plane_scene()
        frame_a, frame_b, motion = make_pair(scene, Pose.identity())
        np.testing.assert_array_equal(frame_a.intensity.data, frame_b.intensity.data)
        np.testing.assert_array_equal(frame_a.depth.data, frame_b.depth.data)

    def test_rendered_depth_matches_ray_plane_oracle(self):
        scene = SynthScene.plane_scene(depth=2.0, tilt=0.2)
        plane = scene.planes[0]
        k = scene.intrinsics
        _, depth = render_view(scene, Pose.identity())
        rng = np.random.default_rng(2)
        for _ in range(200):
            x = int(rng.integers(0, k.width))
            y = int(rng.integers(0, k.height))
            d = np.array([(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0])
            lam = (plane.point @ plane.normal) / (d @ plane.normal)
            assert depth[y, x] == pytest.approx(lam, abs=1e-10)

    def test_pure_z_translation_scales_texture_coordinates(self):
        # moving half way toward a fronto-parallel plane doubles the angular
        # size: the point seen at pixel offset p from the center in A appears
        # at 2p in B
        scene = SynthScene.plane_scene(depth=2.0)
        k = scene.intrinsics
        gray_a, _ = render_view(scene, Pose.identity())
        gray_b, _ = render_view(scene, Pose(np.eye(3), np.array([0, 0, 1.0])))
        xs = np.arange(20, dtype=float)
        row_a = np.interp(k.cx + 2 * xs, np.arange(k.width), gray_a[int(k.cy)])
        row_b = np.interp(k.cx + 4 * xs, np.arange(k.width), gray_b[int(k.cy)])
        np.testing.assert_allclose(row_a, row_b, atol=2e-3)

    def test_corner_scene_depth_is_min_over_planes(self):
        scene = SynthScene.corner_scene()
        k = scene.intrinsics
        _, depth = render_view(scene, Pose.identity())
        rng = np.random.default_rng(3)
        for _ in range(100):
            x = int(rng.integers(0, k.width))
            y = int(rng.integers(0, k.height))
            d = np.array([(x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0])
            lams = []
            for plane in scene.planes:
                denom = d @ plane.normal
                if abs(denom) > 1e-12:
                    lam = ((plane.point) @ plane.normal) / denom
                    if lam > 0:
                        lams.append(lam)
            assert depth[y, x] == pytest.approx(min(lams), abs=1e-10)

    def test_out_of_frustum(self):
        scene = SynthScene.plane_scene(depth=2.0)
        with pytest.raises(OutOfFrustumError):
            make_pair(scene, exp([0, 0, 4.0, 0, 0, 0]))  # far past the plane

    def test_noise_is_seeded_and_applied(self):
        scene = SynthScene.plane_scene(noise=0.01)
        f1, _, _ = make_pair(scene, Pose.identity(), seed=7)
        f2, _, _ = make_pair(scene, Pose.identity(), seed=7)
        f3, _, _ = make_pair(scene, Pose.identity(), seed=8)
        np.testing.assert_array_equal(f1.depth.data, f2.depth.data)
        assert not np.array_equal(f1.depth.data, f3.depth.data)


def fabricate_sequence(tmp_path, n=20, gt=True):
    scene = SynthScene.plane_scene()
    step = exp([0.01, 0.004, 0, 0, 0, 0.01])
    write_synth_sequence(tmp_path, scene, step, n_frames=n)
    if not gt:
        os.remove(os.path.join(tmp_path, "groundtruth.txt"))
    return tmp_path


class TestTumSequence:
    def test_load_sequence_associates_all(self, tmp_path):
        fabricate_sequence(tmp_path, n=6)
        index = load_sequence(tmp_path)
        assert len(index.associated) == 6
        assert all(f.gt_pose is not None for f in index.associated)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_sequence(tmp_path)

    def test_parse_error_reports_line(self, tmp_path):
        fabricate_sequence(tmp_path, n=3)
        with open(os.path.join(tmp_path, "rgb.txt"), "a") as fh:
            fh.write("not-a-timestamp foo.png\n")
        with pytest.raises(ParseError) as err:
            load_sequence(tmp_path)
        assert err.value.line_number == 5

    def test_empty_association(self, tmp_path):
        fabricate_sequence(tmp_path, n=3)
        depth_file = os.path.join(tmp_path, "depth.txt")
        with open(depth_file) as fh:
            lines = fh.readlines()
        with open(depth_file, "w") as fh:
            for line in lines:
                if line.startswith("#"):
                    fh.write(line)
                else:
                    stamp, rest = line.split(" ", 1)
                    fh.write(f"{float(stamp) + 0.5:.6f} {rest}")
        with pytest.raises(EmptyAssociationError):
            load_sequence(tmp_path, max_dt=0.02)

    def test_load_frame_depth_scale_and_clamp(self, tmp_path):
        fabricate_sequence(tmp_path, n=2)
        index = load_sequence(tmp_path)
        frame = load_frame(index.associated[0], DEFAULT_SYNTH_INTRINSICS)
        # plane at 2 m: depths near 2.0 and within the working range everywhere valid
        z = frame.depth.plane()[frame.depth.valid]
        assert z.min() >= 0.5 and z.max() <= 5.0
        assert abs(z[len(z) // 2] - 2.0) < 0.2

    def test_load_frame_round_trips_synth_depth(self, tmp_path):
        fabricate_sequence(tmp_path, n=2)
        index = load_sequence(tmp_path)
        frame = load_frame(index.associated[0], DEFAULT_SYNTH_INTRINSICS)
        scene = SynthScene.plane_scene()
        _, depth = render_view(scene, Pose.identity())
        got = frame.depth.plane()[frame.depth.valid]
        expected = depth[frame.depth.valid]
        # 16-bit quantisation at scale 5000 -> 0.1 mm steps
        assert np.abs(got - expected).max() <= 0.5 / 5000.0 + 1e-9

    def test_subsample_pairs_counts(self, tmp_path):
        fabricate_sequence(tmp_path, n=20)
        index = load_sequence(tmp_path)
        assert len(subsample_pairs(index, 1)) == 19
        assert len(subsample_pairs(index, 8)) == 12

    def test_pair_ground_truth_matches_composition(self, tmp_path):
        fabricate_sequence(tmp_path, n=10)
        index = load_sequence(tmp_path)
        pairs = subsample_pairs(index, 4)
        singles = subsample_pairs(index, 1)
        for pair in pairs:
            chained = Pose.identity()
            for k in range(pair.index_a, pair.index_b):
                chained = compose(chained, singles[k].gt_relative)
            err = compose(inverse(chained), pair.gt_relative)
            assert np.linalg.norm(err.translation) < 1e-6
            assert rotation_angle(err.rotation) < 1e-6

    def test_written_ground_truth_equals_requested_motion(self, tmp_path):
        scene = SynthScene.plane_scene()
        step = exp([0.02, 0, 0, 0, 0, 0.05])
        write_synth_sequence(tmp_path, scene, step, n_frames=3)
        index = load_sequence(tmp_path)
        rel = compose(inverse(index.associated[0].gt_pose), index.associated[1].gt_pose)
        np.testing.assert_allclose(log(rel), log(step), atol=1e-7)


class TestResampling:
    def test_quarter_resolution_scales_intrinsics(self, tmp_path):
        # render at 640x480 and load at 160x120
        from rgbdalign.geometry import CameraIntrinsics

        k_big = CameraIntrinsics(fx=440.0, fy=440.0, cx=320.0, cy=240.0, width=640, height=480)
        scene = SynthScene.plane_scene(intrinsics=k_big)
        write_synth_sequence(tmp_path, scene, Pose.identity(), n_frames=1)
        index = load_sequence(tmp_path)
        frame = load_frame(index.associated[0], k_big, target_resolution=(160, 120))
        k = frame.intrinsics
        assert (k.width, k.height) == (160, 120)
        assert k.fx == pytest.approx(110.0)
        assert k.cx == pytest.approx(80.0)

    def test_non_power_of_two_rejected(self, tmp_path):
        from rgbdalign.geometry import CameraIntrinsics

        k_big = CameraIntrinsics(fx=440.0, fy=440.0, cx=320.0, cy=240.0, width=640, height=480)
        scene = SynthScene.plane_scene(intrinsics=k_big)
        write_synth_sequence(tmp_path, scene, Pose.identity(), n_frames=1)
        index = load_sequence(tmp_path)
        with pytest.raises(ValueError):
            load_frame(index.associated[0], k_big, target_resolution=(213, 160))
