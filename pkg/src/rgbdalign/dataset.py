"""Dataset ingestion and synthetic ground-truth scenes.

Two responsibilities live here: parsing TUM-layout RGB-D directories
(``rgb.txt`` / ``depth.txt`` / ``groundtruth.txt`` with 16-bit depth rasters,
depth scale 5000) and rendering analytic test scenes where the exact relative
pose between two views is known by construction.

Synthetic scenes are unions of textured planes; every pixel's depth comes from
an exact ray-plane intersection and its intensity from a closed-form texture
evaluated at the hit point, so both views carry consistent texture without any
resampling step.
"""

from __future__ import annotations

import bisect
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import (
    EmptyAssociationError,
    MissingFileError,
    OutOfFrustumError,
    ParseError,
)
from .features import DEPTH_MAX, DEPTH_MIN, FeatureProviderSpec, Frame, make_frame
from .geometry import (
    CameraIntrinsics,
    Pose,
    compose,
    format_pose_line,
    inverse,
    quaternion_from_rotation,
    rotation_from_quaternion,
)
from .imagegrid import DenseMap, build_pyramid

# TUM convention: stored 16-bit depth counts per meter.
DEPTH_SCALE = 5000.0

DEFAULT_MAX_DT = 0.02

# Published TUM camera calibrations, overridable via explicit intrinsics.
TUM_INTRINSICS = {
    "fr1": CameraIntrinsics(fx=517.3, fy=516.5, cx=318.6, cy=255.3, width=640, height=480),
    "fr2": CameraIntrinsics(fx=520.9, fy=521.0, cx=325.1, cy=249.7, width=640, height=480),
}

DEFAULT_SYNTH_INTRINSICS = CameraIntrinsics(
    fx=110.0, fy=110.0, cx=80.0, cy=60.0, width=160, height=120
)

# Rendering requires at least this fraction of pixels to hit the surface at a
# valid depth in both views.
MIN_SCENE_COVERAGE = 0.5


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class ScenePlane:
    """Infinite textured plane: anchor point, unit normal, in-plane texture axes."""

    point: np.ndarray
    normal: np.ndarray
    axis_s: np.ndarray
    axis_t: np.ndarray
    # texture: 0.5 + sum_i amp[i] * sin(2*pi*(freq[i,0]*s + freq[i,1]*t) + phase[i])
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def texture(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        value = np.full_like(s, 0.5)
        for amp, (fs, ft), ph in zip(self.amplitudes, self.frequencies, self.phases):
            value = value + amp * np.sin(2.0 * math.pi * (fs * s + ft * t) + ph)
        return value


def _make_plane(point, normal, amplitudes, frequencies, phases) -> ScenePlane:
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    helper = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    axis_s = np.cross(normal, helper)
    axis_s /= np.linalg.norm(axis_s)
    axis_t = np.cross(normal, axis_s)
    return ScenePlane(
        point=np.asarray(point, dtype=float),
        normal=normal,
        axis_s=axis_s,
        axis_t=axis_t,
        amplitudes=np.asarray(amplitudes, dtype=float),
        frequencies=np.asarray(frequencies, dtype=float),
        phases=np.asarray(phases, dtype=float),
    )


# Texture component wavelengths are incommensurate and span coarse-to-fine
# scales: the low-frequency term keeps a wide convergence basin on the
# coarsest pyramid level, the higher ones sharpen the fine-level minimum.
_TEXTURE_AMPLITUDES = (0.16, 0.12, 0.08)
_TEXTURE_FREQUENCIES = ((0.70, 0.25), (-0.50, 1.90), (2.90, -1.10))
_TEXTURE_PHASES = (0.9, 2.3, 4.1)


@dataclass(frozen=True)
class SynthScene:
    """Analytic scene: one or more textured planes seen by a pinhole camera."""

    intrinsics: CameraIntrinsics = DEFAULT_SYNTH_INTRINSICS
    planes: tuple = ()
    noise: float = 0.0

    @classmethod
    def plane_scene(
        cls,
        intrinsics: CameraIntrinsics = DEFAULT_SYNTH_INTRINSICS,
        depth: float = 2.0,
        tilt: float = 0.0,
        noise: float = 0.0,
        amplitudes=_TEXTURE_AMPLITUDES,
        frequencies=_TEXTURE_FREQUENCIES,
        phases=_TEXTURE_PHASES,
    ) -> "SynthScene":
        """Single plane facing the camera at the given depth, optionally tilted.

        The texture mix is overridable; dropping the low-frequency component
        narrows the coarse-level convergence basin, which some tests exploit.
        """
        normal = np.array([math.sin(tilt), 0.0, -math.cos(tilt)])
        plane = _make_plane([0.0, 0.0, depth], normal, amplitudes, frequencies, phases)
        return cls(intrinsics=intrinsics, planes=(plane,), noise=noise)

    @classmethod
    def corner_scene(
        cls,
        intrinsics: CameraIntrinsics = DEFAULT_SYNTH_INTRINSICS,
        depth: float = 2.0,
        noise: float = 0.0,
    ) -> "SynthScene":
        """Three mutually tilted planes; constrains all six motion directions
        for purely geometric alignment."""
        tilt = math.radians(25.0)
        specs = [
            ([0.0, 0.0, depth], [0.0, 0.0, -1.0]),
            ([0.45, 0.0, depth - 0.25], [-math.sin(tilt), 0.0, -math.cos(tilt)]),
            ([0.0, 0.4, depth - 0.25], [0.0, -math.sin(tilt), -math.cos(tilt)]),
        ]
        planes = []
        for i, (point, normal) in enumerate(specs):
            phases = tuple(p + 0.7 * i for p in _TEXTURE_PHASES)
            planes.append(
                _make_plane(point, normal, _TEXTURE_AMPLITUDES, _TEXTURE_FREQUENCIES, phases)
            )
        return cls(intrinsics=intrinsics, planes=tuple(planes), noise=noise)


def render_view(scene: SynthScene, camera_pose: Pose) -> tuple[np.ndarray, np.ndarray]:
    """Render intensity and depth seen from a camera at the given world pose.

    Returns ``(gray, depth)``; pixels whose ray misses every plane get NaN
    depth.  Depth equals the ray parameter of the closest positive hit, which
    for unit-z ray directions is exactly the camera-frame z coordinate.
    """
    k = scene.intrinsics
    us, vs = np.meshgrid(np.arange(k.width, dtype=float), np.arange(k.height, dtype=float))
    dirs_cam = np.stack([(us - k.cx) / k.fx, (vs - k.cy) / k.fy, np.ones_like(us)], axis=-1)
    dirs_world = dirs_cam @ camera_pose.rotation.T
    origin = camera_pose.translation

    best_depth = np.full((k.height, k.width), np.inf)
    gray = np.full((k.height, k.width), 0.5)
    for plane in scene.planes:
        denom = dirs_world @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((plane.point - origin) @ plane.normal) / denom
        hit = np.isfinite(lam) & (lam > 1e-9) & (np.abs(denom) > 1e-12) & (lam < best_depth)
        if not hit.any():
            continue
        points = origin + lam[..., None] * dirs_world
        rel = points - plane.point
        s = rel @ plane.axis_s
        t = rel @ plane.axis_t
        value = plane.texture(s, t)
        gray = np.where(hit, value, gray)
        best_depth = np.where(hit, lam, best_depth)

    depth = np.where(np.isfinite(best_depth), best_depth, np.nan)
    return gray, depth


def make_pair(
    scene: SynthScene,
    true_motion: Pose,
    provider: FeatureProviderSpec | None = None,
    levels: int = 4,
    seed: int = 0,
) -> tuple[Frame, Frame, Pose]:
    """Render frames A and B for a known relative motion T_AB (B -> A).

    Frame A's camera defines the world frame; frame B is rendered from the
    displaced camera by fresh ray casting, never by warping frame A.
    """
    gray_a, depth_a = render_view(scene, Pose.identity())
    gray_b, depth_b = render_view(scene, true_motion)
    if scene.noise > 0:
        rng = np.random.default_rng(seed)
        depth_a = depth_a + rng.normal(0.0, scene.noise, size=depth_a.shape)
        depth_b = depth_b + rng.normal(0.0, scene.noise, size=depth_b.shape)
    for name, depth in (("A", depth_a), ("B", depth_b)):
        usable = np.isfinite(depth) & (depth >= DEPTH_MIN) & (depth <= DEPTH_MAX)
        if usable.mean() < MIN_SCENE_COVERAGE:
            raise OutOfFrustumError(
                f"frame {name} sees only {usable.mean():.0%} of the surface"
            )
    frame_a = make_frame(gray_a, depth_a, scene.intrinsics, provider, levels, timestamp=0.0)
    frame_b = make_frame(gray_b, depth_b, scene.intrinsics, provider, levels, timestamp=1.0)
    return frame_a, frame_b, true_motion


# ---------------------------------------------------------------------------
# TUM-layout sequences


@dataclass(frozen=True)
class AssociatedFrame:
    timestamp: float
    rgb_path: str
    depth_path: str
    gt_pose: Pose | None = None


@dataclass(frozen=True)
class SequenceIndex:
    rgb_entries: tuple
    depth_entries: tuple
    gt_entries: tuple
    associated: tuple


@dataclass(frozen=True)
class FramePair:
    index_a: int
    index_b: int
    frame_a: AssociatedFrame
    frame_b: AssociatedFrame
    gt_relative: Pose


def _parse_stamped_file(path, n_values=None):
    """Lines of ``timestamp value...``; '#' comments and blank lines skipped."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                stamp = float(parts[0])
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad timestamp {parts[0]!r}") from exc
            values = parts[1:]
            if n_values is not None and len(values) != n_values:
                raise ParseError(
                    path, lineno, f"expected {n_values} values, got {len(values)}"
                )
            if entries and stamp <= entries[-1][0]:
                raise ParseError(path, lineno, "timestamps must be strictly increasing")
            entries.append((stamp, values))
    return entries


def associate_timestamps(times_a, times_b, max_dt: float):
    """Greedy one-to-one nearest-timestamp matching within ``max_dt``.

    All candidate pairs are ranked by |dt|; a pair is accepted when neither
    side is taken yet.  Returns index pairs into the input lists.
    """
    candidates = []
    times_b = list(times_b)
    for i, ta in enumerate(times_a):
        lo = bisect.bisect_left(times_b, ta - max_dt)
        hi = bisect.bisect_right(times_b, ta + max_dt)
        for j in range(lo, hi):
            candidates.append((abs(ta - times_b[j]), i, j))
    candidates.sort()
    taken_a, taken_b = set(), set()
    matches = []
    for _, i, j in candidates:
        if i in taken_a or j in taken_b:
            continue
        taken_a.add(i)
        taken_b.add(j)
        matches.append((i, j))
    matches.sort()
    return matches


def _slerp(q0: np.ndarray, q1: np.ndarray, s: float) -> np.ndarray:
    if np.dot(q0, q1) < 0:
        q1 = -q1
    dot = min(1.0, max(-1.0, float(np.dot(q0, q1))))
    theta = math.acos(dot)
    if theta < 1e-9:
        q = (1 - s) * q0 + s * q1
    else:
        q = (math.sin((1 - s) * theta) * q0 + math.sin(s * theta) * q1) / math.sin(theta)
    return q / np.linalg.norm(q)


def interpolate_groundtruth(gt_entries, timestamp: float) -> Pose | None:
    """Pose at an arbitrary time: linear translation, spherical-linear rotation.

    Returns the stored pose exactly at a node; None outside the covered span.
    """
    if not gt_entries:
        return None
    times = [t for t, _ in gt_entries]
    if timestamp < times[0] or timestamp > times[-1]:
        return None
    i = bisect.bisect_left(times, timestamp)
    if i < len(times) and times[i] == timestamp:
        return gt_entries[i][1]
    t0, pose0 = gt_entries[i - 1]
    t1, pose1 = gt_entries[i]
    s = (timestamp - t0) / (t1 - t0)
    q0 = quaternion_from_rotation(pose0.rotation)
    q1 = quaternion_from_rotation(pose1.rotation)
    rot = rotation_from_quaternion(_slerp(q0, q1, s))
    trans = (1 - s) * pose0.translation + s * pose1.translation
    return Pose(rot, trans)


def load_sequence(directory, max_dt: float = DEFAULT_MAX_DT) -> SequenceIndex:
    """Index a TUM-layout directory and associate rgb/depth/ground-truth."""
    rgb_file = os.path.join(directory, "rgb.txt")
    depth_file = os.path.join(directory, "depth.txt")
    gt_file = os.path.join(directory, "groundtruth.txt")
    for required in (rgb_file, depth_file):
        if not os.path.isfile(required):
            raise MissingFileError(required)

    rgb_entries = [
        (t, os.path.join(directory, v[0])) for t, v in _parse_stamped_file(rgb_file, 1)
    ]
    depth_entries = [
        (t, os.path.join(directory, v[0])) for t, v in _parse_stamped_file(depth_file, 1)
    ]
    gt_entries = []
    if os.path.isfile(gt_file):
        for t, values in _parse_stamped_file(gt_file, 7):
            vals = [float(x) for x in values]
            pose = Pose(rotation_from_quaternion(vals[3:]), np.array(vals[:3]))
            gt_entries.append((t, pose))

    matches = associate_timestamps(
        [t for t, _ in rgb_entries], [t for t, _ in depth_entries], max_dt
    )
    if not matches:
        raise EmptyAssociationError(f"no rgb/depth pairs within {max_dt}s")

    associated = []
    for i, j in matches:
        t_rgb, rgb_path = rgb_entries[i]
        _, depth_path = depth_entries[j]
        gt_pose = interpolate_groundtruth(gt_entries, t_rgb)
        associated.append(AssociatedFrame(t_rgb, rgb_path, depth_path, gt_pose))

    return SequenceIndex(
        rgb_entries=tuple(rgb_entries),
        depth_entries=tuple(depth_entries),
        gt_entries=tuple(gt_entries),
        associated=tuple(associated),
    )


def _read_depth_raster(path) -> np.ndarray:
    image = Image.open(path)
    data = np.asarray(image)
    if data.ndim != 2:
        raise ParseError(path, 0, f"depth raster must be single channel, got {data.shape}")
    meters = data.astype(float) / DEPTH_SCALE
    meters[data == 0] = np.nan
    return meters


def _resize_map(grid: DenseMap, k: CameraIntrinsics, halvings: int, method: str):
    if halvings == 0:
        return grid, k
    pyr = build_pyramid(grid, k, halvings + 1, method=method)
    return pyr.level(halvings), pyr.intrinsics(halvings)


def load_frame(
    entry: AssociatedFrame,
    intrinsics: CameraIntrinsics,
    target_resolution: tuple[int, int] = (160, 120),
    provider: FeatureProviderSpec | None = None,
    levels: int = 4,
) -> Frame:
    """Read one associated rgb/depth pair, resample to the working resolution.

    Resampling reduces by exact powers of two (area averaging for intensity,
    valid-median blocks for depth) and scales the intrinsics by the same
    factor.
    """
    from .features import to_grayscale  # local import to avoid cycle at module load

    gray = to_grayscale(np.asarray(Image.open(entry.rgb_path).convert("RGB")))
    depth = _read_depth_raster(entry.depth_path)

    tw, th = target_resolution
    if (intrinsics.width, intrinsics.height) != (tw, th):
        ratio = intrinsics.width / tw
        halvings = int(round(math.log2(ratio)))
        if 2**halvings * tw != intrinsics.width or 2**halvings * th != intrinsics.height:
            raise ValueError(
                f"cannot resample {intrinsics.width}x{intrinsics.height} "
                f"to {tw}x{th} by halving"
            )
        gray_map, _ = _resize_map(
            DenseMap(gray, np.isfinite(gray)), intrinsics, halvings, "mean"
        )
        depth_valid = np.isfinite(depth)
        depth_map, k_small = _resize_map(
            DenseMap(np.where(depth_valid, depth, 0.0), depth_valid),
            intrinsics,
            halvings,
            "median",
        )
        gray = gray_map.plane()
        depth = np.where(depth_map.valid, depth_map.plane(), np.nan)
        intrinsics = k_small

    return make_frame(gray, depth, intrinsics, provider, levels, timestamp=entry.timestamp)


def subsample_pairs(index: SequenceIndex, kf_interval: int) -> list:
    """Evaluation pairs (i, i + interval) where both frames carry ground truth."""
    if kf_interval < 1:
        raise ValueError("interval must be >= 1")
    pairs = []
    frames = index.associated
    for i in range(len(frames) - kf_interval):
        a, b = frames[i], frames[i + kf_interval]
        if a.gt_pose is None or b.gt_pose is None:
            continue
        gt_rel = compose(inverse(a.gt_pose), b.gt_pose)
        pairs.append(FramePair(i, i + kf_interval, a, b, gt_rel))
    return pairs


# ---------------------------------------------------------------------------
# Synthetic sequence writer (TUM layout on disk)


def write_synth_sequence(
    out_dir,
    scene: SynthScene,
    step_motion: Pose,
    n_frames: int = 2,
    seed: int = 0,
) -> None:
    """Write an n-frame constant-motion mini-dataset in TUM layout.

    Frame k is rendered from camera pose ``step_motion^k``; ground truth holds
    the world-from-camera poses, so the relative pose of consecutive frames is
    exactly ``step_motion``.
    """
    rgb_dir = os.path.join(out_dir, "rgb")
    depth_dir = os.path.join(out_dir, "depth")
    os.makedirs(rgb_dir, exist_ok=True)
    os.makedirs(depth_dir, exist_ok=True)

    rgb_lines, depth_lines, gt_lines = [], [], []
    camera = Pose.identity()
    rng = np.random.default_rng(seed)
    for k in range(n_frames):
        gray, depth = render_view(scene, camera)
        if scene.noise > 0:
            depth = depth + rng.normal(0.0, scene.noise, size=depth.shape)
        usable = np.isfinite(depth) & (depth >= DEPTH_MIN) & (depth <= DEPTH_MAX)
        if usable.mean() < MIN_SCENE_COVERAGE:
            raise OutOfFrustumError(f"frame {k} sees too little of the surface")

        stamp = float(k)
        gray8 = np.clip(np.round(gray * 255.0), 0, 255).astype(np.uint8)
        rgb = np.repeat(gray8[:, :, None], 3, axis=2)
        depth16 = np.where(
            np.isfinite(depth), np.clip(np.round(depth * DEPTH_SCALE), 0, 65535), 0
        ).astype(np.uint16)

        rgb_name = f"rgb/{stamp:.6f}.png"
        depth_name = f"depth/{stamp:.6f}.png"
        Image.fromarray(rgb).save(os.path.join(out_dir, rgb_name))
        Image.fromarray(depth16).save(os.path.join(out_dir, depth_name))
        rgb_lines.append(f"{stamp:.6f} {rgb_name}")
        depth_lines.append(f"{stamp:.6f} {depth_name}")
        gt_lines.append(f"{stamp:.6f} {format_pose_line(camera)}")
        camera = compose(camera, step_motion)

    header = "# timestamp filename"
    with open(os.path.join(out_dir, "rgb.txt"), "w") as fh:
        fh.write(header + "\n" + "\n".join(rgb_lines) + "\n")
    with open(os.path.join(out_dir, "depth.txt"), "w") as fh:
        fh.write(header + "\n" + "\n".join(depth_lines) + "\n")
    with open(os.path.join(out_dir, "groundtruth.txt"), "w") as fh:
        fh.write("# timestamp tx ty tz qx qy qz qw\n" + "\n".join(gt_lines) + "\n")
