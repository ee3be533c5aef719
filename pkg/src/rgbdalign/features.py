"""Per-frame feature and uncertainty pyramids.

Built-in providers derive features from the grayscale image (identity or
intensity-plus-gradients); the ``external`` provider reads precomputed tensors
from a binary file, which is how learned feature/uncertainty maps produced by
any training framework are consumed.  Providers are stateless, so frames can
be built concurrently.

External tensor file layout (all little-endian):

    magic   4 bytes  b"DFMT"
    version u32      1
    levels  u32      number of pyramid levels
    per level:
        height u32, width u32, channels u32
        float32 feature data, row-major, height*width*channels
        float32 uncertainty data, row-major, height*width (one channel)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    ExternalFormatError,
    NonPositiveUncertaintyError,
    SizeMismatchError,
)
from .geometry import CameraIntrinsics
from .imagegrid import SIGMA_FLOOR, DenseMap, Pyramid, build_pyramid, gradient

MAGIC = b"DFMT"
FORMAT_VERSION = 1

# Depth measurements outside this range are discarded at ingestion (meters).
DEPTH_MIN = 0.5
DEPTH_MAX = 5.0

# ITU-R 601 luma weights for grayscale conversion.
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])

PROVIDER_KINDS = ("intensity", "intensitygrad", "external")


@dataclass(frozen=True)
class FeatureProviderSpec:
    """How a frame's feature/uncertainty pyramids are produced."""

    kind: str = "intensity"
    source_path: str | None = None

    def __post_init__(self):
        if self.kind not in PROVIDER_KINDS:
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "external" and not self.source_path:
            raise ValueError("external provider needs a source_path")

    @property
    def channels(self) -> int | None:
        """Channel count; None for external (read from the file header)."""
        return {"intensity": 1, "intensitygrad": 3}.get(self.kind)


@dataclass(frozen=True)
class Frame:
    """One RGB-D view with its per-level feature, uncertainty and depth data."""

    timestamp: float
    intensity: DenseMap
    depth: DenseMap
    features: Pyramid
    uncertainty: Pyramid
    depth_levels: Pyramid
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        for i in range(len(self.features)):
            f, u, d = self.features.level(i), self.uncertainty.level(i), self.depth_levels.level(i)
            if not (f.data.shape[:2] == u.data.shape[:2] == d.data.shape[:2]):
                raise SizeMismatchError(f"pyramid level {i} geometry disagrees")

    @property
    def levels(self) -> int:
        return len(self.features)

    def level_intrinsics(self, level: int) -> CameraIntrinsics:
        return self.features.intrinsics(level)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luma conversion to float in [0, 1]; accepts HxWx3 or HxW, uint8 or float."""
    image = np.asarray(image)
    if image.ndim == 3:
        gray = image.astype(float) @ GRAY_WEIGHTS
    elif image.ndim == 2:
        gray = image.astype(float)
    else:
        raise SizeMismatchError(f"expected HxW or HxWx3 image, got shape {image.shape}")
    if np.issubdtype(image.dtype, np.integer):
        gray = gray / 255.0
    return gray


def _ones_pyramid(template: Pyramid) -> Pyramid:
    levels = []
    for grid, k in template.levels:
        ones = DenseMap(np.ones((grid.height, grid.width, 1)), np.ones((grid.height, grid.width), bool))
        levels.append((ones, k))
    return Pyramid(tuple(levels))


def _intensity_gradient_pyramid(intensity_pyr: Pyramid) -> Pyramid:
    levels = []
    for grid, k in intensity_pyr.levels:
        dx, dy = gradient(grid)
        data = np.concatenate([grid.data, dx.data, dy.data], axis=2)
        valid = grid.valid & dx.valid & dy.valid
        levels.append((DenseMap(data, valid), k))
    return Pyramid(tuple(levels))


def _expected_level_shapes(k: CameraIntrinsics, levels: int) -> list[tuple[int, int]]:
    shapes = [(k.height, k.width)]
    h, w = k.height, k.width
    for _ in range(levels - 1):
        h, w = h // 2, w // 2
        shapes.append((h, w))
    return shapes


def _external_pyramids(
    spec: FeatureProviderSpec, k: CameraIntrinsics, levels: int
) -> tuple[Pyramid, Pyramid]:
    feats, sigmas = load_feature_file(spec.source_path)
    if len(feats) != levels:
        raise ExternalFormatError(
            f"file has {len(feats)} levels, frame expects {levels}"
        )
    shapes = _expected_level_shapes(k, levels)
    feat_levels, sigma_levels = [], []
    k_level = k
    for i, (f, s) in enumerate(zip(feats, sigmas)):
        if f.shape[:2] != shapes[i]:
            raise ExternalFormatError(
                f"level {i} is {f.shape[1]}x{f.shape[0]}, expected "
                f"{shapes[i][1]}x{shapes[i][0]}"
            )
        all_valid = np.ones(f.shape[:2], dtype=bool)
        feat_levels.append((DenseMap(f.astype(float), all_valid), k_level))
        clamped = np.maximum(s.astype(float), SIGMA_FLOOR)
        sigma_levels.append((DenseMap(clamped[:, :, None], all_valid), k_level))
        k_level = k_level.halved()
    return Pyramid(tuple(feat_levels)), Pyramid(tuple(sigma_levels))


def make_frame(
    rgb: np.ndarray,
    depth: np.ndarray,
    intrinsics: CameraIntrinsics,
    provider: FeatureProviderSpec | None = None,
    levels: int = 4,
    timestamp: float = 0.0,
) -> Frame:
    """Assemble a Frame: clamp depth, build pyramids, run the feature provider.

    ``depth`` is in meters; values outside [DEPTH_MIN, DEPTH_MAX] or non-finite
    are marked invalid rather than clipped.
    """
    provider = provider or FeatureProviderSpec()
    gray = to_grayscale(rgb)
    depth = np.asarray(depth, dtype=float)
    if gray.shape != depth.shape:
        raise SizeMismatchError(f"rgb {gray.shape} vs depth {depth.shape}")
    if gray.shape != (intrinsics.height, intrinsics.width):
        raise SizeMismatchError(
            f"image {gray.shape} vs intrinsics {intrinsics.height}x{intrinsics.width}"
        )

    depth_valid = np.isfinite(depth) & (depth >= DEPTH_MIN) & (depth <= DEPTH_MAX)
    intensity = DenseMap(gray, np.isfinite(gray))
    depth_map = DenseMap(np.where(depth_valid, depth, 0.0), depth_valid)

    intensity_pyr = build_pyramid(intensity, intrinsics, levels, method="mean")
    depth_pyr = build_pyramid(depth_map, intrinsics, levels, method="median")

    if provider.kind == "intensity":
        features = intensity_pyr
        uncertainty = _ones_pyramid(intensity_pyr)
    elif provider.kind == "intensitygrad":
        features = _intensity_gradient_pyramid(intensity_pyr)
        uncertainty = _ones_pyramid(intensity_pyr)
    else:
        features, uncertainty = _external_pyramids(provider, intrinsics, levels)

    return Frame(
        timestamp=timestamp,
        intensity=intensity,
        depth=depth_map,
        features=features,
        uncertainty=uncertainty,
        depth_levels=depth_pyr,
        intrinsics=intrinsics,
    )


def write_feature_file(path, features: list, uncertainties: list) -> None:
    """Write per-level feature and uncertainty tensors; float32 on disk.

    ``features[i]`` is (H, W, C); ``uncertainties[i]`` is (H, W).  Uncertainty
    values must be strictly positive and everything finite.
    """
    if len(features) != len(uncertainties):
        raise ValueError("feature and uncertainty level counts differ")
    blobs = []
    for f, s in zip(features, uncertainties):
        f = np.ascontiguousarray(f, dtype=np.float32)
        s = np.ascontiguousarray(s, dtype=np.float32)
        if f.ndim != 3 or s.ndim != 2 or f.shape[:2] != s.shape:
            raise ValueError(f"bad level shapes {f.shape} / {s.shape}")
        if not np.isfinite(f).all() or not np.isfinite(s).all():
            raise ValueError("tensors must be finite")
        if np.any(s <= 0):
            raise NonPositiveUncertaintyError("uncertainties must be > 0")
        blobs.append((f, s))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blobs)))
        for f, s in blobs:
            h, w, c = f.shape
            fh.write(struct.pack("<III", h, w, c))
            fh.write(f.tobytes())
            fh.write(s.tobytes())


def load_feature_file(path) -> tuple[list, list]:
    """Read a tensor file written by :func:`write_feature_file`.

    Returns float32 arrays untouched, so a write/load round-trip is bit-exact.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ExternalFormatError(f"bad magic {raw[:4]!r}")
    try:
        version, n_levels = struct.unpack_from("<II", raw, 4)
    except struct.error as exc:
        raise ExternalFormatError("truncated header") from exc
    if version != FORMAT_VERSION:
        raise ExternalFormatError(f"unsupported version {version}")
    offset = 12
    features, sigmas = [], []
    for i in range(n_levels):
        try:
            h, w, c = struct.unpack_from("<III", raw, offset)
        except struct.error as exc:
            raise ExternalFormatError(f"truncated level {i} header") from exc
        offset += 12
        if h == 0 or w == 0 or c == 0:
            raise ExternalFormatError(f"level {i} has zero dimension {h}x{w}x{c}")
        f_bytes = h * w * c * 4
        s_bytes = h * w * 4
        if offset + f_bytes + s_bytes > len(raw):
            raise ExternalFormatError(f"level {i} data truncated")
        f = np.frombuffer(raw, dtype="<f4", count=h * w * c, offset=offset).reshape(h, w, c)
        offset += f_bytes
        s = np.frombuffer(raw, dtype="<f4", count=h * w, offset=offset).reshape(h, w)
        offset += s_bytes
        if not np.isfinite(f).all() or not np.isfinite(s).all():
            raise ExternalFormatError(f"level {i} contains non-finite values")
        if np.any(s <= 0):
            raise NonPositiveUncertaintyError(f"level {i} uncertainty contains values <= 0")
        features.append(f)
        sigmas.append(s)
    if offset != len(raw):
        raise ExternalFormatError(f"{len(raw) - offset} trailing bytes")
    return features, sigmas


def frame_feature_tensors(frame: Frame) -> tuple[list, list]:
    """Extract a frame's pyramids as tensors suitable for write_feature_file."""
    feats = [frame.features.level(i).data for i in range(frame.levels)]
    sigmas = [frame.uncertainty.level(i).plane() for i in range(frame.levels)]
    return feats, sigmas
