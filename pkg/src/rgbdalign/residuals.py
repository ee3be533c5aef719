"""Gauss-Newton normal equations for feature-metric and ICP alignment.

Sign convention used throughout: the per-pixel Jacobian J is the derivative
of the residual under a small motion ``exp(delta)`` applied to frame B's
points, and the accumulated right-hand side is ``b = sum(J^T r)``.  The
solver then takes the step ``delta = (H + damping)^-1 b`` and updates the
pose as ``T <- T * exp(delta)^-1``, which descends the cost for both residual
types.  Equivalently, ``b`` is the negative gradient of half the template-
perturbed cost, a relation the test suite checks by finite differences.

Builders are pure: given identical inputs they return bit-identical systems.
The pixel loop is expressed as whole-array reductions, so results do not
depend on any worker partitioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NoValidPixelsError, SizeMismatchError
from .features import Frame
from .geometry import EPSILON_Z, Pose, exp, warp_jacobian
from .imagegrid import gradient, sample_bilinear

# Projective-association gates for the point-to-plane term.
ICP_MAX_DISTANCE = 0.2
ICP_MAX_NORMAL_ANGLE_DEG = 45.0

# Structured-light depth noise model: sigma_z(z) = A + B * (z - Z0)^2.
DEPTH_NOISE_A = 0.0012
DEPTH_NOISE_B = 0.0019
DEPTH_NOISE_Z0 = 0.4

DEFAULT_ICP_WEIGHT = 0.01


@dataclass(frozen=True)
class NormalEquations:
    """Accumulated 6x6 system: H = sum J^T J, b = sum J^T r, plus bookkeeping."""

    H: np.ndarray
    b: np.ndarray
    cost: float
    valid_count: int

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float).reshape(6, 6)
        b = np.asarray(self.b, dtype=float).reshape(6)
        H.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class PrecomputedTemplate:
    """Per-pixel constants of frame B at one level, packed over valid pixels.

    Everything that does not depend on the current pose estimate is cached
    here once per level: 3D points, warp Jacobians, features, uncertainties
    and both gradients.
    """

    level: int
    height: int
    width: int
    valid: np.ndarray
    pixels: np.ndarray
    points: np.ndarray
    warp_jac: np.ndarray
    features: np.ndarray
    grad_features: np.ndarray
    sigma: np.ndarray
    grad_sigma: np.ndarray

    @property
    def valid_count(self) -> int:
        return self.points.shape[0]


def precompute_template(frame_b: Frame, level: int) -> PrecomputedTemplate:
    """Cache the pose-independent factors of the feature system for one level."""
    feat = frame_b.features.level(level)
    sigma = frame_b.uncertainty.level(level)
    depth = frame_b.depth_levels.level(level)
    intr = frame_b.level_intrinsics(level)

    feat_dx, feat_dy = gradient(feat)
    sig_dx, sig_dy = gradient(sigma)

    valid = (
        depth.valid
        & (depth.plane() > EPSILON_Z)
        & feat.valid
        & feat_dx.valid
        & feat_dy.valid
        & sigma.valid
        & sig_dx.valid
        & sig_dy.valid
    )
    ys, xs = np.nonzero(valid)
    pixels = np.stack([xs.astype(float), ys.astype(float)], axis=1)
    z = depth.plane()[ys, xs]
    points = np.stack(
        [
            (pixels[:, 0] - intr.cx) * z / intr.fx,
            (pixels[:, 1] - intr.cy) * z / intr.fy,
            z,
        ],
        axis=1,
    )
    warp_jac = warp_jacobian(points, intr) if len(points) else np.zeros((0, 2, 6))
    grad_features = np.stack([feat_dx.data[ys, xs], feat_dy.data[ys, xs]], axis=2)
    grad_sigma = np.stack([sig_dx.plane()[ys, xs], sig_dy.plane()[ys, xs]], axis=1)

    return PrecomputedTemplate(
        level=level,
        height=feat.height,
        width=feat.width,
        valid=valid,
        pixels=pixels,
        points=points,
        warp_jac=warp_jac,
        features=feat.data[ys, xs],
        grad_features=grad_features,
        sigma=sigma.plane()[ys, xs],
        grad_sigma=grad_sigma,
    )


def build_feature_system(
    frame_a: Frame,
    template: PrecomputedTemplate,
    xi: np.ndarray,
    level: int,
    depth_gate: float | None = None,
) -> NormalEquations:
    """Accumulate the uncertainty-normalised feature system at twist ``xi``.

    Each valid template pixel is warped into frame A via ``exp(xi)``; frame
    A's features and uncertainty are sampled bilinearly, out-of-bounds or
    masked samples drop out.  ``depth_gate`` optionally rejects pixels whose
    warped depth disagrees with frame A's depth by more than the gate (an
    occlusion test, off by default).
    """
    if template.level != level:
        raise SizeMismatchError(f"template level {template.level} != requested {level}")
    feat_a = frame_a.features.level(level)
    sigma_a_map = frame_a.uncertainty.level(level)
    if (feat_a.height, feat_a.width) != (template.height, template.width):
        raise SizeMismatchError("frame A level geometry differs from template")
    intr = frame_a.level_intrinsics(level)

    pose = exp(xi)
    q = template.points @ pose.rotation.T + pose.translation
    front = q[:, 2] > EPSILON_Z
    idx = np.nonzero(front)[0]
    if idx.size == 0:
        raise NoValidPixelsError("all warped points behind the camera")
    q = q[idx]
    u = np.stack(
        [intr.fx * q[:, 0] / q[:, 2] + intr.cx, intr.fy * q[:, 1] / q[:, 2] + intr.cy],
        axis=1,
    )

    f_a, ok_f = sample_bilinear(feat_a, u)
    s_a, ok_s = sample_bilinear(sigma_a_map, u)
    keep = ok_f & ok_s
    if depth_gate is not None:
        d_a, ok_d = sample_bilinear(frame_a.depth_levels.level(level), u)
        keep &= ok_d & (np.abs(q[:, 2] - d_a[:, 0]) < depth_gate)
    idx = idx[keep]
    if idx.size == 0:
        raise NoValidPixelsError("no warped pixel lands on valid frame-A data")

    f_a = f_a[keep]
    sigma_a = s_a[keep, 0]
    f_b = template.features[idx]
    sigma_b = template.sigma[idx]

    r_bar = f_a - f_b
    sigma_f = np.sqrt(sigma_a * sigma_a + sigma_b * sigma_b)
    r = r_bar / sigma_f[:, None]

    # J = (grad(F_B)/sigma_f + r_bar * sigma_B * grad(sigma_B)/sigma_f^3) * dW
    coeff = sigma_b / (sigma_f**3)
    j_pix = (
        template.grad_features[idx] / sigma_f[:, None, None]
        + r_bar[:, :, None] * coeff[:, None, None] * template.grad_sigma[idx][:, None, :]
    )
    j = np.einsum("ncd,ndk->nck", j_pix, template.warp_jac[idx])

    H = np.einsum("nci,ncj->ij", j, j)
    b = np.einsum("nci,nc->i", j, r)
    cost = float(np.einsum("nc,nc->", r, r))
    return NormalEquations(H=H, b=b, cost=cost, valid_count=int(idx.size))


def _vertex_normal_maps(frame: Frame, level: int):
    """Backprojected points and central-difference surface normals for a level.

    Normals are unit length, oriented toward the camera, and valid only where
    the pixel and its four depth neighbours are valid.
    """
    depth = frame.depth_levels.level(level)
    intr = frame.level_intrinsics(level)
    h, w = depth.height, depth.width
    us, vs = np.meshgrid(np.arange(w, dtype=float), np.arange(h, dtype=float))
    z = depth.plane()
    vertices = np.stack(
        [(us - intr.cx) * z / intr.fx, (vs - intr.cy) * z / intr.fy, z], axis=2
    )

    tangent_u = np.zeros_like(vertices)
    tangent_v = np.zeros_like(vertices)
    tangent_u[:, 1:-1] = vertices[:, 2:] - vertices[:, :-2]
    tangent_v[1:-1, :] = vertices[2:, :] - vertices[:-2, :]
    normals = np.cross(tangent_u, tangent_v)
    norm = np.linalg.norm(normals, axis=2)

    n_valid = np.zeros((h, w), dtype=bool)
    n_valid[1:-1, 1:-1] = (
        depth.valid[1:-1, 1:-1]
        & depth.valid[1:-1, :-2]
        & depth.valid[1:-1, 2:]
        & depth.valid[:-2, 1:-1]
        & depth.valid[2:, 1:-1]
    )
    n_valid &= norm > 1e-12
    safe = np.where(norm > 1e-12, norm, 1.0)
    normals = normals / safe[:, :, None]
    # orient toward the camera: n . p must be negative
    flip = np.einsum("hwc,hwc->hw", normals, vertices) > 0
    normals = np.where(flip[:, :, None], -normals, normals)
    return vertices, normals, depth.valid & (z > EPSILON_Z), n_valid


def build_icp_system(
    frame_a: Frame,
    frame_b: Frame,
    xi: np.ndarray,
    level: int,
    sigma_mode: str = "quadratic",
    max_distance: float = ICP_MAX_DISTANCE,
    max_normal_angle_deg: float = ICP_MAX_NORMAL_ANGLE_DEG,
) -> NormalEquations:
    """Point-to-plane ICP system with projective data association.

    Frame B's points are transformed by ``exp(xi)`` and projected into frame
    A; the hit pixel supplies frame A's backprojected point and normal.
    Correspondences further apart than ``max_distance`` or with normals
    disagreeing by more than ``max_normal_angle_deg`` are rejected.
    ``sigma_mode`` selects the per-point variance: ``"quadratic"`` applies a
    depth-dependent sensor noise curve, ``"constant"`` uses 1.
    """
    depth_b = frame_b.depth_levels.level(level)
    intr_a = frame_a.level_intrinsics(level)
    depth_a = frame_a.depth_levels.level(level)
    if (depth_a.height, depth_a.width) != (depth_b.height, depth_b.width):
        raise SizeMismatchError("frames disagree in level geometry")
    if sigma_mode not in ("quadratic", "constant"):
        raise ValueError(f"unknown sigma_mode {sigma_mode!r}")

    vertices_a, normals_a, vert_valid_a, norm_valid_a = _vertex_normal_maps(frame_a, level)
    _, normals_b, vert_valid_b, norm_valid_b = _vertex_normal_maps(frame_b, level)

    ys, xs = np.nonzero(vert_valid_b & norm_valid_b)
    if ys.size == 0:
        raise NoValidPixelsError("frame B has no valid oriented points")
    intr_b = frame_b.level_intrinsics(level)
    z_b = depth_b.plane()[ys, xs]
    p_b = np.stack(
        [(xs - intr_b.cx) * z_b / intr_b.fx, (ys - intr_b.cy) * z_b / intr_b.fy, z_b],
        axis=1,
    )
    n_b = normals_b[ys, xs]

    pose = exp(xi)
    q = p_b @ pose.rotation.T + pose.translation
    front = q[:, 2] > EPSILON_Z

    u = np.full((len(q), 2), -1.0)
    u[front] = np.stack(
        [
            intr_a.fx * q[front, 0] / q[front, 2] + intr_a.cx,
            intr_a.fy * q[front, 1] / q[front, 2] + intr_a.cy,
        ],
        axis=1,
    )
    px = np.round(u[:, 0]).astype(int)
    py = np.round(u[:, 1]).astype(int)
    in_bounds = front & (px >= 0) & (px < depth_a.width) & (py >= 0) & (py < depth_a.height)
    px_c = np.clip(px, 0, depth_a.width - 1)
    py_c = np.clip(py, 0, depth_a.height - 1)

    keep = in_bounds & vert_valid_a[py_c, px_c] & norm_valid_a[py_c, px_c]
    p_a = vertices_a[py_c, px_c]
    n_a = normals_a[py_c, px_c]

    diff = q - p_a
    keep &= np.linalg.norm(diff, axis=1) <= max_distance
    n_b_world = n_b @ pose.rotation.T
    cos_limit = math.cos(math.radians(max_normal_angle_deg))
    keep &= np.einsum("nc,nc->n", n_a, n_b_world) >= cos_limit
    if not keep.any():
        raise NoValidPixelsError("no ICP correspondence survived the gates")

    q, p_a, n_a, p_b = q[keep], p_a[keep], n_a[keep], p_b[keep]
    r = np.einsum("nc,nc->n", n_a, q - p_a)

    if sigma_mode == "quadratic":
        z = p_b[:, 2]
        sigma_z = DEPTH_NOISE_A + DEPTH_NOISE_B * (z - DEPTH_NOISE_Z0) ** 2
        weight = 1.0 / (sigma_z * sigma_z)
    else:
        weight = np.ones(len(r))

    n_rot = n_a @ pose.rotation  # R^T n_a, row-wise
    j = np.concatenate([n_rot, np.cross(p_b, n_rot)], axis=1)

    H = np.einsum("n,ni,nj->ij", weight, j, j)
    b = np.einsum("n,ni,n->i", weight, j, r)
    cost = float(np.einsum("n,n,n->", weight, r, r))
    return NormalEquations(H=H, b=b, cost=cost, valid_count=int(len(r)))


def combine(feat: NormalEquations, icp: NormalEquations, w_g: float) -> NormalEquations:
    """Weighted sum of the feature and geometric systems.

    With ``w_g = 0`` the result equals the feature system exactly.  The pixel
    count bookkeeping follows the feature term; the ICP count stays available
    on its own system.
    """
    if w_g < 0:
        raise ValueError("w_g must be >= 0")
    return NormalEquations(
        H=feat.H + w_g * icp.H,
        b=feat.b + w_g * icp.b,
        cost=feat.cost + w_g * icp.cost,
        valid_count=feat.valid_count,
    )
