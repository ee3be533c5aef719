"""SE(3) arithmetic and pinhole camera projection.

Twists are plain ``(6,)`` float arrays laid out as ``[rho, phi]``: the first
three components are translation (meters), the last three rotation
(axis-angle, radians).  Increments act as left-multiplicative perturbations
on points, ``p -> exp(delta) @ p``, and the solver composes updates as
``T <- T * exp(delta)^-1``; the warp Jacobian below uses the same convention.

All functions are pure and operate on immutable values; they can be called
concurrently without restriction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDepthError, NonPositiveDepthError

# Below this rotation angle the closed forms are replaced by their Taylor
# series to avoid dividing by ~0.
SMALL_ANGLE = 1e-8

# Rotations closer than this to a half turn use the axis extraction branch.
PI_ANGLE_MARGIN = 1e-6

# Minimum depth accepted by the projection, in meters.
EPSILON_Z = 1e-6

_ORTHONORMALITY_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform T_AB = (rotation, translation) mapping B-frame points to A."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.isfinite(rot).all() or not np.isfinite(trans).all():
            raise ValueError("pose entries must be finite")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > _ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (error {err:.3e})")
        det = np.linalg.det(rot)
        if abs(det - 1.0) > _ORTHONORMALITY_TOL:
            raise ValueError(f"rotation determinant {det} != 1")
        rot.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics for a resampled grid; focal lengths and principal point scale together."""
        return CameraIntrinsics(
            fx=self.fx * factor,
            fy=self.fy * factor,
            cx=self.cx * factor,
            cy=self.cy * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
        )

    def halved(self) -> "CameraIntrinsics":
        return CameraIntrinsics(
            fx=self.fx * 0.5,
            fy=self.fy * 0.5,
            cx=self.cx * 0.5,
            cy=self.cy * 0.5,
            width=self.width // 2,
            height=self.height // 2,
        )


def exp(xi: np.ndarray) -> Pose:
    """SE(3) exponential of a twist, exact Rodrigues form with series fallback.

    The translation part goes through the full V matrix so that
    ``log(exp(xi)) == xi`` for any canonical twist.
    """
    xi = np.asarray(xi, dtype=float).reshape(6)
    if not np.isfinite(xi).all():
        raise ValueError("twist must be finite")
    rho, phi = xi[:3], xi[3:]
    theta = np.linalg.norm(phi)
    k = skew(phi)
    k2 = k @ k
    if theta < SMALL_ANGLE:
        rot = np.eye(3) + k + 0.5 * k2
        v = np.eye(3) + 0.5 * k + k2 / 6.0
    else:
        t2 = theta * theta
        rot = np.eye(3) + (math.sin(theta) / theta) * k + ((1.0 - math.cos(theta)) / t2) * k2
        v = (
            np.eye(3)
            + ((1.0 - math.cos(theta)) / t2) * k
            + ((theta - math.sin(theta)) / (t2 * theta)) * k2
        )
    return Pose(rot, v @ rho)


def _rotation_log(rot: np.ndarray) -> np.ndarray:
    """Axis-angle of a rotation matrix, canonical angle in [0, pi]."""
    s_vec = _vee((rot - rot.T) / 2.0)
    s = np.linalg.norm(s_vec)
    c = (np.trace(rot) - 1.0) / 2.0
    theta = math.atan2(s, c)
    if theta < SMALL_ANGLE:
        return s_vec
    if math.pi - theta < PI_ANGLE_MARGIN:
        # s_vec vanishes at a half turn; recover the axis from the largest
        # diagonal of R + I, then fix the sign deterministically.
        b = rot + np.eye(3)
        j = int(np.argmax(np.diag(b)))
        axis = b[:, j] / math.sqrt(2.0 * b[j, j])
        if axis[int(np.argmax(np.abs(axis)))] < 0:
            axis = -axis
        return theta * axis
    return (theta / s) * s_vec


def log(pose: Pose) -> np.ndarray:
    """Inverse of :func:`exp`; returns the canonical twist with ``|phi| <= pi``."""
    phi = _rotation_log(pose.rotation)
    theta = np.linalg.norm(phi)
    k = skew(phi)
    k2 = k @ k
    if theta < SMALL_ANGLE:
        v_inv = np.eye(3) - 0.5 * k + k2 / 12.0
    else:
        t2 = theta * theta
        half = 0.5 * theta
        coeff = (1.0 - half * math.cos(half) / math.sin(half)) / t2
        v_inv = np.eye(3) - 0.5 * k + coeff * k2
    rho = v_inv @ pose.translation
    return np.concatenate([rho, phi])


def compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(pose: Pose) -> Pose:
    rt = pose.rotation.T
    return Pose(rt, -(rt @ pose.translation))


def transform_point(pose: Pose, p: np.ndarray) -> np.ndarray:
    """Apply the transform to one point ``(3,)`` or a batch ``(N, 3)``."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return pose.rotation @ p + pose.translation
    return p @ pose.rotation.T + pose.translation


def rotation_angle(rot: np.ndarray) -> float:
    """Rotation angle in [0, pi]; clamped so imperfect matrices never yield NaN."""
    c = (np.trace(rot) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, c)))


def project(p: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to pixel coordinates.

    Accepts ``(3,)`` or ``(N, 3)``; raises if any depth is <= EPSILON_Z.
    """
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= EPSILON_Z):
        raise NonPositiveDepthError(f"depth <= {EPSILON_Z}")
    u = intrinsics.fx * p[..., 0] / z + intrinsics.cx
    v = intrinsics.fy * p[..., 1] / z + intrinsics.cy
    return np.stack([u, v], axis=-1)


def backproject(uv: np.ndarray, depth, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Lift pixels to 3D camera-frame points at the given depth.

    Accepts a single ``(2,)`` pixel with scalar depth or ``(N, 2)`` with ``(N,)``.
    """
    uv = np.asarray(uv, dtype=float)
    depth = np.asarray(depth, dtype=float)
    if np.any(depth <= 0) or not np.isfinite(depth).all():
        raise InvalidDepthError("depth must be positive and finite")
    x = (uv[..., 0] - intrinsics.cx) * depth / intrinsics.fx
    y = (uv[..., 1] - intrinsics.cy) * depth / intrinsics.fy
    return np.stack([x, y, depth], axis=-1)


def warp_jacobian(p: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Derivative of ``project(exp(delta) @ p)`` with respect to ``delta`` at zero.

    Accepts ``(3,)`` or ``(N, 3)`` points and returns ``(2, 6)`` or ``(N, 2, 6)``.
    Columns are ordered like the twist: translation first, then rotation.
    """
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = p.reshape(-1, 3)
    if np.any(pts[:, 2] <= EPSILON_Z):
        raise NonPositiveDepthError(f"depth <= {EPSILON_Z}")
    n = pts.shape[0]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    inv_z = 1.0 / z
    # d(pixel)/d(point), 2x3 per point
    dpi = np.zeros((n, 2, 3))
    dpi[:, 0, 0] = intrinsics.fx * inv_z
    dpi[:, 0, 2] = -intrinsics.fx * x * inv_z * inv_z
    dpi[:, 1, 1] = intrinsics.fy * inv_z
    dpi[:, 1, 2] = -intrinsics.fy * y * inv_z * inv_z
    # d(exp(delta) @ p)/d(delta) at 0 is [I | -skew(p)], 3x6 per point
    dpoint = np.zeros((n, 3, 6))
    dpoint[:, 0, 0] = dpoint[:, 1, 1] = dpoint[:, 2, 2] = 1.0
    dpoint[:, 0, 4] = z
    dpoint[:, 0, 5] = -y
    dpoint[:, 1, 3] = -z
    dpoint[:, 1, 5] = x
    dpoint[:, 2, 3] = y
    dpoint[:, 2, 4] = -x
    jac = dpi @ dpoint
    return jac[0] if single else jac


def quaternion_from_rotation(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion ``[qx, qy, qz, qw]`` (Hamilton, w last), Shepperd's method."""
    rot = np.asarray(rot, dtype=float)
    trace = np.trace(rot)
    if trace > 0:
        s = math.sqrt(trace + 1.0) * 2.0
        w = 0.25 * s
        x = (rot[2, 1] - rot[1, 2]) / s
        y = (rot[0, 2] - rot[2, 0]) / s
        z = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        w = (rot[2, 1] - rot[1, 2]) / s
        x = 0.25 * s
        y = (rot[0, 1] + rot[1, 0]) / s
        z = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        w = (rot[0, 2] - rot[2, 0]) / s
        x = (rot[0, 1] + rot[1, 0]) / s
        y = 0.25 * s
        z = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        w = (rot[1, 0] - rot[0, 1]) / s
        x = (rot[0, 2] + rot[2, 0]) / s
        y = (rot[1, 2] + rot[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from ``[qx, qy, qz, qw]``; the quaternion is normalised first."""
    q = np.asarray(q, dtype=float).reshape(4)
    norm = np.linalg.norm(q)
    if norm < 1e-12:
        raise ValueError("quaternion norm too small")
    x, y, z, w = q / norm
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def format_pose_line(pose: Pose) -> str:
    """Text form ``tx ty tz qx qy qz qw`` used by trajectory files."""
    q = quaternion_from_rotation(pose.rotation)
    t = pose.translation
    values = [t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
    return " ".join(f"{v:.9f}" for v in values)


def parse_pose_line(text: str) -> Pose:
    """Inverse of :func:`format_pose_line`."""
    parts = [float(tok) for tok in text.split()]
    if len(parts) != 7:
        raise ValueError(f"expected 7 numbers, got {len(parts)}")
    return Pose(rotation_from_quaternion(parts[3:]), np.array(parts[:3]))
