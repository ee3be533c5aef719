"""Coarse-to-fine damped Gauss-Newton tracking with inverse-compositional updates.

The schedule is fixed (no line search, no trust-region adaptation): a set
number of iterations on each pyramid level, coarsest first, with the pose
carried unchanged between levels.  Damping is Levenberg-style, scaling the
diagonal of H so the step stays well conditioned across feature magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import (
    MissingExternalPoseError,
    NoValidPixelsError,
    SingularSystemError,
    SizeMismatchError,
)
from .features import Frame
from .geometry import Pose, compose, exp, inverse, log
from .residuals import (
    DEFAULT_ICP_WEIGHT,
    build_feature_system,
    build_icp_system,
    combine,
    precompute_template,
)

# Absolute floor added to the damped diagonal; keeps the solve defined even
# when a diagonal entry of H is exactly zero.
DAMPING_FLOOR = 1e-12

MODES = ("feature", "icp", "combined")
INITIALIZERS = ("identity", "constvel", "external")


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the coarse-to-fine solver; defaults mirror the evaluation setup."""

    levels: int = 4
    iterations_per_level: int = 3
    damping: float = 1e-6
    mode: str = "feature"
    w_g: float = DEFAULT_ICP_WEIGHT
    icp_sigma: str = "quadratic"
    initializer: str = "identity"
    early_stop_delta: float | None = None
    depth_gate: float | None = None

    def __post_init__(self):
        if self.levels < 1 or self.iterations_per_level < 1:
            raise ValueError("levels and iterations_per_level must be >= 1")
        if self.damping < 0 or self.w_g < 0:
            raise ValueError("damping and w_g must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.initializer not in INITIALIZERS:
            raise ValueError(f"initializer must be one of {INITIALIZERS}")


@dataclass(frozen=True)
class TrackResult:
    """Outcome of tracking one frame pair.

    ``pose`` is T_AB, frame B expressed in frame A.  ``per_level_costs`` has
    one trace per processed level (coarsest first), each exactly
    ``iterations_per_level`` long: entry k is the cost evaluated at the pose
    after k updates on that level.  Levels skipped for lack of valid pixels
    carry NaN traces.
    """

    pose: Pose
    per_level_costs: tuple
    valid_counts: tuple
    converged: bool
    initializer_pose: Pose
    skipped_levels: tuple = ()
    singular_levels: tuple = ()


def initialize(
    prev_motion: Pose | None,
    external: Pose | None,
    config: SolverConfig,
) -> Pose:
    """Starting pose per the configured strategy."""
    if config.initializer == "identity":
        return Pose.identity()
    if config.initializer == "constvel":
        return prev_motion if prev_motion is not None else Pose.identity()
    if external is None:
        raise MissingExternalPoseError("initializer 'external' needs a pose")
    return external


def solve_damped(H: np.ndarray, b: np.ndarray, damping: float) -> np.ndarray:
    """Solve (H + damping * diag(H) + floor * I) x = b; raises SingularSystemError."""
    damped = H + damping * np.diag(np.diag(H)) + DAMPING_FLOOR * np.eye(6)
    try:
        step = np.linalg.solve(damped, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.isfinite(step).all():
        raise SingularSystemError("non-finite step")
    return step


def _build_system(frame_a: Frame, frame_b: Frame, template, xi, level, config: SolverConfig):
    if config.mode == "feature":
        return build_feature_system(frame_a, template, xi, level, config.depth_gate)
    if config.mode == "icp":
        return build_icp_system(frame_a, frame_b, xi, level, config.icp_sigma)
    feat = build_feature_system(frame_a, template, xi, level, config.depth_gate)
    icp = build_icp_system(frame_a, frame_b, xi, level, config.icp_sigma)
    return combine(feat, icp, config.w_g)


def track(
    frame_a: Frame,
    frame_b: Frame,
    config: SolverConfig | None = None,
    init: Pose | None = None,
) -> TrackResult:
    """Estimate T_AB by coarse-to-fine damped Gauss-Newton.

    Levels with no usable pixels are skipped and recorded; a singular solve
    stops iteration on that level.  Both conditions are reported on the
    result instead of raising, so sequence runs can continue past bad pairs.
    """
    config = config or SolverConfig()
    init = init if init is not None else Pose.identity()
    if frame_a.levels != frame_b.levels:
        raise SizeMismatchError("frames disagree in pyramid depth")
    if config.levels > frame_a.levels:
        raise SizeMismatchError(
            f"solver wants {config.levels} levels, frames have {frame_a.levels}"
        )
    for i in range(config.levels):
        a, b = frame_a.features.level(i), frame_b.features.level(i)
        if (a.height, a.width) != (b.height, b.width):
            raise SizeMismatchError(f"frames disagree at level {i}")

    pose = init
    traces, counts, skipped, singular = [], [], [], []

    for level in range(config.levels - 1, -1, -1):
        template = precompute_template(frame_b, level) if config.mode != "icp" else None
        costs = []
        count = 0
        failed = None
        for _ in range(config.iterations_per_level):
            xi = log(pose)
            try:
                system = _build_system(frame_a, frame_b, template, xi, level, config)
            except NoValidPixelsError:
                failed = "skip"
                break
            if not costs:
                count = system.valid_count
            costs.append(system.cost)
            try:
                step = solve_damped(system.H, system.b, config.damping)
            except SingularSystemError:
                failed = "singular"
                break
            pose = compose(pose, inverse(exp(step)))
            if (
                config.early_stop_delta is not None
                and float(np.linalg.norm(step)) < config.early_stop_delta
            ):
                break

        if failed == "skip" and not costs:
            skipped.append(level)
            costs = [math.nan] * config.iterations_per_level
        elif failed == "singular":
            singular.append(level)
        # keep the trace-length contract exact when iteration ended early
        while len(costs) < config.iterations_per_level:
            costs.append(costs[-1] if costs else math.nan)
        traces.append(tuple(costs))
        counts.append(count)

    return TrackResult(
        pose=pose,
        per_level_costs=tuple(traces),
        valid_counts=tuple(counts),
        converged=not skipped and not singular,
        initializer_pose=init,
        skipped_levels=tuple(skipped),
        singular_levels=tuple(singular),
    )


# ---------------------------------------------------------------------------
# Config file support: one "key = value" per line, '#' comments


_BOOLEANS = {"true": True, "false": False, "on": True, "off": False}


def _coerce(name: str, raw: str):
    raw = raw.strip()
    if name in ("levels", "iterations_per_level"):
        return int(raw)
    if name in ("damping", "w_g"):
        return float(raw)
    if name in ("early_stop_delta", "depth_gate"):
        return None if raw.lower() in ("none", "off") else float(raw)
    if name in ("mode", "icp_sigma", "initializer"):
        return raw
    raise ValueError(f"unknown config key {name!r}")


def load_config(path, base: SolverConfig | None = None) -> SolverConfig:
    """Read solver settings from a text file on top of ``base`` (or defaults)."""
    settings = {}
    known = {f.name for f in fields(SolverConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            settings[key] = _coerce(key, value)
    return replace(base or SolverConfig(), **settings)
