"""
Lidar augmentation with recorded parameters, and InverseAug.

Geometric ops act about the world origin (the ego vehicle) and are the
only ops that enter an AugRecord; the dropout ops only remove points.
"""
import logging
import math
import numpy as np
from typing import List, Sequence, Tuple

from components.geometry import PointCloud, rotate_z_points
from models.augment import (
    AugConfig,
    AugRecord,
    FlipY,
    FrustumDropout,
    GeometricOp,
    RotateZ,
    Translate,
    WorldScale,
)

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi


def apply_geometric_points(positions: np.ndarray, op: GeometricOp) -> np.ndarray:
    if isinstance(op, RotateZ):
        return rotate_z_points(positions, op.theta)
    if isinstance(op, WorldScale):
        return positions * op.s
    if isinstance(op, Translate):
        return positions + np.asarray(op.t, dtype=np.float64)
    if isinstance(op, FlipY):
        if not op.applied:
            return positions.copy()
        out = positions.copy()
        out[:, 1] = -out[:, 1]
        return out
    raise TypeError(f"not a geometric op: {op!r}")


def invert_geometric_points(positions: np.ndarray, op: GeometricOp) -> np.ndarray:
    if isinstance(op, RotateZ):
        return rotate_z_points(positions, -op.theta)
    if isinstance(op, WorldScale):
        return positions / op.s
    if isinstance(op, Translate):
        return positions - np.asarray(op.t, dtype=np.float64)
    if isinstance(op, FlipY):
        # self-inverse
        return apply_geometric_points(positions, op)
    raise TypeError(f"not a geometric op: {op!r}")


def apply_geometric(points: PointCloud, op: GeometricOp) -> PointCloud:
    """Applies one geometric op to every point. Intensity and order are kept."""
    return points.with_positions(apply_geometric_points(points.positions, op))


def invert_geometric(p: Sequence[float], op: GeometricOp) -> np.ndarray:
    return invert_geometric_points(np.asarray(p, dtype=np.float64)[None, :], op)[0]


def inverse_aug_points(positions: np.ndarray, record: AugRecord) -> np.ndarray:
    """Maps augmented-frame key points back to the original frame."""
    out = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    for op in reversed(record.ops):
        out = invert_geometric_points(out, op)
    return out


def inverse_aug(p: Sequence[float], record: AugRecord) -> np.ndarray:
    return inverse_aug_points(np.asarray(p, dtype=np.float64)[None, :], record)[0]


def replay_record(points: PointCloud, record: AugRecord) -> PointCloud:
    """Re-applies a saved record in its original order."""
    positions = points.positions
    for op in record.ops:
        positions = apply_geometric_points(positions, op)
    return points.with_positions(positions)


def azimuth_inclination(positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
    return np.arctan2(y, x), np.arctan2(z, np.hypot(x, y))


def frustum_dropout(points: PointCloud, params: FrustumDropout, rng: np.random.Generator) -> PointCloud:
    """
    Drops points inside the frustum with probability drop_p.

    The azimuth interval may wrap past +-pi; an interval of width >= 2*pi
    covers every direction. One uniform draw is consumed per point whether
    or not it is inside, so the random stream depends only on the count.
    """
    azimuth, inclination = azimuth_inclination(points.positions)
    lo, hi = params.theta_range
    if hi - lo >= TWO_PI:
        in_azimuth = np.ones(len(points), dtype=bool)
    else:
        in_azimuth = np.mod(azimuth - lo, TWO_PI) <= hi - lo
    in_inclination = (inclination >= params.phi_range[0]) & (inclination <= params.phi_range[1])
    draws = rng.random(len(points))
    dropped = in_azimuth & in_inclination & (draws < params.drop_p)
    return points.take(~dropped)


def random_drop_points(points: PointCloud, keep_p: float, rng: np.random.Generator) -> PointCloud:
    if not 0 <= keep_p <= 1:
        raise ValueError(f"keep_p must lie in [0, 1], got {keep_p}")
    return points.take(rng.random(len(points)) < keep_p)


def drop_frames(
    frames: List[PointCloud],
    drop_p: float,
    rng: np.random.Generator,
    training: bool,
) -> PointCloud:
    """
    DropFrame: while training, each past frame (frame_id > 0) is dropped
    with probability drop_p before concatenation. Frame 0 always survives,
    and inference uses every frame.
    """
    if not frames:
        raise ValueError("drop_frames needs at least one frame")
    if not 0 <= drop_p <= 1:
        raise ValueError(f"drop_p must lie in [0, 1], got {drop_p}")
    if not any(frame.frame_id == 0 for frame in frames):
        raise ValueError("the current frame (frame_id 0) is missing")

    if not training:
        return PointCloud.concat(frames)

    kept = []
    for frame in frames:
        draw = rng.random()
        if frame.frame_id == 0 or draw >= drop_p:
            kept.append(frame)
    logger.debug(f"DropFrame kept {len(kept)} of {len(frames)} frames")
    return PointCloud.concat(kept)


def apply_pipeline(points: PointCloud, cfg: AugConfig, seed: int) -> Tuple[PointCloud, AugRecord]:
    """
    Runs RandomRotation -> WorldScaling -> GlobalTranslateNoise -> RandomFlip
    -> FrustumDropout -> RandomDropLaserPoints, recording the sampled
    parameters of every geometric op.

    Args:
        points: The raw cloud.
        cfg: Which ops run and their sampling laws.
        seed: Seeds the only random stream; equal seeds give equal outputs.

    Returns:
        The augmented cloud and the AugRecord of its geometric ops.
    """
    rng = np.random.default_rng(seed)
    ops: List[GeometricOp] = []

    if cfg.rotate:
        ops.append(RotateZ(theta=float(rng.uniform(-cfg.max_rotation, cfg.max_rotation))))
    if cfg.scale:
        ops.append(WorldScale(s=float(rng.uniform(*cfg.scale_range))))
    if cfg.translate:
        t = rng.normal(0.0, cfg.translate_sigma)
        ops.append(Translate(t=(float(t[0]), float(t[1]), float(t[2]))))
    if cfg.flip:
        ops.append(FlipY(applied=bool(rng.random() < cfg.flip_probability)))

    record = AugRecord(ops=ops)
    augmented = replay_record(points, record)

    if cfg.frustum_dropout:
        center_theta = rng.uniform(-math.pi, math.pi)
        center_phi = rng.uniform(-math.pi / 2, math.pi / 2)
        frustum = FrustumDropout(
            theta_range=(center_theta - cfg.frustum_theta_width / 2, center_theta + cfg.frustum_theta_width / 2),
            phi_range=(center_phi - cfg.frustum_phi_width / 2, center_phi + cfg.frustum_phi_width / 2),
            drop_p=cfg.frustum_drop_p,
        )
        augmented = frustum_dropout(augmented, frustum, rng)
    if cfg.drop_points:
        augmented = random_drop_points(augmented, cfg.drop_keep_p, rng)

    logger.debug(f"Augmented {len(points)} -> {len(augmented)} points, record: {record.to_entries()}")
    return augmented, record
