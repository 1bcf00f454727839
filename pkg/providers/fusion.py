import logging
import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional

from components.align import (
    AlignParams,
    DropoutMask,
    align_with_weights,
    gather_camera_features,
)
from components.augment import apply_pipeline, drop_frames
from components.geometry import PointCloud, bilinear_sample_many, project_points
from components.voxel import (
    POINT_BASE_FEATURES,
    EncoderParams,
    PseudoImage,
    dynamic_voxelize,
    encode_pillars,
    pillar_center,
)
from config import config
from models.augment import AugRecord
from models.fusion import AlignConfig, EncoderConfig, FusionConfig, Strategy
from providers.scene import Scene

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FusionParams:
    """
    Resolved weights for one run: the lidar encoder, the camera-branch
    encoder (LateFusion) and the LearnableAlign weights (DeepFusion).
    """
    lidar: EncoderParams
    camera: Optional[EncoderParams] = None
    align: Optional[AlignParams] = None

    @classmethod
    def build(cls, cfg: FusionConfig, camera_channels: int) -> "FusionParams":
        lidar_in = POINT_BASE_FEATURES + (camera_channels if cfg.strategy == Strategy.INPUT else 0)
        lidar = _encoder(cfg.lidar_encoder, lidar_in, "point")
        camera = None
        if cfg.strategy == Strategy.LATE:
            camera = _encoder(cfg.camera_encoder, camera_channels, "attributes")
        align = None
        if cfg.strategy == Strategy.DEEP:
            align = _align(cfg.align, lidar.out_dim, camera_channels)
        return cls(lidar=lidar, camera=camera, align=align)


def _encoder(enc: EncoderConfig, in_dim: int, layout: str) -> EncoderParams:
    if enc.params_path:
        return EncoderParams.load(enc.params_path)
    return EncoderParams.init(in_dim, enc.hidden_dims, enc.out_channels, enc.activation, enc.seed, layout)


def _align(cfg: AlignConfig, d_lidar: int, d_camera: int) -> AlignParams:
    if cfg.params_path:
        return AlignParams.load(cfg.params_path)
    return AlignParams.init(
        d_lidar, d_camera, cfg.embed_dim, cfg.mlp_dim, cfg.seed,
        dropout_rate=cfg.dropout_rate, scale_affinity=cfg.scale_affinity,
        dropout_position=cfg.dropout_position,
    )


@dataclass(frozen=True, eq=False)
class PillarTrace:
    """What DeepFusion gathered for one pillar."""
    pillar_index: int
    pixels: np.ndarray  # (N, 2)
    key_sources: np.ndarray  # source_index of each key point, -1 for pillar centers
    weights: np.ndarray  # (N,) weights that aggregated the values


@dataclass(eq=False)
class FusionResult:
    pseudo_image: PseudoImage
    record: AugRecord
    metrics: dict
    pillars: List[PillarTrace] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Decoration:
    attributes: np.ndarray  # (N, C) float32, zeros where not visible
    pixels: np.ndarray  # (N, 2), NaN where not visible
    visible: np.ndarray  # (N,) bool


def decorate_points(scene: Scene) -> Decoration:
    """
    One-to-one point -> pixel lookup in the original frame, with the
    original calibration.
    """
    uv, visible = project_points(scene.points.positions, scene.camera)
    attributes = np.zeros((len(scene.points), scene.features.channels), dtype=np.float32)
    attributes[visible] = bilinear_sample_many(scene.features, uv[visible]).astype(np.float32)
    uv[~visible] = np.nan
    return Decoration(attributes=attributes, pixels=uv, visible=visible)


def _require(cfg: FusionConfig, strategy: Strategy):
    if cfg.strategy != strategy:
        raise ValueError(f"config is for strategy '{cfg.strategy.value}', not '{strategy.value}'")


def _resolve(cfg: FusionConfig, scene: Scene, params: Optional[FusionParams]) -> FusionParams:
    return params if params is not None else FusionParams.build(cfg, scene.features.channels)


def _frames(points: PointCloud, cfg: FusionConfig) -> PointCloud:
    """
    DropFrame over a multi-frame cloud. Survivors keep their source
    indices, so decoration and traces still point at the scene's points.
    """
    if not cfg.training or len(points) == 0:
        return points
    frames = [points.take(points.frame == frame_id) for frame_id in np.unique(points.frame)]
    kept = drop_frames(frames, cfg.drop_frame_p, np.random.default_rng([cfg.seed, 2]), training=True)
    return points.take(np.isin(points.frame, np.unique(kept.frame)))


def _metrics(cfg: FusionConfig, scene: Scene, augmented: PointCloud, image: PseudoImage, record: AugRecord) -> dict:
    nonempty = int(np.any(image.data != 0, axis=2).sum())
    return {
        "strategy": cfg.strategy.value,
        "points_raw": len(scene.points),
        "frames_raw": int(len(np.unique(scene.points.frame))),
        "frames_kept": int(len(np.unique(augmented.frame))),
        "points_augmented": len(augmented),
        "record_length": len(record),
        "grid": [image.width, image.height],
        "channels": image.channels,
        "nonzero_pillars": nonempty,
    }


def _run_single(scene: Scene, cfg: FusionConfig, params: FusionParams) -> FusionResult:
    augmented, record = apply_pipeline(_frames(scene.points, cfg), cfg.aug, cfg.seed)
    image = encode_pillars(augmented, dynamic_voxelize(augmented, cfg.grid), params.lidar)
    return FusionResult(image, record, _metrics(cfg, scene, augmented, image, record))


def _run_input(scene: Scene, cfg: FusionConfig, params: FusionParams) -> FusionResult:
    decoration = decorate_points(scene)
    decorated = scene.points.with_attributes(decoration.attributes)
    augmented, record = apply_pipeline(_frames(decorated, cfg), cfg.aug, cfg.seed)
    expected = POINT_BASE_FEATURES + scene.features.channels
    if params.lidar.in_dim != expected:
        raise ValueError(f"InputFusion encoder expects {params.lidar.in_dim} inputs, decorated layout has {expected}")
    image = encode_pillars(augmented, dynamic_voxelize(augmented, cfg.grid), params.lidar)
    metrics = _metrics(cfg, scene, augmented, image, record)
    metrics["decorated_points"] = int(decoration.visible.sum())
    return FusionResult(image, record, metrics)


def _run_late(scene: Scene, cfg: FusionConfig, params: FusionParams) -> FusionResult:
    camera_grid = cfg.camera_grid or cfg.grid
    if camera_grid != cfg.grid:
        raise ValueError("LateFusion branches must share one pillar grid")
    if params.camera is None:
        raise ValueError("LateFusion needs camera encoder params")

    decoration = decorate_points(scene)
    decorated = scene.points.with_attributes(decoration.attributes)
    augmented, record = apply_pipeline(_frames(decorated, cfg), cfg.aug, cfg.seed)

    lidar_points = augmented.with_attributes(None)
    lidar_image = encode_pillars(lidar_points, dynamic_voxelize(lidar_points, cfg.grid), params.lidar)

    camera_points = augmented.take(decoration.visible[augmented.source_index])
    camera_image = encode_pillars(camera_points, dynamic_voxelize(camera_points, camera_grid), params.camera)

    image = PseudoImage(data=np.concatenate([lidar_image.data, camera_image.data], axis=2), scale=1.0)
    metrics = _metrics(cfg, scene, augmented, image, record)
    metrics["camera_branch_points"] = len(camera_points)
    return FusionResult(image, record, metrics)


def _run_deep(scene: Scene, cfg: FusionConfig, params: FusionParams) -> FusionResult:
    if params.align is None or cfg.align is None:
        raise ValueError("DeepFusion needs align parameters")
    align_cfg = cfg.align

    augmented, record = apply_pipeline(_frames(scene.points, cfg), cfg.aug, cfg.seed)
    # IA off still augments, but looks pixels up as if nothing had moved
    gather_record = record if cfg.use_inverse_aug else AugRecord()

    assignment = dynamic_voxelize(augmented, cfg.grid)
    lidar_image = encode_pillars(augmented, assignment, params.lidar)
    cells = lidar_image.data.reshape(cfg.grid.num_pillars, -1).copy()

    mask_rng = np.random.default_rng([cfg.seed, 1]) if cfg.training else None
    traces = []
    gathered = 0
    for pillar, members in sorted(assignment.member_lists().items()):
        if align_cfg.key_points == "members":
            keys = augmented.positions[members]
            sources = augmented.source_index[members]
        else:
            cx, cy = pillar_center(pillar, cfg.grid)
            keys = np.array([[cx, cy, augmented.positions[members, 2].mean()]])
            sources = np.array([-1], dtype=np.int64)

        cams = gather_camera_features(keys, gather_record, scene.camera, scene.features, align_cfg.max_n, pillar)
        mask = None
        if mask_rng is not None and params.align.dropout_rate > 0:
            mask = DropoutMask.sample(len(cams), params.align.dropout_rate, mask_rng)
        fused, weights = align_with_weights(cells[pillar].astype(np.float64), cams, params.align, mask, cfg.align_kind)
        cells[pillar] = fused.astype(np.float32)

        traces.append(PillarTrace(pillar, cams.pixels, sources[cams.key_indices], weights))
        gathered += len(cams)
        logger.debug(f"Pillar {pillar}: {len(members)} points, {len(cams)} camera features")

    image = PseudoImage(data=cells.reshape(lidar_image.data.shape), scale=1.0)
    metrics = _metrics(cfg, scene, augmented, image, record)
    metrics["fused_pillars"] = len(traces)
    metrics["mean_camera_features"] = gathered / len(traces) if traces else 0.0
    metrics["use_inverse_aug"] = cfg.use_inverse_aug
    metrics["align_kind"] = cfg.align_kind
    return FusionResult(image, record, metrics, traces)


def single_modal(scene: Scene, cfg: FusionConfig, params: Optional[FusionParams] = None) -> PseudoImage:
    """Lidar-only baseline: augment, voxelize, encode."""
    _require(cfg, Strategy.SINGLE)
    return _run_single(scene, cfg, _resolve(cfg, scene, params)).pseudo_image


def input_fusion(scene: Scene, cfg: FusionConfig, params: Optional[FusionParams] = None) -> PseudoImage:
    """
    Decorates raw points with their camera feature before augmentation,
    then voxelizes and encodes the decorated points.
    """
    _require(cfg, Strategy.INPUT)
    return _run_input(scene, cfg, _resolve(cfg, scene, params)).pseudo_image


def late_fusion(scene: Scene, cfg: FusionConfig, params: Optional[FusionParams] = None) -> PseudoImage:
    """
    Voxelizes lidar points and camera-visible decorated points through
    separate encoders and concatenates the channels per pillar.
    """
    _require(cfg, Strategy.LATE)
    return _run_late(scene, cfg, _resolve(cfg, scene, params)).pseudo_image


def deep_fusion(scene: Scene, cfg: FusionConfig, params: Optional[FusionParams] = None) -> PseudoImage:
    """
    Encodes augmented pillars, then fuses every non-empty pillar with the
    camera features of its key points (InverseAug + projection).
    """
    return deep_fusion_trace(scene, cfg, params).pseudo_image


def deep_fusion_trace(scene: Scene, cfg: FusionConfig, params: Optional[FusionParams] = None) -> FusionResult:
    _require(cfg, Strategy.DEEP)
    return _run_deep(scene, cfg, _resolve(cfg, scene, params))


_RUNNERS = {
    Strategy.SINGLE: _run_single,
    Strategy.INPUT: _run_input,
    Strategy.LATE: _run_late,
    Strategy.DEEP: _run_deep,
}


class FusionProvider:
    """
    Runs one configured fusion strategy over scenes.
    """

    def __init__(self, fusion_config: FusionConfig, config_instance=config):
        self.config = config_instance
        self.fusion_config = fusion_config
        self._params: dict[int, FusionParams] = {}

    def get_params(self, scene: Scene) -> FusionParams:
        """Params are built once per camera channel count."""
        channels = scene.features.channels
        if channels not in self._params:
            self._params[channels] = FusionParams.build(self.fusion_config, channels)
            logger.info(f"Initialized {self.fusion_config.strategy.value} params for {channels} camera channels")
        return self._params[channels]

    def run(self, scene: Scene) -> FusionResult:
        strategy = self.fusion_config.strategy
        logger.info(f"Running {strategy.value} fusion on {len(scene.points)} points")
        try:
            result = _RUNNERS[strategy](scene, self.fusion_config, self.get_params(scene))
        except Exception as e:
            logger.error(f"{strategy.value} fusion failed: {e}")
            raise
        logger.info(f"Fusion finished: {result.metrics['nonzero_pillars']} non-zero pillars")
        return result

    def attention_rows(self, scene: Scene) -> List[tuple]:
        """(pillar_index, u, v, weight) rows of a DeepFusion run."""
        if self.fusion_config.strategy != Strategy.DEEP:
            raise ValueError("attention dumps need the deep strategy")
        result = self.run(scene)
        return [
            (trace.pillar_index, float(uv[0]), float(uv[1]), float(w))
            for trace in result.pillars
            for uv, w in zip(trace.pixels, trace.weights)
        ]
