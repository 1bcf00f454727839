import logging
import math
import numpy as np
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from components.formats import (
    read_camera,
    read_correspondences,
    read_feature_map,
    read_points_pclf,
    write_camera,
    write_correspondences,
    write_feature_map,
    write_points_pclf,
)
from components.geometry import FeatureMap, PointCloud, look_at_camera, project_points
from models.camera import CameraModel
from models.scene import FeatureMapSpec, SceneSpec

logger = logging.getLogger(__name__)

POINTS_FILE = "points.pclf"
CAMERA_FILE = "camera.json"
FEATURES_FILE = "features.fmap"
CORRESPONDENCES_FILE = "correspondences.csv"


@dataclass(frozen=True, eq=False)
class Scene:
    """
    One lidar + camera frame. `correspondences` rows are
    (point_index, u, v): the true pixel of every camera-visible raw point.
    """
    points: PointCloud
    camera: CameraModel
    features: FeatureMap
    correspondences: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.features.pixel_width < self.camera.width or self.features.pixel_height < self.camera.height:
            raise ValueError("feature map does not cover the camera image")
        table = self.correspondences
        if table is None:
            return
        if table.ndim != 2 or table.shape[1] != 3:
            raise ValueError("correspondence table must have rows (point_index, u, v)")
        if len(table):
            idx = table[:, 0]
            if idx.min() < 0 or idx.max() >= len(self.points) or not np.all(idx == np.round(idx)):
                raise ValueError("correspondence table references points outside the cloud")
            u, v = table[:, 1], table[:, 2]
            if u.min() < 0 or u.max() >= self.camera.width or v.min() < 0 or v.max() >= self.camera.height:
                raise ValueError("correspondence table references pixels outside the frame")

    def ground_truth(self) -> np.ndarray:
        """(N, 2) true pixel per raw point, NaN where the point is not visible."""
        if self.correspondences is None:
            raise ValueError("scene has no correspondence table")
        truth = np.full((len(self.points), 2), np.nan)
        truth[self.correspondences[:, 0].astype(np.int64)] = self.correspondences[:, 1:]
        return truth

    def with_points(self, points: PointCloud) -> "Scene":
        return Scene(points, self.camera, self.features, self.correspondences)

    def with_features(self, features: FeatureMap) -> "Scene":
        return Scene(self.points, self.camera, features, self.correspondences)


def make_feature_map(spec: FeatureMapSpec, cam: CameraModel, rng: np.random.Generator) -> FeatureMap:
    width = math.ceil(cam.width / spec.scale)
    height = math.ceil(cam.height / spec.scale)
    if spec.generator == "constant":
        data = np.full((height, width, spec.channels), spec.constant)
    elif spec.generator == "coordinate":
        # Channels 0-1 hold each cell's center pixel, so samples describe themselves
        data = np.zeros((height, width, spec.channels))
        data[:, :, 0] = (np.arange(width)[None, :] + 0.5) * spec.scale
        data[:, :, 1] = (np.arange(height)[:, None] + 0.5) * spec.scale
    else:
        data = rng.normal(0.0, 1.0, size=(height, width, spec.channels))
    return FeatureMap(data=data.astype(np.float32), scale=spec.scale)


def generate_scene(spec: SceneSpec) -> Scene:
    """
    Samples points uniformly in the extent and records the exact pixel of
    every camera-visible point. Deterministic given spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    lo = np.array([spec.x_range[0], spec.y_range[0], spec.z_range[0]])
    hi = np.array([spec.x_range[1], spec.y_range[1], spec.z_range[1]])
    positions = rng.uniform(lo, hi, size=(spec.num_points, 3))
    intensity = rng.uniform(0.0, 1.0, size=spec.num_points)

    placement = spec.camera
    cam = look_at_camera(
        placement.position, placement.look_at, placement.fx, placement.fy,
        placement.width, placement.height, placement.cx, placement.cy,
    )
    features = make_feature_map(spec.feature_map, cam, rng)

    uv, visible = project_points(positions, cam)
    idx = np.flatnonzero(visible)
    table = np.column_stack([idx.astype(np.float64), uv[idx]]) if idx.size else np.zeros((0, 3))

    logger.info(f"Generated scene: {spec.num_points} points, {idx.size} visible in camera")
    return Scene(PointCloud.from_arrays(positions, intensity), cam, features, table)


class SceneStore:
    """
    Reads and writes scene bundle directories.
    """

    def save(self, scene: Scene, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_points_pclf(directory / POINTS_FILE, scene.points)
        write_camera(directory / CAMERA_FILE, scene.camera)
        write_feature_map(directory / FEATURES_FILE, scene.features)
        corr = directory / CORRESPONDENCES_FILE
        if scene.correspondences is not None:
            write_correspondences(corr, scene.correspondences)
        elif corr.exists():
            corr.unlink()
        logger.info(f"Scene saved to {directory}")
        return directory

    def load(self, directory: str | Path) -> Scene:
        directory = Path(directory)
        if not directory.is_dir():
            raise FileNotFoundError(f"scene directory not found: {directory}")
        try:
            corr = directory / CORRESPONDENCES_FILE
            scene = Scene(
                points=read_points_pclf(directory / POINTS_FILE),
                camera=read_camera(directory / CAMERA_FILE),
                features=read_feature_map(directory / FEATURES_FILE),
                correspondences=read_correspondences(corr) if corr.exists() else None,
            )
        except Exception as e:
            logger.error(f"Failed to load scene from {directory}: {e}")
            raise
        logger.info(f"Loaded scene from {directory}: {len(scene.points)} points")
        return scene
