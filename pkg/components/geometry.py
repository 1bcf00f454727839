"""
Coordinate conventions, transforms about the origin, pinhole projection and
feature-map sampling.

World frame: x forward, y left, z up (meters). Camera frame: z forward,
x right, y down. Geometry is float64; feature data is float32.
"""
import logging
import numpy as np
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

from models.camera import CameraModel

logger = logging.getLogger(__name__)

EPS_DEPTH = 1e-6  # meters



def _attribute_rows(attributes, n: int) -> np.ndarray:
    """Per-point channels as an (n, C) float32 array; 1-D input is one channel per point."""
    attributes = np.asarray(attributes, dtype=np.float32)
    if attributes.ndim == 2:
        if attributes.shape[0] != n:
            raise ValueError(f"attributes must have one row per point, got {attributes.shape[0]} for {n}")
        return attributes
    if attributes.ndim == 1 and attributes.size == n:
        return attributes.reshape(n, 1)
    return attributes.reshape(n, -1)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """
    Lidar points with provenance.

    `source_index` is the index of each point in the cloud it was first
    loaded or generated as; augmentations carry it along so a surviving
    point can always be traced back. `attributes` holds optional per-point
    decoration channels (camera features for InputFusion).
    """
    positions: np.ndarray
    intensity: np.ndarray
    frame: np.ndarray
    source_index: np.ndarray
    attributes: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.positions.shape[0]
        if self.positions.shape != (n, 3):
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if self.intensity.shape != (n,) or self.frame.shape != (n,) or self.source_index.shape != (n,):
            raise ValueError("intensity, frame and source_index must have one entry per point")
        if not np.isfinite(self.positions).all():
            raise ValueError("point positions must be finite")
        if n and (self.intensity.min() < 0 or self.intensity.max() > 1):
            raise ValueError("intensity must lie in [0, 1]")
        if n and self.frame.min() < 0:
            raise ValueError("frame ids must be >= 0")
        if self.attributes is not None and self.attributes.shape[0] != n:
            raise ValueError("attributes must have one row per point")

    @classmethod
    def from_arrays(
        cls,
        positions,
        intensity=None,
        frame_id: int = 0,
        attributes=None,
    ) -> "PointCloud":
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        n = positions.shape[0]
        if intensity is None:
            intensity = np.zeros(n)
        return cls(
            positions=positions,
            intensity=np.asarray(intensity, dtype=np.float64).reshape(n),
            frame=np.full(n, frame_id, dtype=np.int64),
            source_index=np.arange(n, dtype=np.int64),
            attributes=None if attributes is None else _attribute_rows(attributes, n),
        )

    @classmethod
    def concat(cls, clouds: Sequence["PointCloud"]) -> "PointCloud":
        """Concatenates clouds in order; source indices are renumbered."""
        if not clouds:
            raise ValueError("nothing to concatenate")
        with_attrs = [c.attributes is not None for c in clouds]
        if any(with_attrs) and not all(with_attrs):
            raise ValueError("cannot concatenate decorated and undecorated clouds")
        positions = np.concatenate([c.positions for c in clouds])
        return cls(
            positions=positions,
            intensity=np.concatenate([c.intensity for c in clouds]),
            frame=np.concatenate([c.frame for c in clouds]),
            source_index=np.arange(positions.shape[0], dtype=np.int64),
            attributes=np.concatenate([c.attributes for c in clouds]) if all(with_attrs) else None,
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def frame_id(self) -> int:
        """The acquisition frame, for clouds holding a single frame."""
        ids = np.unique(self.frame)
        if len(ids) > 1:
            raise ValueError(f"cloud mixes frames {ids.tolist()}")
        return int(ids[0]) if len(ids) else 0

    def take(self, selector) -> "PointCloud":
        """Subset by boolean mask or index array, keeping relative order for masks."""
        return PointCloud(
            positions=self.positions[selector],
            intensity=self.intensity[selector],
            frame=self.frame[selector],
            source_index=self.source_index[selector],
            attributes=None if self.attributes is None else self.attributes[selector],
        )

    def with_positions(self, positions: np.ndarray) -> "PointCloud":
        return PointCloud(positions, self.intensity, self.frame, self.source_index, self.attributes)

    def with_intensity(self, intensity: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions, intensity, self.frame, self.source_index, self.attributes)

    def with_attributes(self, attributes: Optional[np.ndarray]) -> "PointCloud":
        if attributes is not None:
            attributes = _attribute_rows(attributes, len(self))
        return PointCloud(self.positions, self.intensity, self.frame, self.source_index, attributes)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Dense (height, width, channels) float32 grid. One cell spans `scale`
    pixels on each axis.
    """
    data: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError(f"feature data must be (height, width, channels), got {self.data.shape}")
        if not self.scale > 0:
            raise ValueError(f"cell-to-pixel scale must be positive, got {self.scale}")
        if self.data.dtype != np.float32:
            object.__setattr__(self, "data", self.data.astype(np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def pixel_width(self) -> float:
        return self.width * self.scale

    @property
    def pixel_height(self) -> float:
        return self.height * self.scale


def rotate_z(p: Sequence[float], theta: float) -> np.ndarray:
    """Rotates a point about the world z-axis by theta radians."""
    return rotate_z_points(np.asarray(p, dtype=np.float64)[None, :], theta)[0]


def rotate_z_points(points: np.ndarray, theta: float) -> np.ndarray:
    if not np.isfinite(theta):
        raise ValueError(f"rotation angle must be finite, got {theta}")
    c, s = np.cos(theta), np.sin(theta)
    out = points.copy()
    out[:, 0] = points[:, 0] * c - points[:, 1] * s
    out[:, 1] = points[:, 0] * s + points[:, 1] * c
    return out


def world_to_camera(points: np.ndarray, cam: CameraModel) -> np.ndarray:
    return points @ cam.R.T + cam.t


def project_points(points: np.ndarray, cam: CameraModel) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised pinhole projection.

    Returns:
        (uv, visible): uv is (N, 2) pixel coordinates (NaN where the point is
        behind the camera), visible marks points in front of the camera that
        land inside [0, width) x [0, height).
    """
    p_cam = world_to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3), cam)
    depth = p_cam[:, 2]
    in_front = depth > EPS_DEPTH
    uv = np.full((p_cam.shape[0], 2), np.nan)
    z = depth[in_front]
    uv[in_front, 0] = cam.fx * p_cam[in_front, 0] / z + cam.cx
    uv[in_front, 1] = cam.fy * p_cam[in_front, 1] / z + cam.cy
    with np.errstate(invalid="ignore"):
        visible = (
            in_front
            & (uv[:, 0] >= 0) & (uv[:, 0] < cam.width)
            & (uv[:, 1] >= 0) & (uv[:, 1] < cam.height)
        )
    return uv, visible


def project_to_image(p_world: Sequence[float], cam: CameraModel) -> Optional[Tuple[float, float]]:
    """Pixel (u, v) of a world point, or None when behind the camera or out of frame."""
    uv, visible = project_points(np.asarray(p_world, dtype=np.float64)[None, :], cam)
    if not visible[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def bilinear_sample(fm: FeatureMap, u: float, v: float) -> np.ndarray:
    """
    Samples the feature map at pixel (u, v).

    Cell (i, j) is centred on pixel ((j + 0.5) * scale, (i + 0.5) * scale).
    Raises ValueError for pixels outside the image the map covers.
    """
    return bilinear_sample_many(fm, np.array([[u, v]], dtype=np.float64))[0]


def bilinear_sample_many(fm: FeatureMap, uv: np.ndarray) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    if uv.shape[0] == 0:
        return np.zeros((0, fm.channels))
    u, v = uv[:, 0], uv[:, 1]
    inside = (u >= 0) & (u < fm.pixel_width) & (v >= 0) & (v < fm.pixel_height)
    if not inside.all():
        bad = uv[~inside][0]
        raise ValueError(f"pixel ({bad[0]}, {bad[1]}) is outside the feature map image bounds")

    x = np.clip(u / fm.scale - 0.5, 0, fm.width - 1)
    y = np.clip(v / fm.scale - 0.5, 0, fm.height - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(fm.width - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(fm.height - 2, 0))
    x1 = np.minimum(x0 + 1, fm.width - 1)
    y1 = np.minimum(y0 + 1, fm.height - 1)
    wx = (x - x0)[:, None]
    wy = (y - y0)[:, None]

    data = fm.data.astype(np.float64)
    top = data[y0, x0] * (1 - wx) + data[y0, x1] * wx
    bottom = data[y1, x0] * (1 - wx) + data[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def pixel_cells(fm: FeatureMap, uv: np.ndarray) -> np.ndarray:
    """Flat index (row * width + col) of the cell each pixel falls in."""
    col = np.clip(np.floor(uv[:, 0] / fm.scale).astype(np.int64), 0, fm.width - 1)
    row = np.clip(np.floor(uv[:, 1] / fm.scale).astype(np.int64), 0, fm.height - 1)
    return row * fm.width + col


def look_at_camera(
    position: Sequence[float],
    look_at: Sequence[float],
    fx: float,
    fy: float,
    width: int,
    height: int,
    cx: Optional[float] = None,
    cy: Optional[float] = None,
) -> CameraModel:
    """
    Builds a level camera at `position` whose optical axis points at `look_at`.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(look_at, dtype=np.float64) - position
    norm = np.linalg.norm(forward)
    if norm < EPS_DEPTH:
        raise ValueError("degenerate camera: look_at equals position")
    forward /= norm
    right = np.cross(forward, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(right) < EPS_DEPTH:
        raise ValueError("degenerate camera: optical axis is vertical")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ position
    return CameraModel(
        fx=fx,
        fy=fy,
        cx=width / 2 if cx is None else cx,
        cy=height / 2 if cy is None else cy,
        width=width,
        height=height,
        rotation=rotation.reshape(-1).tolist(),
        translation=translation.tolist(),
    )
