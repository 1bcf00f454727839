import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Literal, Optional, Tuple

Range = Tuple[float, float]
Vec3Tuple = Tuple[float, float, float]


class CameraPlacement(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    position: Vec3Tuple = (0.0, 0.0, 1.5)
    look_at: Vec3Tuple = (10.0, 0.0, 1.5)
    fx: float = Field(default=500.0, gt=0)
    fy: float = Field(default=500.0, gt=0)
    width: int = Field(default=640, gt=0)
    height: int = Field(default=480, gt=0)
    # Principal point defaults to the image center
    cx: Optional[float] = None
    cy: Optional[float] = None


class FeatureMapSpec(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    channels: int = Field(default=4, ge=1)
    scale: float = Field(default=8.0, gt=0)  # pixels per cell
    generator: Literal["constant", "coordinate", "random"] = "coordinate"
    constant: float = 1.0

    @model_validator(mode="after")
    def _coordinate_channels(self) -> "FeatureMapSpec":
        if self.generator == "coordinate" and self.channels < 2:
            raise ValueError("coordinate-encoded feature maps need at least 2 channels")
        return self


class SceneSpec(BaseModel):
    """
    Recipe for a synthetic lidar + camera frame.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    num_points: int = Field(default=2000, ge=0)
    x_range: Range = (5.0, 40.0)
    y_range: Range = (-15.0, 15.0)
    z_range: Range = (-1.5, 2.5)
    camera: CameraPlacement = Field(default_factory=CameraPlacement)
    feature_map: FeatureMapSpec = Field(default_factory=FeatureMapSpec)
    allow_camera_inside: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def _check_extent(self) -> "SceneSpec":
        for name, (lo, hi) in (("x", self.x_range), ("y", self.y_range), ("z", self.z_range)):
            if not hi > lo:
                raise ValueError(f"{name}_range must have positive extent, got ({lo}, {hi})")
        if not self.allow_camera_inside:
            pos = np.asarray(self.camera.position)
            lo = np.array([self.x_range[0], self.y_range[0], self.z_range[0]])
            hi = np.array([self.x_range[1], self.y_range[1], self.z_range[1]])
            if np.all(pos >= lo) and np.all(pos <= hi):
                raise ValueError("camera sits inside the point region; set allow_camera_inside to permit it")
        return self


class AlignmentRow(BaseModel):
    """
    One setting of the alignment-quality study. Errors are in pixels.
    """
    family: Literal["rotation", "flip", "scale", "translate"]
    magnitude: float  # degrees for rotation, probability for flip, half-width / sigma otherwise
    use_inverse_aug: bool
    mean_error: float = Field(ge=0)
    median_error: float = Field(ge=0)
    p95_error: float = Field(ge=0)
    fraction_lost: float = Field(ge=0, le=1)
    trials: int
    samples: int


class AlignmentReport(BaseModel):
    rows: list[AlignmentRow] = Field(default_factory=list)
