import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List

ROTATION_TOLERANCE = 1e-9


class CameraModel(BaseModel):
    """
    Pinhole intrinsics plus the world -> camera extrinsic.

    The camera frame is z forward, x right, y down. `rotation` is the
    row-major 3x3 matrix R and `translation` the vector t, so that
    p_cam = R @ p_world + t.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    rotation: List[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
    translation: List[float] = Field(default_factory=lambda: [0.0, 0.0, 0.0])

    @field_validator("rotation")
    @classmethod
    def _nine_numbers(cls, value: List[float]) -> List[float]:
        if len(value) != 9:
            raise ValueError(f"rotation needs 9 numbers, got {len(value)}")
        return value

    @field_validator("translation")
    @classmethod
    def _three_numbers(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError(f"translation needs 3 numbers, got {len(value)}")
        return value

    @model_validator(mode="after")
    def _proper_rotation(self) -> "CameraModel":
        r = self.R
        if np.abs(r @ r.T - np.eye(3)).max() > ROTATION_TOLERANCE:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOLERANCE:
            raise ValueError("rotation determinant is not +1")
        return self

    @property
    def R(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    @property
    def position(self) -> np.ndarray:
        """Camera center in the world frame."""
        return -self.R.T @ self.t
