from pydantic import BaseModel, Field
from typing import Any, Dict, List, Optional

from models.fusion import FusionConfig, Strategy
from models.scene import AlignmentRow, SceneSpec


class UploadResponse(BaseModel):
    message: str
    filename: str
    points: int
    frames: List[int]


class SceneRequest(BaseModel):
    name: str = Field(pattern=r"^[A-Za-z0-9_-]+$")
    spec: SceneSpec = Field(default_factory=SceneSpec)


class SceneResponse(BaseModel):
    name: str
    points: int
    visible_points: int
    feature_map: List[int]  # height, width, channels


class RunRequest(BaseModel):
    strategy: Optional[Strategy] = None
    config: Optional[FusionConfig] = None


class RunResponse(BaseModel):
    metrics: Dict[str, Any]
    record: List[Dict[str, Any]]


class AlignStudyRequest(BaseModel):
    rotations: List[float] = Field(default_factory=lambda: [0.0, 15.0, 30.0, 45.0])
    flips: List[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0])
    trials: int = Field(default=100, ge=1)
    use_inverse_aug: bool = True
    seed: Optional[int] = None


class AlignStudyResponse(BaseModel):
    rows: List[AlignmentRow]


class GradCheckRequest(BaseModel):
    dims: List[int] = Field(default_factory=lambda: [4, 3, 8], min_length=3, max_length=3)
    seeds: int = Field(default=10, ge=1)
    seed: Optional[int] = None


class GradCheckResult(BaseModel):
    seed: int
    max_rel_error: float


class GradCheckResponse(BaseModel):
    results: List[GradCheckResult]
    max_rel_error: float
