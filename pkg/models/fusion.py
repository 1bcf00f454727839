from enum import Enum
from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Optional

from models.augment import AugConfig
from models.grid import PillarGrid


class Strategy(str, Enum):
    SINGLE = "single"
    INPUT = "input"
    LATE = "late"
    DEEP = "deep"


class EncoderConfig(BaseModel):
    """
    Pillar feature encoder: an MLP applied point-wise, then max-pooled.
    """
    model_config = ConfigDict(frozen=True)

    hidden_dims: List[int] = Field(default_factory=lambda: [256, 256])
    out_channels: int = Field(default=64, ge=1)
    activation: Literal["relu", "silu"] = "silu"
    seed: int = 0
    params_path: Optional[str] = None  # overrides the seeded init


class AlignConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    embed_dim: int = Field(default=256, ge=1)
    mlp_dim: int = Field(default=192, ge=1)
    dropout_rate: float = Field(default=0.3, ge=0, lt=1)
    scale_affinity: bool = False
    dropout_position: Literal["post_softmax", "pre_softmax"] = "post_softmax"
    max_n: int = Field(default=32, ge=1)
    key_points: Literal["members", "center"] = "members"
    seed: int = 0
    params_path: Optional[str] = None


class FusionConfig(BaseModel):
    """
    Everything a fusion pipeline run needs besides the scene.
    """
    model_config = ConfigDict(frozen=True)

    strategy: Strategy = Strategy.DEEP
    aug: AugConfig = Field(default_factory=AugConfig)
    grid: PillarGrid = Field(default_factory=PillarGrid)
    camera_grid: Optional[PillarGrid] = None  # LateFusion camera branch; defaults to grid
    lidar_encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    camera_encoder: Optional[EncoderConfig] = None
    align: Optional[AlignConfig] = None
    use_inverse_aug: bool = True
    align_kind: Literal["learned", "mean"] = "learned"
    training: bool = False
    drop_frame_p: float = Field(default=0.5, ge=0, le=1)  # DropFrame, training only
    seed: int = 0

    @model_validator(mode="after")
    def _strategy_requirements(self) -> "FusionConfig":
        if self.strategy == Strategy.LATE and self.camera_encoder is None:
            raise ValueError("LateFusion needs camera_encoder")
        if self.strategy == Strategy.DEEP and self.align is None:
            raise ValueError("DeepFusion needs align parameters")
        return self

    def with_strategy(self, strategy: Strategy) -> "FusionConfig":
        """Re-validates, so a strategy switch cannot skip the requirement checks."""
        data = self.model_dump()
        data["strategy"] = strategy
        if strategy == Strategy.LATE and data["camera_encoder"] is None:
            data["camera_encoder"] = EncoderConfig().model_dump()
        if strategy == Strategy.DEEP and data["align"] is None:
            data["align"] = AlignConfig().model_dump()
        return FusionConfig.model_validate(data)
