import math
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, model_validator
from typing import Annotated, Any, Dict, List, Literal, Tuple, Union

Vec3Tuple = Tuple[float, float, float]


class _Op(BaseModel):
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    def params(self) -> Dict[str, Any]:
        return self.model_dump(exclude={"op"}, mode="json")


class RotateZ(_Op):
    op: Literal["rotate_z"] = "rotate_z"
    theta: float  # radians


class WorldScale(_Op):
    op: Literal["world_scale"] = "world_scale"
    s: float = Field(gt=0)


class Translate(_Op):
    op: Literal["translate"] = "translate"
    t: Vec3Tuple  # meters


class FlipY(_Op):
    op: Literal["flip_y"] = "flip_y"
    applied: bool = True


GeometricOp = Annotated[
    Union[RotateZ, WorldScale, Translate, FlipY],
    Field(discriminator="op"),
]

_geometric_op_adapter = TypeAdapter(GeometricOp)


class FrustumDropout(_Op):
    op: Literal["frustum_dropout"] = "frustum_dropout"
    theta_range: Tuple[float, float]  # azimuth interval, radians
    phi_range: Tuple[float, float]  # inclination interval, radians
    drop_p: float = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _ordered(self) -> "FrustumDropout":
        if self.theta_range[0] > self.theta_range[1] or self.phi_range[0] > self.phi_range[1]:
            raise ValueError("frustum ranges must be (lo, hi) with lo <= hi")
        return self


class RandomDropPoints(_Op):
    op: Literal["random_drop_points"] = "random_drop_points"
    keep_p: float = Field(ge=0, le=1)


NonGeometricOp = Annotated[
    Union[FrustumDropout, RandomDropPoints],
    Field(discriminator="op"),
]


class AugRecord(BaseModel):
    """
    Geometric ops in application order. This is the whole InverseAug state.
    """
    model_config = ConfigDict(frozen=True)

    ops: List[GeometricOp] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ops)

    def to_entries(self) -> List[Dict[str, Any]]:
        """JSON array of {op, params} in application order."""
        return [{"op": op.op, "params": op.params()} for op in self.ops]

    @classmethod
    def from_entries(cls, entries: List[Dict[str, Any]]) -> "AugRecord":
        ops = []
        for entry in entries:
            if "op" not in entry:
                raise ValueError(f"record entry without 'op': {entry}")
            ops.append(_geometric_op_adapter.validate_python({"op": entry["op"], **entry.get("params", {})}))
        return cls(ops=ops)


class AugConfig(BaseModel):
    """
    Parameters of the lidar augmentation pipeline. Angles are radians.
    """
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    rotate: bool = True
    max_rotation: float = Field(default=math.pi / 4, ge=0)

    scale: bool = True
    scale_range: Tuple[float, float] = (0.95, 1.05)

    translate: bool = True
    translate_sigma: Vec3Tuple = (0.2, 0.2, 0.2)

    flip: bool = True
    flip_probability: float = Field(default=0.5, ge=0, le=1)

    frustum_dropout: bool = True
    frustum_theta_width: float = Field(default=math.pi / 4, ge=0)
    frustum_phi_width: float = Field(default=math.pi / 6, ge=0)
    frustum_drop_p: float = Field(default=0.5, ge=0, le=1)

    drop_points: bool = True
    drop_keep_p: float = Field(default=0.9, ge=0, le=1)

    @model_validator(mode="after")
    def _check_ranges(self) -> "AugConfig":
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if any(sigma < 0 for sigma in self.translate_sigma):
            raise ValueError("translate_sigma must be non-negative")
        return self

    @classmethod
    def disabled(cls, **overrides) -> "AugConfig":
        flags = dict(rotate=False, scale=False, translate=False, flip=False,
                     frustum_dropout=False, drop_points=False)
        flags.update(overrides)
        return cls(**flags)

    @classmethod
    def rotation_only(cls, max_rotation: float) -> "AugConfig":
        return cls.disabled(rotate=True, max_rotation=max_rotation)

    @classmethod
    def flip_only(cls, probability: float) -> "AugConfig":
        return cls.disabled(flip=True, flip_probability=probability)

    @classmethod
    def scale_only(cls, half_width: float) -> "AugConfig":
        return cls.disabled(scale=True, scale_range=(1.0 - half_width, 1.0 + half_width))

    @classmethod
    def translate_only(cls, sigma: float) -> "AugConfig":
        return cls.disabled(translate=True, translate_sigma=(sigma, sigma, sigma))
