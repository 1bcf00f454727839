from pydantic import BaseModel, ConfigDict, model_validator
from typing import List, Literal


class LayerDocument(BaseModel):
    """Row-major weight (out x in) and bias of one fully connected layer."""
    model_config = ConfigDict(allow_inf_nan=False)

    weight: List[List[float]]
    bias: List[float]

    @model_validator(mode="after")
    def _shapes(self) -> "LayerDocument":
        if not self.weight or any(len(row) != len(self.weight[0]) for row in self.weight):
            raise ValueError("weight must be a non-empty rectangular matrix")
        if len(self.bias) != len(self.weight):
            raise ValueError(f"bias length {len(self.bias)} != weight rows {len(self.weight)}")
        return self


class EncoderParamsDocument(BaseModel):
    dims: List[int]
    activation: Literal["relu", "silu"]
    layout: Literal["point", "attributes"] = "point"
    layers: List[LayerDocument]


class AlignParamsDocument(BaseModel):
    d_lidar: int
    d_camera: int
    embed_dim: int
    mlp_dim: int
    query: LayerDocument
    key: LayerDocument
    value: LayerDocument
    mlp: LayerDocument
    squeeze: LayerDocument
    dropout_rate: float = 0.3
    scale_affinity: bool = False
    dropout_position: Literal["post_softmax", "pre_softmax"] = "post_softmax"
