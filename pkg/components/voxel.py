"""
Dynamic pillar voxelization and the MLP pillar feature encoder.
"""
import json
import logging
import numpy as np
from dataclasses import dataclass, field
from pathlib import Path
from scipy.special import expit
from typing import Dict, List, Literal, Tuple

from components.geometry import FeatureMap, PointCloud
from models.grid import PillarGrid
from models.params import EncoderParamsDocument, LayerDocument

logger = logging.getLogger(__name__)

PseudoImage = FeatureMap  # (ny, nx, C); cell (ix, iy) lives at row iy, column ix

POINT_BASE_FEATURES = 6  # x, y, z, intensity, x - cx, y - cy


@dataclass(frozen=True, eq=False)
class VoxelAssignment:
    """
    Point -> pillar mapping. `pillar_index[i]` is iy * nx + ix, or -1 for
    points outside the grid.
    """
    pillar_index: np.ndarray
    grid: PillarGrid

    @property
    def assigned(self) -> np.ndarray:
        return self.pillar_index >= 0

    def nonempty_pillars(self) -> np.ndarray:
        return np.unique(self.pillar_index[self.assigned])

    def member_lists(self) -> Dict[int, np.ndarray]:
        """Pillar index -> ascending point indices of its members."""
        points = np.flatnonzero(self.assigned)
        idx = self.pillar_index[points]
        order = np.argsort(idx, kind="stable")
        pillars, starts = np.unique(idx[order], return_index=True)
        groups = np.split(points[order], starts[1:])
        return {int(p): g for p, g in zip(pillars, groups)}


def dynamic_voxelize(points: PointCloud, grid: PillarGrid) -> VoxelAssignment:
    """
    Assigns every in-range point to exactly one pillar, with no capacity
    limit. Pillar (ix, iy) covers [x_min + ix*dx, x_min + (ix+1)*dx) and
    likewise in y; the floor division is corrected against those bounds so
    points on a cell edge land in the upper cell.
    """
    x, y = points.positions[:, 0], points.positions[:, 1]
    in_range = (x >= grid.x_min) & (x < grid.x_max) & (y >= grid.y_min) & (y < grid.y_max)
    ix = _cell_index(x[in_range], grid.x_min, grid.pillar_dx, grid.nx)
    iy = _cell_index(y[in_range], grid.y_min, grid.pillar_dy, grid.ny)

    pillar_index = np.full(len(points), -1, dtype=np.int64)
    pillar_index[in_range] = iy * grid.nx + ix
    logger.debug(f"Voxelized {int(in_range.sum())} of {len(points)} points")
    return VoxelAssignment(pillar_index=pillar_index, grid=grid)


def _cell_index(coord: np.ndarray, lo: float, size: float, count: int) -> np.ndarray:
    idx = np.floor((coord - lo) / size).astype(np.int64)
    idx -= coord < lo + idx * size
    idx += coord >= lo + (idx + 1) * size
    return np.clip(idx, 0, count - 1)


def pillar_center(index: int, grid: PillarGrid) -> Tuple[float, float]:
    if not 0 <= index < grid.num_pillars:
        raise ValueError(f"pillar index {index} outside [0, {grid.num_pillars})")
    ix, iy = index % grid.nx, index // grid.nx
    return grid.x_min + (ix + 0.5) * grid.pillar_dx, grid.y_min + (iy + 0.5) * grid.pillar_dy


def pillar_centers(indices: np.ndarray, grid: PillarGrid) -> np.ndarray:
    ix, iy = indices % grid.nx, indices // grid.nx
    return np.stack([grid.x_min + (ix + 0.5) * grid.pillar_dx, grid.y_min + (iy + 0.5) * grid.pillar_dy], axis=1)


def silu(x):
    return x * expit(x)


def relu(x):
    return np.maximum(x, 0.0)


ACTIVATIONS = {"relu": relu, "silu": silu}


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """
    Weights of the point-wise MLP. Each weight is (out, in).

    layout "point" feeds (x, y, z, intensity, *attributes, x - cx, y - cy);
    layout "attributes" feeds the decoration channels alone (LateFusion's
    camera branch).
    """
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: Literal["relu", "silu"] = "silu"
    layout: Literal["point", "attributes"] = "point"
    dims: List[int] = field(init=False)

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("encoder needs one bias per weight matrix and at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation}")
        dims = [self.weights[0].shape[1]]
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or w.shape[1] != dims[-1] or b.shape != (w.shape[0],):
                raise ValueError(f"layer dimensions do not chain at input size {dims[-1]}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("encoder weights must be finite")
            dims.append(w.shape[0])
        object.__setattr__(self, "dims", dims)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    @classmethod
    def init(
        cls,
        in_dim: int,
        hidden_dims: List[int],
        out_channels: int,
        activation: str = "silu",
        seed: int = 0,
        layout: str = "point",
    ) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        dims = [in_dim, *hidden_dims, out_channels]
        weights = [rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_out, d_in)) for d_in, d_out in zip(dims, dims[1:])]
        biases = [np.zeros(d_out) for d_out in dims[1:]]
        return cls(weights=weights, biases=biases, activation=activation, layout=layout)

    def to_document(self) -> EncoderParamsDocument:
        return EncoderParamsDocument(
            dims=self.dims,
            activation=self.activation,
            layout=self.layout,
            layers=[LayerDocument(weight=w.tolist(), bias=b.tolist()) for w, b in zip(self.weights, self.biases)],
        )

    @classmethod
    def from_document(cls, doc: EncoderParamsDocument) -> "EncoderParams":
        params = cls(
            weights=[np.asarray(layer.weight, dtype=np.float64) for layer in doc.layers],
            biases=[np.asarray(layer.bias, dtype=np.float64) for layer in doc.layers],
            activation=doc.activation,
            layout=doc.layout,
        )
        if params.dims != doc.dims:
            raise ValueError(f"declared dims {doc.dims} do not match layers {params.dims}")
        return params

    def save(self, path: str | Path):
        Path(path).write_text(self.to_document().model_dump_json())

    @classmethod
    def load(cls, path: str | Path) -> "EncoderParams":
        try:
            doc = EncoderParamsDocument.model_validate(json.loads(Path(path).read_text()))
        except Exception as e:
            logger.error(f"Failed to load encoder params {path}: {e}")
            raise
        return cls.from_document(doc)


def point_features(points: PointCloud, assignment: VoxelAssignment, layout: str = "point") -> np.ndarray:
    """Input features of the assigned points, in point order."""
    mask = assignment.assigned
    attrs = points.attributes[mask].astype(np.float64) if points.attributes is not None else None
    if layout == "attributes":
        if attrs is None:
            raise ValueError("attribute layout needs decorated points")
        return attrs

    pos = points.positions[mask]
    centers = pillar_centers(assignment.pillar_index[mask], assignment.grid)
    parts = [pos, points.intensity[mask, None]]
    if attrs is not None:
        parts.append(attrs)
    parts.append(pos[:, :2] - centers)
    return np.concatenate(parts, axis=1)


def mlp_forward(features: np.ndarray, params: EncoderParams) -> np.ndarray:
    act = ACTIVATIONS[params.activation]
    h = features
    for w, b in zip(params.weights, params.biases):
        h = act(h @ w.T + b)
    return h


def encode_pillars(points: PointCloud, assignment: VoxelAssignment, params: EncoderParams) -> PseudoImage:
    """
    Runs the MLP on every assigned point and max-pools each pillar's
    members per channel. Empty pillars hold zeros.
    """
    if assignment.pillar_index.shape[0] != len(points):
        raise ValueError("assignment does not match the point cloud")
    features = point_features(points, assignment, params.layout)
    if features.shape[1] != params.in_dim:
        raise ValueError(
            f"encoder expects {params.in_dim} input features, layout '{params.layout}' gives {features.shape[1]}"
        )

    grid = assignment.grid
    pooled = np.zeros((grid.num_pillars, params.out_dim), dtype=np.float64)
    if features.shape[0]:
        h = mlp_forward(features, params)
        idx = assignment.pillar_index[assignment.assigned]
        order = np.argsort(idx, kind="stable")
        pillars, starts = np.unique(idx[order], return_index=True)
        pooled[pillars] = np.maximum.reduceat(h[order], starts, axis=0)
    return FeatureMap(data=pooled.reshape(grid.ny, grid.nx, params.out_dim).astype(np.float32), scale=1.0)
