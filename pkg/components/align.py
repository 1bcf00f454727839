"""
LearnableAlign: single-head cross-attention from a pillar's lidar feature
(query) to the camera features of its key points (keys/values).

Forward, per pillar:
    q = W_q l + b_q,  k_i = W_k c_i + b_k,  v_i = W_v c_i + b_v
    a_i = q . k_i  (optionally / sqrt(embed_dim))
    w = softmax(a), then inverted dropout on w (or -inf masking on a)
    o = sum_i w_i v_i,  m = W_mlp o + b_mlp  (m = 0 when N = 0)
    out = W_squeeze [l; m] + b_squeeze

All math here is float64.
"""
import json
import logging
import numpy as np
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple

from components.augment import inverse_aug_points
from components.geometry import FeatureMap, bilinear_sample_many, pixel_cells, project_points
from models.augment import AugRecord
from models.camera import CameraModel
from models.params import AlignParamsDocument, LayerDocument

logger = logging.getLogger(__name__)

PARAM_NAMES = ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_mlp", "b_mlp", "w_squeeze", "b_squeeze")


@dataclass(frozen=True, eq=False)
class AlignParams:
    w_q: np.ndarray  # (E, D_l)
    b_q: np.ndarray
    w_k: np.ndarray  # (E, D_c)
    b_k: np.ndarray
    w_v: np.ndarray  # (E, D_c)
    b_v: np.ndarray
    w_mlp: np.ndarray  # (M, E)
    b_mlp: np.ndarray
    w_squeeze: np.ndarray  # (D_l, D_l + M)
    b_squeeze: np.ndarray
    dropout_rate: float = 0.3
    scale_affinity: bool = False
    dropout_position: Literal["post_softmax", "pre_softmax"] = "post_softmax"

    def __post_init__(self):
        e, d_l = self.w_q.shape
        d_c = self.w_k.shape[1]
        m = self.w_mlp.shape[0]
        expected = {
            "w_q": (e, d_l), "b_q": (e,),
            "w_k": (e, d_c), "b_k": (e,),
            "w_v": (e, d_c), "b_v": (e,),
            "w_mlp": (m, e), "b_mlp": (m,),
            "w_squeeze": (d_l, d_l + m), "b_squeeze": (d_l,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.dropout_position not in ("post_softmax", "pre_softmax"):
            raise ValueError(f"unknown dropout position {self.dropout_position}")

    @property
    def d_lidar(self) -> int:
        return self.w_q.shape[1]

    @property
    def d_camera(self) -> int:
        return self.w_k.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def mlp_dim(self) -> int:
        return self.w_mlp.shape[0]

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def replace(self, **arrays) -> "AlignParams":
        values = self.arrays()
        values.update(arrays)
        return AlignParams(**values, dropout_rate=self.dropout_rate,
                           scale_affinity=self.scale_affinity, dropout_position=self.dropout_position)

    @classmethod
    def init(
        cls,
        d_lidar: int,
        d_camera: int,
        embed_dim: int = 256,
        mlp_dim: int = 192,
        seed: int = 0,
        dropout_rate: float = 0.3,
        scale_affinity: bool = False,
        dropout_position: str = "post_softmax",
        bias_scale: float = 0.0,
    ) -> "AlignParams":
        rng = np.random.default_rng(seed)

        def dense(d_out, d_in):
            return rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)), rng.normal(0.0, bias_scale, size=d_out)

        w_q, b_q = dense(embed_dim, d_lidar)
        w_k, b_k = dense(embed_dim, d_camera)
        w_v, b_v = dense(embed_dim, d_camera)
        w_mlp, b_mlp = dense(mlp_dim, embed_dim)
        w_squeeze, b_squeeze = dense(d_lidar, d_lidar + mlp_dim)
        return cls(w_q, b_q, w_k, b_k, w_v, b_v, w_mlp, b_mlp, w_squeeze, b_squeeze,
                   dropout_rate=dropout_rate, scale_affinity=scale_affinity, dropout_position=dropout_position)

    def to_document(self) -> AlignParamsDocument:
        def layer(w, b):
            return LayerDocument(weight=w.tolist(), bias=b.tolist())

        return AlignParamsDocument(
            d_lidar=self.d_lidar, d_camera=self.d_camera, embed_dim=self.embed_dim, mlp_dim=self.mlp_dim,
            query=layer(self.w_q, self.b_q), key=layer(self.w_k, self.b_k), value=layer(self.w_v, self.b_v),
            mlp=layer(self.w_mlp, self.b_mlp), squeeze=layer(self.w_squeeze, self.b_squeeze),
            dropout_rate=self.dropout_rate, scale_affinity=self.scale_affinity,
            dropout_position=self.dropout_position,
        )

    @classmethod
    def from_document(cls, doc: AlignParamsDocument) -> "AlignParams":
        def arrays(layer: LayerDocument):
            return np.asarray(layer.weight, dtype=np.float64), np.asarray(layer.bias, dtype=np.float64)

        params = cls(*arrays(doc.query), *arrays(doc.key), *arrays(doc.value), *arrays(doc.mlp),
                     *arrays(doc.squeeze), dropout_rate=doc.dropout_rate,
                     scale_affinity=doc.scale_affinity, dropout_position=doc.dropout_position)
        declared = (doc.d_lidar, doc.d_camera, doc.embed_dim, doc.mlp_dim)
        if declared != (params.d_lidar, params.d_camera, params.embed_dim, params.mlp_dim):
            raise ValueError(f"declared dims {declared} do not match the stored layers")
        return params

    def save(self, path: str | Path):
        Path(path).write_text(self.to_document().model_dump_json())

    @classmethod
    def load(cls, path: str | Path) -> "AlignParams":
        try:
            doc = AlignParamsDocument.model_validate(json.loads(Path(path).read_text()))
        except Exception as e:
            logger.error(f"Failed to load align params {path}: {e}")
            raise
        return cls.from_document(doc)


@dataclass(frozen=True, eq=False)
class CameraFeatureSet:
    """
    The N camera features of one pillar. `key_indices[i]` is the position,
    in the caller's key-point list, of the point that produced feature i.
    """
    features: np.ndarray  # (N, D_c)
    pixels: np.ndarray  # (N, 2)
    key_indices: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.pixels.shape != (self.features.shape[0], 2):
            raise ValueError("camera features must be (N, D_c) with one pixel per feature")

    def __len__(self) -> int:
        return self.features.shape[0]

    @classmethod
    def empty(cls, channels: int) -> "CameraFeatureSet":
        return cls(np.zeros((0, channels)), np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True, eq=False)
class DropoutMask:
    keep: np.ndarray  # (N,) bool
    rate: float

    def __post_init__(self):
        if not 0 <= self.rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")

    @property
    def scale(self) -> float:
        return 1.0 / (1.0 - self.rate)

    @classmethod
    def sample(cls, n: int, rate: float, rng: np.random.Generator) -> "DropoutMask":
        return cls(keep=rng.random(n) >= rate, rate=rate)


def gather_camera_features(
    key_points: np.ndarray,
    record: AugRecord,
    cam: CameraModel,
    fm: FeatureMap,
    max_n: int,
    pillar_index: int = 0,
) -> CameraFeatureSet:
    """
    Camera features for one pillar's key points (augmented frame).

    Key points go through InverseAug and the pinhole projection; visible
    ones are sampled from the feature map. Key points landing in an
    already used feature-map cell are skipped, and more than max_n
    survivors are subsampled with a generator seeded by the pillar index.
    """
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    original = inverse_aug_points(np.asarray(key_points, dtype=np.float64).reshape(-1, 3), record)
    uv, visible = project_points(original, cam)
    candidates = np.flatnonzero(visible)
    if candidates.size == 0:
        return CameraFeatureSet.empty(fm.channels)

    _, first = np.unique(pixel_cells(fm, uv[candidates]), return_index=True)
    chosen = candidates[np.sort(first)]
    if chosen.size > max_n:
        rng = np.random.default_rng(pillar_index)
        chosen = chosen[np.sort(rng.choice(chosen.size, size=max_n, replace=False))]

    pixels = uv[chosen]
    return CameraFeatureSet(features=bilinear_sample_many(fm, pixels), pixels=pixels, key_indices=chosen)


def _check_inputs(lidar_feature: np.ndarray, cams: CameraFeatureSet, params: AlignParams):
    if lidar_feature.shape != (params.d_lidar,):
        raise ValueError(f"lidar feature has shape {lidar_feature.shape}, params expect ({params.d_lidar},)")
    if len(cams) and cams.features.shape[1] != params.d_camera:
        raise ValueError(f"camera features have {cams.features.shape[1]} channels, params expect {params.d_camera}")


def _softmax(a: np.ndarray) -> np.ndarray:
    finite = np.isfinite(a)
    if not finite.any():
        return np.zeros_like(a)
    e = np.where(finite, np.exp(a - a[finite].max()), 0.0)
    return e / e.sum()


def attention_weights(
    lidar_feature: np.ndarray,
    cams: CameraFeatureSet,
    params: AlignParams,
    mask: Optional[DropoutMask] = None,
) -> np.ndarray:
    """The (post-dropout) weight row used to aggregate the values."""
    return _forward(np.asarray(lidar_feature, dtype=np.float64), cams, params, mask)["w"]


def _forward(l: np.ndarray, cams: CameraFeatureSet, params: AlignParams,
             mask: Optional[DropoutMask], uniform: bool = False) -> dict:
    _check_inputs(l, cams, params)
    n = len(cams)
    if mask is not None and mask.keep.shape != (n,):
        raise ValueError(f"dropout mask has {mask.keep.shape[0]} entries for {n} camera features")

    cache = {"l": l, "n": n}
    if n == 0:
        m = np.zeros(params.mlp_dim)
        cache.update(w=np.zeros(0), m=m)
    else:
        c = np.asarray(cams.features, dtype=np.float64)
        q = params.w_q @ l + params.b_q
        k = c @ params.w_k.T + params.b_k
        v = c @ params.w_v.T + params.b_v
        factor = 1.0 / np.sqrt(params.embed_dim) if params.scale_affinity else 1.0
        a = (k @ q) * factor
        if uniform:
            s = np.full(n, 1.0 / n)
            w = s
        elif mask is not None and params.dropout_position == "pre_softmax":
            s = _softmax(np.where(mask.keep, a, -np.inf))
            w = s
        else:
            s = _softmax(a)
            w = s * mask.keep * mask.scale if mask is not None else s
        o = w @ v
        m = params.w_mlp @ o + params.b_mlp
        cache.update(c=c, q=q, k=k, v=v, factor=factor, a=a, s=s, w=w, o=o, m=m)

    z = np.concatenate([l, cache["m"]])
    cache.update(z=z, out=params.w_squeeze @ z + params.b_squeeze)
    return cache


def learnable_align(
    lidar_feature: np.ndarray,
    cams: CameraFeatureSet,
    params: AlignParams,
    mask: Optional[DropoutMask] = None,
) -> np.ndarray:
    """
    Fuses one pillar's lidar feature with its camera features by
    cross-attention. Returns a vector of the lidar width.
    """
    return _forward(np.asarray(lidar_feature, dtype=np.float64), cams, params, mask)["out"]


def mean_pool_align(lidar_feature: np.ndarray, cams: CameraFeatureSet, params: AlignParams) -> np.ndarray:
    """Naive baseline: uniform 1/N weights in place of attention."""
    return _forward(np.asarray(lidar_feature, dtype=np.float64), cams, params, None, uniform=True)["out"]


def align_with_weights(
    lidar_feature: np.ndarray,
    cams: CameraFeatureSet,
    params: AlignParams,
    mask: Optional[DropoutMask] = None,
    kind: Literal["learned", "mean"] = "learned",
) -> Tuple[np.ndarray, np.ndarray]:
    """Fused output together with the weight row that produced it."""
    f = _forward(np.asarray(lidar_feature, dtype=np.float64), cams, params,
                 mask if kind == "learned" else None, uniform=kind == "mean")
    return f["out"], f["w"]


def align_gradients(
    params: AlignParams,
    lidar_feature: np.ndarray,
    cams: CameraFeatureSet,
    mask: Optional[DropoutMask] = None,
) -> Dict[str, np.ndarray]:
    """
    Gradients of sum(learnable_align(...)) with respect to every parameter,
    the lidar feature ("lidar") and the camera features ("camera").
    """
    f = _forward(np.asarray(lidar_feature, dtype=np.float64), cams, params, mask)
    d_l = params.d_lidar
    g_out = np.ones(d_l)

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays().items()}
    grads["b_squeeze"] = g_out.copy()
    grads["w_squeeze"] = np.outer(g_out, f["z"])
    g_z = params.w_squeeze.T @ g_out
    grads["lidar"] = g_z[:d_l].copy()
    grads["camera"] = np.zeros((f["n"], params.d_camera))
    if f["n"] == 0:
        return grads

    g_m = g_z[d_l:]
    grads["b_mlp"] = g_m
    grads["w_mlp"] = np.outer(g_m, f["o"])
    g_o = params.w_mlp.T @ g_m

    g_v = np.outer(f["w"], g_o)
    g_w = f["v"] @ g_o
    if mask is not None and params.dropout_position == "post_softmax":
        g_s = g_w * mask.keep * mask.scale
    else:
        g_s = g_w
    s = f["s"]
    g_a = s * (g_s - s @ g_s)
    g_a = g_a * f["factor"]

    g_q = f["k"].T @ g_a
    g_k = np.outer(g_a, f["q"])

    grads["w_q"] = np.outer(g_q, f["l"])
    grads["b_q"] = g_q
    grads["lidar"] += params.w_q.T @ g_q
    grads["w_k"] = g_k.T @ f["c"]
    grads["b_k"] = g_k.sum(axis=0)
    grads["w_v"] = g_v.T @ f["c"]
    grads["b_v"] = g_v.sum(axis=0)
    grads["camera"] = g_k @ params.w_k + g_v @ params.w_v
    return grads


def grad_check_report(
    params: AlignParams,
    lidar_feature: np.ndarray,
    cams: CameraFeatureSet,
    eps: float = 1e-5,
) -> Dict[str, float]:
    """
    Per-tensor max of |g_analytic - g_fd| / max(1, |g_fd|), with g_fd the
    central finite difference of sum(learnable_align(...)).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    lidar_feature = np.asarray(lidar_feature, dtype=np.float64)
    analytic = align_gradients(params, lidar_feature, cams)

    def loss(p: AlignParams, l: np.ndarray, c: CameraFeatureSet) -> float:
        return float(learnable_align(l, c, p).sum())

    def numeric(base: np.ndarray, evaluate) -> np.ndarray:
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            plus, minus = base.copy(), base.copy()
            plus[idx] += eps
            minus[idx] -= eps
            g[idx] = (evaluate(plus) - evaluate(minus)) / (2 * eps)
        return g

    numeric_grads = {}
    for name, arr in params.arrays().items():
        numeric_grads[name] = numeric(arr, lambda x, name=name: loss(params.replace(**{name: x}), lidar_feature, cams))
    numeric_grads["lidar"] = numeric(lidar_feature, lambda x: loss(params, x, cams))
    numeric_grads["camera"] = numeric(
        np.asarray(cams.features, dtype=np.float64),
        lambda x: loss(params, lidar_feature, CameraFeatureSet(x, cams.pixels, cams.key_indices)),
    )

    report = {}
    for name, g_fd in numeric_grads.items():
        if g_fd.size == 0:
            report[name] = 0.0
            continue
        report[name] = float((np.abs(analytic[name] - g_fd) / np.maximum(1.0, np.abs(g_fd))).max())
    return report


def align_grad_check(
    params: AlignParams,
    lidar_feature: np.ndarray,
    cams: CameraFeatureSet,
    eps: float = 1e-5,
) -> float:
    """Max relative error between the hand-derived backward pass and finite differences."""
    return max(grad_check_report(params, lidar_feature, cams, eps).values())
