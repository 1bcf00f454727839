from __future__ import annotations

import numpy as np
import pytest

from components.geometry import FeatureMap
from models.augment import AugConfig
from models.camera import CameraModel
from models.fusion import AlignConfig, EncoderConfig, FusionConfig, Strategy
from models.grid import PillarGrid
from models.scene import CameraPlacement, FeatureMapSpec, SceneSpec
from providers.scene import generate_scene

# Covers the default scene extent under +-45 deg rotation, 1.05 scaling and translate noise
TEST_GRID = PillarGrid.square(48.0, 32)


@pytest.fixture
def pinhole():
    """Identity extrinsic: camera frame equals world frame."""
    return CameraModel(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)


@pytest.fixture
def pinhole_features():
    rng = np.random.default_rng(7)
    return FeatureMap(data=rng.normal(size=(13, 13, 3)).astype(np.float32), scale=8.0)


@pytest.fixture(scope="session")
def scene_spec():
    return SceneSpec(num_points=400, seed=3)


@pytest.fixture(scope="session")
def scene(scene_spec):
    return generate_scene(scene_spec)


@pytest.fixture(scope="session")
def zero_feature_scene():
    spec = SceneSpec(
        num_points=400,
        seed=5,
        feature_map=FeatureMapSpec(channels=3, generator="constant", constant=0.0),
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def constant_feature_scene():
    spec = SceneSpec(
        num_points=400,
        seed=6,
        feature_map=FeatureMapSpec(channels=3, generator="constant", constant=0.75),
    )
    return generate_scene(spec)


@pytest.fixture(scope="session")
def blind_scene():
    """Camera looks away from every point."""
    spec = SceneSpec(
        num_points=200,
        seed=8,
        camera=CameraPlacement(look_at=(-10.0, 0.0, 1.5)),
    )
    return generate_scene(spec)


def small_fusion_config(strategy: Strategy, aug: AugConfig | None = None, **overrides) -> FusionConfig:
    fields = dict(
        strategy=strategy,
        aug=aug if aug is not None else AugConfig.disabled(),
        grid=TEST_GRID,
        lidar_encoder=EncoderConfig(hidden_dims=[8], out_channels=4, seed=1),
        camera_encoder=EncoderConfig(hidden_dims=[8], out_channels=3, seed=2),
        align=AlignConfig(embed_dim=8, mlp_dim=6, max_n=8, seed=3),
        seed=11,
    )
    fields.update(overrides)
    return FusionConfig(**fields)


@pytest.fixture
def fusion_config():
    return small_fusion_config
