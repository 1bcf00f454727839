from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from components.corruption import laser_noise, pixel_noise
from components.geometry import FeatureMap, PointCloud


def cloud(n: int, seed: int = 0) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud.from_arrays(rng.uniform(-30, 30, size=(n, 3)), rng.uniform(0, 1, size=n))


@pytest.mark.unit
class TestLaserNoise:
    def test_zero_magnitude_is_identity(self):
        points = cloud(1_000)
        noisy = laser_noise(points, 0.0, np.random.default_rng(0))

        assert_array_equal(noisy.intensity, points.intensity)

    def test_relative_bound_at_two_and_a_half_percent(self):
        points = cloud(100_000, seed=1)
        noisy = laser_noise(points, 0.025, np.random.default_rng(2))

        delta = np.abs(noisy.intensity - points.intensity)
        assert (delta <= 0.025 * points.intensity).all()
        assert delta.max() > 0

    def test_zero_intensity_stays_zero(self):
        points = PointCloud.from_arrays(np.ones((50, 3)), intensity=np.zeros(50))

        assert_array_equal(laser_noise(points, 0.5, np.random.default_rng(0)).intensity, 0)

    def test_result_is_clamped_to_unit_interval(self):
        points = PointCloud.from_arrays(np.ones((1_000, 3)), intensity=np.ones(1_000))
        noisy = laser_noise(points, 0.5, np.random.default_rng(3))

        assert noisy.intensity.max() <= 1.0

    def test_positions_untouched(self):
        points = cloud(100)

        assert_array_equal(laser_noise(points, 0.1, np.random.default_rng(0)).positions, points.positions)

    def test_additive_variant(self):
        points = PointCloud.from_arrays(np.ones((1_000, 3)), intensity=np.full(1_000, 0.5))
        noisy = laser_noise(points, 0.1, np.random.default_rng(4), additive=True)

        assert (np.abs(noisy.intensity - 0.5) <= 0.1).all()

    def test_magnitude_outside_unit_interval_raises(self):
        with pytest.raises(ValueError, match="magnitude"):
            laser_noise(cloud(3), 1.5, np.random.default_rng(0))


@pytest.mark.unit
class TestPixelNoise:
    def test_zero_magnitude_is_identity(self):
        fm = FeatureMap(data=np.random.default_rng(0).normal(size=(10, 10, 3)).astype(np.float32), scale=8)

        assert_array_equal(pixel_noise(fm, 0.0, np.random.default_rng(1)).data, fm.data)

    def test_relative_bound_over_a_hundred_thousand_cells(self):
        data = np.random.default_rng(5).normal(scale=10.0, size=(100, 100, 10)).astype(np.float32)
        fm = FeatureMap(data=data, scale=4)
        noisy = pixel_noise(fm, 0.025, np.random.default_rng(6))

        old = data.astype(np.float64)
        deviation = np.abs(noisy.data.astype(np.float64) - old)
        assert noisy.data.dtype == np.float32
        assert (deviation <= 0.025 * np.abs(old)).all()
        assert noisy.scale == 4

    def test_zero_map_stays_zero(self):
        fm = FeatureMap(data=np.zeros((4, 5, 2), dtype=np.float32))

        assert_array_equal(pixel_noise(fm, 0.3, np.random.default_rng(0)).data, 0)

    def test_features_are_not_clamped(self):
        fm = FeatureMap(data=np.full((4, 4, 1), 50.0, dtype=np.float32))
        noisy = pixel_noise(fm, 0.5, np.random.default_rng(7))

        assert noisy.data.max() > 50.0
