"""
Input corruptions for robustness runs: noisy lidar reflectance and noisy
camera features, bounded relative to the original value.
"""
import numpy as np

from components.geometry import FeatureMap, PointCloud


def _check_magnitude(magnitude: float):
    if not 0 <= magnitude <= 1:
        raise ValueError(f"noise magnitude must lie in [0, 1], got {magnitude}")


def laser_noise(
    points: PointCloud,
    magnitude: float,
    rng: np.random.Generator,
    additive: bool = False,
) -> PointCloud:
    """
    intensity <- intensity * (1 + u), u ~ U[-magnitude, magnitude], clamped
    to [0, 1]. With additive=True, intensity <- intensity + u instead.
    Positions are untouched.
    """
    _check_magnitude(magnitude)
    u = rng.uniform(-magnitude, magnitude, size=len(points))
    noisy = points.intensity + u if additive else points.intensity * (1.0 + u)
    return points.with_intensity(np.clip(noisy, 0.0, 1.0))


def pixel_noise(
    fm: FeatureMap,
    magnitude: float,
    rng: np.random.Generator,
    additive: bool = False,
) -> FeatureMap:
    """
    Same law as laser_noise on every cell-channel, without clamping. The
    multiplicative bound |new - old| <= magnitude * |old| still holds after
    rounding to float32.
    """
    _check_magnitude(magnitude)
    old = fm.data.astype(np.float64)
    u = rng.uniform(-magnitude, magnitude, size=old.shape)
    noisy = old + u if additive else old * (1.0 + u)
    rounded = noisy.astype(np.float32)
    if not additive:
        over = np.abs(rounded.astype(np.float64) - old) > magnitude * np.abs(old)
        rounded[over] = np.nextafter(rounded[over], fm.data[over])
    return FeatureMap(data=rounded, scale=fm.scale)
