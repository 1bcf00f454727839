from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError
from scipy.stats import kstest

from components.augment import (
    apply_geometric,
    apply_pipeline,
    azimuth_inclination,
    drop_frames,
    frustum_dropout,
    inverse_aug,
    inverse_aug_points,
    invert_geometric,
    random_drop_points,
    replay_record,
)
from components.geometry import PointCloud
from models.augment import (
    AugConfig,
    AugRecord,
    FlipY,
    FrustumDropout,
    RotateZ,
    Translate,
    WorldScale,
)

rotations = st.builds(RotateZ, theta=st.floats(min_value=-math.pi, max_value=math.pi))
scalings = st.builds(WorldScale, s=st.floats(min_value=0.5, max_value=2.0))
offsets = st.floats(min_value=-5.0, max_value=5.0)
translations = st.builds(Translate, t=st.tuples(offsets, offsets, offsets))
flips = st.builds(FlipY, applied=st.booleans())
records = st.lists(st.one_of(rotations, scalings, translations, flips), max_size=4).map(lambda ops: AugRecord(ops=ops))


def random_cloud(n: int, seed: int = 0, extent: float = 50.0) -> PointCloud:
    rng = np.random.default_rng(seed)
    return PointCloud.from_arrays(rng.uniform(-extent, extent, size=(n, 3)), rng.uniform(0, 1, size=n))


def random_record(rng: np.random.Generator) -> AugRecord:
    ops = []
    for _ in range(rng.integers(0, 5)):
        kind = rng.integers(0, 4)
        if kind == 0:
            ops.append(RotateZ(theta=float(rng.uniform(-math.pi, math.pi))))
        elif kind == 1:
            ops.append(WorldScale(s=float(rng.uniform(0.5, 2.0))))
        elif kind == 2:
            ops.append(Translate(t=tuple(float(v) for v in rng.uniform(-5, 5, size=3))))
        else:
            ops.append(FlipY(applied=bool(rng.random() < 0.5)))
    return AugRecord(ops=ops)


def op_matrix(op) -> np.ndarray:
    """4x4 homogeneous matrix of one geometric op."""
    m = np.eye(4)
    if isinstance(op, RotateZ):
        c, s = math.cos(op.theta), math.sin(op.theta)
        m[:2, :2] = [[c, -s], [s, c]]
    elif isinstance(op, WorldScale):
        m[:3, :3] *= op.s
    elif isinstance(op, Translate):
        m[:3, 3] = op.t
    elif op.applied:
        m[1, 1] = -1.0
    return m


@pytest.mark.unit
class TestGeometricOps:
    def test_world_scale(self):
        cloud = PointCloud.from_arrays([[1, 2, 3]], intensity=[0.4])
        out = apply_geometric(cloud, WorldScale(s=2))

        assert_array_equal(out.positions, [[2, 4, 6]])
        assert_array_equal(out.intensity, [0.4])

    def test_flip_mirrors_y(self):
        out = apply_geometric(PointCloud.from_arrays([[1, 2, 3]]), FlipY(applied=True))

        assert_array_equal(out.positions, [[1, -2, 3]])

    def test_unapplied_flip_is_identity(self):
        out = apply_geometric(PointCloud.from_arrays([[1, 2, 3]]), FlipY(applied=False))

        assert_array_equal(out.positions, [[1, 2, 3]])

    def test_translate_origin(self):
        out = apply_geometric(PointCloud.from_arrays([[0, 0, 0]]), Translate(t=(0, 0, 1)))

        assert_array_equal(out.positions, [[0, 0, 1]])

    def test_rotation_keeps_point_order(self):
        cloud = random_cloud(50)
        out = apply_geometric(cloud, RotateZ(theta=0.3))

        assert_array_equal(out.source_index, cloud.source_index)
        assert_array_equal(out.intensity, cloud.intensity)

    def test_invert_rotation(self):
        assert_allclose(invert_geometric((0, 1, 0), RotateZ(theta=math.pi / 2)), (1, 0, 0), atol=1e-15)

    def test_invert_scale(self):
        assert_array_equal(invert_geometric((2, 4, 6), WorldScale(s=2)), (1, 2, 3))

    def test_flip_is_an_exact_involution(self):
        cloud = random_cloud(100)
        flipped = apply_geometric(cloud, FlipY(applied=True))

        assert_array_equal(
            np.stack([invert_geometric(p, FlipY(applied=True)) for p in flipped.positions]),
            cloud.positions,
        )

    def test_non_positive_scale_is_rejected(self):
        with pytest.raises(ValidationError):
            WorldScale(s=0)


@pytest.mark.unit
class TestInverseAug:
    def test_hand_composed_record(self):
        record = AugRecord(ops=[RotateZ(theta=math.pi / 2), WorldScale(s=2)])

        assert_allclose(inverse_aug((0, 2, 0), record), (1, 0, 0), atol=1e-15)

    def test_empty_record_is_identity(self):
        assert_array_equal(inverse_aug((1.5, -2, 3), AugRecord()), (1.5, -2, 3))

    def test_round_trip_over_random_pipelines(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(1000):
            record = random_record(rng)
            points = rng.uniform(-80, 80, size=(1000, 3))
            augmented = replay_record(PointCloud.from_arrays(points), record).positions
            worst = max(worst, float(np.abs(inverse_aug_points(augmented, record) - points).max()))

        assert worst < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(record=records, seed=st.integers(min_value=0, max_value=2**32 - 1))
    def test_round_trip_property(self, record, seed):
        cloud = random_cloud(64, seed)
        augmented = replay_record(cloud, record)

        assert_allclose(inverse_aug_points(augmented.positions, record), cloud.positions, rtol=0, atol=1e-9)

    def test_reverse_order_matches_matrix_composition(self):
        rng = np.random.default_rng(77)
        for _ in range(200):
            ops = []
            while len(ops) < 2:
                ops.extend(random_record(rng).ops)
            first, second = ops[:2]
            forward = op_matrix(second) @ op_matrix(first)
            points = rng.uniform(-60, 60, size=(50, 3))
            homogeneous = np.column_stack([points, np.ones(len(points))])
            augmented = (homogeneous @ forward.T)[:, :3]

            expected = (np.column_stack([augmented, np.ones(len(points))]) @ np.linalg.inv(forward).T)[:, :3]
            restored = inverse_aug_points(augmented, AugRecord(ops=[first, second]))

            assert_allclose(restored, expected, rtol=0, atol=1e-9)
            assert_allclose(restored, points, rtol=0, atol=1e-9)

    def test_entries_round_trip(self):
        record = AugRecord(ops=[RotateZ(theta=0.25), WorldScale(s=1.01), Translate(t=(0.1, -0.2, 0.3)),
                                FlipY(applied=False)])
        entries = record.to_entries()

        assert entries[0] == {"op": "rotate_z", "params": {"theta": 0.25}}
        assert AugRecord.from_entries(entries) == record

    def test_entry_without_op_is_rejected(self):
        with pytest.raises(ValueError, match="without 'op'"):
            AugRecord.from_entries([{"params": {"theta": 1.0}}])


@pytest.mark.unit
class TestPipeline:
    def test_disabled_pipeline_is_identity(self):
        cloud = random_cloud(200)
        out, record = apply_pipeline(cloud, AugConfig.disabled(), seed=4)

        assert len(record) == 0
        assert_array_equal(out.positions, cloud.positions)
        assert_array_equal(out.intensity, cloud.intensity)

    def test_same_seed_is_bit_identical(self):
        cloud = random_cloud(500)
        a, record_a = apply_pipeline(cloud, AugConfig(), seed=17)
        b, record_b = apply_pipeline(cloud, AugConfig(), seed=17)

        assert record_a == record_b
        assert_array_equal(a.positions, b.positions)
        assert_array_equal(a.source_index, b.source_index)

    def test_records_ops_in_fixed_order(self):
        _, record = apply_pipeline(random_cloud(10), AugConfig(), seed=1)

        assert [op.op for op in record.ops] == ["rotate_z", "world_scale", "translate", "flip_y"]

    def test_rotation_only_samples_uniform_angle(self):
        max_rotation = math.radians(45)
        cfg = AugConfig.rotation_only(max_rotation)
        cloud = random_cloud(5)
        thetas = []
        for seed in range(500):
            _, record = apply_pipeline(cloud, cfg, seed)
            assert len(record) == 1 and isinstance(record.ops[0], RotateZ)
            thetas.append(record.ops[0].theta)

        assert max(abs(t) for t in thetas) <= max_rotation
        assert kstest(thetas, "uniform", args=(-max_rotation, 2 * max_rotation)).pvalue > 1e-3

    def test_augmented_points_trace_back_to_raw_points(self):
        cloud = random_cloud(400)
        out, record = apply_pipeline(cloud, AugConfig(), seed=9)

        assert len(out) < len(cloud)
        assert_allclose(inverse_aug_points(out.positions, record), cloud.positions[out.source_index], atol=1e-9)

    def test_bad_scale_range_is_rejected(self):
        with pytest.raises(ValidationError, match="scale_range"):
            AugConfig(scale_range=(1.1, 0.9))


@pytest.mark.unit
class TestFrustumDropout:
    def test_zero_probability_keeps_everything(self):
        cloud = random_cloud(300)
        params = FrustumDropout(theta_range=(-math.pi, math.pi), phi_range=(-math.pi / 2, math.pi / 2), drop_p=0)

        assert len(frustum_dropout(cloud, params, np.random.default_rng(0))) == 300

    def test_full_sphere_drops_everything(self):
        params = FrustumDropout(theta_range=(-math.pi, math.pi), phi_range=(-math.pi / 2, math.pi / 2), drop_p=1)

        assert len(frustum_dropout(random_cloud(300), params, np.random.default_rng(0))) == 0

    def test_azimuth_quadrant_matches_per_point_angle(self):
        cloud = random_cloud(2000, seed=3)
        params = FrustumDropout(theta_range=(0, math.pi / 2), phi_range=(-math.pi / 2, math.pi / 2), drop_p=1)
        out = frustum_dropout(cloud, params, np.random.default_rng(0))

        expected = [i for i, (x, y, _) in enumerate(cloud.positions) if not 0 <= math.atan2(y, x) <= math.pi / 2]
        assert_array_equal(out.source_index, expected)

    def test_interval_wrapping_past_pi(self):
        cloud = PointCloud.from_arrays([[-1, 0.01, 0], [-1, -0.01, 0], [1, 0, 0]])
        params = FrustumDropout(theta_range=(3.0, 3.3), phi_range=(-1, 1), drop_p=1)
        out = frustum_dropout(cloud, params, np.random.default_rng(0))

        assert_array_equal(out.source_index, [2])

    def test_inclination_limits(self):
        azimuth, inclination = azimuth_inclination(np.array([[1.0, 1.0, math.sqrt(2)]]))

        assert_allclose(azimuth, [math.pi / 4])
        assert_allclose(inclination, [math.pi / 4])


@pytest.mark.unit
class TestRandomDropPoints:
    def test_keep_all(self):
        cloud = random_cloud(100)

        assert_array_equal(random_drop_points(cloud, 1.0, np.random.default_rng(0)).positions, cloud.positions)

    def test_keep_none(self):
        assert len(random_drop_points(random_cloud(100), 0.0, np.random.default_rng(0))) == 0

    def test_half_kept_within_binomial_bound(self):
        kept = random_drop_points(random_cloud(100_000), 0.5, np.random.default_rng(1))

        assert abs(len(kept) / 100_000 - 0.5) <= 0.01

    def test_probability_outside_unit_interval_raises(self):
        with pytest.raises(ValueError, match="keep_p"):
            random_drop_points(random_cloud(3), 1.5, np.random.default_rng(0))


def frames(count: int, points_per_frame: int = 3):
    return [
        PointCloud.from_arrays(np.full((points_per_frame, 3), float(f)), frame_id=f)
        for f in range(count)
    ]


@pytest.mark.unit
class TestDropFrames:
    def test_inference_uses_every_frame(self):
        merged = drop_frames(frames(5), 1.0, np.random.default_rng(0), training=False)

        assert len(merged) == 15
        assert_array_equal(np.unique(merged.frame), np.arange(5))

    def test_certain_drop_keeps_current_frame(self):
        merged = drop_frames(frames(5), 1.0, np.random.default_rng(0), training=True)

        assert_array_equal(np.unique(merged.frame), [0])

    def test_past_frames_survive_half_the_time(self):
        rng = np.random.default_rng(12)
        survived = np.zeros(5)
        trials = 10_000
        stack = frames(5)
        for _ in range(trials):
            survived[np.unique(drop_frames(stack, 0.5, rng, training=True).frame)] += 1

        assert survived[0] == trials
        assert_allclose(survived[1:] / trials, 0.5, atol=0.02)

    def test_empty_frame_list_raises(self):
        with pytest.raises(ValueError, match="at least one frame"):
            drop_frames([], 0.5, np.random.default_rng(0), training=True)

    def test_missing_current_frame_raises(self):
        with pytest.raises(ValueError, match="frame_id 0"):
            drop_frames(frames(3)[1:], 0.5, np.random.default_rng(0), training=True)
