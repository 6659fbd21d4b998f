"""Pose and point container contracts.

Covers: orthonormality validation and repair, composition against a
sequential-application oracle, inversion round trips, rigidity, and the
immutability of the containers.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lidarseq.errors import InvalidInputError
from lidarseq.geometry import (
    LabeledCloud,
    ORTHONORMAL_STRICT_TOL,
    Pose,
    PointCloud,
    compose,
    invert,
    relative_pose,
    transform_points,
)

from helpers import random_cloud, random_pose, random_rotation


def sequential_oracle(outer: Pose, inner: Pose, xyz: np.ndarray) -> np.ndarray:
    """Apply inner then outer, one point at a time, with plain float math."""
    out = np.empty_like(xyz)
    for i, p in enumerate(xyz):
        q = inner.rotation @ p + inner.translation
        out[i] = outer.rotation @ q + outer.translation
    return out


class TestPoseConstruction:
    def test_identity_round_trip(self):
        pose = Pose.identity()
        pts = np.array([[1.0, -2.0, 3.0], [0.0, 0.0, 0.0]])
        assert np.array_equal(pose.apply(pts), pts)

    def test_quarter_turn_yaw(self):
        # 90 degree yaw sends +x to +y; translation applied afterwards.
        rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        pose = Pose.from_rotation_translation(rot, [1.0, 2.0, 3.0])
        moved = pose.apply(np.array([[1.0, 0.0, 0.0]]))
        assert np.allclose(moved, [[1.0, 3.0, 3.0]], atol=1e-15)

    def test_rejects_wrong_shape(self):
        with pytest.raises(InvalidInputError):
            Pose(np.eye(4))

    def test_rejects_non_orthonormal(self):
        mat = np.hstack([np.eye(3) * 1.01, np.zeros((3, 1))])
        with pytest.raises(InvalidInputError):
            Pose(mat)

    def test_rejects_reflection(self):
        rot = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InvalidInputError):
            Pose.from_rotation_translation(rot, np.zeros(3))

    def test_rejects_nan(self):
        mat = np.hstack([np.eye(3), np.zeros((3, 1))])
        mat[0, 3] = np.nan
        with pytest.raises(InvalidInputError):
            Pose(mat)

    def test_print_rounded_rotation_is_repaired(self):
        # Rounding to 7 decimals mimics what a pose file does to a rotation.
        rng = np.random.default_rng(7)
        for _ in range(25):
            rot = np.round(random_rotation(rng), 7)
            pose = Pose.from_rotation_translation(rot, np.zeros(3))
            gram = pose.rotation.T @ pose.rotation
            assert np.abs(gram - np.eye(3)).max() < ORTHONORMAL_STRICT_TOL

    def test_clean_rotation_kept_verbatim(self):
        rng = np.random.default_rng(11)
        rot = random_rotation(rng)
        pose = Pose.from_rotation_translation(rot, np.zeros(3))
        assert np.array_equal(pose.rotation, rot)

    def test_matrix_is_frozen(self):
        pose = Pose.identity()
        with pytest.raises(ValueError):
            pose.matrix[0, 0] = 2.0


class TestComposeInvert:
    def test_compose_matches_sequential_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            outer, inner = random_pose(rng), random_pose(rng)
            pts = rng.normal(size=(100, 3)) * 40
            expected = sequential_oracle(outer, inner, pts)
            got = compose(outer, inner).apply(pts)
            assert np.abs(got - expected).max() < 1e-9

    def test_invert_then_apply_is_identity(self):
        rng = np.random.default_rng(4)
        pose = random_pose(rng)
        both = compose(invert(pose), pose)
        assert np.abs(both.rotation - np.eye(3)).max() < 1e-12
        assert np.abs(both.translation).max() < 1e-12

    def test_relative_pose_moves_between_frames(self):
        rng = np.random.default_rng(5)
        world_a, world_b = random_pose(rng), random_pose(rng)
        p_in_b = rng.normal(size=(50, 3))
        p_world = world_b.apply(p_in_b)
        p_in_a = invert(world_a).apply(p_world)
        got = relative_pose(world_a, world_b).apply(p_in_b)
        assert np.abs(got - p_in_a).max() < 1e-9

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_rigidity_preserves_pairwise_distances(self, seed):
        rng = np.random.default_rng(seed)
        pose = random_pose(rng)
        pts = rng.normal(size=(12, 3)) * 25
        moved = pose.apply(pts)
        before = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        after = np.linalg.norm(moved[:, None] - moved[None, :], axis=-1)
        assert np.abs(before - after).max() < 1e-9


class TestPointContainers:
    def test_cloud_shape_and_count(self):
        cloud = PointCloud(np.zeros((4, 3)), np.full(4, 0.5))
        assert cloud.count == 4
        assert PointCloud.empty().count == 0

    def test_cloud_rejects_nan_coordinates(self):
        xyz = np.zeros((2, 3))
        xyz[1, 2] = np.inf
        with pytest.raises(InvalidInputError):
            PointCloud(xyz, np.zeros(2))

    def test_cloud_rejects_out_of_range_intensity(self):
        with pytest.raises(InvalidInputError):
            PointCloud(np.zeros((1, 3)), np.array([1.5]))

    def test_cloud_rejects_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            PointCloud(np.zeros((3, 3)), np.zeros(2))

    def test_labeled_rejects_length_mismatch(self):
        cloud = PointCloud(np.zeros((3, 3)), np.zeros(3))
        with pytest.raises(InvalidInputError):
            LabeledCloud(cloud, np.zeros(2, np.int64), np.zeros(3, np.int64))

    def test_transform_keeps_intensity_and_labels(self):
        rng = np.random.default_rng(9)
        cloud = random_cloud(rng, 30)
        pose = random_pose(rng)
        moved = transform_points(pose, cloud)
        assert np.array_equal(moved.intensity, cloud.intensity)
        assert moved.count == cloud.count

    def test_arrays_are_frozen(self):
        cloud = PointCloud(np.zeros((2, 3)), np.zeros(2))
        with pytest.raises(ValueError):
            cloud.xyz[0, 0] = 1.0
