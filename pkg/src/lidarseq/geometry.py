"""Rigid-body poses and point-cloud containers used by every pipeline stage.

All geometry runs in double precision. Poses are stored exactly as KITTI
writes them: a row-major 3x4 block ``[R | t]`` mapping sensor coordinates
into the parent frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

# Construction is validated a bit looser than the internal invariant because
# pose files carry print rounding. Matrices that already satisfy the strict
# bound are kept verbatim; polar projection would otherwise move every entry
# by ~1 ulp and break byte-exact file round trips.
ORTHONORMAL_CONSTRUCT_TOL = 1e-6
ORTHONORMAL_STRICT_TOL = 1e-9


def _orthonormality_error(rot: np.ndarray) -> float:
    return float(np.abs(rot.T @ rot - np.eye(3)).max())


@dataclass(frozen=True)
class Pose:
    """Immutable rigid transform, stored as the row-major 3x4 ``[R | t]``."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=np.float64)
        if mat.shape != (3, 4):
            raise InvalidInputError(f"pose matrix must be 3x4, got {mat.shape}")
        if not np.isfinite(mat).all():
            raise InvalidInputError("pose matrix contains non-finite entries")
        rot = mat[:, :3]
        err = _orthonormality_error(rot)
        if err > ORTHONORMAL_CONSTRUCT_TOL:
            raise InvalidInputError(
                f"rotation block is not orthonormal (|R^T R - I| = {err:.3e})"
            )
        if np.linalg.det(rot) < 0.0:
            raise InvalidInputError("rotation block has negative determinant")
        if err > ORTHONORMAL_STRICT_TOL:
            # Polar projection: nearest orthonormal matrix in Frobenius norm.
            u, _, vt = np.linalg.svd(rot)
            mat = np.hstack([u @ vt, mat[:, 3:4]])
        mat.flags.writeable = False
        object.__setattr__(self, "matrix", mat)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:, 3]

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.hstack([np.eye(3), np.zeros((3, 1))]))

    @classmethod
    def from_rotation_translation(cls, rotation, translation) -> "Pose":
        rotation = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        translation = np.asarray(translation, dtype=np.float64).reshape(3, 1)
        return cls(np.hstack([rotation, translation]))

    def apply(self, xyz: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) coordinate array into the parent frame.

        Written as per-column arithmetic rather than a matmul so each point
        gets bit-identical results no matter how the array is batched or
        masked; BLAS kernels pick different summation orders per shape.
        """
        xyz = np.asarray(xyz, dtype=np.float64)
        rot, trans = self.rotation, self.translation
        x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
        out = np.empty_like(xyz)
        for axis in range(3):
            out[:, axis] = rot[axis, 0] * x + rot[axis, 1] * y + rot[axis, 2] * z + trans[axis]
        return out


def compose(outer: Pose, inner: Pose) -> Pose:
    """Pose mapping x -> outer(inner(x))."""
    rot = outer.rotation @ inner.rotation
    trans = outer.rotation @ inner.translation + outer.translation
    return Pose.from_rotation_translation(rot, trans)


def invert(pose: Pose) -> Pose:
    rot = pose.rotation.T
    return Pose.from_rotation_translation(rot, -rot @ pose.translation)


def relative_pose(target: Pose, source: Pose) -> Pose:
    """Transform from ``source``'s frame into ``target``'s frame.

    Both arguments must be poses into a common parent (typically world), so
    the result is ``target^-1 . source``.
    """
    return compose(invert(target), source)


@dataclass(frozen=True)
class PointCloud:
    """Immutable point set: (N, 3) coordinates plus per-point intensity."""

    xyz: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        xyz = np.asarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        intensity = np.asarray(self.intensity, dtype=np.float64).reshape(-1)
        if intensity.shape[0] != xyz.shape[0]:
            raise InvalidInputError(
                f"intensity length {intensity.shape[0]} != point count {xyz.shape[0]}"
            )
        if not np.isfinite(xyz).all():
            raise InvalidInputError("point coordinates contain non-finite values")
        if intensity.size and (
            not np.isfinite(intensity).all()
            or intensity.min() < 0.0
            or intensity.max() > 1.0
        ):
            raise InvalidInputError("intensity values must lie in [0, 1]")
        xyz.flags.writeable = False
        intensity.flags.writeable = False
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "intensity", intensity)

    @property
    def count(self) -> int:
        return self.xyz.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0))


@dataclass(frozen=True)
class LabeledCloud:
    """Point cloud plus per-point semantic class and instance id (0 = none)."""

    cloud: PointCloud
    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        semantic = np.asarray(self.semantic, dtype=np.int64).reshape(-1)
        instance = np.asarray(self.instance, dtype=np.int64).reshape(-1)
        if semantic.shape[0] != self.cloud.count or instance.shape[0] != self.cloud.count:
            raise InvalidInputError(
                f"label lengths ({semantic.shape[0]}, {instance.shape[0]}) "
                f"!= point count {self.cloud.count}"
            )
        semantic.flags.writeable = False
        instance.flags.writeable = False
        object.__setattr__(self, "semantic", semantic)
        object.__setattr__(self, "instance", instance)

    @property
    def count(self) -> int:
        return self.cloud.count

    @classmethod
    def empty(cls) -> "LabeledCloud":
        return cls(PointCloud.empty(), np.zeros(0, np.int64), np.zeros(0, np.int64))


def transform_points(pose: Pose, cloud: PointCloud) -> PointCloud:
    """Rigidly move a cloud into the pose's parent frame. Intensity is kept."""
    return PointCloud(pose.apply(cloud.xyz), cloud.intensity)


def transform_labeled(pose: Pose, labeled: LabeledCloud) -> LabeledCloud:
    return LabeledCloud(
        transform_points(pose, labeled.cloud), labeled.semantic, labeled.instance
    )
