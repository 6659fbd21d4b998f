"""Masked feature-distillation arithmetic over sparse voxel maps.

A student map and a teacher map generally occupy different voxel sets, so the
loss is computed only on their intersection: select the rows whose coordinates
appear in both maps, take per-voxel feature differences, and average the
Euclidean norms. Pure forward arithmetic, no gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .voxels import VoxelFeatureMap

__all__ = [
    "SharedVoxelSelection",
    "shared_selection",
    "distill_loss",
    "total_loss",
]


@dataclass(frozen=True)
class SharedVoxelSelection:
    """Rows of two voxel maps that sit on the same coordinates.

    coords ascend in the canonical voxel order; student_index and
    teacher_index are parallel row indices into the respective maps.
    """

    coords: np.ndarray
    student_index: np.ndarray
    teacher_index: np.ndarray

    def __post_init__(self):
        coords = np.ascontiguousarray(np.asarray(self.coords, dtype=np.int64))
        s_idx = np.ascontiguousarray(np.asarray(self.student_index, dtype=np.int64))
        t_idx = np.ascontiguousarray(np.asarray(self.teacher_index, dtype=np.int64))
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise InvalidInputError("selection coords must have shape (K, 3)")
        if s_idx.shape != (coords.shape[0],) or t_idx.shape != (coords.shape[0],):
            raise InvalidInputError("selection index arrays must parallel coords")
        for arr in (coords, s_idx, t_idx):
            arr.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "student_index", s_idx)
        object.__setattr__(self, "teacher_index", t_idx)

    @property
    def count(self) -> int:
        return self.coords.shape[0]


def _check_same_grid(student: VoxelFeatureMap, teacher: VoxelFeatureMap) -> None:
    if student.voxel_size != teacher.voxel_size:
        raise ConfigurationError(
            f"voxel size mismatch: {student.voxel_size} vs {teacher.voxel_size}"
        )
    if not np.array_equal(student.origin, teacher.origin):
        raise ConfigurationError("voxel grid origins differ")
    if student.scale_level != teacher.scale_level:
        raise ConfigurationError(
            f"scale level mismatch: {student.scale_level} vs {teacher.scale_level}"
        )


def shared_selection(
    student: VoxelFeatureMap, teacher: VoxelFeatureMap
) -> SharedVoxelSelection:
    """Intersect the coordinate sets of two maps on the same grid.

    Returns row indices in ascending coordinate order. Maps with different
    voxel size, origin, or scale level do not share a grid and are rejected.
    """
    _check_same_grid(student, teacher)
    rows_s: list[int] = []
    rows_t: list[int] = []
    for i, coord in enumerate(map(tuple, student.coords.tolist())):
        j = teacher.lookup(coord)
        if j is not None:
            rows_s.append(i)
            rows_t.append(j)
    if rows_s:
        coords = student.coords[np.array(rows_s)]
    else:
        coords = np.zeros((0, 3), dtype=np.int64)
    return SharedVoxelSelection(
        coords,
        np.array(rows_s, dtype=np.int64),
        np.array(rows_t, dtype=np.int64),
    )


def distill_loss(
    student: VoxelFeatureMap,
    teacher: VoxelFeatureMap,
    selection: SharedVoxelSelection | None = None,
    mode: str = "mean",
) -> float:
    """L2 feature-matching loss over voxels present in both maps.

    mode "mean" averages the per-voxel Euclidean norm of the feature
    difference; "frobenius" instead takes the matrix norm of the stacked
    difference. Either way an empty intersection yields 0.0: heavily
    diverged aggregations are degenerate, not an error.
    """
    if student.width != teacher.width:
        raise ConfigurationError(
            f"feature width mismatch: {student.width} vs {teacher.width}"
        )
    if mode not in ("mean", "frobenius"):
        raise ConfigurationError(f"unknown distillation mode {mode!r}")
    if selection is None:
        selection = shared_selection(student, teacher)
    if selection.count == 0:
        return 0.0
    diff = student.features[selection.student_index] - teacher.features[selection.teacher_index]
    if mode == "frobenius":
        return float(np.linalg.norm(diff))
    return float(np.mean(np.linalg.norm(diff, axis=1)))


def total_loss(
    lidar: float,
    kd: float,
    fusion: float,
    sup2d: float,
    sup3d: float,
    alpha: float = 1.0,
    beta: float = 1.0,
    gamma: float = 1.0,
) -> float:
    """Combined training objective: segmentation plus weighted auxiliary terms.

    The image-branch 2D and 3D supervision terms share one coefficient.
    """
    return float(lidar + alpha * kd + beta * fusion + gamma * (sup2d + sup3d))
