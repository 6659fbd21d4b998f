"""Temporal aggregation of LiDAR sequences with per-class-group steps.

Aggregation always targets a reference frame t: earlier sweeps are moved
into frame t's sensor coordinates through the pose chain and concatenated
after the unfiltered present sweep. A group division assigns every semantic
class a sampling step; a group with step s contributes the frames
``t - i*s`` for i = 1..floor(window / s), and the infinite step contributes
nothing (the class is covered by the present sweep alone).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigurationError, InvalidInputError
from .geometry import LabeledCloud, PointCloud, relative_pose
from .sequence import SequenceFrame

INFINITE_STEP = math.inf

DEFAULT_WINDOW = 16


def _check_step(step) -> float:
    if step == INFINITE_STEP:
        return INFINITE_STEP
    if isinstance(step, bool) or not float(step).is_integer() or step < 1:
        raise ConfigurationError(f"step must be a positive integer or infinite, got {step!r}")
    return float(int(step))


@dataclass(frozen=True)
class DistanceSplit:
    """Optional near/far refinement of one group.

    Points closer than ``threshold_m`` (range measured in their own source
    sweep) are sampled with ``near_step_multiplier`` times the group step;
    the rest keep the base step.
    """

    threshold_m: float
    near_step_multiplier: int = 2

    def __post_init__(self):
        if not (self.threshold_m > 0):
            raise ConfigurationError("distance threshold must be positive")
        if self.near_step_multiplier < 1 or int(self.near_step_multiplier) != self.near_step_multiplier:
            raise ConfigurationError("near_step_multiplier must be a positive integer")


@dataclass(frozen=True)
class ClassGroup:
    classes: frozenset[int]
    step: float
    distance_split: DistanceSplit | None = None

    def __post_init__(self):
        object.__setattr__(self, "classes", frozenset(int(c) for c in self.classes))
        if not self.classes:
            raise ConfigurationError("a class group cannot be empty")
        object.__setattr__(self, "step", _check_step(self.step))
        if self.distance_split is not None and self.step == INFINITE_STEP:
            raise ConfigurationError("a distance split on an infinite step has no effect")

    def near_step(self) -> float:
        if self.distance_split is None:
            return self.step
        return self.step * self.distance_split.near_step_multiplier


@dataclass(frozen=True)
class GroupDivision:
    """Partition of semantic classes into groups with temporal steps.

    Classes not listed anywhere fall into an implicit default group with
    ``default_step`` (infinite unless overridden); set ``default_step=None``
    to make unmapped classes a configuration error instead.
    """

    groups: tuple[ClassGroup, ...]
    window: int = DEFAULT_WINDOW
    default_step: float | None = INFINITE_STEP
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        if not self.groups:
            raise ConfigurationError("a division needs at least one group")
        if self.window < 1 or int(self.window) != self.window:
            raise ConfigurationError(f"window must be a positive integer, got {self.window!r}")
        if self.default_step is not None:
            object.__setattr__(self, "default_step", _check_step(self.default_step))
        seen: dict[int, int] = {}
        for gi, group in enumerate(self.groups):
            for cid in group.classes:
                if cid in seen:
                    raise ConfigurationError(
                        f"class {cid} appears in groups {seen[cid]} and {gi}"
                    )
                seen[cid] = gi

    def mapped_classes(self) -> frozenset[int]:
        out: set[int] = set()
        for group in self.groups:
            out |= group.classes
        return frozenset(out)

    def with_window(self, window: int) -> "GroupDivision":
        return dataclasses.replace(self, window=int(window))


@dataclass(frozen=True)
class GroupMask:
    """Per-frame boolean masks, one per group.

    When the division keeps a default group, its mask is appended last so
    the masks always partition the frame's points.
    """

    masks: tuple[np.ndarray, ...]
    steps: tuple[float, ...]
    has_default: bool


@dataclass(frozen=True)
class AggregatedCloud:
    """Concatenated multi-sweep cloud in the reference frame's coordinates."""

    labeled: LabeledCloud
    source_frame: np.ndarray  # (N,) original frame index per point
    source_step: np.ndarray   # (N,) step that sampled the point; 0 = present
    reference_frame: int

    def __post_init__(self):
        source_frame = np.asarray(self.source_frame, dtype=np.int64).reshape(-1)
        source_step = np.asarray(self.source_step, dtype=np.int64).reshape(-1)
        if source_frame.shape[0] != self.labeled.count or source_step.shape[0] != self.labeled.count:
            raise InvalidInputError("source tag lengths do not match the point count")
        source_frame.flags.writeable = False
        source_step.flags.writeable = False
        object.__setattr__(self, "source_frame", source_frame)
        object.__setattr__(self, "source_step", source_step)

    @property
    def count(self) -> int:
        return self.labeled.count


def make_group_masks(frame: SequenceFrame, division: GroupDivision) -> GroupMask:
    """Class-membership masks over one frame's (possibly predicted) labels."""
    semantic = frame.labeled.semantic
    masks = []
    steps = []
    covered = np.zeros(semantic.shape[0], dtype=bool)
    for group in division.groups:
        mask = np.isin(semantic, np.fromiter(sorted(group.classes), np.int64, len(group.classes)))
        masks.append(mask)
        steps.append(group.step)
        covered |= mask
    leftover = ~covered
    if division.default_step is None:
        if leftover.any():
            missing = sorted(np.unique(semantic[leftover]).tolist())
            raise ConfigurationError(
                f"classes {missing} are not assigned to any group and the "
                f"division has no default group"
            )
        return GroupMask(tuple(masks), tuple(steps), has_default=False)
    masks.append(leftover)
    steps.append(division.default_step)
    return GroupMask(tuple(masks), tuple(steps), has_default=True)


# ---------------------------------------------------------------------------
# assembly helpers


class _Assembler:
    """Collects (cloud slice, tags) parts and concatenates them once."""

    def __init__(self, reference_frame: int):
        self.reference = reference_frame
        self.xyz: list[np.ndarray] = []
        self.intensity: list[np.ndarray] = []
        self.semantic: list[np.ndarray] = []
        self.instance: list[np.ndarray] = []
        self.source_frame: list[np.ndarray] = []
        self.source_step: list[np.ndarray] = []

    def add(self, xyz, intensity, semantic, instance, frame_index: int, step) -> None:
        n = xyz.shape[0]
        if n == 0:
            return
        self.xyz.append(xyz)
        self.intensity.append(intensity)
        self.semantic.append(semantic)
        self.instance.append(instance)
        self.source_frame.append(np.full(n, frame_index, dtype=np.int64))
        step_arr = step if isinstance(step, np.ndarray) else np.full(n, step, dtype=np.int64)
        self.source_step.append(step_arr)

    def add_whole(self, frame: SequenceFrame, xyz, step: int) -> None:
        labeled = frame.labeled
        self.add(xyz, labeled.cloud.intensity, labeled.semantic, labeled.instance,
                 frame.index, step)

    def build(self) -> AggregatedCloud:
        if not self.xyz:
            return AggregatedCloud(
                LabeledCloud.empty(),
                np.zeros(0, np.int64),
                np.zeros(0, np.int64),
                self.reference,
            )
        cloud = PointCloud(np.vstack(self.xyz), np.concatenate(self.intensity))
        labeled = LabeledCloud(
            cloud, np.concatenate(self.semantic), np.concatenate(self.instance)
        )
        return AggregatedCloud(
            labeled,
            np.concatenate(self.source_frame),
            np.concatenate(self.source_step),
            self.reference,
        )


def _index_frames(frames: Sequence[SequenceFrame], t: int) -> dict[int, SequenceFrame]:
    if not frames:
        raise InvalidInputError("no frames given")
    by_index: dict[int, SequenceFrame] = {}
    for frame in frames:
        if frame.index in by_index:
            raise InvalidInputError(f"duplicate frame index {frame.index}")
        by_index[frame.index] = frame
    if t not in by_index:
        raise InvalidInputError(f"reference frame {t} is not among the given frames")
    return by_index


def _source_frame(by_index: Mapping[int, SequenceFrame], t: int, offset: int) -> SequenceFrame | None:
    """Frame at t - offset; None when before the start of the data."""
    target = t - offset
    if target < min(by_index):
        return None
    if target not in by_index:
        raise InvalidInputError(
            f"frame {target} is required for aggregation at t={t} but missing"
        )
    return by_index[target]


def step_offsets(step: float, window: int) -> list[int]:
    """Window offsets sampled by a step: i*step for i = 1..floor(window/step)."""
    if step == INFINITE_STEP:
        return []
    s = int(step)
    return [i * s for i in range(1, int(window) // s + 1)]


def aggregate_direct(frames: Sequence[SequenceFrame], t: int, window: int) -> AggregatedCloud:
    """Plain dense aggregation: every sweep in [t - window, t], no filtering."""
    if window < 0 or int(window) != window:
        raise InvalidInputError(f"window must be a non-negative integer, got {window!r}")
    by_index = _index_frames(frames, t)
    out = _Assembler(t)
    present = by_index[t]
    out.add_whole(present, present.labeled.cloud.xyz, 0)
    for offset in range(1, int(window) + 1):
        frame = _source_frame(by_index, t, offset)
        if frame is None:
            continue
        moved = relative_pose(present.pose, frame.pose).apply(frame.labeled.cloud.xyz)
        out.add_whole(frame, moved, 1)
    return out.build()


def aggregate_stepped(
    frames: Sequence[SequenceFrame], t: int, window: int, step: int
) -> AggregatedCloud:
    """Uniform stepped aggregation of all classes: frames t - i*step."""
    step = _check_step(step)
    if window < 0 or int(window) != window:
        raise InvalidInputError(f"window must be a non-negative integer, got {window!r}")
    by_index = _index_frames(frames, t)
    present = by_index[t]
    out = _Assembler(t)
    out.add_whole(present, present.labeled.cloud.xyz, 0)
    for offset in step_offsets(step, int(window)):
        frame = _source_frame(by_index, t, offset)
        if frame is None:
            continue
        moved = relative_pose(present.pose, frame.pose).apply(frame.labeled.cloud.xyz)
        out.add_whole(frame, moved, int(step))
    return out.build()


def _add_group_parts(
    out: _Assembler,
    by_index: Mapping[int, SequenceFrame],
    t: int,
    group_classes: frozenset[int],
    step: float,
    split: DistanceSplit | None,
    window: int,
) -> None:
    if step == INFINITE_STEP:
        return
    present = by_index[t]
    class_arr = np.fromiter(sorted(group_classes), np.int64, len(group_classes))
    near_step = int(step * split.near_step_multiplier) if split is not None else None
    for offset in step_offsets(step, window):
        frame = _source_frame(by_index, t, offset)
        if frame is None:
            continue
        pick = np.isin(frame.labeled.semantic, class_arr)
        steps = np.full(frame.count, int(step), dtype=np.int64)
        if split is not None:
            # Range in the sweep's own sensor frame, before any pose is applied.
            near = np.linalg.norm(frame.labeled.cloud.xyz, axis=1) < split.threshold_m
            if offset % near_step == 0:
                steps[near] = near_step
            else:
                pick = pick & ~near
        if not pick.any():
            continue
        moved = relative_pose(present.pose, frame.pose).apply(frame.labeled.cloud.xyz[pick])
        labeled = frame.labeled
        out.add(moved, labeled.cloud.intensity[pick], labeled.semantic[pick],
                labeled.instance[pick], frame.index, steps[pick])


def aggregate_group(
    frames: Sequence[SequenceFrame], t: int, division: GroupDivision, group_index: int
) -> AggregatedCloud:
    """Temporal points of one group only (the present sweep is not included)."""
    if not (0 <= group_index < len(division.groups)):
        raise ConfigurationError(
            f"group index {group_index} outside 0..{len(division.groups) - 1}"
        )
    by_index = _index_frames(frames, t)
    group = division.groups[group_index]
    out = _Assembler(t)
    _add_group_parts(
        out, by_index, t, group.classes, group.step, group.distance_split, division.window
    )
    return out.build()


def aggregate_fsa(
    frames: Sequence[SequenceFrame], t: int, division: GroupDivision
) -> AggregatedCloud:
    """Full flexible-step aggregation: present sweep plus every group's points.

    Masks are evaluated on each source sweep's own labels and applied before
    the pose transform, so only surviving points are ever moved.
    """
    by_index = _index_frames(frames, t)
    present = by_index[t]
    # Checks for unmapped classes across every sweep that can contribute.
    if division.default_step is None:
        for frame in by_index.values():
            if frame.index <= t and frame.index >= t - division.window:
                make_group_masks(frame, division)
    out = _Assembler(t)
    out.add_whole(present, present.labeled.cloud.xyz, 0)
    for group in division.groups:
        _add_group_parts(
            out, by_index, t, group.classes, group.step, group.distance_split, division.window
        )
    if division.default_step is not None and division.default_step != INFINITE_STEP:
        mapped = division.mapped_classes()
        default_classes = _leftover_classes(by_index, t, division.window, mapped)
        if default_classes:
            _add_group_parts(
                out, by_index, t, default_classes, division.default_step, None, division.window
            )
    return out.build()


def _leftover_classes(
    by_index: Mapping[int, SequenceFrame], t: int, window: int, mapped: frozenset[int]
) -> frozenset[int]:
    seen: set[int] = set()
    for idx, frame in by_index.items():
        if t - window <= idx <= t:
            seen.update(np.unique(frame.labeled.semantic).tolist())
    return frozenset(seen - set(mapped))


# ---------------------------------------------------------------------------
# shipped divisions

SEMANTIC_KITTI_CLASS_NAMES: dict[int, str] = {
    1: "car", 2: "bicycle", 3: "motorcycle", 4: "truck", 5: "other-vehicle",
    6: "person", 7: "bicyclist", 8: "motorcyclist", 9: "road", 10: "parking",
    11: "sidewalk", 12: "other-ground", 13: "building", 14: "fence",
    15: "vegetation", 16: "trunk", 17: "terrain", 18: "pole", 19: "traffic-sign",
}

# Editable single-scan baseline scores used to band classes into groups.
# These are rough validation-set numbers; swap in your own model's scores
# (or load a custom division file) to re-band.
DEFAULT_CLASS_SCORES: dict[int, float] = {
    1: 96.0,   # car
    2: 45.0,   # bicycle
    3: 82.0,   # motorcycle
    4: 70.0,   # truck
    5: 55.0,   # other-vehicle
    6: 72.0,   # person
    7: 75.0,   # bicyclist
    8: 30.0,   # motorcyclist
    9: 94.0,   # road
    10: 65.0,  # parking
    11: 82.5,  # sidewalk
    12: 28.0,  # other-ground
    13: 92.0,  # building
    14: 68.0,  # fence
    15: 90.0,  # vegetation
    16: 69.0,  # trunk
    17: 76.0,  # terrain
    18: 64.0,  # pole
    19: 66.0,  # traffic-sign
}

# Ground-like spread-out classes that dominate point counts; used when a
# division demotes large classes to a coarser step.
LARGE_SPREAD_CLASSES = frozenset({10, 11, 12, 17})


def _banded_groups(scores: Mapping[int, float]) -> tuple[set[int], set[int], set[int]]:
    easy = {c for c, v in scores.items() if v >= 90.0}
    mid = {c for c, v in scores.items() if 80.0 <= v < 90.0}
    hard = set(scores) - easy - mid
    return easy, mid, hard


def _division1(scores, window):
    easy, mid, hard = _banded_groups(scores)
    return GroupDivision(
        (
            ClassGroup(frozenset(easy), INFINITE_STEP),
            ClassGroup(frozenset(mid), 4),
            ClassGroup(frozenset(hard), 2),
        ),
        window=window,
        name="division1",
    )


def _division2(scores, window):
    ranked = sorted(scores, key=lambda c: (-scores[c], c))
    return GroupDivision(
        (
            ClassGroup(frozenset(ranked[:6]), INFINITE_STEP),
            ClassGroup(frozenset(ranked[6:12]), 4),
            ClassGroup(frozenset(ranked[12:]), 2),
        ),
        window=window,
        name="division2",
    )


def _division3(scores, window):
    easy, mid, hard = _banded_groups(scores)
    promote = hard & LARGE_SPREAD_CLASSES
    return GroupDivision(
        (
            ClassGroup(frozenset(easy), INFINITE_STEP),
            ClassGroup(frozenset(mid | promote), 4),
            ClassGroup(frozenset(hard - promote), 2),
        ),
        window=window,
        name="division3",
    )


def _division4(scores, window):
    easy, mid, hard = _banded_groups(scores)
    coarse = (mid | hard) & LARGE_SPREAD_CLASSES
    return GroupDivision(
        (
            ClassGroup(frozenset(easy), INFINITE_STEP),
            ClassGroup(frozenset(mid - coarse), 4),
            ClassGroup(frozenset(hard - coarse), 2),
            ClassGroup(frozenset(coarse), 8),
        ),
        window=window,
        name="division4",
    )


def _division5(scores, window):
    base = _division3(scores, window)
    split = DistanceSplit(threshold_m=30.0, near_step_multiplier=2)
    groups = tuple(
        group if group.step == INFINITE_STEP else dataclasses.replace(group, distance_split=split)
        for group in base.groups
    )
    return GroupDivision(groups, window=window, name="division5")


_PRESET_BUILDERS = {
    "division1": _division1,
    "division2": _division2,
    "division3": _division3,
    "division4": _division4,
    "division5": _division5,
}

DIVISION_PRESET_NAMES = tuple(sorted(_PRESET_BUILDERS))


def division_preset(
    name: str,
    window: int = DEFAULT_WINDOW,
    scores: Mapping[int, float] | None = None,
) -> GroupDivision:
    """Build one of the shipped divisions, optionally re-banded with custom
    per-class scores."""
    if name not in _PRESET_BUILDERS:
        raise ConfigurationError(
            f"unknown division {name!r}; valid presets: {', '.join(DIVISION_PRESET_NAMES)}"
        )
    return _PRESET_BUILDERS[name](scores or DEFAULT_CLASS_SCORES, window)


def _parse_step(raw) -> float:
    if isinstance(raw, str) and raw.strip().lower() in {"inf", "infinite", ".inf"}:
        return INFINITE_STEP
    if isinstance(raw, (int, float)):
        return float(raw)
    raise ConfigurationError(f"cannot parse step {raw!r}")


def load_division(path) -> GroupDivision:
    """Read a division from YAML. Schema::

        name: my-division        # optional
        window: 16               # optional
        default_step: inf        # optional; null forbids unmapped classes
        groups:
          - classes: [1, 9, 13]
            step: inf
          - classes: [3, 11]
            step: 4
            distance_split: {threshold_m: 30.0, near_step_multiplier: 2}
    """
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict) or "groups" not in raw:
        raise ConfigurationError(f"{path}: expected a mapping with a 'groups' list")
    groups = []
    for item in raw["groups"]:
        split = None
        if "distance_split" in item and item["distance_split"] is not None:
            ds = item["distance_split"]
            split = DistanceSplit(
                threshold_m=float(ds["threshold_m"]),
                near_step_multiplier=int(ds.get("near_step_multiplier", 2)),
            )
        groups.append(
            ClassGroup(frozenset(int(c) for c in item["classes"]), _parse_step(item["step"]), split)
        )
    default_step = raw.get("default_step", INFINITE_STEP)
    if default_step is not None:
        default_step = _parse_step(default_step)
    return GroupDivision(
        tuple(groups),
        window=int(raw.get("window", DEFAULT_WINDOW)),
        default_step=default_step,
        name=str(raw.get("name", Path(path).stem)),
    )


def resolve_division(spec: str, window: int | None = None) -> GroupDivision:
    """Accept a preset name or a path to a division file."""
    if spec in _PRESET_BUILDERS:
        division = division_preset(spec)
    elif Path(spec).exists():
        division = load_division(spec)
    else:
        raise ConfigurationError(
            f"unknown division {spec!r}; valid presets: {', '.join(DIVISION_PRESET_NAMES)} "
            f"(or pass a path to a division file)"
        )
    if window is not None:
        division = division.with_window(window)
    return division
