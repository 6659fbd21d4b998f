"""SemanticKITTI-style sequence I/O plus a synthetic scene generator.

On-disk layout of a sequence directory::

    velodyne/000000.bin   little-endian float32 (x, y, z, intensity) quadruples
    labels/000000.label   little-endian uint32, low 16 bits semantic class,
                          high 16 bits instance id
    poses.txt             one row-major 3x4 matrix (12 decimals) per frame
    calib.txt             "Key: 12 values" lines; Tr is LiDAR-to-camera,
                          P2 carries the pinhole intrinsics
    times.txt             optional, one timestamp per frame

Poses in ``poses.txt`` follow the upstream convention (camera frame); the
loader conjugates them with Tr so every ``SequenceFrame.pose`` maps LiDAR
coordinates to a common world frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import FormatError, InvalidInputError, InvalidSpecError
from .geometry import LabeledCloud, Pose, PointCloud, compose, invert

FRAME_PERIOD_S = 0.1

POINT_RECORD_BYTES = 16  # four little-endian float32 per point
LABEL_RECORD_BYTES = 4


@dataclass(frozen=True)
class CameraCalib:
    """Pinhole intrinsics plus the LiDAR-to-camera extrinsic."""

    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: Pose
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidInputError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError("image size must be positive")


@dataclass(frozen=True)
class SequenceFrame:
    """One LiDAR sweep: points and labels in sensor coordinates plus pose.

    ``file_pose`` keeps the verbatim poses.txt row the frame was loaded from
    so a rewrite reproduces the file byte for byte; frames built in memory
    leave it as None.
    """

    index: int
    labeled: LabeledCloud
    pose: Pose
    timestamp: float
    file_pose: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.labeled.count


def _read_bytes(path: Path) -> bytes:
    # Single choke point for per-frame payload reads; tests hook it to prove
    # that loading frame k never touches files of other frames.
    return Path(path).read_bytes()


def _parse_matrix_line(tokens: Sequence[str], where: str) -> np.ndarray:
    if len(tokens) != 12:
        raise FormatError(f"{where}: expected 12 values, got {len(tokens)}")
    try:
        vals = [float(tok) for tok in tokens]
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from None
    return np.array(vals, dtype=np.float64).reshape(3, 4)


def _parse_poses(path: Path) -> list[np.ndarray]:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        rows.append(_parse_matrix_line(line.split(), f"{path}:{lineno + 1}"))
    if not rows:
        raise FormatError(f"{path}: no pose rows")
    return rows


def _parse_calib(path: Path) -> dict[str, np.ndarray]:
    entries: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        key, _, rest = line.partition(":")
        if not rest:
            raise FormatError(f"{path}:{lineno + 1}: expected 'Key: values'")
        entries[key.strip()] = _parse_matrix_line(
            rest.split(), f"{path}:{lineno + 1}"
        )
    if "Tr" not in entries:
        raise FormatError(f"{path}: missing Tr entry")
    return entries


def _parse_times(path: Path) -> list[float]:
    try:
        return [float(tok) for tok in path.read_text().split()]
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _decode_points(raw: bytes, path: Path) -> PointCloud:
    if len(raw) % POINT_RECORD_BYTES:
        raise FormatError(
            f"{path}: size {len(raw)} bytes is not a multiple of "
            f"{POINT_RECORD_BYTES}-byte point records"
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(data[:, :3], data[:, 3])


def _decode_labels(raw: bytes, count: int, path: Path) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) % LABEL_RECORD_BYTES:
        raise FormatError(
            f"{path}: size {len(raw)} bytes is not a multiple of "
            f"{LABEL_RECORD_BYTES}-byte label records"
        )
    packed = np.frombuffer(raw, dtype="<u4")
    if packed.shape[0] != count:
        raise FormatError(
            f"{path}: {packed.shape[0]} labels for {count} points"
        )
    semantic = (packed & 0xFFFF).astype(np.int64)
    instance = (packed >> 16).astype(np.int64)
    return semantic, instance


def load_sequence(
    seq_dir, window: tuple[int, int] | None = None
) -> list[SequenceFrame]:
    """Load a sequence directory, lazily touching only frames in ``window``.

    ``window`` is an inclusive (first, last) frame-index pair; None loads
    every frame listed in poses.txt.
    """
    seq_dir = Path(seq_dir)
    pose_rows = _parse_poses(seq_dir / "poses.txt")
    calib = _parse_calib(seq_dir / "calib.txt")
    tr = Pose(calib["Tr"])
    tr_inv = invert(tr)

    times_path = seq_dir / "times.txt"
    times = _parse_times(times_path) if times_path.exists() else None

    count = len(pose_rows)
    if window is None:
        first, last = 0, count - 1
    else:
        first, last = int(window[0]), int(window[1])
        if not (0 <= first <= last < count):
            raise InvalidInputError(
                f"window ({first}, {last}) outside sequence of {count} frames"
            )

    frames = []
    for idx in range(first, last + 1):
        stem = f"{idx:06d}"
        bin_path = seq_dir / "velodyne" / f"{stem}.bin"
        label_path = seq_dir / "labels" / f"{stem}.label"
        cloud = _decode_points(_read_bytes(bin_path), bin_path)
        semantic, instance = _decode_labels(
            _read_bytes(label_path), cloud.count, label_path
        )
        pose = compose(compose(tr_inv, Pose(pose_rows[idx])), tr)
        stamp = times[idx] if times is not None else idx * FRAME_PERIOD_S
        frames.append(
            SequenceFrame(
                index=idx,
                labeled=LabeledCloud(cloud, semantic, instance),
                pose=pose,
                timestamp=stamp,
                file_pose=pose_rows[idx],
            )
        )
    return frames


def load_camera_calib(seq_dir, image_size: tuple[int, int] | None = None) -> CameraCalib:
    """Build a CameraCalib from calib.txt; image size comes from the caller
    or from the first image under image_2/."""
    seq_dir = Path(seq_dir)
    entries = _parse_calib(seq_dir / "calib.txt")
    if "P2" not in entries:
        raise FormatError(f"{seq_dir / 'calib.txt'}: missing P2 entry")
    p2 = entries["P2"]
    if image_size is None:
        from .imaging import peek_image_size  # late import, imaging pulls geometry

        image_dir = seq_dir / "image_2"
        candidates = sorted(image_dir.glob("*")) if image_dir.is_dir() else []
        if not candidates:
            raise InvalidInputError(
                f"{seq_dir}: no image_2/ files; pass image_size explicitly"
            )
        image_size = peek_image_size(candidates[0])
    return CameraCalib(
        fx=float(p2[0, 0]),
        fy=float(p2[1, 1]),
        cx=float(p2[0, 2]),
        cy=float(p2[1, 2]),
        extrinsic=Pose(entries["Tr"]),
        width=int(image_size[0]),
        height=int(image_size[1]),
    )


def _format_matrix(mat: np.ndarray) -> str:
    # repr of a Python float is the shortest string that parses back exactly,
    # which is what makes rewrite-after-load byte-stable.
    return " ".join(repr(float(v)) for v in np.asarray(mat).reshape(-1))


def default_camera_calib(width: int = 64, height: int = 48) -> CameraCalib:
    """Forward-looking camera with LiDAR axes permuted into optical axes."""
    rot = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    return CameraCalib(
        fx=float(width),
        fy=float(width),
        cx=width / 2.0,
        cy=height / 2.0,
        extrinsic=Pose.from_rotation_translation(rot, np.zeros(3)),
        width=width,
        height=height,
    )


def write_sequence(seq_dir, frames: Sequence[SequenceFrame], calib: CameraCalib | None = None) -> None:
    """Write frames in SemanticKITTI layout, re-based to file index 0.

    Frames loaded from disk carry their original poses.txt rows and are
    re-emitted verbatim; in-memory frames get rows derived from their pose.
    """
    if not frames:
        raise InvalidInputError("cannot write an empty sequence")
    seq_dir = Path(seq_dir)
    (seq_dir / "velodyne").mkdir(parents=True, exist_ok=True)
    (seq_dir / "labels").mkdir(parents=True, exist_ok=True)
    if calib is None:
        calib = default_camera_calib()
    tr = calib.extrinsic

    ordered = sorted(frames, key=lambda f: f.index)
    pose_lines = []
    time_lines = []
    for slot, frame in enumerate(ordered):
        stem = f"{slot:06d}"
        cloud = frame.labeled.cloud
        data = np.empty((cloud.count, 4), dtype="<f4")
        data[:, :3] = cloud.xyz
        data[:, 3] = cloud.intensity
        (seq_dir / "velodyne" / f"{stem}.bin").write_bytes(data.tobytes())

        packed = (
            (frame.labeled.semantic.astype(np.uint32) & np.uint32(0xFFFF))
            | (frame.labeled.instance.astype(np.uint32) << np.uint32(16))
        ).astype("<u4")
        (seq_dir / "labels" / f"{stem}.label").write_bytes(packed.tobytes())

        if frame.file_pose is not None:
            row = frame.file_pose
        else:
            row = compose(compose(tr, frame.pose), invert(tr)).matrix
        pose_lines.append(_format_matrix(row))
        time_lines.append(repr(float(frame.timestamp)))

    (seq_dir / "poses.txt").write_text("\n".join(pose_lines) + "\n")
    (seq_dir / "times.txt").write_text("\n".join(time_lines) + "\n")

    p2 = np.array(
        [
            [calib.fx, 0.0, calib.cx, 0.0],
            [0.0, calib.fy, calib.cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ]
    )
    calib_text = (
        f"P2: {_format_matrix(p2)}\n"
        f"Tr: {_format_matrix(tr.matrix)}\n"
    )
    (seq_dir / "calib.txt").write_text(calib_text)


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class InstanceSpec:
    """One tracked object: a box of points with static or constant-velocity
    motion (meters per second, world frame)."""

    class_id: int
    points: int
    center: tuple[float, float, float]
    size: tuple[float, float, float] = (3.0, 1.8, 1.5)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    instance_id: int | None = None


@dataclass(frozen=True)
class EgoSpec:
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    yaw_rate_deg: float = 0.0  # degrees per second


@dataclass(frozen=True)
class CameraSpec:
    width: int = 64
    height: int = 48
    fx: float | None = None
    fy: float | None = None

    def calib(self) -> CameraCalib:
        base = default_camera_calib(self.width, self.height)
        if self.fx is None and self.fy is None:
            return base
        return CameraCalib(
            fx=self.fx if self.fx is not None else base.fx,
            fy=self.fy if self.fy is not None else base.fy,
            cx=base.cx,
            cy=base.cy,
            extrinsic=base.extrinsic,
            width=base.width,
            height=base.height,
        )


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Deterministic scene: per-class planes, box instances, moving ego.

    The world is sampled once and re-observed from every frame, so frame k
    lists the same underlying world points (in the same row order) as frame
    j; only instance kinematics and the ego pose differ.
    """

    frame_count: int
    points_per_frame: int
    classes: Mapping[int, float]
    instances: tuple[InstanceSpec, ...] = ()
    ego: EgoSpec = field(default_factory=EgoSpec)
    camera: CameraSpec = field(default_factory=CameraSpec)
    seed: int = 0
    extent: float = 40.0

    def __post_init__(self):
        if self.frame_count < 1:
            raise InvalidSpecError("frame_count must be >= 1")
        if self.points_per_frame < 0:
            raise InvalidSpecError("points_per_frame must be >= 0")
        if not self.classes:
            raise InvalidSpecError("class histogram is empty")
        total = float(sum(self.classes.values()))
        if abs(total - 1.0) > 1e-9:
            raise InvalidSpecError(f"class fractions sum to {total}, expected 1")
        if any(f < 0 for f in self.classes.values()):
            raise InvalidSpecError("class fractions must be non-negative")
        quotas = class_point_quotas(self.classes, self.points_per_frame)
        used: dict[int, int] = {}
        seen_ids = set()
        for inst in self.instances:
            if inst.points < 1:
                raise InvalidSpecError("instances need at least one point")
            if inst.class_id not in self.classes:
                raise InvalidSpecError(
                    f"instance class {inst.class_id} missing from histogram"
                )
            used[inst.class_id] = used.get(inst.class_id, 0) + inst.points
            if inst.instance_id is not None:
                if inst.instance_id in seen_ids or inst.instance_id == 0:
                    raise InvalidSpecError(f"bad instance id {inst.instance_id}")
                seen_ids.add(inst.instance_id)
        for cid, n_used in used.items():
            if n_used > quotas[cid]:
                raise InvalidSpecError(
                    f"class {cid}: instances need {n_used} points but the "
                    f"histogram allots {quotas[cid]}"
                )


def class_point_quotas(classes: Mapping[int, float], total: int) -> dict[int, int]:
    """Largest-remainder apportionment; off by at most one point per class."""
    ids = sorted(classes)
    exact = {cid: classes[cid] * total for cid in ids}
    quotas = {cid: int(math.floor(exact[cid])) for cid in ids}
    short = total - sum(quotas.values())
    by_remainder = sorted(ids, key=lambda cid: (quotas[cid] - exact[cid], cid))
    for cid in by_remainder[:short]:
        quotas[cid] += 1
    return quotas


def _ego_pose(ego: EgoSpec, frame: int) -> Pose:
    dt = frame * FRAME_PERIOD_S
    yaw = math.radians(ego.yaw_rate_deg) * dt
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    trans = np.asarray(ego.start, dtype=np.float64) + dt * np.asarray(
        ego.velocity, dtype=np.float64
    )
    return Pose.from_rotation_translation(rot, trans)


def generate_synthetic(spec: SyntheticSceneSpec) -> list[SequenceFrame]:
    """Render the spec into frames (sensor coordinates + LiDAR-to-world poses)."""
    rng = np.random.default_rng(spec.seed)
    quotas = class_point_quotas(spec.classes, spec.points_per_frame)
    instance_budget: dict[int, int] = {}
    for inst in spec.instances:
        instance_budget[inst.class_id] = (
            instance_budget.get(inst.class_id, 0) + inst.points
        )

    world_chunks: list[np.ndarray] = []
    sem_chunks: list[np.ndarray] = []
    inst_chunks: list[np.ndarray] = []
    # Background surfaces: one horizontal plane per class, height keyed off
    # the class id so planes do not coincide.
    for cid in sorted(quotas):
        n_bg = quotas[cid] - instance_budget.get(cid, 0)
        if n_bg <= 0:
            continue
        xy = rng.uniform(-spec.extent, spec.extent, size=(n_bg, 2))
        z = np.full((n_bg, 1), 0.04 * (cid % 7))
        world_chunks.append(np.hstack([xy, z]))
        sem_chunks.append(np.full(n_bg, cid, dtype=np.int64))
        inst_chunks.append(np.zeros(n_bg, dtype=np.int64))

    moving: list[tuple[slice, np.ndarray]] = []  # rows + per-frame offset step
    auto_id = 1
    taken = {i.instance_id for i in spec.instances if i.instance_id is not None}
    offset = sum(chunk.shape[0] for chunk in world_chunks)
    for inst in spec.instances:
        size = np.asarray(inst.size, dtype=np.float64)
        base = np.asarray(inst.center, dtype=np.float64) + rng.uniform(
            -0.5, 0.5, size=(inst.points, 3)
        ) * size
        if inst.instance_id is None:
            while auto_id in taken:
                auto_id += 1
            iid = auto_id
            taken.add(iid)
        else:
            iid = inst.instance_id
        world_chunks.append(base)
        sem_chunks.append(np.full(inst.points, inst.class_id, dtype=np.int64))
        inst_chunks.append(np.full(inst.points, iid, dtype=np.int64))
        vel = np.asarray(inst.velocity, dtype=np.float64)
        if np.any(vel != 0.0):
            moving.append((slice(offset, offset + inst.points), vel))
        offset += inst.points

    if world_chunks:
        world0 = np.vstack(world_chunks)
        semantic = np.concatenate(sem_chunks)
        instance = np.concatenate(inst_chunks)
    else:
        world0 = np.zeros((0, 3))
        semantic = np.zeros(0, dtype=np.int64)
        instance = np.zeros(0, dtype=np.int64)
    intensity = rng.random(world0.shape[0])

    frames = []
    for k in range(spec.frame_count):
        world = world0.copy()
        dt = k * FRAME_PERIOD_S
        for rows, vel in moving:
            world[rows] += vel * dt
        pose = _ego_pose(spec.ego, k)
        sensor = (world - pose.translation) @ pose.rotation
        frames.append(
            SequenceFrame(
                index=k,
                labeled=LabeledCloud(PointCloud(sensor, intensity), semantic, instance),
                pose=pose,
                timestamp=k * FRAME_PERIOD_S,
            )
        )
    return frames


def load_scene_spec(path) -> SyntheticSceneSpec:
    """Parse a YAML scene spec; keys mirror the SyntheticSceneSpec fields."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise InvalidSpecError(f"{path}: expected a mapping at top level")
    return scene_spec_from_mapping(raw, where=str(path))


def scene_spec_from_mapping(raw: Mapping, where: str = "spec") -> SyntheticSceneSpec:
    try:
        classes = {int(k): float(v) for k, v in dict(raw["classes"]).items()}
        instances = tuple(
            InstanceSpec(
                class_id=int(item["class_id"]),
                points=int(item["points"]),
                center=tuple(float(v) for v in item["center"]),
                size=tuple(float(v) for v in item.get("size", (3.0, 1.8, 1.5))),
                velocity=tuple(float(v) for v in item.get("velocity", (0, 0, 0))),
                instance_id=(
                    int(item["instance_id"]) if "instance_id" in item else None
                ),
            )
            for item in raw.get("instances", [])
        )
        ego_raw = raw.get("ego", {})
        ego = EgoSpec(
            start=tuple(float(v) for v in ego_raw.get("start", (0, 0, 0))),
            velocity=tuple(float(v) for v in ego_raw.get("velocity", (0, 0, 0))),
            yaw_rate_deg=float(ego_raw.get("yaw_rate_deg", 0.0)),
        )
        cam_raw = raw.get("camera", {})
        camera = CameraSpec(
            width=int(cam_raw.get("width", 64)),
            height=int(cam_raw.get("height", 48)),
            fx=float(cam_raw["fx"]) if "fx" in cam_raw else None,
            fy=float(cam_raw["fy"]) if "fy" in cam_raw else None,
        )
        return SyntheticSceneSpec(
            frame_count=int(raw["frame_count"]),
            points_per_frame=int(raw["points_per_frame"]),
            classes=classes,
            instances=instances,
            ego=ego,
            camera=camera,
            seed=int(raw.get("seed", 0)),
            extent=float(raw.get("extent", 40.0)),
        )
    except KeyError as exc:
        raise InvalidSpecError(f"{where}: missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidSpecError(f"{where}: {exc}") from None


def corrupt_labels(frame: SequenceFrame, error_rate: float, seed: int) -> SequenceFrame:
    """Resample a fraction of semantic labels, mimicking model predictions.

    Exactly round(error_rate * N) points change, each to a class drawn
    uniformly from the other classes present in the frame. A frame with a
    single class present has nothing to resample to and is returned as-is.
    """
    if not (0.0 <= error_rate <= 1.0) or not math.isfinite(error_rate):
        raise InvalidInputError(f"error_rate {error_rate} outside [0, 1]")
    semantic = frame.labeled.semantic
    n = semantic.shape[0]
    n_corrupt = int(round(error_rate * n))
    present = np.unique(semantic)
    if n_corrupt == 0 or present.shape[0] < 2:
        return frame

    rng = np.random.default_rng(seed)
    chosen = rng.choice(n, size=n_corrupt, replace=False)
    new_semantic = semantic.copy()
    own_pos = np.searchsorted(present, semantic[chosen])
    draw = rng.integers(0, present.shape[0] - 1, size=n_corrupt)
    draw += (draw >= own_pos).astype(draw.dtype)  # skip the original class
    new_semantic[chosen] = present[draw]
    return SequenceFrame(
        index=frame.index,
        labeled=LabeledCloud(frame.labeled.cloud, new_semantic, frame.labeled.instance),
        pose=frame.pose,
        timestamp=frame.timestamp,
        file_pose=frame.file_pose,
    )
