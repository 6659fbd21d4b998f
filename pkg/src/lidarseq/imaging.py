"""Camera projection, image-feature lifting, and temporal fused voxel maps.

Per-pixel feature vectors are plain inputs here, normalized RGB from a PPM or
precomputed channels from a raw float dump; no 2D backbone runs. The geometry
is the interesting part: project a sweep into the camera, pull features onto
the in-FOV points, carry those points into the present frame with the pose
chain, fuse everything into multi-scale sparse voxel maps, and gather the
result back onto any temporal LiDAR cloud.

Image files on disk:
    .ppm   binary P6, maxval 255, features = RGB / 255, C = 3
    .pgm   binary P5, maxval 255, features = gray / 255, C = 1
    .fmap  header line b"FMAP <C> <H> <W>\\n" then C planes of H*W
           little-endian float32, row-major within each plane
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregation import AggregatedCloud, _index_frames, _source_frame, step_offsets
from .errors import ConfigurationError, FormatError, InvalidInputError
from .geometry import LabeledCloud, PointCloud, relative_pose
from .sequence import CameraCalib, SequenceFrame
from .voxels import (
    DEFAULT_VOXEL_SIZE,
    VoxelFeatureMap,
    apply_fixed_kernel,
    downsample,
    gather_trilinear,
    voxelize,
)

DEFAULT_IMAGE_STEP = 12
DEFAULT_IMAGE_WINDOW = 48
DEFAULT_Z_MIN = 0.1
LABEL_IGNORE = -1


@dataclass(frozen=True)
class ImageFeatureMap:
    """Dense per-pixel feature vectors, shape (H, W, C)."""

    features: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 3 or feats.shape[0] < 1 or feats.shape[1] < 1 or feats.shape[2] < 1:
            raise InvalidInputError("image features must have shape (H, W, C)")
        if not np.isfinite(feats).all():
            raise InvalidInputError("image features must be finite")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)

    @property
    def height(self) -> int:
        return self.features.shape[0]

    @property
    def width(self) -> int:
        return self.features.shape[1]

    @property
    def channels(self) -> int:
        return self.features.shape[2]


@dataclass(frozen=True)
class PointImageFeatures:
    """Image features attached to the LiDAR points that saw them."""

    xyz: np.ndarray
    features: np.ndarray
    source_frame: np.ndarray

    def __post_init__(self):
        xyz = np.ascontiguousarray(np.asarray(self.xyz, dtype=np.float64))
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        src = np.ascontiguousarray(np.asarray(self.source_frame, dtype=np.int64)).reshape(-1)
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise InvalidInputError("points must have shape (M, 3)")
        if feats.ndim != 2 or feats.shape[0] != xyz.shape[0]:
            raise InvalidInputError("features must have shape (M, C)")
        if src.shape[0] != xyz.shape[0]:
            raise InvalidInputError("source_frame must tag every point")
        for arr in (xyz, feats, src):
            arr.setflags(write=False)
        object.__setattr__(self, "xyz", xyz)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "source_frame", src)

    @property
    def count(self) -> int:
        return self.xyz.shape[0]

    @property
    def channels(self) -> int:
        return self.features.shape[1]


def _as_xyz(points) -> np.ndarray:
    if isinstance(points, AggregatedCloud):
        return points.labeled.cloud.xyz
    if isinstance(points, LabeledCloud):
        return points.cloud.xyz
    if isinstance(points, PointCloud):
        return points.xyz
    xyz = np.asarray(points, dtype=np.float64)
    if xyz.ndim != 2 or xyz.shape[1] != 3:
        raise InvalidInputError("expected an (N, 3) array of points")
    return xyz


def project_to_image(
    points, calib: CameraCalib, z_min: float = DEFAULT_Z_MIN
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pinhole projection of LiDAR points into pixel coordinates.

    Returns (uv, depth, in_fov): continuous pixel coordinates, camera-frame
    depth, and the mask of points with depth > z_min landing inside the
    image bounds. uv rows for out-of-FOV points are zeroed, not meaningful.
    """
    xyz = _as_xyz(points)
    cam = calib.extrinsic.apply(xyz)
    depth = cam[:, 2].copy()
    valid = depth > z_min
    safe = np.where(valid, depth, 1.0)
    u = calib.fx * cam[:, 0] / safe + calib.cx
    v = calib.fy * cam[:, 1] / safe + calib.cy
    in_fov = valid & (u >= 0) & (u < calib.width) & (v >= 0) & (v < calib.height)
    uv = np.zeros((xyz.shape[0], 2), dtype=np.float64)
    uv[in_fov, 0] = u[in_fov]
    uv[in_fov, 1] = v[in_fov]
    return uv, depth, in_fov


def _nearest_pixels(uv: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    cols = np.clip(np.rint(uv[:, 0]).astype(np.int64), 0, width - 1)
    rows = np.clip(np.rint(uv[:, 1]).astype(np.int64), 0, height - 1)
    return rows, cols


def _bilinear_sample(image: ImageFeatureMap, uv: np.ndarray) -> np.ndarray:
    """Sample at continuous (u, v) from the four surrounding pixel centers."""
    h, w = image.height, image.width
    u = np.clip(uv[:, 0], 0.0, w - 1.0)
    v = np.clip(uv[:, 1], 0.0, h - 1.0)
    c0 = np.floor(u).astype(np.int64)
    r0 = np.floor(v).astype(np.int64)
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = (u - c0)[:, None]
    fv = (v - r0)[:, None]
    feats = image.features
    return (
        feats[r0, c0] * (1.0 - fu) * (1.0 - fv)
        + feats[r0, c1] * fu * (1.0 - fv)
        + feats[r1, c0] * (1.0 - fu) * fv
        + feats[r1, c1] * fu * fv
    )


def lift_features(
    frame: SequenceFrame,
    image: ImageFeatureMap,
    calib: CameraCalib,
    z_min: float = DEFAULT_Z_MIN,
    bilinear: bool = False,
) -> PointImageFeatures:
    """Attach per-pixel features to the frame's in-FOV points.

    Point coordinates stay in the frame's own LiDAR frame; the caller decides
    where to move them. Nearest-pixel sampling by default.
    """
    if (image.width, image.height) != (calib.width, calib.height):
        raise ConfigurationError(
            f"image is {image.width}x{image.height} but calibration expects "
            f"{calib.width}x{calib.height}"
        )
    xyz = frame.labeled.cloud.xyz
    uv, _, in_fov = project_to_image(xyz, calib, z_min)
    kept_uv = uv[in_fov]
    if bilinear:
        feats = _bilinear_sample(image, kept_uv)
    else:
        rows, cols = _nearest_pixels(kept_uv, image.width, image.height)
        feats = image.features[rows, cols]
    count = int(in_fov.sum())
    return PointImageFeatures(
        xyz[in_fov],
        feats,
        np.full(count, frame.index, dtype=np.int64),
    )


def _calib_for(calibs, position: int) -> CameraCalib:
    if isinstance(calibs, CameraCalib):
        return calibs
    return calibs[position]


def aggregate_image_features(
    frames: Sequence[SequenceFrame],
    images,
    calibs,
    t: int,
    step: int = DEFAULT_IMAGE_STEP,
    window: int = DEFAULT_IMAGE_WINDOW,
    z_min: float = DEFAULT_Z_MIN,
    bilinear: bool = False,
) -> PointImageFeatures:
    """Lift the present frame and each temporal sample, all in present coords.

    The image for frame index j is taken from ``images``, keyed the same way
    ``frames`` is ordered (a mapping from frame index or a parallel
    sequence); ``calibs`` may be one shared calibration or per-frame.
    Offsets reaching past the first frame are silently truncated, matching
    the point-cloud aggregation rule.
    """
    if step < 1 or int(step) != step:
        raise InvalidInputError(f"image step must be a positive integer, got {step!r}")
    if window < 0 or int(window) != window:
        raise InvalidInputError(f"image window must be a non-negative integer, got {window!r}")
    by_index = _index_frames(frames, t)
    positions = {frame.index: pos for pos, frame in enumerate(frames)}

    def image_for(index: int) -> ImageFeatureMap:
        if hasattr(images, "keys"):
            try:
                return images[index]
            except KeyError:
                raise InvalidInputError(f"no image provided for frame {index}") from None
        return images[positions[index]]

    present = by_index[t]
    parts = [lift_features(present, image_for(t), _calib_for(calibs, positions[t]), z_min, bilinear)]
    for offset in step_offsets(step, window):
        frame = _source_frame(by_index, t, offset)
        if frame is None:
            continue
        lifted = lift_features(
            frame, image_for(frame.index), _calib_for(calibs, positions[frame.index]), z_min, bilinear
        )
        mover = relative_pose(present.pose, frame.pose)
        parts.append(
            PointImageFeatures(mover.apply(lifted.xyz), lifted.features, lifted.source_frame)
        )
    widths = {p.channels for p in parts}
    if len(widths) > 1:
        raise ConfigurationError(f"images disagree on channel count: {sorted(widths)}")
    return PointImageFeatures(
        np.concatenate([p.xyz for p in parts], axis=0),
        np.concatenate([p.features for p in parts], axis=0),
        np.concatenate([p.source_frame for p in parts], axis=0),
    )


def fuse_to_voxels(
    agg: PointImageFeatures,
    scales: int = 3,
    seed: int = 0,
    voxel_size: float = DEFAULT_VOXEL_SIZE,
    origin=(0.0, 0.0, 0.0),
    kernel: np.ndarray | None = None,
    passes: int = 1,
) -> list[VoxelFeatureMap]:
    """Voxelize lifted features and fuse them into a multi-scale pyramid.

    Each scale applies ``passes`` rounds of a fixed submanifold kernel,
    seeded per scale unless an explicit kernel is given; coarser scales halve
    the grid. Deterministic for a given seed.
    """
    if scales < 1:
        raise InvalidInputError(f"need at least one scale, got {scales}")
    if passes < 1:
        raise InvalidInputError(f"need at least one kernel pass, got {passes}")
    if agg.count == 0:
        raise InvalidInputError("cannot fuse an empty feature cloud")

    def convolved(vmap: VoxelFeatureMap, level: int) -> VoxelFeatureMap:
        for _ in range(passes):
            if kernel is not None:
                vmap = apply_fixed_kernel(vmap, kernel)
            else:
                vmap = apply_fixed_kernel(vmap, seed=seed + level)
        return vmap

    current = voxelize(agg.xyz, agg.features, voxel_size, origin)
    pyramid = [convolved(current, 0)]
    for level in range(1, scales):
        current = downsample(pyramid[-1])
        pyramid.append(convolved(current, level))
    return pyramid


def temporal_multimodal_gather(points, fused: Sequence[VoxelFeatureMap]) -> np.ndarray:
    """Per-point image features gathered from every scale and concatenated.

    ``points`` may be an AggregatedCloud, a labeled or plain cloud, or a raw
    (N, 3) array. Output width is scales x C; a scale with no occupied
    neighbors around a point contributes zeros there.
    """
    if not fused:
        raise ConfigurationError("no fused maps given")
    widths = {m.width for m in fused}
    if len(widths) > 1:
        raise ConfigurationError(f"fused maps disagree on feature width: {sorted(widths)}")
    xyz = _as_xyz(points)
    return np.concatenate([gather_trilinear(m, xyz) for m in fused], axis=1)


def project_labels_to_image(
    frame: SequenceFrame,
    calib: CameraCalib,
    z_min: float = DEFAULT_Z_MIN,
    ignore: int = LABEL_IGNORE,
) -> np.ndarray:
    """Rasterize per-point semantic ids onto the image plane.

    Each in-FOV point writes its label to the nearest pixel; when several
    points land on one pixel the nearest depth wins. Untouched pixels hold
    the ignore value. Output shape (H, W), int64.
    """
    out = np.full((calib.height, calib.width), ignore, dtype=np.int64)
    uv, depth, in_fov = project_to_image(frame.labeled.cloud.xyz, calib, z_min)
    if not in_fov.any():
        return out
    rows, cols = _nearest_pixels(uv[in_fov], calib.width, calib.height)
    labels = frame.labeled.semantic[in_fov]
    # write far-to-near so the nearest point lands last and wins each pixel
    order = np.argsort(-depth[in_fov], kind="stable")
    out[rows[order], cols[order]] = labels[order]
    return out


# ---------------------------------------------------------------------------
# image files


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited PNM header token, skipping # comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated image header")
    return buf[start:pos], pos


def _parse_pnm_header(buf: bytes, path) -> tuple[bytes, int, int, int]:
    """Returns (magic, width, height, data offset); maxval must be 255."""
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: not a binary PGM/PPM file")
    fields = []
    for _ in range(3):
        token, pos = _read_token(buf, pos)
        if not token.isdigit():
            raise FormatError(f"{path}: bad header token {token!r}")
        fields.append(int(token))
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    return magic, width, height, pos + 1  # single whitespace byte after maxval


def _parse_fmap_header(buf: bytes, path) -> tuple[int, int, int, int]:
    end = buf.find(b"\n")
    if end < 0:
        raise FormatError(f"{path}: truncated header")
    parts = buf[:end].split()
    if len(parts) != 4 or parts[0] != b"FMAP":
        raise FormatError(f"{path}: bad feature-map header")
    try:
        channels, height, width = (int(p) for p in parts[1:])
    except ValueError:
        raise FormatError(f"{path}: bad feature-map header") from None
    if channels < 1 or height < 1 or width < 1:
        raise FormatError(f"{path}: bad feature-map dimensions")
    return channels, height, width, end + 1


def peek_image_size(path) -> tuple[int, int]:
    """(width, height) from the file header without decoding pixels."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == b"FMAP":
        channels, height, width, _ = _parse_fmap_header(buf, path)
        return width, height
    _, width, height, _ = _parse_pnm_header(buf, path)
    return width, height


def read_image(path) -> ImageFeatureMap:
    """Decode .ppm/.pgm (channels = RGB/gray over 255) or a raw .fmap dump."""
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == b"FMAP":
        channels, height, width, offset = _parse_fmap_header(buf, path)
        want = channels * height * width * 4
        if len(buf) - offset != want:
            raise FormatError(f"{path}: expected {want} payload bytes, found {len(buf) - offset}")
        planes = np.frombuffer(buf, dtype="<f4", count=channels * height * width, offset=offset)
        feats = planes.reshape(channels, height, width).transpose(1, 2, 0)
        return ImageFeatureMap(feats.astype(np.float64))
    magic, width, height, offset = _parse_pnm_header(buf, path)
    channels = 3 if magic == b"P6" else 1
    want = width * height * channels
    if len(buf) - offset != want:
        raise FormatError(f"{path}: expected {want} payload bytes, found {len(buf) - offset}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=want, offset=offset)
    feats = raw.reshape(height, width, channels).astype(np.float64) / 255.0
    return ImageFeatureMap(feats)


def write_image(path, image: ImageFeatureMap) -> None:
    """Encode by suffix: .ppm (C=3), .pgm (C=1), .fmap (any C, lossless)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".fmap":
        header = f"FMAP {image.channels} {image.height} {image.width}\n".encode()
        planes = image.features.transpose(2, 0, 1).astype("<f4")
        path.write_bytes(header + planes.tobytes())
        return
    if suffix == ".ppm":
        if image.channels != 3:
            raise ConfigurationError(f"PPM needs 3 channels, image has {image.channels}")
        magic = b"P6"
    elif suffix == ".pgm":
        if image.channels != 1:
            raise ConfigurationError(f"PGM needs 1 channel, image has {image.channels}")
        magic = b"P5"
    else:
        raise ConfigurationError(f"unsupported image suffix {suffix!r}")
    if image.features.min() < 0.0 or image.features.max() > 1.0:
        raise InvalidInputError("PNM images need features in [0, 1]")
    raw = np.rint(image.features * 255.0).astype(np.uint8)
    header = f"{magic.decode()} {image.width} {image.height} 255\n".encode()
    path.write_bytes(header + raw.tobytes())


def synthetic_feature_image(
    calib: CameraCalib, frame_index: int, channels: int = 3, seed: int = 0
) -> ImageFeatureMap:
    """Deterministic per-(seed, frame) random features on a 1/255 grid.

    Values land exactly on the PPM quantization lattice so writing to .ppm
    and reading back is lossless.
    """
    rng = np.random.default_rng((seed, frame_index))
    raw = rng.integers(0, 256, size=(calib.height, calib.width, channels))
    return ImageFeatureMap(raw.astype(np.float64) / 255.0)
