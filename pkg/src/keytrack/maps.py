"""Keypoint probability and association map codec.

Maps are stored row-major: index ``[row, col]`` corresponds to image
coordinates ``(x=col, y=row)``.  All public functions speak image
coordinates.  Probability maps carry unit-peak Gaussians per keypoint,
max-merged where they overlap.  Association maps carry, per connection,
four channels of weighted mean offsets: ``dx_ab, dy_ab, dx_ba, dy_ba``
where ``ab`` points from parent to child.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator, Optional, Sequence

import numpy as np

from . import kernels
from .skeleton import (
    Pair,
    Pose,
    SkeletonSpec,
    connection_name,
    connection_vector,
    parse_connection_name,
    skeleton_scale,
)

log = logging.getLogger(__name__)

ASSOC_CHANNELS = ("dx_ab", "dy_ab", "dx_ba", "dy_ba")

DEFAULT_THETA = 0.2
DEFAULT_WEIGHT_CUTOFF = 0.2
DEFAULT_KERNEL_EXTENT = 3.0
DEFAULT_DETECT_THRESHOLD = 0.4
DEFAULT_NMS_RADIUS = 7.0
SMOOTH_RADIUS = 2  # 5x5 mean filter


@dataclass(frozen=True)
class EncoderParams:
    """Kernel sizing and truncation constants for map encoding."""

    theta: float = DEFAULT_THETA
    weight_cutoff: float = DEFAULT_WEIGHT_CUTOFF
    kernel_extent: float = DEFAULT_KERNEL_EXTENT

    def __post_init__(self) -> None:
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if not 0.0 < self.weight_cutoff < 1.0:
            raise ValueError(
                f"weight_cutoff must be in (0, 1), got {self.weight_cutoff}"
            )
        if self.kernel_extent <= 0.0:
            raise ValueError(f"kernel_extent must be positive, got {self.kernel_extent}")


@dataclass
class CandidateKeypoint:
    """A decoded keypoint candidate in image coordinates."""

    category: str
    x: float
    y: float
    score: float

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class MapStack:
    """One frame's probability and association maps."""

    width: int
    height: int
    prob: dict[str, np.ndarray] = field(default_factory=dict)
    assoc: dict[Pair, np.ndarray] = field(default_factory=dict)

    def channel_items(self) -> Iterator[tuple[str, np.ndarray]]:
        for category, grid in self.prob.items():
            yield f"prob:{category}", grid
        for pair, grids in self.assoc.items():
            for idx, suffix in enumerate(ASSOC_CHANNELS):
                yield f"assoc:{connection_name(pair)}:{suffix}", grids[idx]


def kernel_sigma(scale: float, mean_scale: float, theta: float = DEFAULT_THETA) -> float:
    """Kernel width from an instance scale and the frame's mean scale."""
    if scale <= 0.0 or mean_scale <= 0.0:
        raise ValueError("skeleton scales must be positive")
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    return theta * (scale + mean_scale) / 2.0


def pose_sigmas(poses: Sequence[Pose], spec: SkeletonSpec, params: EncoderParams) -> list[float]:
    """Per-pose kernel widths; raises if any pose has no defined scale."""
    scales: list[float] = []
    for index, pose in enumerate(poses):
        scale = skeleton_scale(spec, pose)
        if scale is None:
            raise ValueError(
                f"pose {index} has no dominant connection; scale undefined"
            )
        scales.append(scale)
    mean_scale = sum(scales) / len(scales)
    return [kernel_sigma(s, mean_scale, params.theta) for s in scales]


def _in_bounds(xy: tuple[float, float], width: int, height: int) -> bool:
    return 0.0 <= xy[0] < width and 0.0 <= xy[1] < height


def encode_prob_maps(
    poses: Sequence[Pose],
    spec: SkeletonSpec,
    width: int,
    height: int,
    params: EncoderParams = EncoderParams(),
) -> dict[str, np.ndarray]:
    """Render unit-peak Gaussian probability maps, one per category."""
    maps = {
        category: np.zeros((height, width), dtype=np.float32)
        for category in spec.categories
    }
    if not poses:
        return maps
    sigmas = pose_sigmas(poses, spec, params)
    for index, (pose, sigma) in enumerate(zip(poses, sigmas)):
        for category in spec.categories:
            xy = pose.get(category)
            if xy is None:
                continue
            if not _in_bounds(xy, width, height):
                log.warning(
                    "pose %d keypoint %s at (%.1f, %.1f) outside %dx%d image; skipped",
                    index, category, xy[0], xy[1], width, height,
                )
                continue
            kernels.gaussian_max(
                maps[category], xy[0], xy[1], sigma, params.kernel_extent
            )
    return maps


def encode_assoc_maps(
    poses: Sequence[Pose],
    spec: SkeletonSpec,
    width: int,
    height: int,
    params: EncoderParams = EncoderParams(),
) -> dict[Pair, np.ndarray]:
    """Render weighted mean offset maps, four channels per connection.

    An animal contributes to a connection's channels only when both
    endpoints exist; the weights are its unit-peak keypoint Gaussian
    truncated to zero at ``weight_cutoff``.  Cells never touched stay 0.
    """
    out: dict[Pair, np.ndarray] = {}
    sigmas = pose_sigmas(poses, spec, params) if poses else []
    for pair in spec.connections:
        grids = np.zeros((4, height, width), dtype=np.float32)
        wsum_a = np.zeros((height, width), dtype=np.float32)
        wsum_b = np.zeros((height, width), dtype=np.float32)
        for index, (pose, sigma) in enumerate(zip(poses, sigmas)):
            a = pose.get(pair[0])
            b = pose.get(pair[1])
            if a is None or b is None:
                continue
            if not (_in_bounds(a, width, height) and _in_bounds(b, width, height)):
                log.warning(
                    "pose %d connection %s endpoint outside %dx%d image; skipped",
                    index, connection_name(pair), width, height,
                )
                continue
            dx = b[0] - a[0]
            dy = b[1] - a[1]
            kernels.assoc_accumulate(
                wsum_a, grids[0], grids[1], a[0], a[1], sigma,
                params.kernel_extent, params.weight_cutoff, dx, dy,
            )
            kernels.assoc_accumulate(
                wsum_b, grids[2], grids[3], b[0], b[1], sigma,
                params.kernel_extent, params.weight_cutoff, -dx, -dy,
            )
        for idx, wsum in ((0, wsum_a), (1, wsum_a), (2, wsum_b), (3, wsum_b)):
            covered = wsum > 0
            grids[idx][covered] /= wsum[covered]
            grids[idx][~covered] = 0.0
        out[pair] = grids
    return out


def encode(
    poses: Sequence[Pose],
    spec: SkeletonSpec,
    width: int,
    height: int,
    params: EncoderParams = EncoderParams(),
) -> MapStack:
    """Encode one frame's poses into a full map stack."""
    return MapStack(
        width=width,
        height=height,
        prob=encode_prob_maps(poses, spec, width, height, params),
        assoc=encode_assoc_maps(poses, spec, width, height, params),
    )


# ---------------------------------------------------------------------------
# decoding


def _parabola_offset(left: float, centre: float, right: float) -> float:
    """Vertex offset of the parabola through three equispaced samples."""
    denom = 2.0 * (2.0 * centre - left - right)
    if denom <= 0.0 or not math.isfinite(denom):
        return 0.0
    offset = (right - left) / denom
    return min(0.5, max(-0.5, offset))


def decode_candidates(
    prob_maps: dict[str, np.ndarray],
    threshold: float = DEFAULT_DETECT_THRESHOLD,
    nms_radius: float = DEFAULT_NMS_RADIUS,
) -> list[CandidateKeypoint]:
    """Detect candidate keypoints from probability maps.

    Each map is smoothed with a 5x5 mean filter (edge-replicated), strict
    local maxima above ``threshold`` are collected, maxima closer than
    ``nms_radius`` are reduced to the higher-scoring one (ties: lower row,
    then lower column), and positions are refined by independent one-axis
    parabola fits clamped to half a pixel.
    """
    candidates: list[CandidateKeypoint] = []
    for category, grid in prob_maps.items():
        smoothed = kernels.box_mean(np.ascontiguousarray(grid), SMOOTH_RADIUS)
        mask = kernels.local_max_mask(smoothed, threshold)
        rows, cols = np.nonzero(mask)
        if rows.size == 0:
            continue
        scores = smoothed[rows, cols].astype(np.float64)
        order = np.lexsort((cols, rows, -scores))
        kept: list[tuple[int, int, float]] = []
        for idx in order:
            row = int(rows[idx])
            col = int(cols[idx])
            suppressed = False
            for krow, kcol, _ in kept:
                if (row - krow) ** 2 + (col - kcol) ** 2 < nms_radius ** 2:
                    suppressed = True
                    break
            if not suppressed:
                kept.append((row, col, float(scores[idx])))
        height, width = smoothed.shape
        for row, col, score in kept:
            dx = 0.0
            dy = 0.0
            if 0 < col < width - 1:
                dx = _parabola_offset(
                    float(smoothed[row, col - 1]),
                    float(smoothed[row, col]),
                    float(smoothed[row, col + 1]),
                )
            if 0 < row < height - 1:
                dy = _parabola_offset(
                    float(smoothed[row - 1, col]),
                    float(smoothed[row, col]),
                    float(smoothed[row + 1, col]),
                )
            candidates.append(
                CandidateKeypoint(category=category, x=col + dx, y=row + dy, score=score)
            )
    return candidates


# ---------------------------------------------------------------------------
# sub-pixel map reads


def quadratic_sample(grid: np.ndarray, x: float, y: float) -> float:
    """Sample a map at a sub-pixel position via separable quadratic fits.

    Exact at integer positions and for affine-in-position maps away from
    the borders.  The position must lie within the sampled grid domain
    ``[0, width-1] x [0, height-1]``.
    """
    height, width = grid.shape
    if not (0.0 <= x <= width - 1 and 0.0 <= y <= height - 1):
        raise ValueError(f"position ({x}, {y}) outside {width}x{height} grid domain")
    col = int(math.floor(x + 0.5))
    row = int(math.floor(y + 0.5))
    col = min(col, width - 1)
    row = min(row, height - 1)
    tx = x - col
    ty = y - row

    def axis_fit(left: float, centre: float, right: float, t: float) -> float:
        return centre + 0.5 * (right - left) * t + 0.5 * (left - 2.0 * centre + right) * t * t

    rows = (max(row - 1, 0), row, min(row + 1, height - 1))
    cols = (max(col - 1, 0), col, min(col + 1, width - 1))
    along_x = [
        axis_fit(float(grid[r, cols[0]]), float(grid[r, cols[1]]), float(grid[r, cols[2]]), tx)
        for r in rows
    ]
    return axis_fit(along_x[0], along_x[1], along_x[2], ty)


def read_offset(
    maps: MapStack | dict[Pair, np.ndarray],
    pair: Pair,
    x: float,
    y: float,
    reverse: bool = False,
) -> tuple[float, float]:
    """Interpolate a connection's offset vector at a position.

    ``reverse=False`` reads the parent-to-child channels (valid near the
    parent keypoint); ``reverse=True`` reads child-to-parent.
    """
    assoc = maps.assoc if isinstance(maps, MapStack) else maps
    grids = assoc[pair]
    base = 2 if reverse else 0
    return (
        quadratic_sample(grids[base], x, y),
        quadratic_sample(grids[base + 1], x, y),
    )


# ---------------------------------------------------------------------------
# training-style loss evaluation


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    location: float
    association: float


def map_loss(
    predicted: MapStack,
    truth: MapStack,
    theta1: float = 0.0,
    theta2: float = 1.0,
    theta3: float = 1.0,
    assoc_scale: float = 512.0,
) -> LossBreakdown:
    """Weighted sum of location and association reconstruction errors.

    The location term is the mean squared error over all probability-map
    cells.  The association term is the squared error of the offset maps
    scaled by ``assoc_scale``, summed where the truth is nonzero and
    normalised by the count of nonzero truth cells (0 when there are none).
    """
    if predicted.width != truth.width or predicted.height != truth.height:
        raise ValueError("map stacks have mismatched dimensions")
    if list(predicted.prob) != list(truth.prob) or list(predicted.assoc) != list(truth.assoc):
        raise ValueError("map stacks have mismatched channel sets")

    loc_sq = 0.0
    loc_cells = 0
    for category, truth_grid in truth.prob.items():
        pred_grid = predicted.prob[category]
        diff = pred_grid.astype(np.float64) - truth_grid.astype(np.float64)
        loc_sq += float(np.sum(diff * diff))
        loc_cells += diff.size
    location = loc_sq / loc_cells if loc_cells else 0.0

    assoc_sq = 0.0
    assoc_cells = 0
    for pair, truth_grids in truth.assoc.items():
        pred_grids = predicted.assoc[pair]
        nz = truth_grids != 0
        if not nz.any():
            continue
        diff = (
            pred_grids.astype(np.float64)[nz] - truth_grids.astype(np.float64)[nz]
        ) / assoc_scale
        assoc_sq += float(np.sum(diff * diff))
        assoc_cells += int(nz.sum())
    association = assoc_sq / assoc_cells if assoc_cells else 0.0

    total = theta1 + theta2 * location + theta3 * association
    return LossBreakdown(total=total, location=location, association=association)


# ---------------------------------------------------------------------------
# serialization: flat binary container and a text debugging format


_BINARY_MAGIC = b"KTMB"
_TEXT_MAGIC = "KTMT"
_FORMAT_VERSION = 1


def save_maps(maps: MapStack, path: str, text: bool = False) -> None:
    if text:
        _save_text(maps, path)
    else:
        _save_binary(maps, path)


def load_maps(path: str) -> MapStack:
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == _BINARY_MAGIC:
        return _load_binary(path)
    if magic == _TEXT_MAGIC.encode("ascii"):
        return _load_text(path)
    raise ValueError(f"{path}: not a map stack file")


def _save_binary(maps: MapStack, path: str) -> None:
    channels = list(maps.channel_items())
    with open(path, "wb") as handle:
        handle.write(_BINARY_MAGIC)
        handle.write(struct.pack("<III", _FORMAT_VERSION, maps.width, maps.height))
        handle.write(struct.pack("<I", len(channels)))
        for name, _ in channels:
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
        for _, grid in channels:
            handle.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def _load_binary(path: str) -> MapStack:
    with open(path, "rb") as handle:
        magic = handle.read(4)
        if magic != _BINARY_MAGIC:
            raise ValueError(f"{path}: bad magic")
        version, width, height = struct.unpack("<III", handle.read(12))
        if version != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<I", handle.read(4))
        names = []
        for _ in range(count):
            (length,) = struct.unpack("<H", handle.read(2))
            names.append(handle.read(length).decode("utf-8"))
        grids = []
        for _ in range(count):
            raw = handle.read(4 * width * height)
            if len(raw) != 4 * width * height:
                raise ValueError(f"{path}: truncated channel data")
            grids.append(
                np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float32)
            )
    return _assemble_stack(width, height, names, grids, path)


def _save_text(maps: MapStack, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{_TEXT_MAGIC} {_FORMAT_VERSION}\n")
        channels = list(maps.channel_items())
        handle.write(f"{maps.width} {maps.height} {len(channels)}\n")
        for name, grid in channels:
            handle.write(name + "\n")
            data = np.asarray(grid, dtype=np.float32)
            for row in data:
                handle.write(" ".join(f"{v:.9g}" for v in row) + "\n")


def _load_text(path: str) -> MapStack:
    with open(path, "r", encoding="utf-8") as handle:
        header = handle.readline().split()
        if len(header) != 2 or header[0] != _TEXT_MAGIC:
            raise ValueError(f"{path}: bad text header")
        if int(header[1]) != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {header[1]}")
        width, height, count = (int(tok) for tok in handle.readline().split())
        names = []
        grids = []
        for _ in range(count):
            names.append(handle.readline().strip())
            rows = [
                np.array(handle.readline().split(), dtype=np.float32)
                for _ in range(height)
            ]
            grid = np.vstack(rows)
            if grid.shape != (height, width):
                raise ValueError(f"{path}: channel shape mismatch")
            grids.append(grid)
    return _assemble_stack(width, height, names, grids, path)


def _assemble_stack(
    width: int, height: int, names: list[str], grids: list[np.ndarray], path: str
) -> MapStack:
    stack = MapStack(width=width, height=height)
    assoc_parts: dict[Pair, dict[str, np.ndarray]] = {}
    for name, grid in zip(names, grids):
        kind, _, rest = name.partition(":")
        if kind == "prob":
            stack.prob[rest] = grid
        elif kind == "assoc":
            conn, _, suffix = rest.rpartition(":")
            pair = parse_connection_name(conn)
            assoc_parts.setdefault(pair, {})[suffix] = grid
        else:
            raise ValueError(f"{path}: unknown channel {name!r}")
    for pair, parts in assoc_parts.items():
        if set(parts) != set(ASSOC_CHANNELS):
            raise ValueError(
                f"{path}: incomplete association channels for {connection_name(pair)}"
            )
        stack.assoc[pair] = np.stack([parts[s] for s in ASSOC_CHANNELS])
    return stack
