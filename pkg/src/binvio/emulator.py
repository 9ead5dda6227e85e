"""Software stand-in for an on-sensor binary feature front end.

Takes a 256x256 grayscale frame and produces the two binary maps a host
would receive from the focal-plane array: an edge map (thresholded Sobel
magnitude) and a corner map (FAST segment test with non-maximum
suppression and budgeted selection).  An optional seeded bit-flip pass
models analog readout corruption.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

MAP_SIZE = 256

# FAST-16 circle of radius 3, (row, col) offsets in circular order.
FAST_CIRCLE = np.array(
    [
        (-3, 0), (-3, 1), (-2, 2), (-1, 3), (0, 3), (1, 3), (2, 2), (3, 1),
        (3, 0), (3, -1), (2, -2), (1, -3), (0, -3), (-1, -3), (-2, -2), (-3, -1),
    ],
    dtype=int,
)
FAST_ARC_LENGTH = 9
MAX_CORNER_POINTS = 800
CORNER_GRID_CELLS = 8


class MapKind(enum.Enum):
    CORNER = "corner"
    EDGE = "edge"


@dataclass
class GrayFrame:
    """8-bit intensity frame with a capture timestamp in seconds."""

    pixels: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (MAP_SIZE, MAP_SIZE):
            raise ValueError(f"frame must be {MAP_SIZE}x{MAP_SIZE}, got {self.pixels.shape}")


@dataclass
class BinaryMap:
    """Bit grid of detected features; ``bits`` holds 0/1 as uint8."""

    bits: np.ndarray
    kind: MapKind
    timestamp: float = 0.0

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.shape != (MAP_SIZE, MAP_SIZE):
            raise ValueError(f"map must be {MAP_SIZE}x{MAP_SIZE}, got {bits.shape}")
        self.bits = (bits != 0).astype(np.uint8)

    def count(self) -> int:
        return int(self.bits.sum())

    def coordinates(self) -> np.ndarray:
        """Set-bit locations as an (N, 2) array of (u, v) = (col, row)."""
        rows, cols = np.nonzero(self.bits)
        return np.column_stack([cols, rows]).astype(float)


def sobel_magnitude(pixels: np.ndarray) -> np.ndarray:
    """|Gx| + |Gy| of the 3x3 Sobel operator; border ring left at zero."""
    img = pixels.astype(np.int32)
    out = np.zeros_like(img)
    gx = (
        (img[:-2, 2:] + 2 * img[1:-1, 2:] + img[2:, 2:])
        - (img[:-2, :-2] + 2 * img[1:-1, :-2] + img[2:, :-2])
    )
    gy = (
        (img[2:, :-2] + 2 * img[2:, 1:-1] + img[2:, 2:])
        - (img[:-2, :-2] + 2 * img[:-2, 1:-1] + img[:-2, 2:])
    )
    out[1:-1, 1:-1] = np.abs(gx) + np.abs(gy)
    return out


def detect_edges(frame: GrayFrame, threshold: float = 80.0) -> BinaryMap:
    """Binary edge map: set where Sobel |Gx|+|Gy| reaches ``threshold``."""
    if not 0.0 < threshold <= 255 * 8:
        raise ValueError("threshold must be in (0, 2040]")
    bits = (sobel_magnitude(frame.pixels) >= threshold).astype(np.uint8)
    return BinaryMap(bits, MapKind.EDGE, frame.timestamp)


def _fast_pass_and_score(pixels: np.ndarray, threshold: float):
    """Segment test over the whole frame.

    Returns (passes, score): boolean map of pixels with a contiguous arc of
    at least FAST_ARC_LENGTH circle pixels all brighter than center+t or all
    darker than center-t, and a contrast score used for suppression.
    """
    img = pixels.astype(np.int32)
    h, w = img.shape
    m = 3
    center = img[m:h - m, m:w - m]
    shape = (16,) + center.shape
    brighter = np.zeros(shape, dtype=bool)
    darker = np.zeros(shape, dtype=bool)
    diffs = np.zeros(shape, dtype=np.int32)
    for i, (dr, dc) in enumerate(FAST_CIRCLE):
        ring = img[m + dr:h - m + dr, m + dc:w - m + dc]
        diffs[i] = ring - center
        brighter[i] = diffs[i] > threshold
        darker[i] = diffs[i] < -threshold

    def has_arc(flags):
        doubled = np.concatenate([flags, flags[: FAST_ARC_LENGTH - 1]], axis=0)
        hit = np.zeros(center.shape, dtype=bool)
        for s in range(16):
            hit |= np.logical_and.reduce(doubled[s:s + FAST_ARC_LENGTH], axis=0)
        return hit

    bright_corner = has_arc(brighter)
    dark_corner = has_arc(darker)

    score_b = np.where(brighter, diffs - threshold, 0).sum(axis=0)
    score_d = np.where(darker, -diffs - threshold, 0).sum(axis=0)
    score_inner = np.where(bright_corner, score_b, 0) + np.where(dark_corner, score_d, 0)

    passes = np.zeros((h, w), dtype=bool)
    score = np.zeros((h, w), dtype=np.int64)
    passes[m:h - m, m:w - m] = bright_corner | dark_corner
    score[m:h - m, m:w - m] = score_inner
    return passes, score


def fast_segment_test(pixels: np.ndarray, threshold: float) -> np.ndarray:
    """Raw segment-test map without suppression (exposed for verification)."""
    passes, _ = _fast_pass_and_score(np.asarray(pixels, dtype=np.uint8), threshold)
    return passes


def suppress_non_maxima(passes: np.ndarray, score: np.ndarray) -> np.ndarray:
    """3x3 NMS with raster-order tie-break (earlier pixel wins ties)."""
    s = np.where(passes, score, -1).astype(np.int64)
    h, w = s.shape
    keep = passes.copy()
    for dr, dc in ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)):
        shifted = np.full_like(s, -1)
        rs = slice(max(0, dr), h + min(0, dr))
        cs = slice(max(0, dc), w + min(0, dc))
        rs_src = slice(max(0, -dr), h + min(0, -dr))
        cs_src = slice(max(0, -dc), w + min(0, -dc))
        shifted[rs, cs] = s[rs_src, cs_src]
        later_in_raster = (dr, dc) > (0, 0)
        if later_in_raster:
            keep &= s >= shifted
        else:
            keep &= s > shifted
    return keep


def _budgeted_selection(keep: np.ndarray, score: np.ndarray, max_points: int) -> np.ndarray:
    """Grid-bucketed top-N: strongest per cell first, then globally by score."""
    rows, cols = np.nonzero(keep)
    if rows.size <= max_points:
        return keep
    sc = score[rows, cols]
    cell = (rows // (MAP_SIZE // CORNER_GRID_CELLS)) * CORNER_GRID_CELLS + (
        cols // (MAP_SIZE // CORNER_GRID_CELLS)
    )
    # sort by (cell, -score, row, col); first entry per cell is its champion
    order = np.lexsort((cols, rows, -sc, cell))
    cell_sorted = cell[order]
    first_in_cell = np.ones(order.size, dtype=bool)
    first_in_cell[1:] = cell_sorted[1:] != cell_sorted[:-1]
    champions = order[first_in_cell]

    selected = list(champions[:max_points])
    remaining_budget = max_points - len(selected)
    if remaining_budget > 0:
        rest = order[~first_in_cell]
        rest_rank = np.lexsort((cols[rest], rows[rest], -sc[rest]))
        selected.extend(rest[rest_rank[:remaining_budget]])

    out = np.zeros_like(keep)
    sel = np.asarray(selected)
    out[rows[sel], cols[sel]] = True
    return out


def detect_corners(
    frame: GrayFrame, fast_threshold: float = 20.0, max_points: int = MAX_CORNER_POINTS
) -> BinaryMap:
    """FAST corner map, suppressed and capped at ``max_points`` set bits."""
    if max_points > MAX_CORNER_POINTS:
        raise ValueError(f"max_points must be <= {MAX_CORNER_POINTS}")
    passes, score = _fast_pass_and_score(frame.pixels, fast_threshold)
    keep = suppress_non_maxima(passes, score)
    keep = _budgeted_selection(keep, score, max_points)
    return BinaryMap(keep.astype(np.uint8), MapKind.CORNER, frame.timestamp)


def inject_analog_noise(bmap: BinaryMap, flip_rate: float, seed: int) -> BinaryMap:
    """Flip each bit independently with probability ``flip_rate`` (seeded)."""
    if not 0.0 <= flip_rate <= 0.05:
        raise ValueError("flip_rate must be in [0, 0.05]")
    if flip_rate == 0.0:
        return BinaryMap(bmap.bits.copy(), bmap.kind, bmap.timestamp)
    rng = np.random.default_rng(seed)
    flips = rng.random(bmap.bits.shape) < flip_rate
    return BinaryMap(bmap.bits ^ flips.astype(np.uint8), bmap.kind, bmap.timestamp)
