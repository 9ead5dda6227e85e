"""Host-side visual front end: edge feathering and corner-seeded KLT.

The tracker never looks at grayscale imagery.  Binary edges are mapped to
intensity 128 and blurred with a normalized Gaussian ("feathering"), and
Lucas-Kanade runs on that smooth field, seeded at the binary corner
locations.  Track state is kept in a table that the filter consumes.

Coordinates are ``(u, v)`` pixels with ``u`` along columns; map arrays are
indexed ``[v, u]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .emulator import MAP_SIZE, BinaryMap, MapKind

EDGE_INTENSITY = 128
MIN_EIGENVALUE = 1e-6


class SingularHessian(RuntimeError):
    """No usable gradient structure inside the tracking window."""


class OutOfBounds(RuntimeError):
    """Tracking window (plus gradient margin) leaves the image."""


class TrackStatus(enum.Enum):
    OUT_OF_STATE = "out_of_state"
    IN_STATE = "in_state"
    DEAD = "dead"


class FeatureSource(enum.Enum):
    BIT_CORNERS = "bit-corners"
    SHI_TOMASI_ON_EDGES = "shi-tomasi"


@dataclass
class FeatherMap:
    """8-bit feathered-edge intensity field, values in [0, 128]."""

    values: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.uint8)
        if v.shape != (MAP_SIZE, MAP_SIZE):
            raise ValueError(f"feather map must be {MAP_SIZE}x{MAP_SIZE}")
        self.values = v

    def as_float(self) -> np.ndarray:
        return self.values.astype(np.float64)


@dataclass
class TrackerConfig:
    sigma_e: float = 2.5
    window: int = 21
    max_iters: int = 30
    epsilon: float = 0.01
    feathering_enabled: bool = True
    feature_source: FeatureSource = FeatureSource.BIT_CORNERS
    photometric_gate: float = 20.0
    min_separation: float = 10.0
    min_msckf_len: int = 4
    max_tracks: int = 800
    predict_with_prev_flow: bool = True

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ValueError("window must be odd and >= 3")
        if self.sigma_e <= 0:
            raise ValueError("sigma_e must be positive")


@dataclass
class FeatureTrack:
    """One tracked corner: id, per-frame observations, and lifecycle status."""

    id: int
    observations: list = field(default_factory=list)  # (frame_index, np.array([u, v]))
    status: TrackStatus = TrackStatus.OUT_OF_STATE
    last_flow: np.ndarray = field(default_factory=lambda: np.zeros(2))
    death_reason: str = ""
    retry_after: int = 0  # promotion backoff after a failed triangulation

    def add_observation(self, frame_index: int, z: np.ndarray) -> None:
        if self.observations and frame_index <= self.observations[-1][0]:
            raise ValueError("frame indices must be strictly increasing")
        self.observations.append((frame_index, np.asarray(z, dtype=float).copy()))

    def length(self) -> int:
        return len(self.observations)

    def last_position(self) -> np.ndarray:
        return self.observations[-1][1]

    def last_frame(self) -> int:
        return self.observations[-1][0]

    def mark_in_state(self) -> None:
        if self.status is not TrackStatus.OUT_OF_STATE:
            raise ValueError(f"cannot promote a {self.status.value} track")
        self.status = TrackStatus.IN_STATE

    def mark_dead(self, reason: str = "") -> None:
        if self.status is TrackStatus.DEAD:
            return
        self.status = TrackStatus.DEAD
        self.death_reason = reason


class TrackTable:
    """Id-keyed track store; the tracker is the single writer per frame."""

    def __init__(self):
        self.tracks: dict[int, FeatureTrack] = {}
        self.next_id = 0
        self.just_died: list[int] = []

    def live(self) -> list[FeatureTrack]:
        return [t for t in self.tracks.values() if t.status is not TrackStatus.DEAD]

    def live_count(self) -> int:
        return sum(1 for t in self.tracks.values() if t.status is not TrackStatus.DEAD)

    def spawn(self, frame_index: int, position: np.ndarray) -> FeatureTrack:
        track = FeatureTrack(self.next_id)
        self.next_id += 1
        track.add_observation(frame_index, position)
        self.tracks[track.id] = track
        return track

    def prune_dead(self, keep_ids=()) -> None:
        keep = set(keep_ids)
        for tid in [t for t, tr in self.tracks.items()
                    if tr.status is TrackStatus.DEAD and t not in keep]:
            del self.tracks[tid]


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def feather(edges: BinaryMap, sigma_e: float = 2.5) -> FeatherMap:
    """Blur the 128-valued edge image with a normalized Gaussian.

    The separable pass is identical to convolving with the 2-D product
    kernel normalized over its square support; values stay in [0, 128].
    """
    if sigma_e <= 0:
        raise ValueError("sigma_e must be positive")
    k = gaussian_kernel_1d(sigma_e)
    img = edges.bits.astype(np.float64) * EDGE_INTENSITY
    out = ndimage.correlate1d(img, k, axis=0, mode="constant", cval=0.0)
    out = ndimage.correlate1d(out, k, axis=1, mode="constant", cval=0.0)
    out = np.clip(np.rint(out), 0, EDGE_INTENSITY).astype(np.uint8)
    return FeatherMap(out, edges.timestamp)


def binary_to_intensity(edges: BinaryMap) -> FeatherMap:
    """Feathering-disabled path: raw 0/128 edge image."""
    return FeatherMap(edges.bits.astype(np.uint8) * EDGE_INTENSITY, edges.timestamp)


def _window_offsets(window: int) -> tuple[np.ndarray, np.ndarray]:
    r = window // 2
    dv, du = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    return du.ravel().astype(float), dv.ravel().astype(float)


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample; caller guarantees 0 <= x,y <= size-1."""
    x0 = np.clip(np.floor(x).astype(np.intp), 0, MAP_SIZE - 2)
    y0 = np.clip(np.floor(y).astype(np.intp), 0, MAP_SIZE - 2)
    wx = x - x0
    wy = y - y0
    flat = img.ravel()
    base = y0 * MAP_SIZE + x0
    v00 = flat[base]
    v01 = flat[base + 1]
    v10 = flat[base + MAP_SIZE]
    v11 = flat[base + MAP_SIZE + 1]
    return (v00 * (1 - wx) + v01 * wx) * (1 - wy) + (v10 * (1 - wx) + v11 * wx) * wy


def _in_bounds(x: np.ndarray, y: np.ndarray, margin: float) -> np.ndarray:
    lim = MAP_SIZE - 1 - margin
    return (x.min(axis=-1) >= margin) & (x.max(axis=-1) <= lim) & \
           (y.min(axis=-1) >= margin) & (y.max(axis=-1) <= lim)


def _template_and_gradients(img: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    t = _bilinear(img, xs, ys)
    gx = 0.5 * (_bilinear(img, xs + 1.0, ys) - _bilinear(img, xs - 1.0, ys))
    gy = 0.5 * (_bilinear(img, xs, ys + 1.0) - _bilinear(img, xs, ys - 1.0))
    return t, gx, gy


def _hessian(gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h00 = (gx * gx).sum(axis=-1)
    h01 = (gx * gy).sum(axis=-1)
    h11 = (gy * gy).sum(axis=-1)
    return np.stack([h00, h01, h01, h11], axis=-1).reshape(gx.shape[:-1] + (2, 2))


def _min_eigenvalue(H: np.ndarray) -> np.ndarray:
    a = H[..., 0, 0]
    b = H[..., 0, 1]
    c = H[..., 1, 1]
    mean = 0.5 * (a + c)
    return mean - np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))


def klt_step(
    prev: FeatherMap,
    next_map: FeatherMap,
    point: np.ndarray,
    guess: np.ndarray,
    window: int = 21,
) -> tuple[np.ndarray, np.ndarray]:
    """One Gauss-Newton step of the photometric alignment.

    Gradients come from the previous (template) image, sampled bilinearly;
    the step solves H du = g with H the gradient outer-product sum and g the
    gradient-weighted intensity residual.  Returns ``(du, H)``.
    """
    point = np.asarray(point, dtype=float)
    guess = np.asarray(guess, dtype=float)
    du_off, dv_off = _window_offsets(window)
    xs = point[0] + du_off
    ys = point[1] + dv_off

    prev_f = prev.as_float()
    next_f = next_map.as_float()
    if not (_in_bounds(xs, ys, 1.0) and
            _in_bounds(xs + guess[0], ys + guess[1], 0.0)):
        raise OutOfBounds("tracking window leaves the image")

    t, gx, gy = _template_and_gradients(prev_f, xs, ys)
    H = _hessian(gx, gy)
    if _min_eigenvalue(H) < MIN_EIGENVALUE:
        raise SingularHessian("texture-free window")

    i1 = _bilinear(next_f, xs + guess[0], ys + guess[1])
    r = t - i1
    g = np.array([(gx * r).sum(), (gy * r).sum()])
    du = np.linalg.solve(H, g)
    return du, H


def iterate_klt(
    prev: FeatherMap,
    next_map: FeatherMap,
    point: np.ndarray,
    window: int = 21,
    max_iters: int = 30,
    epsilon: float = 0.01,
    guess: np.ndarray | None = None,
) -> np.ndarray:
    """Run klt_step to convergence; returns total displacement."""
    u = np.zeros(2) if guess is None else np.asarray(guess, dtype=float).copy()
    for _ in range(max_iters):
        du, _ = klt_step(prev, next_map, point, u, window)
        u += du
        if np.linalg.norm(du) < epsilon:
            break
    return u


def _batch_track(
    prev_f: np.ndarray,
    next_f: np.ndarray,
    points: np.ndarray,
    guesses: np.ndarray,
    cfg: TrackerConfig,
):
    """Advance all points in lockstep.

    Returns (displacements, ok, reason) where reason is '' for survivors and
    one of 'oob', 'singular', 'residual' otherwise.
    """
    n = points.shape[0]
    du_off, dv_off = _window_offsets(cfg.window)
    xs = points[:, 0:1] + du_off[None, :]
    ys = points[:, 1:2] + dv_off[None, :]

    ok = np.ones(n, dtype=bool)
    reason = np.array([""] * n, dtype=object)

    template_ok = _in_bounds(xs, ys, 1.0)
    ok &= template_ok
    reason[~template_ok] = "oob"

    t, gx, gy = _template_and_gradients(prev_f, xs, ys)
    H = _hessian(gx, gy)
    singular = _min_eigenvalue(H) < MIN_EIGENVALUE
    reason[ok & singular] = "singular"
    ok &= ~singular

    det = H[:, 0, 0] * H[:, 1, 1] - H[:, 0, 1] ** 2
    det[~ok] = 1.0

    u = guesses.copy()
    active_idx = np.nonzero(ok)[0]
    for _ in range(cfg.max_iters):
        if active_idx.size == 0:
            break
        sx = xs[active_idx] + u[active_idx, 0:1]
        sy = ys[active_idx] + u[active_idx, 1:2]
        inside = _in_bounds(sx, sy, 0.0)
        out_ids = active_idx[~inside]
        reason[out_ids] = "oob"
        ok[out_ids] = False
        active_idx = active_idx[inside]
        if active_idx.size == 0:
            break
        sx = sx[inside]
        sy = sy[inside]
        i1 = _bilinear(next_f, sx, sy)
        r = t[active_idx] - i1
        g0 = (gx[active_idx] * r).sum(axis=1)
        g1 = (gy[active_idx] * r).sum(axis=1)
        Ha = H[active_idx]
        da = det[active_idx]
        du0 = (Ha[:, 1, 1] * g0 - Ha[:, 0, 1] * g1) / da
        du1 = (-Ha[:, 0, 1] * g0 + Ha[:, 0, 0] * g1) / da
        u[active_idx, 0] += du0
        u[active_idx, 1] += du1
        still = du0 * du0 + du1 * du1 >= cfg.epsilon**2
        active_idx = active_idx[still]

    # photometric gate on the final alignment
    sx = xs + u[:, 0:1]
    sy = ys + u[:, 1:2]
    inside = _in_bounds(sx, sy, 0.0)
    newly_out = ok & ~inside
    reason[newly_out] = "oob"
    ok &= inside
    i1 = _bilinear(next_f, np.clip(sx, 0, MAP_SIZE - 1), np.clip(sy, 0, MAP_SIZE - 1))
    mean_resid = np.abs(t - i1).mean(axis=1)
    gated = ok & (mean_resid > cfg.photometric_gate)
    reason[gated] = "residual"
    ok &= ~gated
    return u, ok, reason


def track_frame(
    table: TrackTable,
    prev: FeatherMap | None,
    next_map: FeatherMap,
    new_corners: BinaryMap | None,
    cfg: TrackerConfig,
    frame_index: int,
) -> TrackTable:
    """Advance live tracks into ``next_map`` and spawn new ones at corners.

    Tracks that fail (window out of bounds, degenerate gradients, or final
    photometric residual above the gate) are marked dead.  New tracks are
    seeded at corner pixels at least ``min_separation`` away from live
    tracks, in (row, col) order, up to ``max_tracks`` live tracks.
    """
    table.just_died = []
    live = table.live()
    median_flow = np.zeros(2)
    if prev is not None and live:
        points = np.array([t.last_position() for t in live])
        if cfg.predict_with_prev_flow:
            guesses = np.array([t.last_flow for t in live])
        else:
            guesses = np.zeros_like(points)
        disp, ok, reason = _batch_track(
            prev.as_float(), next_map.as_float(), points, guesses, cfg
        )
        for i, tr in enumerate(live):
            if ok[i]:
                tr.add_observation(frame_index, points[i] + disp[i])
                tr.last_flow = disp[i].copy()
            else:
                tr.mark_dead(str(reason[i]))
                table.just_died.append(tr.id)
        if ok.any() and cfg.predict_with_prev_flow:
            median_flow = np.median(disp[ok], axis=0)
    elif prev is None and live:
        raise ValueError("live tracks but no previous frame")

    if new_corners is not None:
        # fresh spawns inherit the crowd's flow so their first advance
        # starts inside the convergence basin even under fast motion
        _spawn_tracks(table, new_corners, cfg, frame_index, median_flow)
    return table


def _spawn_tracks(
    table: TrackTable,
    corners: BinaryMap,
    cfg: TrackerConfig,
    frame_index: int,
    initial_flow: np.ndarray | None = None,
) -> None:
    budget = cfg.max_tracks - table.live_count()
    if budget <= 0:
        return
    rows, cols = np.nonzero(corners.bits)
    if rows.size == 0:
        return
    cand = np.column_stack([cols, rows]).astype(float)  # (u, v) in (row, col) order

    live_pos = np.array([t.last_position() for t in table.live()])
    sep2 = cfg.min_separation ** 2
    if live_pos.size:
        d2 = ((cand[:, None, :] - live_pos[None, :, :]) ** 2).sum(axis=2)
        cand = cand[d2.min(axis=1) >= sep2]

    # greedy pass keeps new spawns separated from each other via cell hashing
    cell = max(cfg.min_separation, 1.0)
    occupied: dict[tuple[int, int], list[np.ndarray]] = {}
    for p in cand:
        if budget <= 0:
            break
        key = (int(p[0] // cell), int(p[1] // cell))
        clash = False
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for q in occupied.get((key[0] + dx, key[1] + dy), ()):
                    if ((p - q) ** 2).sum() < sep2:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if clash:
            continue
        track = table.spawn(frame_index, p)
        if initial_flow is not None:
            track.last_flow = initial_flow.copy()
        occupied.setdefault(key, []).append(p)
        budget -= 1


def classify_tracks(table: TrackTable, n_clones: int, min_msckf_len: int = 4):
    """Split tracks into in-state promotion and dead-track update candidates.

    Live tracks observed for at least ``n_clones`` frames are promotion
    candidates; tracks that just died with between ``min_msckf_len`` and
    ``n_clones - 1`` observations go to the multi-view update path.
    """
    if n_clones < 1:
        raise ValueError("n_clones must be >= 1")
    in_state = [
        t.id
        for t in table.tracks.values()
        if t.status is TrackStatus.OUT_OF_STATE and t.length() >= n_clones
    ]
    out_of_state = [
        tid
        for tid in table.just_died
        if min_msckf_len <= table.tracks[tid].length() < n_clones
    ]
    return sorted(in_state), sorted(out_of_state)


def shi_tomasi_on_edges(feathered: FeatherMap, max_points: int) -> np.ndarray:
    """Minimum-eigenvalue corners of the feathered image, strongest first.

    Returns an (N, 2) array of (u, v) pixel coordinates, N <= max_points.
    Used by the alternative-feature ablation in place of the corner map.
    """
    if max_points <= 0:
        raise ValueError("max_points must be positive")
    img = feathered.as_float()
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])

    win = np.ones(5) / 5.0
    def smooth(a):
        a = ndimage.correlate1d(a, win, axis=0, mode="constant")
        return ndimage.correlate1d(a, win, axis=1, mode="constant")

    sxx = smooth(gx * gx)
    sxy = smooth(gx * gy)
    syy = smooth(gy * gy)
    mean = 0.5 * (sxx + syy)
    response = mean - np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy * sxy, 0.0))

    passes = response > 1e-9
    from .emulator import suppress_non_maxima

    keep = suppress_non_maxima(passes, response)
    rows, cols = np.nonzero(keep)
    if rows.size == 0:
        return np.zeros((0, 2))
    order = np.lexsort((cols, rows, -response[rows, cols]))[:max_points]
    return np.column_stack([cols[order], rows[order]]).astype(float)


def corners_from_points(points: np.ndarray, timestamp: float = 0.0) -> BinaryMap:
    """Build a corner map with bits set at the given (u, v) points."""
    bits = np.zeros((MAP_SIZE, MAP_SIZE), dtype=np.uint8)
    if len(points):
        pts = np.rint(np.asarray(points, dtype=float)).astype(int)
        keep = (
            (pts[:, 0] >= 0) & (pts[:, 0] < MAP_SIZE)
            & (pts[:, 1] >= 0) & (pts[:, 1] < MAP_SIZE)
        )
        pts = pts[keep]
        bits[pts[:, 1], pts[:, 0]] = 1
    return BinaryMap(bits, MapKind.CORNER, timestamp)


def dump_tracks_csv(table: TrackTable, path) -> None:
    """Write the whole table as ``frame,id,u,v,status`` rows."""
    with open(path, "w") as f:
        f.write("frame,id,u,v,status\n")
        for tid in sorted(table.tracks):
            tr = table.tracks[tid]
            for frame, z in tr.observations:
                f.write(f"{frame},{tid},{z[0]:.4f},{z[1]:.4f},{tr.status.value}\n")
