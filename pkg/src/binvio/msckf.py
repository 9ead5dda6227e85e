"""Tightly coupled sliding-window filter backend.

State: navigation block (15 error dims), optional camera calibration block
(6 extrinsic + 8 intrinsic error dims), a window of IMU pose clones
(6 each), and in-state landmarks (3 each), with one joint covariance.
Error layout is ``[nav | calib | clones... | landmarks...]``; clones are
ordered by frame index and landmarks by insertion.

Out-of-state features are consumed by projecting their stacked residuals
onto the left null space of the landmark Jacobian, which removes the
landmark analytically and constrains only the cloned poses (plus
calibration when estimated).  In-state landmarks get plain EKF updates and
delayed initialization with the QR-split Jacobian construction.

Measurement Jacobians are evaluated at first-estimate values for clones
and in-state landmarks (toggle ``use_fej``) to avoid spurious information
gain along unobservable directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import qr as scipy_qr
from scipy.stats import chi2 as chi2_dist

from .geometry import (
    CameraCalibration,
    Landmark3D,
    NonPositiveDepth,
    Pose,
    UnitQuaternion,
    intrinsics_jacobian,
    project,
    projection_jacobian_point,
    quat_from_axis_angle,
    quat_multiply,
    quat_normalize,
    skew,
    undistort_batch,
)
from .imu import ERROR_STATE_DIM, NavState, NoiseParams, propagate_block
from .tracker import FeatureTrack, TrackStatus, TrackTable, classify_tracks

CLONE_DIM = 6
LANDMARK_DIM = 3
CALIB_DIM = 14  # 3 extrinsic rotation + 3 extrinsic translation + 8 intrinsics


class InsufficientBaseline(RuntimeError):
    """Observing rays subtend too small an angle to fix depth."""


class BehindCamera(RuntimeError):
    """Triangulated point has non-positive depth in an observing camera."""


class NoConvergence(RuntimeError):
    """Landmark refinement failed to converge."""


@dataclass(frozen=True)
class UpdateBudget:
    max_slam: int = 30
    max_msckf: int = 60

    def __post_init__(self):
        if self.max_slam <= 0 or self.max_msckf <= 0:
            raise ValueError("budgets must be positive")


@dataclass
class FilterConfig:
    max_clones: int = 15
    budget: UpdateBudget = field(default_factory=UpdateBudget)
    sigma_px: float = 1.0
    chi2_confidence: float = 0.95
    chi2_scale: float = 1.0
    estimate_calibration: bool = True
    use_fej: bool = True
    min_msckf_len: int = 4
    min_baseline_deg: float = 0.5
    slam_stale_frames: int = 15
    slam_before_msckf: bool = True
    paranoid_checks: bool = False
    integration: str = "zoh"
    # initial standard deviations
    init_att_sigma: float = 1e-3
    init_pos_sigma: float = 1e-4
    init_vel_sigma: float = 1e-2
    init_bg_sigma: float = 1e-3
    init_ba_sigma: float = 1e-2
    ext_rot_var: float = 1e-3
    ext_pos_var: float = 1e-4
    intr_var: float = 1.0
    dist_var: float = 1e-4


@dataclass
class CloneEntry:
    pose: Pose
    fej: Pose
    frame_index: int


@dataclass
class SlamLandmark:
    position: np.ndarray
    fej: np.ndarray
    track_id: int
    last_seen_frame: int


@dataclass
class RunningChecks:
    """Worst-case numerical diagnostics accumulated over a run."""

    max_nullspace_residual: float = 0.0
    max_asymmetry: float = 0.0
    min_eigenvalue: float = np.inf
    max_clone_count: int = 0
    max_slam_in_update: int = 0
    max_msckf_in_update: int = 0

    def absorb_update(self, other: "RunningChecks"):
        self.max_nullspace_residual = max(self.max_nullspace_residual, other.max_nullspace_residual)
        self.max_asymmetry = max(self.max_asymmetry, other.max_asymmetry)
        self.min_eigenvalue = min(self.min_eigenvalue, other.min_eigenvalue)
        self.max_clone_count = max(self.max_clone_count, other.max_clone_count)
        self.max_slam_in_update = max(self.max_slam_in_update, other.max_slam_in_update)
        self.max_msckf_in_update = max(self.max_msckf_in_update, other.max_msckf_in_update)


class FilterState:
    """Joint estimate plus covariance with dimension bookkeeping."""

    def __init__(self, nav: NavState, calib: CameraCalibration, cfg: FilterConfig):
        self.nav = nav
        self.calib = calib
        self.cfg = cfg
        self.clones: dict[int, CloneEntry] = {}
        self.slam: dict[int, SlamLandmark] = {}
        d = self.dim_formula(0, 0)
        self.cov = np.zeros((d, d))
        self.cov[0:3, 0:3] = np.eye(3) * cfg.init_att_sigma**2
        self.cov[3:6, 3:6] = np.eye(3) * cfg.init_pos_sigma**2
        self.cov[6:9, 6:9] = np.eye(3) * cfg.init_vel_sigma**2
        self.cov[9:12, 9:12] = np.eye(3) * cfg.init_bg_sigma**2
        self.cov[12:15, 12:15] = np.eye(3) * cfg.init_ba_sigma**2
        if cfg.estimate_calibration:
            c = ERROR_STATE_DIM
            self.cov[c:c + 3, c:c + 3] = np.eye(3) * cfg.ext_rot_var
            self.cov[c + 3:c + 6, c + 3:c + 6] = np.eye(3) * cfg.ext_pos_var
            self.cov[c + 6:c + 10, c + 6:c + 10] = np.eye(4) * cfg.intr_var
            self.cov[c + 10:c + 14, c + 10:c + 14] = np.eye(4) * cfg.dist_var
        self.checks = RunningChecks()

    # -- layout ---------------------------------------------------------

    def calib_dim(self) -> int:
        return CALIB_DIM if self.cfg.estimate_calibration else 0

    def dim_formula(self, n_clones: int, n_slam: int) -> int:
        return ERROR_STATE_DIM + self.calib_dim() + CLONE_DIM * n_clones + LANDMARK_DIM * n_slam

    def dim(self) -> int:
        return self.dim_formula(len(self.clones), len(self.slam))

    def calib_offset(self) -> int:
        return ERROR_STATE_DIM

    def clone_offset(self, frame_index: int) -> int:
        base = ERROR_STATE_DIM + self.calib_dim()
        for i, k in enumerate(sorted(self.clones)):
            if k == frame_index:
                return base + CLONE_DIM * i
        raise KeyError(f"no clone for frame {frame_index}")

    def slam_offset(self, track_id: int) -> int:
        base = ERROR_STATE_DIM + self.calib_dim() + CLONE_DIM * len(self.clones)
        for i, k in enumerate(self.slam):
            if k == track_id:
                return base + LANDMARK_DIM * i
        raise KeyError(f"no landmark for track {track_id}")

    def check_dimensions(self) -> None:
        d = self.dim()
        if self.cov.shape != (d, d):
            raise AssertionError(
                f"covariance {self.cov.shape} does not match bookkeeping dim {d}"
            )

    # -- camera geometry -------------------------------------------------

    def camera_pose(self, clone: CloneEntry, fej: bool = False) -> Pose:
        imu_pose = clone.fej if fej else clone.pose
        return self.calib.extrinsic.compose(imu_pose)

    # -- structural ops ---------------------------------------------------

    def clone_pose(self, frame_index: int, defer_marginalization: bool = False) -> None:
        """Append the current IMU pose as a clone, augmenting covariance."""
        if frame_index in self.clones:
            raise ValueError(f"frame {frame_index} already cloned")
        pose = Pose(self.nav.orientation, self.nav.position.copy())
        insert_at = ERROR_STATE_DIM + self.calib_dim() + CLONE_DIM * len(self.clones)
        self.clones[frame_index] = CloneEntry(pose, pose, frame_index)

        d_old = self.cov.shape[0]
        new = np.zeros((d_old + CLONE_DIM, d_old + CLONE_DIM))
        pre = slice(0, insert_at)
        post_old = slice(insert_at, d_old)
        post_new = slice(insert_at + CLONE_DIM, d_old + CLONE_DIM)
        ins = slice(insert_at, insert_at + CLONE_DIM)
        new[pre, pre] = self.cov[pre, pre]
        new[pre, post_new] = self.cov[pre, post_old]
        new[post_new, pre] = self.cov[post_old, pre]
        new[post_new, post_new] = self.cov[post_old, post_old]
        # the clone error is an exact copy of the nav attitude/position error
        nav_rows = np.r_[0:3, 3:6]
        new[ins, pre] = self.cov[nav_rows, :][:, pre]
        new[ins, post_new] = self.cov[nav_rows, :][:, post_old]
        new[pre, ins] = new[ins, pre].T
        new[post_new, ins] = new[ins, post_new].T
        new[ins, ins] = self.cov[np.ix_(nav_rows, nav_rows)]
        self.cov = new
        self.check_dimensions()

        if not defer_marginalization:
            while len(self.clones) > self.cfg.max_clones:
                self.marginalize_clone(min(self.clones))

    def marginalize_clone(self, frame_index: int) -> None:
        off = self.clone_offset(frame_index)
        idx = np.arange(off, off + CLONE_DIM)
        self.cov = np.delete(np.delete(self.cov, idx, axis=0), idx, axis=1)
        del self.clones[frame_index]
        self.check_dimensions()

    def add_landmark(self, track_id: int, position, fej, cov_ff, cov_fx, frame_index: int):
        d_old = self.cov.shape[0]
        new = np.zeros((d_old + LANDMARK_DIM, d_old + LANDMARK_DIM))
        new[:d_old, :d_old] = self.cov
        new[d_old:, :d_old] = cov_fx
        new[:d_old, d_old:] = cov_fx.T
        new[d_old:, d_old:] = cov_ff
        self.cov = new
        self.slam[track_id] = SlamLandmark(
            np.asarray(position, dtype=float).copy(),
            np.asarray(fej, dtype=float).copy(),
            track_id,
            frame_index,
        )
        self.check_dimensions()

    def remove_landmark(self, track_id: int) -> None:
        off = self.slam_offset(track_id)
        idx = np.arange(off, off + LANDMARK_DIM)
        self.cov = np.delete(np.delete(self.cov, idx, axis=0), idx, axis=1)
        del self.slam[track_id]
        self.check_dimensions()

    # -- corrections ------------------------------------------------------

    def apply_correction(self, dx: np.ndarray) -> None:
        if dx.shape != (self.dim(),):
            raise ValueError("correction has wrong dimension")
        self.nav.apply_error(dx[0:ERROR_STATE_DIM])
        if self.cfg.estimate_calibration:
            c = self.calib_offset()
            dq = quat_from_axis_angle(dx[c:c + 3])
            ext = self.calib.extrinsic
            new_ext = Pose(
                UnitQuaternion(quat_normalize(quat_multiply(dq, ext.orientation.xyzw))),
                ext.position + dx[c + 3:c + 6],
            )
            vec = self.calib.intrinsic_vector() + dx[c + 6:c + 14]
            self.calib = CameraCalibration.from_intrinsic_vector(vec, new_ext)
        for frame_index in sorted(self.clones):
            off = self.clone_offset(frame_index)
            entry = self.clones[frame_index]
            dq = quat_from_axis_angle(dx[off:off + 3])
            q = UnitQuaternion(quat_normalize(quat_multiply(dq, entry.pose.orientation.xyzw)))
            entry.pose = Pose(q, entry.pose.position + dx[off + 3:off + 6])
        for tid in self.slam:
            off = self.slam_offset(tid)
            self.slam[tid].position = self.slam[tid].position + dx[off:off + 3]

    def symmetrize(self) -> None:
        asym = float(np.abs(self.cov - self.cov.T).max())
        self.checks.max_asymmetry = max(self.checks.max_asymmetry, asym)
        self.cov = 0.5 * (self.cov + self.cov.T)


def camera_poses_now(clones: dict[int, CloneEntry], calib: CameraCalibration):
    """Current-estimate camera pose per clone, computed once per update."""
    return {f: calib.extrinsic.compose(c.pose) for f, c in clones.items()}


def _batch_project(Rs, centers, calib: CameraCalibration, pg: np.ndarray):
    """Pixels of one global point seen by stacked cameras (m,3,3)/(m,3)."""
    p_c = np.einsum("mij,mj->mi", Rs, pg[None, :] - centers)
    if np.any(p_c[:, 2] <= 1e-6):
        raise BehindCamera("point behind an observing camera")
    x = p_c[:, 0] / p_c[:, 2]
    y = p_c[:, 1] / p_c[:, 2]
    k1, k2, p1, p2 = calib.distortion
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * radial + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    px = np.column_stack([calib.fx * xd + calib.cx, calib.fy * yd + calib.cy])
    return px, p_c


def triangulate(
    track: FeatureTrack,
    clones: dict[int, CloneEntry],
    calib: CameraCalibration,
    min_baseline_deg: float = 0.5,
    max_iters: int = 20,
    cam_poses: dict[int, Pose] | None = None,
) -> Landmark3D:
    """Multi-view point from a track: linear midpoint then GN refinement.

    Refinement runs on an inverse-depth parameterization anchored in the
    first observing camera and minimizes pixel reprojection error.
    """
    obs = [(f, z) for f, z in track.observations if f in clones]
    if len(obs) < 2:
        raise InsufficientBaseline("need at least two observations in the window")
    if cam_poses is None:
        cam_poses = camera_poses_now(clones, calib)
    m = len(obs)
    pixels = np.array([z for _, z in obs], dtype=float)
    Rs = np.stack([cam_poses[f].rotation() for f, _ in obs])
    centers = np.stack([cam_poses[f].position for f, _ in obs])

    xn = undistort_batch(pixels, calib, iters=8)
    d_cam = np.column_stack([xn, np.ones(m)])
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    bearings = np.einsum("mji,mj->mi", Rs, d_cam)  # R^T d per camera
    cosangles = np.clip(bearings @ bearings.T, -1.0, 1.0)
    max_angle = float(np.degrees(np.arccos(cosangles.min())))
    if max_angle < min_baseline_deg:
        raise InsufficientBaseline(f"max subtended angle {max_angle:.3f} deg")

    # linear midpoint: sum of projectors orthogonal to each ray
    A = m * np.eye(3) - np.einsum("mi,mj->ij", bearings, bearings)
    b = centers.sum(axis=0) - np.einsum("mi,mj,mj->i", bearings, bearings, centers)
    try:
        x0 = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise InsufficientBaseline("singular midpoint system") from e

    R_a = Rs[0]
    c_a = centers[0]
    p_a = R_a @ (x0 - c_a)
    if p_a[2] <= 0:
        raise BehindCamera("linear solution behind the anchor camera")
    w = np.array([p_a[0] / p_a[2], p_a[1] / p_a[2], 1.0 / p_a[2]])
    R_ga = R_a.T
    k1, k2, p1d, p2d = calib.distortion

    def point_global(wv):
        return R_ga @ np.array([wv[0] / wv[2], wv[1] / wv[2], 1.0 / wv[2]]) + c_a

    converged = False
    for _ in range(max_iters):
        pg = point_global(w)
        pred, p_c = _batch_project(Rs, centers, calib, pg)
        r = (pixels - pred).ravel()
        # stage Jacobians, batched over observations
        z = p_c[:, 2]
        xs = p_c[:, 0] / z
        ys = p_c[:, 1] / z
        r2 = xs * xs + ys * ys
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        drad_dx = 2 * xs * (k1 + 2 * k2 * r2)
        drad_dy = 2 * ys * (k1 + 2 * k2 * r2)
        Jd = np.empty((m, 2, 2))
        Jd[:, 0, 0] = radial + xs * drad_dx + 2 * p1d * ys + 6 * p2d * xs
        Jd[:, 0, 1] = xs * drad_dy + 2 * p1d * xs + 2 * p2d * ys
        Jd[:, 1, 0] = ys * drad_dx + 2 * p1d * xs + 2 * p2d * ys
        Jd[:, 1, 1] = radial + ys * drad_dy + 6 * p1d * ys + 2 * p2d * xs
        Jn = np.zeros((m, 2, 3))
        Jn[:, 0, 0] = 1.0 / z
        Jn[:, 0, 2] = -xs / z
        Jn[:, 1, 1] = 1.0 / z
        Jn[:, 1, 2] = -ys / z
        K = np.array([[calib.fx, 0.0], [0.0, calib.fy]])
        rho = w[2]
        dpg_dw = R_ga @ np.array(
            [
                [1.0 / rho, 0.0, -w[0] / rho**2],
                [0.0, 1.0 / rho, -w[1] / rho**2],
                [0.0, 0.0, -1.0 / rho**2],
            ]
        )
        J = np.einsum("ab,mbc,mcd,mde,ef->maf", K, Jd, Jn, Rs, dpg_dw).reshape(2 * m, 3)
        try:
            delta = np.linalg.solve(J.T @ J, J.T @ r)
        except np.linalg.LinAlgError as e:
            raise NoConvergence("normal equations singular") from e
        w = w + delta
        if w[2] <= 1e-8:
            raise BehindCamera("inverse depth collapsed")
        if np.linalg.norm(delta) < 1e-10 * max(1.0, np.linalg.norm(w)):
            converged = True
            break
    if not converged:
        raise NoConvergence(f"no convergence in {max_iters} iterations")

    pg = point_global(w)
    _batch_project(Rs, centers, calib, pg)  # raises if behind any camera
    return Landmark3D(pg)


def triangulation_jacobian(w, anchor: Pose, cam: Pose, calib: CameraCalibration):
    """d(pixel)/d(anchored inverse-depth params); exposed for verification."""
    R_ga = anchor.rotation().T
    rho = w[2]
    p_anchor = np.array([w[0] / rho, w[1] / rho, 1.0 / rho])
    pg = R_ga @ p_anchor + anchor.position
    p_c = cam.transform_point(pg)
    J_pt = projection_jacobian_point(p_c, calib)
    dpg_dw = R_ga @ np.array(
        [
            [1.0 / rho, 0.0, -w[0] / rho**2],
            [0.0, 1.0 / rho, -w[1] / rho**2],
            [0.0, 0.0, -1.0 / rho**2],
        ]
    )
    return J_pt @ cam.rotation() @ dpg_dw


def _observation_jacobians(
    state: FilterState, clone: CloneEntry, p_global: np.ndarray, cam_cur: Pose | None = None
):
    """Rows of the measurement model for one observation.

    Returns (predicted_pixel, H_f, H_clone, H_calib) with Jacobians at the
    first-estimate linearization point when enabled.
    """
    fej = state.cfg.use_fej
    imu_pose = clone.fej if fej else clone.pose
    R_ig = imu_pose.rotation()
    p_i = imu_pose.position
    ext = state.calib.extrinsic
    R_ci = ext.rotation()
    p_ic = ext.position

    if cam_cur is None:
        cam_cur = state.camera_pose(clone, fej=False)
    pred = project(p_global, cam_cur, state.calib)

    u_vec = R_ig @ (p_global - p_i)
    p_c = R_ci @ (u_vec - p_ic)
    J_pt = projection_jacobian_point(p_c, state.calib)

    H_f = J_pt @ R_ci @ R_ig
    H_clone = np.zeros((2, CLONE_DIM))
    H_clone[:, 0:3] = J_pt @ R_ci @ skew(u_vec)
    H_clone[:, 3:6] = -J_pt @ R_ci @ R_ig

    H_calib = None
    if state.cfg.estimate_calibration:
        H_calib = np.zeros((2, CALIB_DIM))
        H_calib[:, 0:3] = J_pt @ skew(p_c)
        H_calib[:, 3:6] = -J_pt @ R_ci
        z = p_c[2]
        xn = np.array([p_c[0] / z, p_c[1] / z])
        H_calib[:, 6:14] = intrinsics_jacobian(xn, state.calib)
    return pred, H_f, H_clone, H_calib


def _stack_track_rows(
    state: FilterState, track: FeatureTrack, p_global: np.ndarray, cam_poses=None
):
    """Residuals and Jacobians for all of a track's in-window observations."""
    obs = [(f, z) for f, z in track.observations if f in state.clones]
    m = len(obs)
    d = state.dim()
    r = np.zeros(2 * m)
    H_x = np.zeros((2 * m, d))
    H_f = np.zeros((2 * m, 3))
    for i, (f, z) in enumerate(obs):
        clone = state.clones[f]
        cam = cam_poses.get(f) if cam_poses else None
        pred, Hf_i, Hc_i, Hcal_i = _observation_jacobians(state, clone, p_global, cam)
        rows = slice(2 * i, 2 * i + 2)
        r[rows] = np.asarray(z, dtype=float) - pred
        H_f[rows] = Hf_i
        off = state.clone_offset(f)
        H_x[rows, off:off + CLONE_DIM] = Hc_i
        if Hcal_i is not None:
            c = state.calib_offset()
            H_x[rows, c:c + CALIB_DIM] = Hcal_i
    return r, H_x, H_f, m


_CHI2_TABLE: dict[tuple[float, int], float] = {}


def _chi2_threshold(confidence: float, dof: int) -> float:
    key = (confidence, dof)
    if key not in _CHI2_TABLE:
        _CHI2_TABLE[key] = float(chi2_dist.ppf(confidence, dof))
    return _CHI2_TABLE[key]


def _chi2_gate(state: FilterState, H: np.ndarray, r: np.ndarray, dof: int) -> bool:
    if state.cfg.chi2_scale == np.inf:
        return True
    if state.cfg.chi2_scale <= 0.0:
        return False
    S = H @ state.cov @ H.T + state.cfg.sigma_px**2 * np.eye(H.shape[0])
    gamma = float(r @ np.linalg.solve(S, r))
    threshold = _chi2_threshold(state.cfg.chi2_confidence, max(dof, 1)) * state.cfg.chi2_scale
    return gamma < threshold


def _ekf_update(state: FilterState, H: np.ndarray, r: np.ndarray) -> None:
    """Standard EKF step with isotropic pixel noise, Joseph-form covariance."""
    if H.shape[0] == 0:
        return
    d = state.dim()
    # compress tall stacks: an orthogonal transform preserves the iid noise
    if H.shape[0] > d:
        Q1, R1 = np.linalg.qr(H, mode="reduced")
        keep = np.abs(np.diag(R1)) > 1e-12 * max(1.0, np.abs(R1).max())
        H = R1[keep]
        r = (Q1.T @ r)[keep]
    sigma2 = state.cfg.sigma_px**2
    S = H @ state.cov @ H.T + sigma2 * np.eye(H.shape[0])
    K = np.linalg.solve(S, H @ state.cov).T
    dx = K @ r
    IKH = np.eye(d) - K @ H
    state.cov = IKH @ state.cov @ IKH.T + sigma2 * (K @ K.T)
    state.symmetrize()
    state.apply_correction(dx)
    state.check_dimensions()


def msckf_update(
    state: FilterState, dead_tracks: list[FeatureTrack], budget: UpdateBudget
) -> FilterState:
    """Consume out-of-state tracks via left null-space projection."""
    used = 0
    H_rows = []
    r_rows = []
    cam_poses = camera_poses_now(state.clones, state.calib)
    for track in sorted(dead_tracks, key=lambda t: t.id):
        if used >= budget.max_msckf:
            break
        try:
            lm = triangulate(
                track, state.clones, state.calib, state.cfg.min_baseline_deg,
                cam_poses=cam_poses,
            )
            r, H_x, H_f, m = _stack_track_rows(state, track, lm.position, cam_poses)
        except (InsufficientBaseline, BehindCamera, NoConvergence, NonPositiveDepth):
            continue
        if m < 2:
            continue
        Q, _ = scipy_qr(H_f, mode="full")
        N = Q[:, 3:]
        ns_residual = float(np.linalg.norm(N.T @ H_f))
        state.checks.max_nullspace_residual = max(
            state.checks.max_nullspace_residual, ns_residual
        )
        H_o = N.T @ H_x
        r_o = N.T @ r
        if not _chi2_gate(state, H_o, r_o, 2 * m - 3):
            continue
        H_rows.append(H_o)
        r_rows.append(r_o)
        used += 1
    state.checks.max_msckf_in_update = max(state.checks.max_msckf_in_update, used)
    if H_rows:
        _ekf_update(state, np.vstack(H_rows), np.concatenate(r_rows))
    return state


def slam_update(
    state: FilterState,
    in_state_tracks: list[FeatureTrack],
    budget: UpdateBudget,
    frame_index: int,
) -> FilterState:
    """Update existing in-state landmarks, then initialize promotions."""
    # (a) per-feature EKF rows for landmarks observed this frame
    H_rows = []
    r_rows = []
    participating = 0
    inconsistent = []
    by_id = {t.id: t for t in in_state_tracks}
    cam_poses = camera_poses_now(state.clones, state.calib)
    for tid, lm in list(state.slam.items()):
        track = by_id.get(tid)
        if track is None or track.last_frame() != frame_index:
            continue
        if participating >= budget.max_slam:
            break
        z = track.last_position()
        clone = state.clones[frame_index]
        cam_now = cam_poses[frame_index]
        try:
            pred, H_f, H_clone, H_calib = _observation_jacobians(
                state, clone, lm.position if not state.cfg.use_fej else lm.fej, cam_now
            )
            # residual must use the current estimate even under FEJ
            if state.cfg.use_fej:
                pred = project(lm.position, cam_now, state.calib)
        except NonPositiveDepth:
            # a claimed observation of a landmark behind the camera is
            # geometrically inconsistent: retire it after the batch update
            # (removing now would shift the column offsets already built)
            inconsistent.append(tid)
            continue
        r = np.asarray(z, dtype=float) - pred
        d = state.dim()
        H = np.zeros((2, d))
        off_c = state.clone_offset(frame_index)
        H[:, off_c:off_c + CLONE_DIM] = H_clone
        off_f = state.slam_offset(tid)
        H[:, off_f:off_f + LANDMARK_DIM] = H_f
        if H_calib is not None:
            c = state.calib_offset()
            H[:, c:c + CALIB_DIM] = H_calib
        if not _chi2_gate(state, H, r, 2):
            continue
        H_rows.append(H)
        r_rows.append(r)
        lm.last_seen_frame = frame_index
        participating += 1
    state.checks.max_slam_in_update = max(state.checks.max_slam_in_update, participating)
    if H_rows:
        _ekf_update(state, np.vstack(H_rows), np.concatenate(r_rows))
    for tid in inconsistent:
        state.remove_landmark(tid)

    # (b) delayed initialization of newly promoted tracks
    capacity = budget.max_slam - len(state.slam)
    for track in sorted(in_state_tracks, key=lambda t: t.id):
        if capacity <= 0:
            break
        if track.id in state.slam or track.status is not TrackStatus.OUT_OF_STATE:
            continue
        if frame_index < track.retry_after:
            continue
        try:
            lm = triangulate(
                track, state.clones, state.calib, state.cfg.min_baseline_deg,
                cam_poses=cam_poses,
            )
            r, H_x, H_f, m = _stack_track_rows(state, track, lm.position, cam_poses)
        except (InsufficientBaseline, BehindCamera, NoConvergence, NonPositiveDepth):
            track.retry_after = frame_index + 5
            continue
        if m < 2:
            continue
        Q, R_full = scipy_qr(H_f, mode="full")
        R1 = R_full[:3, :]
        if np.abs(np.diag(R1)).min() < 1e-9 * max(1.0, np.abs(R1).max()):
            continue
        r1 = Q[:, :3].T @ r
        Hx1 = Q[:, :3].T @ H_x
        R1_inv = np.linalg.inv(R1)
        M = -R1_inv @ Hx1
        sigma2 = state.cfg.sigma_px**2
        cov_ff = M @ state.cov @ M.T + sigma2 * (R1_inv @ R1_inv.T)
        cov_fx = M @ state.cov
        position = lm.position + R1_inv @ r1
        state.add_landmark(track.id, position, position, cov_ff, cov_fx, frame_index)
        track.mark_in_state()
        capacity -= 1
        # leftover rows are landmark-free: consume them as a plain update
        if 2 * m > 3:
            N = Q[:, 3:]
            H_o = np.hstack([N.T @ H_x, np.zeros((2 * m - 3, LANDMARK_DIM))])
            r_o = N.T @ r
            if _chi2_gate(state, H_o, r_o, 2 * m - 3):
                _ekf_update(state, H_o, r_o)
    return state


@dataclass
class FrameResult:
    t: float
    position: np.ndarray
    orientation: UnitQuaternion
    trace: float
    pos_sigma: float
    rot_sigma: float
    live_tracks: int = 0
    slam_count: int = 0
    msckf_used: int = 0


def _paranoid(state: FilterState) -> None:
    state.check_dimensions()
    asym = float(np.abs(state.cov - state.cov.T).max())
    state.checks.max_asymmetry = max(state.checks.max_asymmetry, asym)
    evals = np.linalg.eigvalsh(0.5 * (state.cov + state.cov.T))
    state.checks.min_eigenvalue = min(state.checks.min_eigenvalue, float(evals.min()))


def process_frame(
    state: FilterState,
    table: TrackTable,
    imu_segment,
    noise: NoiseParams,
    frame_index: int,
    t: float,
) -> FrameResult:
    """One filter cycle: propagate, clone, update, marginalize.

    ``imu_segment`` must cover the interval up to ``t``; the track table
    must already contain this frame's observations.
    """
    cfg = state.cfg
    if len(imu_segment) >= 2:
        new_nav, Phi, Q = propagate_block(
            state.nav, imu_segment, noise, integration=cfg.integration
        )
        state.nav = new_nav
        n = ERROR_STATE_DIM
        P = state.cov
        P[:n, :n] = Phi @ P[:n, :n] @ Phi.T + Q
        P[:n, n:] = Phi @ P[:n, n:]
        P[n:, :n] = P[:n, n:].T
        state.symmetrize()

    state.clone_pose(frame_index, defer_marginalization=True)

    promote_ids, msckf_ids = classify_tracks(table, cfg.max_clones, cfg.min_msckf_len)
    # dead tracks at or beyond the window length are equally usable
    msckf_ids = set(msckf_ids)
    for tid in table.just_died:
        if table.tracks[tid].length() >= cfg.max_clones:
            msckf_ids.add(tid)
    # live unpromoted tracks about to lose their oldest observation are
    # consumed now and retired (standard window-exit behavior)
    oldest_frame = min(state.clones)
    promote_set = set(promote_ids)
    for tr in table.live():
        if (
            tr.status is TrackStatus.OUT_OF_STATE
            and tr.id not in promote_set
            and tr.length() >= cfg.max_clones
            and tr.observations[0][0] <= oldest_frame
        ):
            tr.mark_dead("window-exit")
            msckf_ids.add(tr.id)

    promotions = [table.tracks[tid] for tid in promote_ids]
    dead_tracks = [table.tracks[tid] for tid in sorted(msckf_ids)]
    in_state_live = [
        t2 for t2 in table.live() if t2.status is TrackStatus.IN_STATE
    ] + promotions

    if cfg.slam_before_msckf:
        slam_update(state, in_state_live, cfg.budget, frame_index)
        msckf_update(state, dead_tracks, cfg.budget)
    else:
        msckf_update(state, dead_tracks, cfg.budget)
        slam_update(state, in_state_live, cfg.budget, frame_index)

    while len(state.clones) > cfg.max_clones:
        state.marginalize_clone(min(state.clones))
    state.checks.max_clone_count = max(state.checks.max_clone_count, len(state.clones))

    for tid in [k for k, lm in state.slam.items()
                if lm.last_seen_frame < frame_index - cfg.slam_stale_frames]:
        state.remove_landmark(tid)
        if tid in table.tracks:
            table.tracks[tid].mark_dead("stale")

    # tracks promoted to landmarks that died stop updating; drop their state
    for tid in [k for k in state.slam if k in table.tracks
                and table.tracks[k].status is TrackStatus.DEAD]:
        state.remove_landmark(tid)

    table.prune_dead(keep_ids=state.slam.keys())

    if cfg.paranoid_checks:
        _paranoid(state)

    pos_var = np.trace(state.cov[3:6, 3:6])
    rot_var = np.trace(state.cov[0:3, 0:3])
    return FrameResult(
        t=t,
        position=state.nav.position.copy(),
        orientation=state.nav.orientation,
        trace=float(np.trace(state.cov)),
        pos_sigma=float(np.sqrt(max(pos_var, 0.0))),
        rot_sigma=float(np.sqrt(max(rot_var, 0.0))),
        live_tracks=table.live_count(),
        slam_count=len(state.slam),
        msckf_used=len(dead_tracks),
    )
