"""Rotation, pose, and camera-projection primitives.

Conventions used throughout the package:

* Quaternions are stored scalar-last as ``[x, y, z, w]`` and represent the
  rotation from the global frame G into a local frame (body or camera).
  Composition is defined so that ``R(a * b) = R(a) @ R(b)``.
* ``Pose.orientation`` maps global vectors into the pose's frame and
  ``Pose.position`` is the frame origin expressed in G, so a world point
  ``p`` has frame coordinates ``R(q) @ (p - position)``.
* Pixel coordinates are ``(u, v)`` with ``u`` along columns and ``v`` along
  rows of the 256x256 maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SMALL_ANGLE = 1e-8


class NonPositiveDepth(ValueError):
    """Raised when a point to be projected sits at or behind the camera."""


def skew(v: np.ndarray) -> np.ndarray:
    """Return the 3x3 cross-product matrix of ``v``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rotation matrix exp([phi]x) via Rodrigues, Taylor fallback near zero."""
    angle = float(np.linalg.norm(phi))
    K = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R`` (inverse of :func:`so3_exp`)."""
    cos_angle = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = float(np.arccos(cos_angle))
    if angle < SMALL_ANGLE:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle > np.pi - 1e-6:
        # Near pi the off-diagonal form degenerates; use the symmetric part.
        A = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        # Fix signs from the largest component.
        k = int(np.argmax(axis))
        if axis[k] > 0.0:
            signs = np.sign(A[k, :] / axis[k])
            signs[signs == 0.0] = 1.0
            axis = axis * signs * np.sign(axis[k])
        return axis / max(np.linalg.norm(axis), 1e-12) * angle
    return angle / (2.0 * np.sin(angle)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian Jr(phi) with exp(phi + d) = exp(phi) exp(Jr d)."""
    angle = float(np.linalg.norm(phi))
    K = skew(phi)
    if angle < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        - (1.0 - np.cos(angle)) / a2 * K
        + (angle - np.sin(angle)) / (a2 * angle) * (K @ K)
    )


# Array-level quaternion helpers (scalar-last, global-to-local).  These are
# the hot-path primitives; UnitQuaternion wraps them for the public types.


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(q))
    if n < 1e-15:
        raise ValueError("cannot normalize zero quaternion")
    q = q / n
    if q[3] < 0.0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Compose rotations so that R(a*b) = R(a) @ R(b)."""
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + az * by - ay * bz + ax * bw,
            -az * bx + aw * by + ax * bz + ay * bw,
            ay * bx - ax * by + aw * bz + az * bw,
            -ax * bx - ay * by - az * bz + aw * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix mapping global vectors into the local frame."""
    x, y, z, w = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - 2.0 * (yy + zz)
    out[0, 1] = 2.0 * (xy + wz)
    out[0, 2] = 2.0 * (xz - wy)
    out[1, 0] = 2.0 * (xy - wz)
    out[1, 1] = 1.0 - 2.0 * (xx + zz)
    out[1, 2] = 2.0 * (yz + wx)
    out[2, 0] = 2.0 * (xz + wy)
    out[2, 1] = 2.0 * (yz - wx)
    out[2, 2] = 1.0 - 2.0 * (xx + yy)
    return out


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Quaternion of a global-to-local rotation matrix."""
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (R[1, 2] - R[2, 1]) / s
        y = (R[2, 0] - R[0, 2]) / s
        z = (R[0, 1] - R[1, 0]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w = (R[1, 2] - R[2, 1]) / s
        x = 0.25 * s
        y = (R[0, 1] + R[1, 0]) / s
        z = (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w = (R[2, 0] - R[0, 2]) / s
        x = (R[0, 1] + R[1, 0]) / s
        y = 0.25 * s
        z = (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w = (R[0, 1] - R[1, 0]) / s
        x = (R[0, 2] + R[2, 0]) / s
        y = (R[1, 2] + R[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([x, y, z, w]))


def quat_from_axis_angle(phi: np.ndarray) -> np.ndarray:
    """Quaternion with R(q) = exp(-[phi]x), i.e. the local frame rotated by phi."""
    angle = float(np.linalg.norm(phi))
    if angle < SMALL_ANGLE:
        q = np.array([0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2], 1.0])
        return quat_normalize(q)
    axis = phi / angle
    half = 0.5 * angle
    s = np.sin(half)
    return quat_normalize(np.array([axis[0] * s, axis[1] * s, axis[2] * s, np.cos(half)]))


def quat_integrate_array(q: np.ndarray, omega: np.ndarray, dt: float) -> np.ndarray:
    """Advance a global-to-local quaternion by body rate ``omega`` over ``dt``."""
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    return quat_normalize(quat_multiply(quat_from_axis_angle(np.asarray(omega) * dt), q))


@dataclass(frozen=True)
class UnitQuaternion:
    """Unit quaternion (scalar-last) rotating global vectors into a local frame."""

    xyzw: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.xyzw, dtype=float))
        object.__setattr__(self, "xyzw", q)

    @property
    def x(self) -> float:
        return float(self.xyzw[0])

    @property
    def y(self) -> float:
        return float(self.xyzw[1])

    @property
    def z(self) -> float:
        return float(self.xyzw[2])

    @property
    def w(self) -> float:
        return float(self.xyzw[3])

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion()

    @staticmethod
    def from_axis_angle(phi: np.ndarray) -> "UnitQuaternion":
        return UnitQuaternion(quat_from_axis_angle(np.asarray(phi, dtype=float)))

    @staticmethod
    def from_matrix(R: np.ndarray) -> "UnitQuaternion":
        return UnitQuaternion(quat_from_matrix(np.asarray(R, dtype=float)))

    def to_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.xyzw)

    def multiply(self, other: "UnitQuaternion") -> "UnitQuaternion":
        return UnitQuaternion(quat_multiply(self.xyzw, other.xyzw))

    def conjugate(self) -> "UnitQuaternion":
        return UnitQuaternion(quat_conjugate(self.xyzw))

    def rotate(self, v: np.ndarray) -> np.ndarray:
        """Express a global vector in the local frame."""
        return self.to_matrix() @ np.asarray(v, dtype=float)

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic angle in radians between the two rotations."""
        rel = quat_multiply(self.xyzw, quat_conjugate(other.xyzw))
        return 2.0 * float(np.arctan2(np.linalg.norm(rel[:3]), abs(rel[3])))


def quat_integrate(q: UnitQuaternion, omega: np.ndarray, dt: float) -> UnitQuaternion:
    """Integrate the attitude kinematics for a constant body rate over ``dt``."""
    return UnitQuaternion(quat_integrate_array(q.xyzw, omega, dt))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``orientation`` maps G into the frame, ``position`` in G."""

    orientation: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "_rotation_cache", None)

    def rotation(self) -> np.ndarray:
        if self._rotation_cache is None:
            object.__setattr__(self, "_rotation_cache", self.orientation.to_matrix())
        return self._rotation_cache

    def transform_point(self, p_global: np.ndarray) -> np.ndarray:
        """Coordinates of a global point in this pose's frame."""
        return self.rotation() @ (np.asarray(p_global, dtype=float) - self.position)

    def inverse_transform_point(self, p_local: np.ndarray) -> np.ndarray:
        """Global coordinates of a point given in this pose's frame."""
        return self.rotation().T @ np.asarray(p_local, dtype=float) + self.position

    def compose(self, inner: "Pose") -> "Pose":
        """Pose mapping global coords through ``inner`` then ``self``.

        Interpreting poses as frame definitions: if ``inner`` is frame A in G
        and ``self`` is frame B in A, the result is frame B in G.
        """
        q = self.orientation.multiply(inner.orientation)
        p = inner.position + inner.rotation().T @ self.position
        return Pose(q, p)

    def inverse(self) -> "Pose":
        q_inv = self.orientation.conjugate()
        return Pose(q_inv, -self.rotation() @ self.position)


@dataclass(frozen=True)
class Landmark3D:
    """Point landmark expressed in the global frame."""

    position: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        if not np.all(np.isfinite(p)):
            raise ValueError("landmark position must be finite")
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole intrinsics with radial-tangential distortion and IMU extrinsics.

    ``extrinsic.orientation`` maps IMU-frame vectors into the camera frame and
    ``extrinsic.position`` is the camera origin expressed in the IMU frame.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(4))
    extrinsic: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "distortion", np.asarray(self.distortion, dtype=float))

    def intrinsic_vector(self) -> np.ndarray:
        """(fx, fy, cx, cy, k1, k2, p1, p2) as one error-state block."""
        return np.concatenate(([self.fx, self.fy, self.cx, self.cy], self.distortion))

    @staticmethod
    def from_intrinsic_vector(vec: np.ndarray, extrinsic: Pose) -> "CameraCalibration":
        vec = np.asarray(vec, dtype=float)
        return CameraCalibration(
            fx=float(vec[0]), fy=float(vec[1]), cx=float(vec[2]), cy=float(vec[3]),
            distortion=vec[4:8].copy(), extrinsic=extrinsic,
        )


MIN_PROJECTION_DEPTH = 1e-6


def to_camera_frame(point: np.ndarray, cam_pose: Pose) -> np.ndarray:
    """Stage one of the projection chain: global point to camera coordinates."""
    return cam_pose.transform_point(point)


def project_normalized(p_cam: np.ndarray) -> np.ndarray:
    """Stage two: perspective division onto the normalized image plane."""
    z = p_cam[2]
    if z <= MIN_PROJECTION_DEPTH:
        raise NonPositiveDepth(f"camera-frame depth {z:.3e} <= {MIN_PROJECTION_DEPTH}")
    return np.array([p_cam[0] / z, p_cam[1] / z])


def distort(xn: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """Stage three: radial-tangential distortion of normalized coordinates."""
    k1, k2, p1, p2 = calib.distortion
    x, y = xn
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.array([xd, yd])


def to_pixels(xd: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """Stage four: distorted normalized coordinates to pixels."""
    return np.array([calib.fx * xd[0] + calib.cx, calib.fy * xd[1] + calib.cy])


def project(point: Landmark3D | np.ndarray, cam_pose: Pose, calib: CameraCalibration) -> np.ndarray:
    """Project a global 3D point through the full four-stage chain."""
    p = point.position if isinstance(point, Landmark3D) else np.asarray(point, dtype=float)
    return to_pixels(distort(project_normalized(to_camera_frame(p, cam_pose)), calib), calib)


def undistort(pixel: np.ndarray, calib: CameraCalibration, iters: int = 20) -> np.ndarray:
    """Normalized coordinates for a pixel, inverting distortion by fixed point."""
    return undistort_batch(np.asarray(pixel, dtype=float)[None, :], calib, iters)[0]


def undistort_batch(pixels: np.ndarray, calib: CameraCalibration, iters: int = 20) -> np.ndarray:
    """Vectorized distortion inversion for an (N, 2) pixel array."""
    pixels = np.asarray(pixels, dtype=float)
    xd = np.column_stack(
        [(pixels[:, 0] - calib.cx) / calib.fx, (pixels[:, 1] - calib.cy) / calib.fy]
    )
    xn = xd.copy()
    k1, k2, p1, p2 = calib.distortion
    for _ in range(iters):
        x = xn[:, 0]
        y = xn[:, 1]
        r2 = x * x + y * y
        radial = 1.0 + k1 * r2 + k2 * r2 * r2
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        xn = np.column_stack([(xd[:, 0] - dx) / radial, (xd[:, 1] - dy) / radial])
    return xn


def distortion_jacobian(xn: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """d(distorted)/d(normalized), 2x2."""
    k1, k2, p1, p2 = calib.distortion
    x, y = xn
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    dradial_dx = 2.0 * x * (k1 + 2.0 * k2 * r2)
    dradial_dy = 2.0 * y * (k1 + 2.0 * k2 * r2)
    j00 = radial + x * dradial_dx + 2.0 * p1 * y + 6.0 * p2 * x
    j01 = x * dradial_dy + 2.0 * p1 * x + 2.0 * p2 * y
    j10 = y * dradial_dx + 2.0 * p1 * x + 2.0 * p2 * y
    j11 = radial + y * dradial_dy + 6.0 * p1 * y + 2.0 * p2 * x
    return np.array([[j00, j01], [j10, j11]])


def intrinsics_jacobian(xn: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """d(pixel)/d(fx, fy, cx, cy, k1, k2, p1, p2), 2x8."""
    xd = distort(xn, calib)
    x, y = xn
    r2 = x * x + y * y
    # Distorted coords are linear in each distortion coefficient.
    dxd_dk = np.array([[x * r2, x * r2 * r2, 2.0 * x * y, r2 + 2.0 * x * x],
                       [y * r2, y * r2 * r2, r2 + 2.0 * y * y, 2.0 * x * y]])
    J = np.zeros((2, 8))
    J[0, 0] = xd[0]
    J[1, 1] = xd[1]
    J[0, 2] = 1.0
    J[1, 3] = 1.0
    J[0, 4:8] = calib.fx * dxd_dk[0]
    J[1, 4:8] = calib.fy * dxd_dk[1]
    return J


def projection_jacobian_point(p_cam: np.ndarray, calib: CameraCalibration) -> np.ndarray:
    """d(pixel)/d(camera-frame point), 2x3, through stages two to four."""
    z = p_cam[2]
    if z <= MIN_PROJECTION_DEPTH:
        raise NonPositiveDepth(f"camera-frame depth {z:.3e} <= {MIN_PROJECTION_DEPTH}")
    xn = np.array([p_cam[0] / z, p_cam[1] / z])
    d_norm = np.array([[1.0 / z, 0.0, -p_cam[0] / (z * z)],
                       [0.0, 1.0 / z, -p_cam[1] / (z * z)]])
    K = np.array([[calib.fx, 0.0], [0.0, calib.fy]])
    return K @ distortion_jacobian(xn, calib) @ d_norm


def project_batch(
    points: np.ndarray,
    cam_pose: Pose,
    calib: CameraCalibration,
    min_depth: float = 0.05,
    max_normalized_radius: float = 2.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Project many global points at once.

    Returns ``(pixels, valid)``; entries with depth below ``min_depth`` or
    wild normalized coordinates are flagged invalid (their pixel values are
    unspecified).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    R = cam_pose.rotation()
    pc = (pts - cam_pose.position) @ R.T
    valid = pc[:, 2] > min_depth
    z = np.where(valid, pc[:, 2], 1.0)
    x = pc[:, 0] / z
    y = pc[:, 1] / z
    r2 = x * x + y * y
    valid &= r2 < max_normalized_radius**2
    k1, k2, p1, p2 = calib.distortion
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    px = np.column_stack([calib.fx * xd + calib.cx, calib.fy * yd + calib.cy])
    return px, valid


def project_jacobians(
    point: Landmark3D | np.ndarray, cam_pose: Pose, calib: CameraCalibration
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic Jacobians of :func:`project`.

    Returns ``(J_point, J_pose, J_calib)`` where ``J_point`` is 2x3 with
    respect to the global point, ``J_pose`` is 2x6 with respect to the pose
    error ``(dtheta, dposition)`` defined by ``q = dq(dtheta) * q_hat`` and
    ``p = p_hat + dposition``, and ``J_calib`` is 2x8 with respect to
    ``(fx, fy, cx, cy, k1, k2, p1, p2)``.
    """
    p = point.position if isinstance(point, Landmark3D) else np.asarray(point, dtype=float)
    R = cam_pose.rotation()
    p_cam = R @ (p - cam_pose.position)
    J_proj = projection_jacobian_point(p_cam, calib)
    z = p_cam[2]
    xn = np.array([p_cam[0] / z, p_cam[1] / z])

    J_point = J_proj @ R
    J_pose = np.zeros((2, 6))
    # q = dq(dtheta) * q_hat gives R = (I - [dtheta]x) R_hat, so the
    # camera-frame point moves by [R(p - pos)]x dtheta = [p_cam]x dtheta.
    J_pose[:, 0:3] = J_proj @ skew(p_cam)
    J_pose[:, 3:6] = -J_proj @ R
    J_calib = intrinsics_jacobian(xn, calib)
    return J_point, J_pose, J_calib
