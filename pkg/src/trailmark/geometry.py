"""Rigid transforms, poses, pinhole projection and spherical coordinates.

Conventions
-----------
* Quaternions are stored as ``(x, y, z, w)`` and always kept at unit norm.
* ``RigidTransform`` named ``a_from_b`` maps points expressed in frame *b*
  into frame *a*: ``p_a = R p_b + t``.
* Body frame: x forward, y left, z up.  Camera frame: x right, y down,
  z along the optical axis.
* Pixel ``(col, row)`` has its centre at integer coordinates ``(u, v) =
  (col, row)``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import BehindCamera, ConfigError, DegeneratePoint, OutOfRange

_QUAT_TOL = 1e-9


# --------------------------------------------------------------------------
# quaternion helpers
# --------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("quaternion has zero or non-finite norm")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([-q[0], -q[1], -q[2], q[3]], dtype=float)


def quat_to_matrix(q) -> np.ndarray:
    x, y, z, w = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s,
             (m[1, 0] - m[0, 1]) / s, 0.25 * s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [0.25 * s, (m[0, 1] + m[1, 0]) / s,
             (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 1] + m[1, 0]) / s, 0.25 * s,
             (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s,
             0.25 * s, (m[1, 0] - m[0, 1]) / s]
    return quat_normalize(q)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    s = math.sin(angle / 2.0)
    return np.array([axis[0] * s, axis[1] * s, axis[2] * s, math.cos(angle / 2.0)])


def quat_from_yaw(yaw: float) -> np.ndarray:
    return quat_from_axis_angle((0.0, 0.0, 1.0), yaw)


def yaw_of(q) -> float:
    """Heading of the body x axis projected onto the world xy plane."""
    r = quat_to_matrix(q)
    return math.atan2(r[1, 0], r[0, 0])


def slerp(q0, q1, s: float) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    q1 = np.asarray(q1, dtype=float)
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 1.0 - 1e-12:
        return quat_normalize(q0 + s * (q1 - q0))
    omega = math.acos(min(dot, 1.0))
    so = math.sin(omega)
    return (math.sin((1.0 - s) * omega) / so) * q0 + (math.sin(s * omega) / so) * q1


# --------------------------------------------------------------------------
# rigid transforms and poses
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("rigid transform must be finite")
        if abs(np.linalg.norm(q) - 1.0) > _QUAT_TOL:
            q = quat_normalize(q)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "RigidTransform":
        return cls(translation=np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(quat_from_matrix(m[:3, :3]), m[:3, 3])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform a single 3-vector or an ``(N, 3)`` array."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation_matrix.T + self.translation

    def inverse(self) -> "RigidTransform":
        q_inv = quat_conjugate(self.rotation)
        return RigidTransform(q_inv, -(quat_to_matrix(q_inv) @ self.translation))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        same_rot = (np.allclose(self.rotation, other.rotation, atol=atol)
                    or np.allclose(self.rotation, -other.rotation, atol=atol))
        return same_rot and np.allclose(self.translation, other.translation, atol=atol)

    def __repr__(self) -> str:
        return (f"RigidTransform(rotation={self.rotation.tolist()}, "
                f"translation={self.translation.tolist()})")


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a ∘ b``: applying the result equals applying *b* then *a*."""
    q = quat_normalize(quat_multiply(a.rotation, b.rotation))
    t = a.rotation_matrix @ b.translation + a.translation
    return RigidTransform(q, t)


@dataclass(frozen=True, eq=False)
class Pose:
    """Vehicle body pose in the world frame at one instant."""

    timestamp: float
    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        if not math.isfinite(self.timestamp):
            raise ValueError("pose timestamp must be finite")
        tf = RigidTransform(self.rotation, self.translation)
        object.__setattr__(self, "timestamp", float(self.timestamp))
        object.__setattr__(self, "translation", tf.translation)
        object.__setattr__(self, "rotation", tf.rotation)

    @property
    def world_from_body(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.translation)

    @classmethod
    def planar(cls, timestamp: float, x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        return cls(timestamp, np.array([x, y, z]), quat_from_yaw(yaw))


def interpolate_pose(poses: Sequence[Pose], t: float) -> Pose:
    """Pose at time *t*: lerp on translation, slerp on rotation."""
    if not poses:
        raise OutOfRange("empty pose log")
    times = [p.timestamp for p in poses]
    if t < times[0] or t > times[-1]:
        raise OutOfRange(f"t={t!r} outside pose log [{times[0]!r}, {times[-1]!r}]")
    i = bisect.bisect_left(times, t)
    if times[i] == t:
        return poses[i]
    p0, p1 = poses[i - 1], poses[i]
    s = (t - p0.timestamp) / (p1.timestamp - p0.timestamp)
    trans = p0.translation + s * (p1.translation - p0.translation)
    return Pose(t, trans, slerp(p0.rotation, p1.rotation, s))


# --------------------------------------------------------------------------
# camera
# --------------------------------------------------------------------------

class ImagePoint(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True, eq=False)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=RigidTransform)  # camera <- body

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError("camera focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ConfigError("camera image size must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def camera_from_world(self, pose: Pose) -> RigidTransform:
        return compose(self.extrinsic, pose.world_from_body.inverse())

    def world_from_camera(self, pose: Pose) -> RigidTransform:
        return self.camera_from_world(pose).inverse()

    def in_bounds(self, u, v):
        """Whether (u, v) falls inside the area covered by some pixel."""
        u = np.asarray(u)
        v = np.asarray(v)
        return ((u >= -0.5) & (u <= self.width - 0.5)
                & (v >= -0.5) & (v <= self.height - 0.5))

    def pixel_rays(self) -> np.ndarray:
        """Unnormalised camera-frame ray direction through every pixel centre, ``(H, W, 3)``."""
        u, v = np.meshgrid(np.arange(self.width, dtype=float),
                           np.arange(self.height, dtype=float))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy,
                         np.ones_like(u)], axis=-1)


def forward_camera_extrinsic(mount, pitch: float = 0.0) -> RigidTransform:
    """camera<-body transform for a camera at *mount* (body frame) looking
    along body +x, pitched down by *pitch* radians."""
    # rows: camera axes expressed in body coordinates
    base = np.array([[0.0, -1.0, 0.0],    # cam x = -body y
                     [0.0, 0.0, -1.0],    # cam y = -body z
                     [1.0, 0.0, 0.0]])    # cam z = body x
    c, s = math.cos(pitch), math.sin(pitch)
    pitch_down = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    r_cb = pitch_down @ base
    mount = np.asarray(mount, dtype=float)
    return RigidTransform(quat_from_matrix(r_cb), -(r_cb @ mount))


def project(camera: CameraModel, point_camera_frame) -> ImagePoint:
    x, y, z = (float(c) for c in point_camera_frame)
    if not z > 0.0:
        raise BehindCamera(f"point depth {z!r} is not positive")
    return ImagePoint(camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy)


def project_points(camera: CameraModel, points_camera_frame) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`project`.

    Returns ``(uv, valid)`` where rows with ``valid == False`` (depth <= 0)
    hold NaN.
    """
    p = np.atleast_2d(np.asarray(points_camera_frame, dtype=float))
    z = p[:, 2]
    valid = z > 0.0
    uv = np.full((len(p), 2), np.nan)
    zv = z[valid]
    uv[valid, 0] = camera.fx * p[valid, 0] / zv + camera.cx
    uv[valid, 1] = camera.fy * p[valid, 1] / zv + camera.cy
    return uv, valid


def project_world(camera: CameraModel, pose: Pose, points_world) -> tuple[np.ndarray, np.ndarray]:
    """World points -> pixels: world to body, body to camera, then pinhole."""
    return project_points(camera, camera.camera_from_world(pose).apply(points_world))


# --------------------------------------------------------------------------
# spherical coordinates
# --------------------------------------------------------------------------

class SphericalPoint(NamedTuple):
    azimuth: float
    elevation: float
    radius: float


def spherical_coords(points) -> np.ndarray:
    """``(N, 3)`` camera-frame points -> ``(N, 3)`` of (azimuth, elevation, radius).

    azimuth = atan2(x, z) in (-pi, pi], elevation = atan2(-y, hypot(x, z)).
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    az = np.arctan2(x, z)
    az = np.where(az == -np.pi, np.pi, az)
    el = np.arctan2(-y, np.hypot(x, z))
    r = np.sqrt(x * x + y * y + z * z)
    return np.stack([az, el, r], axis=-1)


def to_spherical(point) -> SphericalPoint:
    p = np.asarray(point, dtype=float)
    if not np.any(p):
        raise DegeneratePoint("point at the origin has no direction")
    az, el, r = spherical_coords(p)[0]
    return SphericalPoint(float(az), float(el), float(r))


def to_cartesian(sp) -> np.ndarray:
    az, el, r = sp
    ce = math.cos(el)
    return np.array([r * ce * math.sin(az), -r * math.sin(el), r * ce * math.cos(az)])


def directions_from_angles(azimuth, elevation) -> np.ndarray:
    """Unit camera-frame directions for arrays of azimuth/elevation."""
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    ce = np.cos(el)
    return np.stack([ce * np.sin(az), -np.sin(el), ce * np.cos(az)], axis=-1)
