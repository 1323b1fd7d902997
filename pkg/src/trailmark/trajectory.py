"""Front-wheel contact lines and their projection into past camera frames."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientPoses
from .geometry import CameraModel, ImagePoint, Pose, RigidTransform, interpolate_pose, project_points

# slack when checking that the pose log covers a window given float sample times
_COVER_EPS = 1e-9


class Wheel(enum.Enum):
    FRONT_LEFT = "front_left"
    FRONT_RIGHT = "front_right"


@dataclass(frozen=True)
class WheelGeometry:
    """Static base_link -> wheel-contact-centre transforms of the front wheels.

    The contact region is a segment of length ``wheel_width`` centred on the
    contact centre and running along the wheel's lateral (y) axis.
    """

    front_left: RigidTransform
    front_right: RigidTransform
    wheel_width: float

    def __post_init__(self):
        if not self.wheel_width > 0:
            raise ConfigError("wheel_width must be positive")

    def transforms(self) -> dict:
        return {Wheel.FRONT_LEFT: self.front_left, Wheel.FRONT_RIGHT: self.front_right}

    @classmethod
    def symmetric(cls, x: float, half_track: float, width: float, z: float = 0.0) -> "WheelGeometry":
        return cls(RigidTransform.from_translation(x, half_track, z),
                   RigidTransform.from_translation(x, -half_track, z), width)


@dataclass(frozen=True)
class ProjectionWindow:
    rate: float = 10.0
    horizon: float = 4.0

    def __post_init__(self):
        if not (self.rate > 0 and self.horizon > 0):
            raise ConfigError("projection window rate and horizon must be positive")

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.horizon * self.rate + 1e-9)) + 1

    def sample_times(self, t: float) -> np.ndarray:
        return t + np.arange(self.n_samples) / self.rate


@dataclass(frozen=True, eq=False)
class WheelContactSample:
    timestamp: float
    wheel: Wheel
    inner_point: np.ndarray
    outer_point: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.inner_point + self.outer_point)


@dataclass(frozen=True, eq=False)
class ProjectedSample:
    """One wheel-contact sample seen from the camera at the frame time.

    ``*_cam`` are the endpoints in that camera frame; flags are per endpoint
    so that occlusion can be evaluated for every wheel point separately.
    """

    contact: WheelContactSample
    inner: ImagePoint
    outer: ImagePoint
    inner_cam: np.ndarray
    outer_cam: np.ndarray
    inner_in_frustum: bool
    outer_in_frustum: bool
    inner_occluded: bool = False
    outer_occluded: bool = False

    @property
    def in_frustum(self) -> bool:
        return self.inner_in_frustum and self.outer_in_frustum

    @property
    def occluded(self) -> bool:
        return self.inner_occluded or self.outer_occluded

    @property
    def usable(self) -> bool:
        return self.in_frustum and not self.occluded


@dataclass(frozen=True)
class ProjectedTrajectory:
    frame_timestamp: float
    tracks: dict = field(default_factory=dict)  # Wheel -> tuple[ProjectedSample, ...]

    def wheel_points(self):
        """Yield ``(wheel, sample_index, endpoint, sample)`` in a fixed order.

        Order: left then right wheel, increasing time, inner then outer.  The
        position in this sequence is the ``sample_index`` used by the
        occlusion flag files.
        """
        for wheel in Wheel:
            for k, s in enumerate(self.tracks.get(wheel, ())):
                yield wheel, k, "inner", s
                yield wheel, k, "outer", s

    def with_tracks(self, tracks: dict) -> "ProjectedTrajectory":
        return replace(self, tracks=tracks)


def wheel_contacts(pose: Pose, geom: WheelGeometry) -> dict:
    """World-frame contact segments of both front wheels at *pose*."""
    world_from_body = pose.world_from_body
    half = 0.5 * geom.wheel_width
    out = {}
    for wheel, body_from_wheel in geom.transforms().items():
        ends = body_from_wheel.apply(np.array([[0.0, half, 0.0], [0.0, -half, 0.0]]))
        # inner endpoint is the one nearer the vehicle's longitudinal axis
        if abs(ends[0, 1]) <= abs(ends[1, 1]):
            inner, outer = ends[0], ends[1]
        else:
            inner, outer = ends[1], ends[0]
        w = world_from_body.apply(np.stack([inner, outer]))
        out[wheel] = WheelContactSample(pose.timestamp, wheel, w[0], w[1])
    return out


def covers(poses: Sequence[Pose], t: float, window: ProjectionWindow) -> bool:
    if not poses:
        return False
    return (poses[0].timestamp <= t + _COVER_EPS
            and poses[-1].timestamp >= t + window.horizon - _COVER_EPS)


def _clamped_pose(poses: Sequence[Pose], t: float) -> Pose:
    lo, hi = poses[0].timestamp, poses[-1].timestamp
    tq = min(max(t, lo), hi)
    p = interpolate_pose(poses, tq)
    return p if tq == t else Pose(t, p.translation, p.rotation)


def project_trajectory(t: float, poses: Sequence[Pose], geom: WheelGeometry,
                       camera: CameraModel, window: ProjectionWindow) -> ProjectedTrajectory:
    """Project the wheel tracks of ``[t, t + horizon]`` into the camera at *t*.

    Occlusion flags are left unset; see :mod:`trailmark.occlusion`.
    """
    if not covers(poses, t, window):
        raise InsufficientPoses(f"pose log does not cover [{t!r}, {t + window.horizon!r}]")
    cam_from_world = camera.camera_from_world(_clamped_pose(poses, t))
    per_wheel = {w: [] for w in Wheel}
    for ts in window.sample_times(t):
        for wheel, c in wheel_contacts(_clamped_pose(poses, float(ts)), geom).items():
            per_wheel[wheel].append(c)

    tracks = {}
    for wheel, contacts in per_wheel.items():
        world = np.stack([np.stack([c.inner_point, c.outer_point]) for c in contacts])
        cam = cam_from_world.apply(world.reshape(-1, 3))
        uv, valid = project_points(camera, cam)
        ok = valid & camera.in_bounds(uv[:, 0], uv[:, 1])
        cam = cam.reshape(-1, 2, 3)
        uv = uv.reshape(-1, 2, 2)
        ok = ok.reshape(-1, 2)
        tracks[wheel] = tuple(
            ProjectedSample(
                contact=c,
                inner=ImagePoint(float(uv[k, 0, 0]), float(uv[k, 0, 1])),
                outer=ImagePoint(float(uv[k, 1, 0]), float(uv[k, 1, 1])),
                inner_cam=cam[k, 0], outer_cam=cam[k, 1],
                inner_in_frustum=bool(ok[k, 0]), outer_in_frustum=bool(ok[k, 1]),
            )
            for k, c in enumerate(contacts)
        )
    return ProjectedTrajectory(float(t), tracks)


def arc_length(traj: ProjectedTrajectory, wheel: Wheel = Wheel.FRONT_LEFT) -> float:
    """World-frame length of one wheel's contact-centre polyline."""
    centres = np.stack([s.contact.center for s in traj.tracks[wheel]])
    return float(np.sum(np.linalg.norm(np.diff(centres, axis=0), axis=1)))
