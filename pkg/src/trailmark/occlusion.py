"""Occlusion filtering of projected wheel points against a point cloud.

Each wheel point is matched to the cloud point closest to it in
(azimuth, elevation).  The wheel point is occluded when that neighbour's
range ``o_r`` satisfies ``(o_r - p_r) / p_r < rho``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError
from .geometry import spherical_coords
from .trajectory import ProjectedTrajectory

TWO_PI = 2.0 * math.pi
# elevation spans at most pi, so a 4*pi period never wraps a nearest neighbour
_ELEVATION_PERIOD = 4.0 * math.pi


class PointClass(enum.IntEnum):
    SURFACE = 0
    OBSTACLE = 1
    GROUND = 2


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Points in the camera frame at the image timestamp."""

    points: np.ndarray
    classes: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if np.any(~pts.any(axis=1)):
            raise ValueError("point cloud contains a point at the origin")
        object.__setattr__(self, "points", pts)
        if self.classes is not None:
            cls = np.asarray(self.classes, dtype=np.uint8).reshape(-1)
            if len(cls) != len(pts):
                raise ValueError("classes and points differ in length")
            object.__setattr__(self, "classes", cls)

    def __len__(self) -> int:
        return len(self.points)

    def select(self, classes) -> "PointCloud":
        if self.classes is None:
            return self
        keep = np.isin(self.classes, [int(c) for c in classes])
        return PointCloud(self.points[keep], self.classes[keep])


@dataclass(frozen=True)
class OcclusionParams:
    rho: float = 0.35
    classes: frozenset = frozenset({PointClass.SURFACE, PointClass.OBSTACLE})
    max_angle: Optional[float] = None  # radians; None disables the cutoff

    def __post_init__(self):
        if not self.rho > 0:
            raise ConfigError("occlusion rho must be positive")
        if self.max_angle is not None and not self.max_angle > 0:
            raise ConfigError("occlusion max_angle must be positive")
        object.__setattr__(self, "classes", frozenset(PointClass(c) for c in self.classes))


def wrap_angle(a):
    """Map angle differences into [-pi, pi)."""
    return (np.asarray(a) + math.pi) % TWO_PI - math.pi


def angular_distance(az0, el0, az1, el1):
    d_az = np.abs(wrap_angle(np.asarray(az1) - np.asarray(az0)))
    d_az = np.minimum(d_az, TWO_PI - d_az)
    d_el = np.asarray(el1) - np.asarray(el0)
    return np.sqrt(d_az * d_az + d_el * d_el)


def _tree_coords(az, el) -> np.ndarray:
    a = np.mod(np.asarray(az, dtype=float) + math.pi, TWO_PI)
    a = np.where(a >= TWO_PI, 0.0, a)
    e = np.asarray(el, dtype=float) + 0.5 * math.pi
    return np.stack([a, e], axis=-1)


class AngularIndex:
    """Nearest-neighbour search over cloud directions with azimuth wraparound.

    Results are exact under :func:`angular_distance`; equidistant candidates
    resolve to the smallest point index.
    """

    def __init__(self, spherical: np.ndarray):
        self.spherical = np.asarray(spherical, dtype=float).reshape(-1, 3)
        self._tree = None
        if len(self.spherical):
            self._tree = cKDTree(_tree_coords(self.spherical[:, 0], self.spherical[:, 1]),
                                 boxsize=[TWO_PI, _ELEVATION_PERIOD])

    def __len__(self) -> int:
        return len(self.spherical)

    def query(self, azimuth, elevation, max_angle: Optional[float] = None):
        """Return ``(index, distance)`` arrays; index is -1 where nothing is found."""
        az = np.atleast_1d(np.asarray(azimuth, dtype=float))
        el = np.atleast_1d(np.asarray(elevation, dtype=float))
        idx = np.full(len(az), -1, dtype=np.int64)
        dist = np.full(len(az), np.inf)
        if self._tree is None or len(az) == 0:
            return idx, dist
        q = _tree_coords(az, el)
        bound = np.inf if max_angle is None else max_angle * (1.0 + 1e-9) + 1e-12
        d_tree, _ = self._tree.query(q, k=1, distance_upper_bound=bound)
        for i in np.flatnonzero(np.isfinite(d_tree)):
            # gather every candidate that could tie or beat the tree's answer
            # under the exact metric, then pick the minimum by (distance, index)
            r = d_tree[i] * (1.0 + 1e-9) + 1e-12
            cand = np.asarray(self._tree.query_ball_point(q[i], r), dtype=np.int64)
            d = angular_distance(az[i], el[i], self.spherical[cand, 0], self.spherical[cand, 1])
            order = np.lexsort((cand, d))
            best = order[0]
            if max_angle is not None and d[best] > max_angle:
                continue
            idx[i] = cand[best]
            dist[i] = d[best]
        return idx, dist


def build_index(cloud: PointCloud, params: OcclusionParams) -> AngularIndex:
    used = cloud.select(params.classes)
    if len(used) == 0:
        return AngularIndex(np.empty((0, 3)))
    return AngularIndex(spherical_coords(used.points))


def brute_force_nearest(spherical: np.ndarray, azimuth: float, elevation: float) -> tuple[int, float]:
    """Exhaustive reference for :meth:`AngularIndex.query`."""
    d = angular_distance(azimuth, elevation, spherical[:, 0], spherical[:, 1])
    i = int(np.argmin(d))  # argmin returns the first (smallest index) minimum
    return i, float(d[i])


def occluded_mask(points_cam: np.ndarray, index: AngularIndex, params: OcclusionParams) -> np.ndarray:
    """Occlusion flag for each camera-frame point in *points_cam*."""
    pts = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    flags = np.zeros(len(pts), dtype=bool)
    if len(index) == 0 or len(pts) == 0:
        return flags
    sph = spherical_coords(pts)
    nn, _ = index.query(sph[:, 0], sph[:, 1], params.max_angle)
    found = nn >= 0
    p_r = sph[found, 2]
    o_r = index.spherical[nn[found], 2]
    flags[found] = (o_r - p_r) / p_r < params.rho
    return flags


def filter_occlusions(traj: ProjectedTrajectory, index: AngularIndex,
                      params: OcclusionParams) -> ProjectedTrajectory:
    """Set occlusion flags on every in-frustum wheel point of *traj*."""
    pts, where = [], []
    for wheel, samples in traj.tracks.items():
        for k, s in enumerate(samples):
            if s.inner_in_frustum:
                pts.append(s.inner_cam)
                where.append((wheel, k, "inner"))
            if s.outer_in_frustum:
                pts.append(s.outer_cam)
                where.append((wheel, k, "outer"))
    flags = occluded_mask(np.array(pts).reshape(-1, 3), index, params)
    hit = {key: bool(f) for key, f in zip(where, flags)}
    tracks = {}
    for wheel, samples in traj.tracks.items():
        tracks[wheel] = tuple(
            replace(s,
                    inner_occluded=hit.get((wheel, k, "inner"), False),
                    outer_occluded=hit.get((wheel, k, "outer"), False))
            for k, s in enumerate(samples)
        )
    return traj.with_tracks(tracks)
