"""Trajectory quadrilaterals and their rasterisation into binary masks.

Masks are ``(height, width)`` boolean arrays.  Pixel ``(row, col)`` has its
centre at ``(u, v) = (col, row)``; a pixel is set when its centre lies inside
or on the boundary of a quad (even-odd rule).
"""

from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch
from .geometry import ImagePoint
from .trajectory import ProjectedTrajectory, Wheel


class Quad(NamedTuple):
    """Corners ordered (inner_t, outer_t, outer_t+1, inner_t+1)."""

    a: ImagePoint
    b: ImagePoint
    c: ImagePoint
    d: ImagePoint

    def corners(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.d], dtype=float)


def build_quads(traj: ProjectedTrajectory) -> list[Quad]:
    quads = []
    for wheel in Wheel:
        samples = traj.tracks.get(wheel, ())
        for s0, s1 in zip(samples, samples[1:]):
            if s0.usable and s1.usable:
                quads.append(Quad(s0.inner, s0.outer, s1.outer, s1.inner))
    return quads


def on_edge_cross(xi, yi, xj, yj, px, py) -> float:
    """Cross product of the edge with the vector to (px, py); 0 means collinear."""
    return (xj - xi) * (py - yi) - (yj - yi) * (px - xi)


def _polygon_rows(poly: np.ndarray, height: int, width: int):
    """Yield ``(row, col_lo, col_hi_exclusive)`` spans covered by *poly*."""
    xs, ys = poly[:, 0], poly[:, 1]
    y_lo = max(0, math.ceil(ys.min()))
    y_hi = min(height - 1, math.floor(ys.max()))
    n = len(poly)
    edges = [(xs[i], ys[i], xs[(i + 1) % n], ys[(i + 1) % n]) for i in range(n)]
    for py in range(y_lo, y_hi + 1):
        crossings = []
        bounds = []  # columns lying exactly on an edge
        for xi, yi, xj, yj in edges:
            if (yi > py) != (yj > py):
                crossings.append((xj - xi) * (py - yi) / (yj - yi) + xi)
            if yi == yj:
                if yi == py:
                    bounds.append((min(xi, xj), max(xi, xj)))
            elif min(yi, yj) <= py <= max(yi, yj):
                # centres on a slanted edge: decided by the exact collinearity
                # test so the rule does not depend on rounding of a division
                x = (xj - xi) * (py - yi) / (yj - yi) + xi
                for px in range(math.floor(x) - 1, math.ceil(x) + 2):
                    if (min(xi, xj) <= px <= max(xi, xj)
                            and on_edge_cross(xi, yi, xj, yj, px, py) == 0.0):
                        bounds.append((px, px))
        crossings.sort()
        spans = []
        for x0, x1 in zip(crossings[0::2], crossings[1::2]):
            # interior test is "odd number of crossings strictly right of px"
            spans.append((math.ceil(x0), math.ceil(x1)))
        for x0, x1 in bounds:
            spans.append((math.ceil(x0), math.floor(x1) + 1))
        for c0, c1 in spans:
            c0 = max(c0, 0)
            c1 = min(c1, width)
            if c1 > c0:
                yield py, c0, c1


def rasterize(quads: Sequence[Quad], width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for q in quads:
        poly = q.corners() if isinstance(q, Quad) else np.asarray(q, dtype=float)
        if not np.all(np.isfinite(poly)):
            continue
        for row, c0, c1 in _polygon_rows(poly, height, width):
            mask[row, c0:c1] = True
    return mask


def apply_vehicle_mask(mask: np.ndarray, vehicle: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    vehicle = np.asarray(vehicle, dtype=bool)
    if mask.shape != vehicle.shape:
        raise DimensionMismatch(f"mask {mask.shape} vs vehicle mask {vehicle.shape}")
    return mask & ~vehicle


def trajectory_mask(traj: ProjectedTrajectory, width: int, height: int, vehicle=None) -> np.ndarray:
    mask = rasterize(build_quads(traj), width, height)
    if vehicle is not None:
        mask = apply_vehicle_mask(mask, vehicle)
    return mask
