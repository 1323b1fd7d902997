"""Procedural off-road scenes, an exact ray caster and dataset generation.

The world is a horizontal ground plane with axis-aligned boxes and spheres
standing on it.  Obstacles are rendered and labelled as vegetation so the
novelty model has a distinct appearance to detect.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, PathTooShort
from .evaluation import SemanticClass
from .geometry import CameraModel, Pose, directions_from_angles, quat_from_yaw, spherical_coords
from .occlusion import PointClass, PointCloud
from .trajectory import ProjectedTrajectory, ProjectionWindow, WheelGeometry, covers, project_trajectory

log = logging.getLogger(__name__)

HIT_NONE = -1
HIT_GROUND = 0  # obstacle i is reported as i + 1


@dataclass(frozen=True)
class Texture:
    color: tuple = (0.6, 0.5, 0.4)
    contrast: float = 0.3
    scale: float = 1.0  # metres per base noise cell
    octaves: int = 3
    seed: int = 0


GROUND_TEXTURE = Texture((0.62, 0.52, 0.40), contrast=0.25, scale=0.8, octaves=2, seed=1)
VEGETATION_TEXTURE = Texture((0.18, 0.42, 0.12), contrast=0.9, scale=0.15, octaves=3, seed=2)


@dataclass(frozen=True)
class Box:
    center: tuple      # (x, y) on the ground
    size: tuple        # (sx, sy, sz)
    texture: Texture = VEGETATION_TEXTURE
    base: float = 0.0  # height of the bottom face above the ground

    def __post_init__(self):
        if len(self.center) != 2 or len(self.size) != 3 or min(self.size) <= 0:
            raise ConfigError("box needs center (x, y) and positive size (sx, sy, sz)")
        if self.base < 0:
            raise ConfigError("box must not extend below the ground")

    def bounds(self, ground: float):
        cx, cy = self.center
        sx, sy, sz = self.size
        lo = np.array([cx - sx / 2, cy - sy / 2, ground + self.base])
        return lo, lo + np.array([sx, sy, sz])


@dataclass(frozen=True)
class Sphere:
    center: tuple      # (x, y, z) with z measured from the ground
    radius: float
    texture: Texture = VEGETATION_TEXTURE

    def __post_init__(self):
        if len(self.center) != 3 or not self.radius > 0:
            raise ConfigError("sphere needs center (x, y, z) and a positive radius")
        if self.center[2] - self.radius < 0:
            raise ConfigError("sphere must not extend below the ground")


@dataclass(frozen=True)
class VehiclePath:
    """Constant-speed arc (straight when ``yaw_rate == 0``) on the ground."""

    start: tuple = (0.0, 0.0)
    heading: float = 0.0
    speed: float = 8.33
    yaw_rate: float = 0.0
    duration: float = 10.0

    def __post_init__(self):
        if not (self.speed > 0 and self.duration > 0):
            raise ConfigError("path speed and duration must be positive")

    def position(self, t: float):
        x0, y0 = self.start
        if self.yaw_rate == 0.0:
            d = self.speed * t
            return x0 + d * math.cos(self.heading), y0 + d * math.sin(self.heading), self.heading
        r = self.speed / self.yaw_rate
        yaw = self.heading + self.yaw_rate * t
        return (x0 + r * (math.sin(yaw) - math.sin(self.heading)),
                y0 - r * (math.cos(yaw) - math.cos(self.heading)), yaw)

    def pose(self, t: float, ground: float) -> Pose:
        x, y, yaw = self.position(t)
        return Pose(t, np.array([x, y, ground]), quat_from_yaw(yaw))


@dataclass(frozen=True)
class SceneSpec:
    ground_height: float = 0.0
    ground_texture: Texture = GROUND_TEXTURE
    obstacles: tuple = ()
    path: VehiclePath = field(default_factory=VehiclePath)
    sky_color: tuple = (0.65, 0.78, 0.95)
    hood_color: tuple = (0.12, 0.12, 0.12)
    hood_rows: int = 0  # bottom image rows hidden by the vehicle body
    seed: int = 0


@dataclass(frozen=True)
class RayPattern:
    """Uniform azimuth x elevation ray grid in the camera's spherical frame."""

    azimuth_min: float
    azimuth_max: float
    azimuth_step: float
    elevation_min: float
    elevation_max: float
    elevation_step: float
    noise_sigma: float = 0.0
    max_range: float = 120.0

    def __post_init__(self):
        if not (self.azimuth_step > 0 and self.elevation_step > 0):
            raise ConfigError("ray pattern steps must be positive")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")

    @property
    def cell(self) -> float:
        return max(self.azimuth_step, self.elevation_step)

    def angles(self):
        az = np.arange(self.azimuth_min, self.azimuth_max + 0.5 * self.azimuth_step, self.azimuth_step)
        el = np.arange(self.elevation_min, self.elevation_max + 0.5 * self.elevation_step,
                       self.elevation_step)
        a, e = np.meshgrid(az, el)
        return a.ravel(), e.ravel()

    @classmethod
    def covering(cls, camera: CameraModel, step: float, margin: float = 0.05, **kw) -> "RayPattern":
        corners = np.array([[(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, 1.0]
                            for u in (-0.5, camera.width - 0.5) for v in (-0.5, camera.height - 0.5)])
        sph = spherical_coords(corners)
        return cls(sph[:, 0].min() - margin, sph[:, 0].max() + margin, step,
                   sph[:, 1].min() - margin, sph[:, 1].max() + margin, step, **kw)


# --------------------------------------------------------------------------
# procedural noise
# --------------------------------------------------------------------------

_M1 = np.uint64(0x9E3779B97F4A7C15)
_M2 = np.uint64(0xBF58476D1CE4E5B9)
_M3 = np.uint64(0x94D049BB133111EB)


def _hash(seed: int, *coords) -> np.ndarray:
    start = (int(seed) * 0x9E3779B97F4A7C15 + 0x632BE59BD9B4E019) % (1 << 64)
    h = np.full(np.shape(coords[0]), start, dtype=np.uint64)
    for c in coords:
        h = h ^ (np.asarray(c).astype(np.int64).astype(np.uint64) + _M1 + (h << np.uint64(6))
                 + (h >> np.uint64(2)))
        h = (h ^ (h >> np.uint64(30))) * _M2
        h = (h ^ (h >> np.uint64(27))) * _M3
        h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _smooth(t):
    return t * t * (3.0 - 2.0 * t)


def value_noise(points: np.ndarray, seed: int) -> np.ndarray:
    """Smooth lattice value noise in [0, 1) over 2-D or 3-D points."""
    p = np.asarray(points, dtype=float)
    base = np.floor(p)
    f = _smooth(p - base)
    b = base.astype(np.int64)
    dim = p.shape[-1]
    out = np.zeros(p.shape[:-1])
    for corner in range(1 << dim):
        offs = [(corner >> k) & 1 for k in range(dim)]
        w = np.ones(p.shape[:-1])
        for k, o in enumerate(offs):
            w = w * (f[..., k] if o else 1.0 - f[..., k])
        out += w * _hash(seed, *(b[..., k] + o for k, o in enumerate(offs)))
    return out


def fractal_noise(points: np.ndarray, tex: Texture) -> np.ndarray:
    p = np.asarray(points, dtype=float) / tex.scale
    total = np.zeros(p.shape[:-1])
    amp_sum = 0.0
    for o in range(tex.octaves):
        amp = 0.5 ** o
        total += amp * value_noise(p * (2.0 ** o), tex.seed * 131 + o)
        amp_sum += amp
    return total / amp_sum


def shade(points: np.ndarray, tex: Texture, planar: bool) -> np.ndarray:
    coords = points[..., :2] if planar else points
    n = fractal_noise(coords, tex)
    gain = 1.0 + tex.contrast * 2.0 * (n - 0.5)
    return np.clip(np.asarray(tex.color)[None, :] * gain[:, None], 0.0, 1.0)


# --------------------------------------------------------------------------
# ray casting
# --------------------------------------------------------------------------

def _ray_box(o, d, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (lo - o) * inv
        t2 = (hi - o) * inv
    tmin = np.fmin(t1, t2)
    tmax = np.fmax(t1, t2)
    near = np.max(np.where(np.isnan(tmin), -np.inf, tmin), axis=-1)
    far = np.min(np.where(np.isnan(tmax), np.inf, tmax), axis=-1)
    hit = (near <= far) & (near > 0.0)
    return np.where(hit, near, np.inf)


def _ray_sphere(o, d, c, r):
    oc = o - c
    a = np.sum(d * d, axis=-1)
    b = np.sum(oc * d, axis=-1)
    cc = np.sum(oc * oc, axis=-1) - r * r
    disc = b * b - a * cc
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = (-b - sq) / a
    return np.where((disc >= 0.0) & (t0 > 0.0), t0, np.inf)


def cast_rays(scene: SceneSpec, origins, dirs, include_ground: bool = True):
    """First hit along each ray ``o + t d`` (t > 0).

    Returns ``(t, kind)``: kind is :data:`HIT_NONE`, :data:`HIT_GROUND` or
    ``i + 1`` for obstacle *i*; t is inf where nothing is hit.
    """
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    o = np.broadcast_to(np.asarray(origins, dtype=float), d.shape)
    t_best = np.full(len(d), np.inf)
    kind = np.full(len(d), HIT_NONE, dtype=np.int64)
    g = scene.ground_height
    if include_ground:
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = (g - o[:, 2]) / d[:, 2]
        tg = np.where((d[:, 2] < 0.0) & (o[:, 2] > g) & (tg > 0.0), tg, np.inf)
        better = tg < t_best
        t_best[better] = tg[better]
        kind[better] = HIT_GROUND
    for i, ob in enumerate(scene.obstacles):
        if isinstance(ob, Box):
            lo, hi = ob.bounds(g)
            t = _ray_box(o, d, lo, hi)
        else:
            c = np.array([ob.center[0], ob.center[1], g + ob.center[2]])
            t = _ray_sphere(o, d, c, ob.radius)
        better = t < t_best
        t_best[better] = t[better]
        kind[better] = i + 1
    return t_best, kind


def render(scene: SceneSpec, pose: Pose, camera: CameraModel):
    """Ray-cast an image ``(H, W, 3)`` and its semantic label map ``(H, W)``."""
    w_from_c = camera.world_from_camera(pose)
    rays = camera.pixel_rays().reshape(-1, 3)
    dirs = rays @ w_from_c.rotation_matrix.T
    origin = w_from_c.translation
    t, kind = cast_rays(scene, origin, dirs)
    img = np.empty((len(dirs), 3))
    labels = np.full(len(dirs), SemanticClass.UNLABELED, dtype=np.uint8)
    img[:] = scene.sky_color
    hit_pts = origin + dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
    ground = kind == HIT_GROUND
    if ground.any():
        img[ground] = shade(hit_pts[ground], scene.ground_texture, planar=True)
        labels[ground] = SemanticClass.GROUND
    for i, ob in enumerate(scene.obstacles):
        sel = kind == i + 1
        if sel.any():
            img[sel] = shade(hit_pts[sel], ob.texture, planar=False)
            labels[sel] = SemanticClass.VEGETATION
    img = img.reshape(camera.height, camera.width, 3)
    labels = labels.reshape(camera.height, camera.width)
    if scene.hood_rows > 0:
        img[-scene.hood_rows:] = scene.hood_color
        labels[-scene.hood_rows:] = SemanticClass.UNLABELED
    return img, labels


def vehicle_mask(scene: SceneSpec, camera: CameraModel) -> np.ndarray:
    m = np.zeros((camera.height, camera.width), dtype=bool)
    if scene.hood_rows > 0:
        m[-scene.hood_rows:] = True
    return m


def sample_cloud(scene: SceneSpec, pose: Pose, camera: CameraModel, pattern: RayPattern,
                 seed: Optional[int] = None) -> PointCloud:
    """Simulated scan from the camera centre, returned in the camera frame.

    Range noise is Gaussian along each ray with ``pattern.noise_sigma``.
    """
    az, el = pattern.angles()
    d_cam = directions_from_angles(az, el)
    w_from_c = camera.world_from_camera(pose)
    t, kind = cast_rays(scene, w_from_c.translation, d_cam @ w_from_c.rotation_matrix.T)
    keep = np.isfinite(t) & (t <= pattern.max_range)
    r = t[keep]
    if pattern.noise_sigma > 0:
        rng = np.random.default_rng(scene.seed if seed is None else seed)
        r = r + rng.normal(0.0, pattern.noise_sigma, size=r.shape)
        r = np.maximum(r, 1e-6)
    pts = d_cam[keep] * r[:, None]
    classes = np.where(kind[keep] == HIT_GROUND, PointClass.GROUND, PointClass.OBSTACLE).astype(np.uint8)
    return PointCloud(pts, classes)


def oracle_occlusion(scene: SceneSpec, camera_center, points_world, eps: float = 1e-9) -> np.ndarray:
    """Exact visibility: occluded iff the segment camera->point hits geometry
    strictly before the point."""
    p = np.atleast_2d(np.asarray(points_world, dtype=float))
    seg = p - np.asarray(camera_center, dtype=float)
    t, _ = cast_rays(scene, camera_center, seg)
    return t < 1.0 - eps


def trajectory_oracle_flags(scene: SceneSpec, camera: CameraModel, pose: Pose,
                            traj: ProjectedTrajectory) -> np.ndarray:
    """Oracle flags for every wheel point of *traj*, in ``wheel_points`` order."""
    pts = [s.contact.inner_point if end == "inner" else s.contact.outer_point
           for _, _, end, s in traj.wheel_points()]
    if not pts:
        return np.zeros(0, dtype=bool)
    centre = camera.world_from_camera(pose).translation
    return oracle_occlusion(scene, centre, np.array(pts))


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SyntheticFrame:
    frame_id: str
    timestamp: float
    pose: Pose
    image: np.ndarray
    labels: np.ndarray
    cloud: PointCloud
    occlusion: Optional[np.ndarray]  # None when the window does not fit


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    frames: list
    poses: list
    vehicle_mask: np.ndarray

    @property
    def labelable(self) -> list:
        return [f for f in self.frames if f.occlusion is not None]


def pose_log(scene: SceneSpec, rate: float) -> list[Pose]:
    n = int(math.floor(scene.path.duration * rate + 1e-9))
    return [scene.path.pose(k / rate, scene.ground_height) for k in range(n + 1)]


def generate_dataset(scene: SceneSpec, camera: CameraModel, window: ProjectionWindow,
                     geom: WheelGeometry, pattern: Optional[RayPattern] = None,
                     pose_rate: Optional[float] = None, workers: int = 1) -> SyntheticDataset:
    """Frames at the window rate along the scene path, with all ground truth."""
    if scene.path.duration < window.horizon:
        raise PathTooShort(f"path lasts {scene.path.duration!r} s, shorter than the "
                           f"{window.horizon!r} s projection window")
    if pattern is None:
        pattern = RayPattern.covering(camera, math.radians(0.5))
    poses = pose_log(scene, pose_rate or window.rate)
    n_frames = int(math.floor(scene.path.duration * window.rate + 1e-9)) + 1

    def make(k):
        t = k / window.rate
        pose = scene.path.pose(t, scene.ground_height)
        img, lab = render(scene, pose, camera)
        cloud = sample_cloud(scene, pose, camera, pattern, seed=scene.seed * 100003 + k)
        occ = None
        if covers(poses, t, window):
            traj = project_trajectory(t, poses, geom, camera, window)
            occ = trajectory_oracle_flags(scene, camera, pose, traj)
        return SyntheticFrame(f"f{k:05d}", t, pose, img, lab, cloud, occ)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as ex:
            frames = list(ex.map(make, range(n_frames)))
    else:
        frames = [make(k) for k in range(n_frames)]
    return SyntheticDataset(frames, poses, vehicle_mask(scene, camera))


def write_dataset(ds: SyntheticDataset, out_dir, camera_text: Optional[str] = None):
    """Write *ds* in the formats the pipeline reads; returns the manifest path."""
    from .dataset import DatasetManifest, FrameRecord, save_manifest
    from .formats import write_image, write_mask, write_occlusion_flags, write_ply, write_pnm, write_pose_log

    out = Path(out_dir)
    for sub in ("images", "labels", "clouds"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_pose_log(out / "poses.txt", ds.poses)
    write_mask(out / "vehicle_mask.pgm", ds.vehicle_mask)
    camera_ref = None
    if camera_text is not None:
        (out / "camera.toml").write_text(camera_text, encoding="utf-8")
        camera_ref = "camera.toml"
    records, flags = [], []
    for f in ds.frames:
        write_image(out / "images" / f"{f.frame_id}.ppm", f.image)
        write_pnm(out / "labels" / f"{f.frame_id}.pgm", f.labels)
        write_ply(out / "clouds" / f"{f.frame_id}.ply", f.cloud)
        records.append(FrameRecord(f.frame_id, f.timestamp, f"images/{f.frame_id}.ppm", f.timestamp,
                                   f"clouds/{f.frame_id}.ply", (("labels", f"labels/{f.frame_id}.pgm"),)))
        if f.occlusion is not None:
            flags += [(f.frame_id, k, o) for k, o in enumerate(f.occlusion)]
    write_occlusion_flags(out / "ground_truth_occlusion.txt", flags)
    manifest = DatasetManifest(tuple(records), out, None, "poses.txt", "vehicle_mask.pgm", camera_ref)
    save_manifest(manifest, out / "manifest.txt")
    return out / "manifest.txt"


def random_scene(seed: int, duration: float = 6.0, speed: float = 6.0,
                 n_obstacles: int = 6, hood_rows: int = 0, clearance: float = 2.5) -> SceneSpec:
    """Seeded scene with obstacles scattered beside the path.

    Most paths curve, and obstacles favour the inside of the curve where
    they hide later parts of the track.  Every obstacle centre keeps at
    least *clearance* metres from the whole path, so nothing stands on
    ground the vehicle drives over.
    """
    rng = np.random.default_rng(seed)
    yaw_rate = 0.0
    if rng.random() < 0.75:
        yaw_rate = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.1, 0.35))
    path = VehiclePath((0.0, 0.0), 0.0, speed, yaw_rate, duration)
    track = np.array([path.position(t)[:2] for t in np.linspace(0.0, duration, int(duration * speed * 4) + 2)])
    inside = 1.0 if yaw_rate >= 0 else -1.0
    obstacles = []
    while len(obstacles) < n_obstacles:
        s = rng.uniform(0.1, 1.0) * speed * duration
        x, y, yaw = path.position(s / speed)
        side = inside if rng.random() < 0.7 else -inside
        lateral = side * rng.uniform(clearance, clearance + 4.0)
        cx = x - lateral * math.sin(yaw)
        cy = y + lateral * math.cos(yaw)
        if np.min(np.hypot(track[:, 0] - cx, track[:, 1] - cy)) < clearance:
            continue
        i = len(obstacles)
        tex = Texture(VEGETATION_TEXTURE.color, VEGETATION_TEXTURE.contrast,
                      VEGETATION_TEXTURE.scale, VEGETATION_TEXTURE.octaves, seed * 97 + i)
        if rng.random() < 0.5:
            size = (rng.uniform(0.4, 2.0), rng.uniform(0.4, 2.0), rng.uniform(0.3, 1.5))
            obstacles.append(Box((cx, cy), size, tex))
        else:
            r = rng.uniform(0.25, 0.9)
            obstacles.append(Sphere((cx, cy, r), r, tex))
    return SceneSpec(obstacles=tuple(obstacles), path=path, hood_rows=hood_rows, seed=seed)
