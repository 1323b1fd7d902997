"""TOML run configuration and synthetic scene specifications.

Every value is validated on load; errors name the offending key path, e.g.
``camera.fx: must be positive``.  Missing sections and keys take defaults.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .evaluation import DEFAULT_LABEL_VALUES
from .geometry import CameraModel, RigidTransform, forward_camera_extrinsic, quat_normalize
from .model import ModelConfig, TrainConfig
from .occlusion import OcclusionParams, PointClass
from .synth import (GROUND_TEXTURE, VEGETATION_TEXTURE, Box, RayPattern, SceneSpec, Sphere,
                    Texture, VehiclePath)
from .trajectory import ProjectionWindow, WheelGeometry

CONFIG_VERSION = 1

DEFAULT_CAMERA = {
    "fx": 200.0, "fy": 200.0, "cx": 160.0, "cy": 100.0, "width": 320, "height": 200,
    "mount": [1.0, 0.0, 1.6], "pitch": 0.12,
}


class _Section:
    """Typed, checked access to one TOML table; reports unknown keys."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a table")
        self.data = data
        self.path = path
        self.used = set()

    def _key(self, key):
        return f"{self.path}.{key}" if self.path else key

    def fail(self, key, msg):
        raise ConfigError(f"{self._key(key)}: {msg}")

    def has(self, key) -> bool:
        return key in self.data

    def raw(self, key, default=None):
        self.used.add(key)
        return self.data.get(key, default)

    def number(self, key, default=None, *, positive=False, nonneg=False, allow_none=False):
        v = self.raw(key, default)
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(key, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            self.fail(key, "must be finite")
        if positive and not v > 0:
            self.fail(key, "must be positive")
        if nonneg and v < 0:
            self.fail(key, "must be non-negative")
        return v

    def integer(self, key, default=None, *, minimum=None):
        v = self.raw(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(key, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(key, f"must be >= {minimum}")
        return v

    def boolean(self, key, default=None):
        v = self.raw(key, default)
        if not isinstance(v, bool):
            self.fail(key, f"expected true or false, got {v!r}")
        return v

    def string(self, key, default=None, choices=None, allow_none=False):
        v = self.raw(key, default)
        if v is None and allow_none:
            return None
        if not isinstance(v, str):
            self.fail(key, f"expected a string, got {v!r}")
        if choices is not None and v not in choices:
            self.fail(key, f"must be one of {', '.join(choices)}; got {v!r}")
        return v

    def vector(self, key, n, default=None):
        v = self.raw(key, default)
        if not isinstance(v, list) or len(v) != n:
            self.fail(key, f"expected a list of {n} numbers, got {v!r}")
        out = []
        for x in v:
            if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
                self.fail(key, f"expected finite numbers, got {v!r}")
            out.append(float(x))
        return tuple(out)

    def table(self, key) -> "_Section":
        self.used.add(key)
        return _Section(self.data.get(key, {}), self._key(key))

    def done(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            self.fail(extra[0], "unknown key")


@dataclass(frozen=True)
class EvalOptions:
    percentile: float = 99.0
    bins: int = 32
    per_image: bool = False
    label_values: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_VALUES))


@dataclass(frozen=True)
class RunConfig:
    camera: CameraModel
    wheels: WheelGeometry = field(default_factory=lambda: WheelGeometry.symmetric(1.3, 0.75, 0.3))
    window: ProjectionWindow = field(default_factory=ProjectionWindow)
    occlusion: OcclusionParams = field(default_factory=OcclusionParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalOptions = field(default_factory=EvalOptions)
    tolerance: float = 0.05
    output_dir: Optional[str] = None
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, model=replace(self.model, seed=seed), train=replace(self.train, seed=seed))


def _camera(s: _Section) -> CameraModel:
    vals = {k: s.number(k, DEFAULT_CAMERA[k], positive=True) for k in ("fx", "fy")}
    vals.update({k: s.number(k, DEFAULT_CAMERA[k]) for k in ("cx", "cy")})
    vals.update({k: s.integer(k, DEFAULT_CAMERA[k], minimum=1) for k in ("width", "height")})
    if s.has("extrinsic"):
        if s.has("mount") or s.has("pitch"):
            s.fail("extrinsic", "give either extrinsic or mount/pitch, not both")
        e = s.table("extrinsic")
        t = e.vector("translation", 3)
        q = e.vector("rotation", 4)
        if abs(math.sqrt(sum(c * c for c in q)) - 1.0) > 1e-6:
            e.fail("rotation", "quaternion (x, y, z, w) must have unit length")
        e.done()
        extrinsic = RigidTransform(quat_normalize(q), t)
    else:
        extrinsic = forward_camera_extrinsic(s.vector("mount", 3, DEFAULT_CAMERA["mount"]),
                                             s.number("pitch", DEFAULT_CAMERA["pitch"]))
    s.done()
    return CameraModel(extrinsic=extrinsic, **vals)


def _wheels(s: _Section) -> WheelGeometry:
    fl = s.vector("front_left", 3, [1.3, 0.75, 0.0])
    fr = s.vector("front_right", 3, [1.3, -0.75, 0.0])
    width = s.number("width", 0.3, positive=True)
    s.done()
    return WheelGeometry(RigidTransform.from_translation(*fl), RigidTransform.from_translation(*fr), width)


def _occlusion(s: _Section) -> OcclusionParams:
    rho = s.number("rho", 0.35, positive=True)
    names = s.raw("classes", ["surface", "obstacle"])
    valid = [c.name.lower() for c in PointClass]
    if not isinstance(names, list) or not names or any(n not in valid for n in names):
        s.fail("classes", f"expected a non-empty list drawn from {', '.join(valid)}")
    max_angle = s.number("max_angle", None, positive=True, allow_none=True)
    s.done()
    return OcclusionParams(rho, frozenset(PointClass[n.upper()] for n in names), max_angle)


def _model(s: _Section) -> ModelConfig:
    mc = ModelConfig(
        bottleneck=s.integer("bottleneck", 256, minimum=1),
        architecture=s.string("architecture", "patch_linear", ("patch_linear", "small_conv")),
        patch_size=s.integer("patch_size", 16, minimum=1),
        conv_channels=s.vector("conv_channels", 3, [8, 16, 8]),
        init=s.string("init", "uniform", ("uniform", "zeros")),
        seed=s.integer("seed", 0),
    )
    if any(c != int(c) or c < 1 for c in mc.conv_channels):
        s.fail("conv_channels", "expected three positive integers")
    s.done()
    return mc


def _train(s: _Section) -> TrainConfig:
    size = s.vector("input_size", 2, [224, 224])
    if any(v != int(v) or v < 1 for v in size):
        s.fail("input_size", "expected two positive integers [width, height]")
    split = s.number("split", 0.8)
    if not 0 < split < 1:
        s.fail("split", "must lie strictly between 0 and 1")
    tc = TrainConfig(
        learning_rate=s.number("learning_rate", 1e-4, positive=True),
        batch_size=s.integer("batch_size", 4, minimum=1),
        epochs=s.integer("epochs", 100, minimum=1),
        input_size=size,
        split=split,
        seed=s.integer("seed", 0),
        optimizer=s.string("optimizer", "adam", ("adam", "sgd")),
        loss_normalization=s.string("loss_normalization", "image", ("image", "mask")),
    )
    s.done()
    return tc


def _eval(s: _Section) -> EvalOptions:
    pct = s.number("percentile", 99.0)
    if not 0 < pct <= 100:
        s.fail("percentile", "must lie in (0, 100]")
    bins = s.integer("bins", 32, minimum=1)
    per_image = s.boolean("per_image", False)
    lv = s.table("label_values")
    values = {k: lv.integer(k, DEFAULT_LABEL_VALUES[k], minimum=0) for k in DEFAULT_LABEL_VALUES}
    for k, v in values.items():
        if v > 255:
            lv.fail(k, "must fit in 8 bits")
    if len(set(values.values())) != len(values):
        lv.fail("ground", "label values must be distinct")
    lv.done()
    s.done()
    return EvalOptions(pct, bins, per_image, values)


def parse_config(data: dict) -> RunConfig:
    root = _Section(data, "")
    version = root.integer("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        root.fail("version", f"unsupported config version {version} (expected {CONFIG_VERSION})")
    camera = _camera(root.table("camera"))
    wheels = _wheels(root.table("wheels"))
    w = root.table("window")
    window = ProjectionWindow(w.number("rate", 10.0, positive=True), w.number("horizon", 4.0, positive=True))
    w.done()
    occ = _occlusion(root.table("occlusion"))
    model = _model(root.table("model"))
    train = _train(root.table("train"))
    if model.architecture == "patch_linear":
        if any(int(v) % model.patch_size for v in train.input_size):
            root.fail("train.input_size", f"must be divisible by model.patch_size ({model.patch_size})")
    elif any(int(v) % 8 for v in train.input_size):
        root.fail("train.input_size", "must be divisible by 8 for small_conv")
    ev = _eval(root.table("eval"))
    d = root.table("dataset")
    tolerance = d.number("tolerance", 0.05, nonneg=True)
    d.done()
    r = root.table("run")
    output_dir = r.string("output_dir", None, allow_none=True)
    workers = r.integer("workers", os.cpu_count() or 1, minimum=1)
    seed = r.raw("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        r.fail("seed", f"expected an integer, got {seed!r}")
    r.done()
    root.done()
    cfg = RunConfig(camera, wheels, window, occ, model, train, ev, tolerance, output_dir, workers)
    return cfg if seed is None else cfg.with_seed(seed)


def _load_toml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: no such file")
    try:
        return tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: {exc}") from None


def load_config(path) -> RunConfig:
    return parse_config(_load_toml(path))


def camera_to_toml(camera: CameraModel) -> str:
    e = camera.extrinsic
    fmt = lambda xs: "[" + ", ".join(repr(float(x)) for x in xs) + "]"  # noqa: E731
    return (
        "[camera]\n"
        f"fx = {camera.fx!r}\nfy = {camera.fy!r}\ncx = {camera.cx!r}\ncy = {camera.cy!r}\n"
        f"width = {camera.width}\nheight = {camera.height}\n\n"
        "[camera.extrinsic]\n"
        f"translation = {fmt(e.translation)}\nrotation = {fmt(e.rotation)}\n"
    )


# --------------------------------------------------------------------------
# scene specifications
# --------------------------------------------------------------------------

def _texture(s: _Section, base: Texture) -> Texture:
    tex = Texture(
        color=s.vector("color", 3, list(base.color)),
        contrast=s.number("contrast", base.contrast, nonneg=True),
        scale=s.number("scale", base.scale, positive=True),
        octaves=s.integer("octaves", base.octaves, minimum=1),
        seed=s.integer("seed", base.seed),
    )
    if any(not 0 <= c <= 1 for c in tex.color):
        s.fail("color", "components must lie in [0, 1]")
    s.done()
    return tex


@dataclass(frozen=True)
class SceneConfig:
    scene: SceneSpec
    rays: RayPattern
    pose_rate: Optional[float] = None


def parse_scene(data: dict, camera: CameraModel) -> SceneConfig:
    root = _Section(data, "")
    seed = root.integer("seed", 0)
    ground = root.number("ground_height", 0.0)
    hood = root.integer("hood_rows", 0, minimum=0)
    if hood >= camera.height:
        root.fail("hood_rows", "must be smaller than the image height")
    ground_tex = _texture(root.table("ground_texture"), GROUND_TEXTURE)
    p = root.table("path")
    yaw_rate = p.number("yaw_rate", 0.0)
    path = VehiclePath(p.vector("start", 2, [0.0, 0.0]), p.number("heading", 0.0),
                       p.number("speed", 8.33, positive=True), yaw_rate,
                       p.number("duration", 10.0, positive=True))
    p.done()

    obstacles = []
    for kind in ("box", "sphere"):
        items = root.raw(kind, [])
        if not isinstance(items, list):
            root.fail(kind, "expected an array of tables ([[" + kind + "]])")
        for i, item in enumerate(items):
            s = _Section(item, f"{kind}[{i}]")
            tex = _texture(s.table("texture"), replace(VEGETATION_TEXTURE, seed=seed * 97 + len(obstacles)))
            if kind == "box":
                size = s.vector("size", 3)
                if min(size) <= 0:
                    s.fail("size", "must be positive")
                ob = Box(s.vector("center", 2), size, tex, s.number("base", 0.0, nonneg=True))
            else:
                center = s.vector("center", 3)
                radius = s.number("radius", None, positive=True)
                if center[2] - radius < 0:
                    s.fail("center", "sphere must not extend below the ground")
                ob = Sphere(center, radius, tex)
            s.done()
            obstacles.append(ob)

    r = root.table("rays")
    step = math.radians(r.number("step_deg", 0.5, positive=True))
    margin = math.radians(r.number("margin_deg", 3.0, nonneg=True))
    rays = RayPattern.covering(camera, step, margin,
                               noise_sigma=r.number("noise_sigma", 0.0, nonneg=True),
                               max_range=r.number("max_range", 120.0, positive=True))
    r.done()
    pose_rate = root.number("pose_rate", None, positive=True, allow_none=True)
    root.done()
    scene = SceneSpec(ground, ground_tex, tuple(obstacles), path, hood_rows=hood, seed=seed)
    return SceneConfig(scene, rays, pose_rate)


def load_scene(path, camera: CameraModel) -> SceneConfig:
    return parse_scene(_load_toml(path), camera)
