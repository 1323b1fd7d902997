"""Dataset manifests: frame association, validation, persistence and splits.

Manifest format (UTF-8 text, one record per line)::

    trailmark-manifest 1
    tolerance 0.05
    poses poses.txt
    vehicle_mask vehicle_mask.pgm
    camera camera.toml
    frame id=f0000 t=0.0 image=images/f0000.ppm cloud_t=0.0 cloud=clouds/f0000.ply labels=...

``tolerance``, ``poses``, ``vehicle_mask`` and ``camera`` are optional.
Frame lines require ``id``, ``t``, ``image``, ``cloud_t`` and ``cloud``; any
further ``key=path`` fields (``labels``, ``mask``, ``risk`` ...) are kept in
order.  Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import MissingFile, ParseError, TimestampOrderViolation

HEADER = "trailmark-manifest 1"
DEFAULT_TOLERANCE = 0.05
_REQUIRED = ("id", "t", "image", "cloud_t", "cloud")


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    timestamp: float
    image: str
    cloud_timestamp: float
    cloud: str
    extras: tuple = ()  # ((key, path), ...)

    def extra(self, key: str) -> Optional[str]:
        for k, v in self.extras:
            if k == key:
                return v
        return None

    def with_extra(self, key: str, value: str) -> "FrameRecord":
        kept = tuple((k, v) for k, v in self.extras if k != key)
        return replace(self, extras=kept + ((key, value),))

    def to_line(self) -> str:
        parts = [f"id={self.frame_id}", f"t={self.timestamp!r}", f"image={self.image}",
                 f"cloud_t={self.cloud_timestamp!r}", f"cloud={self.cloud}"]
        parts += [f"{k}={v}" for k, v in self.extras]
        return "frame " + " ".join(parts)


@dataclass(frozen=True)
class DatasetManifest:
    frames: tuple = ()
    root: Path = field(default=Path("."), compare=False)
    tolerance: Optional[float] = None
    poses: Optional[str] = None
    vehicle_mask: Optional[str] = None
    camera: Optional[str] = None

    def resolve(self, rel: Optional[str]) -> Optional[Path]:
        if rel is None:
            return None
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    @property
    def association_tolerance(self) -> float:
        return DEFAULT_TOLERANCE if self.tolerance is None else self.tolerance

    def dumps(self) -> str:
        lines = [HEADER]
        if self.tolerance is not None:
            lines.append(f"tolerance {self.tolerance!r}")
        for key in ("poses", "vehicle_mask", "camera"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key} {value}")
        lines += [f.to_line() for f in self.frames]
        return "\n".join(lines) + "\n"

    def rebased(self, new_root) -> "DatasetManifest":
        """Same manifest with relative paths rewritten to live under *new_root*."""
        new_root = Path(new_root)

        def rel(p):
            if p is None:
                return None
            return os.path.relpath(self.resolve(p), new_root)

        frames = tuple(
            replace(f, image=rel(f.image), cloud=rel(f.cloud),
                    extras=tuple((k, rel(v)) for k, v in f.extras))
            for f in self.frames)
        return replace(self, frames=frames, root=new_root, poses=rel(self.poses),
                       vehicle_mask=rel(self.vehicle_mask), camera=rel(self.camera))


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(manifest.dumps(), encoding="utf-8")


def _parse_frame(path, lineno, rest: str) -> FrameRecord:
    fields = {}
    order = []
    for tok in rest.split():
        if "=" not in tok:
            raise ParseError(path, lineno, f"field {tok!r} is not key=value")
        k, v = tok.split("=", 1)
        if not k or not v:
            raise ParseError(path, lineno, f"empty key or value in {tok!r}")
        if k in fields:
            raise ParseError(path, lineno, f"field {k!r} repeated")
        fields[k] = v
        order.append(k)
    for k in _REQUIRED:
        if k not in fields:
            raise ParseError(path, lineno, f"missing field {k!r}")
    nums = {}
    for k in ("t", "cloud_t"):
        try:
            nums[k] = float(fields[k])
        except ValueError:
            raise ParseError(path, lineno, f"field {k!r}: not a number: {fields[k]!r}") from None
        if not math.isfinite(nums[k]):
            raise ParseError(path, lineno, f"field {k!r} is not finite")
    extras = tuple((k, fields[k]) for k in order if k not in _REQUIRED)
    return FrameRecord(fields["id"], nums["t"], fields["image"], nums["cloud_t"],
                       fields["cloud"], extras)


def _check_header_parses(path: Path, lineno: int, manifest_path) -> None:
    if not path.is_file():
        raise MissingFile(f"{manifest_path}:{lineno}: referenced file {path} does not exist")
    if path.suffix in (".ppm", ".pgm"):
        head = path.open("rb").read(2)
        if head not in (b"P5", b"P6"):
            raise ParseError(manifest_path, lineno, f"{path} is not a binary PNM image")
    elif path.suffix == ".ply":
        if path.open("rb").read(3) != b"ply":
            raise ParseError(manifest_path, lineno, f"{path} is not a PLY file")


def load_manifest(path, deep: bool = False) -> DatasetManifest:
    """Parse and validate a manifest; every invariant is checked eagerly.

    Referenced files must exist and carry the right magic; with ``deep``
    every referenced file is parsed in full.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"{path}: no such file")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ParseError(path, 1, f"expected header {HEADER!r}")
    root = path.parent
    head = {}
    frames = []
    frame_lines = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        key, _, rest = line.strip().partition(" ")
        if key == "frame":
            frames.append(_parse_frame(path, lineno, rest))
            frame_lines.append(lineno)
        elif key in ("tolerance", "poses", "vehicle_mask", "camera"):
            if frames:
                raise ParseError(path, lineno, f"{key!r} must precede frame records")
            if key in head:
                raise ParseError(path, lineno, f"{key!r} repeated")
            if not rest.strip():
                raise ParseError(path, lineno, f"{key!r} needs a value")
            head[key] = rest.strip()
        else:
            raise ParseError(path, lineno, f"unknown record {key!r}")

    tolerance = None
    if "tolerance" in head:
        try:
            tolerance = float(head["tolerance"])
        except ValueError:
            raise ParseError(path, 2, "tolerance: not a number") from None
        if not tolerance >= 0:
            raise ParseError(path, 2, "tolerance must be non-negative")
    manifest = DatasetManifest(tuple(frames), root, tolerance, head.get("poses"),
                               head.get("vehicle_mask"), head.get("camera"))

    seen = {}
    prev_t = -math.inf
    for f, lineno in zip(frames, frame_lines):
        if f.frame_id in seen:
            raise TimestampOrderViolation(
                f"{path}:{lineno}: duplicate frame id {f.frame_id!r} (first on line {seen[f.frame_id]})")
        seen[f.frame_id] = lineno
        if f.timestamp < prev_t:
            raise TimestampOrderViolation(
                f"{path}:{lineno}: frame {f.frame_id!r} timestamp {f.timestamp!r} decreases")
        prev_t = f.timestamp
        if abs(f.timestamp - f.cloud_timestamp) > manifest.association_tolerance:
            raise ParseError(path, lineno, f"frame {f.frame_id!r}: image and cloud timestamps differ "
                                           f"by more than {manifest.association_tolerance!r} s")
        for rel in (f.image, f.cloud, *(v for _, v in f.extras)):
            _check_header_parses(manifest.resolve(rel), lineno, path)
    for key in ("poses", "vehicle_mask", "camera"):
        if head.get(key) is not None and not manifest.resolve(head[key]).is_file():
            raise MissingFile(f"{path}: {key} file {manifest.resolve(head[key])} does not exist")
    if manifest.poses is not None:
        from .formats import read_pose_log

        read_pose_log(manifest.resolve(manifest.poses))
    if deep:
        _deep_validate(manifest)
    return manifest


def _deep_validate(manifest: DatasetManifest) -> None:
    from .formats import read_mask, read_pnm, read_ply

    for f in manifest.frames:
        read_pnm(manifest.resolve(f.image))
        read_ply(manifest.resolve(f.cloud))
        for _, v in f.extras:
            p = manifest.resolve(v)
            if p.suffix in (".ppm", ".pgm"):
                read_pnm(p)
    if manifest.vehicle_mask is not None:
        read_mask(manifest.resolve(manifest.vehicle_mask))


def associate(image_times: Sequence[float], cloud_times: Sequence[float],
              tolerance: float = DEFAULT_TOLERANCE) -> list[Optional[int]]:
    """Index of the nearest-in-time cloud for each image, or None beyond *tolerance*."""
    ct = np.asarray(cloud_times, dtype=float)
    out = []
    for t in image_times:
        if ct.size == 0:
            out.append(None)
            continue
        i = int(np.argmin(np.abs(ct - t)))
        out.append(i if abs(ct[i] - t) <= tolerance else None)
    return out


def split_indices(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle of ``range(n)`` split into sorted (train, validation) lists."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(fraction * n + 0.5))
    if n >= 2:
        n_train = min(max(n_train, 1), n - 1)
    return sorted(perm[:n_train].tolist()), sorted(perm[n_train:].tolist())


def split(manifest: DatasetManifest, fraction: float, seed: int):
    tr, va = split_indices(len(manifest.frames), fraction, seed)
    pick = lambda idx: replace(manifest, frames=tuple(manifest.frames[i] for i in idx))  # noqa: E731
    return pick(tr), pick(va)
