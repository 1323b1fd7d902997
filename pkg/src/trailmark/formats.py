"""Readers and writers for every on-disk artifact of the pipeline.

Floats in text formats are written with ``repr`` so that save-then-load is
exact.
"""

from __future__ import annotations

import re
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, MissingFile, ParseError
from .geometry import Pose
from .occlusion import PointCloud


def _read_text(path) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"{p}: no such file")
    return p.read_text(encoding="utf-8").splitlines()


def _float(path, lineno, token, what):
    try:
        v = float(token)
    except ValueError:
        raise ParseError(path, lineno, f"{what}: not a number: {token!r}") from None
    if not np.isfinite(v):
        raise ParseError(path, lineno, f"{what}: not finite: {token!r}")
    return v


# --------------------------------------------------------------------------
# pose logs: "timestamp tx ty tz qx qy qz qw"
# --------------------------------------------------------------------------

def write_pose_log(path, poses: Iterable[Pose]) -> None:
    lines = []
    for p in poses:
        vals = [p.timestamp, *p.translation.tolist(), *p.rotation.tolist()]
        lines.append(" ".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_pose_log(path) -> list[Pose]:
    poses = []
    names = ("timestamp", "tx", "ty", "tz", "qx", "qy", "qz", "qw")
    for lineno, line in enumerate(_read_text(path), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 8:
            raise ParseError(path, lineno, f"expected 8 fields, got {len(tok)}")
        v = [_float(path, lineno, t, n) for t, n in zip(tok, names)]
        q = np.array(v[4:])
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ParseError(path, lineno, "quaternion is not unit length")
        pose = Pose(v[0], np.array(v[1:4]), q)
        if poses and pose.timestamp <= poses[-1].timestamp:
            raise ParseError(path, lineno, "timestamps must be strictly increasing")
        poses.append(pose)
    return poses


# --------------------------------------------------------------------------
# ASCII PLY point clouds
# --------------------------------------------------------------------------

def write_ply(path, cloud: PointCloud) -> None:
    has_cls = cloud.classes is not None
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property double x", "property double y", "property double z"]
    if has_cls:
        header.append("property uchar class")
    header.append("end_header")
    rows = []
    for i, p in enumerate(cloud.points.tolist()):
        row = f"{p[0]!r} {p[1]!r} {p[2]!r}"
        if has_cls:
            row += f" {int(cloud.classes[i])}"
        rows.append(row)
    Path(path).write_text("\n".join(header + rows) + "\n", encoding="ascii")


def read_ply(path) -> PointCloud:
    lines = _read_text(path)
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "missing 'ply' magic")
    n_vertex = None
    props = []
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:2] != ["ascii"]:
                raise ParseError(path, i, "only ASCII PLY is supported")
        elif tok[0] == "element":
            if tok[1] == "vertex":
                n_vertex = int(tok[2])
            elif int(tok[2]) != 0:
                raise ParseError(path, i, f"unsupported element {tok[1]!r}")
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[0] == "end_header":
            break
        else:
            raise ParseError(path, i, f"unexpected header line {lines[i - 1]!r}")
    else:
        raise ParseError(path, i, "missing end_header")
    if n_vertex is None:
        raise ParseError(path, i, "no vertex element")
    if props[:3] != ["x", "y", "z"] or props[3:] not in ([], ["class"]):
        raise ParseError(path, i, f"expected properties x y z [class], got {props}")
    body = [ln for ln in lines[i:] if ln.strip()]
    if len(body) != n_vertex:
        raise ParseError(path, i + len(body), f"expected {n_vertex} vertices, found {len(body)}")
    pts = np.empty((n_vertex, 3))
    cls = np.empty(n_vertex, dtype=np.uint8) if len(props) == 4 else None
    for k, ln in enumerate(body):
        lineno = i + k + 1
        tok = ln.split()
        if len(tok) != len(props):
            raise ParseError(path, lineno, f"expected {len(props)} values")
        pts[k] = [_float(path, lineno, t, n) for t, n in zip(tok[:3], "xyz")]
        if cls is not None:
            c = int(tok[3])
            if not 0 <= c <= 255:
                raise ParseError(path, lineno, "class out of uchar range")
            cls[k] = c
    try:
        return PointCloud(pts, cls)
    except ValueError as exc:
        raise ParseError(path, i, str(exc)) from None


# --------------------------------------------------------------------------
# binary PNM images (8 bit)
# --------------------------------------------------------------------------

_PNM_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\s+)*(\d+)\s+(?:#[^\n]*\s+)*(\d+)\s+"
                         rb"(?:#[^\n]*\s+)*(\d+)\s")


def write_pnm(path, array) -> None:
    """Write a ``(H, W)`` uint8 array as P5 or ``(H, W, 3)`` as P6."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("PNM writer expects uint8 data")
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"unsupported image shape {a.shape}")
    h, w = a.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode("ascii") + a.tobytes())


def read_pnm(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"{p}: no such file")
    data = p.read_bytes()
    m = _PNM_HEADER.match(data)
    if not m:
        raise ParseError(path, 1, "not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ParseError(path, 1, f"unsupported maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    body = data[m.end():]
    if len(body) != w * h * c:
        raise ParseError(path, 1, f"expected {w * h * c} bytes of pixel data, found {len(body)}")
    a = np.frombuffer(body, dtype=np.uint8)
    return a.reshape((h, w) if c == 1 else (h, w, 3)).copy()


def image_to_u8(x) -> np.ndarray:
    return np.rint(np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, x) -> None:
    """Float image in [0, 1] -> 8-bit PPM/PGM."""
    write_pnm(path, image_to_u8(x))


def read_image(path) -> np.ndarray:
    return read_pnm(path).astype(float) / 255.0


def write_mask(path, mask) -> None:
    write_pnm(path, np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8))


def read_mask(path) -> np.ndarray:
    a = read_pnm(path)
    if a.ndim != 2:
        raise ParseError(path, 1, "mask must be a single-channel PGM")
    bad = (a != 0) & (a != 255)
    if bad.any():
        raise ParseError(path, 1, "mask values must be 0 or 255")
    return a == 255


# --------------------------------------------------------------------------
# small line-record files
# --------------------------------------------------------------------------

def write_occlusion_flags(path, records: Iterable[Sequence]) -> None:
    """Lines of ``frame sample_index occluded``."""
    lines = [f"{f} {int(k)} {int(bool(o))}" for f, k, o in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_occlusion_flags(path) -> list[tuple[str, int, bool]]:
    out = []
    for lineno, line in enumerate(_read_text(path), 1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 3 or tok[2] not in ("0", "1"):
            raise ParseError(path, lineno, "expected 'frame sample_index occluded(0|1)'")
        try:
            k = int(tok[1])
        except ValueError:
            raise ParseError(path, lineno, f"bad sample index {tok[1]!r}") from None
        out.append((tok[0], k, tok[2] == "1"))
    return out


def write_normalization(path, consts) -> None:
    Path(path).write_text(
        f"low {consts.low!r}\nhigh {consts.high!r}\npercentile {consts.percentile!r}\n",
        encoding="utf-8")


def read_normalization(path):
    from .risk import NormalizationConstants

    vals = {}
    for lineno, line in enumerate(_read_text(path), 1):
        if not line.strip():
            continue
        tok = line.split()
        if len(tok) != 2 or tok[0] not in ("low", "high", "percentile"):
            raise ParseError(path, lineno, "expected 'low|high|percentile <value>'")
        vals[tok[0]] = _float(path, lineno, tok[1], tok[0])
    missing = {"low", "high", "percentile"} - vals.keys()
    if missing:
        raise DataError(f"{path}: missing {sorted(missing)}")
    return NormalizationConstants(vals["low"], vals["high"], vals["percentile"])
