import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trailmark.dataset import (DatasetManifest, FrameRecord, associate, load_manifest, save_manifest, split,
                               split_indices)
from trailmark.errors import MissingFile, ParseError, TimestampOrderViolation
from trailmark.formats import write_pnm, write_ply
from trailmark.occlusion import PointCloud


def make_files(root, n):
    (root / "img").mkdir()
    (root / "cl").mkdir()
    lines = ["trailmark-manifest 1"]
    for k in range(n):
        write_pnm(root / "img" / f"{k}.ppm", np.zeros((2, 2, 3), dtype=np.uint8))
        write_ply(root / "cl" / f"{k}.ply", PointCloud(np.ones((1, 3))))
        lines.append(f"frame id=f{k} t={k * 0.1!r} image=img/{k}.ppm cloud_t={k * 0.1!r} cloud=cl/{k}.ply")
    return lines


def write(root, lines):
    p = root / "manifest.txt"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_empty_manifest(tmp_path):
    m = load_manifest(write(tmp_path, ["trailmark-manifest 1"]))
    assert m.frames == ()


def test_loads_and_roundtrips(tmp_path):
    lines = make_files(tmp_path, 4)
    p = write(tmp_path, lines)
    m = load_manifest(p, deep=True)
    assert [f.frame_id for f in m.frames] == ["f0", "f1", "f2", "f3"]
    assert m.association_tolerance == 0.05
    save_manifest(m, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_text() == p.read_text()


def test_duplicate_id_named(tmp_path):
    lines = make_files(tmp_path, 2)
    lines[2] = lines[2].replace("id=f1", "id=f0")
    with pytest.raises(TimestampOrderViolation, match="f0"):
        load_manifest(write(tmp_path, lines))


def test_decreasing_timestamp(tmp_path):
    lines = make_files(tmp_path, 2)
    lines[2] = lines[2].replace("t=0.1 ", "t=-0.1 ").replace("cloud_t=0.1", "cloud_t=-0.1")
    with pytest.raises(TimestampOrderViolation):
        load_manifest(write(tmp_path, lines))


def test_equal_timestamps_allowed(tmp_path):
    lines = make_files(tmp_path, 2)
    lines[2] = lines[2].replace("t=0.1 ", "t=0.0 ").replace("cloud_t=0.1", "cloud_t=0.0")
    assert len(load_manifest(write(tmp_path, lines)).frames) == 2


def test_association_tolerance(tmp_path):
    lines = make_files(tmp_path, 1)
    lines[1] = lines[1].replace("cloud_t=0.0", "cloud_t=0.06")
    with pytest.raises(ParseError) as exc:
        load_manifest(write(tmp_path, lines))
    assert exc.value.line == 2
    lines.insert(1, "tolerance 0.1")
    assert load_manifest(write(tmp_path, lines)).tolerance == 0.1


@pytest.mark.parametrize("mutate,err", [
    (lambda l: l.replace("image=img/0.ppm", "image=img/9.ppm"), MissingFile),
    (lambda l: l.replace("t=0.0 ", "t=abc "), ParseError),
    (lambda l: l.replace(" cloud=cl/0.ply", ""), ParseError),
    (lambda l: l + " bogus", ParseError),
])
def test_malformed_frames(tmp_path, mutate, err):
    lines = make_files(tmp_path, 1)
    lines[1] = mutate(lines[1])
    with pytest.raises(err):
        load_manifest(write(tmp_path, lines))


def test_bad_header_and_wrong_magic(tmp_path):
    with pytest.raises(ParseError):
        load_manifest(write(tmp_path, ["trailmark-manifest 2"]))
    lines = make_files(tmp_path, 1)
    (tmp_path / "img" / "0.ppm").write_bytes(b"GIF89a")
    with pytest.raises(ParseError):
        load_manifest(write(tmp_path, lines))
    with pytest.raises(MissingFile):
        load_manifest(tmp_path / "nope.txt")


def test_extras_preserved(tmp_path):
    lines = make_files(tmp_path, 1)
    write_pnm(tmp_path / "lab.pgm", np.zeros((2, 2), dtype=np.uint8))
    lines[1] += " labels=lab.pgm"
    m = load_manifest(write(tmp_path, lines))
    assert m.frames[0].extra("labels") == "lab.pgm"
    assert m.frames[0].with_extra("labels", "x.pgm").extras == (("labels", "x.pgm"),)


def test_rebased_resolves_to_same_files(tmp_path):
    lines = make_files(tmp_path, 2)
    m = load_manifest(write(tmp_path, lines))
    sub = tmp_path / "deeper" / "out"
    sub.mkdir(parents=True)
    r = m.rebased(sub)
    for a, b in zip(m.frames, r.frames):
        assert r.resolve(b.image).resolve() == m.resolve(a.image).resolve()
    save_manifest(r, sub / "m.txt")
    assert len(load_manifest(sub / "m.txt").frames) == 2


def test_split_examples():
    tr, va = split_indices(10, 0.8, 0)
    assert (len(tr), len(va)) == (8, 2)
    assert split_indices(10, 0.8, 3) == split_indices(10, 0.8, 3)
    with pytest.raises(ValueError):
        split_indices(10, 1.0, 0)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 200), st.floats(0.01, 0.99), st.integers(0, 2**32 - 1))
def test_split_partition(n, fraction, seed):
    tr, va = split_indices(n, fraction, seed)
    assert sorted(tr + va) == list(range(n))
    assert not set(tr) & set(va)


def test_split_manifest():
    frames = tuple(FrameRecord(f"f{k}", float(k), "i", float(k), "c") for k in range(10))
    a, b = split(DatasetManifest(frames), 0.8, 1)
    assert len(a.frames) == 8 and len(b.frames) == 2
    assert {f.frame_id for f in a.frames + b.frames} == {f.frame_id for f in frames}


def test_associate():
    assert associate([0.0, 1.0, 2.0], [0.02, 1.2, 1.98]) == [0, None, 2]
    assert associate([0.0], []) == [None]
