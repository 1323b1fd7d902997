import math

import numpy as np
import pytest

from trailmark.dataset import load_manifest
from trailmark.errors import ConfigError, PathTooShort
from trailmark.evaluation import SemanticClass
from trailmark.formats import read_occlusion_flags, read_pose_log
from trailmark.geometry import CameraModel, Pose, forward_camera_extrinsic, project_points
from trailmark.occlusion import PointClass
from trailmark.synth import (Box, RayPattern, SceneSpec, Sphere, VehiclePath, cast_rays, generate_dataset,
                             oracle_occlusion, random_scene, render, sample_cloud, value_noise, write_dataset)
from trailmark.trajectory import ProjectionWindow, Wheel, arc_length, project_trajectory

DOWN = CameraModel(100.0, 100.0, 32.0, 24.0, 64, 48, forward_camera_extrinsic((0.0, 0.0, 2.0), math.pi / 2))


def test_downward_camera_sees_only_ground():
    img, lab = render(SceneSpec(), Pose.planar(0.0, 0, 0, 0), DOWN)
    assert img.shape == (48, 64, 3) and lab.shape == (48, 64)
    assert np.all(lab == SemanticClass.GROUND)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_box_in_view_centre_is_labelled(camera):
    scene = SceneSpec(obstacles=(Box((8.0, 0.0), (1.0, 3.0, 3.0)),))
    _, lab = render(scene, Pose.planar(0.0, 0, 0, 0), camera)
    assert np.all(lab[95:106, 150:171] == SemanticClass.VEGETATION)


def test_render_is_deterministic(camera):
    scene = random_scene(4)
    pose = scene.path.pose(1.0, 0.0)
    a, la = render(scene, pose, camera)
    b, lb = render(scene, pose, camera)
    assert np.array_equal(a, b) and np.array_equal(la, lb)


def test_hood_rows_are_unlabelled(camera):
    img, lab = render(SceneSpec(hood_rows=10), Pose.planar(0.0, 0, 0, 0), camera)
    assert np.all(lab[-10:] == SemanticClass.UNLABELED)
    assert np.all(img[-10:] == SceneSpec().hood_color)


def test_scene_validation():
    with pytest.raises(ConfigError):
        Box((0.0, 0.0), (1.0, -1.0, 1.0))
    with pytest.raises(ConfigError):
        Sphere((0.0, 0.0, 0.5), 1.0)
    with pytest.raises(ConfigError):
        VehiclePath(speed=0.0)


def test_value_noise_range_and_determinism(rng):
    p = rng.uniform(-50, 50, (1000, 3))
    a = value_noise(p, 3)
    assert a.min() >= 0.0 and a.max() < 1.0
    assert np.array_equal(a, value_noise(p, 3))
    assert not np.array_equal(a, value_noise(p, 4))


def down_pattern(step_deg=0.25, noise=0.0):
    return RayPattern.covering(DOWN, math.radians(step_deg), 0.0, noise_sigma=noise)


def test_cloud_on_plane_without_noise():
    pose = Pose.planar(0.0, 3.0, -1.0, 0.4)
    c = sample_cloud(SceneSpec(ground_height=0.25), pose, DOWN, down_pattern())
    world = DOWN.world_from_camera(pose).apply(c.points)
    assert len(c) > 1000
    assert np.abs(world[:, 2] - 0.25).max() < 1e-9
    assert np.all(c.classes == PointClass.GROUND)


def test_cloud_point_on_box_face():
    scene = SceneSpec(obstacles=(Box((10.0, 0.0), (2.0, 2.0, 4.0)),))
    cam = CameraModel(100.0, 100.0, 32.0, 24.0, 64, 48, forward_camera_extrinsic((0.0, 0.0, 1.0), 0.0))
    pose = Pose.planar(0.0, 0, 0, 0)
    c = sample_cloud(scene, pose, cam, RayPattern(-0.05, 0.05, 0.01, -0.05, 0.05, 0.01))
    world = cam.world_from_camera(pose).apply(c.points)
    assert np.all(c.classes == PointClass.OBSTACLE)
    assert np.abs(world[:, 0] - 9.0).max() < 1e-9  # front face at x = 9


def test_cloud_noise_level():
    pose = Pose.planar(0.0, 0, 0, 0)
    c = sample_cloud(SceneSpec(), pose, DOWN, down_pattern(0.2, noise=0.02), seed=11)
    assert len(c) >= 10_000
    # range noise is applied along each ray, so measure the residual along the ray
    centre = DOWN.world_from_camera(pose).translation
    r = np.linalg.norm(c.points, axis=1)
    d = c.points / r[:, None]
    d_world = d @ DOWN.world_from_camera(pose).rotation_matrix.T
    t_plane = -centre[2] / d_world[:, 2]
    rms = float(np.sqrt(np.mean((r - t_plane) ** 2)))
    assert 0.015 <= rms <= 0.025


def test_oracle_examples():
    cam_centre = np.array([0.0, 0.0, 1.5])
    open_ground = oracle_occlusion(SceneSpec(), cam_centre, [[5.0, 0.0, 0.0], [20.0, 3.0, 0.0]])
    assert not open_ground.any()
    scene = SceneSpec(obstacles=(Box((10.0, 0.0), (1.0, 2.0, 2.0)),))
    assert oracle_occlusion(scene, cam_centre, [[15.0, 0.0, 0.0]]).tolist() == [True]
    assert oracle_occlusion(scene, cam_centre, [[8.0, 0.0, 0.0]]).tolist() == [False]


def test_ground_hit_is_not_before_a_ground_point():
    # the segment ends on the ground; that end-point is not an occluder
    t, kind = cast_rays(SceneSpec(), [0.0, 0.0, 1.0], [[4.0, 0.0, -1.0]])
    assert kind[0] == 0 and t[0] == pytest.approx(1.0)
    assert not oracle_occlusion(SceneSpec(), [0.0, 0.0, 1.0], [[4.0, 0.0, 0.0]])[0]


def test_sphere_ray_hit():
    scene = SceneSpec(obstacles=(Sphere((10.0, 0.0, 1.0), 1.0),))
    t, kind = cast_rays(scene, [0.0, 0.0, 1.0], [[1.0, 0.0, 0.0]], include_ground=False)
    assert kind[0] == 1 and t[0] == pytest.approx(9.0)


def test_generate_counts_and_pose_log(tmp_path, camera, wheels):
    scene = SceneSpec(path=VehiclePath(speed=8.33, duration=10.0))
    pattern = RayPattern.covering(camera, math.radians(3.0))
    ds = generate_dataset(scene, camera, ProjectionWindow(), wheels, pattern)
    assert len(ds.frames) == 101
    assert len(ds.labelable) == 61
    m = write_dataset(ds, tmp_path / "d")
    back = read_pose_log(tmp_path / "d" / "poses.txt")
    for a, b in zip(ds.poses, back):
        assert abs(a.timestamp - b.timestamp) <= 1e-9
        assert np.allclose(a.translation, b.translation, atol=1e-9)
        assert np.allclose(a.rotation, b.rotation, atol=1e-9)
    traj = project_trajectory(0.0, back, wheels, camera, ProjectionWindow())
    assert arc_length(traj, Wheel.FRONT_LEFT) == pytest.approx(33.32, abs=1e-6)
    loaded = load_manifest(m, deep=True)
    assert len(loaded.frames) == 101
    assert loaded.dumps() == m.read_text()
    flags = read_occlusion_flags(tmp_path / "d" / "ground_truth_occlusion.txt")
    assert len(flags) == 61 * 2 * 2 * 41


def test_path_too_short(camera, wheels):
    with pytest.raises(PathTooShort):
        generate_dataset(SceneSpec(path=VehiclePath(duration=3.0)), camera, ProjectionWindow(), wheels)


def test_generation_is_deterministic(camera, wheels):
    scene = random_scene(9, duration=4.5)
    pattern = RayPattern.covering(camera, math.radians(2.0), noise_sigma=0.05)
    a = generate_dataset(scene, camera, ProjectionWindow(), wheels, pattern)
    b = generate_dataset(scene, camera, ProjectionWindow(), wheels, pattern, workers=3)
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.cloud.points, fb.cloud.points)
        assert (fa.occlusion is None and fb.occlusion is None) or np.array_equal(fa.occlusion, fb.occlusion)


def test_labels_agree_with_cloud_classes(camera):
    scene = random_scene(2)
    pose = scene.path.pose(0.5, 0.0)
    _, lab = render(scene, pose, camera)
    cloud = sample_cloud(scene, pose, camera, RayPattern.covering(camera, math.radians(0.5)))
    uv, valid = project_points(camera, cloud.points)
    col = np.rint(uv[:, 0]).astype(int)
    row = np.rint(uv[:, 1]).astype(int)
    inside = valid & (col >= 1) & (col < camera.width - 1) & (row >= 1) & (row < camera.height - 1)
    checked = 0
    for i in np.flatnonzero(inside):
        patch = lab[row[i] - 1:row[i] + 2, col[i] - 1:col[i] + 2]
        if np.all(patch == patch[0, 0]):  # away from silhouettes
            expect = SemanticClass.GROUND if cloud.classes[i] == PointClass.GROUND else SemanticClass.VEGETATION
            assert patch[0, 0] == expect
            checked += 1
    assert checked > 1000
