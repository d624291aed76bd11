import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zoomsplat.geometry import (Camera, DepthMap, GeometryError, back_project,
                                back_project_grid, identity_camera,
                                normals_from_depth, project, project_points,
                                quat_normalize, quat_to_rot, quats_from_z_to,
                                rot_to_quat, view_directions)


def rotation_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis /= np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def posed_camera(axis, angle, translation, **kw):
    pose = np.eye(4)
    pose[:3, :3] = rotation_from_axis_angle(axis, angle)
    pose[:3, 3] = translation
    return Camera(pose=pose, **kw)


class TestCamera:
    def test_principal_point_defaults_to_center(self):
        cam = identity_camera(100, 80, fx=50.0)
        assert cam.cx == 50.0 and cam.cy == 40.0

    def test_rejects_non_orthonormal_pose(self):
        pose = np.eye(4)
        pose[0, 0] = 2.0
        with pytest.raises(GeometryError):
            Camera(pose=pose, fx=10, fy=10, width=4, height=4)

    def test_rejects_reflection(self):
        pose = np.eye(4)
        pose[0, 0] = -1.0  # det -1
        with pytest.raises(GeometryError):
            Camera(pose=pose, fx=10, fy=10, width=4, height=4)

    def test_rejects_bad_intrinsics(self):
        with pytest.raises(GeometryError):
            identity_camera(4, 4, fx=-1.0)
        with pytest.raises(GeometryError):
            identity_camera(0, 4, fx=1.0)

    def test_json_round_trip(self):
        cam = posed_camera([1, 2, 3], 0.7, [0.1, -0.2, 0.3],
                           fx=123.0, fy=77.0, width=64, height=48, cx=30.0, cy=25.0)
        back = Camera.from_json(cam.to_json())
        assert np.allclose(back.pose, cam.pose)
        assert back.fx == cam.fx and back.cy == cam.cy


class TestProjection:
    def test_on_axis_point(self):
        cam = identity_camera(100, 100, fx=100.0, cx=50.0, cy=50.0)
        pixel, depth, ok = project(np.array([0.0, 0.0, 2.0]), cam)
        assert ok
        assert depth == 2.0
        assert np.allclose(pixel, [50.0, 50.0])

    def test_hand_evaluated_pinhole(self):
        # x = fx * (1/2) + cx = 100 * 0.5 + 50
        cam = identity_camera(200, 200, fx=100.0, cx=50.0, cy=50.0)
        pixel, depth, ok = project(np.array([1.0, 0.0, 2.0]), cam)
        assert ok and pixel[0] == 100.0

    def test_behind_camera_flag(self):
        cam = identity_camera(64, 64, fx=32.0)
        _, _, ok = project(np.array([0.0, 0.0, -1.0]), cam)
        assert not ok

    def test_back_project_principal_ray(self):
        cam = identity_camera(64, 64, fx=32.0)
        p = back_project(np.array([cam.cx, cam.cy]), 3.5, cam)
        assert np.allclose(p, [0.0, 0.0, 3.5])

    def test_back_project_hand_evaluated(self):
        cam = identity_camera(64, 64, fx=32.0)
        p = back_project(np.array([cam.cx + cam.fx, cam.cy]), 1.0, cam)
        assert np.allclose(p, [1.0, 0.0, 1.0], atol=1e-12)

    def test_back_project_rejects_nonpositive_depth(self):
        cam = identity_camera(64, 64, fx=32.0)
        with pytest.raises(GeometryError):
            back_project(np.array([1.0, 1.0]), 0.0, cam)

    def test_round_trip_1000_random_pairs(self):
        rng = np.random.default_rng(42)
        cam = posed_camera([0.3, -1.0, 0.5], 1.1, [2.0, -1.0, 0.5],
                           fx=210.0, fy=190.0, width=128, height=96, cx=70.0, cy=44.0)
        max_err = 0.0
        for _ in range(1000):
            px = rng.uniform([0, 0], [cam.width, cam.height])
            d = rng.uniform(0.1, 50.0)
            world = back_project(px, d, cam)
            px2, d2, ok = project(world, cam)
            assert ok
            max_err = max(max_err, abs(d2 - d), *np.abs(px2 - px))
        assert max_err < 1e-9

    @given(fx=st.floats(10, 2000), fy=st.floats(10, 2000),
           u=st.floats(0, 64), v=st.floats(0, 64), d=st.floats(0.01, 100))
    @settings(max_examples=100, deadline=None)
    def test_round_trip_randomized_intrinsics(self, fx, fy, u, v, d):
        cam = identity_camera(64, 64, fx=fx, fy=fy)
        world = back_project(np.array([u, v]), d, cam)
        px2, d2, ok = project(world, cam)
        assert ok
        assert abs(d2 - d) < 1e-9 * max(1.0, d)
        assert np.all(np.abs(px2 - [u, v]) < 1e-9 * max(1.0, fx, fy))


class TestNormals:
    def test_fronto_parallel_plane_faces_camera(self):
        cam = identity_camera(16, 16, fx=16.0)
        depth = DepthMap(np.full((16, 16), 3.0))
        normals = normals_from_depth(depth, cam)
        assert np.allclose(np.linalg.norm(normals, axis=-1), 1.0, atol=1e-6)
        assert np.allclose(normals, [0.0, 0.0, -1.0], atol=1e-9)

    def test_tilted_plane_matches_analytic_normal(self):
        # world plane z = z0 + a*x seen by an identity camera
        cam = identity_camera(32, 32, fx=64.0)
        a, z0 = 0.3, 4.0
        us = np.arange(32) + 0.5
        denom = 1.0 - a * (us[None, :] - cam.cx) / cam.fx
        depth = DepthMap(np.broadcast_to(z0 / denom, (32, 32)).copy())
        normals = normals_from_depth(depth, cam)
        expected = np.array([a, 0.0, -1.0]) / np.hypot(a, 1.0)
        dots = np.clip(normals.reshape(-1, 3) @ expected, -1, 1)
        assert np.degrees(np.arccos(dots)).max() < 1.0

    def test_single_valid_pixel_gets_fallback(self):
        cam = identity_camera(8, 8, fx=8.0)
        values = np.zeros((8, 8))
        values[4, 4] = 2.0
        depth = DepthMap(values, validity=values > 0)
        normals = normals_from_depth(depth, cam)
        views = view_directions(cam)
        assert np.allclose(normals[4, 4], -views[4, 4])

    def test_unit_length_everywhere(self):
        rng = np.random.default_rng(3)
        cam = identity_camera(24, 24, fx=30.0)
        values = rng.uniform(1.0, 5.0, size=(24, 24))
        values[rng.random((24, 24)) < 0.3] = 0.0
        depth = DepthMap(values, validity=values > 0)
        normals = normals_from_depth(depth, cam)
        assert np.max(np.abs(np.linalg.norm(normals, axis=-1) - 1.0)) < 1e-6

    def test_orientation_toward_camera(self):
        rng = np.random.default_rng(4)
        cam = posed_camera([1, 0.2, 0], 0.4, [0.5, 0.1, -2.0],
                           fx=40.0, fy=40.0, width=24, height=24)
        depth = DepthMap(rng.uniform(2.0, 4.0, size=(24, 24)))
        normals = normals_from_depth(depth, cam)
        views = view_directions(cam)
        assert np.all(np.sum(normals * views, axis=-1) < 1e-12)


class TestQuaternions:
    @given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
        lambda q: np.linalg.norm(q) > 1e-3))
    @settings(max_examples=150, deadline=None)
    def test_quat_rot_round_trip(self, q):
        q = quat_normalize(np.array(q))
        R = quat_to_rot(q)
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(R), 1.0, atol=1e-12)
        q2 = rot_to_quat(R)
        assert min(np.linalg.norm(q2 - q), np.linalg.norm(q2 + q)) < 1e-9

    def test_quats_from_z_to_direction(self):
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(50, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        quats = quats_from_z_to(dirs)
        rots = quat_to_rot(quats)
        assert np.allclose(rots[:, :, 2], dirs, atol=1e-9)

    def test_quats_from_z_degenerate_directions(self):
        quats = quats_from_z_to(np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]))
        rots = quat_to_rot(quats)
        assert np.allclose(rots[0, :, 2], [0, 0, 1])
        assert np.allclose(rots[1, :, 2], [0, 0, -1])


class TestDepthIO:
    def test_bin_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        values = rng.uniform(0.5, 9.0, size=(20, 30)).astype(np.float32).astype(np.float64)
        values[3, 4] = 0.0
        depth = DepthMap(values, validity=values > 0)
        path = tmp_path / "d.bin"
        n = depth.save_bin(path)
        assert n == 8 + 4 * 20 * 30
        back = DepthMap.load_bin(path)
        assert np.array_equal(back.validity, depth.validity)
        assert np.allclose(back.values[back.validity], depth.values[depth.validity])

    def test_bin_truncation_rejected(self, tmp_path):
        path = tmp_path / "d.bin"
        depth = DepthMap(np.full((4, 4), 2.0))
        depth.save_bin(path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(GeometryError):
            DepthMap.load_bin(path)

    def test_png16_round_trip(self, tmp_path):
        values = np.round(np.linspace(0.1, 5.0, 64).reshape(8, 8), 3)
        depth = DepthMap(values)
        path = tmp_path / "d.png"
        depth.save_png16(path, scale=1000.0)
        back = DepthMap.load_png16(path, scale=1000.0)
        assert np.allclose(back.values[back.validity],
                           depth.values[depth.validity], atol=5e-4)

    def test_grid_back_projection_matches_scalar(self):
        cam = posed_camera([0, 1, 0], 0.3, [1.0, 0.0, 0.5],
                           fx=20.0, fy=25.0, width=8, height=6)
        rng = np.random.default_rng(5)
        depth = DepthMap(rng.uniform(1.0, 3.0, size=(6, 8)))
        grid = back_project_grid(depth, cam)
        for (i, j) in [(0, 0), (3, 5), (5, 7)]:
            single = back_project(np.array([j + 0.5, i + 0.5]),
                                  depth.values[i, j], cam)
            assert np.allclose(grid[i, j], single, atol=1e-12)
