import numpy as np
import pytest

from meshgcn import autodiff as ad
from meshgcn.render import (CameraIntrinsics, edge_clearance, load_camera, rasterize, read_dpth, render_depth,
                            render_gradcheck, save_camera, uvd_to_xyz, write_dpth, xyz_to_uvd)

CAM = CameraIntrinsics(40.0, 40.0, 16.0, 16.0, 32, 32)


def ray_cast_oracle(V, F, cam, res, z_near, z_far):
    """Per-pixel Moller-Trumbore ray cast against every triangle."""
    H, W = res
    rc = cam.scaled_to(W, H)
    out = np.ones((H, W))
    for j in range(H):
        for i in range(W):
            d = np.array([(i + 0.5 - rc.cx) / rc.fx, (j + 0.5 - rc.cy) / rc.fy, 1.0])
            best = np.inf
            for f in F:
                a, b, c = V[f]
                if min(a[2], b[2], c[2]) <= 0:
                    continue
                e1, e2 = b - a, c - a
                p = np.cross(d, e2)
                det = e1 @ p
                if det == 0:
                    continue
                s = -a
                u = (s @ p) / det
                q = np.cross(s, e1)
                v = (d @ q) / det
                t = (e2 @ q) / det
                if u >= 0 and v >= 0 and u + v <= 1 and 0 < t < best:
                    best = t
            if np.isfinite(best):
                out[j, i] = np.clip((best - z_near) / (z_far - z_near), 0, 1)
    return out


def random_scene(rng, n=12, f=6):
    V = rng.uniform(-3, 3, (n, 3)) + [0, 0, 10.0]
    F = rng.integers(0, n, (f, 3))
    F = F[(F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])]
    return V, F


def test_uvd_to_xyz_examples():
    cam = CameraIntrinsics(100, 100, 0, 0, 100, 100)
    xyz = uvd_to_xyz(np.array([[0.5, 0.5, 0.0]]), cam, 2.0, 1.0).data
    np.testing.assert_allclose(xyz, [[1, 1, 2]])
    cam2 = CameraIntrinsics(300, 300, 128, 128, 256, 256)
    np.testing.assert_allclose(uvd_to_xyz(np.array([[0.5, 0.5, 0.0]]), cam2, 500.0, 30.0).data, [[0, 0, 500]])


def test_uvd_round_trip():
    rng = np.random.default_rng(0)
    cam = CameraIntrinsics(300, 300, 128, 128, 256, 256)
    xyz = rng.uniform(-50, 50, (20, 3)) + [0, 0, 500]
    uvd = xyz_to_uvd(xyz, cam, 480.0, 30.0)
    np.testing.assert_allclose(uvd_to_xyz(uvd, cam, 480.0, 30.0).data, xyz, atol=1e-9)
    # doubling the scale doubles z - root
    z2 = uvd_to_xyz(uvd, cam, 480.0, 60.0).data[:, 2]
    np.testing.assert_allclose(z2 - 480, 2 * (xyz[:, 2] - 480), atol=1e-9)


def test_empty_scene_is_background():
    d = render_depth(np.zeros((3, 3)), np.zeros((0, 3), dtype=int), CAM).data
    assert d.shape == (32, 32) and np.all(d == 1.0)


def test_constant_plane():
    V = np.array([[-2000, -2000, 500.0], [2000, -2000, 500.0], [0, 4000, 500.0]])
    d = render_depth(V, np.array([[0, 1, 2]]), CAM, z_near=100, z_far=2000).data
    assert np.all(d == (500 - 100) / 1900)


def test_nearer_triangle_wins():
    far = np.array([[-4000, -4000, 800.0], [4000, -4000, 800.0], [0, 8000, 800.0]])
    near = far * [1, 1, 0.5]
    V = np.concatenate([far, near])
    d = render_depth(V, np.array([[0, 1, 2], [3, 4, 5]]), CAM, z_near=100, z_far=2000).data
    assert np.all(d == 300 / 1900)


def test_culling_is_tallied():
    V = np.array([[-1, -1, -1.0], [1, -1, 5.0], [0, 1, 5.0]])
    r = rasterize(V, np.array([[0, 1, 2]]), CAM)
    assert r.culled == 1 and np.all(r.face == -1)


def test_shared_edge_pixels_counted_once():
    # a square split along its diagonal, placed so the diagonal passes
    # exactly through pixel centres: each centre goes to exactly one triangle
    z = 10.0
    s = 16 * z / 40
    V = np.array([[-s, -s, z], [s, -s, z], [s, s, z], [-s, s, z]])
    F = np.array([[0, 1, 2], [0, 2, 3]])
    r = rasterize(V, F, CAM)
    both = [rasterize(V, F[[k]], CAM).face >= 0 for k in range(2)]
    assert not np.any(both[0] & both[1])
    assert np.array_equal(r.face >= 0, both[0] | both[1])


@pytest.mark.parametrize("seed", range(5))
def test_matches_ray_cast_oracle(seed):
    rng = np.random.default_rng(seed)
    V, F = random_scene(rng)
    res = (16, 16)
    if edge_clearance(V, F, CAM, res) < 1e-6:
        pytest.skip("pixel centre on a triangle edge")
    got = render_depth(V, F, CAM, res, 1.0, 20.0).data
    want = ray_cast_oracle(V, F, CAM, res, 1.0, 20.0)
    assert np.abs(got - want).max() <= 1e-12


def test_gradient_matches_finite_differences():
    V = np.array([[-100, -100, 500.0], [100, -80, 520.0], [0, 200, 480.0]])
    rep = render_gradcheck(V, np.array([[0, 1, 2]]), CAM, tol=1e-3)
    assert not rep.skipped and rep.ok, rep


def test_translation_in_plane_has_zero_gradient_for_parallel_plane():
    V = np.array([[-100, -100, 500.0], [100, -100, 500.0], [0, 200, 500.0]])
    tape = ad.Tape()
    x = tape.param(V)
    g = tape.backward(ad.sum(render_depth(x, np.array([[0, 1, 2]]), CAM)))[x]
    assert np.all(g[:, :2].sum(axis=0) == 0)


def test_occluded_triangle_gets_no_gradient():
    near = np.array([[-100, -100, 400.0], [100, -100, 400.0], [0, 200, 400.0]])
    far = near * [0.5, 0.5, 2]
    V = np.concatenate([near, far])
    tape = ad.Tape()
    x = tape.param(V)
    g = tape.backward(ad.sum(render_depth(x, np.array([[0, 1, 2], [3, 4, 5]]), CAM)))[x]
    assert not g[3:].any() and g[:3].any()


def test_edge_proximate_gradcheck_is_skipped():
    z = 10.0
    s = 16 * z / 40
    V = np.array([[-s, -s, z], [s, -s, z], [s, s, z]])
    rep = render_gradcheck(V, np.array([[0, 1, 2]]), CAM)
    assert rep.skipped and "edge" in rep.reason


def test_dpth_round_trip(tmp_path):
    d = np.random.default_rng(0).random((32, 24)).astype(np.float32)
    write_dpth(tmp_path / "d.dpth", d)
    raw = (tmp_path / "d.dpth").read_bytes()
    assert raw[:4] == b"DPTH" and int.from_bytes(raw[4:8], "little") == 24
    assert np.array_equal(read_dpth(tmp_path / "d.dpth"), d)


def test_camera_json(tmp_path):
    save_camera(tmp_path / "c.json", CAM)
    assert load_camera(tmp_path / "c.json") == CAM
