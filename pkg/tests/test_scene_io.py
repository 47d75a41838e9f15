import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streetsplat.scene_io import (
    BehindCameraError,
    CameraModel,
    ConsistencyError,
    DomainError,
    Frame,
    SceneFormatError,
    SyntheticSceneConfig,
    ValidationError,
    generate_synthetic_scene,
    load_scene,
    look_camera,
    project,
    read_camera,
    read_depth,
    save_scene,
    scenes_equal,
    sparsify_depth,
    unproject,
    write_depth,
)


def simple_cam(w2c=None):
    return CameraModel(fx=100.0, fy=100.0, cx=50.0, cy=50.0, w2c=np.eye(4) if w2c is None else w2c,
                       width=100, height=100)


def rotation_from(axis_angle):
    from scipy.spatial.transform import Rotation

    return Rotation.from_rotvec(axis_angle).as_matrix()


def random_camera(rng):
    w2c = np.eye(4)
    w2c[:3, :3] = rotation_from(rng.normal(size=3))
    w2c[:3, 3] = rng.normal(size=3) * 3
    w, h = int(rng.integers(16, 200)), int(rng.integers(16, 200))
    return CameraModel(fx=rng.uniform(20, 300), fy=rng.uniform(20, 300), cx=rng.uniform(0, w - 1),
                       cy=rng.uniform(0, h - 1), w2c=w2c, width=w, height=h)


# ---- camera geometry


def test_unproject_principal_point():
    np.testing.assert_allclose(unproject(50, 50, 2.0, simple_cam()), [0.0, 0.0, 2.0])


def test_unproject_offset_pixel():
    np.testing.assert_allclose(unproject(60, 50, 2.0, simple_cam()), [0.2, 0.0, 2.0])


def test_project_on_axis():
    u, v, z = project([0.0, 0.0, 5.0], simple_cam())
    assert (u, v, z) == pytest.approx((50.0, 50.0, 5.0))


def test_project_translated_pose_by_hand():
    # camera center at world x=+1, looking down +z: w2c translation is -R c = (-1, 0, 0)
    w2c = np.eye(4)
    w2c[0, 3] = -1.0
    cam = simple_cam(w2c)
    p = np.array([0.0, 0.0, 4.0])
    # hand-applied transform: p_cam = (0 - 1, 0, 4) -> u = cx + fx * (-1) / 4
    u, v, z = project(p, cam)
    assert z == pytest.approx(4.0)
    assert u == pytest.approx(50.0 - 100.0 * (1.0 / 4.0) * 1.0)
    assert v == pytest.approx(50.0)


def test_nonpositive_depth_is_domain_error():
    with pytest.raises(DomainError):
        unproject(10, 10, 0.0, simple_cam())
    with pytest.raises(DomainError):
        unproject(10, 10, -1.0, simple_cam())


def test_point_behind_camera():
    with pytest.raises(BehindCameraError):
        project([0.0, 0.0, -1.0], simple_cam())
    with pytest.raises(BehindCameraError):
        project([0.0, 0.0, 0.0], simple_cam())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_project_unproject_roundtrip(seed):
    rng = np.random.default_rng(seed)
    cam = random_camera(rng)
    u, v = rng.uniform(0, cam.width), rng.uniform(0, cam.height)
    d = rng.uniform(0.1, 200.0)
    pu, pv, pd = project(unproject(u, v, d, cam), cam)
    np.testing.assert_allclose([pu, pv, pd], [u, v, d], atol=1e-5, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unproject_project_roundtrip(seed):
    rng = np.random.default_rng(seed)
    cam = random_camera(rng)
    p_cam = np.array([rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0.5, 50)])
    p = cam.rotation.T @ (p_cam - cam.translation)
    u, v, d = project(p, cam)
    np.testing.assert_allclose(unproject(u, v, d, cam), p, atol=1e-5, rtol=0)


@pytest.mark.parametrize("bad", [
    dict(fx=-1.0), dict(fy=0.0), dict(cx=100.0), dict(cy=-0.5), dict(near=0.0), dict(near=50.0, far=10.0),
])
def test_camera_invariants(bad):
    kwargs = dict(fx=100.0, fy=100.0, cx=50.0, cy=50.0, w2c=np.eye(4), width=100, height=100)
    kwargs.update(bad)
    with pytest.raises(ValidationError):
        CameraModel(**kwargs)


def test_camera_rejects_reflection_and_shear():
    w2c = np.eye(4)
    w2c[0, 0] = -1.0
    with pytest.raises(ValidationError):
        simple_cam(w2c)
    w2c = np.eye(4)
    w2c[0, 1] = 0.1
    with pytest.raises(ValidationError):
        simple_cam(w2c)


def test_shifted_camera_moves_along_own_x():
    cam = look_camera([1.0, 2.0, 1.5], 0.3, width=96, height=64, fx=60.0)
    moved = cam.shifted(0.5)
    right = cam.rotation[0]  # camera x axis expressed in world coordinates
    np.testing.assert_allclose(moved.center - cam.center, 0.5 * right, atol=1e-12)
    assert cam.shifted(0.0) == cam


# ---- synthetic generator


def test_generator_deterministic():
    cfg = SyntheticSceneConfig(seed=7)
    assert scenes_equal(generate_synthetic_scene(cfg), generate_synthetic_scene(SyntheticSceneConfig(seed=7)))


def test_different_seeds_differ():
    a = generate_synthetic_scene(SyntheticSceneConfig(seed=1))
    b = generate_synthetic_scene(SyntheticSceneConfig(seed=2))
    assert not np.array_equal(a.frames[0].image, b.frames[0].image)


def test_camera_advances_forward_step():
    scene = generate_synthetic_scene(SyntheticSceneConfig(seed=3, n_frames=4, forward_step_m=1.5))
    centers = np.array([f.camera.center for f in scene.frames])
    np.testing.assert_allclose(np.diff(centers[:, 1]), 1.5, atol=1e-12)
    np.testing.assert_allclose(centers[:, [0, 2]], np.tile(centers[0, [0, 2]], (4, 1)), atol=1e-12)


def _ground_only_pixels(scene, t=0):
    world = scene.world()
    cam = scene.frames[t].camera
    h, w = cam.height, cam.width
    rows, cols = np.mgrid[0:h, 0:w]
    dirs_cam = np.stack([(cols - cam.cx) / cam.fx, (rows - cam.cy) / cam.fy, np.ones((h, w))], -1)
    dirs = dirs_cam @ cam.rotation
    _, prim, _, _ = world.intersect(cam.center, dirs)
    return prim == -1, dirs_cam


def test_ground_depth_closed_form():
    """Ground hit with a level camera at height h: range h/sin(theta), camera z = h/tan(theta)."""
    cfg = SyntheticSceneConfig(seed=5, yaw_jitter_deg=0.0)
    scene = generate_synthetic_scene(cfg)
    ground, dirs_cam = _ground_only_pixels(scene)
    dense = scene.dense_depth[0]
    rows, cols = np.nonzero(ground)
    assert rows.size > 100
    for r, c in zip(rows[::37], cols[::37]):
        x, y, _ = dirs_cam[r, c]
        # camera y points down; the downward angle below the horizontal plane
        theta = np.arctan2(y, np.hypot(1.0, x))
        rng_m = cfg.camera_height / np.sin(theta)
        horizontal = np.hypot(1.0, x)
        z_depth = rng_m * np.cos(theta) / horizontal
        assert dense[r, c] == pytest.approx(z_depth, abs=1e-4)


def _slab_oracle(origin, d, boxes, backdrop_y):
    best = np.inf
    if d[2] < 0:
        best = min(best, -origin[2] / d[2])
    if d[1] > 0:
        best = min(best, (backdrop_y - origin[1]) / d[1])
    for b in boxes:
        t_lo, t_hi = -np.inf, np.inf
        ok = True
        for a in range(3):
            if abs(d[a]) < 1e-15:
                if not b.lo[a] <= origin[a] <= b.hi[a]:
                    ok = False
                continue
            t1, t2 = (b.lo[a] - origin[a]) / d[a], (b.hi[a] - origin[a]) / d[a]
            t_lo, t_hi = max(t_lo, min(t1, t2)), min(t_hi, max(t1, t2))
        if ok and t_lo <= t_hi and t_lo > 0:
            best = min(best, t_lo)
    return best


def test_dense_depth_matches_intersection_oracle():
    cfg = SyntheticSceneConfig(seed=11, n_frames=2)
    scene = generate_synthetic_scene(cfg)
    world = scene.world()
    rng = np.random.default_rng(0)
    for _ in range(100):
        t = int(rng.integers(2))
        cam = scene.frames[t].camera
        r, c = int(rng.integers(cam.height)), int(rng.integers(cam.width))
        d_cam = np.array([(c - cam.cx) / cam.fx, (r - cam.cy) / cam.fy, 1.0])
        d = cam.rotation.T @ d_cam
        expected = _slab_oracle(cam.center, d, world.boxes, world.backdrop_y)
        assert scene.dense_depth[t][r, c] == pytest.approx(expected, abs=1e-4)


def test_full_density_keeps_dense_depth():
    scene = generate_synthetic_scene(SyntheticSceneConfig(seed=2, lidar_density=1.0))
    for f, d in zip(scene.frames, scene.dense_depth):
        np.testing.assert_array_equal(f.sparse_depth, d)


def test_scene_frames_satisfy_invariants():
    scene = generate_synthetic_scene(SyntheticSceneConfig(seed=4))
    for f in scene.frames:
        assert f.image.min() >= 0 and f.image.max() <= 1
        valid = f.sparse_depth[f.sparse_depth != 0]
        assert valid.size and valid.min() > f.camera.near and valid.max() < f.camera.far


@pytest.mark.parametrize("bad", [dict(lidar_density=0.0), dict(lidar_density=1.5), dict(n_frames=1)])
def test_config_invariants(bad):
    with pytest.raises(ValidationError):
        SyntheticSceneConfig(**bad)


def test_config_rejects_unknown_keys():
    with pytest.raises(ValidationError):
        SyntheticSceneConfig.from_dict({"seed": 1, "bogus": 2})


# ---- sparsification


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 1.0), st.sampled_from(["scanline", "uniform"]))
def test_sparsify_properties(seed, density, pattern):
    rng = np.random.default_rng(seed)
    dense = rng.uniform(3.0, 90.0, (40, 60)).astype(np.float32)
    dense[rng.uniform(size=dense.shape) < 0.1] = 0.0
    out = sparsify_depth(dense, density, pattern, seed)
    kept = out != 0
    # never invents values
    np.testing.assert_array_equal(out[kept], dense[kept])
    n_valid = np.count_nonzero(dense)
    assert abs(kept.sum() / n_valid - density) <= 0.1 * density + 1.0 / n_valid


def test_sparsify_identity_at_full_density():
    dense = np.random.default_rng(0).uniform(3, 9, (8, 8))
    np.testing.assert_array_equal(sparsify_depth(dense, 1.0), dense)


def test_sparsify_half_of_sparse_map():
    dense = np.random.default_rng(1).uniform(3, 9, (64, 96))
    sparse = sparsify_depth(dense, 0.2, "scanline", 3)
    halved = sparsify_depth(sparse, 0.5, "uniform", 4)
    assert np.count_nonzero(halved) == pytest.approx(0.5 * np.count_nonzero(sparse), rel=0.1)
    assert np.all((halved == 0) | (halved == sparse))


def test_sparsify_deterministic():
    dense = np.random.default_rng(2).uniform(3, 9, (32, 32))
    for pattern in ("scanline", "uniform"):
        np.testing.assert_array_equal(sparsify_depth(dense, 0.1, pattern, 9), sparsify_depth(dense, 0.1, pattern, 9))


def test_scanline_pattern_uses_evenly_spaced_rows():
    dense = np.full((64, 96), 10.0)
    out = sparsify_depth(dense, 0.05, "scanline", 0)
    rows = np.unique(np.nonzero(out)[0])
    assert len(rows) > 1 and len(set(np.diff(rows))) == 1


def test_sparsify_rejects_bad_density():
    with pytest.raises(ValueError):
        sparsify_depth(np.ones((4, 4)), 0.0)


# ---- files


def test_save_load_roundtrip(tmp_path):
    scene = generate_synthetic_scene(SyntheticSceneConfig(seed=8))
    sdir = save_scene(scene, tmp_path)
    assert scenes_equal(load_scene(sdir), scene)


def test_depth_file_layout(tmp_path):
    depth = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_depth(tmp_path / "d.adgd", depth)
    raw = (tmp_path / "d.adgd").read_bytes()
    assert raw[:4] == b"ADGD"
    assert struct.unpack("<II", raw[4:12]) == (3, 2)
    np.testing.assert_array_equal(np.frombuffer(raw[12:], "<f4").reshape(2, 3), depth)
    np.testing.assert_array_equal(read_depth(tmp_path / "d.adgd"), depth)


def test_truncated_depth_is_format_error(tmp_path):
    write_depth(tmp_path / "d.adgd", np.ones((4, 4), np.float32))
    data = (tmp_path / "d.adgd").read_bytes()
    (tmp_path / "d.adgd").write_bytes(data[:-3])
    with pytest.raises(SceneFormatError) as info:
        read_depth(tmp_path / "d.adgd")
    assert "d.adgd" in str(info.value)


def test_bad_magic_is_format_error(tmp_path):
    (tmp_path / "d.adgd").write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(SceneFormatError):
        read_depth(tmp_path / "d.adgd")


def test_non_orthonormal_camera_file(tmp_path):
    d = simple_cam().to_dict()
    d["w2c"][0] = 2.0
    (tmp_path / "c.json").write_text(json.dumps(d))
    with pytest.raises(ValidationError):
        read_camera(tmp_path / "c.json")


def test_dimension_mismatch_is_consistency_error(tmp_path):
    scene = generate_synthetic_scene(SyntheticSceneConfig(seed=1, n_frames=2))
    sdir = save_scene(scene, tmp_path)
    write_depth(sdir / "frames" / "0000.depth.adgd", np.zeros((3, 3), np.float32))
    with pytest.raises(ConsistencyError):
        load_scene(sdir)


def test_frame_rejects_out_of_range_values():
    cam = simple_cam()
    with pytest.raises(ValidationError):
        Frame(np.full((100, 100, 3), 1.5), np.zeros((100, 100)), cam)
    depth = np.zeros((100, 100))
    depth[0, 0] = 500.0
    with pytest.raises(ValidationError):
        Frame(np.zeros((100, 100, 3)), depth, cam)
