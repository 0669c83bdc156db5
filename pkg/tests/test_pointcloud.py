import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from d2s.depth_core import CameraExtrinsics, CameraIntrinsics, DepthMap, fixture_intrinsics, generate_fixture
from d2s.pointcloud import (
    PlyFormatError,
    PointCloud,
    SpatialIndex,
    estimate_normals,
    nearest_neighbors,
    project,
    project_many,
    read_ply,
    unproject,
    write_ply,
)
from d2s.segmentation import segment_auto

INTR = CameraIntrinsics(50.0, 50.0, 16.0, 12.0)


def random_pose(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=int(seed)).as_matrix()
    return CameraExtrinsics(R, rng.uniform(-3, 3, 3))


def test_principal_ray():
    d = DepthMap.from_array(np.full((25, 33), 7.0))
    cloud = unproject(d, CameraIntrinsics(10, 10, 16, 12))
    i = np.nonzero((cloud.pixels[:, 0] == 16) & (cloud.pixels[:, 1] == 12))[0][0]
    np.testing.assert_array_equal(cloud.positions[i], [0, 0, 7])


def test_plane_extent_closed_form():
    w, h, f = 32, 24, 40.0
    d = generate_fixture("plane", w, h, {"depth": 5})
    cloud = unproject(d, CameraIntrinsics(f, f, w / 2, h / 2))
    assert np.all(cloud.positions[:, 2] == 5)
    assert cloud.positions[:, 0].min() == pytest.approx(-(w / 2) * 5 / f)
    assert cloud.positions[:, 0].max() == pytest.approx((w / 2 - 1) * 5 / f)


def test_invalid_pixels_dropped_row_major():
    arr = np.arange(1, 13, dtype=float).reshape(3, 4)
    arr[1, 2] = np.nan
    cloud = unproject(DepthMap.from_array(arr), INTR)
    assert len(cloud) == 11
    assert cloud.positions[:, 2].tolist() == [v for v in arr.ravel() if not np.isnan(v)]
    assert len({tuple(p) for p in cloud.pixels}) == 11


def test_label_shape_mismatch():
    with pytest.raises(ValueError):
        unproject(generate_fixture("plane", 8, 8), INTR, labels=np.ones((4, 4), int))


def test_label_carriage():
    d = generate_fixture("step", 16, 16)
    seg = segment_auto(d)
    cloud = unproject(d, INTR, labels=seg.label_map)
    lab = seg.label_map.labels
    assert all(cloud.labels[i] == lab[v, u] for i, (u, v) in enumerate(cloud.pixels))


def test_project_origin_axis():
    assert project([0, 0, 3], INTR) == (INTR.cx, INTR.cy, 3.0)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_project_behind_camera(z):
    with pytest.raises(ValueError):
        project([1, 1, z], INTR)
    with pytest.raises(ValueError):
        project_many([[1, 1, z]], INTR)


@pytest.mark.parametrize("kind", ["plane", "step", "sphere_bump", "two_objects", "ramp"])
def test_fixture_round_trip(kind):
    d = generate_fixture(kind, 32, 24)
    intr = fixture_intrinsics(kind, 32, 24)
    extr = random_pose(hash(kind) % 1000)
    cloud = unproject(d, intr, extr)
    uvd = project_many(cloud.positions, intr, extr)
    u, v = cloud.pixels[:, 0], cloud.pixels[:, 1]
    assert np.max(np.abs(uvd - np.stack([u, v, d.depth[v, u]], axis=1))) < 1e-9


@given(st.integers(0, 2**31 - 1))
def test_rigid_invariance(seed):
    d = generate_fixture("sphere_bump", 16, 16)
    intr = fixture_intrinsics("sphere_bump", 16, 16)
    extr = random_pose(seed)
    base = unproject(d, intr).positions
    moved = unproject(d, intr, extr).positions
    # identity-pose camera points mapped by the inverse pose
    expect = (base - extr.translation) @ extr.rotation
    assert np.max(np.abs(moved - expect)) < 1e-9


# ---------------------------------------------------------------- normals


def test_plane_normals_face_camera():
    cloud = estimate_normals(unproject(generate_fixture("plane", 12, 12), INTR))
    np.testing.assert_allclose(cloud.normals, np.tile([0, 0, -1.0], (len(cloud), 1)), atol=1e-9)


def test_ramp_normals_analytic():
    # world plane x + z = 10 sampled directly
    xs, ys = np.meshgrid(np.linspace(-1, 1, 9), np.linspace(-1, 1, 9))
    pts = np.stack([xs.ravel(), ys.ravel(), 10 - xs.ravel()], axis=1)
    cloud = estimate_normals(PointCloud(pts))
    expect = np.array([-1, 0, -1]) / np.sqrt(2)
    np.testing.assert_allclose(cloud.normals, np.tile(expect, (len(cloud), 1)), atol=1e-9)


def test_sphere_apex_normal():
    w = h = 33
    d = generate_fixture("sphere_bump", w, h)
    cloud = estimate_normals(unproject(d, fixture_intrinsics("sphere_bump", w, h)))
    i = np.nonzero((cloud.pixels[:, 0] == 16) & (cloud.pixels[:, 1] == 16))[0][0]
    ang = np.degrees(np.arccos(np.clip(cloud.normals[i] @ [0, 0, -1], -1, 1)))
    assert ang < 5


@given(st.integers(0, 2**31 - 1))
def test_normals_unit_and_camera_facing(seed):
    rng = np.random.default_rng(seed)
    extr = random_pose(seed)
    cloud = estimate_normals(PointCloud(rng.normal(size=(40, 3)), extrinsics=extr), k=6)
    n = cloud.normals[cloud.has_normals]
    assert np.all(np.abs(np.linalg.norm(n, axis=1) - 1) <= 1e-6)
    to_cam = extr.camera_center - cloud.positions[cloud.has_normals]
    assert np.all(np.einsum("ij,ij->i", n, to_cam) >= 0)


def test_degenerate_neighbourhood_unset():
    cloud = estimate_normals(PointCloud(np.ones((6, 3))), k=4)
    assert not cloud.has_normals.any()


def test_normals_too_few_points():
    with pytest.raises(ValueError):
        estimate_normals(PointCloud(np.zeros((4, 3))), k=8)


# ---------------------------------------------------------------- spatial index


def test_knn_self():
    pts = np.random.default_rng(0).random((50, 3))
    idx = SpatialIndex(pts)
    assert nearest_neighbors(idx, pts[17], k=1).tolist() == [17]


def test_radius_zero_coincident():
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0.0]])
    assert nearest_neighbors(SpatialIndex(pts), [0, 0, 0], radius=0).tolist() == [0, 2]


def test_knn_ties_by_id():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0.0]])
    assert SpatialIndex(pts).knn([0, 0, 0], 2).tolist() == [0, 1]


def test_index_errors():
    with pytest.raises(ValueError):
        SpatialIndex(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        nearest_neighbors(SpatialIndex(np.zeros((1, 3))), [0, 0, 0], k=0)


@given(st.integers(0, 2**31 - 1), st.integers(1, 500), st.integers(1, 12), st.floats(0.01, 0.5))
def test_index_matches_brute_force(seed, n, k, r):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 3))
    q = rng.random(3)
    idx = SpatialIndex(pts)
    dist = np.linalg.norm(pts - q, axis=1)
    assert idx.knn(q, k).tolist() == np.lexsort((np.arange(n), dist))[:k].tolist()
    assert set(idx.radius(q, r).tolist()) == set(np.nonzero(dist <= r)[0].tolist())


# ---------------------------------------------------------------- PLY


def test_single_point_ply(tmp_path):
    path = tmp_path / "c.ply"
    write_ply(PointCloud([[1, 2, 3]]), path)
    text = path.read_text()
    assert "element vertex 1" in text
    body = text.split("end_header\n")[1].strip().splitlines()
    assert len(body) == 1


def test_ply_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    cloud = estimate_normals(
        PointCloud(rng.uniform(-5, 5, (1000, 3)), labels=rng.integers(0, 4, 1000),
                   pixels=rng.integers(0, 64, (1000, 2)), intrinsics=INTR, extrinsics=random_pose(2))
    )
    write_ply(cloud, tmp_path / "c.ply")
    back = read_ply(tmp_path / "c.ply")
    assert np.max(np.abs(back.positions - cloud.positions)) < 1e-6
    np.testing.assert_allclose(back.normals, cloud.normals, atol=1e-6)
    assert np.array_equal(back.labels, cloud.labels) and np.array_equal(back.pixels, cloud.pixels)
    assert back.intrinsics == cloud.intrinsics and back.extrinsics == cloud.extrinsics


def test_ply_byte_stable(tmp_path):
    cloud = unproject(generate_fixture("sphere_bump", 16, 16), INTR)
    write_ply(cloud, tmp_path / "a.ply")
    write_ply(read_ply(tmp_path / "a.ply"), tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_ply_count_mismatch(tmp_path):
    path = tmp_path / "c.ply"
    write_ply(PointCloud(np.random.default_rng(0).random((10, 3))), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(PlyFormatError):
        read_ply(path)


@pytest.mark.parametrize("header", ["plx\n", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"])
def test_ply_malformed_header(tmp_path, header):
    path = tmp_path / "c.ply"
    path.write_text(header + "0\n")
    with pytest.raises(PlyFormatError):
        read_ply(path)


def test_ply_empty_write_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_ply(PointCloud(np.zeros((0, 3))), tmp_path / "c.ply")


def test_bounds_envelop():
    pts = np.random.default_rng(1).normal(size=(30, 3))
    lo, hi = PointCloud(pts).bounds
    assert np.array_equal(lo, pts.min(axis=0)) and np.array_equal(hi, pts.max(axis=0))
