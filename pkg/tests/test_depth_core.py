import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import two_pass_stats

from d2s.depth_core import (
    DepthFormatError,
    DepthMap,
    Keypoint,
    allocate_budget,
    depth_gradients,
    depth_stats,
    detect_boundaries,
    detect_keypoints,
    fixture_intrinsics,
    generate_fixture,
    kmeans,
    largest_remainder,
    load_depth_map,
    median_filter,
    save_depth_map,
    write_pgm16,
)


# ---------------------------------------------------------------- loading


def test_pgm16_zero_is_sentinel(tmp_path):
    path = tmp_path / "d.pgm"
    write_pgm16(path, np.array([[0, 100], [200, 300]]), scale=1.0)
    d = load_depth_map(path, "pgm16")
    assert d.valid.tolist() == [[False, True], [True, True]]
    assert d.depth[1, 1] == 300.0


def test_pgm16_scale_comment(tmp_path):
    path = tmp_path / "d.pgm"
    write_pgm16(path, np.array([[1000, 2000], [3000, 4000]]), scale=1e-3)
    d = load_depth_map(path)
    np.testing.assert_allclose(d.depth, [[1.0, 2.0], [3.0, 4.0]])


def test_csv_direct_read(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("1.5,2.5\n3.5,4.5\n")
    d = load_depth_map(path, "csv")
    assert d.shape == (2, 2) and d.valid.all()
    s = depth_stats(d)
    assert s.min == 1.5 and s.max == 4.5


def test_rawf32_dimension_mismatch(tmp_path):
    path = tmp_path / "d.raw"
    path.write_bytes(b"DPTH" + struct.pack("<III", 4, 4, 0) + np.zeros(15, "<f4").tobytes())
    with pytest.raises(DepthFormatError):
        load_depth_map(path, "rawf32")


def test_rawf32_nan_is_invalid(tmp_path):
    path = tmp_path / "d.raw"
    data = np.array([1.0, np.nan, 3.0, 4.0], "<f4")
    path.write_bytes(b"DPTH" + struct.pack("<III", 2, 2, 0) + data.tobytes())
    d = load_depth_map(path)
    assert d.valid.tolist() == [[True, False], [True, True]]


def test_negative_sample_rejected(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("1,-2\n3,4\n")
    with pytest.raises(DepthFormatError):
        load_depth_map(path)


def test_malformed_pgm_header(tmp_path):
    path = tmp_path / "d.pgm"
    path.write_bytes(b"P2\n2 2\n65535\n")
    with pytest.raises(DepthFormatError):
        load_depth_map(path, "pgm16")


@pytest.mark.parametrize("suffix", [".csv", ".raw"])
def test_float_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    arr = rng.uniform(0.5, 9.0, (5, 7)).astype(np.float32).astype(np.float64)
    arr[2, 3] = np.nan
    d = DepthMap.from_array(arr)
    save_depth_map(d, tmp_path / f"d{suffix}")
    assert load_depth_map(tmp_path / f"d{suffix}") == d


# ---------------------------------------------------------------- fixtures


def test_plane_fixture_constant():
    assert np.all(generate_fixture("plane", 8, 8, {"depth": 5}).depth == 5.0)


def test_step_fixture_gradient_only_on_seam():
    d = generate_fixture("step", 8, 8, {"d1": 2, "d2": 6, "split": 4})
    g = depth_gradients(d)
    cols = np.nonzero(g.magnitude.any(axis=0))[0]
    # central differences straddle the seam between columns 3 and 4
    assert cols.tolist() == [3, 4]


def test_step_far_is_larger():
    d = generate_fixture("step", 8, 8, {"d1": 2, "d2": 6})
    assert d.depth[0, -1] > d.depth[0, 0]


def test_sphere_bump_apex_depth():
    d = generate_fixture("sphere_bump", 33, 33, {"radius": 1.5, "background": 10})
    assert d.depth[16, 16] == pytest.approx(10 - 1.5, abs=1e-12)


def test_sphere_bump_matches_ray_sphere_formula():
    w = h = 21
    params = {"radius": 1.0, "background": 10.0}
    d = generate_fixture("sphere_bump", w, h, params)
    intr = fixture_intrinsics("sphere_bump", w, h, params)
    for u, v in [(10, 10), (12, 9), (7, 11), (0, 0)]:
        ray = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
        c = np.array([0.0, 0.0, 10.0])
        # |t*ray - c|^2 = r^2, nearest root
        a, b, cc = ray @ ray, -2 * ray @ c, c @ c - 1.0
        disc = b * b - 4 * a * cc
        expect = 10.0 if disc < 0 else min((-b - np.sqrt(disc)) / (2 * a), 10.0)
        assert d.depth[v, u] == pytest.approx(expect, abs=1e-12)


@pytest.mark.parametrize("params", [{"radius": 0}, {"radius": -1}])
def test_fixture_rejects_bad_radius(params):
    with pytest.raises(ValueError):
        generate_fixture("sphere_bump", 8, 8, params)


def test_fixture_rejects_tiny_size():
    with pytest.raises(ValueError):
        generate_fixture("plane", 1, 8)


# ---------------------------------------------------------------- filtering


def test_median_constant_identity():
    d = generate_fixture("plane", 8, 8)
    assert median_filter(d, 3) == d


def test_median_removes_spike():
    arr = np.full((8, 8), 5.0)
    arr[3, 4] = 500.0
    out = median_filter(DepthMap.from_array(arr), 3)
    assert out.depth[3, 4] == 5.0


def test_median_clamped_row():
    d = DepthMap.from_array(np.array([[1.0, 9.0, 1.0, 1.0, 1.0]]))
    assert median_filter(d, 3).depth.tolist() == [[1, 1, 1, 1, 1]]


def test_median_keeps_mask_and_ignores_invalid():
    arr = np.full((5, 5), 2.0)
    arr[2, 2] = np.nan
    arr[0, 0] = 7.0
    out = median_filter(DepthMap.from_array(arr), 3)
    assert np.array_equal(out.valid, ~np.isnan(arr))
    assert out.depth[1, 1] == 2.0


@pytest.mark.parametrize("window", [2, 4, 1, 9])
def test_median_bad_window(window):
    with pytest.raises(ValueError):
        median_filter(generate_fixture("plane", 5, 5), window)


# ---------------------------------------------------------------- statistics


def test_stats_plane():
    s = depth_stats(generate_fixture("plane", 8, 8, {"depth": 5}))
    assert (s.min, s.max, s.mean, s.stddev) == (5, 5, 5, 0)


def test_stats_step_mean():
    assert depth_stats(generate_fixture("step", 8, 8)).mean == pytest.approx(4.0)


def test_stats_all_invalid():
    s = depth_stats(DepthMap.from_array(np.full((3, 3), np.nan)))
    assert s.valid_fraction == 0 and np.isnan(s.min) and np.isnan(s.mean)


def test_stats_two_pass_oracle():
    rng = np.random.default_rng(4)
    arr = rng.uniform(0, 20, (16, 16))
    arr[rng.random((16, 16)) < 0.1] = np.nan
    s = depth_stats(DepthMap.from_array(arr))
    lo, hi, mean, std = two_pass_stats(arr[~np.isnan(arr)])
    assert (s.min, s.max) == (lo, hi)
    assert s.mean == pytest.approx(mean, abs=1e-12)
    assert s.stddev == pytest.approx(std, abs=1e-12)
    assert s.histogram.sum() == (~np.isnan(arr)).sum()
    assert len(s.histogram) == 64


# ---------------------------------------------------------------- gradients


def test_gradient_plane_zero():
    g = depth_gradients(generate_fixture("plane", 6, 6))
    assert not g.magnitude.any()


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_linearity(a, b):
    d = generate_fixture("ramp", 7, 6, {"a": a, "b": b, "c": 50.0})
    g = depth_gradients(d)
    np.testing.assert_allclose(g.gx[1:-1, 1:-1], a, atol=1e-9)
    np.testing.assert_allclose(g.gy[1:-1, 1:-1], b, atol=1e-9)


def test_gradient_invalid_stencil():
    arr = np.full((5, 5), 3.0)
    arr[2, 2] = np.nan
    g = depth_gradients(DepthMap.from_array(arr))
    assert not g.valid[2, 1] and not g.valid[1, 2] and not g.valid[2, 2]
    assert g.valid[0, 0]


def test_gradient_too_small():
    with pytest.raises(ValueError):
        depth_gradients(generate_fixture("plane", 2, 5))


def test_boundaries_step_seam():
    d = generate_fixture("step", 8, 8, {"split": 4})
    mask = detect_boundaries(depth_gradients(d), 1.0)
    expect = np.zeros((8, 8), bool)
    expect[:, 3:5] = True
    assert np.array_equal(mask, expect)


def test_boundaries_vacuous():
    g = depth_gradients(generate_fixture("step", 8, 8))
    assert not detect_boundaries(g, g.magnitude.max() + 1).any()
    assert not detect_boundaries(depth_gradients(generate_fixture("plane", 8, 8)), 0.5).any()


# ---------------------------------------------------------------- keypoints


def test_keypoints_plane_empty():
    assert detect_keypoints(generate_fixture("plane", 8, 8), 10) == []


def test_keypoints_zero_count():
    assert detect_keypoints(generate_fixture("sphere_bump", 32, 32), 0) == []


def test_keypoints_on_bump_silhouette():
    d = generate_fixture("sphere_bump", 32, 32)
    kps = detect_keypoints(d, 1000)
    assert kps
    bump = d.depth < 10.0
    near = np.zeros_like(bump)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            near |= np.roll(np.roll(bump, dy, 0), dx, 1)
    assert all(near[k.y, k.x] for k in kps)
    # exhaustive local-maximum scan
    mag = depth_gradients(d).magnitude
    expect = set()
    for y in range(32):
        for x in range(32):
            win = mag[max(0, y - 1) : y + 2, max(0, x - 1) : x + 2]
            if mag[y, x] > 0 and mag[y, x] >= win.max():
                expect.add((x, y))
    assert {(k.x, k.y) for k in kps} == expect


def test_keypoints_order_and_determinism():
    d = generate_fixture("two_objects", 40, 24)
    a = detect_keypoints(d, 12)
    assert a == detect_keypoints(d, 12)
    keys = [(-k.score, k.y, k.x) for k in a]
    assert keys == sorted(keys)


# ---------------------------------------------------------------- budget


def _kps(points):
    return [Keypoint(int(x), int(y), 1.0) for x, y in points]


def test_budget_single_cluster():
    b = allocate_budget(_kps([(3, 3)] * 5), 1, 10)
    assert b.budget_per_cluster == [10]


def test_budget_proportional():
    pts = [(0, 0), (1, 0), (0, 1), (100, 100)]
    b = allocate_budget(_kps(pts), 2, 8, seed=3)
    assert sorted(b.budget_per_cluster) == [2, 6]


def test_budget_errors():
    with pytest.raises(ValueError):
        allocate_budget([], 1, 10)
    with pytest.raises(ValueError):
        allocate_budget(_kps([(0, 0)]), 2, 10)


def test_kmeans_beats_random_assignments():
    rng = np.random.default_rng(11)
    pts = rng.integers(0, 64, (20, 2)).astype(float)
    _, assign, history = kmeans(pts, 3, seed=0)

    def wcss(a):
        return sum(((pts[a == j] - pts[a == j].mean(axis=0)) ** 2).sum() for j in range(3) if (a == j).any())

    ours = wcss(assign)
    for _ in range(1000):
        assert ours <= wcss(rng.integers(0, 3, 20)) + 1e-9


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=40), st.data())
def test_kmeans_wcss_non_increasing(points, data):
    k = data.draw(st.integers(1, len(points)))
    _, _, history = kmeans(np.array(points, float), k, seed=data.draw(st.integers(0, 5)))
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))


@given(st.integers(0, 10**6), st.lists(st.integers(0, 1000), min_size=1, max_size=12))
def test_largest_remainder_sums(total, weights):
    if sum(weights) == 0:
        weights = [1] * len(weights)
    out = largest_remainder(total, weights)
    assert sum(out) == total and all(v >= 0 for v in out)
