"""Geometric kernels vs independent brute-force oracles."""

import numpy as np
import pytest

from pointcompact import tensor as T
from pointcompact.geometry import (PatchSet, PointCloud, canonical_seed_index, chamfer_l1,
                                   chamfer_l2, chamfer_l2_per_set, chamfer_l2_value,
                                   farthest_point_sample, knn_group, normalize,
                                   normalize_with_transform)
from pointcompact.gradcheck import grad_check


# -- oracles (deliberately dumb) -----------------------------------------------------


def fps_oracle(points, m, seed_index):
    """O(N^2 m) greedy max-min: recompute min distance to the whole selected set."""
    chosen = [seed_index]
    for _ in range(m - 1):
        best_j, best_d = None, -1.0
        for j in range(len(points)):
            dmin = min(((points[j] - points[s]) ** 2).sum() for s in chosen)
            if dmin > best_d:
                best_j, best_d = j, dmin
        chosen.append(best_j)
    return np.array(chosen)


def knn_oracle(points, center_idx, k):
    """Full sort by (distance, index) per center."""
    out = []
    for c in center_idx:
        d = [((points[j] - points[c]) ** 2).sum() for j in range(len(points))]
        order = sorted(range(len(points)), key=lambda j: (d[j], j))
        out.append(order[:k])
    return np.array(out)


def chamfer_l2_oracle(a, b):
    total = 0.0
    for p in a:
        total += min(((p - q) ** 2).sum() for q in b) / len(a)
    for q in b:
        total += min(((p - q) ** 2).sum() for p in a) / len(b)
    return total


# -- normalize ----------------------------------------------------------------------


def test_normalize_unit_cube_corners():
    corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
    out = normalize(PointCloud(corners))
    assert np.allclose(out.points.mean(axis=0), 0.0, atol=1e-12)
    assert np.isclose(np.linalg.norm(out.points, axis=1).max(), 1.0, atol=1e-12)


def test_normalize_single_point_degenerate():
    out = normalize(PointCloud(np.array([[5.0, 5.0, 5.0]])))
    assert np.array_equal(out.points, np.zeros((1, 3)))


def test_normalize_idempotent():
    rng = np.random.default_rng(0)
    pc = PointCloud(rng.normal(2.0, 3.0, size=(50, 3)))
    once = normalize(pc)
    twice = normalize(once)
    assert np.abs(twice.points - once.points).max() < 1e-12


def test_normalize_transform_roundtrip():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(20, 3)) * 4 + 7
    norm, centroid, scale = normalize_with_transform(PointCloud(pts))
    assert np.allclose(norm.points * scale + centroid, pts, atol=1e-12)


def test_pointcloud_rejects_nonfinite():
    with pytest.raises(ValueError):
        PointCloud(np.array([[0.0, 0.0, np.inf]]))


# -- farthest point sampling ------------------------------------------------------------


def test_fps_m_equals_n_returns_all_indices():
    pts = np.random.default_rng(2).normal(size=(10, 3))
    idx = farthest_point_sample(PointCloud(pts), 10)
    assert sorted(idx) == list(range(10))


def test_fps_colinear_hand_case():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    idx = farthest_point_sample(PointCloud(pts), 2, seed_index=0)
    assert list(idx) == [0, 3]


def test_fps_m_too_large_rejected():
    with pytest.raises(ValueError):
        farthest_point_sample(PointCloud(np.zeros((3, 3))), 4)


@pytest.mark.parametrize("seed", range(25))
def test_fps_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    m = int(rng.integers(1, n + 1))
    pts = rng.normal(size=(n, 3))
    start = int(rng.integers(0, n))
    fast = farthest_point_sample(PointCloud(pts), m, seed_index=start)
    assert np.array_equal(fast, fps_oracle(pts, m, start))


def test_fps_exhaustive_seed_sweep_small_cloud():
    rng = np.random.default_rng(99)
    pts = rng.normal(size=(12, 3))
    for start in range(12):
        fast = farthest_point_sample(PointCloud(pts), 7, seed_index=start)
        assert np.array_equal(fast, fps_oracle(pts, 7, start))


# -- knn grouping -----------------------------------------------------------------------


def test_knn_k1_patches_are_their_centers():
    pts = np.random.default_rng(3).normal(size=(8, 3))
    ps = knn_group(PointCloud(pts), np.array([0, 4]), 1)
    assert np.array_equal(ps.source_indices[:, 0], [0, 4])
    assert np.array_equal(ps.relcoords, np.zeros((2, 1, 3)))


def test_knn_tiebreak_lower_index():
    # center x=1: x=0 and x=2 equidistant; the lower index (x=0) wins
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    ps = knn_group(PointCloud(pts), np.array([1]), 2)
    assert list(ps.source_indices[0]) == [1, 0]


def test_knn_k_too_large_rejected():
    with pytest.raises(ValueError):
        knn_group(PointCloud(np.zeros((3, 3))), np.array([0]), 4)


@pytest.mark.parametrize("seed", range(25))
def test_knn_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 40))
    k = int(rng.integers(1, n + 1))
    pts = rng.normal(size=(n, 3))
    centers = rng.choice(n, size=min(5, n), replace=False)
    ps = knn_group(PointCloud(pts), centers, k)
    assert np.array_equal(ps.source_indices, knn_oracle(pts, centers, k))


@pytest.mark.parametrize("seed", range(10))
def test_knn_returned_distances_dominate_excluded(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3))
    centers = np.array([0, 7, 13])
    k = 6
    ps = knn_group(PointCloud(pts), centers, k)
    for i, c in enumerate(centers):
        d = ((pts - pts[c]) ** 2).sum(axis=1)
        inside = set(ps.source_indices[i])
        worst_in = max(d[j] for j in inside)
        best_out = min((d[j] for j in range(30) if j not in inside), default=np.inf)
        assert worst_in <= best_out


def test_patchset_reconstruction_exact_on_grid_points():
    # dyadic-grid coordinates make center + rel exactly representable
    rng = np.random.default_rng(4)
    pts = rng.integers(-32, 33, size=(40, 3)).astype(np.float64) / 64.0
    ps = knn_group(PointCloud(pts), np.arange(0, 40, 5), 8)
    rebuilt = ps.absolute()
    for i in range(ps.m):
        assert np.array_equal(rebuilt[i], pts[ps.source_indices[i]])


def test_patchset_reconstruction_one_ulp_general():
    rng = np.random.default_rng(5)
    pts = rng.normal(size=(40, 3))
    ps = knn_group(PointCloud(pts), np.arange(0, 40, 5), 8)
    rebuilt = ps.absolute()
    originals = pts[ps.source_indices]
    err = np.abs(rebuilt - originals)
    assert err.max() <= np.finfo(np.float64).eps * np.abs(originals).max() * 2


def test_canonical_seed_index_permutation_invariant():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(25, 3))
    perm = rng.permutation(25)
    i0 = canonical_seed_index(pts)
    i1 = canonical_seed_index(pts[perm])
    assert np.array_equal(pts[i0], pts[perm][i1])


# -- chamfer ---------------------------------------------------------------------------


def test_chamfer_l2_identical_sets_zero():
    a = np.random.default_rng(7).normal(size=(6, 3))
    assert chamfer_l2(a, a.copy()).item() == 0.0


def test_chamfer_l2_hand_value():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0.0, 0.0]])
    assert chamfer_l2(a, b).item() == pytest.approx(2.0, abs=1e-15)


def test_chamfer_l1_hand_value():
    a = np.zeros((1, 3))
    b = np.array([[1.0, 0.0, 0.0]])
    assert chamfer_l1(a, b) == pytest.approx(1.0, abs=1e-15)


def test_chamfer_rejects_empty():
    with pytest.raises(ValueError):
        chamfer_l2(np.zeros((0, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        chamfer_l1(np.zeros((2, 3)), np.zeros((0, 3)))


@pytest.mark.parametrize("seed", range(20))
def test_chamfer_l2_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(int(rng.integers(1, 12)), 3))
    b = rng.normal(size=(int(rng.integers(1, 12)), 3))
    assert chamfer_l2(a, b).item() == pytest.approx(chamfer_l2_oracle(a, b), abs=1e-12)
    assert chamfer_l2_value(a, b) == pytest.approx(chamfer_l2_oracle(a, b), abs=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_chamfer_symmetry_and_nonnegativity(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(7, 3))
    b = rng.normal(size=(5, 3))
    assert chamfer_l2(a, b).item() == pytest.approx(chamfer_l2(b, a).item(), abs=1e-12)
    assert chamfer_l1(a, b) == pytest.approx(chamfer_l1(b, a), abs=1e-12)
    assert chamfer_l2(a, b).item() > 0
    assert chamfer_l1(a, b) > 0


def test_chamfer_zero_iff_equal_multisets():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(6, 3))
    shuffled = a[rng.permutation(6)]
    assert chamfer_l2(a, shuffled).item() == 0.0
    assert chamfer_l1(a, shuffled) == 0.0


def test_chamfer_l2_gradcheck():
    rng = np.random.default_rng(9)
    a = T.parameter(rng.normal(size=(5, 3)), "a")
    b = T.parameter(rng.normal(size=(7, 3)), "b")
    report = grad_check(lambda: chamfer_l2(a.tensor, b.tensor), [a, b], tol=1e-5)
    assert report.max_rel_err < 1e-5, report


def test_chamfer_batched_matches_loop():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(4, 5, 3))
    b = rng.normal(size=(4, 6, 3))
    batched = chamfer_l2_per_set(a, b).data
    for i in range(4):
        assert batched[i] == pytest.approx(chamfer_l2(a[i], b[i]).item(), abs=1e-14)
