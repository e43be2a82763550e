"""Geometric kernels: normalization, farthest point sampling, KNN patch
grouping, and Chamfer set distances.

Sampling and grouping are plain numpy (they carry no gradients); the Chamfer
variants used as training losses are differentiable through the nearest
neighbor matches. All kernels are exact O(N*M) computations; no spatial
indices at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DiffTensor, as_tensor, reshape, tmin


@dataclass(frozen=True)
class PointCloud:
    """N x 3 coordinates in an unitless, normalized object space."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"point cloud must be (N, 3) with N >= 1, got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PatchSet:
    """FPS centers plus their KNN groups in center-relative coordinates.

    centers: (M, 3); relcoords: (M, K, 3) with relcoords[i, j] equal to
    parent.points[source_indices[i, j]] - centers[i]; source_indices: (M, K).
    """

    centers: np.ndarray
    relcoords: np.ndarray
    source_indices: np.ndarray

    @property
    def m(self) -> int:
        return self.centers.shape[0]

    @property
    def k(self) -> int:
        return self.relcoords.shape[1]

    def absolute(self) -> np.ndarray:
        """Patch points back in parent coordinates, (M, K, 3)."""
        return self.centers[:, None, :] + self.relcoords


def _points_of(pc) -> np.ndarray:
    return pc.points if isinstance(pc, PointCloud) else PointCloud(pc).points


def normalize(pc: PointCloud | np.ndarray) -> PointCloud:
    """Translate to zero centroid and scale the max radius to 1.

    A degenerate all-identical cloud maps to all-zeros (scale treated as 1).
    """
    cloud, _, _ = normalize_with_transform(pc)
    return cloud


def normalize_with_transform(pc) -> tuple[PointCloud, np.ndarray, float]:
    """Like normalize() but also returns (centroid, scale) so that
    original = normalized * scale + centroid."""
    pts = _points_of(pc)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    radius = float(np.sqrt((centered * centered).sum(axis=1).max()))
    scale = radius if radius > 0.0 else 1.0
    return PointCloud(centered / scale), centroid, scale


def farthest_point_sample(pc, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min subset selection over point coordinates.

    Starts from seed_index and repeatedly takes the point farthest from the
    selected set (squared distances; ties go to the lowest index). Returns m
    distinct indices, deterministic given seed_index.
    """
    pts = _points_of(pc)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"cannot sample {m} centers from {n} points")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed index {seed_index} out of range for {n} points")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    diff = pts - pts[seed_index]
    dmin = (diff * diff).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dmin))
        chosen[i] = nxt
        diff = pts - pts[nxt]
        dmin = np.minimum(dmin, (diff * diff).sum(axis=1))
    return chosen


def canonical_seed_index(pc) -> int:
    """Lexicographically smallest point: a permutation-invariant FPS seed."""
    pts = _points_of(pc)
    return int(np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0])


def knn_group(pc, center_indices: np.ndarray, k: int) -> PatchSet:
    """Group the k nearest parent points around each center.

    Each center is its own neighbor (distance 0). Distance ties break toward
    the lower point index. Relative coordinates are parent - center.
    """
    pts = _points_of(pc)
    n = pts.shape[0]
    center_indices = np.asarray(center_indices, dtype=np.int64)
    if not 1 <= k <= n:
        raise ValueError(f"cannot take {k} neighbors from {n} points")
    centers = pts[center_indices]                      # (M, 3)
    diff = centers[:, None, :] - pts[None, :, :]       # (M, N, 3)
    d2 = (diff * diff).sum(axis=2)                     # (M, N)
    # stable sort keeps the lower index first among equal distances
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    relcoords = pts[order] - centers[:, None, :]
    return PatchSet(centers=centers, relcoords=relcoords, source_indices=order)


# -- Chamfer distances ---------------------------------------------------------


def _pairwise_sq(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    # a (..., N, 3), b (..., M, 3) -> (..., N, M) squared distances
    *batch, n, _ = a.shape
    m = b.shape[-2]
    ae = reshape(a, (*batch, n, 1, 3))
    be = reshape(b, (*batch, 1, m, 3))
    d = ae - be
    return (d * d).sum(axis=-1)


def _check_sets(a, b) -> tuple[DiffTensor, DiffTensor]:
    a, b = as_tensor(a), as_tensor(b)
    for s in (a, b):
        if s.ndim < 2 or s.shape[-1] != 3 or s.shape[-2] < 1:
            raise ValueError(f"point set must be (..., N>=1, 3), got {s.shape}")
    return a, b


def chamfer_l2(a, b) -> DiffTensor:
    """Squared-distance Chamfer: mean_a min_b ||a-b||^2 + mean_b min_a ||a-b||^2.

    Accepts (N, 3) vs (M, 3) and returns a differentiable scalar; with leading
    batch axes it returns the mean over the batch of per-set Chamfer values.
    """
    per = chamfer_l2_per_set(a, b)
    return per if per.ndim == 0 else per.mean()


def chamfer_l2_per_set(a, b) -> DiffTensor:
    """chamfer_l2 without the batch reduction: (..., N, 3) x (..., M, 3) -> (...)."""
    a, b = _check_sets(a, b)
    d2 = _pairwise_sq(a, b)
    return tmin(d2, axis=-1).mean(axis=-1) + tmin(d2, axis=-2).mean(axis=-1)


def chamfer_l1(a, b) -> float:
    """Euclidean-distance Chamfer with the 1/2 averaging convention.

    0.5 * [mean_a min_b ||a-b|| + mean_b min_a ||a-b||]; evaluation only.
    """
    a = np.asarray(a.data if isinstance(a, DiffTensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, DiffTensor) else b, dtype=np.float64)
    for s in (a, b):
        if s.ndim != 2 or s.shape[1] != 3 or s.shape[0] < 1:
            raise ValueError(f"point set must be (N>=1, 3), got {s.shape}")
    diff = a[:, None, :] - b[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=2))
    return 0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean())


def chamfer_l2_value(a, b) -> float:
    """Non-differentiable chamfer_l2 for metrics/evaluation."""
    a = np.asarray(a.data if isinstance(a, DiffTensor) else a, dtype=np.float64)
    b = np.asarray(b.data if isinstance(b, DiffTensor) else b, dtype=np.float64)
    diff = a[:, None, :] - b[None, :, :]
    d2 = (diff * diff).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())
