"""Correspondence retrieval, geodesic-error evaluation, and embedding-space
segmentation."""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .laplacian import face_areas, knn_edges
from .shape_io import CorrespondenceMap

TREE_THRESHOLD = 5000


def _brute_argmin(psi_source, psi_target, chunk=1024):
    out = np.empty(psi_source.shape[0], dtype=np.int64)
    for start in range(0, psi_source.shape[0], chunk):
        block = psi_source[start : start + chunk]
        out[start : start + chunk] = cdist(block, psi_target).argmin(axis=1)
    return out


def _tree_argmin(psi_source, psi_target):
    tree = cKDTree(psi_target)
    dist, idx = tree.query(psi_source, k=1)
    # enforce lowest-index tie-breaking to match the brute-force path
    balls = tree.query_ball_point(psi_source, dist)
    for row, members in enumerate(balls):
        if len(members) > 1:
            idx[row] = min(members)
    return idx.astype(np.int64)


def nn_match(psi_source, psi_target, tree_threshold=TREE_THRESHOLD):
    """Dense nearest-neighbor map from source rows to target rows.

    Exact in both regimes: brute force below ``tree_threshold`` target
    points, KD-tree above, with ties broken by the lowest target index.
    The result covers every source row but need not be bijective.
    """
    psi_source = np.asarray(psi_source, dtype=np.float64)
    psi_target = np.asarray(psi_target, dtype=np.float64)
    if psi_target.shape[0] == 0:
        raise ValueError("empty target embedding")
    if psi_source.shape[1] != psi_target.shape[1]:
        raise ValueError(
            f"embedding widths differ: {psi_source.shape[1]} vs {psi_target.shape[1]}"
        )
    if psi_target.shape[0] < tree_threshold:
        targets = _brute_argmin(psi_source, psi_target)
    else:
        targets = _tree_argmin(psi_source, psi_target)
    return CorrespondenceMap.from_dense(targets)


class GeodesicField:
    """Single-source graph geodesics on a shape, with per-source caching.

    Meshes use their edge graph with Euclidean lengths; point clouds use the
    symmetric k-NN graph of the Laplacian construction. Distances are
    normalized by sqrt(total surface area) when used for evaluation; for
    point clouds the mass convention makes that constant 1.
    """

    def __init__(self, shape, k_nn=8):
        v = shape.vertices
        n = v.shape[0]
        if shape.is_mesh:
            pairs = np.sort(
                np.concatenate(
                    [shape.faces[:, [0, 1]], shape.faces[:, [1, 2]], shape.faces[:, [2, 0]]]
                ),
                axis=1,
            )
            key = np.unique(pairs[:, 0] * n + pairs[:, 1])
            lo, hi = key // n, key % n
            lengths = np.linalg.norm(v[lo] - v[hi], axis=1)
            self.area = float(face_areas(v, shape.faces).sum())
        else:
            lo, hi, lengths, _ = knn_edges(v, k_nn)
            self.area = 1.0
        self.n = n
        self.graph = coo_matrix(
            (np.concatenate([lengths, lengths]), (np.concatenate([lo, hi]), np.concatenate([hi, lo]))),
            shape=(n, n),
        ).tocsr()
        self.norm_const = float(np.sqrt(self.area))
        self._cache = {}
        self._warned_disconnected = False

    def distances_many(self, sources):
        """Distance vectors for several sources, filling the cache in one
        Dijkstra sweep for the missing ones."""
        sources = [int(s) for s in sources]
        missing = sorted({s for s in sources if s not in self._cache})
        if missing:
            block = dijkstra(self.graph, directed=False, indices=missing)
            for row, s in enumerate(missing):
                self._cache[s] = block[row]
            if not self._warned_disconnected and np.isinf(block).any():
                self._warned_disconnected = True
                warnings.warn("graph is disconnected; some geodesic distances are infinite")
        return np.stack([self._cache[s] for s in sources])

    def distances(self, source):
        return self.distances_many([source])[0]


def geodesic_distances(shape, source, k_nn=8):
    """One-off single-source distances; build a GeodesicField to batch."""
    return GeodesicField(shape, k_nn=k_nn).distances(source)


def mean_geodesic_error(pred, gt, field):
    """Mean geodesic error x100 of a predicted map against ground truth.

    For every source vertex, the geodesic distance on the target shape
    between the predicted and the true target, divided by sqrt(target
    area), averaged, times 100.
    """
    gt_map = gt.as_dict()
    missing = [int(s) for s in pred.sources if int(s) not in gt_map]
    if missing:
        raise ValueError(f"sources without ground truth: {missing[:20]}")
    true_targets = np.asarray([gt_map[int(s)] for s in pred.sources], dtype=np.int64)
    uniq = np.unique(true_targets)
    block = field.distances_many(uniq)
    row_of = {int(t): i for i, t in enumerate(uniq)}
    rows = np.asarray([row_of[int(t)] for t in true_targets])
    dists = block[rows, pred.targets]
    return float(100.0 * dists.mean() / field.norm_const)


@dataclass
class SegmentLabels:
    labels: np.ndarray  # (n,) cluster ids in [0, c)
    centroids: np.ndarray  # (c, k) embedding-space centers
    inertia: float


def _kmeans_pp(rng, points, c):
    n = points.shape[0]
    centers = np.empty((c, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, c):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centers[j] = points[pick]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _assign(points, centers):
    d2 = cdist(points, centers, "sqeuclidean")
    labels = d2.argmin(axis=1)
    # keep every cluster populated: hand the farthest point to any empty one
    for empty in np.setdiff1d(np.arange(centers.shape[0]), labels):
        far = int(np.argmax(d2[np.arange(len(labels)), labels]))
        labels[far] = empty
        d2[far, :] = 0.0
    inertia = float(d2[np.arange(len(labels)), labels].sum())
    return labels, inertia


def _lloyd(points, centers, max_iters, tol):
    c = centers.shape[0]
    labels, inertia = _assign(points, centers)
    for _ in range(max_iters):
        new_centers = np.stack([points[labels == j].mean(axis=0) for j in range(c)])
        shift = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        labels, inertia = _assign(points, centers)
        if shift < tol:
            break
    return labels, centers, inertia


def kmeans_segment(psi, c, seed=0, n_restarts=10, max_iters=300, tol=1e-8):
    """Lloyd's algorithm with k-means++ seeding; deterministic given seed."""
    psi = np.asarray(psi, dtype=np.float64)
    n = psi.shape[0]
    if not (1 <= c <= n):
        raise ValueError(f"need 1 <= c <= n, got c={c}, n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_restarts):
        centers = _kmeans_pp(rng, psi, c)
        labels, centers, inertia = _lloyd(psi, centers, max_iters, tol)
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    labels, centers, inertia = best
    return SegmentLabels(labels=labels.astype(np.int64), centroids=centers, inertia=inertia)


def transfer_segments(segments, psi_target):
    """Label target points by their nearest source centroid, so segments
    stay consistent across a coupled pair."""
    psi_target = np.asarray(psi_target, dtype=np.float64)
    if psi_target.shape[1] != segments.centroids.shape[1]:
        raise ValueError(
            f"embedding width {psi_target.shape[1]} != centroid width "
            f"{segments.centroids.shape[1]}"
        )
    d2 = cdist(psi_target, segments.centroids, "sqeuclidean")
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(labels)), labels].sum())
    return SegmentLabels(labels=labels.astype(np.int64), centroids=segments.centroids.copy(), inertia=inertia)
