"""Discrete Laplace-Beltrami operators: cotangent stiffness and lumped mass
for triangle meshes, and a k-NN Gaussian graph Laplacian for point clouds.

Conventions: the stiffness L is symmetric positive semidefinite with zero
row sums (off-diagonals w_ij = -(cot a_ij + cot b_ij) / 2), and the mass M
is the diagonal of lumped vertex areas (one third of the incident face
areas). The operator itself is M^{-1} L.
"""

import warnings

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .errors import BandwidthError, UnsupportedInputError

COT_CLAMP = 1e4
AREA_EPS = 1e-12


def face_areas(vertices, faces):
    a = vertices[faces[:, 0]]
    b = vertices[faces[:, 1]]
    c = vertices[faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _clean_faces(shape):
    """Drop zero-area slivers so stiffness and mass see the same face set."""
    if not shape.is_mesh:
        raise UnsupportedInputError(f"shape {shape.name!r} has no faces")
    faces = shape.faces
    areas = face_areas(shape.vertices, faces)
    keep = areas > AREA_EPS
    if not keep.all():
        warnings.warn(
            f"dropping {int((~keep).sum())} zero-area faces of {shape.name!r}"
        )
        faces, areas = faces[keep], areas[keep]
    return faces, areas


def _warn_nonmanifold(faces, n):
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.sort(pairs, axis=1)
    _, counts = np.unique(key[:, 0] * n + key[:, 1], return_counts=True)
    extra = int((counts > 2).sum())
    if extra:
        warnings.warn(f"{extra} non-manifold edges (in >2 faces); contributions summed")


def cotan_stiffness(shape, cot_clamp=COT_CLAMP):
    """Assemble the cotangent stiffness matrix of a triangle mesh.

    Each interior edge (i, j) receives -(cot a + cot b)/2 from the two
    angles opposite it; boundary edges get the single available cotangent.
    Cotangents are clamped to +-cot_clamp to survive sliver triangles.
    Returns a symmetric CSR matrix whose rows sum to zero.
    """
    faces, _ = _clean_faces(shape)
    n = shape.n_vertices
    _warn_nonmanifold(faces, n)
    v = shape.vertices

    ij, vals = [], []
    # rotation r puts the angle at vertex faces[:, r], opposite edge (i, j)
    for r in range(3):
        pi, pj, pk = (r + 1) % 3, (r + 2) % 3, r
        i, j, k = faces[:, pi], faces[:, pj], faces[:, pk]
        u = v[i] - v[k]
        w = v[j] - v[k]
        cross = np.linalg.norm(np.cross(u, w), axis=1)
        cross = np.maximum(cross, 1e-300)
        cot = np.einsum("ij,ij->i", u, w) / cross
        cot = np.clip(cot, -cot_clamp, cot_clamp)
        ij.append(np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1))
        vals.append(-0.5 * cot)

    ij = np.concatenate(ij)
    vals = np.concatenate(vals)
    # one weight per unordered edge, inserted in both directions, so the
    # assembled matrix is exactly symmetric (no post-hoc symmetrization)
    key = ij[:, 0] * n + ij[:, 1]
    uniq, inverse = np.unique(key, return_inverse=True)
    w_edge = np.bincount(inverse, weights=vals)
    lo = uniq // n
    hi = uniq % n
    diag = np.bincount(lo, weights=-w_edge, minlength=n) + np.bincount(
        hi, weights=-w_edge, minlength=n
    )
    rows = np.concatenate([lo, hi, np.arange(n)])
    cols = np.concatenate([hi, lo, np.arange(n)])
    data = np.concatenate([w_edge, w_edge, diag])
    return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def lumped_mass(shape):
    """Barycentric lumped mass: each vertex gets one third of its incident
    face areas. Entries of isolated vertices are clamped to a tiny positive
    value so M stays invertible."""
    faces, areas = _clean_faces(shape)
    n = shape.n_vertices
    mass = np.bincount(
        faces.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n
    )
    zero = mass <= 0.0
    if zero.any():
        warnings.warn(
            f"{int(zero.sum())} vertices of {shape.name!r} have no incident area; "
            f"mass clamped to {AREA_EPS}"
        )
        mass[zero] = AREA_EPS
    return mass


def knn_edges(vertices, k_nn):
    """Symmetric k-NN edge list: (i, j, dist) with i < j, edge present when
    either endpoint lists the other among its k nearest."""
    n = vertices.shape[0]
    if not (3 <= k_nn < n):
        raise ValueError(f"need n > k_nn >= 3, got n={n}, k_nn={k_nn}")
    tree = cKDTree(vertices)
    dist, idx = tree.query(vertices, k=k_nn + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]  # drop self match
    src = np.repeat(np.arange(n), k_nn)
    dst = idx.ravel()
    lo = np.minimum(src, dst)
    hi = np.maximum(src, dst)
    key = lo * n + hi
    _, first = np.unique(key, return_index=True)
    return lo[first], hi[first], dist.ravel()[first], dist[:, -1]


def pointcloud_laplacian(shape, k_nn=8, bandwidth="auto"):
    """Graph Laplacian for a point cloud.

    Gaussian edge weights exp(-d^2 / sigma^2) on the symmetric k-NN graph;
    sigma is the mean k-th neighbor distance when bandwidth='auto'. The
    stiffness is degree - weights (zero row sums, PSD). The mass diagonal
    is an inverse local-density estimate (share of the sigma-ball volume
    each point owns), rescaled to total mass 1.
    """
    v = shape.vertices
    n = v.shape[0]
    lo, hi, d, kth = knn_edges(v, k_nn)
    if bandwidth == "auto":
        sigma = float(kth.mean())
    else:
        sigma = float(bandwidth)
    if not np.isfinite(sigma) or sigma <= 0.0:
        raise BandwidthError(
            f"kernel bandwidth collapsed to {sigma} (duplicate points?)"
        )
    w = np.exp(-(d * d) / (sigma * sigma))

    rows = np.concatenate([lo, hi])
    cols = np.concatenate([hi, lo])
    vals = np.concatenate([-w, -w])
    diag = -np.bincount(rows, weights=vals, minlength=n)
    rows = np.concatenate([rows, np.arange(n)])
    cols = np.concatenate([cols, np.arange(n)])
    vals = np.concatenate([vals, diag])
    stiffness = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    counts = cKDTree(v).query_ball_point(v, sigma, return_length=True)
    inv = 1.0 / np.maximum(counts, 1)
    mass = inv / inv.sum()
    return stiffness, mass


def build_operators(shape, k_nn=8, bandwidth="auto"):
    """Dispatch on faces: cotangent operators for meshes, graph operators
    for point clouds. Returns (stiffness, mass)."""
    if shape.is_mesh:
        return cotan_stiffness(shape), lumped_mass(shape)
    return pointcloud_laplacian(shape, k_nn=k_nn, bandwidth=bandwidth)


def export_coo_text(matrix, path):
    """Dump a sparse matrix as 'row col value' lines for debugging."""
    coo = sparse.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, x in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write("%d %d %.17g\n" % (r, c, x))
