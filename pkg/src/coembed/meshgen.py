"""Synthetic shape generators: icospheres, randomized sphere meshes, warped
near-isometric pairs with exact vertex-level ground truth, and partial
cutouts. Used by the test suite and the demo data command; no external
datasets required."""

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull

from .shape_io import CorrespondenceMap, Shape


def _icosahedron():
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere(subdivisions=3, radius=1.0, name="icosphere"):
    """Subdivided icosahedron projected onto the sphere.

    Vertex counts by subdivision level: 12, 42, 162, 642, 2562, ...
    """
    v, f = _icosahedron()
    for _ in range(subdivisions):
        cache = {}
        verts = list(v)

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        v = np.asarray(verts)
        f = np.asarray(new_faces, dtype=np.int64)
    return Shape(vertices=radius * v, faces=f, name=name)


def fibonacci_directions(n, seed=None, jitter=0.0):
    """Near-uniform unit directions by the golden-angle spiral, optionally
    jittered (deterministically) to break the lattice regularity."""
    i = np.arange(n, dtype=np.float64)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = golden * i
    dirs = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        dirs = dirs + jitter * rng.standard_normal(dirs.shape)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs


def triangulate_directions(dirs):
    """Triangulate unit directions via their convex hull, faces oriented
    outward."""
    hull = ConvexHull(dirs)
    faces = hull.simplices.astype(np.int64)
    a, b, c = dirs[faces[:, 0]], dirs[faces[:, 1]], dirs[faces[:, 2]]
    normals = np.cross(b - a, c - a)
    flip = np.einsum("ij,ij->i", normals, (a + b + c) / 3.0) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def bump_radii(dirs, centers, amplitudes, width=0.55):
    """Radial warp field 1 + sum_j a_j exp(-|u - c_j|^2 / w^2) on directions."""
    r = np.ones(dirs.shape[0])
    for center, amp in zip(centers, amplitudes):
        d2 = ((dirs - center) ** 2).sum(axis=1)
        r += amp * np.exp(-d2 / (width * width))
    return r


_BUMP_CENTERS = np.array(
    [
        [0.267261, 0.534522, 0.801784],
        [-0.872872, 0.218218, -0.436436],
        [0.408248, -0.816497, 0.408248],
        [-0.094491, -0.283473, -0.954345],
    ]
)


def random_mesh(n=300, seed=0, amplitude=0.3, name=None):
    """Closed connected mesh: a jittered sphere triangulation with seeded
    smooth radial bumps. Good generic test geometry."""
    rng = np.random.default_rng(seed)
    dirs = fibonacci_directions(n, seed=seed, jitter=0.015)
    centers = rng.standard_normal((4, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    amps = amplitude * rng.uniform(0.3, 1.0, size=4)
    radii = bump_radii(dirs, centers, amps)
    faces = triangulate_directions(dirs)
    return Shape(
        vertices=radii[:, None] * dirs,
        faces=faces,
        name=name or f"random{n}s{seed}",
    )


def warped_sphere_pair(n=1000, seed=0, amplitude=0.18, difference=0.3):
    """Near-isometric pair with exact dense ground truth.

    Both shapes sample the same parameter points of the sphere and carry
    smooth radial bumps; the target uses slightly different amplitudes and
    bump centers (a mild pose change) and its vertices are randomly
    permuted. Ground truth maps source vertex i to its permuted twin.
    """
    rng = np.random.default_rng(seed)
    dirs = fibonacci_directions(n, seed=seed, jitter=0.012)
    faces = triangulate_directions(dirs)

    amps = amplitude * np.array([1.0, 0.75, 0.9, 0.6])
    centers_t = _BUMP_CENTERS + 0.12 * rng.standard_normal((4, 3))
    centers_t /= np.linalg.norm(centers_t, axis=1, keepdims=True)
    amps_t = amps * (1.0 + difference * rng.uniform(-1.0, 1.0, size=4))

    radii_s = bump_radii(dirs, _BUMP_CENTERS, amps)
    radii_t = bump_radii(dirs, centers_t, amps_t)

    perm = rng.permutation(n)
    verts_t = np.empty((n, 3))
    verts_t[perm] = radii_t[:, None] * dirs
    source = Shape(radii_s[:, None] * dirs, faces, name=f"pairs{seed}_source")
    target = Shape(verts_t, perm[faces], name=f"pairs{seed}_target")
    gt = CorrespondenceMap.from_dense(perm.astype(np.int64))
    return source, target, gt


def partial_cutout(shape, keep_fraction=0.8, seed=0):
    """Connected partial copy of a mesh plus the inclusion map.

    Keeps roughly ``keep_fraction`` of the vertices on one side of a seeded
    cutting direction, restricted to fully-kept faces and the largest
    connected component. The returned map sends partial vertex i to its
    original index on the full shape.
    """
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    score = shape.vertices @ direction
    keep = score <= np.quantile(score, keep_fraction)

    faces = shape.faces[keep[shape.faces].all(axis=1)]
    used = np.unique(faces)
    n_used = len(used)
    lookup = -np.ones(shape.n_vertices, dtype=np.int64)
    lookup[used] = np.arange(n_used)
    faces = lookup[faces]

    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    adj = coo_matrix(
        (np.ones(2 * len(edges)), (np.concatenate([edges[:, 0], edges[:, 1]]),
                                   np.concatenate([edges[:, 1], edges[:, 0]]))),
        shape=(n_used, n_used),
    )
    n_comp, comp = connected_components(adj, directed=False)
    if n_comp > 1:
        counts = np.bincount(comp)
        main = int(np.argmax(counts))
        keep_local = comp == main
        faces = faces[keep_local[faces].all(axis=1)]
        relabel = -np.ones(n_used, dtype=np.int64)
        relabel[keep_local] = np.arange(int(keep_local.sum()))
        faces = relabel[faces]
        used = used[keep_local]
    partial = Shape(shape.vertices[used], faces, name=f"{shape.name}_partial")
    inclusion = CorrespondenceMap(
        np.stack([np.arange(len(used), dtype=np.int64), used.astype(np.int64)], axis=1)
    )
    return partial, inclusion
