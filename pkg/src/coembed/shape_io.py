"""Shape, correspondence, and spectral-cache I/O.

Supported geometry formats are ASCII OFF, ASCII PLY, and XYZ point lists.
Vertex indexing is zero-based everywhere inside the toolkit; one-based
dataset conventions are converted at load time.
"""

import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CacheError, DegenerateShapeError, ParseError

BASIS_MAGIC = b"EIGCACHE"
BASIS_VERSION = 1

# Floats are written with repr precision so text round-trips are bit-exact.
_FLOAT_FMT = "%.17g"


@dataclass
class Shape:
    """A triangle mesh or point cloud.

    vertices: (n, 3) float64 coordinates.
    faces: (m, 3) int64 vertex-index triples, or None for a point cloud.
    """

    vertices: np.ndarray
    faces: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (n, 3), got {self.vertices.shape}")
        if self.faces is not None:
            self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
            if self.faces.ndim != 2 or self.faces.shape[1] != 3:
                raise ValueError(f"faces must be (m, 3), got {self.faces.shape}")

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return 0 if self.faces is None else self.faces.shape[0]

    @property
    def is_mesh(self):
        return self.faces is not None

    def validate(self, drop_degenerate=True):
        """Check invariants; returns a shape with degenerate faces dropped.

        A face is degenerate here if it repeats a vertex index. Zero-area
        slivers are left in and handled by the operator assembly.
        """
        n = self.n_vertices
        if self.is_mesh:
            if n < 3:
                raise ValueError(f"mesh needs at least 3 vertices, got {n}")
            f = self.faces
            if f.size and (f.min() < 0 or f.max() >= n):
                bad = int(np.argmax((f < 0).any(axis=1) | (f >= n).any(axis=1)))
                raise ValueError(
                    f"face {bad} = {f[bad].tolist()} references a vertex outside [0, {n})"
                )
            repeated = (
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            )
            if repeated.any():
                if not drop_degenerate:
                    raise ValueError(
                        f"{int(repeated.sum())} degenerate faces (repeated vertex index)"
                    )
                warnings.warn(
                    f"dropping {int(repeated.sum())} degenerate faces of {self.name!r}"
                )
                return replace(self, faces=f[~repeated])
        elif n < 1:
            raise ValueError("point cloud needs at least 1 vertex")
        return self


@dataclass
class CorrespondenceMap:
    """Vertex-level correspondences as (source, target) index pairs, zero-based."""

    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        self.pairs = np.ascontiguousarray(self.pairs, dtype=np.int64)
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2:
            raise ValueError(f"pairs must be (p, 2), got {self.pairs.shape}")

    def __len__(self):
        return self.pairs.shape[0]

    @property
    def sources(self):
        return self.pairs[:, 0]

    @property
    def targets(self):
        return self.pairs[:, 1]

    def as_dict(self):
        return {int(s): int(t) for s, t in self.pairs}

    def to_dense(self, n_source):
        """Return an array a with a[i] = target of source i; requires a dense map."""
        src = self.sources
        if len(np.unique(src)) != len(src):
            raise ValueError("duplicate source entries; map is not dense")
        if len(src) != n_source or src.min() < 0 or src.max() >= n_source:
            raise ValueError(f"map does not cover all {n_source} source vertices")
        out = np.empty(n_source, dtype=np.int64)
        out[src] = self.targets
        return out

    @classmethod
    def identity(cls, n):
        idx = np.arange(n, dtype=np.int64)
        return cls(np.stack([idx, idx], axis=1))

    @classmethod
    def from_dense(cls, targets):
        targets = np.asarray(targets, dtype=np.int64)
        src = np.arange(len(targets), dtype=np.int64)
        return cls(np.stack([src, targets], axis=1))


def _data_lines(text, comment_chars="#"):
    """Yield (lineno, stripped line) skipping blanks and comments."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(comment_chars[0], 1)[0].strip() if comment_chars else raw.strip()
        if line:
            yield lineno, line


def _parse_floats(tokens, count, path, lineno, what):
    if len(tokens) < count:
        raise ParseError(f"expected {count} numbers for {what}, got {len(tokens)}", path, lineno)
    try:
        return [float(t) for t in tokens[:count]]
    except ValueError as exc:
        raise ParseError(f"bad number in {what}: {exc}", path, lineno) from None


def _parse_ints(tokens, count, path, lineno, what):
    if len(tokens) < count:
        raise ParseError(f"expected {count} integers for {what}, got {len(tokens)}", path, lineno)
    try:
        return [int(t) for t in tokens[:count]]
    except ValueError as exc:
        raise ParseError(f"bad integer in {what}: {exc}", path, lineno) from None


def _load_off(text, path, name):
    lines = list(_data_lines(text))
    if not lines:
        raise ParseError("empty OFF file", path)
    lineno, header = lines[0]
    tokens = header.split()
    if tokens[0] != "OFF":
        raise ParseError(f"expected OFF header, got {tokens[0]!r}", path, lineno)
    body = lines[1:]
    if len(tokens) > 1:
        counts = _parse_ints(tokens[1:], 3, path, lineno, "OFF counts")
    else:
        if not body:
            raise ParseError("missing vertex/face counts", path, lineno)
        lineno, count_line = body[0]
        counts = _parse_ints(count_line.split(), 3, path, lineno, "OFF counts")
        body = body[1:]
    n_vertices, n_faces, _ = counts
    if n_vertices <= 0:
        raise ParseError(f"vertex count must be positive, got {n_vertices}", path, lineno)
    if len(body) < n_vertices + n_faces:
        raise ParseError(
            f"file ends early: need {n_vertices} vertices and {n_faces} faces, "
            f"found {len(body)} data lines",
            path,
        )
    vertices = np.empty((n_vertices, 3), dtype=np.float64)
    for i in range(n_vertices):
        lineno, line = body[i]
        vertices[i] = _parse_floats(line.split(), 3, path, lineno, f"vertex {i}")
    faces = None
    if n_faces > 0:
        faces = np.empty((n_faces, 3), dtype=np.int64)
        for i in range(n_faces):
            lineno, line = body[n_vertices + i]
            tokens = line.split()
            size = _parse_ints(tokens, 1, path, lineno, f"face {i} size")[0]
            if size != 3:
                raise ParseError(f"only triangles supported, face {i} has {size} vertices", path, lineno)
            idx = _parse_ints(tokens[1:], 3, path, lineno, f"face {i}")
            for j in idx:
                if j < 0 or j >= n_vertices:
                    raise ParseError(
                        f"face {i} index {j} out of range [0, {n_vertices})", path, lineno
                    )
            faces[i] = idx
    return Shape(vertices, faces, name)


def _load_ply(text, path, name):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic line", path, 1)
    elements = []  # (name, count, [property names])
    header_end = None
    i = 1
    fmt_seen = False
    while i < len(lines):
        tokens = lines[i].strip().split()
        i += 1
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise ParseError(f"only ASCII PLY supported, got format {tokens[1]!r}", path, i)
            fmt_seen = True
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, i)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            header_end = i
            break
    if header_end is None or not fmt_seen:
        raise ParseError("unterminated or malformed PLY header", path)

    data = [(header_end + 1 + j, ln.strip()) for j, ln in enumerate(lines[header_end:]) if ln.strip()]
    cursor = 0
    vertices = None
    faces = None
    for elem_name, count, props in elements:
        if cursor + count > len(data):
            raise ParseError(f"file ends early inside element {elem_name!r}", path)
        block = data[cursor : cursor + count]
        cursor += count
        if elem_name == "vertex":
            try:
                ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
            except ValueError:
                raise ParseError("vertex element lacks x/y/z properties", path) from None
            vertices = np.empty((count, 3), dtype=np.float64)
            for row, (lineno, line) in enumerate(block):
                vals = _parse_floats(line.split(), len(props), path, lineno, f"vertex {row}")
                vertices[row] = (vals[ix], vals[iy], vals[iz])
        elif elem_name == "face":
            faces = np.empty((count, 3), dtype=np.int64)
            for row, (lineno, line) in enumerate(block):
                tokens = line.split()
                size = _parse_ints(tokens, 1, path, lineno, f"face {row} size")[0]
                if size != 3:
                    raise ParseError(f"only triangles supported, face {row} has {size} vertices", path, lineno)
                faces[row] = _parse_ints(tokens[1:], 3, path, lineno, f"face {row}")
    if vertices is None:
        raise ParseError("no vertex element", path)
    if faces is not None and faces.size:
        n = vertices.shape[0]
        if faces.min() < 0 or faces.max() >= n:
            bad = int(np.argmax((faces < 0).any(axis=1) | (faces >= n).any(axis=1)))
            raise ParseError(f"face {bad} index out of range [0, {n})", path)
    return Shape(vertices, faces, name)


def _load_xyz(text, path, name):
    rows = []
    for lineno, line in _data_lines(text):
        rows.append(_parse_floats(line.split(), 3, path, lineno, "point"))
    if not rows:
        raise ParseError("empty XYZ file", path)
    return Shape(np.asarray(rows, dtype=np.float64), None, name)


_LOADERS = {"off": _load_off, "ply": _load_ply, "xyz": _load_xyz}


def _format_for(path, fmt):
    if fmt is None:
        fmt = str(path).rsplit(".", 1)[-1].lower()
    if fmt not in _LOADERS:
        raise ParseError(f"unknown shape format {fmt!r} (use off, ply, or xyz)", path)
    return fmt


def load_shape(path, fmt=None, drop_degenerate=True):
    """Load a shape from an OFF/PLY/XYZ file (format inferred from the suffix)."""
    fmt = _format_for(path, fmt)
    with open(path, "r") as fh:
        text = fh.read()
    if not text.strip():
        raise ParseError("empty file", path)
    name = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    shape = _LOADERS[fmt](text, str(path), name)
    return shape.validate(drop_degenerate=drop_degenerate)


def save_shape(shape, path, fmt=None):
    """Write a shape; XYZ keeps points only, OFF/PLY carry faces when present."""
    fmt = _format_for(path, fmt)
    v = shape.vertices
    f = shape.faces
    out = []
    if fmt == "off":
        out.append("OFF")
        out.append(f"{v.shape[0]} {0 if f is None else f.shape[0]} 0")
        for row in v:
            out.append(" ".join(_FLOAT_FMT % x for x in row))
        if f is not None:
            for row in f:
                out.append(f"3 {row[0]} {row[1]} {row[2]}")
    elif fmt == "ply":
        out += ["ply", "format ascii 1.0", f"element vertex {v.shape[0]}"]
        out += [f"property double {axis}" for axis in "xyz"]
        if f is not None:
            out += [f"element face {f.shape[0]}", "property list uchar int vertex_indices"]
        out.append("end_header")
        for row in v:
            out.append(" ".join(_FLOAT_FMT % x for x in row))
        if f is not None:
            for row in f:
                out.append(f"3 {row[0]} {row[1]} {row[2]}")
    else:
        if f is not None:
            warnings.warn(f"saving mesh {shape.name!r} as XYZ drops faces")
        for row in v:
            out.append(" ".join(_FLOAT_FMT % x for x in row))
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")


def normalize_unit_ball(shape):
    """Center the shape at its centroid and scale the farthest vertex to norm 1."""
    v = shape.vertices
    centroid = v.mean(axis=0)
    centered = v - centroid
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius == 0.0:
        raise DegenerateShapeError(
            f"shape {shape.name!r} has zero radius (all vertices coincident)"
        )
    return replace(shape, vertices=centered / radius)


def load_correspondence(path, indexing="zero_based", n_source=None, n_target=None, dense=False):
    """Load a correspondence file.

    Two whitespace-separated integers per line are (source, target) pairs; a
    single integer per line is read as the target of source vertex i (row
    order). ``indexing`` selects the file convention; the result is always
    zero-based.
    """
    if indexing not in ("zero_based", "one_based"):
        raise ValueError(f"indexing must be zero_based or one_based, got {indexing!r}")
    offset = 1 if indexing == "one_based" else 0
    pairs = []
    n_columns = None
    with open(path, "r") as fh:
        text = fh.read()
    for lineno, line in _data_lines(text):
        tokens = line.split()
        if n_columns is None:
            n_columns = len(tokens)
            if n_columns not in (1, 2):
                raise ParseError(f"expected 1 or 2 columns, got {n_columns}", path, lineno)
        elif len(tokens) != n_columns:
            raise ParseError(
                f"inconsistent column count ({len(tokens)} vs {n_columns})", path, lineno
            )
        vals = _parse_ints(tokens, n_columns, path, lineno, "correspondence")
        if n_columns == 1:
            pairs.append((len(pairs), vals[0] - offset))
        else:
            pairs.append((vals[0] - offset, vals[1] - offset))
    if not pairs:
        raise ParseError("empty correspondence file", path)
    arr = np.asarray(pairs, dtype=np.int64)
    for row, (s, t) in enumerate(arr):
        if s < 0 or (n_source is not None and s >= n_source):
            raise ParseError(f"row {row}: source index {s} out of range", path)
        if t < 0 or (n_target is not None and t >= n_target):
            raise ParseError(f"row {row}: target index {t} out of range", path)
    if dense:
        uniq, counts = np.unique(arr[:, 0], return_counts=True)
        if (counts > 1).any():
            dup = uniq[counts > 1][:5].tolist()
            raise ParseError(f"duplicate source entries in dense map: {dup}", path)
    return CorrespondenceMap(arr)


def save_correspondence(corr, path, indexing="zero_based"):
    offset = 1 if indexing == "one_based" else 0
    with open(path, "w") as fh:
        for s, t in corr.pairs:
            fh.write(f"{s + offset} {t + offset}\n")


def write_basis_cache(basis, path):
    """Serialize a spectral basis to the binary cache container.

    Layout (little-endian): 8-byte magic, 1 version byte, uint64 n, uint64 k,
    k float64 eigenvalues, then n*k float64 eigenvector entries column-major.
    Round-trips are bit-exact.
    """
    phi = np.asarray(basis.phi, dtype=np.float64)
    lam = np.asarray(basis.lam, dtype=np.float64)
    n, k = phi.shape
    with open(path, "wb") as fh:
        fh.write(BASIS_MAGIC)
        fh.write(struct.pack("<B", BASIS_VERSION))
        fh.write(struct.pack("<QQ", n, k))
        fh.write(lam.astype("<f8").tobytes())
        fh.write(np.asfortranarray(phi.astype("<f8")).tobytes(order="F"))


def read_basis_cache(path, expected_n=None):
    """Read a basis written by :func:`write_basis_cache`."""
    from .spectral import SpectralBasis

    with open(path, "rb") as fh:
        magic = fh.read(len(BASIS_MAGIC))
        if magic != BASIS_MAGIC:
            raise CacheError(f"{path}: bad magic header {magic!r}")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != BASIS_VERSION:
            raise CacheError(f"{path}: unsupported cache version {version}")
        n, k = struct.unpack("<QQ", fh.read(16))
        if expected_n is not None and n != expected_n:
            raise CacheError(f"{path}: cached for n={n}, requested shape has n={expected_n}")
        lam = np.frombuffer(fh.read(8 * k), dtype="<f8").copy()
        raw = fh.read(8 * n * k)
        if len(raw) != 8 * n * k:
            raise CacheError(f"{path}: truncated eigenvector payload")
        phi = np.frombuffer(raw, dtype="<f8").reshape((n, k), order="F").copy()
    return SpectralBasis(phi=phi, lam=lam)
