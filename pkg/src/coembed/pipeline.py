"""End-to-end orchestration: precompute caches, couple pairs, match and
evaluate, segment. The service layer wraps these functions; the CLI talks to
the service.

Config resolution order is defaults < config file < explicit overrides, and
every command writes its fully resolved config next to its outputs. Cache
entries are keyed by the shape content hash together with every parameter
that influences the cached arrays, and carry a payload checksum so a
corrupted entry is never silently used.
"""

import csv
import hashlib
import io
import json
import logging
import os
import shutil
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from scipy import sparse

from . import coupling, laplacian, matching, spectral
from .errors import CacheError, ConfigError, CoembedError
from .shape_io import (
    Shape,
    load_correspondence,
    load_shape,
    normalize_unit_ball,
    read_basis_cache,
    save_correspondence,
    write_basis_cache,
)

logger = logging.getLogger("coembed.pipeline")

CACHE_ENV_VAR = "COEMBED_CACHE_DIR"
CACHE_SCHEMA = 1
EVAL_COLUMNS = ("pair_id", "method", "k", "d", "seed", "error_x100", "wall_ms")
METHODS = ("coupled", "cqhb_hks", "cqhb_gt", "nn_spectral", "nn_hks")
SHAPE_EXTENSIONS = (".off", ".ply", ".xyz")


@dataclass
class PipelineConfig:
    """Flat, file-serializable pipeline configuration.

    Defaults are the published values: k=50 embeddings, d=512 HKS columns,
    loss weights (1, 50, 1000) for full-full and (1, 1, 5000, 5000) for
    full-partial.
    """

    dataset_root: str = "."
    cache_dir: str = ""
    output_dir: str = "outputs"
    pairs: tuple = ()
    k: int = 50
    descriptor: str = "hks"  # hks | gt
    d: int = 512
    landmarks: str = "all"  # all | integer count (farthest-point sampled)
    hks_normalize: bool = True
    hks_t_min: float = 0.0  # 0 = automatic range
    hks_t_max: float = 0.0
    squared_norms: bool = False
    mu_off: float = 1.0
    mu_ortho: float = 50.0
    mu_couple: float = 1000.0
    mu_off_partial: float = 1.0
    mu_off_full: float = 1.0
    mu_ortho_full: float = 5000.0
    mu_couple_partial: float = 5000.0
    mode: str = "full_full"  # full_full | full_partial
    parametrization: str = "subspace"  # subspace | free
    max_iters: int = 2000
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    grad_tol: float = 1e-7
    init: str = "eigenbasis"  # eigenbasis | random
    indexing: str = "zero_based"  # zero_based | one_based
    seed: int = 0
    knn: int = 8
    bandwidth: str = "auto"  # auto | float
    clusters: int = 6
    corr_dir: str = ""
    corr_pattern: str = "{source}--{target}.corr"

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, known[key].type)
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self):
        if self.k < 1 or self.d < 1:
            raise ConfigError(f"k and d must be positive, got k={self.k}, d={self.d}")
        if self.descriptor not in ("hks", "gt"):
            raise ConfigError(f"descriptor must be hks or gt, got {self.descriptor!r}")
        if self.mode not in ("full_full", "full_partial"):
            raise ConfigError(f"mode must be full_full or full_partial, got {self.mode!r}")
        if self.parametrization not in ("subspace", "free"):
            raise ConfigError(f"parametrization must be subspace or free, got {self.parametrization!r}")
        if self.indexing not in ("zero_based", "one_based"):
            raise ConfigError(f"indexing must be zero_based or one_based, got {self.indexing!r}")
        if self.init not in ("eigenbasis", "random"):
            raise ConfigError(f"init must be eigenbasis or random, got {self.init!r}")
        if self.landmarks != "all":
            try:
                int(self.landmarks)
            except ValueError:
                raise ConfigError(f"landmarks must be 'all' or a count, got {self.landmarks!r}") from None
        if self.bandwidth != "auto":
            try:
                float(self.bandwidth)
            except ValueError:
                raise ConfigError(f"bandwidth must be 'auto' or a number, got {self.bandwidth!r}") from None
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters}")
        for name in ("mu_off", "mu_ortho", "mu_couple", "mu_off_partial",
                     "mu_off_full", "mu_ortho_full", "mu_couple_partial"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def resolved(self):
        """Apply path defaults (env cache override, dataset-relative dirs)."""
        cache = self.cache_dir or os.environ.get(CACHE_ENV_VAR, "")
        cache = cache or os.path.join(self.dataset_root, "cache")
        corr = self.corr_dir or self.dataset_root
        return replace(self, cache_dir=cache, corr_dir=corr)

    def to_text(self):
        out = []
        for key, value in sorted(asdict(self).items()):
            if key == "pairs":
                value = ",".join(f"{s}:{t}" for s, t in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            out.append(f"{key} = {value}")
        return "\n".join(out) + "\n"

    def loss_weights(self):
        return coupling.LossWeights(
            mu_off=self.mu_off,
            mu_ortho=self.mu_ortho,
            mu_couple=self.mu_couple,
            mu_off_partial=self.mu_off_partial,
            mu_off_full=self.mu_off_full,
            mu_ortho_full=self.mu_ortho_full,
            mu_couple_partial=self.mu_couple_partial,
        )

    def optimizer_config(self):
        return coupling.OptimizerConfig(
            max_iters=self.max_iters,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            grad_tol=self.grad_tol,
            seed=self.seed,
            init=self.init,
        )


def _coerce(key, raw, annotation):
    if key == "pairs":
        return _parse_pairs(raw)
    if isinstance(raw, str):
        raw = raw.strip()
    if annotation is int or annotation == "int":
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be an integer, got {raw!r}") from None
    if annotation is float or annotation == "float":
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key} must be a number, got {raw!r}") from None
    if annotation is bool or annotation == "bool":
        if isinstance(raw, bool):
            return raw
        lowered = str(raw).lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")
    return str(raw)


def _parse_pairs(raw):
    if isinstance(raw, (list, tuple)):
        items = []
        for entry in raw:
            if isinstance(entry, str):
                items.append(entry)
            else:
                items.append(f"{entry[0]}:{entry[1]}")
    else:
        items = [p for p in str(raw).split(",") if p.strip()]
    pairs = []
    for item in items:
        bits = item.strip().split(":")
        if len(bits) != 2 or not bits[0] or not bits[1]:
            raise ConfigError(f"pair must look like source:target, got {item!r}")
        pairs.append((bits[0].strip(), bits[1].strip()))
    return tuple(pairs)


def parse_config_file(path):
    """Read 'key = value' lines; '#' starts a comment."""
    mapping = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            mapping[key] = value
    return mapping


def load_config(config_file=None, overrides=None):
    mapping = {}
    if config_file:
        mapping.update(parse_config_file(config_file))
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_mapping(mapping).resolved()


def _atomic_write_bytes(path, payload):
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_text(path, text):
    _atomic_write_bytes(path, text.encode())


def _npy_bytes(array):
    buf = io.BytesIO()
    np.save(buf, array)
    return buf.getvalue()


def _write_resolved_config(cfg):
    os.makedirs(cfg.output_dir, exist_ok=True)
    _atomic_write_text(os.path.join(cfg.output_dir, "config.resolved.txt"), cfg.to_text())


def find_shape_file(cfg, name):
    candidate = os.path.join(cfg.dataset_root, name)
    if os.path.isfile(candidate):
        return candidate
    for ext in SHAPE_EXTENSIONS:
        if os.path.isfile(candidate + ext):
            return candidate + ext
    raise FileNotFoundError(f"no shape file for {name!r} under {cfg.dataset_root}")


def _cache_params(cfg, is_mesh):
    params = {"k": cfg.k, "d": cfg.d, "seed": cfg.seed,
              "hks_normalize": cfg.hks_normalize,
              "hks_t_min": cfg.hks_t_min, "hks_t_max": cfg.hks_t_max,
              "operator": "cotangent" if is_mesh else "knn_gaussian"}
    if not is_mesh:
        params["knn"] = cfg.knn
        params["bandwidth"] = cfg.bandwidth
    return params


def shape_cache_key(shape, params):
    digest = hashlib.sha256()
    digest.update(b"coembed-cache-v1")
    digest.update(shape.vertices.tobytes())
    if shape.faces is not None:
        digest.update(shape.faces.tobytes())
    digest.update(json.dumps(params, sort_keys=True).encode())
    return digest.hexdigest()[:16]


_PAYLOAD_FILES = (
    "vertices.npy", "faces.npy", "L_row.npy", "L_col.npy", "L_data.npy",
    "mass.npy", "basis.bin", "hks.npy",
)


def _payload_sha(directory):
    digest = hashlib.sha256()
    for fname in _PAYLOAD_FILES:
        path = os.path.join(directory, fname)
        if os.path.isfile(path):
            digest.update(fname.encode())
            with open(path, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()


def _t_range(cfg):
    if cfg.hks_t_min > 0 and cfg.hks_t_max > 0:
        return (cfg.hks_t_min, cfg.hks_t_max)
    return "auto"


def precompute_shape(cfg, name):
    """Normalize, assemble operators, eigendecompose, and compute the HKS
    for one shape; skip when an up-to-date cache entry exists."""
    path = find_shape_file(cfg, name)
    shape = normalize_unit_ball(load_shape(path))
    params = _cache_params(cfg, shape.is_mesh)
    key = shape_cache_key(shape, params)
    entry_dir = os.path.join(cfg.cache_dir, f"{name}-{key}")
    meta_path = os.path.join(entry_dir, "meta.json")
    if os.path.isfile(meta_path):
        try:
            with open(meta_path) as fh:
                meta = json.load(fh)
            if meta.get("key") == key and meta.get("payload_sha256") == _payload_sha(entry_dir):
                logger.info("cache up to date for %s (%s)", name, key)
                return {"shape": name, "key": key, "path": entry_dir, "skipped": True}
            warnings.warn(f"cache entry for {name!r} is stale or corrupt; recomputing")
        except (json.JSONDecodeError, OSError):
            warnings.warn(f"unreadable cache metadata for {name!r}; recomputing")

    stiffness, mass = laplacian.build_operators(
        shape, k_nn=cfg.knn,
        bandwidth="auto" if cfg.bandwidth == "auto" else float(cfg.bandwidth),
    )
    basis = spectral.eig_smallest(stiffness, mass, cfg.k, seed=cfg.seed)
    descriptor = spectral.hks(
        basis, mass, d=cfg.d, t_range=_t_range(cfg), normalize=cfg.hks_normalize
    )

    os.makedirs(cfg.cache_dir, exist_ok=True)
    tmp_dir = tempfile.mkdtemp(dir=cfg.cache_dir, prefix=".tmp-")
    try:
        coo = sparse.coo_matrix(stiffness)
        arrays = {
            "vertices.npy": shape.vertices,
            "L_row.npy": coo.row.astype(np.int64),
            "L_col.npy": coo.col.astype(np.int64),
            "L_data.npy": coo.data,
            "mass.npy": mass,
            "hks.npy": descriptor.values,
        }
        if shape.faces is not None:
            arrays["faces.npy"] = shape.faces
        for fname, arr in arrays.items():
            with open(os.path.join(tmp_dir, fname), "wb") as fh:
                fh.write(_npy_bytes(arr))
        write_basis_cache(basis, os.path.join(tmp_dir, "basis.bin"))
        meta = {
            "cache_schema": CACHE_SCHEMA,
            "name": name,
            "key": key,
            "n": shape.n_vertices,
            "params": params,
            "payload_sha256": _payload_sha(tmp_dir),
        }
        with open(os.path.join(tmp_dir, "meta.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
        if os.path.isdir(entry_dir):
            shutil.rmtree(entry_dir)
        os.replace(tmp_dir, entry_dir)
    except BaseException:
        shutil.rmtree(tmp_dir, ignore_errors=True)
        raise
    logger.info("cached %s -> %s", name, entry_dir)
    return {"shape": name, "key": key, "path": entry_dir, "skipped": False}


def run_precompute(cfg, shapes=None):
    """Precompute every shape (default: all shapes named in cfg.pairs).
    Per-shape failures are collected, not fatal."""
    cfg = cfg.resolved()
    _write_resolved_config(cfg)
    if shapes is None:
        seen = []
        for source, target in cfg.pairs:
            for name in (source, target):
                if name not in seen:
                    seen.append(name)
        shapes = seen
    if not shapes:
        raise ConfigError("nothing to precompute: no shapes given and no pairs configured")
    entries, failures = [], []
    for name in shapes:
        try:
            entries.append(precompute_shape(cfg, name))
        except Exception as exc:  # collected per contract
            logger.warning("precompute failed for %s: %s", name, exc)
            failures.append({"shape": name, "error": f"{type(exc).__name__}: {exc}"})
    return {"entries": entries, "failures": failures}


@dataclass
class CachedShape:
    name: str
    shape: Shape
    stiffness: object
    mass: np.ndarray
    basis: object
    hks: np.ndarray
    path: str


def load_cached(cfg, name):
    """Load a cache entry, verifying its payload checksum first."""
    path = find_shape_file(cfg, name)
    shape = normalize_unit_ball(load_shape(path))
    params = _cache_params(cfg, shape.is_mesh)
    key = shape_cache_key(shape, params)
    entry_dir = os.path.join(cfg.cache_dir, f"{name}-{key}")
    meta_path = os.path.join(entry_dir, "meta.json")
    if not os.path.isfile(meta_path):
        raise CacheError(
            f"no cache entry for {name!r} at k={cfg.k}, d={cfg.d}; run precompute first"
        )
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("key") != key or meta.get("payload_sha256") != _payload_sha(entry_dir):
        raise CacheError(f"cache entry for {name!r} is corrupt or stale; rerun precompute")

    def _load(fname):
        return np.load(os.path.join(entry_dir, fname))

    vertices = _load("vertices.npy")
    faces_path = os.path.join(entry_dir, "faces.npy")
    faces = np.load(faces_path) if os.path.isfile(faces_path) else None
    n = vertices.shape[0]
    stiffness = sparse.coo_matrix(
        (_load("L_data.npy"), (_load("L_row.npy"), _load("L_col.npy"))), shape=(n, n)
    ).tocsr()
    basis = read_basis_cache(os.path.join(entry_dir, "basis.bin"), expected_n=n)
    return CachedShape(
        name=name,
        shape=Shape(vertices, faces, name=name),
        stiffness=stiffness,
        mass=_load("mass.npy"),
        basis=basis,
        hks=_load("hks.npy"),
        path=entry_dir,
    )


def _corr_path(cfg, source, target):
    return os.path.join(
        cfg.corr_dir, cfg.corr_pattern.format(source=source, target=target)
    )


def load_gt_correspondence(cfg, source_cache, target_cache):
    path = _corr_path(cfg, source_cache.name, target_cache.name)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no ground-truth correspondence file {path}")
    return load_correspondence(
        path,
        indexing=cfg.indexing,
        n_source=source_cache.shape.n_vertices,
        n_target=target_cache.shape.n_vertices,
    )


def _descriptors_for(cfg, kind, source_cache, target_cache):
    if kind == "hks":
        return (
            spectral.Descriptor(source_cache.hks, "hks"),
            spectral.Descriptor(target_cache.hks, "hks"),
        )
    corr = load_gt_correspondence(cfg, source_cache, target_cache)
    landmarks = cfg.landmarks if cfg.landmarks == "all" else int(cfg.landmarks)
    return spectral.gt_indicator_descriptor(
        corr,
        source_cache.shape.n_vertices,
        target_cache.shape.n_vertices,
        landmarks=landmarks,
        vertices=source_cache.shape.vertices,
    )


def pair_id(source, target):
    return f"{source}--{target}"


def _pair_dir(cfg, source, target, method=None):
    base = os.path.join(cfg.output_dir, pair_id(source, target))
    return os.path.join(base, method) if method else base


def _trace_csv(trace):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(coupling.TRACE_COLUMNS)
    for row in trace:
        writer.writerow([int(row[0])] + ["%.17g" % x for x in row[1:]])
    return out.getvalue()


def run_couple(cfg, source, target, method="coupled"):
    """Optimize coupled embeddings for one pair and persist the artifacts."""
    cfg = cfg.resolved()
    if method not in ("coupled", "cqhb_hks", "cqhb_gt"):
        raise ConfigError(f"couple method must be coupled/cqhb_hks/cqhb_gt, got {method!r}")
    _write_resolved_config(cfg)
    source_cache = load_cached(cfg, source)
    target_cache = load_cached(cfg, target)
    kind = {"coupled": cfg.descriptor, "cqhb_hks": "hks", "cqhb_gt": "gt"}[method]
    desc_s, desc_t = _descriptors_for(cfg, kind, source_cache, target_cache)
    problem = coupling.CouplingProblem(
        stiffness_source=source_cache.stiffness,
        mass_source=source_cache.mass,
        basis_source=source_cache.basis,
        descriptor_source=desc_s,
        stiffness_target=target_cache.stiffness,
        mass_target=target_cache.mass,
        basis_target=target_cache.basis,
        descriptor_target=desc_t,
        weights=cfg.loss_weights(),
        mode=cfg.mode,
        parametrization=cfg.parametrization,
        squared=cfg.squared_norms,
    )
    opt_cfg = cfg.optimizer_config()
    if method == "coupled":
        result = coupling.optimize_coupled(problem, opt_cfg)
    else:
        result = coupling.cqhb_baseline(problem, method.split("_", 1)[1], opt_cfg)

    out_dir = _pair_dir(cfg, source, target, method)
    os.makedirs(out_dir, exist_ok=True)
    _atomic_write_bytes(os.path.join(out_dir, "psi_source.npy"), _npy_bytes(result.psi_source))
    _atomic_write_bytes(os.path.join(out_dir, "psi_target.npy"), _npy_bytes(result.psi_target))
    _atomic_write_text(os.path.join(out_dir, "trace.csv"), _trace_csv(result.trace))
    weights = cfg.loss_weights()
    if cfg.mode == "full_full":
        weight_summary = [weights.mu_off, weights.mu_ortho, weights.mu_couple]
    else:
        weight_summary = [
            weights.mu_off_partial, weights.mu_off_full,
            weights.mu_ortho_full, weights.mu_couple_partial,
        ]
    metadata = {
        "pair_id": pair_id(source, target),
        "method": method,
        "descriptor": kind,
        "weights": weight_summary,
        "mode": cfg.mode,
        "parametrization": cfg.parametrization,
        "seed": cfg.seed,
        "k": cfg.k,
        "d": cfg.d,
        "init": cfg.init,
        "squared_norms": cfg.squared_norms,
        "hks_normalize": cfg.hks_normalize,
        "geodesic_normalization": "target_sqrt_area",
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "final_total": float(result.best_total),
    }
    _atomic_write_text(
        os.path.join(out_dir, "metadata.json"),
        json.dumps(metadata, sort_keys=True, indent=2) + "\n",
    )
    return {
        "pair_id": metadata["pair_id"],
        "method": method,
        "output_dir": out_dir,
        "psi_source": os.path.join(out_dir, "psi_source.npy"),
        "psi_target": os.path.join(out_dir, "psi_target.npy"),
        "trace": os.path.join(out_dir, "trace.csv"),
        "converged": metadata["converged"],
        "iterations": metadata["iterations"],
        "final_total": metadata["final_total"],
    }


def _embeddings_for(cfg, source, target, method, source_cache, target_cache):
    if method in ("coupled", "cqhb_hks", "cqhb_gt"):
        out_dir = _pair_dir(cfg, source, target, method)
        psi_s_path = os.path.join(out_dir, "psi_source.npy")
        psi_t_path = os.path.join(out_dir, "psi_target.npy")
        if not (os.path.isfile(psi_s_path) and os.path.isfile(psi_t_path)):
            run_couple(cfg, source, target, method)
        return np.load(psi_s_path), np.load(psi_t_path)
    if method == "nn_spectral":
        return (
            spectral.fix_sign_columns(source_cache.basis.phi),
            spectral.fix_sign_columns(target_cache.basis.phi),
        )
    if method == "nn_hks":
        return source_cache.hks, target_cache.hks
    raise ConfigError(f"unknown method {method!r} (choose from {METHODS})")


def run_match_eval(cfg, source, target, methods=("coupled",)):
    """Match with each method and append mean-geodesic-error rows to the
    evaluation CSV. Pairs without ground truth are skipped with a warning."""
    cfg = cfg.resolved()
    _write_resolved_config(cfg)
    source_cache = load_cached(cfg, source)
    target_cache = load_cached(cfg, target)
    try:
        gt = load_gt_correspondence(cfg, source_cache, target_cache)
    except FileNotFoundError as exc:
        warnings.warn(f"skipping evaluation of {pair_id(source, target)}: {exc}")
        return {"rows": [], "skipped": list(methods)}

    field = matching.GeodesicField(target_cache.shape, k_nn=cfg.knn)
    pdir = _pair_dir(cfg, source, target)
    os.makedirs(pdir, exist_ok=True)
    rows = []
    for method in methods:
        start = time.perf_counter()
        psi_s, psi_t = _embeddings_for(cfg, source, target, method, source_cache, target_cache)
        pred = matching.nn_match(psi_s, psi_t)
        error = matching.mean_geodesic_error(pred, gt, field)
        wall_ms = 1000.0 * (time.perf_counter() - start)
        save_correspondence(pred, os.path.join(pdir, f"{method}.corr"))
        rows.append(
            {
                "pair_id": pair_id(source, target),
                "method": method,
                "k": cfg.k,
                "d": cfg.d,
                "seed": cfg.seed,
                "error_x100": error,
                "wall_ms": wall_ms,
            }
        )
    _append_eval_rows(cfg, rows)
    return {"rows": rows, "skipped": []}


def _append_eval_rows(cfg, rows):
    path = os.path.join(cfg.output_dir, "eval.csv")
    fresh = not os.path.isfile(path)
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(EVAL_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["pair_id"], row["method"], row["k"], row["d"], row["seed"],
                 "%.17g" % row["error_x100"], "%.3f" % row["wall_ms"]]
            )


def _write_labels(path, labels):
    _atomic_write_text(path, "\n".join(str(int(x)) for x in labels) + "\n")


def run_segment(cfg, source, target=None, clusters=None):
    """k-means segmentation in embedding space.

    Single shape: clusters its sign-fixed eigenbasis rows. Pair: clusters
    the coupled embeddings, writing native labels for both shapes plus the
    target labels transferred through the source centroids.
    """
    cfg = cfg.resolved()
    _write_resolved_config(cfg)
    c = int(clusters) if clusters else cfg.clusters
    if target is None:
        cache = load_cached(cfg, source)
        seg = matching.kmeans_segment(
            spectral.fix_sign_columns(cache.basis.phi), c, seed=cfg.seed
        )
        os.makedirs(cfg.output_dir, exist_ok=True)
        path = os.path.join(cfg.output_dir, f"{source}.labels.txt")
        _write_labels(path, seg.labels)
        return {"label_files": {source: path}}

    out_dir = _pair_dir(cfg, source, target, "coupled")
    psi_s_path = os.path.join(out_dir, "psi_source.npy")
    psi_t_path = os.path.join(out_dir, "psi_target.npy")
    if not (os.path.isfile(psi_s_path) and os.path.isfile(psi_t_path)):
        run_couple(cfg, source, target, "coupled")
    psi_s, psi_t = np.load(psi_s_path), np.load(psi_t_path)
    seg_dir = os.path.join(_pair_dir(cfg, source, target), "segments")
    os.makedirs(seg_dir, exist_ok=True)
    seg_s = matching.kmeans_segment(psi_s, c, seed=cfg.seed)
    seg_t = matching.kmeans_segment(psi_t, c, seed=cfg.seed)
    transferred = matching.transfer_segments(seg_s, psi_t)
    paths = {
        source: os.path.join(seg_dir, f"{source}.labels.txt"),
        target: os.path.join(seg_dir, f"{target}.labels.txt"),
        f"{target}.transferred": os.path.join(seg_dir, f"{target}.transferred.txt"),
    }
    _write_labels(paths[source], seg_s.labels)
    _write_labels(paths[target], seg_t.labels)
    _write_labels(paths[f"{target}.transferred"], transferred.labels)
    return {"label_files": paths}


def read_trace(cfg, source, target, method="coupled"):
    cfg = cfg.resolved()
    path = os.path.join(_pair_dir(cfg, source, target, method), "trace.csv")
    if not os.path.isfile(path):
        raise CoembedError(f"no loss trace at {path}; run couple first")
    with open(path) as fh:
        return fh.read()


def make_demo_dataset(root, n=700, n_pairs=2, seed=0):
    """Write a small synthetic dataset (warped near-isometric sphere pairs
    with dense ground truth) so the pipeline can run out of the box."""
    from . import meshgen
    from .shape_io import save_shape

    os.makedirs(root, exist_ok=True)
    pairs = []
    for i in range(n_pairs):
        src, tgt, gt = meshgen.warped_sphere_pair(n=n, seed=seed + i)
        s_name, t_name = f"pose{i}a", f"pose{i}b"
        save_shape(src, os.path.join(root, s_name + ".off"))
        save_shape(tgt, os.path.join(root, t_name + ".off"))
        save_correspondence(gt, os.path.join(root, f"{s_name}--{t_name}.corr"))
        pairs.append((s_name, t_name))
    return pairs
