"""HTTP service wrapping the pipeline.

Each request carries the full (partial) configuration; the server resolves
it against the defaults, runs the requested stage synchronously, and returns
file paths plus summaries. Handlers are stateless, so concurrent requests on
distinct pairs are safe (cache writes are atomic)."""

import warnings

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict

from . import __version__, pipeline
from .errors import CoembedError, ConfigError


class ConfigPayload(BaseModel):
    """Partial pipeline configuration; omitted fields keep their defaults."""

    model_config = ConfigDict(extra="forbid")

    dataset_root: str | None = None
    cache_dir: str | None = None
    output_dir: str | None = None
    pairs: list[str] | None = None
    k: int | None = None
    descriptor: str | None = None
    d: int | None = None
    landmarks: str | None = None
    hks_normalize: bool | None = None
    hks_t_min: float | None = None
    hks_t_max: float | None = None
    squared_norms: bool | None = None
    mu_off: float | None = None
    mu_ortho: float | None = None
    mu_couple: float | None = None
    mu_off_partial: float | None = None
    mu_off_full: float | None = None
    mu_ortho_full: float | None = None
    mu_couple_partial: float | None = None
    mode: str | None = None
    parametrization: str | None = None
    max_iters: int | None = None
    learning_rate: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    grad_tol: float | None = None
    init: str | None = None
    indexing: str | None = None
    seed: int | None = None
    knn: int | None = None
    bandwidth: str | None = None
    clusters: int | None = None
    corr_dir: str | None = None
    corr_pattern: str | None = None

    def resolve(self):
        mapping = {k: v for k, v in self.model_dump().items() if v is not None}
        try:
            return pipeline.PipelineConfig.from_mapping(mapping).resolved()
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc


class CacheEntryInfo(BaseModel):
    shape: str
    key: str
    path: str
    skipped: bool


class ShapeFailure(BaseModel):
    shape: str
    error: str


class PrecomputeRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: ConfigPayload = ConfigPayload()
    shapes: list[str] | None = None


class PrecomputeResponse(BaseModel):
    entries: list[CacheEntryInfo]
    failures: list[ShapeFailure]
    warnings: list[str] = []


class CoupleRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: ConfigPayload = ConfigPayload()
    source: str
    target: str
    method: str = "coupled"


class CoupleResponse(BaseModel):
    pair_id: str
    method: str
    output_dir: str
    psi_source: str
    psi_target: str
    trace: str
    converged: bool
    iterations: int
    final_total: float
    warnings: list[str] = []


class MatchEvalRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: ConfigPayload = ConfigPayload()
    source: str
    target: str
    methods: list[str] = ["coupled"]


class EvalRow(BaseModel):
    pair_id: str
    method: str
    k: int
    d: int
    seed: int
    error_x100: float
    wall_ms: float


class MatchEvalResponse(BaseModel):
    rows: list[EvalRow]
    skipped: list[str]
    warnings: list[str] = []


class SegmentRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: ConfigPayload = ConfigPayload()
    source: str
    target: str | None = None
    clusters: int | None = None


class SegmentResponse(BaseModel):
    label_files: dict[str, str]
    warnings: list[str] = []


class TraceRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    config: ConfigPayload = ConfigPayload()
    source: str
    target: str
    method: str = "coupled"


class TraceResponse(BaseModel):
    csv: str


app = FastAPI(
    title="coembed",
    description="Coupled spectral embeddings for dense shape correspondence",
)


def _run(func, *args, **kwargs):
    """Run a pipeline call, translating toolkit errors to HTTP codes and
    surfacing warnings in the response."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            result = func(*args, **kwargs)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except (CoembedError, FileNotFoundError) as exc:
            raise HTTPException(status_code=409, detail=f"{type(exc).__name__}: {exc}") from exc
    return result, [str(w.message) for w in caught]


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/precompute", response_model=PrecomputeResponse)
def precompute(request: PrecomputeRequest):
    cfg = request.config.resolve()
    report, notes = _run(pipeline.run_precompute, cfg, shapes=request.shapes)
    return PrecomputeResponse(
        entries=[CacheEntryInfo(**e) for e in report["entries"]],
        failures=[ShapeFailure(**f) for f in report["failures"]],
        warnings=notes,
    )


@app.post("/couple", response_model=CoupleResponse)
def couple(request: CoupleRequest):
    cfg = request.config.resolve()
    info, notes = _run(pipeline.run_couple, cfg, request.source, request.target, request.method)
    return CoupleResponse(**info, warnings=notes)


@app.post("/match-eval", response_model=MatchEvalResponse)
def match_eval(request: MatchEvalRequest):
    cfg = request.config.resolve()
    for method in request.methods:
        if method not in pipeline.METHODS:
            raise HTTPException(
                status_code=400,
                detail=f"unknown method {method!r}; choose from {list(pipeline.METHODS)}",
            )
    report, notes = _run(pipeline.run_match_eval, cfg, request.source, request.target, request.methods)
    return MatchEvalResponse(
        rows=[EvalRow(**row) for row in report["rows"]],
        skipped=report["skipped"],
        warnings=notes,
    )


@app.post("/segment", response_model=SegmentResponse)
def segment(request: SegmentRequest):
    cfg = request.config.resolve()
    report, notes = _run(
        pipeline.run_segment, cfg, request.source, target=request.target, clusters=request.clusters
    )
    return SegmentResponse(label_files=report["label_files"], warnings=notes)


@app.post("/plot-trace", response_model=TraceResponse)
def plot_trace(request: TraceRequest):
    cfg = request.config.resolve()
    text, _ = _run(pipeline.read_trace, cfg, request.source, request.target, request.method)
    return TraceResponse(csv=text)
