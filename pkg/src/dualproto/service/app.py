"""HTTP service wrapping the experiment harness.

Run with ``uvicorn dualproto.service.app:app``. All file paths in requests
(configs, output directories, run directories) are resolved on the service
host. The bundled CLI talks to this app in-process by default, so no server
needs to be running for command-line use.
"""
from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..config import ConfigError, load_config, normalize_method
from ..data import DataFormatError, GeometryError, SplitError
from ..harness import (
    build_stream,
    dump_embeddings,
    load_run,
    prepare_backbone,
    pretrain_only,
    render_report,
    run_ablation_suite,
    run_experiment,
    train_adapters,
)
from ..inference import dual_prototype_predict
from ..persist import PersistError, save_backbone
from ..training import gradient_check
from . import schemas

_EXPECTED_ERRORS = (
    ConfigError,
    DataFormatError,
    GeometryError,
    SplitError,
    PersistError,
    FileNotFoundError,
    KeyError,
    ValueError,
)


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def _load_config(request) -> "ExperimentConfig":
    cfg = load_config(request.config_path)
    overrides = {}
    if getattr(request, "method", None) is not None:
        overrides["method"] = normalize_method(request.method)
    if getattr(request, "k", None) is not None:
        overrides["top_k"] = request.k
    if getattr(request, "seed", None) is not None:
        overrides["seed"] = request.seed
    if getattr(request, "out", None) is not None:
        overrides["out_dir"] = Path(request.out)
    return cfg.replaced(**overrides) if overrides else cfg


def create_app() -> FastAPI:
    app = FastAPI(
        title="dualproto",
        description="Class-incremental learning benchmark service: dual "
        "prototype stores with task-wise adapters, baselines, and ablations.",
        version=__version__,
    )
    run_cache: dict[str, object] = {}

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/gradcheck", response_model=schemas.GradCheckResponse)
    def gradcheck(request: schemas.GradCheckRequest):
        report = gradient_check(
            trials=request.trials,
            eps=request.eps,
            tolerance=request.tolerance,
            seed=request.seed,
        )
        return schemas.GradCheckResponse(
            trials=report.trials,
            eps=request.eps,
            tolerance=report.tolerance,
            max_relative_error=report.max_relative_error,
            passed=report.passed,
        )

    @app.post("/pretrain", response_model=schemas.PretrainResponse)
    def pretrain(request: schemas.PretrainRequest):
        try:
            cfg = _load_config(request)
            backbone, losses = pretrain_only(cfg)
            weights_path = Path(cfg.out_dir) / "weights" / "backbone.txt"
            save_backbone(weights_path, backbone)
        except _EXPECTED_ERRORS as exc:
            raise _bad_request(exc) from exc
        return schemas.PretrainResponse(
            weights_path=str(weights_path),
            blocks=backbone.num_blocks,
            feature_dim=backbone.feature_dim,
            first_epoch_loss=losses[0] if losses else float("nan"),
            final_epoch_loss=losses[-1] if losses else float("nan"),
        )

    @app.post("/experiments/run", response_model=schemas.RunResponse)
    def run(request: schemas.RunRequest):
        try:
            cfg = _load_config(request)
            result = run_experiment(cfg)
        except _EXPECTED_ERRORS as exc:
            raise _bad_request(exc) from exc
        return schemas.RunResponse(
            method=result.method,
            seed=result.seed,
            k=result.k,
            out_dir=str(cfg.out_dir),
            results_path=str(Path(cfg.out_dir) / "results.json"),
            average_accuracy=result.average_accuracy,
            final_accuracy=result.final_accuracy,
            stages=[
                schemas.StageMetrics(
                    stage=s.stage,
                    n_test=s.n_test,
                    accuracy=s.accuracy,
                    topk_accuracy=s.topk_accuracy,
                    conditional_accuracy=s.conditional_accuracy,
                )
                for s in result.stages
            ],
            wall_clock_seconds=result.wall_clock_seconds,
        )

    @app.post("/experiments/ablation", response_model=schemas.AblationResponse)
    def ablation(request: schemas.AblationRequest):
        try:
            cfg = _load_config(request)
            results = run_ablation_suite(cfg)
        except _EXPECTED_ERRORS as exc:
            raise _bad_request(exc) from exc
        return schemas.AblationResponse(
            seed=cfg.seed,
            k=cfg.top_k,
            out_dir=str(cfg.out_dir),
            arms=[
                schemas.AblationArm(
                    method=method,
                    average_accuracy=r.average_accuracy,
                    final_accuracy=r.final_accuracy,
                    stage_accuracy=[s.accuracy for s in r.stages],
                )
                for method, r in results.items()
            ],
        )

    @app.post("/embeddings", response_model=schemas.EmbeddingsResponse)
    def embeddings(request: schemas.EmbeddingsRequest):
        try:
            cfg = _load_config(request)
            stream = build_stream(cfg)
            backbone = prepare_backbone(cfg, stream)
            registry = None
            if request.which == "adapted":
                registry = train_adapters(cfg, stream, backbone)
            path = Path(cfg.out_dir) / f"embeddings_{request.which}.csv"
            rows = dump_embeddings(backbone, registry, stream, request.which, path)
        except _EXPECTED_ERRORS as exc:
            raise _bad_request(exc) from exc
        return schemas.EmbeddingsResponse(path=str(path), rows=rows, which=request.which)

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(request: schemas.ReportRequest):
        path = Path(request.results_path)
        if path.is_dir():
            path = path / "results.json"
        try:
            payload = json.loads(path.read_text())
            text = render_report(payload)
        except FileNotFoundError as exc:
            raise _bad_request(exc) from exc
        except (json.JSONDecodeError, KeyError) as exc:
            raise HTTPException(
                status_code=400, detail=f"{path} is not a results file: {exc}"
            ) from exc
        return schemas.ReportResponse(
            text=text,
            average_accuracy=payload["average_accuracy"],
            final_accuracy=payload["final_accuracy"],
        )

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(request: schemas.PredictRequest):
        key = str(Path(request.run_dir).resolve())
        try:
            loaded = run_cache.get(key)
            if loaded is None:
                loaded = load_run(request.run_dir)
                run_cache[key] = loaded
            prediction = dual_prototype_predict(
                loaded.store,
                loaded.backbone,
                loaded.registry,
                request.features,
                request.k if request.k is not None else loaded.k,
            )
        except _EXPECTED_ERRORS as exc:
            raise _bad_request(exc) from exc
        return schemas.PredictResponse(
            predicted=prediction.predicted,
            topk_labels=prediction.topk_labels,
            task_of_predicted=loaded.store.task_of[prediction.predicted],
        )

    return app


app = create_app()
