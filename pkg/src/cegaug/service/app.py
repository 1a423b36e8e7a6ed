"""FastAPI service wrapping the core package.

Stateless, path-oriented job endpoints: every request names the library,
manifest, or config file it operates on, so multiple clients can drive the
same server. The CLI is a thin client of these endpoints.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..assets import AssetError, gen_test_assets, load_library, read_background_sidecar
from ..errortable import (
    FeedbackError,
    FeedbackSpec,
    TableError,
    analysis_report,
    derive_feedback,
    load_table_csv,
    load_table_jsonl,
)
from ..generator import (
    AugmentationRejected,
    GeneratorError,
    InvisibleCarError,
    concretize,
    manifest_record,
    read_manifest,
    record_to_labeled,
    save_image,
    standard_augment,
    write_manifest,
)
from ..looper import LoopConfig, LoopError, harvest, render_with_resampling, run_cycles
from ..metrics import average_accuracy, match
from ..modspace import Modification, default_layout, validate
from ..oracle import OracleError, make_detector
from ..sampler import make_sampler
from . import schemas

_BAD_REQUEST_ERRORS = (
    AssetError, TableError, FeedbackError, GeneratorError, LoopError,
    ValueError, KeyError, FileNotFoundError,
)


def _load_table(path: str):
    if path.endswith(".jsonl"):
        return load_table_jsonl(path)
    return load_table_csv(path)


def _build_sampler(request, layout):
    feedback = None
    if request.method == "feedback":
        if not request.feedback_path:
            raise FeedbackError("feedback sampling needs feedback_path")
        feedback = FeedbackSpec.from_json(json.loads(Path(request.feedback_path).read_text()))
    return make_sampler(request.method, layout, seed=request.seed,
                        feedback=feedback, halton_start=request.halton_start)


def create_app() -> FastAPI:
    app = FastAPI(title="cegaug", version=__version__,
                  description="Counterexample-guided data augmentation service")

    async def _bad_request(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    async def _bad_gateway(request: Request, exc: Exception):
        return JSONResponse(status_code=502, content={"detail": str(exc)})

    for exc_type in _BAD_REQUEST_ERRORS:
        app.add_exception_handler(exc_type, _bad_request)
    app.add_exception_handler(OracleError, _bad_gateway)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/assets/generate", response_model=schemas.GenerateAssetsResponse)
    def assets_generate(request: schemas.GenerateAssetsRequest):
        lib = gen_test_assets(request.dest_dir, request.n_backgrounds,
                              request.n_cars, size=request.size, seed=request.seed)
        return schemas.GenerateAssetsResponse(
            library_dir=str(lib.root), n_backgrounds=lib.n_backgrounds, n_cars=lib.n_cars)

    @app.post("/annotations/validate", response_model=schemas.ValidateAnnotationResponse)
    def annotations_validate(request: schemas.ValidateAnnotationRequest):
        try:
            trapezoid, environment, _ = read_background_sidecar(request.path)
        except AssetError as exc:
            return schemas.ValidateAnnotationResponse(ok=False, violations=[str(exc)])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            return schemas.ValidateAnnotationResponse(
                ok=False, violations=[f"malformed sidecar: {exc}"])
        violations = trapezoid.violations()
        if not environment:
            violations.append("missing environment tag")
        return schemas.ValidateAnnotationResponse(ok=not violations, violations=violations)

    @app.post("/samples", response_model=schemas.SampleResponse)
    def samples(request: schemas.SampleRequest):
        lib = load_library(request.library_dir)
        layout = default_layout(lib.n_backgrounds, lib.n_cars)
        sampler = _build_sampler(request, layout)
        mods = [sampler.next().to_dict() for _ in range(request.n)]
        return schemas.SampleResponse(modifications=mods)

    @app.post("/images/generate", response_model=schemas.GenerateImagesResponse)
    def images_generate(request: schemas.GenerateImagesRequest):
        lib = load_library(request.library_dir)
        layout = default_layout(lib.n_backgrounds, lib.n_cars)
        out = Path(request.out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        records, rejected = [], 0
        if request.modifications is not None:
            for i, obj in enumerate(request.modifications):
                m = Modification.from_dict(obj)
                verdict = validate(m, layout)
                if not verdict.ok:
                    raise GeneratorError(f"modification {i}: {'; '.join(verdict.violations)}")
                try:
                    image = concretize(m, lib)
                except InvisibleCarError:
                    rejected += 1
                    continue
                save_image(image, out / "images" / f"{len(records):05d}.png")
                records.append(manifest_record(image))
        else:
            if not request.n:
                raise GeneratorError("need either explicit modifications or a sample count")
            sampler = _build_sampler(request, layout)
            while len(records) < request.n:
                _, image = render_with_resampling(sampler, lib)
                save_image(image, out / "images" / f"{len(records):05d}.png")
                records.append(manifest_record(image))
        manifest_path = out / request.manifest_name
        write_manifest(records, manifest_path)
        return schemas.GenerateImagesResponse(manifest_path=str(manifest_path),
                                              records=len(records), rejected=rejected)

    @app.post("/evaluate", response_model=schemas.EvalResponse)
    def evaluate(request: schemas.EvalRequest):
        lib = load_library(request.library_dir)
        detector = make_detector(request.model, lib=lib)
        results = []
        for record in read_manifest(request.manifest_path):
            image = record_to_labeled(record, load_pixels=bool(record.get("image_path")))
            results.append(match(detector.predict(image), image.boxes))
        ap, ar = average_accuracy(results)
        return schemas.EvalResponse(
            ap=ap, ar=ar, images=len(results),
            misclassified=sum(r.misclassified for r in results),
            per_image=[schemas.PerImageEval(precision=r.precision, recall=r.recall,
                                            misclassified=r.misclassified)
                       for r in results])

    @app.post("/harvests", response_model=schemas.HarvestResponse)
    def harvests(request: schemas.HarvestRequest):
        config = LoopConfig.from_dict(request.config)
        result = harvest(config)
        return schemas.HarvestResponse(**result.summary())

    @app.post("/cycles", response_model=schemas.CyclesResponse)
    def cycles(request: schemas.CyclesRequest):
        config = LoopConfig.from_dict(request.config)
        report = run_cycles(config, request.n_cycles)
        payload = report.to_json()
        return schemas.CyclesResponse(
            baseline=payload["baseline"], cycles=payload["cycles"],
            seed=payload["seed"], wall_time_s=payload["wall_time_s"],
            report_path=str(Path(config.out_dir) / "report.json"))

    @app.post("/errortables/analyze", response_model=schemas.AnalyzeResponse)
    def errortables_analyze(request: schemas.AnalyzeRequest):
        table = _load_table(request.table_path)
        report = analysis_report(table, max_k=request.max_k, top_n=request.top_n)
        feedback_path = None
        if request.feedback_out:
            if not request.library_dir:
                raise FeedbackError("deriving feedback needs library_dir")
            lib = load_library(request.library_dir)
            feedback = derive_feedback(table, lib, max_k=request.max_k,
                                       top_n=request.top_n)
            Path(request.feedback_out).write_text(
                json.dumps(feedback.to_json(), indent=2) + "\n")
            feedback_path = request.feedback_out
        return schemas.AnalyzeResponse(rows=report["rows"],
                                       pca_ranking=report["pca_ranking"],
                                       top_combos=report["top_combos"],
                                       summary=report["summary"],
                                       feedback_path=feedback_path)

    @app.post("/augment/standard", response_model=schemas.StandardAugmentResponse)
    def augment_standard(request: schemas.StandardAugmentRequest):
        records = read_manifest(request.manifest_path)
        out = Path(request.out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(request.seed)
        n_augment = round(request.fraction * len(records))
        picked = set(rng.choice(len(records), size=n_augment, replace=False).tolist())
        out_records = list(records)
        augmented = rejected = 0
        for i in sorted(picked):
            image = record_to_labeled(records[i], load_pixels=True)
            try:
                altered = standard_augment(image, rng)
            except AugmentationRejected:
                rejected += 1
                continue
            save_image(altered, out / "images" / f"aug_{i:05d}.png")
            out_records.append(manifest_record(altered))
            augmented += 1
        manifest_path = out / "augmented.jsonl"
        write_manifest(out_records, manifest_path)
        return schemas.StandardAugmentResponse(manifest_path=str(manifest_path),
                                               originals=len(records),
                                               augmented=augmented, rejected=rejected)

    return app


app = create_app()
