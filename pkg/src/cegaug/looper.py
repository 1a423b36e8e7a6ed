"""Closed-loop orchestration.

``harvest`` drives sample -> render -> predict -> match, banking every
misclassified image into the augmentation set and the error table until the
set is large enough or the budget runs out. ``run_cycles`` wraps that in the
full experimental protocol: split harvested counterexamples into train/test
halves, build ratio-sized augmented training sets, retrain a model variant
per ratio, evaluate every variant against the original test set and all
counterexample test sets so far, and carry the best variant into the next
cycle.

Per-iteration progress streams to a JSONL log and the error table streams to
CSV, both flushed line-by-line, so a killed run leaves parseable artifacts.
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .assets import AssetLibrary, load_library
from .errortable import (
    ErrorTable,
    FeedbackSpec,
    TableStream,
    append as table_append,
    default_schema,
    derive_feedback,
)
from .generator import (
    InvisibleCarError,
    LabeledImage,
    concretize,
    manifest_record,
    save_image,
    write_manifest,
)
from .metrics import EvalResult, average_accuracy, match
from .modspace import Modification, SpaceLayout, default_layout
from .oracle import (
    OracleError,
    SurrogateDetector,
    make_detector,
    run_retrain_hook,
)
from .sampler import CEHyperParams, DiversityFilter, Sampler, make_sampler

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_REJECTIONS = 200


class LoopError(RuntimeError):
    pass


class HarvestAborted(LoopError):
    """Detector kept failing; partial artifacts were flushed before raising."""


@dataclass
class SamplerConfig:
    kind: str = "uniform"
    seed: int = 0
    halton_start: int = 1
    halton_scramble_seed: Optional[int] = None
    ce: CEHyperParams = field(default_factory=CEHyperParams)
    feedback_path: Optional[str] = None

    @classmethod
    def from_dict(cls, obj: dict) -> "SamplerConfig":
        ce = CEHyperParams(**obj.get("ce", {}))
        scramble = obj.get("halton_scramble_seed")
        return cls(kind=obj.get("kind", "uniform"), seed=int(obj.get("seed", 0)),
                   halton_start=int(obj.get("halton_start", 1)),
                   halton_scramble_seed=None if scramble is None else int(scramble),
                   ce=ce, feedback_path=obj.get("feedback_path"))

    def build(self, layout: SpaceLayout, feedback: Optional[FeedbackSpec] = None) -> Sampler:
        if feedback is None and self.feedback_path:
            feedback = FeedbackSpec.from_json(json.loads(Path(self.feedback_path).read_text()))
        return make_sampler(self.kind, layout, seed=self.seed, hyper=self.ce,
                            feedback=feedback, halton_start=self.halton_start,
                            halton_scramble_seed=self.halton_scramble_seed)


@dataclass
class LoopConfig:
    library_dir: str
    model: str
    out_dir: str
    target_size: int = 50
    budget: int = 2000
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    min_distance: Optional[float] = None
    split_fraction: float = 0.5
    ratios: tuple[float, ...] = (0.08, 0.17, 0.35, 0.50)
    trainset_size: int = 60
    testset_size: int = 30
    seed: int = 0
    save_images: bool = True
    retry_limit: int = 2
    retrain_cmd: Optional[str] = None
    analysis_max_k: int = 3
    analysis_top_n: int = 5

    def __post_init__(self):
        if self.budget < self.target_size:
            raise ValueError("iteration budget must cover the target set size")
        if not all(0 < r <= 1 for r in self.ratios):
            raise ValueError("ratios must lie in (0, 1]")
        if not (0 < self.split_fraction < 1):
            raise ValueError("split fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "LoopConfig":
        obj = dict(obj)
        sampler = SamplerConfig.from_dict(obj.pop("sampler", {}))
        if "ratios" in obj:
            obj["ratios"] = tuple(float(r) for r in obj["ratios"])
        return cls(sampler=sampler, **obj)

    @classmethod
    def from_file(cls, path: str | Path) -> "LoopConfig":
        text = Path(path).read_text()
        if str(path).endswith(".toml"):
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            obj = tomllib.loads(text)
        else:
            obj = json.loads(text)
        return cls.from_dict(obj)


@dataclass
class HarvestResult:
    augmentation: list[LabeledImage]
    table: ErrorTable
    iterations: int
    counterexamples: int
    wall_time: float
    stopped_because: str  # "target" | "budget"
    log_path: Optional[str] = None
    table_path: Optional[str] = None

    @property
    def hit_rate(self) -> float:
        return self.counterexamples / self.iterations if self.iterations else 0.0

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "counterexamples": self.counterexamples,
            "hit_rate": self.hit_rate,
            "wall_time_s": self.wall_time,
            "stopped_because": self.stopped_because,
            "log_path": self.log_path,
            "table_path": self.table_path,
        }


def render_with_resampling(sampler: Sampler, lib: AssetLibrary,
                           max_rejections: int = MAX_CONSECUTIVE_REJECTIONS
                           ) -> tuple[Modification, LabeledImage]:
    """Draw until the generator accepts; rejections don't consume budget."""
    rejections = 0
    while True:
        m = sampler.next()
        try:
            return m, concretize(m, lib)
        except InvisibleCarError:
            rejections += 1
            if rejections >= max_rejections:
                raise LoopError(f"{rejections} consecutive visibility rejections; "
                                "the sampler region seems unrenderable")


def _predict_with_retries(detector, image: LabeledImage, retry_limit: int):
    attempt = 0
    while True:
        try:
            return detector.predict(image)
        except OracleError:
            attempt += 1
            if attempt > retry_limit:
                raise


def harvest(config: LoopConfig,
            detector=None,
            lib: Optional[AssetLibrary] = None,
            sampler: Optional[Sampler] = None,
            feedback: Optional[FeedbackSpec] = None,
            tag: str = "harvest") -> HarvestResult:
    """Collect misclassified images until the augmentation set is full.

    Streams one JSONL line per evaluated sample to ``<out>/<tag>_log.jsonl``
    and mirrors the error table to ``<out>/<tag>_table.csv``, flushing each
    line so partial runs stay loadable.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lib = lib or load_library(config.library_dir)
    layout = default_layout(lib.n_backgrounds, lib.n_cars)
    detector = detector or make_detector(config.model, lib=lib,
                                         retrain_cmd=config.retrain_cmd)
    sampler = sampler or config.sampler.build(layout, feedback=feedback)
    diversity = DiversityFilter(config.min_distance) if config.min_distance else None

    table = ErrorTable(schema=default_schema(layout, lib))
    log_path = out / f"{tag}_log.jsonl"
    table_path = out / f"{tag}_table.csv"
    stream = TableStream(table.schema, table_path)
    images_dir = out / f"{tag}_images"
    if config.save_images:
        images_dir.mkdir(exist_ok=True)

    augmentation: list[LabeledImage] = []
    iterations = 0
    started = time.time()
    log = open(log_path, "w")
    try:
        while len(augmentation) < config.target_size and iterations < config.budget:
            m, image = render_with_resampling(sampler, lib)
            try:
                detections = _predict_with_retries(detector, image, config.retry_limit)
            except OracleError as exc:
                log.write(json.dumps({"iteration": iterations, "error": str(exc)}) + "\n")
                log.flush()
                stream.close()
                raise HarvestAborted(f"detector failed after {config.retry_limit} retries: {exc}")
            iterations += 1
            result = match(detections, image.boxes)
            sampler.observe(m, result)

            accepted = False
            if result.misclassified and (diversity is None or diversity.accept(m)):
                accepted = True
                if config.save_images:
                    save_image(image, images_dir / f"{len(augmentation):05d}.png")
                row = table_append(table, image, result)
                stream.write_row(row)
                augmentation.append(image)

            log.write(json.dumps({
                "iteration": iterations,
                "modification": m.to_dict(),
                "precision": result.precision,
                "recall": result.recall,
                "misclassified": result.misclassified,
                "accepted": accepted,
                "image_path": image.path,
            }) + "\n")
            log.flush()
        stopped_because = "target" if len(augmentation) >= config.target_size else "budget"
        if stopped_because == "budget" and len(augmentation) < config.target_size:
            logger.warning("budget exhausted with %d/%d counterexamples",
                           len(augmentation), config.target_size)
    finally:
        log.close()
        stream.close()

    return HarvestResult(augmentation=augmentation, table=table,
                         iterations=iterations, counterexamples=len(augmentation),
                         wall_time=time.time() - started,
                         stopped_because=stopped_because,
                         log_path=str(log_path), table_path=str(table_path))


def split(counterexamples: Sequence, fraction: float,
          rng: np.random.Generator) -> tuple[list, list]:
    """Random partition into (train half, test half)."""
    if not counterexamples:
        raise ValueError("nothing to split")
    n = len(counterexamples)
    k = round(fraction * n)
    order = rng.permutation(n)
    left = [counterexamples[i] for i in order[:k]]
    right = [counterexamples[i] for i in order[k:]]
    return left, right


def build_ratio_sets(trainset: Sequence, counterexamples: Sequence,
                     ratios: Sequence[float],
                     base_size: Optional[int] = None) -> list[tuple[float, list]]:
    """One augmented manifest per ratio: trainset plus the first
    ceil(r * base) counterexamples, in stable order."""
    base = base_size if base_size is not None else len(trainset)
    needed = max((math.ceil(r * base) for r in ratios), default=0)
    if len(counterexamples) < needed:
        raise LoopError(f"need {needed} counterexamples for ratio "
                        f"{max(ratios)}, only {len(counterexamples)} harvested "
                        f"(short by {needed - len(counterexamples)})")
    out = []
    for r in ratios:
        k = math.ceil(r * base)
        out.append((r, list(trainset) + list(counterexamples[:k])))
    return out


def evaluate_images(detector, images: Sequence[LabeledImage],
                    retry_limit: int = 2) -> tuple[float, float, list[EvalResult]]:
    results = [match(_predict_with_retries(detector, img, retry_limit), img.boxes)
               for img in images]
    ap, ar = average_accuracy(results)
    return ap, ar, results


def _generate_set(lib: AssetLibrary, layout: SpaceLayout, n: int,
                  seed: int) -> list[LabeledImage]:
    sampler = make_sampler("uniform", layout, seed=seed)
    images = []
    while len(images) < n:
        _, image = render_with_resampling(sampler, lib)
        images.append(image)
    return images


@dataclass
class LoopReport:
    baseline: dict
    cycles: list[dict]
    config_seed: int
    wall_time: float = 0.0

    def to_json(self) -> dict:
        return {"baseline": self.baseline, "cycles": self.cycles,
                "seed": self.config_seed, "wall_time_s": self.wall_time}


def run_cycles(config: LoopConfig, n_cycles: int,
               lib: Optional[AssetLibrary] = None) -> LoopReport:
    """Multi-cycle augmentation experiment over a retrainable model.

    The surrogate retrains in-process (its memory becomes the manifest's
    modifications); external models go through the configured retrain hook.
    Variant selection per cycle: highest AP+AR on the newest counterexample
    test set, ties to the smaller ratio.
    """
    started = time.time()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lib = lib or load_library(config.library_dir)
    layout = default_layout(lib.n_backgrounds, lib.n_cars)

    sub_seeds = np.random.SeedSequence(config.seed).generate_state(3)
    trainset = _generate_set(lib, layout, config.trainset_size, seed=int(sub_seeds[0]))
    testset = _generate_set(lib, layout, config.testset_size, seed=int(sub_seeds[1]))
    write_manifest([manifest_record(img) for img in trainset], out / "trainset.jsonl")
    write_manifest([manifest_record(img) for img in testset], out / "testset.jsonl")

    base_detector = make_detector(config.model, lib=lib, retrain_cmd=config.retrain_cmd)
    if isinstance(base_detector, SurrogateDetector):
        base_detector = base_detector.retrained([img.modification for img in trainset])

    ap, ar, _ = evaluate_images(base_detector, testset, config.retry_limit)
    report = LoopReport(baseline={"T": [ap, ar]}, cycles=[], config_seed=config.seed)

    split_rng = np.random.default_rng(int(sub_seeds[2]))
    current_train: list[LabeledImage] = list(trainset)
    counterexample_testsets: list[list[LabeledImage]] = []

    for cycle in range(1, n_cycles + 1):
        cycle_sampler_cfg = replace(config.sampler,
                                    seed=config.sampler.seed + cycle * 7919)
        cycle_config = replace(config, sampler=cycle_sampler_cfg)
        result = harvest(cycle_config, detector=base_detector, lib=lib,
                         tag=f"cycle{cycle}")
        if not result.augmentation:
            report.cycles.append({"cycle": cycle, "harvest": result.summary(),
                                  "matrix": {}, "best": None,
                                  "note": "no counterexamples; model looks saturated"})
            break
        c_train, c_test = split(result.augmentation, config.split_fraction, split_rng)
        counterexample_testsets.append(c_test)
        write_manifest([manifest_record(img) for img in c_train],
                       out / f"cycle{cycle}_ctrain.jsonl")
        write_manifest([manifest_record(img) for img in c_test],
                       out / f"cycle{cycle}_ctest.jsonl")

        # Pre-retrain accuracy on the fresh counterexample test half; the
        # improvement after retraining is measured against this.
        pre_ap, pre_ar, _ = evaluate_images(base_detector, c_test, config.retry_limit)

        variants = build_ratio_sets(current_train, c_train, config.ratios,
                                    base_size=config.trainset_size)
        matrix: dict[str, dict[str, list[float]]] = {}
        scored = []
        for r, manifest_images in variants:
            name = f"r{r}"
            manifest_path = out / f"cycle{cycle}_train_{name}.jsonl"
            write_manifest([manifest_record(img) for img in manifest_images], manifest_path)
            if isinstance(base_detector, SurrogateDetector):
                variant = base_detector.retrained([img.modification
                                                   for img in manifest_images])
            else:
                if not config.retrain_cmd:
                    raise LoopError("external model needs a retrain_cmd for run_cycles")
                run_retrain_hook(config.retrain_cmd, manifest_path)
                variant = base_detector
            row: dict[str, list[float]] = {}
            ap, ar, _ = evaluate_images(variant, testset, config.retry_limit)
            row["T"] = [ap, ar]
            for j, c_set in enumerate(counterexample_testsets, start=1):
                ap_c, ar_c, _ = evaluate_images(variant, c_set, config.retry_limit)
                row[f"C_T[{j}]"] = [ap_c, ar_c]
            matrix[name] = row
            newest = row[f"C_T[{len(counterexample_testsets)}]"]
            scored.append((newest[0] + newest[1], r, name, manifest_images, variant))

        scored.sort(key=lambda t: (-t[0], t[1]))
        _, _, best_name, best_images, best_variant = scored[0]
        base_detector = best_variant
        current_train = best_images
        report.cycles.append({
            "cycle": cycle,
            "harvest": result.summary(),
            "pre_retrain_on_ctest": [pre_ap, pre_ar],
            "matrix": matrix,
            "best": best_name,
        })

    report.wall_time = time.time() - started
    (out / "report.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    return report


def derive_feedback_from_harvest(result: HarvestResult, lib: AssetLibrary,
                                 max_k: int = 3, top_n: int = 5) -> FeedbackSpec:
    return derive_feedback(result.table, lib, max_k=max_k, top_n=top_n)
