"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Heavier end-to-end criteria build their own asset packs and surrogates; every
tolerance is pinned here, not in helper code.
"""

import json
import signal
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from cegaug.assets import gen_test_assets
from cegaug.errortable import (
    ColumnSpec,
    ErrorTable,
    FeatureSchema,
    append,
    frequent_unordered,
    load_table_csv,
    pca_ordered,
)
from cegaug.generator import place
from cegaug.looper import (
    LoopConfig,
    SamplerConfig,
    derive_feedback_from_harvest,
    harvest,
    run_cycles,
)
from cegaug.metrics import Detection, EvalResult, average_accuracy, iou, match
from cegaug.modspace import (
    ABSENT,
    CONTINUOUS_DIM_NAMES,
    Modification,
    default_layout,
    distance,
)
from cegaug.oracle import (
    BlindSpotRule,
    SurrogateDetector,
    SurrogateModel,
    save_surrogate,
)
from cegaug.sampler import (
    CEHyperParams,
    CESampler,
    sample_halton,
    sample_uniform,
    truncated_gaussian_mass,
)

from oracles import star_discrepancy_grid

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def random_modification(rng, n_backgrounds=60, n_car_models=30):
    discrete = (int(rng.integers(0, n_backgrounds)), int(rng.integers(0, n_car_models)),
                *(None if rng.integers(0, n_car_models + 1) == n_car_models
                  else int(rng.integers(0, n_car_models)) for _ in range(2)))
    continuous = tuple(rng.uniform(0, 1) for _ in range(6)) + \
                 tuple(rng.uniform(0.5, 1.5) for _ in range(4))
    return Modification(discrete=discrete, continuous=continuous)


def test_eq1_distance_fixtures_and_metric_axioms():
    """Eq-1 fixtures reproduce published distances; metric axioms hold on 1000 random triples (< 1 s)."""
    started = time.time()
    common = dict(x1=0.11, z1=0.98, x3=0.5, z3=0.5, brightness=1.0,
                  sharpness=1.0, contrast=1.0, color=1.0)

    def build(background, car2, x2, z2):
        return Modification.from_dict({
            "background": background, "car1_model": 25, "car2_model": car2,
            "car3_model": None, "x2": x2, "z2": z2, **common})

    m1 = build(53, 2, 0.50, 0.41)
    m2 = build(53, 2, 0.20, 0.80)
    m3 = build(13, 7, 0.50, 0.41)
    assert distance(m1, m3) == 2.0
    assert abs(distance(m1, m2) - 0.49) <= 0.02
    assert abs(distance(m2, m3) - 2.49) <= 0.02

    rng = np.random.default_rng(20240501)
    for _ in range(1000):
        a, b, c = (random_modification(rng) for _ in range(3))
        assert distance(a, b) == distance(b, a)
        equal = a.discrete == b.discrete and a.continuous == b.continuous
        assert (distance(a, b) == 0.0) == equal
        assert distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12
        assert distance(a, b) >= 0.0
    assert time.time() - started < 1.0


def test_metrics_boundary_and_brute_force_recounts():
    """Precision boundary 0.75 is not misclassified; IoU and average accuracy match independent recounts to 1e-12 on 1000 cases."""
    gts = [("car", (i * 100.0, 0.0, i * 100.0 + 50, 40.0)) for i in range(3)]
    preds = [Detection("car", (i * 100.0 + 1, 0.5, i * 100.0 + 51, 40.5), 0.9)
             for i in range(3)]
    preds.append(Detection("car", (900.0, 900.0, 940.0, 940.0), 0.8))
    boundary = match(preds, gts)
    assert boundary.tp == 3 and boundary.fp == 1
    assert boundary.precision == 0.75
    assert boundary.misclassified is False

    from shapely.geometry import box as shapely_box

    rng = np.random.default_rng(20240502)
    for _ in range(1000):
        x0, y0 = rng.uniform(0, 50, 2)
        b1 = (x0, y0, x0 + rng.uniform(1, 40), y0 + rng.uniform(1, 40))
        x0, y0 = rng.uniform(0, 50, 2)
        b2 = (x0, y0, x0 + rng.uniform(1, 40), y0 + rng.uniform(1, 40))
        g1, g2 = shapely_box(*b1), shapely_box(*b2)
        union_area = g1.union(g2).area
        expected = g1.intersection(g2).area / union_area if union_area else 0.0
        assert abs(iou(b1, b2) - expected) <= 1e-12

    results = []
    for _ in range(1000):
        results.append(EvalResult.from_counts(int(rng.integers(0, 6)),
                                              int(rng.integers(0, 6)),
                                              int(rng.integers(0, 6))))
    ap, ar = average_accuracy(results)
    p_sum = sum(r.tp / (r.tp + r.fp) if r.tp + r.fp else 1.0 for r in results)
    r_sum = sum(r.tp / (r.tp + r.fn) if r.tp + r.fn else 1.0 for r in results)
    assert abs(ap - p_sum / 1000) <= 1e-12
    assert abs(ar - r_sum / 1000) <= 1e-12


def test_halton_discrepancy_beats_uniform():
    """Halton grid-box star discrepancy on dims (5,6) at n=1024 is below the mean of 20 seeded uniform runs (< 10 s)."""
    started = time.time()
    layout = default_layout(5, 6)
    points = np.array([sample_halton(layout, i).continuous[:2]
                       for i in range(1, 1025)])
    halton_d = star_discrepancy_grid(points)
    uniform_ds = [star_discrepancy_grid(np.random.default_rng(4000 + s).random((1024, 2)))
                  for s in range(20)]
    assert halton_d < float(np.mean(uniform_ds))
    assert time.time() - started < 10.0


def test_ce_convergence_on_analytic_objective():
    """Cross-entropy sampler (N=100, rho=0.1, alpha=0.7) piles >= 0.8 of its x1 mass below 0.2 after 15 iterations (< 30 s)."""
    started = time.time()
    layout = default_layout(5, 6)
    hyper = CEHyperParams(batch_size=100, elite_fraction=0.1, smoothing=0.7)
    sampler = CESampler(layout, seed=20240503, hyper=hyper)
    for _ in range(15 * hyper.batch_size):
        m = sampler.next()
        falsified = m.continuous[0] < 0.2
        result = EvalResult.from_counts(tp=0 if falsified else 1, fp=0,
                                        fn=1 if falsified else 0)
        sampler.observe(m, result)
    mass = truncated_gaussian_mass(sampler.params, layout, "x1", 0.0, 0.2)
    assert mass >= 0.8
    assert time.time() - started < 30.0


def ordered_only_table(columns: dict[str, list[float]]):
    layout = default_layout(8, 6)
    schema = FeatureSchema(columns=tuple(
        ColumnSpec(n, "explicit", "ordered", layout.range(n))
        for n in CONTINUOUS_DIM_NAMES))
    table = ErrorTable(schema=schema)
    n = len(next(iter(columns.values())))
    base = {
        "background": 0, "car1_model": 0, "car2_model": None, "car3_model": None,
        "x1": 0.5, "z1": 0.5, "x2": 0.5, "z2": 0.5, "x3": 0.5, "z3": 0.5,
        "brightness": 1.0, "sharpness": 1.0, "contrast": 1.0, "color": 1.0,
    }
    misclassified = EvalResult.from_counts(0, 0, 1)
    for i in range(n):
        values = dict(base)
        values.update({dim: col[i] for dim, col in columns.items()})
        image = type("FakeImage", (), {
            "modification": Modification.from_dict(values),
            "implicit": {}, "path": None})()
        append(table, image, misclassified)
    return table


def test_pca_recovery_and_published_ranking():
    """First-PC cosine similarity >= 0.95 on a planted direction; the x > brightness > contrast > sharpness ranking reproduces (< 5 s)."""
    started = time.time()
    rng = np.random.default_rng(20240504)
    t = rng.normal(size=400)
    planted = {"x1": 0.8, "z1": 0.6}
    cols = {dim: (0.5 + w * 0.09 * t + rng.normal(0, 0.004, 400)).tolist()
            for dim, w in planted.items()}
    table = ordered_only_table(cols)
    loadings = dict(pca_ordered(table))
    v = np.array([loadings[d] for d in planted])
    target = np.array(list(planted.values()))
    cosine = abs(v @ target) / (np.linalg.norm(v) * np.linalg.norm(target))
    assert cosine >= 0.95

    ranking_target = {"x1": 0.77, "brightness": 0.44, "contrast": 0.33,
                      "sharpness": 0.28}
    t = rng.normal(size=500)
    cols = {}
    for dim, w in ranking_target.items():
        center = 0.5 if dim.startswith(("x", "z")) else 1.0
        cols[dim] = (center + w * 0.09 * t + rng.normal(0, 0.003, 500)).tolist()
    ranked = pca_ordered(ordered_only_table(cols))
    assert [name for name, _ in ranked[:4]] == ["x1", "brightness", "contrast",
                                                "sharpness"]
    assert time.time() - started < 5.0


def test_frequent_subset_planted_triple():
    """The planted 13-count (forest, white, rear) triple is top-1 among 500 rows; all returned counts equal brute-force recounts."""
    schema = FeatureSchema(columns=(
        ColumnSpec("environment", "implicit", "unordered",
                   frozenset([f"env{i}" for i in range(41)] + ["forest"])),
        ColumnSpec("car1_color", "implicit", "unordered",
                   frozenset([f"col{i}" for i in range(43)] + ["white"])),
        ColumnSpec("car1_orientation", "implicit", "unordered",
                   frozenset([f"ori{i}" for i in range(47)] + ["rear"])),
        ColumnSpec("brightness", "explicit", "ordered", (0.5, 1.5)),
    ))
    table = ErrorTable(schema=schema)
    misclassified = EvalResult.from_counts(0, 0, 1)
    base = {
        "background": 0, "car1_model": 0, "car2_model": None, "car3_model": None,
        "x1": 0.5, "z1": 0.5, "x2": 0.5, "z2": 0.5, "x3": 0.5, "z3": 0.5,
        "brightness": 1.0, "sharpness": 1.0, "contrast": 1.0, "color": 1.0,
    }

    def add(implicit):
        image = type("FakeImage", (), {
            "modification": Modification.from_dict(base),
            "implicit": implicit, "path": None})()
        append(table, image, misclassified)

    for _ in range(13):
        add({"environment": "forest", "car1_color": "white",
             "car1_orientation": "rear"})
    for i in range(487):
        add({"environment": f"env{i % 41}", "car1_color": f"col{i % 43}",
             "car1_orientation": f"ori{i % 47}"})

    top = frequent_unordered(table, max_k=3, top_n=10)
    combo, count = top[0]
    assert count == 13
    assert combo == {"environment": "forest", "car1_color": "white",
                     "car1_orientation": "rear"}

    names = table.schema.unordered_names()
    for combo, count in top:
        recount = 0
        for row in table.rows:
            if all(table.value(row, k) == v for k, v in combo.items()):
                recount += 1
        assert recount == count


@pytest.fixture(scope="module")
def loop_assets(tmp_path_factory):
    root = tmp_path_factory.mktemp("loop")
    lib = gen_test_assets(root / "lib", n_backgrounds=5, n_cars=6, size=64)
    return root, lib


def test_feedback_guided_harvest_doubles_uniform(loop_assets):
    """Error-table-guided sampling harvests >= 2x the counterexamples of uniform sampling on an identical 10k budget and seed (< 5 min)."""
    started = time.time()
    root, lib = loop_assets
    rules = (
        BlindSpotRule(ordered={"brightness": (0.0, 0.7)},
                      unordered={"environment": frozenset({"forest"})}),
        BlindSpotRule(ordered={"brightness": (0.0, 0.65)},
                      unordered={"car1_color": frozenset({"white"})}),
    )
    detector_model = SurrogateModel(rules=rules, lib=lib)
    seed = 20250809
    budget = 10_000

    uniform_cfg = LoopConfig(
        library_dir=str(lib.root), model="unused", out_dir=str(root / "uniform"),
        target_size=budget, budget=budget, save_images=False,
        sampler=SamplerConfig(kind="uniform", seed=seed))
    uniform = harvest(uniform_cfg, detector=SurrogateDetector(detector_model),
                      lib=lib, tag="uniform")

    feedback = derive_feedback_from_harvest(uniform, lib, max_k=2, top_n=2)
    guided_cfg = LoopConfig(
        library_dir=str(lib.root), model="unused", out_dir=str(root / "guided"),
        target_size=budget, budget=budget, save_images=False,
        sampler=SamplerConfig(kind="feedback", seed=seed))
    guided = harvest(guided_cfg, detector=SurrogateDetector(detector_model),
                     lib=lib, feedback=feedback, tag="guided")

    assert uniform.iterations == guided.iterations == budget
    assert guided.counterexamples >= 2 * uniform.counterexamples
    assert time.time() - started < 300.0


def test_augmentation_cycle_trend(loop_assets, tmp_path):
    """Two surrogate cycles at ratio 0.17: recall on the held-out counterexample set strictly improves after retraining and accuracy on T degrades < 0.02 (< 10 min)."""
    started = time.time()
    root, _ = loop_assets
    lib = gen_test_assets(tmp_path / "lib4", n_backgrounds=5, n_cars=4, size=64)
    rules_path = tmp_path / "rules.json"
    save_surrogate(SurrogateModel(
        rules=(BlindSpotRule(ordered={"brightness": (0.0, 0.7)},
                             unordered={"environment": frozenset({"forest"})}),),
        coverage_radius=3.0, coverage_count=2), rules_path)

    config = LoopConfig(
        library_dir=str(lib.root), model=f"surrogate:{rules_path}",
        out_dir=str(tmp_path / "cycles"), target_size=30, budget=4000,
        trainset_size=60, testset_size=30, ratios=(0.17,), save_images=False,
        seed=7, sampler=SamplerConfig(kind="uniform", seed=13))
    report = run_cycles(config, 2, lib=lib)

    assert len(report.cycles) == 2
    cycle1 = report.cycles[0]
    _, recall_before = cycle1["pre_retrain_on_ctest"]
    _, recall_after = cycle1["matrix"][cycle1["best"]]["C_T[1]"]
    assert recall_after > recall_before

    baseline_ap, baseline_ar = report.baseline["T"]
    for cycle in report.cycles:
        ap, ar = cycle["matrix"][cycle["best"]]["T"]
        assert ap >= baseline_ap - 0.02
        assert ar >= baseline_ar - 0.02
    assert time.time() - started < 600.0


def test_diversity_audit(loop_assets):
    """Every harvest with min_distance 0.5 passes an exhaustive pairwise distance audit."""
    root, lib = loop_assets
    rules = (BlindSpotRule(ordered={"brightness": (0.0, 0.7)},
                           unordered={"environment": frozenset({"forest"})}),)
    config = LoopConfig(
        library_dir=str(lib.root), model="unused", out_dir=str(root / "diverse"),
        target_size=40, budget=5000, save_images=False, min_distance=0.5,
        sampler=SamplerConfig(kind="uniform", seed=99))
    result = harvest(config, detector=SurrogateDetector(SurrogateModel(rules=rules, lib=lib)),
                     lib=lib, tag="diverse")
    mods = [img.modification for img in result.augmentation]
    assert len(mods) >= 2
    for i in range(len(mods)):
        for j in range(i + 1, len(mods)):
            assert distance(mods[i], mods[j]) >= 0.5


def test_crash_safety_mid_harvest(tmp_path):
    """Killing a harvest mid-run leaves a parseable report prefix and a loadable error table."""
    lib = gen_test_assets(tmp_path / "lib", n_backgrounds=5, n_cars=4, size=64)
    rules_path = tmp_path / "rules.json"
    save_surrogate(SurrogateModel(
        rules=(BlindSpotRule(ordered={"brightness": (0.0, 0.9)},),)), rules_path)
    out_dir = tmp_path / "out"
    config = {
        "library_dir": str(lib.root), "model": f"surrogate:{rules_path}",
        "out_dir": str(out_dir), "target_size": 1_000_000, "budget": 1_000_000,
        "save_images": False, "sampler": {"kind": "uniform", "seed": 3},
    }
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps(config))

    proc = subprocess.Popen(
        [sys.executable, "-m", "cegaug.cli", "harvest", "--config", str(config_path)],
        stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
    table_path = out_dir / "harvest_table.csv"
    deadline = time.time() + 60
    try:
        while time.time() < deadline:
            if table_path.exists() and len(table_path.read_text().splitlines()) >= 5:
                break
            time.sleep(0.05)
        else:
            pytest.fail("harvest produced no rows within 60 s")
    finally:
        proc.send_signal(signal.SIGKILL)
        proc.wait()

    log_lines = (out_dir / "harvest_log.jsonl").read_text().splitlines()
    assert len(log_lines) >= 3
    parsed = 0
    for i, line in enumerate(log_lines):
        try:
            json.loads(line)
            parsed += 1
        except json.JSONDecodeError:
            assert i == len(log_lines) - 1, "only the final line may be torn"
    assert parsed >= len(log_lines) - 1

    table = load_table_csv(table_path)
    assert len(table.rows) >= 3


def test_annotator_golden_fixtures():
    """[SECONDARY] the 5 golden annotation exports validate through the primary, and place() matches the shared fixture within 0.5 px."""
    from click.testing import CliRunner

    from cegaug.cli import main

    goldens = sorted((FIXTURES / "annotations").glob("golden_*.json"))
    assert len(goldens) == 5
    runner = CliRunner()
    for golden in goldens:
        result = runner.invoke(main, ["annotate", "validate", str(golden)])
        assert result.exit_code == 0, result.output
        assert json.loads(result.output)["ok"] is True

    fixture = json.loads((FIXTURES / "place_fixture.json").read_text())
    from cegaug.assets import Trapezoid
    trapezoid = Trapezoid.from_json(fixture["trapezoid"], fixture["scale_near"],
                                    fixture["scale_far"])
    for probe in fixture["probes"]:
        anchor, scale = place(trapezoid, probe["u_x"], probe["u_z"])
        assert abs(anchor[0] - probe["anchor"][0]) <= 0.5
        assert abs(anchor[1] - probe["anchor"][1]) <= 0.5
        assert abs(scale - probe["scale"]) <= 1e-9
