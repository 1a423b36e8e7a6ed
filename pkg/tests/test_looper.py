import json
import math

import numpy as np
import pytest

from cegaug.assets import gen_test_assets
from cegaug.errortable import load_table_csv
from cegaug.looper import (
    HarvestAborted,
    LoopConfig,
    LoopError,
    SamplerConfig,
    build_ratio_sets,
    evaluate_images,
    harvest,
    run_cycles,
    split,
)
from cegaug.modspace import distance
from cegaug.oracle import BlindSpotRule, OracleConnectionError, SurrogateDetector, SurrogateModel

FOREST_DIM = BlindSpotRule(ordered={"brightness": (0.0, 0.7)},
                           unordered={"environment": frozenset({"forest"})})


@pytest.fixture(scope="module")
def lib(tmp_path_factory):
    return gen_test_assets(tmp_path_factory.mktemp("assets"), n_backgrounds=5, n_cars=4)


def make_config(tmp_path, **overrides):
    base = dict(
        library_dir="unused",
        model="surrogate:unused.json",
        out_dir=str(tmp_path / "out"),
        target_size=10,
        budget=200,
        sampler=SamplerConfig(kind="uniform", seed=5),
        save_images=False,
        trainset_size=10,
        testset_size=6,
        ratios=(0.5,),
    )
    base.update(overrides)
    return LoopConfig(**base)


class TestHarvest:
    def test_unfalsifiable_model_yields_empty_set(self, lib, tmp_path):
        config = make_config(tmp_path, target_size=50, budget=50)
        detector = SurrogateDetector(SurrogateModel(rules=(), lib=lib))
        result = harvest(config, detector=detector, lib=lib)
        assert result.counterexamples == 0
        assert result.iterations == 50
        assert result.stopped_because == "budget"
        assert len(result.table) == 0

    def test_hit_rate_matches_region_probability(self, lib, tmp_path):
        config = make_config(tmp_path, target_size=2000, budget=2000)
        detector = SurrogateDetector(SurrogateModel(rules=(FOREST_DIM,), lib=lib))
        result = harvest(config, detector=detector, lib=lib)
        # P(forest background) * P(brightness < 0.7) = (1/5) * 0.2
        p = 0.04
        expected = config.budget * p
        sigma = math.sqrt(config.budget * p * (1 - p))
        assert abs(result.counterexamples - expected) < 3 * sigma

    def test_diversity_filter_audit(self, lib, tmp_path):
        config = make_config(tmp_path, target_size=30, budget=2000, min_distance=0.5)
        detector = SurrogateDetector(SurrogateModel(rules=(FOREST_DIM,), lib=lib))
        result = harvest(config, detector=detector, lib=lib)
        mods = [img.modification for img in result.augmentation]
        assert len(mods) > 1
        for i in range(len(mods)):
            for j in range(i + 1, len(mods)):
                assert distance(mods[i], mods[j]) >= 0.5

    def test_counterexamples_really_misclassified(self, lib, tmp_path):
        config = make_config(tmp_path, target_size=10, budget=500)
        model = SurrogateModel(rules=(FOREST_DIM,), lib=lib)
        detector = SurrogateDetector(model)
        result = harvest(config, detector=detector, lib=lib)
        from cegaug.metrics import match
        from cegaug.oracle import predict_surrogate
        for img in result.augmentation:
            again = match(predict_surrogate(model, img), img.boxes)
            assert again.misclassified

    def test_log_and_table_stream_to_disk(self, lib, tmp_path):
        config = make_config(tmp_path, target_size=5, budget=300)
        detector = SurrogateDetector(SurrogateModel(rules=(FOREST_DIM,), lib=lib))
        result = harvest(config, detector=detector, lib=lib)
        lines = [json.loads(l) for l in open(result.log_path) if l.strip()]
        assert len(lines) == result.iterations
        assert sum(1 for l in lines if l["accepted"]) == result.counterexamples
        loaded = load_table_csv(result.table_path)
        assert len(loaded) == result.counterexamples

    def test_detector_failure_aborts_with_artifacts(self, lib, tmp_path):
        class Broken:
            name = "broken"
            def predict(self, image):
                raise OracleConnectionError("nope")
        config = make_config(tmp_path, retry_limit=1)
        with pytest.raises(HarvestAborted):
            harvest(config, detector=Broken(), lib=lib)
        out = tmp_path / "out"
        assert (out / "harvest_log.jsonl").exists()
        assert (out / "harvest_table.csv").exists()

    def test_images_saved_when_asked(self, lib, tmp_path):
        config = make_config(tmp_path, target_size=3, budget=300, save_images=True)
        detector = SurrogateDetector(SurrogateModel(rules=(FOREST_DIM,), lib=lib))
        result = harvest(config, detector=detector, lib=lib)
        for img in result.augmentation:
            assert img.path and img.path.endswith(".png")


class TestSplit:
    def test_halves(self):
        rng = np.random.default_rng(0)
        left, right = split(list(range(10)), 0.5, rng)
        assert len(left) == 5 and len(right) == 5

    def test_partition(self):
        rng = np.random.default_rng(1)
        items = list(range(23))
        left, right = split(items, 0.5, rng)
        assert sorted(left + right) == items
        assert not set(left) & set(right)

    def test_seeded_determinism(self):
        a = split(list(range(20)), 0.5, np.random.default_rng(7))
        b = split(list(range(20)), 0.5, np.random.default_rng(7))
        assert a == b

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            split([], 0.5, np.random.default_rng(0))


class TestBuildRatioSets:
    def test_published_arithmetic(self):
        trainset = [f"x{i}" for i in range(1500)]
        cxs = [f"c{i}" for i in range(750)]
        sets = build_ratio_sets(trainset, cxs, [0.08])
        assert len(sets[0][1]) == 1620

    def test_empty_ratio_list(self):
        assert build_ratio_sets([1, 2], [3], []) == []

    def test_nested_prefix_manifests(self):
        trainset = list(range(100))
        cxs = [f"c{i}" for i in range(60)]
        sets = build_ratio_sets(trainset, cxs, [0.1, 0.3, 0.5])
        small, medium, large = (s for _, s in sets)
        assert set(map(str, small)) <= set(map(str, medium)) <= set(map(str, large))

    def test_shortfall_named(self):
        with pytest.raises(LoopError, match="short by"):
            build_ratio_sets(list(range(100)), ["c"] * 10, [0.5])

    def test_base_size_override(self):
        sets = build_ratio_sets(list(range(120)), ["c"] * 50, [0.1], base_size=100)
        assert len(sets[0][1]) == 130


class TestRunCycles:
    def surrogate_config(self, lib, tmp_path, **overrides):
        from cegaug.oracle import save_surrogate
        rules_path = tmp_path / "rules.json"
        save_surrogate(SurrogateModel(rules=(FOREST_DIM,), coverage_radius=4.0,
                                      coverage_count=2), rules_path)
        return make_config(tmp_path, model=f"surrogate:{rules_path}",
                           library_dir=str(lib.root), **overrides)

    def test_zero_cycles_reports_baseline_only(self, lib, tmp_path):
        config = self.surrogate_config(lib, tmp_path)
        report = run_cycles(config, n_cycles=0, lib=lib)
        assert report.cycles == []
        assert "T" in report.baseline
        assert (tmp_path / "out" / "report.json").exists()

    def test_single_cycle_structure(self, lib, tmp_path):
        config = self.surrogate_config(lib, tmp_path, target_size=16, budget=1500,
                                       trainset_size=12, testset_size=8,
                                       ratios=(0.25, 0.5))
        report = run_cycles(config, n_cycles=1, lib=lib)
        assert len(report.cycles) == 1
        cycle = report.cycles[0]
        assert set(cycle["matrix"].keys()) == {"r0.25", "r0.5"}
        for row in cycle["matrix"].values():
            assert "T" in row and "C_T[1]" in row
        assert cycle["best"] in cycle["matrix"]
        assert (tmp_path / "out" / "trainset.jsonl").exists()
        assert (tmp_path / "out" / "cycle1_train_r0.5.jsonl").exists()

    def test_retraining_improves_newest_testset(self, lib, tmp_path):
        config = self.surrogate_config(lib, tmp_path, target_size=16, budget=1500,
                                       trainset_size=12, testset_size=8,
                                       ratios=(0.5,))
        report = run_cycles(config, n_cycles=1, lib=lib)
        cycle = report.cycles[0]
        _, ar = cycle["matrix"]["r0.5"]["C_T[1]"]
        # Counterexamples of the pre-retrain model score recall 0 on their own
        # test half; any positive recall demonstrates learning.
        assert ar > 0.0


class TestLoopConfigFile:
    def test_json_round_trip(self, tmp_path):
        cfg = {
            "library_dir": "lib", "model": "surrogate:r.json", "out_dir": "out",
            "budget": 500, "target_size": 20,
            "sampler": {"kind": "halton", "halton_start": 3},
            "ratios": [0.08, 0.17],
        }
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        config = LoopConfig.from_file(p)
        assert config.sampler.kind == "halton"
        assert config.ratios == (0.08, 0.17)

    def test_toml(self, tmp_path):
        p = tmp_path / "cfg.toml"
        p.write_text(
            'library_dir = "lib"\nmodel = "surrogate:r.json"\nout_dir = "out"\n'
            'budget = 500\ntarget_size = 20\n\n[sampler]\nkind = "ce"\nseed = 9\n'
            '\n[sampler.ce]\nbatch_size = 50\n')
        config = LoopConfig.from_file(p)
        assert config.sampler.kind == "ce"
        assert config.sampler.ce.batch_size == 50

    def test_invariants(self, tmp_path):
        with pytest.raises(ValueError):
            make_config(tmp_path, budget=5, target_size=10)
        with pytest.raises(ValueError):
            make_config(tmp_path, ratios=(0.0,))
        with pytest.raises(ValueError):
            make_config(tmp_path, split_fraction=1.0)
