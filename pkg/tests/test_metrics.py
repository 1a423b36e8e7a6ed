import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cegaug.metrics import Detection, EvalResult, average_accuracy, iou, match


def brute_force_iou(b1, b2):
    # Rasterized overlap on a fine grid, independent of the area arithmetic.
    steps = 400
    x_lo = min(b1[0], b2[0]); x_hi = max(b1[2], b2[2])
    y_lo = min(b1[1], b2[1]); y_hi = max(b1[3], b2[3])
    dx = (x_hi - x_lo) / steps
    dy = (y_hi - y_lo) / steps
    inter = union = 0
    for i in range(steps):
        cx = x_lo + (i + 0.5) * dx
        for j in range(steps):
            cy = y_lo + (j + 0.5) * dy
            in1 = b1[0] <= cx <= b1[2] and b1[1] <= cy <= b1[3]
            in2 = b2[0] <= cx <= b2[2] and b2[1] <= cy <= b2[3]
            if in1 and in2:
                inter += 1
            if in1 or in2:
                union += 1
    return inter / union


boxes = st.tuples(
    st.floats(0, 50), st.floats(0, 50),
    st.floats(51, 100), st.floats(51, 100),
)


class TestIou:
    def test_identical(self):
        assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0

    def test_disjoint(self):
        assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0

    def test_known_overlap(self):
        assert iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)

    def test_matches_rasterized_estimate(self):
        rng = random.Random(7)
        for _ in range(5):
            b1 = sorted(rng.uniform(0, 10) for _ in range(2))
            b2 = sorted(rng.uniform(0, 10) for _ in range(2))
            c1 = sorted(rng.uniform(0, 10) for _ in range(2))
            c2 = sorted(rng.uniform(0, 10) for _ in range(2))
            box_a = (b1[0], c1[0], b1[1] + 0.5, c1[1] + 0.5)
            box_b = (b2[0], c2[0], b2[1] + 0.5, c2[1] + 0.5)
            assert iou(box_a, box_b) == pytest.approx(brute_force_iou(box_a, box_b), abs=0.02)

    @given(b1=boxes, b2=boxes)
    def test_symmetric_and_bounded(self, b1, b2):
        v = iou(b1, b2)
        assert v == iou(b2, b1)
        assert 0.0 <= v <= 1.0

    @given(b=boxes, dx=st.floats(-5, 5), dy=st.floats(-5, 5))
    def test_translation_invariant(self, b, dx, dy):
        shifted_pair = tuple(v + (dx if i % 2 == 0 else dy) for i, v in enumerate(b))
        assert iou(b, b) == 1.0
        assert iou(shifted_pair, shifted_pair) == 1.0


class TestMatch:
    def test_boundary_three_tp_one_fp(self):
        gts = [("car", (i * 100.0, 0.0, i * 100.0 + 50, 40.0)) for i in range(3)]
        preds = [Detection("car", (i * 100.0 + 2, 1.0, i * 100.0 + 51, 41.0), 0.9)
                 for i in range(3)]
        preds.append(Detection("car", (500.0, 500.0, 540.0, 540.0), 0.8))
        r = match(preds, gts)
        assert (r.tp, r.fp, r.fn) == (3, 1, 0)
        assert r.precision == 0.75
        assert r.recall == 1.0
        assert r.misclassified is False  # strictly-below-0.75 rule

    def test_vacuous_case(self):
        r = match([], [])
        assert r.precision == 1.0 and r.recall == 1.0
        assert not r.misclassified

    def test_missed_ground_truth(self):
        r = match([], [("car", (0, 0, 10, 10))])
        assert (r.tp, r.fn) == (0, 1)
        assert r.recall == 0.0
        assert r.misclassified

    def test_no_double_assignment(self):
        gt = [("car", (0.0, 0.0, 10.0, 10.0))]
        preds = [Detection("car", (0.0, 0.0, 10.0, 10.0), 0.9),
                 Detection("car", (0.5, 0.5, 10.5, 10.5), 0.8)]
        r = match(preds, gt)
        assert (r.tp, r.fp, r.fn) == (1, 1, 0)

    def test_category_mismatch_never_matches(self):
        r = match([Detection("truck", (0.0, 0.0, 10.0, 10.0), 0.9)],
                  [("car", (0.0, 0.0, 10.0, 10.0))])
        assert (r.tp, r.fp, r.fn) == (0, 1, 1)

    def test_iou_exactly_half_is_not_a_match(self):
        # Overlap 1x2 over union 1x4 gives exactly 0.5; threshold is strict.
        r = match([Detection("car", (0.0, 0.0, 1.0, 3.0), 0.9)],
                  [("car", (0.0, 1.0, 1.0, 4.0))])
        assert r.tp == 0

    def test_count_identities_random(self):
        rng = random.Random(3)
        for _ in range(200):
            gts = [("car", (x, y, x + rng.uniform(1, 20), y + rng.uniform(1, 20)))
                   for x, y in [(rng.uniform(0, 80), rng.uniform(0, 80))
                                for _ in range(rng.randint(0, 4))]]
            preds = [Detection("car", (x, y, x + rng.uniform(1, 20), y + rng.uniform(1, 20)),
                               rng.random())
                     for x, y in [(rng.uniform(0, 80), rng.uniform(0, 80))
                                  for _ in range(rng.randint(0, 4))]]
            r = match(preds, gts)
            assert r.tp + r.fp == len(preds)
            assert r.tp + r.fn == len(gts)
            assert r.tp <= min(len(preds), len(gts))


class TestAverageAccuracy:
    def test_all_perfect(self):
        rs = [EvalResult.from_counts(2, 0, 0)] * 3
        assert average_accuracy(rs) == (1.0, 1.0)

    def test_mean_precision(self):
        rs = [EvalResult.from_counts(1, 0, 0), EvalResult.from_counts(1, 1, 0)]
        ap, ar = average_accuracy(rs)
        assert ap == 0.75
        assert ar == 1.0

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            average_accuracy([])

    def test_against_recount(self):
        rng = random.Random(11)
        results = []
        for _ in range(750):
            tp, fp, fn = rng.randint(0, 5), rng.randint(0, 5), rng.randint(0, 5)
            results.append(EvalResult.from_counts(tp, fp, fn))
        ap, ar = average_accuracy(results)
        # Independent recount with explicit accumulators.
        p_sum = r_sum = 0.0
        for r in results:
            p_sum += r.tp / (r.tp + r.fp) if r.tp + r.fp else 1.0
            r_sum += r.tp / (r.tp + r.fn) if r.tp + r.fn else 1.0
        assert ap == pytest.approx(p_sum / 750, abs=1e-12)
        assert ar == pytest.approx(r_sum / 750, abs=1e-12)
