"""Candidate sampling over the modification space.

Four strategies: plain uniform draws, the Halton low-discrepancy sequence
(one coprime prime base per dimension), the cross-entropy method (iteratively
refit per-dim Gaussians/categoricals to the most falsifying samples), and
feedback-biased sampling driven by error-table analysis. A diversity filter
can gate any of them so accepted points stay pairwise far apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errortable import FeedbackError, FeedbackSpec
from .metrics import EvalResult
from .modspace import (
    ABSENT,
    CONTINUOUS_DIM_NAMES,
    DISCRETE_DIM_NAMES,
    OPTIONAL_CAR_SLOTS,
    Modification,
    SpaceLayout,
    denormalize_from_unit,
    distance,
)

# One prime base per dimension, discrete dims first.
HALTON_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43)


def radical_inverse(index: int, base: int,
                    permutation: Optional[Sequence[int]] = None) -> float:
    """Reflect the base-b digits of ``index`` across the radix point.

    An optional digit permutation (with 0 fixed, so trailing zeros stay
    silent) scrambles the sequence.
    """
    result = 0.0
    f = 1.0
    while index > 0:
        f /= base
        index, digit = divmod(index, base)
        result += f * (permutation[digit] if permutation is not None else digit)
    return result


def _scramble_permutations(seed: int) -> list[list[int]]:
    rng = np.random.default_rng(seed)
    perms = []
    for base in HALTON_BASES:
        perm = [0] + list(rng.permutation(np.arange(1, base)))
        perms.append([int(v) for v in perm])
    return perms


def sample_halton(layout: SpaceLayout, index: int,
                  scramble_seed: Optional[int] = None) -> Modification:
    """The index-th Halton point, mapped into the modification space.

    Pure in (index, scramble_seed); index 0 (the origin) is excluded.
    Scrambling is off by default so sequences stay reproducible across
    configurations that don't ask for it.
    """
    if index < 1:
        raise ValueError("halton index starts at 1")
    perms = _scramble_permutations(scramble_seed) if scramble_seed is not None else None
    unit = tuple(radical_inverse(index, b, perms[k] if perms else None)
                 for k, b in enumerate(HALTON_BASES))
    return denormalize_from_unit(unit, layout)


def sample_uniform(layout: SpaceLayout, rng: np.random.Generator) -> Modification:
    """Uniform over categories and ranges; optional car slots draw ABSENT
    with probability 1/(cardinality+1)."""
    discrete = []
    for name in DISCRETE_DIM_NAMES:
        card = layout.cardinality(name)
        if name in OPTIONAL_CAR_SLOTS:
            k = int(rng.integers(0, card + 1))
            discrete.append(ABSENT if k == card else k)
        else:
            discrete.append(int(rng.integers(0, card)))
    continuous = tuple(float(rng.uniform(lo, hi))
                       for lo, hi in (layout.range(n) for n in CONTINUOUS_DIM_NAMES))
    return Modification(discrete=tuple(discrete), continuous=continuous)


# ---------------------------------------------------------------------------
# Cross-entropy method.

@dataclass(frozen=True)
class CEHyperParams:
    batch_size: int = 100
    elite_fraction: float = 0.1
    smoothing: float = 0.7  # weight of the freshly fitted parameters
    sigma_min_frac: float = 0.01  # stddev floor as a fraction of range width


@dataclass(frozen=True)
class CEParams:
    """Per-dim sampling distribution: Gaussians for continuous dims,
    categorical weights for discrete dims (ABSENT is the last category of
    the optional car slots)."""

    means: tuple[float, ...]
    stds: tuple[float, ...]
    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if any(s <= 0 for s in self.stds):
            raise ValueError("stddevs must stay positive")
        for name, w in zip(DISCRETE_DIM_NAMES, self.weights):
            if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"{name}: categorical weights must be a distribution")


def ce_init(layout: SpaceLayout) -> CEParams:
    """Means at range midpoints, stddev a quarter range, uniform categoricals."""
    means, stds = [], []
    for name in CONTINUOUS_DIM_NAMES:
        lo, hi = layout.range(name)
        means.append((lo + hi) / 2)
        stds.append((hi - lo) / 4)
    weights = tuple(tuple([1.0 / layout.bucket_count(n)] * layout.bucket_count(n))
                    for n in DISCRETE_DIM_NAMES)
    return CEParams(means=tuple(means), stds=tuple(stds), weights=weights)


def ce_sample(params: CEParams, layout: SpaceLayout, rng: np.random.Generator) -> Modification:
    """Truncated-Gaussian continuous dims (rejection into range), categorical
    discrete dims."""
    discrete = []
    for name, w in zip(DISCRETE_DIM_NAMES, params.weights):
        idx = int(rng.choice(len(w), p=np.asarray(w) / np.sum(w)))
        card = layout.cardinality(name)
        discrete.append(ABSENT if (name in OPTIONAL_CAR_SLOTS and idx == card) else idx)
    continuous = []
    for name, mean, std in zip(CONTINUOUS_DIM_NAMES, params.means, params.stds):
        lo, hi = layout.range(name)
        while True:
            v = rng.normal(mean, std)
            if lo <= v <= hi:
                continuous.append(float(v))
                break
    return Modification(discrete=tuple(discrete), continuous=tuple(continuous))


def falsification_objective(result: EvalResult) -> float:
    """Higher is more falsifying: counterexamples score 1, correct images the
    negated quality min(p, r), so barely-correct images rank nearly elite."""
    if result.misclassified:
        return 1.0
    return -min(result.precision, result.recall)


def ce_update(params: CEParams, scored_batch: Sequence[tuple[Modification, float]],
              layout: SpaceLayout, hyper: CEHyperParams = CEHyperParams()) -> CEParams:
    """Refit to the elite fraction and blend with the old parameters."""
    n_elite = math.ceil(hyper.elite_fraction * len(scored_batch))
    if n_elite < 1:
        raise ValueError("empty elite set")
    elites = [m for m, _ in sorted(scored_batch, key=lambda t: -t[1])[:n_elite]]
    alpha = hyper.smoothing

    cont = np.array([m.continuous for m in elites], dtype=np.float64)
    fit_means = cont.mean(axis=0)
    fit_stds = cont.std(axis=0)
    means, stds = [], []
    for i, name in enumerate(CONTINUOUS_DIM_NAMES):
        lo, hi = layout.range(name)
        sigma_min = hyper.sigma_min_frac * (hi - lo)
        means.append(alpha * fit_means[i] + (1 - alpha) * params.means[i])
        stds.append(max(sigma_min, alpha * fit_stds[i] + (1 - alpha) * params.stds[i]))

    weights = []
    for d, name in enumerate(DISCRETE_DIM_NAMES):
        n = layout.bucket_count(name)
        card = layout.cardinality(name)
        freq = np.zeros(n)
        for m in elites:
            value = m.discrete[d]
            freq[card if value is ABSENT else value] += 1
        freq /= len(elites)
        old = np.asarray(params.weights[d])
        weights.append(tuple(float(x) for x in alpha * freq + (1 - alpha) * old))

    return CEParams(means=tuple(means), stds=tuple(stds), weights=tuple(weights))


def truncated_gaussian_mass(params: CEParams, layout: SpaceLayout, dim: str,
                            lo_q: float, hi_q: float) -> float:
    """Probability the truncated Gaussian of ``dim`` lands in [lo_q, hi_q]."""
    i = CONTINUOUS_DIM_NAMES.index(dim)
    lo, hi = layout.range(dim)
    mean, std = params.means[i], params.stds[i]

    def cdf(x):
        return 0.5 * (1 + math.erf((x - mean) / (std * math.sqrt(2))))

    denom = cdf(hi) - cdf(lo)
    if denom <= 0:
        return 0.0
    return (cdf(min(hi_q, hi)) - cdf(max(lo_q, lo))) / denom


# ---------------------------------------------------------------------------
# Diversity constraint.

class DiversityFilter:
    """Accepts a candidate only if it keeps the accepted set pairwise spread."""

    def __init__(self, min_distance: float = 0.5):
        self.min_distance = min_distance
        self.accepted: list[Modification] = []

    def accept(self, m: Modification) -> bool:
        if any(distance(m, other) < self.min_distance for other in self.accepted):
            return False
        self.accepted.append(m)
        return True


# ---------------------------------------------------------------------------
# Feedback-biased sampling.

def _validate_allowed(layout: SpaceLayout, dim: str, allowed: frozenset) -> list:
    card = layout.cardinality(dim)
    for value in allowed:
        if value is ABSENT:
            if dim not in OPTIONAL_CAR_SLOTS:
                raise FeedbackError(f"{dim}: ABSENT not allowed for this slot")
        elif not (isinstance(value, int) and 0 <= value < card):
            raise FeedbackError(f"{dim}: feedback references unknown asset id {value!r}")
    return sorted(allowed, key=lambda v: (v is None, v if v is not None else 0))


def sample_feedback(layout: SpaceLayout, feedback: FeedbackSpec,
                    rng: np.random.Generator) -> Modification:
    """Sample inside the region the error-table analysis points at.

    Discrete dims are pinned to one of the top recurring combinations
    (chosen uniformly among them); unconstrained discrete dims stay uniform.
    Ordered dims get a variation budget by priority rank: the top-ranked dim
    sweeps its full range, the bottom-ranked stays within +-10% of range
    width around the counterexample centroid, ranks in between interpolate.
    """
    if not feedback.unordered_combos and not feedback.ordered_priority:
        raise FeedbackError("degenerate feedback: no constraints and no priorities")

    constraints: dict[str, frozenset] = {}
    if feedback.unordered_combos:
        combo, _ = feedback.unordered_combos[int(rng.integers(0, len(feedback.unordered_combos)))]
        constraints = combo

    discrete = []
    for name in DISCRETE_DIM_NAMES:
        if name in constraints:
            allowed = _validate_allowed(layout, name, constraints[name])
            discrete.append(allowed[int(rng.integers(0, len(allowed)))])
        else:
            card = layout.cardinality(name)
            if name in OPTIONAL_CAR_SLOTS:
                k = int(rng.integers(0, card + 1))
                discrete.append(ABSENT if k == card else k)
            else:
                discrete.append(int(rng.integers(0, card)))

    rank = {name: k for k, (name, _) in enumerate(feedback.ordered_priority)}
    n_ranked = len(feedback.ordered_priority)
    continuous = []
    for name in CONTINUOUS_DIM_NAMES:
        lo, hi = layout.range(name)
        k = rank.get(name)
        if k is None or k == 0:
            continuous.append(float(rng.uniform(lo, hi)))
            continue
        frac = 0.5 - 0.4 * (k / (n_ranked - 1))
        center = feedback.ordered_centroid.get(name, (lo + hi) / 2)
        half = frac * (hi - lo)
        continuous.append(float(rng.uniform(max(lo, center - half), min(hi, center + half))))
    return Modification(discrete=tuple(discrete), continuous=tuple(continuous))


# ---------------------------------------------------------------------------
# Stateful front-ends with a common interface for the harvesting loop.

class Sampler:
    kind = "base"

    def next(self) -> Modification:
        raise NotImplementedError

    def observe(self, m: Modification, result: EvalResult) -> None:
        """Hook for adaptive samplers; default is stateless."""


class UniformSampler(Sampler):
    kind = "uniform"

    def __init__(self, layout: SpaceLayout, seed: int):
        self.layout = layout
        self.rng = np.random.default_rng(seed)

    def next(self) -> Modification:
        return sample_uniform(self.layout, self.rng)


class HaltonSampler(Sampler):
    kind = "halton"

    def __init__(self, layout: SpaceLayout, start_index: int = 1,
                 scramble_seed: Optional[int] = None):
        if start_index < 1:
            raise ValueError("halton index starts at 1")
        self.layout = layout
        self.index = start_index
        self.scramble_seed = scramble_seed

    def next(self) -> Modification:
        m = sample_halton(self.layout, self.index, scramble_seed=self.scramble_seed)
        self.index += 1
        return m


class CESampler(Sampler):
    kind = "cross_entropy"

    def __init__(self, layout: SpaceLayout, seed: int,
                 hyper: CEHyperParams = CEHyperParams()):
        self.layout = layout
        self.rng = np.random.default_rng(seed)
        self.hyper = hyper
        self.params = ce_init(layout)
        self._batch: list[tuple[Modification, float]] = []

    def next(self) -> Modification:
        return ce_sample(self.params, self.layout, self.rng)

    def observe(self, m: Modification, result: EvalResult) -> None:
        self._batch.append((m, falsification_objective(result)))
        if len(self._batch) >= self.hyper.batch_size:
            self.params = ce_update(self.params, self._batch, self.layout, self.hyper)
            self._batch.clear()


class FeedbackSampler(Sampler):
    kind = "feedback"

    def __init__(self, layout: SpaceLayout, feedback: FeedbackSpec, seed: int):
        self.layout = layout
        self.feedback = feedback
        self.rng = np.random.default_rng(seed)

    def next(self) -> Modification:
        return sample_feedback(self.layout, self.feedback, self.rng)


def make_sampler(kind: str, layout: SpaceLayout, seed: int = 0,
                 hyper: Optional[CEHyperParams] = None,
                 feedback: Optional[FeedbackSpec] = None,
                 halton_start: int = 1,
                 halton_scramble_seed: Optional[int] = None) -> Sampler:
    if kind == "uniform":
        return UniformSampler(layout, seed)
    if kind == "halton":
        return HaltonSampler(layout, start_index=halton_start,
                             scramble_seed=halton_scramble_seed)
    if kind in ("ce", "cross_entropy"):
        return CESampler(layout, seed, hyper or CEHyperParams())
    if kind == "feedback":
        if feedback is None:
            raise FeedbackError("feedback sampler needs a FeedbackSpec")
        return FeedbackSampler(layout, feedback, seed)
    raise ValueError(f"unknown sampler kind {kind!r}")
