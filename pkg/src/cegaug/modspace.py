"""Semantic modification space: layout, validity, and the diversity metric.

A scene configuration lives in a 14-dimensional space: 4 discrete dims
(background id and up to three car-model slots) and 10 continuous dims
(per-car road positions and four photometric factors). The distance between
two configurations counts discrete mismatches and adds the Euclidean
distance of the continuous part; it is what the diversity filter and the
surrogate's coverage radius operate on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

# Sentinel for an empty car-model slot. Two empty slots compare equal in the
# distance metric (no visual difference), and empty slots serialize to null.
ABSENT = None

DISCRETE_DIM_NAMES = ("background", "car1_model", "car2_model", "car3_model")
CONTINUOUS_DIM_NAMES = (
    "x1", "z1", "x2", "z2", "x3", "z3",
    "brightness", "sharpness", "contrast", "color",
)
POSITION_DIMS = ("x1", "z1", "x2", "z2", "x3", "z3")
PHOTOMETRIC_DIMS = ("brightness", "sharpness", "contrast", "color")
ALL_DIM_NAMES = DISCRETE_DIM_NAMES + CONTINUOUS_DIM_NAMES

# Car-model slots that may be empty; car1 never is (every scene has a car).
OPTIONAL_CAR_SLOTS = ("car2_model", "car3_model")

DEFAULT_PHOTOMETRIC_RANGE = (0.5, 1.5)


class LayoutError(ValueError):
    """A space layout violates its structural constraints."""


@dataclass(frozen=True)
class SpaceLayout:
    """Dimension names, cardinalities, and ranges of the modification space.

    ``discrete_dims`` maps the four discrete dim names to their cardinality;
    ``continuous_ranges`` maps the ten continuous dim names to closed
    ``[lo, hi]`` intervals.
    """

    discrete_dims: tuple[tuple[str, int], ...]
    continuous_ranges: tuple[tuple[str, tuple[float, float]], ...]

    def __post_init__(self):
        names = tuple(n for n, _ in self.discrete_dims)
        if names != DISCRETE_DIM_NAMES:
            raise LayoutError(f"discrete dims must be {DISCRETE_DIM_NAMES}, got {names}")
        cnames = tuple(n for n, _ in self.continuous_ranges)
        if cnames != CONTINUOUS_DIM_NAMES:
            raise LayoutError(f"continuous dims must be {CONTINUOUS_DIM_NAMES}, got {cnames}")
        for name, card in self.discrete_dims:
            if card < 1:
                raise LayoutError(f"{name}: cardinality must be >= 1, got {card}")
        for name, (lo, hi) in self.continuous_ranges:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise LayoutError(f"{name}: range must be a nonempty bounded interval, got [{lo}, {hi}]")
            if name in POSITION_DIMS and (lo, hi) != (0.0, 1.0):
                raise LayoutError(f"{name}: position dims range over [0, 1], got [{lo}, {hi}]")
            if name in PHOTOMETRIC_DIMS and not (lo < 1.0 < hi):
                raise LayoutError(f"{name}: photometric range must contain 1.0 in its interior, got [{lo}, {hi}]")

    def cardinality(self, name: str) -> int:
        for n, card in self.discrete_dims:
            if n == name:
                return card
        raise KeyError(name)

    def range(self, name: str) -> tuple[float, float]:
        for n, rng in self.continuous_ranges:
            if n == name:
                return rng
        raise KeyError(name)

    def bucket_count(self, name: str) -> int:
        """Unit-cube bucket count for a discrete dim (ABSENT gets an extra bucket)."""
        card = self.cardinality(name)
        return card + 1 if name in OPTIONAL_CAR_SLOTS else card

    def to_json(self) -> dict:
        return {
            "discrete": [{"name": n, "cardinality": c} for n, c in self.discrete_dims],
            "continuous": [{"name": n, "range": list(r)} for n, r in self.continuous_ranges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SpaceLayout":
        return cls(
            discrete_dims=tuple((d["name"], int(d["cardinality"])) for d in obj["discrete"]),
            continuous_ranges=tuple((d["name"], (float(d["range"][0]), float(d["range"][1]))) for d in obj["continuous"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SpaceLayout":
        return cls.from_json(json.loads(Path(path).read_text()))


def default_layout(
    n_backgrounds: int,
    n_car_models: int,
    photometric_range: tuple[float, float] = DEFAULT_PHOTOMETRIC_RANGE,
) -> SpaceLayout:
    """Layout with position dims on [0,1] and a shared photometric interval."""
    ranges = []
    for name in CONTINUOUS_DIM_NAMES:
        ranges.append((name, (0.0, 1.0) if name in POSITION_DIMS else tuple(photometric_range)))
    return SpaceLayout(
        discrete_dims=(
            ("background", n_backgrounds),
            ("car1_model", n_car_models),
            ("car2_model", n_car_models),
            ("car3_model", n_car_models),
        ),
        continuous_ranges=tuple(ranges),
    )


@dataclass(frozen=True)
class Modification:
    """One point of the modification space.

    ``discrete`` holds (background, car1_model, car2_model, car3_model);
    the optional car slots may be ABSENT (None). ``continuous`` holds the ten
    real dims in layout order. Position dims of an ABSENT slot are carried
    along but ignored by rendering.
    """

    discrete: tuple[Optional[int], ...]
    continuous: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "discrete", tuple(self.discrete))
        object.__setattr__(self, "continuous", tuple(float(v) for v in self.continuous))

    def value(self, name: str) -> float | Optional[int]:
        if name in DISCRETE_DIM_NAMES:
            return self.discrete[DISCRETE_DIM_NAMES.index(name)]
        return self.continuous[CONTINUOUS_DIM_NAMES.index(name)]

    @property
    def num_cars(self) -> int:
        return sum(1 for slot in self.discrete[1:] if slot is not ABSENT)

    def car_position(self, slot: int) -> tuple[float, float]:
        """(x, z) of car slot 1..3."""
        return self.continuous[2 * (slot - 1)], self.continuous[2 * (slot - 1) + 1]

    def to_dict(self) -> dict:
        out = dict(zip(DISCRETE_DIM_NAMES, self.discrete))
        out.update(zip(CONTINUOUS_DIM_NAMES, self.continuous))
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "Modification":
        discrete = tuple(None if obj[n] is None else int(obj[n]) for n in DISCRETE_DIM_NAMES)
        continuous = tuple(float(obj[n]) for n in CONTINUOUS_DIM_NAMES)
        return cls(discrete=discrete, continuous=continuous)

    def canonical_json(self) -> str:
        """Stable serialization (fixed dim order, compact) used for hashing."""
        return json.dumps(self.to_dict(), separators=(",", ":"))


@dataclass(frozen=True)
class Verdict:
    """Outcome of a validity check; empty violations means valid."""

    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(m: Modification, layout: SpaceLayout) -> Verdict:
    """Check a modification against the layout's invariants."""
    bad: list[str] = []
    if len(m.discrete) != len(DISCRETE_DIM_NAMES):
        return Verdict((f"expected {len(DISCRETE_DIM_NAMES)} discrete dims, got {len(m.discrete)}",))
    if len(m.continuous) != len(CONTINUOUS_DIM_NAMES):
        return Verdict((f"expected {len(CONTINUOUS_DIM_NAMES)} continuous dims, got {len(m.continuous)}",))

    for name, value in zip(DISCRETE_DIM_NAMES, m.discrete):
        if value is ABSENT:
            if name == "background":
                bad.append("background: must not be absent")
            elif name == "car1_model":
                bad.append("car1_model: at least one car required, slot must not be absent")
            continue
        card = layout.cardinality(name)
        if not (0 <= value < card):
            bad.append(f"{name}: id {value} outside [0, {card})")

    for name, value in zip(CONTINUOUS_DIM_NAMES, m.continuous):
        lo, hi = layout.range(name)
        if not (lo <= value <= hi) or not math.isfinite(value):
            bad.append(f"{name}: value {value} outside [{lo}, {hi}]")

    return Verdict(tuple(bad))


def distance(m1: Modification, m2: Modification) -> float:
    """Diversity metric: discrete mismatch count plus continuous L2 distance.

    Two ABSENT slots count as equal. Position dims of absent slots take part
    in the L2 term like any other continuous dim.
    """
    if len(m1.discrete) != len(m2.discrete) or len(m1.continuous) != len(m2.continuous):
        raise ValueError("modifications come from different layouts")
    mismatches = sum(1 for a, b in zip(m1.discrete, m2.discrete) if a != b)
    sq = sum((a - b) ** 2 for a, b in zip(m1.continuous, m2.continuous))
    return mismatches + math.sqrt(sq)


def normalize_to_unit(m: Modification, layout: SpaceLayout) -> tuple[float, ...]:
    """Map a modification to [0,1]^14.

    Continuous dims map affinely onto [0,1]; discrete dims map to the center
    of their equal-width bucket, with ABSENT occupying the last bucket of the
    optional car slots.
    """
    out: list[float] = []
    for name, value in zip(DISCRETE_DIM_NAMES, m.discrete):
        n = layout.bucket_count(name)
        idx = layout.cardinality(name) if value is ABSENT else value
        out.append((idx + 0.5) / n)
    for name, value in zip(CONTINUOUS_DIM_NAMES, m.continuous):
        lo, hi = layout.range(name)
        out.append((value - lo) / (hi - lo))
    return tuple(out)


def denormalize_from_unit(u: Sequence[float], layout: SpaceLayout) -> Modification:
    """Inverse of normalize_to_unit on bucket centers; total on [0,1]^14."""
    if len(u) != len(ALL_DIM_NAMES):
        raise ValueError(f"expected {len(ALL_DIM_NAMES)} unit coordinates, got {len(u)}")
    discrete: list[Optional[int]] = []
    for name, value in zip(DISCRETE_DIM_NAMES, u):
        n = layout.bucket_count(name)
        idx = min(int(math.floor(value * n)), n - 1)
        card = layout.cardinality(name)
        discrete.append(ABSENT if (name in OPTIONAL_CAR_SLOTS and idx == card) else idx)
    continuous = []
    for name, value in zip(CONTINUOUS_DIM_NAMES, u[len(DISCRETE_DIM_NAMES):]):
        lo, hi = layout.range(name)
        continuous.append(lo + value * (hi - lo))
    return Modification(discrete=tuple(discrete), continuous=tuple(continuous))
