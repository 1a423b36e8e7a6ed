"""Backgrounds and car sprites: sidecar annotations, library loading, and a
procedural test-asset pack.

A library lives in a directory with ``backgrounds/bg_NNN.png`` plus a JSON
sidecar per background (placement trapezoid, scales, environment tag,
dominant color) and ``cars/car_NNN.png`` RGBA sprites with a metadata
sidecar (color, orientation, design class). Ids are dense and follow the
sorted file order. The procedural pack is a desk-scale stand-in; real asset
packs drop into the same structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

Point = tuple[float, float]


class AssetError(ValueError):
    """An asset file or its sidecar violates the library invariants."""


def _segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


@dataclass(frozen=True)
class Trapezoid:
    """Valid car-placement region of a background, with near/far sprite scales.

    The near edge is the bottom base (closest to the camera), the far edge the
    top base. Cars shrink from ``scale_near`` to ``scale_far`` as they move
    toward the far edge.
    """

    near_left: Point
    near_right: Point
    far_left: Point
    far_right: Point
    scale_near: float
    scale_far: float

    def __post_init__(self):
        for violation in self.violations():
            raise AssetError(violation)

    def violations(self) -> list[str]:
        bad = []
        if not (self.scale_near > 0 and self.scale_far > 0):
            bad.append("scales must be positive")
        if not self.scale_far < self.scale_near:
            bad.append(f"scale_far ({self.scale_far}) must be < scale_near ({self.scale_near})")
        if not max(self.far_left[1], self.far_right[1]) < min(self.near_left[1], self.near_right[1]):
            bad.append("far edge must lie strictly above near edge")
        # Corner order NL -> NR -> FR -> FL; opposite sides must not cross.
        if _segments_intersect(self.near_left, self.near_right, self.far_right, self.far_left) or \
           _segments_intersect(self.near_right, self.far_right, self.far_left, self.near_left):
            bad.append("corners form a self-intersecting quadrilateral")
        return bad

    def to_json(self) -> dict:
        return {
            "far_left": list(self.far_left),
            "far_right": list(self.far_right),
            "near_left": list(self.near_left),
            "near_right": list(self.near_right),
        }

    @classmethod
    def from_json(cls, obj: dict, scale_near: float, scale_far: float) -> "Trapezoid":
        def pt(key):
            x, y = obj[key]
            return (float(x), float(y))

        return cls(near_left=pt("near_left"), near_right=pt("near_right"),
                   far_left=pt("far_left"), far_right=pt("far_right"),
                   scale_near=float(scale_near), scale_far=float(scale_far))


@dataclass(frozen=True)
class BackgroundAsset:
    path: Path
    trapezoid: Trapezoid
    environment: str
    dominant_color: str


@dataclass(frozen=True)
class CarAsset:
    path: Path
    color: str
    orientation: str  # "front" or "rear"
    design: str


def write_background_sidecar(path: str | Path, trapezoid: Trapezoid,
                             environment: str, dominant_color: str) -> None:
    obj = {
        "dominant_color": dominant_color,
        "environment": environment,
        "scale_far": trapezoid.scale_far,
        "scale_near": trapezoid.scale_near,
        "trapezoid": trapezoid.to_json(),
    }
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_background_sidecar(path: str | Path) -> tuple[Trapezoid, str, str]:
    obj = json.loads(Path(path).read_text())
    trapezoid = Trapezoid.from_json(obj["trapezoid"], obj["scale_near"], obj["scale_far"])
    return trapezoid, obj.get("environment", "unknown"), obj.get("dominant_color", "unknown")


class AssetLibrary:
    """Immutable, id-indexed collection of backgrounds and car sprites."""

    def __init__(self, root: Path, backgrounds: list[BackgroundAsset], cars: list[CarAsset]):
        self.root = Path(root)
        self.backgrounds = list(backgrounds)
        self.cars = list(cars)
        self._bg_cache: dict[int, np.ndarray] = {}
        self._car_cache: dict[int, np.ndarray] = {}

    @property
    def n_backgrounds(self) -> int:
        return len(self.backgrounds)

    @property
    def n_cars(self) -> int:
        return len(self.cars)

    def background_image(self, bg_id: int) -> np.ndarray:
        if bg_id not in self._bg_cache:
            img = Image.open(self.backgrounds[bg_id].path).convert("RGB")
            self._bg_cache[bg_id] = np.asarray(img, dtype=np.uint8)
        return self._bg_cache[bg_id]

    def car_sprite(self, car_id: int) -> np.ndarray:
        if car_id not in self._car_cache:
            img = Image.open(self.cars[car_id].path).convert("RGBA")
            self._car_cache[car_id] = np.asarray(img, dtype=np.uint8)
        return self._car_cache[car_id]

    def backgrounds_where(self, key: str, value) -> set[int]:
        """Background ids whose metadata field equals ``value``."""
        out = set()
        for i, bg in enumerate(self.backgrounds):
            if getattr(bg, key, None) == value:
                out.add(i)
        return out

    def cars_where(self, key: str, value) -> set[int]:
        out = set()
        for i, car in enumerate(self.cars):
            if getattr(car, key, None) == value:
                out.add(i)
        return out


def load_library(root: str | Path) -> AssetLibrary:
    root = Path(root)
    bg_dir, car_dir = root / "backgrounds", root / "cars"
    if not bg_dir.is_dir() or not car_dir.is_dir():
        raise AssetError(f"{root}: expected backgrounds/ and cars/ subdirectories")

    backgrounds = []
    for png in sorted(bg_dir.glob("*.png")):
        sidecar = png.with_suffix(".json")
        if not sidecar.exists():
            raise AssetError(f"{png}: missing sidecar {sidecar.name}")
        trapezoid, environment, dominant = read_background_sidecar(sidecar)
        backgrounds.append(BackgroundAsset(path=png, trapezoid=trapezoid,
                                           environment=environment, dominant_color=dominant))
    cars = []
    for png in sorted(car_dir.glob("*.png")):
        sidecar = png.with_suffix(".json")
        if not sidecar.exists():
            raise AssetError(f"{png}: missing sidecar {sidecar.name}")
        meta = json.loads(sidecar.read_text())
        alpha = np.asarray(Image.open(png).convert("RGBA"))[:, :, 3]
        if not (alpha > 127).any():
            raise AssetError(f"{png}: sprite has no opaque pixels")
        cars.append(CarAsset(path=png, color=meta["color"],
                             orientation=meta["orientation"], design=meta.get("design", "unknown")))
    if not backgrounds:
        raise AssetError(f"{root}: no backgrounds found")
    if not cars:
        raise AssetError(f"{root}: no car sprites found")
    return AssetLibrary(root=root, backgrounds=backgrounds, cars=cars)


CAR_PALETTE = [
    ("white", (236, 236, 236)),
    ("red", (196, 40, 40)),
    ("blue", (42, 70, 180)),
    ("yellow", (222, 200, 48)),
    ("green", (60, 150, 70)),
    ("black", (28, 28, 32)),
]
ENVIRONMENTS = [
    ("forest", "green", (34, 85, 40), (96, 140, 80)),
    ("desert", "tan", (180, 150, 100), (210, 190, 140)),
    ("freeway", "gray", (120, 130, 145), (150, 150, 150)),
    ("tunnel", "dark", (40, 42, 50), (70, 70, 78)),
    ("city", "slate", (90, 100, 120), (140, 140, 150)),
]
DESIGNS = ["economy", "family", "sports"]

SPRITE_W, SPRITE_H = 28, 20


def _draw_background(size: int, sky: tuple, ground: tuple, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size, 3), dtype=np.float64)
    horizon = int(size * 0.5)
    for y in range(size):
        if y < horizon:
            t = y / max(horizon - 1, 1)
            base = tuple(c * (0.75 + 0.25 * t) for c in sky)
        else:
            t = (y - horizon) / max(size - horizon - 1, 1)
            base = tuple(c * (1.0 - 0.25 * t) for c in ground)
        img[y, :, :] = base
    # Road wedge widening toward the viewer.
    road = np.array((72, 72, 76), dtype=np.float64)
    for y in range(horizon, size):
        t = (y - horizon) / max(size - horizon - 1, 1)
        half = int(size * (0.12 + 0.38 * t) / 2)
        c = size // 2
        img[y, max(0, c - half):min(size, c + half), :] = road * (0.9 + 0.2 * t)
    img += rng.normal(0.0, 2.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _draw_car_sprite(body_rgb: tuple, orientation: str) -> np.ndarray:
    w, h = SPRITE_W, SPRITE_H
    img = np.zeros((h, w, 4), dtype=np.uint8)
    body = np.array(body_rgb, dtype=np.uint8)
    # Body slab spans the full width so the opaque bounding box is the sprite.
    img[8:h - 3, 0:w, :3] = body
    img[8:h - 3, 0:w, 3] = 255
    # Cabin with a window strip; rear views get a high roofline.
    roof_top = 0 if orientation == "rear" else 2
    img[roof_top:8, 5:w - 5, :3] = (body * 0.8).astype(np.uint8)
    img[roof_top:8, 5:w - 5, 3] = 255
    img[roof_top + 2:7, 8:w - 8, :3] = (170, 200, 220) if orientation == "front" else (90, 100, 110)
    # Wheels at the bottom corners keep the bbox full height.
    for cx in (5, w - 6):
        img[h - 6:h, cx - 3:cx + 3, :3] = (15, 15, 15)
        img[h - 6:h, cx - 3:cx + 3, 3] = 255
    # Lights distinguish front (bright) from rear (red).
    light = (255, 240, 180) if orientation == "front" else (200, 30, 30)
    img[9:12, 1:4, :3] = light
    img[9:12, w - 4:w - 1, :3] = light
    return img


def default_trapezoid(size: int) -> Trapezoid:
    return Trapezoid(
        near_left=(round(size * 0.03), round(size * 0.95)),
        near_right=(round(size * 0.97), round(size * 0.95)),
        far_left=(round(size * 0.30), round(size * 0.50)),
        far_right=(round(size * 0.70), round(size * 0.50)),
        scale_near=1.0,
        scale_far=0.62,
    )


def gen_test_assets(dest_dir: str | Path, n_backgrounds: int, n_cars: int,
                    size: int = 64, seed: int = 0) -> AssetLibrary:
    """Write a procedural library of gradient backgrounds and silhouette cars."""
    if n_backgrounds < 1 or n_cars < 1:
        raise ValueError("need at least one background and one car")
    dest = Path(dest_dir)
    (dest / "backgrounds").mkdir(parents=True, exist_ok=True)
    (dest / "cars").mkdir(parents=True, exist_ok=True)

    for i in range(n_backgrounds):
        env, dominant, sky, ground = ENVIRONMENTS[i % len(ENVIRONMENTS)]
        rng = np.random.default_rng(seed * 100_003 + i)
        img = _draw_background(size, sky, ground, rng)
        png = dest / "backgrounds" / f"bg_{i:03d}.png"
        Image.fromarray(img, "RGB").save(png)
        write_background_sidecar(png.with_suffix(".json"), default_trapezoid(size),
                                 environment=env, dominant_color=dominant)

    for i in range(n_cars):
        color, rgb = CAR_PALETTE[i % len(CAR_PALETTE)]
        orientation = "front" if i % 2 == 0 else "rear"
        design = DESIGNS[i % len(DESIGNS)]
        img = _draw_car_sprite(rgb, orientation)
        png = dest / "cars" / f"car_{i:03d}.png"
        Image.fromarray(img, "RGBA").save(png)
        png.with_suffix(".json").write_text(json.dumps(
            {"color": color, "design": design, "orientation": orientation},
            indent=2, sort_keys=True) + "\n")

    return load_library(dest)
