"""Scene rendering: modification -> labeled image.

Backgrounds are drawn first, then car sprites far-to-near so nearer cars
occlude farther ones, then the photometric chain (brightness, contrast,
sharpness, color, in that fixed order) over the whole composite.
Ground-truth boxes come from the scaled sprites' opaque extents and are
recorded before the photometric chain, which preserves geometry. Cars that
end up mostly hidden or tiny raise a rejection so the caller can resample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image
from scipy import ndimage

from .assets import AssetLibrary, Trapezoid
from .metrics import Box
from .modspace import ABSENT, Modification

CATEGORY_CAR = "car"

MIN_BOX_SIDE = 12
MIN_VISIBLE_FRACTION = 0.25
OPAQUE_ALPHA = 127  # alpha above this counts as opaque

PHOTOMETRIC_ORDER = ("brightness", "contrast", "sharpness", "color")
REC601 = np.array([0.299, 0.587, 0.114])


class GeneratorError(ValueError):
    pass


class UnknownAssetError(GeneratorError):
    pass


class InvisibleCarError(GeneratorError):
    """A rendered car fails the visibility checks; caller should resample."""

    def __init__(self, slot: int, reason: str):
        super().__init__(f"car slot {slot}: {reason}")
        self.slot = slot
        self.reason = reason


class AugmentationRejected(GeneratorError):
    """Standard augmentation dropped every box of the image."""


@dataclass
class LabeledImage:
    pixels: np.ndarray  # HxWx3 uint8
    boxes: list[tuple[str, Box]]
    modification: Modification
    implicit: dict
    path: Optional[str] = None

    @property
    def size(self) -> tuple[int, int]:
        h, w = self.pixels.shape[:2]
        return w, h


def place(trapezoid: Trapezoid, u_x: float, u_z: float) -> tuple[tuple[float, float], float]:
    """Bilinear anchor (bottom-center of the sprite) and interpolated scale.

    u_x sweeps left to right, u_z sweeps near (0) to far (1).
    """

    def lerp(a, b, t):
        return (a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)

    near = lerp(trapezoid.near_left, trapezoid.near_right, u_x)
    far = lerp(trapezoid.far_left, trapezoid.far_right, u_x)
    anchor = ((1.0 - u_z) * near[0] + u_z * far[0], (1.0 - u_z) * near[1] + u_z * far[1])
    scale = (1.0 - u_z) * trapezoid.scale_near + u_z * trapezoid.scale_far
    return anchor, scale


def adjust(pixels: np.ndarray, factor: float, kind: str) -> np.ndarray:
    """One photometric transform on an RGB uint8 raster; factor 1 is identity."""
    if kind not in PHOTOMETRIC_ORDER:
        raise ValueError(f"unknown photometric kind {kind!r}")
    if factor == 1.0:
        return pixels.copy()
    img = pixels.astype(np.float64) / 255.0
    if kind == "brightness":
        out = factor * img
    elif kind == "contrast":
        mean_luma = float((img @ REC601).mean())
        out = mean_luma + factor * (img - mean_luma)
    elif kind == "color":
        luma = img @ REC601
        out = luma[..., None] + factor * (img - luma[..., None])
    else:  # sharpness
        blurred = np.stack([ndimage.uniform_filter(img[..., c], size=3, mode="nearest")
                            for c in range(3)], axis=-1)
        out = blurred + factor * (img - blurred)
    return np.clip(np.rint(out * 255.0), 0, 255).astype(np.uint8)


def _scaled_sprite(sprite: np.ndarray, scale: float) -> np.ndarray:
    h, w = sprite.shape[:2]
    tw, th = max(1, round(w * scale)), max(1, round(h * scale))
    img = Image.fromarray(sprite, "RGBA").resize((tw, th), Image.NEAREST)
    return np.asarray(img, dtype=np.uint8)


def concretize(m: Modification, lib: AssetLibrary) -> LabeledImage:
    """Render a modification into pixels plus ground-truth boxes."""
    bg_id = m.discrete[0]
    if bg_id is None or not (0 <= bg_id < lib.n_backgrounds):
        raise UnknownAssetError(f"background id {bg_id} not in library")
    for slot, car_id in enumerate(m.discrete[1:], start=1):
        if car_id is not ABSENT and not (0 <= car_id < lib.n_cars):
            raise UnknownAssetError(f"car{slot} model id {car_id} not in library")

    background = lib.backgrounds[bg_id]
    canvas = lib.background_image(bg_id).copy()
    height, width = canvas.shape[:2]

    cars = []
    for slot, car_id in enumerate(m.discrete[1:], start=1):
        if car_id is ABSENT:
            continue
        u_x, u_z = m.car_position(slot)
        cars.append((slot, car_id, u_x, u_z))
    # Painter's algorithm: farthest (largest u_z) first; slot order breaks ties.
    cars.sort(key=lambda c: (-c[3], c[0]))

    owner = np.full((height, width), -1, dtype=np.int32)
    opaque_totals: dict[int, int] = {}
    boxes: dict[int, Box] = {}

    for slot, car_id, u_x, u_z in cars:
        (ax, ay), scale = place(background.trapezoid, u_x, u_z)
        sprite = _scaled_sprite(lib.car_sprite(car_id), scale)
        sh, sw = sprite.shape[:2]
        x0 = round(ax - sw / 2)
        y0 = round(ay - sh)
        mask = sprite[:, :, 3] > OPAQUE_ALPHA
        opaque_totals[slot] = int(mask.sum())

        # Clip the stamp to the canvas.
        cx0, cy0 = max(0, x0), max(0, y0)
        cx1, cy1 = min(width, x0 + sw), min(height, y0 + sh)
        if cx0 < cx1 and cy0 < cy1:
            sub = mask[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
            region = canvas[cy0:cy1, cx0:cx1]
            region[sub] = sprite[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0, :3][sub]
            owner[cy0:cy1, cx0:cx1][sub] = slot

        ys, xs = np.nonzero(mask)
        if len(xs) == 0:
            raise InvisibleCarError(slot, "sprite scaled away to nothing")
        bx0 = max(0.0, float(x0 + xs.min()))
        by0 = max(0.0, float(y0 + ys.min()))
        bx1 = min(float(width), float(x0 + xs.max() + 1))
        by1 = min(float(height), float(y0 + ys.max() + 1))
        if bx1 - bx0 < MIN_BOX_SIDE or by1 - by0 < MIN_BOX_SIDE:
            raise InvisibleCarError(slot, f"box {bx1 - bx0:.0f}x{by1 - by0:.0f} below {MIN_BOX_SIDE}px minimum")
        boxes[slot] = (bx0, by0, bx1, by1)

    for slot, _, _, _ in cars:
        visible = int((owner == slot).sum())
        if visible < MIN_VISIBLE_FRACTION * opaque_totals[slot]:
            raise InvisibleCarError(slot, f"only {visible}/{opaque_totals[slot]} opaque pixels visible")

    factors = {name: m.value(name) for name in PHOTOMETRIC_ORDER}
    for kind in PHOTOMETRIC_ORDER:
        canvas = adjust(canvas, factors[kind], kind)

    ordered_boxes = [(CATEGORY_CAR, boxes[slot]) for slot in sorted(boxes)]
    return LabeledImage(pixels=canvas, boxes=ordered_boxes, modification=m,
                        implicit=implicit_features(m, lib))


def implicit_features(m: Modification, lib: AssetLibrary) -> dict:
    """Asset-metadata features of a modification, as a rendered scene would
    carry them."""
    background = lib.backgrounds[m.discrete[0]]
    implicit: dict = {
        "environment": background.environment,
        "background_color": background.dominant_color,
        "num_cars": m.num_cars,
    }
    for slot, car_id in enumerate(m.discrete[1:], start=1):
        asset = lib.cars[car_id] if car_id is not ABSENT else None
        implicit[f"car{slot}_color"] = asset.color if asset else None
        implicit[f"car{slot}_orientation"] = asset.orientation if asset else None
        implicit[f"car{slot}_design"] = asset.design if asset else None
    return implicit


def standard_augment(
    img: LabeledImage,
    rng: np.random.Generator,
    crop_range: Optional[tuple[float, float]] = (0.10, 0.20),
    flip_prob: float = 0.6,
    blur_sigma_range: Optional[tuple[float, float]] = (0.0, 3.0),
) -> LabeledImage:
    """Classic label-preserving augmentation: crop, horizontal flip, blur.

    Each side is cropped by an independent 10-20% of its dimension, surviving
    boxes are translated and clipped (dropped below 25% of their area), the
    image flips horizontally with probability 0.6, gets a Gaussian blur with
    sigma drawn from [0, 3], and is rescaled to the original resolution.
    """
    pixels = img.pixels
    height, width = pixels.shape[:2]
    boxes = list(img.boxes)

    if crop_range is not None:
        lo, hi = crop_range
        left = int(rng.uniform(lo, hi) * width)
        right = int(rng.uniform(lo, hi) * width)
        top = int(rng.uniform(lo, hi) * height)
        bottom = int(rng.uniform(lo, hi) * height)
        pixels = pixels[top:height - bottom, left:width - right]
        ch, cw = pixels.shape[:2]
        kept = []
        for category, (x0, y0, x1, y1) in boxes:
            area = (x1 - x0) * (y1 - y0)
            nx0, ny0 = max(0.0, x0 - left), max(0.0, y0 - top)
            nx1, ny1 = min(float(cw), x1 - left), min(float(ch), y1 - top)
            if nx1 <= nx0 or ny1 <= ny0:
                continue
            if (nx1 - nx0) * (ny1 - ny0) < 0.25 * area:
                continue
            kept.append((category, (nx0, ny0, nx1, ny1)))
        boxes = kept
        if not boxes:
            raise AugmentationRejected("crop dropped every box")

    ch, cw = pixels.shape[:2]
    if rng.random() < flip_prob:
        pixels = pixels[:, ::-1]
        boxes = [(c, (cw - x1, y0, cw - x0, y1)) for c, (x0, y0, x1, y1) in boxes]

    if blur_sigma_range is not None:
        sigma = rng.uniform(*blur_sigma_range)
        if sigma > 0:
            pixels = np.stack([ndimage.gaussian_filter(pixels[..., c].astype(np.float64), sigma)
                               for c in range(3)], axis=-1)
            pixels = np.clip(np.rint(pixels), 0, 255).astype(np.uint8)

    if (cw, ch) != (width, height):
        resized = Image.fromarray(np.ascontiguousarray(pixels), "RGB").resize((width, height), Image.BILINEAR)
        pixels = np.asarray(resized, dtype=np.uint8)
        sx, sy = width / cw, height / ch
        boxes = [(c, (x0 * sx, y0 * sy, x1 * sx, y1 * sy)) for c, (x0, y0, x1, y1) in boxes]
    else:
        pixels = np.ascontiguousarray(pixels)

    return LabeledImage(pixels=pixels, boxes=boxes, modification=img.modification,
                        implicit=dict(img.implicit))


def save_image(img: LabeledImage, path: str | Path) -> None:
    Image.fromarray(img.pixels, "RGB").save(path)
    img.path = str(path)


def manifest_record(img: LabeledImage) -> dict:
    return {
        "image_path": img.path,
        "modification": img.modification.to_dict(),
        "boxes": [{"category": c, "box": list(b)} for c, b in img.boxes],
        "implicit": img.implicit,
    }


def record_to_labeled(record: dict, load_pixels: bool = False) -> LabeledImage:
    pixels = None
    if load_pixels:
        pixels = np.asarray(Image.open(record["image_path"]).convert("RGB"), dtype=np.uint8)
    return LabeledImage(
        pixels=pixels,
        boxes=[(b["category"], tuple(b["box"])) for b in record["boxes"]],
        modification=Modification.from_dict(record["modification"]),
        implicit=record["implicit"],
        path=record["image_path"],
    )


def write_manifest(records: Iterable[dict], path: str | Path) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_manifest(path: str | Path) -> list[dict]:
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
