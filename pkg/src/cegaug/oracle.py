"""Detector oracles.

Two ways to answer "what does the model see in this image": a wire client
that ships the image to an external detector over HTTP or a child process's
stdio (newline-delimited JSON), and a deterministic in-process surrogate.

The surrogate detects every ground-truth car with a slightly jittered box
unless a planted blind-spot rule matches the scene and too few "training"
memory points cover that region; then the boxes are dropped. Retraining just
extends the memory, so coverage only grows and fixed mistakes stay fixed.
All surrogate randomness is a 64-bit FNV-1a hash of the modification's
canonical serialization, so behavior is identical across runs and platforms.
"""

from __future__ import annotations

import base64
import json
import shlex
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence

import httpx

from .assets import AssetLibrary
from .generator import LabeledImage, implicit_features
from .metrics import Box, Detection
from .modspace import Modification, distance

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def _hash_units(tag: str, count: int) -> list[float]:
    """``count`` reproducible floats in [0, 1) derived from FNV-1a of tag."""
    out = []
    h = fnv1a64(tag.encode())
    for _ in range(count):
        out.append((h & 0xFFFFFFFF) / 2**32)
        h = fnv1a64(h.to_bytes(8, "little"))
    return out


class OracleError(Exception):
    pass


class OracleConnectionError(OracleError):
    pass


class OracleTimeoutError(OracleError):
    pass


class OracleProtocolError(OracleError):
    def __init__(self, message: str, payload=None):
        super().__init__(message if payload is None else f"{message}: {payload!r}")
        self.payload = payload


class Detector(Protocol):
    name: str

    def predict(self, image: LabeledImage) -> list[Detection]: ...


# ---------------------------------------------------------------------------
# Deterministic surrogate.

@dataclass(frozen=True)
class BlindSpotRule:
    """Conjunction of interval constraints on ordered features and value-set
    constraints on unordered ones."""

    ordered: dict[str, tuple[float, float]] = field(default_factory=dict)
    unordered: dict[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ordered and not self.unordered:
            raise ValueError("a blind-spot rule needs at least one constraint")
        object.__setattr__(self, "unordered",
                           {k: frozenset(v) for k, v in self.unordered.items()})

    def matches(self, features: dict) -> bool:
        for name, (lo, hi) in self.ordered.items():
            value = features.get(name)
            if value is None or not (lo <= value <= hi):
                return False
        for name, allowed in self.unordered.items():
            if name not in features or features[name] not in allowed:
                return False
        return True

    def to_json(self) -> dict:
        return {"ordered": {k: list(v) for k, v in self.ordered.items()},
                "unordered": {k: sorted(v, key=lambda x: (x is None, str(x)))
                              for k, v in self.unordered.items()}}

    @classmethod
    def from_json(cls, obj: dict) -> "BlindSpotRule":
        return cls(ordered={k: (float(v[0]), float(v[1]))
                            for k, v in obj.get("ordered", {}).items()},
                   unordered={k: frozenset(v) for k, v in obj.get("unordered", {}).items()})


@dataclass(frozen=True)
class SurrogateModel:
    rules: tuple[BlindSpotRule, ...]
    memory: tuple[Modification, ...] = ()
    coverage_radius: float = 0.75
    coverage_count: int = 5
    clutter_tags: frozenset = frozenset()
    jitter_frac: float = 0.08  # per-axis shift <= 8% of box size keeps IoU > 0.7
    lib: Optional[AssetLibrary] = None  # resolves implicit features of memory points

    def __post_init__(self):
        if self.coverage_radius <= 0:
            raise ValueError("coverage radius must be positive")
        if self.coverage_count < 1:
            raise ValueError("coverage count must be >= 1")

    def features_of(self, m: Modification) -> dict:
        features = m.to_dict()
        if self.lib is not None:
            features.update(implicit_features(m, self.lib))
        return features


def _coverage(model: SurrogateModel, m: Modification, rule: Optional[BlindSpotRule]) -> int:
    """Memory points within the coverage radius that hit the same region."""
    count = 0
    for trained in model.memory:
        if distance(m, trained) > model.coverage_radius:
            continue
        if rule is None or rule.matches(model.features_of(trained)):
            count += 1
    return count


def predict_surrogate(model: SurrogateModel, image: LabeledImage) -> list[Detection]:
    features = {**image.modification.to_dict(), **image.implicit}
    canonical = image.modification.canonical_json()

    matched = next((r for r in model.rules if r.matches(features)), None)
    blind = matched is not None and _coverage(model, image.modification, matched) < model.coverage_count

    detections: list[Detection] = []
    if not blind:
        for idx, (category, (x0, y0, x1, y1)) in enumerate(image.boxes):
            u1, u2, u3 = _hash_units(f"{canonical}|box{idx}", 3)
            w, h = x1 - x0, y1 - y0
            dx = (2 * u1 - 1) * model.jitter_frac * w
            dy = (2 * u2 - 1) * model.jitter_frac * h
            score = 0.8 + 0.199 * u3
            detections.append(Detection(category=category,
                                        box=(x0 + dx, y0 + dy, x1 + dx, y1 + dy),
                                        score=score))

    env = image.implicit.get("environment")
    if env in model.clutter_tags and _coverage(model, image.modification, None) < model.coverage_count:
        spurious = _place_spurious_box(canonical, image)
        if spurious is not None:
            u = _hash_units(f"{canonical}|spurscore", 1)[0]
            detections.append(Detection(category="car", box=spurious, score=0.5 + 0.29 * u))
    return detections


def _place_spurious_box(canonical: str, image: LabeledImage) -> Optional[Box]:
    height, width = image.pixels.shape[:2] if image.pixels is not None else (64, 64)
    side = 14.0
    if width <= side or height <= side:
        return None
    from .metrics import iou
    for attempt in range(64):
        u1, u2 = _hash_units(f"{canonical}|spur{attempt}", 2)
        x0 = u1 * (width - side)
        y0 = u2 * (height - side)
        candidate = (x0, y0, x0 + side, y0 + side)
        if all(iou(candidate, box) == 0.0 for _, box in image.boxes):
            return candidate
    return None


def retrain_surrogate(model: SurrogateModel,
                      augmentation: Sequence[Modification]) -> SurrogateModel:
    """Extend the memory; behavior far from the new points is untouched."""
    return replace(model, memory=model.memory + tuple(augmentation))


def load_surrogate(path: str | Path, lib: Optional[AssetLibrary] = None) -> SurrogateModel:
    obj = json.loads(Path(path).read_text())
    return SurrogateModel(
        rules=tuple(BlindSpotRule.from_json(r) for r in obj.get("rules", [])),
        coverage_radius=float(obj.get("coverage_radius", 0.75)),
        coverage_count=int(obj.get("coverage_count", 5)),
        clutter_tags=frozenset(obj.get("clutter_tags", [])),
        jitter_frac=float(obj.get("jitter_frac", 0.08)),
        lib=lib,
    )


def save_surrogate(model: SurrogateModel, path: str | Path) -> None:
    obj = {
        "rules": [r.to_json() for r in model.rules],
        "coverage_radius": model.coverage_radius,
        "coverage_count": model.coverage_count,
        "clutter_tags": sorted(model.clutter_tags),
        "jitter_frac": model.jitter_frac,
    }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


class SurrogateDetector:
    def __init__(self, model: SurrogateModel):
        self.model = model
        self.name = "surrogate"

    def predict(self, image: LabeledImage) -> list[Detection]:
        return predict_surrogate(self.model, image)

    def retrained(self, modifications: Sequence[Modification]) -> "SurrogateDetector":
        """Fresh detector whose memory is exactly the given training set."""
        return SurrogateDetector(replace(self.model, memory=tuple(modifications)))


# ---------------------------------------------------------------------------
# Wire protocol: {"image_id": ..., "image_path" | "image_b64": ...} in,
# {"image_id": ..., "detections": [{"category", "box", "score"}]} out.

def _image_id(image: LabeledImage) -> str:
    return format(fnv1a64(image.modification.canonical_json().encode()), "016x")


def _request_payload(image: LabeledImage) -> dict:
    payload = {"image_id": _image_id(image)}
    if image.path:
        payload["image_path"] = str(image.path)
    else:
        import io

        from PIL import Image as PILImage

        buf = io.BytesIO()
        PILImage.fromarray(image.pixels, "RGB").save(buf, format="PNG")
        payload["image_b64"] = base64.b64encode(buf.getvalue()).decode("ascii")
    return payload


def parse_detections(payload: dict, expected_id: str) -> list[Detection]:
    if not isinstance(payload, dict) or "detections" not in payload:
        raise OracleProtocolError("response missing 'detections'", payload)
    if payload.get("image_id") != expected_id:
        raise OracleProtocolError(
            f"image_id mismatch (expected {expected_id})", payload.get("image_id"))
    detections = []
    for item in payload["detections"]:
        try:
            box = item["box"]
            if len(box) != 4:
                raise ValueError("box must have 4 coordinates")
            det = Detection(category=str(item["category"]),
                            box=tuple(float(v) for v in box),
                            score=float(item["score"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise OracleProtocolError(f"malformed detection record ({exc})", item)
        detections.append(det)
    return detections


class HttpDetector:
    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2,
                 retrain_cmd: Optional[str] = None):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.retrain_cmd = retrain_cmd
        self.name = f"http:{url}"
        self._client = httpx.Client(timeout=timeout)

    def predict(self, image: LabeledImage) -> list[Detection]:
        payload = _request_payload(image)
        last_error: OracleError = OracleConnectionError("no attempt made")
        for _ in range(self.retries + 1):
            try:
                response = self._client.post(self.url, json=payload)
            except httpx.TimeoutException as exc:
                last_error = OracleTimeoutError(str(exc))
                continue
            except httpx.HTTPError as exc:
                last_error = OracleConnectionError(str(exc))
                continue
            if response.status_code != 200:
                last_error = OracleProtocolError(f"HTTP {response.status_code}", response.text[:200])
                continue
            try:
                body = response.json()
            except ValueError as exc:
                raise OracleProtocolError(f"response is not JSON ({exc})", response.text[:200])
            return parse_detections(body, payload["image_id"])
        raise last_error


class ExecDetector:
    """Child-process detector speaking one JSON object per line on stdio."""

    def __init__(self, cmd: str, retrain_cmd: Optional[str] = None):
        self.cmd = cmd
        self.retrain_cmd = retrain_cmd
        self.name = f"exec:{cmd}"
        try:
            self._proc = subprocess.Popen(
                shlex.split(cmd), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                text=True, bufsize=1)
        except OSError as exc:
            raise OracleConnectionError(f"cannot start {cmd!r}: {exc}")

    def predict(self, image: LabeledImage) -> list[Detection]:
        if self._proc.poll() is not None:
            raise OracleConnectionError(f"{self.cmd!r} exited with {self._proc.returncode}")
        payload = _request_payload(image)
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise OracleConnectionError(str(exc))
        if not line:
            raise OracleConnectionError(f"{self.cmd!r} closed its stdout")
        try:
            body = json.loads(line)
        except ValueError as exc:
            raise OracleProtocolError(f"response is not JSON ({exc})", line[:200])
        return parse_detections(body, payload["image_id"])

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()


def run_retrain_hook(cmd: str, manifest_path: str | Path) -> None:
    """External retraining: hand the augmented manifest to the configured
    command; a nonzero exit aborts the cycle."""
    result = subprocess.run(shlex.split(cmd) + [str(manifest_path)])
    if result.returncode != 0:
        raise OracleError(f"retrain hook {cmd!r} exited with {result.returncode}")


def make_detector(spec: str, lib: Optional[AssetLibrary] = None,
                  retrain_cmd: Optional[str] = None):
    """Build a detector from a --model style spec string.

    ``surrogate:<rules.json>`` | ``http:<url>`` | ``exec:<command>``
    """
    kind, _, arg = spec.partition(":")
    if kind == "surrogate":
        if not arg:
            raise ValueError("surrogate spec needs a rules file: surrogate:<rules.json>")
        return SurrogateDetector(load_surrogate(arg, lib=lib))
    if kind in ("http", "https"):
        url = spec if arg.startswith("//") else arg
        return HttpDetector(url, retrain_cmd=retrain_cmd)
    if kind == "exec":
        return ExecDetector(arg, retrain_cmd=retrain_cmd)
    raise ValueError(f"unknown model spec {spec!r}")
