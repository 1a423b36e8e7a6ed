"""Error tables: the counterexample log and its analyses.

Columns are typed along two axes: explicit features come straight from the
sampled modification, implicit ones from the asset metadata of the rendered
scene; ordered features have real domains, unordered ones categorical
domains (implicit features are always unordered). Rows exist only for
misclassified images.

Two analyses feed the sampler: the first principal component over the
ordered columns ranks how strongly each ordered feature co-varies across
counterexamples, and bounded subset counting over the unordered columns
surfaces the value combinations that recur most often.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from .assets import AssetLibrary
from .metrics import EvalResult
from .modspace import (
    ABSENT,
    CONTINUOUS_DIM_NAMES,
    DISCRETE_DIM_NAMES,
    Modification,
    SpaceLayout,
)

logger = logging.getLogger(__name__)

EXPLICIT, IMPLICIT = "explicit", "implicit"
ORDERED, UNORDERED = "ordered", "unordered"


class SchemaError(ValueError):
    pass


class TableError(ValueError):
    pass


class FeedbackError(ValueError):
    pass


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str  # explicit | implicit
    order: str  # ordered | unordered
    domain: tuple[float, float] | frozenset

    def __post_init__(self):
        if self.kind not in (EXPLICIT, IMPLICIT):
            raise SchemaError(f"{self.name}: kind must be explicit or implicit")
        if self.order not in (ORDERED, UNORDERED):
            raise SchemaError(f"{self.name}: order must be ordered or unordered")
        if self.kind == IMPLICIT and self.order == ORDERED:
            raise SchemaError(f"{self.name}: implicit features are unordered")
        if self.order == ORDERED:
            if not (isinstance(self.domain, tuple) and len(self.domain) == 2):
                raise SchemaError(f"{self.name}: ordered column needs a real interval domain")
        elif not isinstance(self.domain, frozenset):
            object.__setattr__(self, "domain", frozenset(self.domain))

    def admits(self, value) -> bool:
        if self.order == ORDERED:
            lo, hi = self.domain
            return isinstance(value, (int, float)) and lo <= value <= hi
        return value in self.domain


@dataclass(frozen=True)
class FeatureSchema:
    columns: tuple[ColumnSpec, ...]

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names")

    def column(self, name: str) -> ColumnSpec:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def ordered_names(self) -> list[str]:
        return [c.name for c in self.columns if c.order == ORDERED]

    def unordered_names(self) -> list[str]:
        return [c.name for c in self.columns if c.order == UNORDERED]

    def to_json(self) -> dict:
        cols = []
        for c in self.columns:
            domain = list(c.domain) if c.order == ORDERED else sorted(
                c.domain, key=lambda v: (v is None, str(type(v)), str(v)))
            cols.append({"name": c.name, "kind": c.kind, "order": c.order, "domain": domain})
        return {"columns": cols}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        cols = []
        for c in obj["columns"]:
            domain = (tuple(float(v) for v in c["domain"]) if c["order"] == ORDERED
                      else frozenset(c["domain"]))
            cols.append(ColumnSpec(name=c["name"], kind=c["kind"], order=c["order"], domain=domain))
        return cls(columns=tuple(cols))


def default_schema(layout: SpaceLayout, lib: AssetLibrary) -> FeatureSchema:
    """Schema covering the full modification space plus the generator's
    implicit metadata."""
    cols: list[ColumnSpec] = []
    for name in DISCRETE_DIM_NAMES:
        ids: set = set(range(layout.cardinality(name)))
        if name in ("car2_model", "car3_model"):
            ids.add(None)
        cols.append(ColumnSpec(name, EXPLICIT, UNORDERED, frozenset(ids)))
    for name in CONTINUOUS_DIM_NAMES:
        cols.append(ColumnSpec(name, EXPLICIT, ORDERED, layout.range(name)))

    environments = frozenset(bg.environment for bg in lib.backgrounds)
    bg_colors = frozenset(bg.dominant_color for bg in lib.backgrounds)
    car_colors = frozenset(c.color for c in lib.cars) | {None}
    orientations = frozenset(c.orientation for c in lib.cars) | {None}
    designs = frozenset(c.design for c in lib.cars) | {None}

    cols.append(ColumnSpec("environment", IMPLICIT, UNORDERED, environments))
    cols.append(ColumnSpec("background_color", IMPLICIT, UNORDERED, bg_colors))
    cols.append(ColumnSpec("num_cars", IMPLICIT, UNORDERED, frozenset({1, 2, 3})))
    for i in (1, 2, 3):
        cols.append(ColumnSpec(f"car{i}_color", IMPLICIT, UNORDERED, car_colors))
        cols.append(ColumnSpec(f"car{i}_orientation", IMPLICIT, UNORDERED, orientations))
        cols.append(ColumnSpec(f"car{i}_design", IMPLICIT, UNORDERED, designs))
    return FeatureSchema(columns=tuple(cols))


@dataclass(frozen=True)
class ErrorRow:
    values: tuple  # aligned with schema column order
    modification: Modification
    precision: float
    recall: float
    image_path: Optional[str]


@dataclass
class ErrorTable:
    schema: FeatureSchema
    rows: list[ErrorRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def value(self, row: ErrorRow, name: str):
        return row.values[self.schema.names.index(name)]

    def column_values(self, name: str) -> list:
        idx = self.schema.names.index(name)
        return [r.values[idx] for r in self.rows]


def _extract_values(schema: FeatureSchema, modification: Modification, implicit: dict) -> tuple:
    values = []
    for col in schema.columns:
        if col.kind == EXPLICIT:
            value = modification.value(col.name)
        else:
            if col.name not in implicit:
                raise TableError(f"{col.name}: implicit feature missing from image metadata")
            value = implicit[col.name]
        if not col.admits(value):
            raise TableError(f"{col.name}: value {value!r} outside column domain")
        values.append(value)
    return tuple(values)


def append(table: ErrorTable, image, eval_result: EvalResult) -> ErrorRow:
    """Add a counterexample; refuses correctly-classified images.

    ``image`` needs ``modification``, ``implicit`` and ``path`` attributes
    (a LabeledImage or a manifest record wrapper).
    """
    if not eval_result.misclassified:
        raise TableError("error tables store only misclassified images")
    values = _extract_values(table.schema, image.modification, image.implicit)
    row = ErrorRow(values=values, modification=image.modification,
                   precision=eval_result.precision, recall=eval_result.recall,
                   image_path=getattr(image, "path", None))
    table.rows.append(row)
    return row


# ---------------------------------------------------------------------------
# Persistence: CSV with a JSON schema header line, and a JSONL variant.

_EXTRA_FIELDS = ["precision", "recall", "image_path", "modification"]


def _cell(value) -> str:
    if value is None:
        return ""
    return str(value)


def _parse_cell(text: str, col: ColumnSpec):
    if col.order == ORDERED:
        return float(text)
    if text == "":
        return None
    for caster in (int, float):
        try:
            candidate = caster(text)
        except ValueError:
            continue
        if candidate in col.domain:
            return candidate
    return text


def _row_to_csv(schema: FeatureSchema, row: ErrorRow) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([_cell(v) for v in row.values] +
                    [repr(row.precision), repr(row.recall), row.image_path or "",
                     row.modification.canonical_json()])
    return buf.getvalue()


def _row_from_csv(schema: FeatureSchema, parts: list[str]) -> ErrorRow:
    n = len(schema.columns)
    if len(parts) != n + len(_EXTRA_FIELDS):
        raise TableError(f"expected {n + len(_EXTRA_FIELDS)} cells, got {len(parts)}")
    values = tuple(_parse_cell(text, col) for text, col in zip(parts, schema.columns))
    modification = Modification.from_dict(json.loads(parts[n + 3]))
    return ErrorRow(values=values, modification=modification,
                    precision=float(parts[n]), recall=float(parts[n + 1]),
                    image_path=parts[n + 2] or None)


def save_table_csv(table: ErrorTable, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps(table.schema.to_json(), separators=(",", ":")) + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(table.schema.names + _EXTRA_FIELDS)
        for row in table.rows:
            f.write(_row_to_csv(table.schema, row))


def load_table_csv(path: str | Path) -> ErrorTable:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise TableError(f"{path}: missing schema or header line")
    schema = FeatureSchema.from_json(json.loads(lines[0]))
    table = ErrorTable(schema=schema)
    for i, line in enumerate(lines[2:]):
        if not line:
            continue
        try:
            parts = next(csv.reader([line]))
            table.rows.append(_row_from_csv(schema, parts))
        except Exception:
            if i == len(lines) - 3:  # torn final row from a killed writer
                logger.warning("%s: dropping unparseable final row", path)
                break
            raise
    return table


class TableStream:
    """Crash-safe CSV mirror: schema/header up front, one flushed row per append."""

    def __init__(self, schema: FeatureSchema, path: str | Path):
        self.schema = schema
        self._f = open(path, "w")
        self._f.write(json.dumps(schema.to_json(), separators=(",", ":")) + "\n")
        writer = csv.writer(self._f, lineterminator="\n")
        writer.writerow(schema.names + _EXTRA_FIELDS)
        self._f.flush()

    def write_row(self, row: ErrorRow) -> None:
        self._f.write(_row_to_csv(self.schema, row))
        self._f.flush()

    def close(self) -> None:
        self._f.close()


def save_table_jsonl(table: ErrorTable, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write(json.dumps({"schema": table.schema.to_json()}) + "\n")
        for row in table.rows:
            f.write(json.dumps({
                "values": list(row.values),
                "modification": row.modification.to_dict(),
                "precision": row.precision,
                "recall": row.recall,
                "image_path": row.image_path,
            }) + "\n")


def load_table_jsonl(path: str | Path) -> ErrorTable:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise TableError(f"{path}: empty table file")
    schema = FeatureSchema.from_json(json.loads(lines[0])["schema"])
    table = ErrorTable(schema=schema)
    for line in lines[1:]:
        if not line:
            continue
        obj = json.loads(line)
        table.rows.append(ErrorRow(
            values=tuple(obj["values"]),
            modification=Modification.from_dict(obj["modification"]),
            precision=obj["precision"], recall=obj["recall"],
            image_path=obj["image_path"]))
    return table


# ---------------------------------------------------------------------------
# Analyses.

def pca_ordered(table: ErrorTable, normalize_variance: bool = False) -> list[tuple[str, float]]:
    """Rank ordered columns by |loading| on the first principal component.

    Columns are mean-centered (not variance-normalized unless asked); the
    loading vector is the right singular vector of the largest singular
    value, sign-fixed so its largest-magnitude entry is positive.
    """
    names = table.schema.ordered_names()
    if not names:
        raise TableError("no ordered columns to analyze")
    if len(table.rows) < 2:
        raise TableError("need at least 2 rows for principal-component analysis")
    matrix = np.array([[table.value(r, n) for n in names] for r in table.rows], dtype=np.float64)
    centered = matrix - matrix.mean(axis=0)
    if normalize_variance:
        std = centered.std(axis=0)
        centered = centered / np.where(std > 0, std, 1.0)
    if np.allclose(centered, 0.0):
        raise TableError("degenerate table: all rows identical on ordered columns")
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    pc = vt[0]
    if pc[np.argmax(np.abs(pc))] < 0:
        pc = -pc
    ranked = sorted(zip(names, pc.tolist()), key=lambda kv: -abs(kv[1]))
    return ranked


def frequent_unordered(table: ErrorTable, max_k: int, top_n: int) -> list[tuple[dict, int]]:
    """Most frequent co-occurring value assignments over unordered columns.

    Counts every realized assignment over column subsets of size <= max_k.
    Ties break toward larger subsets, then lexicographic column names.
    """
    if max_k < 1:
        raise ValueError("max_k must be >= 1")
    names = table.schema.unordered_names()
    if not names:
        return []
    counts: Counter = Counter()
    for row in table.rows:
        realized = [(n, table.value(row, n)) for n in names]
        for k in range(1, min(max_k, len(names)) + 1):
            for combo in combinations(realized, k):
                counts[combo] += 1
    ranked = sorted(
        counts.items(),
        key=lambda kv: (-kv[1], -len(kv[0]), tuple(n for n, _ in kv[0]),
                        tuple(str(v) for _, v in kv[0])),
    )
    return [(dict(combo), count) for combo, count in ranked[:top_n]]


@dataclass
class FeedbackSpec:
    """Sampler bias distilled from an error table.

    ``ordered_priority`` ranks ordered explicit columns by descending
    |loading|; higher-ranked dims should vary over more of their range.
    ``unordered_combos`` are the top recurring value combinations, resolved
    down to sets of concrete asset ids per explicit discrete dim.
    """

    ordered_priority: list[tuple[str, float]]
    ordered_centroid: dict[str, float]
    unordered_combos: list[tuple[dict[str, frozenset], int]]

    def __post_init__(self):
        mags = [abs(loading) for _, loading in self.ordered_priority]
        if any(a < b for a, b in zip(mags, mags[1:])):
            raise FeedbackError("ordered_priority must be sorted by descending |loading|")
        counts = [count for _, count in self.unordered_combos]
        if any(counts[i] < counts[i + 1] for i in range(len(counts) - 1)):
            raise FeedbackError("unordered_combos must be sorted by descending count")

    def to_json(self) -> dict:
        return {
            "ordered_priority": [[n, l] for n, l in self.ordered_priority],
            "ordered_centroid": self.ordered_centroid,
            "unordered_combos": [
                [{k: sorted(v, key=lambda x: (x is None, x)) for k, v in combo.items()}, count]
                for combo, count in self.unordered_combos
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeedbackSpec":
        return cls(
            ordered_priority=[(n, float(l)) for n, l in obj["ordered_priority"]],
            ordered_centroid={k: float(v) for k, v in obj["ordered_centroid"].items()},
            unordered_combos=[
                ({k: frozenset(v) for k, v in combo.items()}, int(count))
                for combo, count in obj["unordered_combos"]
            ],
        )


# Implicit column name -> (library lookup, target explicit column). Car slots
# are patterned on the slot number.
def _resolve_constraint(name: str, value, lib: AssetLibrary) -> Optional[dict[str, set]]:
    if name in DISCRETE_DIM_NAMES:
        return {name: {value}}
    if name == "environment":
        ids = lib.backgrounds_where("environment", value)
        return {"background": ids} if ids else None
    if name == "background_color":
        ids = lib.backgrounds_where("dominant_color", value)
        return {"background": ids} if ids else None
    if name == "num_cars":
        all_models = set(range(lib.n_cars))
        if value == 1:
            return {"car2_model": {ABSENT}, "car3_model": {ABSENT}}
        if value == 2:
            return {"car2_model": set(all_models), "car3_model": {ABSENT}}
        if value == 3:
            return {"car2_model": set(all_models), "car3_model": set(all_models)}
        return None
    for slot in (1, 2, 3):
        for attr in ("color", "orientation", "design"):
            if name == f"car{slot}_{attr}":
                target = f"car{slot}_model"
                if value is None:
                    return {target: {ABSENT}} if slot != 1 else None
                ids = lib.cars_where(attr, value)
                return {target: set(ids)} if ids else None
    return None


def derive_feedback(table: ErrorTable, lib: AssetLibrary,
                    max_k: int = 3, top_n: int = 5) -> FeedbackSpec:
    """Turn table analyses into sampler constraints.

    Implicit values resolve to the asset ids whose metadata carries them;
    combos that reference nothing in the library are dropped with a warning.
    """
    if not table.rows:
        raise TableError("cannot derive feedback from an empty table")
    priority = pca_ordered(table)
    centroid = {n: float(np.mean(table.column_values(n))) for n in table.schema.ordered_names()}

    resolved_combos: list[tuple[dict[str, frozenset], int]] = []
    for combo, count in frequent_unordered(table, max_k=max_k, top_n=top_n):
        constraints: dict[str, set] = {}
        ok = True
        for name, value in combo.items():
            resolved = _resolve_constraint(name, value, lib)
            if resolved is None:
                logger.warning("feedback: no asset carries %s=%r; dropping combo %r",
                               name, value, combo)
                ok = False
                break
            for dim, ids in resolved.items():
                constraints[dim] = constraints[dim] & ids if dim in constraints else set(ids)
                if not constraints[dim]:
                    logger.warning("feedback: combo %r empties %s; dropping", combo, dim)
                    ok = False
                    break
            if not ok:
                break
        if ok:
            resolved_combos.append(({k: frozenset(v) for k, v in constraints.items()}, count))
    if not resolved_combos:
        raise FeedbackError("no frequent combination could be resolved to library assets")
    return FeedbackSpec(ordered_priority=priority, ordered_centroid=centroid,
                        unordered_combos=resolved_combos)


def analysis_report(table: ErrorTable, max_k: int = 3, top_n: int = 5) -> dict:
    """JSON-able analysis summary with a rendered explanation line."""
    ranked = pca_ordered(table)
    combos = frequent_unordered(table, max_k=max_k, top_n=top_n)
    if combos:
        combo, count = combos[0]
        described = ", ".join(f"{k}={v}" for k, v in sorted(combo.items()))
        summary = (f"Counterexamples most often combine {described} "
                   f"({count} of {len(table.rows)} rows); most sensitive ordered "
                   f"feature: {ranked[0][0]} (loading {ranked[0][1]:+.2f}).")
    else:
        summary = (f"No unordered columns; most sensitive ordered feature: "
                   f"{ranked[0][0]} (loading {ranked[0][1]:+.2f}).")
    return {
        "rows": len(table.rows),
        "pca_ranking": [[n, l] for n, l in ranked],
        "top_combos": [[{k: (None if v is None else v) for k, v in c.items()}, n]
                       for c, n in combos],
        "summary": summary,
    }
