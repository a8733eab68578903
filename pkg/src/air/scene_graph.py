"""Annotated scenes and the per-step ROI resolution rules.

Every reasoning step selects a set (or sets) of scene objects:

* select - all objects of the triplet category
* query / verify - objects of the triplet category among the dep's ROIs
* filter - dep ROIs carrying the triplet attribute
* compare / and / or - one set per dep, each the dep's combined ROIs
* relate - two sets: the dep's ROIs, and the triplet category over the scene

When a category-referring step (select/query/verify, relate's category half)
matches nothing, the co-occurrence fallback kicks in: categories that co-exist
with the missing one are ranked by corpus frequency and every scene object of
the top-k ranked categories becomes an ROI.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import EmptyCorpus, SchemaError
from .program_ir import AtomicOp, ReasoningProgram


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box, top-left anchored. w and h must be positive."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"degenerate box {vals}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"negative origin {vals}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def clipped(self, width: float, height: float) -> "BoundingBox | None":
        """Intersection with [0,width]x[0,height]; None if it vanishes."""
        x0, y0 = max(self.x, 0.0), max(self.y, 0.0)
        x1, y1 = min(self.x + self.w, width), min(self.y + self.h, height)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)


@dataclass(frozen=True)
class Relation:
    name: str
    target_id: str


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    attributes: frozenset[str]
    box: BoundingBox
    relations: tuple[Relation, ...] = ()


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    width: int
    height: int
    objects: tuple[SceneObject, ...]

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SchemaError(f"scene {self.image_id}: non-positive size")
        seen = set()
        for o in self.objects:
            if o.id in seen:
                raise SchemaError(f"scene {self.image_id}: duplicate object id {o.id}")
            seen.add(o.id)
        for o in self.objects:
            for r in o.relations:
                if r.target_id not in seen:
                    raise SchemaError(
                        f"scene {self.image_id}: relation target {r.target_id} missing"
                    )

    def by_id(self, oid: str) -> SceneObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    @property
    def categories(self) -> set[str]:
        return {o.category for o in self.objects}

    @property
    def n_relationships(self) -> int:
        return sum(len(o.relations) for o in self.objects)


@dataclass
class CoOccurrenceTable:
    """Symmetric scene-level co-existence counts between object categories."""

    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def count(self, a: str, b: str) -> int:
        return self.counts.get(self._key(a, b), 0)

    def add(self, a: str, b: str, n: int = 1) -> None:
        k = self._key(a, b)
        self.counts[k] = self.counts.get(k, 0) + n

    def partners(self, category: str) -> list[tuple[str, int]]:
        """Categories co-existing with `category` (count >= 1, self excluded),
        ranked by count descending then name."""
        out = []
        for (a, b), n in self.counts.items():
            if n <= 0:
                continue
            if a == category and b != category:
                out.append((b, n))
            elif b == category and a != category:
                out.append((a, n))
        out.sort(key=lambda t: (-t[1], t[0]))
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["catA", "catB", "count"])
            for (a, b), n in sorted(self.counts.items()):
                w.writerow([a, b, n])

    @classmethod
    def from_csv(cls, path: str | Path) -> "CoOccurrenceTable":
        table = cls()
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        if not rows or rows[0] != ["catA", "catB", "count"]:
            raise SchemaError(f"{path}: expected header catA,catB,count")
        for i, row in enumerate(rows[1:], start=2):
            if len(row) != 3:
                raise SchemaError(f"{path}:{i}: expected 3 columns")
            try:
                table.add(row[0], row[1], int(row[2]))
            except ValueError as e:
                raise SchemaError(f"{path}:{i}: bad count {row[2]!r}") from e
        return table


@dataclass
class StepROIs:
    """Resolved ROI groups for one reasoning step (objects, not just boxes)."""

    step_index: int
    roi_sets: list[frozenset[SceneObject]]
    fallback_used: bool = False

    def combined(self) -> frozenset[SceneObject]:
        out: set[SceneObject] = set()
        for s in self.roi_sets:
            out |= s
        return frozenset(out)

    def all_boxes(self) -> list[BoundingBox]:
        return [o.box for o in self.combined()]


def build_cooccurrence(graphs: list[SceneGraph]) -> CoOccurrenceTable:
    """Scene-level co-existence: counts[(a,b)] = scenes holding both a and b."""
    if not graphs:
        raise EmptyCorpus("co-occurrence needs at least one scene")
    table = CoOccurrenceTable()
    for g in graphs:
        cats = sorted(g.categories)
        for i, a in enumerate(cats):
            for b in cats[i:]:
                table.add(a, b)
    return table


def _canon(category: str, synonyms: dict[str, str] | None) -> str:
    if synonyms is None:
        return category
    return synonyms.get(category, category)


def _category_match(
    scene: SceneGraph, category: str, pool: frozenset[SceneObject] | None,
    synonyms: dict[str, str] | None,
) -> frozenset[SceneObject]:
    want = _canon(category, synonyms)
    objs = scene.objects if pool is None else pool
    return frozenset(o for o in objs if _canon(o.category, synonyms) == want)


def _fallback(
    scene: SceneGraph, category: str, cooc: CoOccurrenceTable, k: int,
    synonyms: dict[str, str] | None,
) -> frozenset[SceneObject]:
    want = _canon(category, synonyms)
    top = {cat for cat, _ in cooc.partners(want)[:k]}
    return frozenset(o for o in scene.objects if _canon(o.category, synonyms) in top)


def resolve_rois(
    program: ReasoningProgram,
    scene: SceneGraph,
    cooc: CoOccurrenceTable,
    k: int = 20,
    synonyms: dict[str, str] | None = None,
    use_relation_edges: bool = False,
) -> list[StepROIs]:
    """Apply the per-operation ROI rules to every step of a program.

    ``use_relation_edges`` optionally prunes relate's category set to objects
    actually connected to the dep ROIs (off by default: the baseline rule
    takes the whole category).
    """
    resolved: list[StepROIs] = []

    def combined(dep: int) -> frozenset[SceneObject]:
        return resolved[dep].combined()

    for i, step in enumerate(program.steps):
        t = step.triplet
        fallback_used = False

        def match_or_fallback(category: str, pool: frozenset[SceneObject] | None):
            nonlocal fallback_used
            direct = _category_match(scene, category, pool, synonyms)
            if direct:
                return direct
            fallback_used = True
            return _fallback(scene, category, cooc, k, synonyms)

        if t.op is AtomicOp.SELECT:
            sets = [match_or_fallback(t.category, None)]
        elif t.op in (AtomicOp.QUERY, AtomicOp.VERIFY):
            sets = [match_or_fallback(t.category, combined(step.deps[0]))]
        elif t.op is AtomicOp.FILTER:
            prev = combined(step.deps[0])
            sets = [frozenset(o for o in prev if t.attribute in o.attributes)]
        elif t.op is AtomicOp.RELATE:
            prev = combined(step.deps[0])
            cat_set = match_or_fallback(t.category, None)
            if use_relation_edges and not fallback_used:
                cat_set = _prune_by_edges(cat_set, prev, t.attribute)
            sets = [prev, cat_set]
        else:  # compare / and / or
            sets = [combined(d) for d in step.deps]
        resolved.append(StepROIs(i, sets, fallback_used))
    return resolved


def _prune_by_edges(
    candidates: frozenset[SceneObject],
    anchors: frozenset[SceneObject],
    name: str | None,
) -> frozenset[SceneObject]:
    anchor_ids = {o.id for o in anchors}
    cand_ids = {o.id for o in candidates}
    keep = set()
    for o in candidates:
        for r in o.relations:
            if r.target_id in anchor_ids and (name is None or r.name == name):
                keep.add(o)
    for a in anchors:
        for r in a.relations:
            if r.target_id in cand_ids and (name is None or r.name == name):
                keep.add(next(o for o in candidates if o.id == r.target_id))
    return frozenset(keep)


def box_union_area(boxes: list[BoundingBox]) -> float:
    """Exact area of the union of axis-aligned boxes (coordinate compression)."""
    if not boxes:
        return 0.0
    xs = sorted({v for b in boxes for v in (b.x, b.x + b.w)})
    ys = sorted({v for b in boxes for v in (b.y, b.y + b.h)})
    area = 0.0
    for i in range(len(xs) - 1):
        cx = 0.5 * (xs[i] + xs[i + 1])
        covering = [b for b in boxes if b.x <= cx < b.x + b.w]
        if not covering:
            continue
        for j in range(len(ys) - 1):
            cy = 0.5 * (ys[j] + ys[j + 1])
            if any(b.y <= cy < b.y + b.h for b in covering):
                area += (xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])
    return area


def screen_question(
    scene: SceneGraph,
    rois: list[StepROIs],
    min_res: int = 320,
    min_rel: int = 16,
    max_area_frac: float = 0.04,
) -> bool:
    """Quality screen: resolution, scene richness, and compact ROI footprint."""
    if scene.width < min_res or scene.height < min_res:
        return False
    if scene.n_relationships < min_rel:
        return False
    boxes = [o.box for r in rois for o in r.combined()]
    union = box_union_area(boxes)
    return union <= max_area_frac * scene.width * scene.height


def load_scenes(path: str | Path) -> dict[str, SceneGraph]:
    """Read ``scenes.json``; accepts the GQA-style field spellings too.

    Schema: ``{image_id: {"width", "height", "objects": {id: {"category"|"name",
    "attributes", "box" [x,y,w,h] | "x","y","w","h", "relations"[{"name","target"|
    "object"}]}}}}``.  Boxes are clipped to the frame; fully outside is an error.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read scenes {path}: {e}") from e
    if not isinstance(raw, dict):
        raise SchemaError("scenes.json must map image_id -> scene")
    scenes: dict[str, SceneGraph] = {}
    for image_id, s in raw.items():
        try:
            width, height = int(s["width"]), int(s["height"])
            objects = []
            for oid, o in s["objects"].items():
                category = o.get("category", o.get("name"))
                if category is None:
                    raise SchemaError(f"object {oid}: no category/name")
                if "box" in o:
                    x, y, w, h = (float(v) for v in o["box"])
                else:
                    x, y, w, h = (float(o[k]) for k in ("x", "y", "w", "h"))
                box = BoundingBox(x, y, w, h).clipped(width, height)
                if box is None:
                    raise SchemaError(f"object {oid}: box outside the frame")
                rels = tuple(
                    Relation(str(r["name"]), str(r.get("target", r.get("object"))))
                    for r in o.get("relations", [])
                )
                objects.append(
                    SceneObject(str(oid), str(category),
                                frozenset(map(str, o.get("attributes", []))), box, rels)
                )
            scenes[image_id] = SceneGraph(image_id, width, height, tuple(objects))
        except SchemaError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"scene {image_id!r}: {e}") from e
    return scenes
