"""Independent reference implementations used as test oracles.

Everything here is written from the rules directly, with plain loops and
dicts, deliberately not sharing code paths with the package under test.
"""

from __future__ import annotations

import numpy as np

from air.program_ir import AtomicOp, OperationTriplet, ReasoningProgram, Step
from air.scene_graph import BoundingBox, SceneGraph, SceneObject

CATS = ["ant", "bear", "crow", "deer", "eel", "fox", "goat", "hare"]
ABSENT = ["yeti", "dragon", "unicorn"]
ATTRS = ["red", "blue", "tall", "short", "shiny"]


# ---------------------------------------------------------------------------
# brute-force ROI rule interpreter
# ---------------------------------------------------------------------------

def oracle_resolve(program, scene, cooc_counts: dict, k: int):
    """Literal re-statement of the ROI rules over id sets.

    ``cooc_counts`` maps (a, b) -> int for every ordered pair.
    Returns [(list of frozenset of object ids, fallback_used)].
    """
    objs = list(scene.objects)

    def of_category(cat):
        return frozenset(o.id for o in objs if o.category == cat)

    def fallback(cat):
        ranked = []
        for other in {o for pair in cooc_counts for o in pair}:
            if other == cat:
                continue
            n = cooc_counts.get((cat, other), 0)
            if n >= 1:
                ranked.append((-n, other))
        ranked.sort()
        top = {name for _, name in ranked[:k]}
        return frozenset(o.id for o in objs if o.category in top)

    results = []
    for i, step in enumerate(program.steps):
        t = step.triplet
        used_fallback = False
        if t.op is AtomicOp.SELECT:
            hit = of_category(t.category)
            if not hit:
                hit = fallback(t.category)
                used_fallback = True
            sets = [hit]
        elif t.op in (AtomicOp.QUERY, AtomicOp.VERIFY):
            prev = frozenset().union(*results[step.deps[0]][0])
            hit = frozenset(oid for oid in prev
                            if scene.by_id(oid).category == t.category)
            if not hit:
                hit = fallback(t.category)
                used_fallback = True
            sets = [hit]
        elif t.op is AtomicOp.FILTER:
            prev = frozenset().union(*results[step.deps[0]][0])
            sets = [frozenset(oid for oid in prev
                              if t.attribute in scene.by_id(oid).attributes)]
        elif t.op is AtomicOp.RELATE:
            prev = frozenset().union(*results[step.deps[0]][0])
            hit = of_category(t.category)
            if not hit:
                hit = fallback(t.category)
                used_fallback = True
            sets = [prev, hit]
        else:
            sets = [frozenset().union(*results[d][0]) for d in step.deps]
        results.append((sets, used_fallback))
    return results


def oracle_cooccurrence(graphs) -> dict:
    counts: dict = {}
    names = sorted({o.category for g in graphs for o in g.objects})
    for a in names:
        for b in names:
            n = 0
            for g in graphs:
                cats = {o.category for o in g.objects}
                if a in cats and b in cats:
                    n += 1
            counts[(a, b)] = n
    return counts


def random_scene(rng: np.random.Generator, image_id: str = "img") -> SceneGraph:
    size = int(rng.integers(100, 400))
    n = int(rng.integers(3, 10))
    objects = []
    for j in range(n):
        w = float(rng.uniform(5, size / 2))
        h = float(rng.uniform(5, size / 2))
        x = float(rng.uniform(0, size - w - 1))
        y = float(rng.uniform(0, size - h - 1))
        attrs = frozenset(
            str(a) for a in rng.choice(ATTRS, size=int(rng.integers(0, 3)), replace=False)
        )
        objects.append(
            SceneObject(f"o{j}", str(rng.choice(CATS)), attrs, BoundingBox(x, y, w, h))
        )
    return SceneGraph(image_id, size, size, tuple(objects))


def random_program(rng: np.random.Generator, qid: str = "q") -> ReasoningProgram:
    n_steps = int(rng.integers(1, 7))
    steps: list[Step] = []
    pool = CATS + ABSENT

    def rand_cat():
        return str(rng.choice(pool))

    for i in range(n_steps):
        if i == 0:
            choices = [AtomicOp.SELECT]
        elif i == 1:
            choices = [AtomicOp.SELECT, AtomicOp.FILTER, AtomicOp.QUERY,
                       AtomicOp.VERIFY, AtomicOp.RELATE]
        else:
            choices = list(AtomicOp)
        op = choices[int(rng.integers(0, len(choices)))]
        if op is AtomicOp.SELECT:
            steps.append(Step(OperationTriplet(op, None, rand_cat())))
        elif op is AtomicOp.FILTER:
            dep = int(rng.integers(0, i))
            steps.append(Step(OperationTriplet(op, str(rng.choice(ATTRS)), rand_cat()), (dep,)))
        elif op in (AtomicOp.QUERY, AtomicOp.VERIFY, AtomicOp.RELATE):
            dep = int(rng.integers(0, i))
            steps.append(Step(OperationTriplet(op, None, rand_cat()), (dep,)))
        elif op is AtomicOp.COMPARE:
            deps = tuple(int(d) for d in rng.choice(i, size=2, replace=False))
            steps.append(Step(OperationTriplet(op, str(rng.choice(ATTRS)),
                                               (rand_cat(), rand_cat())), deps))
        else:
            n_dep = int(rng.integers(2, min(i, 3) + 1))
            deps = tuple(int(d) for d in rng.choice(i, size=n_dep, replace=False))
            steps.append(Step(OperationTriplet(op), deps))
    return ReasoningProgram(tuple(steps), qid)


# ---------------------------------------------------------------------------
# numeric oracles
# ---------------------------------------------------------------------------

def oracle_bilinear(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Per-pixel bilinear formula with center alignment, no vectorization."""
    h, w = grid.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
            x = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = (
                grid[y0, x0] * (1 - fy) * (1 - fx)
                + grid[y0, x1] * (1 - fy) * fx
                + grid[y1, x0] * fy * (1 - fx)
                + grid[y1, x1] * fy * fx
            )
    if out.sum() > 0:
        out *= grid.sum() / out.sum()
    return out


def oracle_box_accumulate(weights, boxes, frame, out_size) -> np.ndarray:
    """Per-pixel accumulation: weight / covered-pixel-count inside each box."""
    grid = np.zeros((out_size, out_size))
    sx = out_size / frame[0]
    sy = out_size / frame[1]
    for wgt, b in zip(weights, boxes):
        member = []
        for r in range(out_size):
            for c in range(out_size):
                cx, cy = c + 0.5, r + 0.5
                if (b.x * sx <= cx < (b.x + b.w) * sx
                        and b.y * sy <= cy < (b.y + b.h) * sy):
                    member.append((r, c))
        for r, c in member:
            grid[r, c] += wgt / len(member)
    return grid


def oracle_pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    cov = (x * y).sum() / n - x.mean() * y.mean()
    sx = np.sqrt((x * x).sum() / n - x.mean() ** 2)
    sy = np.sqrt((y * y).sum() / n - y.mean() ** 2)
    return float(cov / (sx * sy))


def oracle_average_ranks(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    ranks = np.empty(v.size)
    for i, x in enumerate(v):
        less = np.sum(v < x)
        equal = np.sum(v == x)
        ranks[i] = less + (equal + 1) / 2.0
    return ranks
