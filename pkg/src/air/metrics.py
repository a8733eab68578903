"""Attention scoring against ROIs plus the comparison metrics used in reports.

The ROI alignment score of a standardized map inside a box is the mean
standardized value over the pixels whose centers fall in the box.  Per step
the box scores aggregate as:

* select / query / verify / filter / or  ->  max over every box in every set
* relate / compare / and                 ->  max within each set, mean across sets

Standardization is (A - mean) / population-std, so any positive affine
transform of the input map leaves all scores unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .attention import AttentionMap, FixationRecord, FixationSequence, _pixel_indices, box_pixel_slice, build_fixation_map
from .errors import (
    ConstantInput,
    NoFixations,
    ShapeMismatch,
    TooFewSubjects,
    ZeroAreaBox,
)
from .program_ir import AtomicOp
from .scene_graph import BoundingBox, SceneGraph, StepROIs

_log = logging.getLogger(__name__)

# ops whose step score is the max over all boxes of all sets
MAX_OVER_ALL = {AtomicOp.SELECT, AtomicOp.QUERY, AtomicOp.VERIFY, AtomicOp.FILTER, AtomicOp.OR}
# ops scored per set (max within a set) then averaged across sets
MEAN_OF_SETS = {AtomicOp.RELATE, AtomicOp.COMPARE, AtomicOp.AND}


@dataclass
class StepScore:
    step_index: int
    op: AtomicOp
    aire: float | None          # None = missing (no scorable ROI at this step)
    n_sets: int


@dataclass
class QuestionScore:
    question_id: str
    steps: list[StepScore]
    by_op: dict[AtomicOp, float]


def standardize(m: AttentionMap) -> AttentionMap:
    """(A - mean) / population std; a constant map standardizes to all zeros."""
    g = m.grid
    mu = g.mean()
    sd = g.std()
    if sd == 0:
        return AttentionMap(np.zeros_like(g), m.frame)
    return AttentionMap((g - mu) / sd, m.frame)


def aire_box(m_std: AttentionMap, b: BoundingBox) -> float:
    """Mean standardized value over the pixels covered by the (clipped) box."""
    fw, fh = m_std.frame
    clipped = b.clipped(fw, fh)
    if clipped is None:
        raise ZeroAreaBox(f"box {b} lies outside the {m_std.frame} frame")
    r0, r1, c0, c1 = box_pixel_slice(clipped, m_std.frame, m_std.grid.shape)
    if r1 <= r0 or c1 <= c0:
        raise ZeroAreaBox(f"box {b} covers no pixel centers")
    return float(m_std.grid[r0:r1, c0:c1].mean())


def _set_max(m_std: AttentionMap, objs) -> float | None:
    best = None
    for o in objs:
        try:
            v = aire_box(m_std, o.box)
        except ZeroAreaBox:
            continue
        if best is None or v > best:
            best = v
    return best


def _aire_step_standardized(m_std: AttentionMap, rois: StepROIs, op: AtomicOp) -> StepScore:
    if op in MEAN_OF_SETS:
        per_set = [_set_max(m_std, s) for s in rois.roi_sets]
        scored = [v for v in per_set if v is not None]
        aire = float(np.mean(scored)) if scored else None
    else:
        aire = _set_max(m_std, rois.combined())
    return StepScore(rois.step_index, op, aire, len(rois.roi_sets))


def aire_step(m: AttentionMap, rois: StepROIs, op: AtomicOp) -> StepScore:
    """Score one reasoning step; the map must be registered to the scene frame."""
    return _aire_step_standardized(standardize(m), rois, op)


def score_question(
    m: AttentionMap, program, rois: list[StepROIs], question_id: str = ""
) -> QuestionScore:
    """Score every step of a program and aggregate per operation kind.

    The map is standardized once and shared by all steps (standardization is
    idempotent, so this matches scoring each step in isolation)."""
    m_std = standardize(m)
    steps = [
        _aire_step_standardized(m_std, r, s.triplet.op)
        for r, s in zip(rois, program.steps)
    ]
    by_op: dict[AtomicOp, list[float]] = {}
    for sc in steps:
        if sc.aire is not None:
            by_op.setdefault(sc.op, []).append(sc.aire)
    return QuestionScore(
        question_id, steps, {op: float(np.mean(v)) for op, v in by_op.items()}
    )


def nss(m: AttentionMap, fx: list[FixationRecord]) -> float:
    """Mean standardized map value at the fixation pixels."""
    if not fx:
        raise NoFixations("nss needs at least one fixation")
    m_std = standardize(m)
    rows, cols = _pixel_indices(
        [f.x for f in fx], [f.y for f in fx], m_std.frame, m_std.grid.shape
    )
    return float(m_std.grid[rows, cols].mean())


def cc(a: AttentionMap, b: AttentionMap) -> float:
    """Pearson correlation between two equally sized maps."""
    if a.grid.shape != b.grid.shape:
        raise ShapeMismatch(f"{a.grid.shape} vs {b.grid.shape}")
    return pearson(a.grid.ravel(), b.grid.ravel())


def auc_judd(m: AttentionMap, fx: list[FixationRecord]) -> float:
    """ROC area with fixated pixels as positives.

    Thresholds are the distinct map values at fixated pixels; a pixel counts
    as positive at threshold t when its value is >= t.  The curve is
    completed with (0,0) and (1,1) and integrated by trapezoid.
    """
    if not fx:
        raise NoFixations("auc_judd needs at least one fixation")
    rows, cols = _pixel_indices(
        [f.x for f in fx], [f.y for f in fx], m.frame, m.grid.shape
    )
    fix_vals = m.grid[rows, cols]
    flat = np.sort(m.grid, axis=None)
    n_px = flat.size
    n_fix = fix_vals.size
    thresholds = np.unique(fix_vals)[::-1]  # descending -> FPR ascending
    fprs = [0.0]
    tprs = [0.0]
    for t in thresholds:
        tprs.append(float((fix_vals >= t).sum() / n_fix))
        fprs.append(float((n_px - np.searchsorted(flat, t, side="left")) / n_px))
    fprs.append(1.0)
    tprs.append(1.0)
    return float(np.trapezoid(tprs, fprs))


def spearman(a, b) -> float:
    """Rank correlation with average ranks at ties; accepts maps or vectors."""
    va = _as_vector(a)
    vb = _as_vector(b)
    if va.size != vb.size:
        raise ShapeMismatch(f"{va.size} vs {vb.size}")
    if va.size < 2:
        raise ConstantInput("need at least 2 values")
    return pearson(rankdata(va), rankdata(vb))


def _as_vector(x) -> np.ndarray:
    if isinstance(x, AttentionMap):
        return x.grid.ravel()
    return np.asarray(x, dtype=np.float64).ravel()


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ShapeMismatch(f"{x.size} vs {y.size}")
    if x.size < 2:
        raise ConstantInput("need at least 2 values")
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        raise ConstantInput("constant input has no correlation")
    return float((xc * yc).sum() / denom)


def edr(s1, s2, eps: float = 9.0) -> float:
    """Edit distance on real sequences, normalized to [0, 1].

    Two fixations match (cost 0) when their Euclidean distance is <= eps;
    otherwise substitution, insertion and deletion all cost 1.  The raw DP
    cost is divided by max(len1, len2); two empty sequences score 0.
    """
    p1 = s1.points() if isinstance(s1, FixationSequence) else np.asarray(s1, dtype=np.float64).reshape(-1, 2)
    p2 = s2.points() if isinstance(s2, FixationSequence) else np.asarray(s2, dtype=np.float64).reshape(-1, 2)
    n, m = len(p1), len(p2)
    if n == 0 and m == 0:
        return 0.0
    if n == 0 or m == 0:
        return 1.0
    prev = np.arange(m + 1, dtype=np.float64)
    for i in range(1, n + 1):
        cur = np.empty(m + 1)
        cur[0] = i
        d = np.hypot(p2[:, 0] - p1[i - 1, 0], p2[:, 1] - p1[i - 1, 1])
        sub = np.where(d <= eps, 0.0, 1.0)
        for j in range(1, m + 1):
            cur[j] = min(prev[j - 1] + sub[j - 1], prev[j] + 1.0, cur[j - 1] + 1.0)
        prev = cur
    return float(prev[m] / max(n, m))


def category_attention(m: AttentionMap, scene: SceneGraph) -> dict[str, float]:
    """Mean raw map value over the pixel union of each category's boxes."""
    masks: dict[str, np.ndarray] = {}
    for o in scene.objects:
        box = o.box.clipped(*m.frame)
        if box is None:
            continue
        r0, r1, c0, c1 = box_pixel_slice(box, m.frame, m.grid.shape)
        if r1 <= r0 or c1 <= c0:
            continue
        mask = masks.setdefault(o.category, np.zeros(m.grid.shape, dtype=bool))
        mask[r0:r1, c0:c1] = True
    return {
        cat: float(m.grid[mask].mean()) for cat, mask in masks.items() if mask.any()
    }


def semantic_alignment(
    m1: AttentionMap, m2: AttentionMap, scene: SceneGraph, topk: int = 5
) -> float:
    """IoU of the two maps' top-k attended object categories.

    Scenes with fewer than topk categories fall back to all categories (the
    result is then trivially 1.0 when both maps see the same scene).
    """
    s1 = category_attention(m1, scene)
    s2 = category_attention(m2, scene)
    k = min(topk, len(s1), len(s2))
    if k < topk:
        _log.warning(
            "semantic_alignment: scene %s has %d scoreable categories, "
            "falling back from top-%d to top-%d", scene.image_id, k, topk, k,
        )

    def top(scores):
        ranked = sorted(scores.items(), key=lambda t: (-t[1], t[0]))
        return {cat for cat, _ in ranked[:k]}

    t1, t2 = top(s1), top(s2)
    union = t1 | t2
    if not union:
        return 0.0
    return len(t1 & t2) / len(union)


def split_half_consistency(
    seqs: list[FixationSequence],
    n_splits: int = 10,
    seed: int = 0,
    frame: tuple[float, float] = (256.0, 256.0),
    out_size: int = 256,
    sigma: float = 9.0,
) -> float:
    """Mean AUC of half-cohort fixation maps against the held-out half.

    Subjects are pooled from all sequences, randomly halved ``n_splits``
    times; each split builds a map from one half and scores the other half's
    fixation points with :func:`auc_judd`.
    """
    by_subject: dict[str, list[FixationRecord]] = {}
    for s in seqs:
        for f in s.fixations:
            by_subject.setdefault(f.subject_id, []).append(f)
    subjects = sorted(by_subject)
    if len(subjects) < 2:
        raise TooFewSubjects(f"got {len(subjects)} subjects, need >= 2")
    rng = np.random.default_rng(seed)
    aucs = []
    for _ in range(n_splits):
        perm = list(rng.permutation(subjects))
        half = len(subjects) // 2
        map_half, eval_half = perm[:half], perm[half:]
        fx_map = [f for s in map_half for f in by_subject[s]]
        fx_eval = [f for s in eval_half for f in by_subject[s]]
        m = build_fixation_map(fx_map, frame, out_size=out_size, sigma=sigma)
        aucs.append(auc_judd(m, fx_eval))
    return float(np.mean(aucs))
