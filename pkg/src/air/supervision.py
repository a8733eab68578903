"""Supervision targets for attention learning: per-step ground truth over
region proposals, hard-negative mining, and the training losses.

Per-step targets weight each proposal by the sum of its IoUs with the step's
ROI boxes, normalized to a distribution.  Hard negatives are objects that
other questions on the same image care about but that barely overlap this
question's ROIs; overlap uses intersection over the smaller area, not IoU.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionMap, box_pixel_slice
from .errors import LengthMismatch, NoProposals, NotADistribution, ShapeMismatch
from .scene_graph import BoundingBox, StepROIs

DIST_TOL = 1e-6
PROB_CLAMP = 1e-12


@dataclass
class ProposalSet:
    boxes: list[BoundingBox]
    features: np.ndarray | None = None  # K x D when present

    def __post_init__(self):
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.ndim != 2 or self.features.shape[0] != len(self.boxes):
                raise ShapeMismatch(
                    f"{len(self.boxes)} boxes vs features {getattr(self.features, 'shape', None)}"
                )

    def __len__(self) -> int:
        return len(self.boxes)


@dataclass
class StepAttentionTarget:
    step_index: int
    weights: np.ndarray
    all_zero: bool = False  # no proposal overlapped any ROI

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)


@dataclass
class NegativeAttentionMap:
    map: AttentionMap
    source_boxes: list[BoundingBox] = field(default_factory=list)


@dataclass
class LossConfig:
    theta: float = 1.0
    phi: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise ValueError("loss weights must be finite")
        if self.theta < 0 or self.phi < 0:
            raise ValueError("loss weights must be >= 0")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def overlap_over_min(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over the smaller box area (the mining threshold)."""
    ix = max(0.0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0.0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    return (ix * iy) / min(a.area, b.area)


def gt_attention(rois: StepROIs, proposals: ProposalSet) -> StepAttentionTarget:
    """Proposal weights = sum of IoUs with every distinct ROI box, normalized.

    When nothing overlaps, the target stays all-zero with the flag set rather
    than inventing a uniform distribution.
    """
    if len(proposals) == 0:
        raise NoProposals("gt_attention needs at least one proposal")
    roi_boxes = rois.all_boxes()
    w = np.array(
        [sum(iou(p, r) for r in roi_boxes) for p in proposals.boxes], dtype=np.float64
    )
    total = w.sum()
    if total == 0:
        return StepAttentionTarget(rois.step_index, w, all_zero=True)
    return StepAttentionTarget(rois.step_index, w / total)


def mine_hard_negatives(
    target_q: str,
    all_rois: dict[str, list[StepROIs]],
    positive: list[BoundingBox],
    k: int = 3,
    tau: float = 0.3,
) -> list[BoundingBox]:
    """Top-k objects most often used as ROIs by *other* questions on the same
    image, keeping only those overlapping every positive box below tau.

    An object counts once per reasoning step it appears in.  Ranking ties
    break on object id; the overlap test uses intersection over the smaller
    area, so a candidate nested inside a positive is rejected outright.
    """
    counts: dict[str, int] = {}
    boxes: dict[str, BoundingBox] = {}
    for qid, rois in all_rois.items():
        if qid == target_q:
            continue
        for step in rois:
            for obj in step.combined():
                counts[obj.id] = counts.get(obj.id, 0) + 1
                boxes[obj.id] = obj.box
    ranked = sorted(counts.items(), key=lambda t: (-t[1], t[0]))
    kept: list[BoundingBox] = []
    for oid, _ in ranked:
        cand = boxes[oid]
        worst = max((overlap_over_min(cand, p) for p in positive), default=0.0)
        if worst < tau:
            kept.append(cand)
            if len(kept) == k:
                break
    return kept


def negative_map(
    boxes: list[BoundingBox],
    out_size: int = 256,
    frame: tuple[float, float] | None = None,
) -> NegativeAttentionMap:
    """Sum of box indicator masks, normalized to total mass 1."""
    if frame is None:
        frame = (float(out_size), float(out_size))
    grid = np.zeros((out_size, out_size))
    for b in boxes:
        r0, r1, c0, c1 = box_pixel_slice(b, frame, grid.shape)
        grid[r0:r1, c0:c1] += 1.0
    total = grid.sum()
    if total > 0:
        grid /= total
    return NegativeAttentionMap(AttentionMap(grid, frame), list(boxes))


def _check_distribution(v: np.ndarray, name: str) -> None:
    if v.min() < 0 or abs(v.sum() - 1.0) > DIST_TOL:
        raise NotADistribution(f"{name} sums to {v.sum():.8f} (min {v.min():.3g})")


def kl_attention_loss(target, pred) -> float:
    """KL(target || pred) with predictions clamped at 1e-12; 0 log 0 = 0."""
    t = np.asarray(target, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise ShapeMismatch(f"{t.shape} vs {p.shape}")
    _check_distribution(t, "target")
    _check_distribution(p, "pred")
    p = np.maximum(p, PROB_CLAMP)
    mask = t > 0
    return float(np.sum(t[mask] * np.log(t[mask] / p[mask])))


def neg_ce_loss(m_neg, pred) -> float:
    """Negative-attention term: sum of M^- * log(pred) over positions.

    Always <= 0 for distribution-valued predictions; minimizing it (as part
    of the total loss) pushes predicted mass out of the negative regions.
    Accepts the dense negative map + a same-shaped grid, or two flat
    proposal-weight vectors.
    """
    m = m_neg.map.grid if isinstance(m_neg, NegativeAttentionMap) else np.asarray(m_neg, dtype=np.float64)
    p = pred.grid if isinstance(pred, AttentionMap) else np.asarray(pred, dtype=np.float64)
    if m.shape != p.shape:
        raise ShapeMismatch(f"{m.shape} vs {p.shape}")
    p = np.maximum(p, PROB_CLAMP)
    return float(np.sum(m * np.log(p)))


def airm_total_loss(
    l_ans: float, l_alpha: list[float], l_r: list[float], cfg: LossConfig
) -> float:
    """answer loss + theta * sum(per-step attention) + phi * sum(per-step ops)."""
    if len(l_alpha) != len(l_r):
        raise LengthMismatch(f"{len(l_alpha)} attention terms vs {len(l_r)} op terms")
    return float(l_ans + cfg.theta * sum(l_alpha) + cfg.phi * sum(l_r))


def airc_total_loss(l_ans: float, l_pos: float, l_neg: float, cfg: LossConfig) -> float:
    """answer loss + theta * positive attention CE + phi * negative term."""
    return float(l_ans + cfg.theta * l_pos + cfg.phi * l_neg)


def ce_attention_loss(target, pred) -> float:
    """Plain cross-entropy to a target attention distribution: -sum t log p."""
    t = np.asarray(target, dtype=np.float64).ravel()
    p = np.asarray(pred, dtype=np.float64).ravel()
    if t.shape != p.shape:
        raise ShapeMismatch(f"{t.shape} vs {p.shape}")
    p = np.maximum(p, PROB_CLAMP)
    return float(-np.sum(t * np.log(p)))
