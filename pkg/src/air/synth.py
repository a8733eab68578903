"""Synthetic corpora and the toy training task.

Two generators live here:

* :func:`build_synthetic_corpus` makes scenes, lowered programs, fixations
  and attention-map sources whose alignment with the step ROIs is
  controllable ("roi" maps sit on the true ROIs, "distractor" maps on
  salient but irrelevant objects).
* :func:`make_toy_dataset` makes the progressive-reasoning training task:
  K fixed proposal boxes per scene, per-step operation labels and IoU-based
  attention targets, an answer readable only through the final step's
  proposal, and mined hard-negative proposals.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attention import AttentionMap, FixationRecord, FixationSequence, write_airm
from .corpus import Corpus
from .program_ir import (
    AtomicOp,
    OperationTriplet,
    ReasoningProgram,
    Step,
    parse_program,
)
from .scene_graph import (
    BoundingBox,
    Relation,
    SceneGraph,
    SceneObject,
    StepROIs,
    build_cooccurrence,
)
from .supervision import ProposalSet, gt_attention, mine_hard_negatives, overlap_over_min
from .toy_model import OP_ORDER, ModelDims, ToySample

CATEGORY_POOL = (
    "cat", "dog", "table", "chair", "car", "tree", "person", "cup",
    "plate", "book", "lamp", "ball", "horse", "bird", "sofa", "bottle",
)
ATTRIBUTE_POOL = ("red", "blue", "green", "large", "small", "wooden", "metal", "round")
RELATION_POOL = ("left of", "on", "near")


@dataclass
class SynthConfig:
    n_images: int = 20
    questions_per_image: int = 2
    image_size: int = 384
    objects_per_scene: int = 12
    n_relations: int = 18
    n_subjects: int = 6
    fixations_per_subject: int = 6
    map_size: int = 256
    p_absent: float = 0.08
    sources: tuple[str, ...] = ("roi", "distractor")

    @classmethod
    def from_json(cls, path: str | Path) -> "SynthConfig":
        raw = json.loads(Path(path).read_text())
        cfg = cls()
        for k, v in raw.items():
            if not hasattr(cfg, k):
                raise KeyError(f"unknown synth config field {k!r}")
            setattr(cfg, k, tuple(v) if k == "sources" else v)
        return cfg


def gaussian_blob_map(
    centers: list[tuple[float, float]],
    sigmas: list[float],
    frame: tuple[float, float],
    out_size: int = 256,
) -> AttentionMap:
    """Sum of isotropic Gaussian bumps (frame coordinates), peak-normalized."""
    sx = out_size / frame[0]
    sy = out_size / frame[1]
    ax = np.arange(out_size) + 0.5
    grid = np.zeros((out_size, out_size))
    for (cx, cy), sig in zip(centers, sigmas):
        gx = np.exp(-0.5 * ((ax - cx * sx) / (sig * sx)) ** 2)
        gy = np.exp(-0.5 * ((ax - cy * sy) / (sig * sy)) ** 2)
        grid += np.outer(gy, gx)
    peak = grid.max()
    if peak > 0:
        grid /= peak
    return AttentionMap(grid, (float(frame[0]), float(frame[1])))


def _random_scene(image_id: str, cfg: SynthConfig, rng: np.random.Generator) -> SceneGraph:
    s = cfg.image_size
    objects = []
    for j in range(cfg.objects_per_scene):
        w = float(rng.uniform(24, 64))
        h = float(rng.uniform(24, 64))
        x = float(rng.uniform(0, s - w - 1))
        y = float(rng.uniform(0, s - h - 1))
        attrs = frozenset(rng.choice(ATTRIBUTE_POOL, size=rng.integers(1, 4), replace=False))
        objects.append(
            SceneObject(f"o{j}", str(rng.choice(CATEGORY_POOL)), attrs,
                        BoundingBox(x, y, w, h))
        )
    with_rel = []
    n = len(objects)
    for j, o in enumerate(objects):
        rels = []
        for _ in range(int(np.ceil(cfg.n_relations / n))):
            t = int(rng.integers(0, n))
            if t != j:
                rels.append(Relation(str(rng.choice(RELATION_POOL)), f"o{t}"))
        with_rel.append(SceneObject(o.id, o.category, o.attributes, o.box, tuple(rels)))
    return SceneGraph(image_id, s, s, tuple(with_rel))


def _pick_category(scene: SceneGraph, cfg: SynthConfig, rng: np.random.Generator) -> str:
    present = sorted(scene.categories)
    absent = sorted(set(CATEGORY_POOL) - scene.categories)
    if absent and rng.uniform() < cfg.p_absent:
        return str(rng.choice(absent))
    return str(rng.choice(present))


def _pick_attribute(scene: SceneGraph, category: str, rng: np.random.Generator) -> str:
    attrs = sorted({a for o in scene.objects if o.category == category for a in o.attributes})
    if attrs:
        return str(rng.choice(attrs))
    return str(rng.choice(ATTRIBUTE_POOL))


def _template_program(
    qid: str, template: int, scene: SceneGraph, cfg: SynthConfig, rng: np.random.Generator
) -> ReasoningProgram:
    a = _pick_category(scene, cfg, rng)
    b = _pick_category(scene, cfg, rng)
    attr = _pick_attribute(scene, a, rng)
    t = lambda *args: OperationTriplet(*args)  # noqa: E731
    if template == 0:
        steps = [
            Step(t(AtomicOp.SELECT, None, a)),
            Step(t(AtomicOp.FILTER, attr, a), (0,)),
            Step(t(AtomicOp.QUERY, None, a), (1,)),
        ]
    elif template == 1:
        steps = [Step(t(AtomicOp.SELECT, None, a)), Step(t(AtomicOp.VERIFY, None, a), (0,))]
    elif template == 2:
        steps = [
            Step(t(AtomicOp.SELECT, None, a)),
            Step(t(AtomicOp.SELECT, None, b)),
            Step(t(AtomicOp.COMPARE, attr, (a, b)), (0, 1)),
        ]
    elif template == 3:
        steps = [Step(t(AtomicOp.SELECT, None, a)), Step(t(AtomicOp.RELATE, None, b), (0,))]
    elif template == 4:
        steps = [
            Step(t(AtomicOp.SELECT, None, a)),
            Step(t(AtomicOp.SELECT, None, b)),
            Step(t(AtomicOp.AND), (0, 1)),
        ]
    else:
        steps = [
            Step(t(AtomicOp.SELECT, None, a)),
            Step(t(AtomicOp.SELECT, None, b)),
            Step(t(AtomicOp.OR), (0, 1)),
        ]
    return ReasoningProgram(tuple(steps), qid)


def _box_center(b: BoundingBox) -> tuple[float, float]:
    return (b.x + b.w / 2.0, b.y + b.h / 2.0)


def _roi_map(scene, rois, cfg) -> AttentionMap:
    boxes = {o.id: o.box for r in rois for o in r.combined()}
    if not boxes:
        return gaussian_blob_map([(scene.width / 2, scene.height / 2)], [20.0],
                                 (scene.width, scene.height), cfg.map_size)
    centers = [_box_center(b) for b in boxes.values()]
    sigmas = [max(b.w, b.h) / 3.0 for b in boxes.values()]
    return gaussian_blob_map(centers, sigmas, (scene.width, scene.height), cfg.map_size)


def _distractor_objects(scene, rois, rng, limit: int = 4):
    roi_ids = {o.id for r in rois for o in r.combined()}
    roi_boxes = [o.box for r in rois for o in r.combined()]
    candidates = [
        o for o in scene.objects
        if o.id not in roi_ids
        and all(overlap_over_min(o.box, rb) < 0.2 for rb in roi_boxes)
    ]
    rng.shuffle(candidates)
    return candidates[:limit]


def _distractor_map(scene, rois, cfg, rng) -> AttentionMap:
    objs = _distractor_objects(scene, rois, rng)
    if objs:
        centers = [_box_center(o.box) for o in objs]
        sigmas = [max(o.box.w, o.box.h) / 3.0 for o in objs]
    else:
        centers = [(scene.width * 0.08, scene.height * 0.08)]
        sigmas = [18.0]
    return gaussian_blob_map(centers, sigmas, (scene.width, scene.height), cfg.map_size)


def _synth_fixations(
    qid: str, scene, rois, cfg: SynthConfig, rng: np.random.Generator
) -> FixationSequence:
    roi_boxes = [o.box for r in rois for o in r.combined()]
    distractors = _distractor_objects(scene, rois, rng)
    recs = []
    n_correct = max(1, cfg.n_subjects * 2 // 3)
    for s in range(cfg.n_subjects):
        correct = s < n_correct
        if correct and roi_boxes:
            anchors = roi_boxes
        elif distractors:
            anchors = [o.box for o in distractors]
        else:
            anchors = [o.box for o in scene.objects]
        times = np.sort(rng.uniform(0.0, 3.0, size=cfg.fixations_per_subject))
        for t in times:
            b = anchors[int(rng.integers(0, len(anchors)))]
            cx, cy = _box_center(b)
            x = float(np.clip(cx + rng.normal(0, b.w / 4), 0, scene.width - 1e-6))
            y = float(np.clip(cy + rng.normal(0, b.h / 4), 0, scene.height - 1e-6))
            recs.append(FixationRecord(x, y, float(t), f"s{s}", correct))
    return FixationSequence.make(qid, recs)


def build_synthetic_corpus(
    cfg: SynthConfig, seed: int = 0
) -> tuple[Corpus, dict[str, dict[str, AttentionMap]]]:
    """In-memory corpus plus one map per question per configured source."""
    rng = np.random.default_rng(seed)
    scenes: dict[str, SceneGraph] = {}
    programs: dict[str, ReasoningProgram] = {}
    question_image: dict[str, str] = {}
    fixations: dict[str, FixationSequence] = {}
    for i in range(cfg.n_images):
        image_id = f"img{i:04d}"
        scenes[image_id] = _random_scene(image_id, cfg, rng)
    cooc = build_cooccurrence(list(scenes.values()))

    maps: dict[str, dict[str, AttentionMap]] = {s: {} for s in cfg.sources}
    q = 0
    for i in range(cfg.n_images):
        image_id = f"img{i:04d}"
        scene = scenes[image_id]
        for _ in range(cfg.questions_per_image):
            qid = f"q{q:05d}"
            program = _template_program(qid, q % 6, scene, cfg, rng)
            # round-trip through the text form so disk and memory agree
            program = parse_program(program.render_lines(), qid)
            programs[qid] = program
            question_image[qid] = image_id
            q += 1

    corpus = Corpus(Path("."), scenes, programs, question_image, cooc)
    for qid in corpus.question_ids:
        scene = corpus.scene_of(qid)
        rois = corpus.rois(qid)
        for source in cfg.sources:
            if source == "roi":
                maps[source][qid] = _roi_map(scene, rois, cfg)
            elif source == "distractor":
                maps[source][qid] = _distractor_map(scene, rois, cfg, rng)
            else:
                raise KeyError(f"unknown source kind {source!r}")
        fixations[qid] = _synth_fixations(qid, scene, rois, cfg, rng)
    corpus.fixations = fixations
    return corpus, maps


def write_synthetic_corpus(cfg: SynthConfig, seed: int, out_dir: str | Path) -> Corpus:
    """Generate and persist a corpus in the on-disk layout, then reload it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus, maps = build_synthetic_corpus(cfg, seed)

    scenes_json = {}
    for image_id, s in sorted(corpus.scenes.items()):
        scenes_json[image_id] = {
            "width": s.width,
            "height": s.height,
            "objects": {
                o.id: {
                    "category": o.category,
                    "attributes": sorted(o.attributes),
                    "box": [o.box.x, o.box.y, o.box.w, o.box.h],
                    "relations": [
                        {"name": r.name, "target": r.target_id} for r in o.relations
                    ],
                }
                for o in s.objects
            },
        }
    (out / "scenes.json").write_text(json.dumps(scenes_json, indent=1, sort_keys=True))

    programs_json = {
        qid: [{"text": e.text, "deps": list(e.deps)} for e in p.render_lines()]
        for qid, p in sorted(corpus.programs.items())
    }
    (out / "programs.json").write_text(json.dumps(programs_json, indent=1, sort_keys=True))

    questions_json = {
        qid: {"image_id": img} for qid, img in sorted(corpus.question_image.items())
    }
    (out / "questions.json").write_text(json.dumps(questions_json, indent=1, sort_keys=True))

    fixations_json = {
        qid: [
            {"x": f.x, "y": f.y, "t": f.t_onset, "subject": f.subject_id, "correct": f.correct}
            for f in seq.fixations
        ]
        for qid, seq in sorted(corpus.fixations.items())
    }
    (out / "fixations.json").write_text(json.dumps(fixations_json, indent=1, sort_keys=True))

    rng = np.random.default_rng(seed + 1)
    proposals_json = {}
    for image_id, s in sorted(corpus.scenes.items()):
        extra = []
        for _ in range(4):
            w = float(rng.uniform(24, 64))
            h = float(rng.uniform(24, 64))
            extra.append([float(rng.uniform(0, s.width - w - 1)),
                          float(rng.uniform(0, s.height - h - 1)), w, h])
        proposals_json[image_id] = [
            [o.box.x, o.box.y, o.box.w, o.box.h] for o in s.objects
        ] + extra
    (out / "proposals.json").write_text(json.dumps(proposals_json, indent=1, sort_keys=True))

    corpus.cooc.to_csv(out / "cooc.csv")
    for source, per_q in maps.items():
        d = out / "maps" / source
        d.mkdir(parents=True, exist_ok=True)
        for qid, m in sorted(per_q.items()):
            write_airm(m, d / f"{qid}.airm")
    (out / "meta.json").write_text(
        json.dumps({"seed": seed, "config": asdict(cfg)}, indent=1, sort_keys=True)
    )
    return Corpus.load(out)


# ----------------------------------------------------------------------------
# toy training task
# ----------------------------------------------------------------------------

TOY_FRAME = 256.0
TOY_MEAN_OF_SETS = {AtomicOp.COMPARE, AtomicOp.RELATE, AtomicOp.AND}


def toy_proposal_boxes(k: int = 8) -> list[BoundingBox]:
    """Fixed disjoint grid of K proposal boxes over the toy frame."""
    cols = 4
    rows = int(np.ceil(k / cols))
    cw, ch = TOY_FRAME / cols, TOY_FRAME / rows
    boxes = []
    for j in range(k):
        r, c = divmod(j, cols)
        boxes.append(BoundingBox(c * cw + 6, r * ch + 6, cw - 12, ch - 12))
    return boxes


def toy_dims(
    n_categories: int = 10, n_answers: int = 6, k: int = 8, max_steps: int = 3
) -> ModelDims:
    return ModelDims(
        dq=max_steps * (len(OP_ORDER) + n_categories),
        d=n_categories + n_answers,
        h=40, hp=24,
        r=len(OP_ORDER) + 1,
        e=16, a=n_answers, k=k, t_max=9,
    )


def make_toy_dataset(
    n: int = 600,
    seed: int = 0,
    noise: float = 0.25,
    n_categories: int = 10,
    n_answers: int = 6,
    k: int = 8,
    min_steps: int = 2,
    max_steps: int = 3,
    pos_blur: float = 0.4,
) -> tuple[list[ToySample], ModelDims]:
    """Synthetic progressive-reasoning samples.

    Each sample lays k proposals with a distinct category and a hidden value
    label; the question encodes, per step, the operation one-hot and the
    queried categories; the answer is the majority value under the ideal
    aggregated attention, so it is only readable through attention.  Hard
    negatives are mined with the real mining routine against fabricated
    sibling questions that fixate on the untargeted proposals.  The
    single-glimpse training target ``pos_train`` leaks ``pos_blur`` of its
    mass uniformly (imperfectly mined supervision); the exact per-step
    targets stay clean.
    """
    rng = np.random.default_rng(seed)
    dims = toy_dims(n_categories, n_answers, k, max_steps)
    boxes = toy_proposal_boxes(k)
    prop_set = ProposalSet(boxes)
    n_ops = len(OP_ORDER)
    block = n_ops + n_categories
    samples: list[ToySample] = []
    for _ in range(n):
        cats = rng.permutation(n_categories)[:k]
        v_cat = np.zeros((k, dims.d))
        v_cat[np.arange(k), cats] = 1.0

        t_s = int(rng.integers(min_steps, max_steps + 1))
        q = np.zeros(dims.dq)
        ops: list[int] = []
        targets = []
        step_rois: list[StepROIs] = []
        step_ops: list[AtomicOp] = []
        objs = [
            SceneObject(f"p{j}", f"c{cats[j]}", frozenset(), boxes[j]) for j in range(k)
        ]
        targeted: set[int] = set()
        for t in range(t_s):
            op_idx = int(rng.integers(0, n_ops))
            op = OP_ORDER[op_idx]
            n_targets = 2 if op in TOY_MEAN_OF_SETS else 1
            chosen = rng.choice(k, size=n_targets, replace=False)
            targeted.update(int(c) for c in chosen)
            ops.append(op_idx)
            q[t * block + op_idx] = 1.0
            for c in chosen:
                q[t * block + n_ops + cats[int(c)]] = 1.0
            if n_targets == 2:
                roi_sets = [frozenset({objs[int(c)]}) for c in chosen]
            else:
                roi_sets = [frozenset(objs[int(c)] for c in chosen)]
            rois = StepROIs(t, roi_sets)
            step_rois.append(rois)
            step_ops.append(op)
            targets.append(gt_attention(rois, prop_set))

        # the answer is the majority value under the ideal aggregated
        # attention, so perfectly placed attention is the optimal readout;
        # resample values until the majority is clear of ties
        agg = np.mean(np.stack([t.weights for t in targets]), axis=0)
        agg /= agg.sum()
        for _ in range(50):
            vals = rng.integers(0, n_answers, size=k)
            mix = np.zeros(n_answers)
            for j in range(k):
                mix[vals[j]] += agg[j]
            order = np.sort(mix)[::-1]
            if order[0] - order[1] >= 0.15:
                break
        answer = int(np.argmax(mix))
        v = v_cat.copy()
        v[np.arange(k), n_categories + vals] = 1.0
        v += noise * rng.normal(size=v.shape)

        # fabricate sibling questions that repeatedly use the free proposals
        free = [j for j in range(k) if j not in targeted]
        rng.shuffle(free)
        sibling_rois = {}
        for idx, j in enumerate(free[:3]):
            hits = [StepROIs(0, [frozenset({objs[j]})])] * (3 - idx)
            sibling_rois[f"sib{idx}"] = hits
        positives = [boxes[j] for j in sorted(targeted)]
        mined = mine_hard_negatives("main", sibling_rois, positives, k=3, tau=0.3)
        neg = np.zeros(k)
        for b in mined:
            for j, pb in enumerate(boxes):
                if pb == b:
                    neg[j] = 1.0
        if neg.sum() > 0:
            neg /= neg.sum()
        pos_train = (1.0 - pos_blur) * agg + pos_blur / k
        samples.append(
            ToySample(
                q=q, v=v, answer=answer, ops=tuple(ops), targets=targets,
                neg=neg if neg.sum() > 0 else None,
                pos_train=pos_train,
                proposal_boxes=boxes, step_rois=step_rois, step_ops=step_ops,
                frame=(TOY_FRAME, TOY_FRAME),
            )
        )
    return samples, dims
