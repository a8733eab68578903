"""Corpus-level analyses: per-operation score tables, score/performance
correlations, spatiotemporal heatmaps, question-pair alignment, pairwise
correctness-group comparisons, and center-bias checks.

Tables are plain lists of dicts; :class:`AnalysisReport` owns serialization
(CSV + optional rendered PNG figures + a meta echo of every knob).  All
arithmetic lives in :mod:`air.metrics`; this module only groups and averages.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import stats as _sstats

from .attention import (
    AttentionMap,
    FixationRecord,
    build_fixation_map,
    center_prior,
    read_airm,
    temporal_bins,
)
from .corpus import Corpus
from .errors import EmptyCorpus, SchemaError
from .metrics import (
    QuestionScore,
    auc_judd,
    cc,
    edr,
    score_question,
    semantic_alignment,
    spearman,
)
from .program_ir import AtomicOp

SOURCE_KINDS = ("human_correct", "human_incorrect", "human_total", "model")


@dataclass
class AttentionSource:
    """Named family of attention maps over the corpus questions."""

    name: str
    kind: str
    maps: dict[str, AttentionMap | list[AttentionMap]]
    performance: dict[str, float] | None = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise SchemaError(f"source kind must be one of {SOURCE_KINDS}")

    def map_for(self, qid: str) -> AttentionMap | None:
        m = self.maps.get(qid)
        if m is None:
            return None
        if isinstance(m, list):
            grid = np.mean([g.grid for g in m], axis=0)
            return AttentionMap(grid, m[0].frame)
        return m

    def glimpses_for(self, qid: str) -> list[AttentionMap] | None:
        m = self.maps.get(qid)
        if m is None:
            return None
        return m if isinstance(m, list) else [m]


def _correct_filter(kind: str):
    if kind == "human_correct":
        return lambda f: f.correct is True
    if kind == "human_incorrect":
        return lambda f: f.correct is False
    return lambda f: True


def source_from_fixations(
    corpus: Corpus, kind: str, name: str | None = None,
    map_size: int = 256, sigma: float = 9.0,
) -> AttentionSource:
    """Build a fixation-map source for one correctness group.

    Performance per question is the proportion of correctness-labeled
    subjects that answered correctly.
    """
    if corpus.fixations is None:
        raise EmptyCorpus("corpus has no fixations.json")
    keep = _correct_filter(kind)
    maps: dict[str, AttentionMap] = {}
    perf: dict[str, float] = {}
    for qid, seq in corpus.fixations.items():
        scene = corpus.scene_of(qid)
        fx = [f for f in seq.fixations if keep(f)]
        if fx:
            maps[qid] = build_fixation_map(
                fx, (scene.width, scene.height), out_size=map_size, sigma=sigma
            )
        labels: dict[str, bool] = {}
        for f in seq.fixations:
            if f.correct is not None:
                labels[f.subject_id] = f.correct
        if labels:
            perf[qid] = sum(labels.values()) / len(labels)
    return AttentionSource(name or kind, kind, maps, perf)


def source_from_maps_dir(
    corpus: Corpus, directory: str | Path, kind: str = "model",
    name: str | None = None, performance: dict[str, float] | None = None,
) -> AttentionSource:
    """Load ``<qid>.airm`` maps (or ``<qid>/`` directories of glimpses)."""
    directory = Path(directory)
    maps: dict[str, AttentionMap | list[AttentionMap]] = {}
    for qid in corpus.question_ids:
        scene = corpus.scene_of(qid)
        f = directory / f"{qid}.airm"
        d = directory / qid
        if f.exists():
            maps[qid] = read_airm(f).registered_to(scene.width, scene.height)
        elif d.is_dir():
            glimpses = [
                read_airm(g).registered_to(scene.width, scene.height)
                for g in sorted(d.glob("*.airm"))
            ]
            if glimpses:
                maps[qid] = glimpses
    return AttentionSource(name or directory.name, kind, maps, performance)


def load_source_descriptor(corpus: Corpus, path: str | Path) -> AttentionSource:
    """Source descriptor JSON: ``{"name", "kind", "maps": dir|null,
    "performance": {qid: score}|null}``; human kinds with no maps dir are
    rebuilt from the corpus fixations."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise SchemaError(f"cannot read source descriptor {path}: {e}") from e
    kind = raw.get("kind", "model")
    name = raw.get("name")
    perf = raw.get("performance")
    if raw.get("maps"):
        maps_dir = Path(raw["maps"])
        if not maps_dir.is_absolute():
            maps_dir = Path(path).parent / maps_dir
        src = source_from_maps_dir(corpus, maps_dir, kind, name, perf)
    else:
        src = source_from_fixations(corpus, kind, name)
        if perf:
            src.performance = perf
    return src


def question_scores(
    src: AttentionSource, corpus: Corpus, k: int = 20
) -> dict[str, QuestionScore]:
    """AiR-E per step for every question the source covers."""
    out = {}
    for qid in corpus.question_ids:
        m = src.map_for(qid)
        if m is None:
            continue
        scene = corpus.scene_of(qid)
        out[qid] = score_question(
            m.registered_to(scene.width, scene.height),
            corpus.programs[qid], corpus.rois(qid, k), qid,
        )
    return out


def op_breakdown(src: AttentionSource, corpus: Corpus, k: int = 20) -> list[dict]:
    """Mean AiR-E per operation, under both aggregation conventions.

    ``mean_of_questions`` averages each question's per-op mean; ``pooled_steps``
    pools every step of the op across questions.  Missing steps are excluded
    from means and reported in the count columns.
    """
    scores = question_scores(src, corpus, k)
    per_q: dict[AtomicOp, list[float]] = {}
    pooled: dict[AtomicOp, list[float]] = {}
    missing: dict[AtomicOp, int] = {}
    for qs in scores.values():
        for op, v in qs.by_op.items():
            per_q.setdefault(op, []).append(v)
        for sc in qs.steps:
            if sc.aire is None:
                missing[sc.op] = missing.get(sc.op, 0) + 1
            else:
                pooled.setdefault(sc.op, []).append(sc.aire)
    rows = []
    for op in sorted(set(per_q) | set(missing), key=lambda o: o.value):
        vals_q = per_q.get(op, [])
        vals_p = pooled.get(op, [])
        rows.append({
            "op": op.value,
            "mean_of_questions": float(np.mean(vals_q)) if vals_q else None,
            "pooled_steps": float(np.mean(vals_p)) if vals_p else None,
            "n_questions": len(vals_q),
            "n_steps": len(vals_p),
            "n_missing": missing.get(op, 0),
        })
    return rows


def accuracy_correlation(
    src: AttentionSource, corpus: Corpus,
    correctness: dict[str, float] | None = None,
    k: int = 20, min_n: int = 3,
) -> list[dict]:
    """Per-op Pearson r between question-level AiR-E and task performance,
    with a two-tailed p and a significance flag at p < 0.05."""
    perf = correctness if correctness is not None else src.performance
    if not perf:
        raise EmptyCorpus("no performance values available for this source")
    scores = question_scores(src, corpus, k)
    per_op: dict[AtomicOp, list[tuple[float, float]]] = {}
    for qid, qs in scores.items():
        if qid not in perf:
            continue
        for op, v in qs.by_op.items():
            per_op.setdefault(op, []).append((v, float(perf[qid])))
    rows = []
    for op in sorted(per_op, key=lambda o: o.value):
        pairs = per_op[op]
        row = {"op": op.value, "n": len(pairs), "r": None, "p": None, "significant": False}
        if len(pairs) >= min_n:
            x = np.array([a for a, _ in pairs])
            y = np.array([b for _, b in pairs])
            if x.std() > 0 and y.std() > 0:
                r, p = _sstats.pearsonr(x, y)
                row.update(r=float(r), p=float(p), significant=bool(p < 0.05))
        rows.append(row)
    return rows


def temporal_heatmap(
    src: AttentionSource, corpus: Corpus,
    edges: list[float] | None = None,
    k: int = 20, map_size: int = 256, sigma: float = 9.0,
) -> dict:
    """Mean AiR-E per (temporal bin or glimpse) x reasoning step.

    Human sources slice the corpus fixations into onset bins and build one
    map per bin; model sources use their glimpse lists directly.
    """
    if edges is None:
        edges = [0.0, 1.0, 2.0, 3.0]
    human = src.kind.startswith("human")
    keep = _correct_filter(src.kind)
    n_steps = max((len(p.steps) for p in corpus.programs.values()), default=0)
    n_rows = (len(edges) - 1) if human else max(
        (len(src.glimpses_for(q) or []) for q in corpus.question_ids), default=0
    )
    sums = np.zeros((n_rows, n_steps))
    counts = np.zeros((n_rows, n_steps))
    for qid in corpus.question_ids:
        scene = corpus.scene_of(qid)
        program = corpus.programs[qid]
        rois = corpus.rois(qid, k)
        if human:
            if corpus.fixations is None or qid not in corpus.fixations:
                continue
            seq = corpus.fixations[qid]
            bins, _ = temporal_bins(seq, edges)
            row_maps = []
            for b in bins:
                fx = [f for f in b if keep(f)]
                row_maps.append(
                    build_fixation_map(fx, (scene.width, scene.height), map_size, sigma)
                    if fx else None
                )
        else:
            glimpses = src.glimpses_for(qid)
            if glimpses is None:
                continue
            row_maps = [g.registered_to(scene.width, scene.height) for g in glimpses]
        for i, m in enumerate(row_maps):
            if m is None or i >= n_rows:
                continue
            qs = score_question(m, program, rois, qid)
            for j, sc in enumerate(qs.steps):
                if sc.aire is not None:
                    sums[i, j] += sc.aire
                    counts[i, j] += 1
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    row_labels = (
        [f"{edges[i]:g}-{edges[i+1]:g}s" for i in range(len(edges) - 1)]
        if human else [f"glimpse{i}" for i in range(n_rows)]
    )
    return {"matrix": mean, "counts": counts, "rows": row_labels,
            "cols": [f"step{j}" for j in range(n_steps)]}


def question_pair_alignment(
    corpus: Corpus,
    edges: list[float] | None = None,
    map_size: int = 256, sigma: float = 9.0, topk: int = 5,
) -> dict:
    """Spatial (rank correlation) and semantic (top-k category IoU) agreement
    between fixation maps of different questions on the same image, overall
    and per temporal bin."""
    if corpus.fixations is None:
        raise EmptyCorpus("corpus has no fixations.json")
    if edges is None:
        edges = [0.0, 1.0, 2.0, 3.0]
    by_image: dict[str, list[str]] = {}
    for qid in corpus.question_ids:
        if qid in corpus.fixations:
            by_image.setdefault(corpus.question_image[qid], []).append(qid)
    n_bins = len(edges) - 1
    rows = []
    for image_id, qids in sorted(by_image.items()):
        if len(qids) < 2:
            continue
        scene = corpus.scenes[image_id]
        frame = (scene.width, scene.height)
        for qa, qb in combinations(sorted(qids), 2):
            fa = corpus.fixations[qa].fixations
            fb = corpus.fixations[qb].fixations
            ma = build_fixation_map(list(fa), frame, map_size, sigma)
            mb = build_fixation_map(list(fb), frame, map_size, sigma)
            row = {
                "image_id": image_id, "q_a": qa, "q_b": qb,
                "spatial": spearman(ma, mb),
                "semantic": semantic_alignment(ma, mb, scene, topk),
            }
            bins_a, _ = temporal_bins(corpus.fixations[qa], edges)
            bins_b, _ = temporal_bins(corpus.fixations[qb], edges)
            for i in range(n_bins):
                label = f"{edges[i]:g}-{edges[i+1]:g}s"
                if bins_a[i] and bins_b[i]:
                    mba = build_fixation_map(bins_a[i], frame, map_size, sigma)
                    mbb = build_fixation_map(bins_b[i], frame, map_size, sigma)
                    row[f"spatial_{label}"] = spearman(mba, mbb)
                    row[f"semantic_{label}"] = semantic_alignment(mba, mbb, scene, topk)
                else:
                    row[f"spatial_{label}"] = None
                    row[f"semantic_{label}"] = None
            rows.append(row)
    summary = {}
    if rows:
        for col in rows[0]:
            if col in ("image_id", "q_a", "q_b"):
                continue
            vals = [r[col] for r in rows if r[col] is not None]
            summary[col] = float(np.mean(vals)) if vals else None
    return {"pairs": rows, "summary": summary}


def pairwise_group_comparison(
    a: AttentionSource, b: AttentionSource, corpus: Corpus,
    correctness_a: dict[str, float] | None = None,
    correctness_b: dict[str, float] | None = None,
    threshold: float = 0.5,
    edr_eps: float = 9.0,
    map_size: int = 256, sigma: float = 9.0,
) -> list[dict]:
    """Partition questions by the two sources' correctness (Correct /
    Incorrect / Inter) and report per-group attention agreement.

    Model pairs compare maps by rank correlation; human pairs compare gaze
    sequences by EDR and map-vs-fixations AUC.  Real-valued performance is
    binarized at ``threshold``.
    """
    pa = correctness_a if correctness_a is not None else (a.performance or {})
    pb = correctness_b if correctness_b is not None else (b.performance or {})
    groups: dict[str, list[str]] = {"Correct": [], "Incorrect": [], "Inter": []}
    for qid in corpus.question_ids:
        if qid not in pa or qid not in pb:
            continue
        ca, cb = pa[qid] >= threshold, pb[qid] >= threshold
        if ca and cb:
            groups["Correct"].append(qid)
        elif not ca and not cb:
            groups["Incorrect"].append(qid)
        else:
            groups["Inter"].append(qid)
    human_pair = a.kind.startswith("human") and b.kind.startswith("human")
    rows = []
    for group, qids in groups.items():
        row: dict = {"group": group, "n": len(qids)}
        if not qids:
            rows.append(row)
            continue
        if human_pair and corpus.fixations is not None:
            keep_a, keep_b = _correct_filter(a.kind), _correct_filter(b.kind)
            edrs, aucs = [], []
            for qid in qids:
                seq = corpus.fixations.get(qid)
                if seq is None:
                    continue
                fa = [f for f in seq.fixations if keep_a(f)]
                fb = [f for f in seq.fixations if keep_b(f)]
                if not fa or not fb:
                    continue
                scene = corpus.scene_of(qid)
                edrs.append(edr(np.array([(f.x, f.y) for f in fa]),
                                np.array([(f.x, f.y) for f in fb]), edr_eps))
                m = build_fixation_map(fa, (scene.width, scene.height), map_size, sigma)
                aucs.append(auc_judd(m, fb))
            row["edr"] = float(np.mean(edrs)) if edrs else None
            row["auc_judd"] = float(np.mean(aucs)) if aucs else None
        else:
            rhos = []
            for qid in qids:
                ma, mb = a.map_for(qid), b.map_for(qid)
                if ma is None or mb is None or ma.grid.shape != mb.grid.shape:
                    continue
                rhos.append(spearman(ma, mb))
            row["spearman"] = float(np.mean(rhos)) if rhos else None
        rows.append(row)
    return rows


def center_bias_similarity(
    fx_correct: list[FixationRecord],
    fx_incorrect: list[FixationRecord],
    frame: tuple[float, float] = (256.0, 256.0),
    map_size: int = 256, sigma: float = 9.0,
) -> float:
    """Correlation between the two groups' aggregate fixation maps."""
    if not fx_correct or not fx_incorrect:
        raise EmptyCorpus("both correctness groups need fixations")
    ma = build_fixation_map(fx_correct, frame, map_size, sigma)
    mb = build_fixation_map(fx_incorrect, frame, map_size, sigma)
    return cc(ma, mb)


def center_bias_over_bins(
    corpus: Corpus, edges: list[float] | None = None,
    map_size: int = 256, sigma: float = 9.0, prior_sigma: float = 15.0,
) -> list[dict]:
    """CC of each bin's pooled fixation map against the center-prior map."""
    if corpus.fixations is None:
        raise EmptyCorpus("corpus has no fixations.json")
    if edges is None:
        edges = [0.0, 1.0, 2.0, 3.0]
    prior = center_prior(map_size, prior_sigma)
    pooled: list[list[FixationRecord]] = [[] for _ in range(len(edges) - 1)]
    for qid, seq in corpus.fixations.items():
        scene = corpus.scene_of(qid)
        bins, _ = temporal_bins(seq, edges)
        for i, b in enumerate(bins):
            # pool in normalized frame coordinates so images can differ
            pooled[i].extend(
                FixationRecord(f.x / scene.width * map_size,
                               f.y / scene.height * map_size, f.t_onset,
                               f.subject_id, f.correct)
                for f in b
            )
    rows = []
    for i, fx in enumerate(pooled):
        label = f"{edges[i]:g}-{edges[i+1]:g}s"
        if fx:
            m = build_fixation_map(fx, (map_size, map_size), map_size, sigma)
            rows.append({"bin": label, "cc_center": cc(m, prior), "n_fixations": len(fx)})
        else:
            rows.append({"bin": label, "cc_center": None, "n_fixations": 0})
    return rows


# ----------------------------------------------------------------------------
# report assembly
# ----------------------------------------------------------------------------


@dataclass
class AnalysisReport:
    tables: dict[str, list[dict]] = field(default_factory=dict)
    matrices: dict[str, dict] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path, render_figures: bool = True) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in self.tables.items():
            _write_table(out / f"{name}.csv", rows)
        for name, hm in self.matrices.items():
            _write_matrix_csv(out / f"{name}.csv", hm)
        (out / "meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True))
        if render_figures:
            self.render_figures(out)

    def render_figures(self, out_dir: str | Path) -> list[Path]:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        out = Path(out_dir)
        made = []
        for name, hm in self.matrices.items():
            fig, ax = plt.subplots(figsize=(6, 3.2))
            mat = np.ma.masked_invalid(hm["matrix"])
            im = ax.imshow(mat, aspect="auto", cmap="viridis")  # per-panel scale
            ax.set_xticks(range(len(hm["cols"])), hm["cols"], fontsize=8)
            ax.set_yticks(range(len(hm["rows"])), hm["rows"], fontsize=8)
            fig.colorbar(im, ax=ax, label="AiR-E")
            ax.set_title(name.replace("_", " "))
            fig.tight_layout()
            path = out / f"{name}.png"
            fig.savefig(path, dpi=130)
            plt.close(fig)
            made.append(path)
        for name, rows in self.tables.items():
            if not name.startswith("op_breakdown") or not rows:
                continue
            fig, ax = plt.subplots(figsize=(6, 3.2))
            ops = [r["op"] for r in rows]
            vals = [r["mean_of_questions"] or 0.0 for r in rows]
            ax.bar(ops, vals, color="#4878cf")
            ax.set_ylabel("mean AiR-E")
            ax.set_title(name.replace("_", " "))
            ax.tick_params(axis="x", rotation=30)
            fig.tight_layout()
            path = out / f"{name}.png"
            fig.savefig(path, dpi=130)
            plt.close(fig)
            made.append(path)
        return made


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def _write_matrix_csv(path: Path, hm: dict) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([""] + list(hm["cols"]))
        for label, row in zip(hm["rows"], hm["matrix"]):
            w.writerow([label] + [("" if not np.isfinite(v) else f"{v:.6f}") for v in row])


def run_full_report(
    corpus: Corpus,
    sources: list[AttentionSource],
    k: int = 20,
    edges: list[float] | None = None,
    edr_eps: float = 9.0,
    map_size: int = 256,
    sigma: float = 9.0,
    options: dict | None = None,
) -> AnalysisReport:
    """Everything the analyze command emits, as one report object."""
    report = AnalysisReport()
    report.meta = {
        "sources": [{"name": s.name, "kind": s.kind, "n_maps": len(s.maps)} for s in sources],
        "k_fallback": k,
        "edges": edges or [0.0, 1.0, 2.0, 3.0],
        "edr_eps": edr_eps,
        "map_size": map_size,
        "sigma": sigma,
        "nonsquare_frames": "stretched to the square grid",
        "negative_counting": "one count per reasoning step an object appears in",
    }
    if options:
        report.meta.update(options)
    for src in sources:
        report.tables[f"op_breakdown_{src.name}"] = op_breakdown(src, corpus, k)
        if src.performance:
            report.tables[f"accuracy_correlation_{src.name}"] = accuracy_correlation(
                src, corpus, k=k
            )
        hm = temporal_heatmap(src, corpus, edges, k, map_size, sigma)
        report.matrices[f"temporal_heatmap_{src.name}"] = hm
    for sa, sb in combinations(sources, 2):
        if (sa.performance or {}) and (sb.performance or {}):
            report.tables[f"pairwise_{sa.name}_vs_{sb.name}"] = pairwise_group_comparison(
                sa, sb, corpus, edr_eps=edr_eps, map_size=map_size, sigma=sigma
            )
    if corpus.fixations is not None:
        try:
            report.tables["question_pair_alignment"] = [
                {"scope": "summary", **question_pair_alignment(
                    corpus, edges, map_size, sigma)["summary"]}
            ]
        except EmptyCorpus:
            pass
        report.tables["center_bias_over_bins"] = center_bias_over_bins(
            corpus, edges, map_size, sigma
        )
        correct = [f for s in corpus.fixations.values() for f in s.fixations if f.correct is True]
        incorrect = [f for s in corpus.fixations.values() for f in s.fixations if f.correct is False]
        if correct and incorrect:
            report.tables["center_bias_similarity"] = [{
                "pearson_r": _pooled_center_bias(corpus, map_size, sigma),
                "n_correct": len(correct), "n_incorrect": len(incorrect),
            }]
    return report


def _pooled_center_bias(corpus: Corpus, map_size: int, sigma: float) -> float:
    fx_c: list[FixationRecord] = []
    fx_i: list[FixationRecord] = []
    for qid, seq in corpus.fixations.items():
        scene = corpus.scene_of(qid)
        for f in seq.fixations:
            if f.correct is None:
                continue
            scaled = FixationRecord(
                f.x / scene.width * map_size, f.y / scene.height * map_size,
                f.t_onset, f.subject_id, f.correct,
            )
            (fx_c if f.correct else fx_i).append(scaled)
    return center_bias_similarity(fx_c, fx_i, (map_size, map_size), map_size, sigma)
