"""``air`` command line: decompose, score, fixmap, targets, synth, train-toy,
analyze, plus a small ``metric`` verb for scripting single comparisons.

Exit codes: 2 schema violation, 3 cross-reference failure, 4 numeric
divergence.  All randomness flows from ``--seed``; outputs are byte-stable
for unchanged inputs (rows sorted by question id, floats printed with six
decimals).  ``AIR_THREADS`` caps the scoring worker pool.
"""

from __future__ import annotations

import csv
import functools
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import analysis as _analysis
from . import metrics as _metrics
from . import synth as _synth
from . import toy_model as _toy
from .attention import (
    FixationRecord,
    build_fixation_map,
    read_airm,
    temporal_bins,
    write_airm,
)
from .corpus import Corpus
from .errors import AirError, CrossRefError, Divergence, SchemaError
from .program_ir import AliasTable
from .supervision import ProposalSet, gt_attention, mine_hard_negatives, negative_map

EXIT_SCHEMA = 2
EXIT_CROSSREF = 3
EXIT_NUMERIC = 4


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("AIR_THREADS", "4")))
    except ValueError:
        return 4


def guarded(fn):
    """Translate toolkit errors into the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SchemaError,) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_SCHEMA)
        except CrossRefError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_CROSSREF)
        except Divergence as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_NUMERIC)
        except AirError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_SCHEMA)

    return wrapper


def _load_corpus(corpus_dir: str, alias_table: str | None, lenient: bool) -> Corpus:
    aliases = AliasTable.from_json(alias_table) if alias_table else None
    return Corpus.load(corpus_dir, aliases=aliases, lenient=lenient)


@click.group()
def main():
    """Attention-in-reasoning toolkit."""


corpus_opt = click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False))
out_opt = click.option("--out", required=True, type=click.Path(file_okay=False))
alias_opt = click.option("--alias-table", type=click.Path(exists=True, dir_okay=False), default=None)
strict_opt = click.option("--strict/--lenient", "strict", default=True,
                          help="fail on unknown program text vs skip with a warning")
kfall_opt = click.option("--k-fallback", default=20, show_default=True)
mapsize_opt = click.option("--map-size", default=256, show_default=True)
sigma_opt = click.option("--sigma-fix", default=9.0, show_default=True)


@main.command()
@corpus_opt
@out_opt
@alias_opt
@strict_opt
@kfall_opt
@guarded
def decompose(corpus, out, alias_table, strict, k_fallback):
    """Lower programs and resolve per-step ROIs."""
    c = _load_corpus(corpus, alias_table, lenient=not strict)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    lowered = {
        qid: [{"text": e.text, "deps": list(e.deps)} for e in p.render_lines()]
        for qid, p in sorted(c.programs.items())
    }
    (out / "lowered.json").write_text(json.dumps(lowered, indent=1, sort_keys=True))
    rois_json = {}
    for qid in c.question_ids:
        rois = c.rois(qid, k_fallback)
        rois_json[qid] = [
            {
                "step": r.step_index,
                "op": c.programs[qid].steps[r.step_index].triplet.op.value,
                "sets": [sorted(o.id for o in s) for s in r.roi_sets],
                "fallback_used": r.fallback_used,
            }
            for r in rois
        ]
    (out / "rois.json").write_text(json.dumps(rois_json, indent=1, sort_keys=True))
    if c.skipped_questions:
        click.echo(f"skipped {len(c.skipped_questions)} questions with unknown text", err=True)
    click.echo(f"decomposed {len(c.programs)} programs -> {out}")


def _question_map(c: Corpus, qid: str, source: str | None, maps_dir: str | None,
                  from_fixations: str | None, map_size: int, sigma: float):
    scene = c.scene_of(qid)
    if from_fixations:
        if c.fixations is None or qid not in c.fixations:
            return None
        keep = _analysis._correct_filter(f"human_{from_fixations}")
        fx = [f for f in c.fixations[qid].fixations if keep(f)]
        if not fx:
            return None
        return build_fixation_map(fx, (scene.width, scene.height), map_size, sigma)
    directory = Path(maps_dir) if maps_dir else c.maps_dir(source)
    path = directory / f"{qid}.airm"
    if not path.exists():
        return None
    return read_airm(path).registered_to(scene.width, scene.height)


@main.command()
@corpus_opt
@out_opt
@click.option("--source", default=None, help="named maps dir under corpus/maps/")
@click.option("--maps", "maps_dir", default=None, type=click.Path(file_okay=False),
              help="explicit directory of <qid>.airm maps")
@click.option("--from-fixations", type=click.Choice(["total", "correct", "incorrect"]),
              default=None)
@click.option("--question", default=None, help="score a single question id")
@alias_opt
@strict_opt
@kfall_opt
@mapsize_opt
@sigma_opt
@guarded
def score(corpus, out, source, maps_dir, from_fixations, question,
          alias_table, strict, k_fallback, map_size, sigma_fix):
    """Score an attention source against every step's ROIs (AiR-E CSVs)."""
    if not (source or maps_dir or from_fixations):
        raise SchemaError("need --source, --maps, or --from-fixations")
    c = _load_corpus(corpus, alias_table, lenient=not strict)
    qids = c.question_ids if question is None else [question]
    if question is not None and question not in c.programs:
        raise CrossRefError(f"unknown question {question!r}")

    def work(qid: str):
        m = _question_map(c, qid, source, maps_dir, from_fixations, map_size, sigma_fix)
        if m is None:
            return qid, None, None
        rois = c.rois(qid, k_fallback)
        qs = _metrics.score_question(m, c.programs[qid], rois, qid)
        return qid, qs, rois

    n_workers = _threads()
    if n_workers > 1 and len(qids) > 1:
        chunk = max(1, len(qids) // (n_workers * 8))
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(work, qids, chunksize=chunk))
    else:
        results = [work(q) for q in qids]
    results.sort(key=lambda t: t[0])

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    per_q: dict = {}
    pooled: dict = {}
    with open(out / "scores.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["question_id", "step", "op", "aire", "n_sets", "fallback_used"])
        for qid, qs, rois in results:
            if qs is None:
                continue
            for sc, r in zip(qs.steps, rois):
                w.writerow([
                    qid, sc.step_index, sc.op.value,
                    "" if sc.aire is None else f"{sc.aire:.6f}",
                    sc.n_sets, "true" if r.fallback_used else "false",
                ])
                if sc.aire is not None:
                    pooled.setdefault(sc.op.value, []).append(sc.aire)
            for op, v in qs.by_op.items():
                per_q.setdefault(op.value, []).append(v)
    with open(out / "summary_by_op.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["op", "mean_of_questions", "pooled_steps", "n_questions", "n_steps"])
        for op in sorted(set(per_q) | set(pooled)):
            vq = per_q.get(op, [])
            vp = pooled.get(op, [])
            w.writerow([
                op,
                f"{np.mean(vq):.6f}" if vq else "",
                f"{np.mean(vp):.6f}" if vp else "",
                len(vq), len(vp),
            ])
    n_scored = sum(1 for _, qs, _ in results if qs is not None)
    if n_scored == 0:
        raise SchemaError("no attention maps found for any requested question")
    click.echo(f"scored {n_scored}/{len(qids)} questions -> {out}")


@main.command()
@corpus_opt
@out_opt
@click.option("--edges", default="0,1,2,3", show_default=True,
              help="comma-separated temporal bin edges in seconds")
@mapsize_opt
@sigma_opt
@guarded
def fixmap(corpus, out, edges, map_size, sigma_fix):
    """Render fixation maps per question, correctness group, and time bin."""
    c = _load_corpus(corpus, None, lenient=False)
    if c.fixations is None:
        raise SchemaError("corpus has no fixations.json")
    edge_vals = [float(v) for v in edges.split(",")]
    out = Path(out)
    groups = {"total": lambda f: True,
              "correct": lambda f: f.correct is True,
              "incorrect": lambda f: f.correct is False}
    n = 0
    for qid in c.question_ids:
        if qid not in c.fixations:
            continue
        seq = c.fixations[qid]
        scene = c.scene_of(qid)
        frame = (scene.width, scene.height)
        qdir = out / qid
        qdir.mkdir(parents=True, exist_ok=True)
        bins, _ = temporal_bins(seq, edge_vals)
        for gname, keep in groups.items():
            fx_all = [f for f in seq.fixations if keep(f)]
            if fx_all:
                write_airm(build_fixation_map(fx_all, frame, map_size, sigma_fix),
                           qdir / f"{gname}_all.airm")
                n += 1
            for i, b in enumerate(bins):
                fx = [f for f in b if keep(f)]
                if fx:
                    label = f"{edge_vals[i]:g}-{edge_vals[i+1]:g}s"
                    write_airm(build_fixation_map(fx, frame, map_size, sigma_fix),
                               qdir / f"{gname}_{label}.airm")
                    n += 1
    click.echo(f"wrote {n} fixation maps -> {out}")


@main.command()
@corpus_opt
@out_opt
@click.option("--k-neg", default=3, show_default=True)
@click.option("--tau", default=0.3, show_default=True)
@click.option("--question", default=None)
@kfall_opt
@mapsize_opt
@guarded
def targets(corpus, out, k_neg, tau, question, k_fallback, map_size):
    """Per-step attention targets over proposals plus mined hard negatives."""
    c = _load_corpus(corpus, None, lenient=False)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    qids = c.question_ids if question is None else [question]
    if question is not None and question not in c.programs:
        raise CrossRefError(f"unknown question {question!r}")
    by_image: dict[str, list[str]] = {}
    for qid in c.question_ids:
        by_image.setdefault(c.question_image[qid], []).append(qid)
    for qid in qids:
        rois = c.rois(qid, k_fallback)
        proposals = ProposalSet(c.proposals_of(qid))
        steps = [gt_attention(r, proposals) for r in rois]
        positives = [o.box for r in rois for o in r.combined()]
        siblings = {
            other: c.rois(other, k_fallback)
            for other in by_image[c.question_image[qid]]
        }
        neg_boxes = mine_hard_negatives(qid, siblings, positives, k=k_neg, tau=tau)
        scene = c.scene_of(qid)
        payload = {
            "steps": [
                {"weights": [round(float(x), 9) for x in t.weights],
                 "all_zero": t.all_zero}
                for t in steps
            ],
            "neg_boxes": [[b.x, b.y, b.w, b.h] for b in neg_boxes],
            "meta": {
                "question_id": qid,
                "image_id": c.question_image[qid],
                "k_neg": k_neg,
                "tau": tau,
                "n_proposals": len(proposals),
                "negative_counting": "one count per reasoning step an object appears in",
            },
        }
        (out / f"{qid}.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
        neg = negative_map(neg_boxes, out_size=map_size,
                           frame=(scene.width, scene.height))
        write_airm(neg.map, out / f"{qid}_neg.airm")
    click.echo(f"wrote targets for {len(qids)} questions -> {out}")


@main.command()
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@out_opt
@click.option("--seed", default=0, show_default=True)
@guarded
def synth(config_path, out, seed):
    """Generate a synthetic corpus (scenes, programs, fixations, sources)."""
    cfg = _synth.SynthConfig.from_json(config_path) if config_path else _synth.SynthConfig()
    c = _synth.write_synthetic_corpus(cfg, seed, out)
    click.echo(f"synthesized {len(c.programs)} questions over "
               f"{len(c.scenes)} scenes -> {out}")


@main.command("train-toy")
@click.option("--config", "config_path", default=None,
              type=click.Path(exists=True, dir_okay=False))
@out_opt
@click.option("--seed", default=0, show_default=True)
@click.option("--theta", default=1.0, show_default=True)
@click.option("--phi", default=1.0, show_default=True)
@guarded
def train_toy_cmd(config_path, out, seed, theta, phi):
    """Train the toy progressive-attention model; emit curves and params."""
    from .supervision import LossConfig

    raw = json.loads(Path(config_path).read_text()) if config_path else {}
    n = int(raw.get("n_samples", 600))
    noise = float(raw.get("noise", 0.25))
    lr = float(raw.get("lr", 0.2))
    epochs = int(raw.get("epochs", 40))
    batch_size = int(raw.get("batch_size", 32))
    mode = raw.get("mode", "airm")
    theta = float(raw.get("theta", theta))
    phi = float(raw.get("phi", phi))
    dataset, dims = _synth.make_toy_dataset(n=n, seed=seed, noise=noise)
    p0 = _toy.ModelParams.init(dims, seed=seed)
    p, curves = _toy.train_toy(
        dataset, p0, LossConfig(theta, phi), lr=lr, epochs=epochs,
        seed=seed, batch_size=batch_size, mode=mode,
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _toy.save_curves(curves, out / "curves.json")
    _toy.save_params(p, out / "params.airpar")
    _plot_curves(curves, out / "curves.png")
    stats = _toy.evaluate(p, dataset, use_true_length=True)
    click.echo(
        f"trained {epochs} epochs: answer_acc={stats['answer_acc']:.3f} "
        f"op_acc={stats['op_acc']:.3f} -> {out}"
    )


def _plot_curves(curves: dict, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    axes[0].plot(curves["epoch"], curves["loss"])
    axes[0].set_title("loss / sample")
    axes[1].plot(curves["epoch"], curves["answer_acc"], label="answer")
    axes[1].plot(curves["epoch"], curves["op_acc"], label="operation")
    axes[1].legend()
    axes[1].set_title("accuracy")
    axes[2].plot(curves["epoch"], curves["aire"])
    axes[2].set_title("AiR-E of aggregated attention")
    for ax in axes:
        ax.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


@main.command()
@corpus_opt
@click.option("--sources", "source_paths", multiple=True, required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="source descriptor JSON files")
@out_opt
@click.option("--edges", default="0,1,2,3", show_default=True)
@click.option("--edr-eps", default=9.0, show_default=True)
@click.option("--no-figures", is_flag=True, default=False)
@alias_opt
@strict_opt
@kfall_opt
@mapsize_opt
@sigma_opt
@guarded
def analyze(corpus, source_paths, out, edges, edr_eps, no_figures,
            alias_table, strict, k_fallback, map_size, sigma_fix):
    """Run the full analysis report: CSV tables plus rendered heatmaps."""
    c = _load_corpus(corpus, alias_table, lenient=not strict)
    sources = [_analysis.load_source_descriptor(c, p) for p in source_paths]
    edge_vals = [float(v) for v in edges.split(",")]
    report = _analysis.run_full_report(
        c, sources, k=k_fallback, edges=edge_vals, edr_eps=edr_eps,
        map_size=map_size, sigma=sigma_fix,
        options={"strict": strict, "corpus": str(corpus)},
    )
    report.write(out, render_figures=not no_figures)
    click.echo(f"analysis report ({len(report.tables)} tables, "
               f"{len(report.matrices)} heatmaps) -> {out}")


def _load_points(path: str) -> list:
    raw = json.loads(Path(path).read_text())
    if isinstance(raw, dict):
        raw = next(iter(raw.values()))
    pts = []
    for e in raw:
        if isinstance(e, dict):
            pts.append(FixationRecord(float(e["x"]), float(e["y"]), float(e.get("t", 0.0))))
        else:
            pts.append(FixationRecord(float(e[0]), float(e[1]), 0.0))
    return pts


@main.command()
@click.argument("which", type=click.Choice(
    ["cc", "spearman", "nss", "auc-judd", "edr", "pearson"]))
@click.argument("a", type=click.Path(exists=True, dir_okay=False))
@click.argument("b", type=click.Path(exists=True, dir_okay=False))
@click.option("--edr-eps", default=9.0, show_default=True)
@guarded
def metric(which, a, b, edr_eps):
    """Evaluate one comparison metric on two files.

    Maps are AIRM files; fixation lists and plain vectors are JSON.
    """
    if which in ("cc", "spearman"):
        va, vb = read_airm(a), read_airm(b)
        value = _metrics.cc(va, vb) if which == "cc" else _metrics.spearman(va, vb)
    elif which in ("nss", "auc-judd"):
        m = read_airm(a)
        fx = _load_points(b)
        value = _metrics.nss(m, fx) if which == "nss" else _metrics.auc_judd(m, fx)
    elif which == "edr":
        pa = np.array([(f.x, f.y) for f in _load_points(a)])
        pb = np.array([(f.x, f.y) for f in _load_points(b)])
        value = _metrics.edr(pa, pb, eps=edr_eps)
    else:
        xa = json.loads(Path(a).read_text())
        xb = json.loads(Path(b).read_text())
        value = _metrics.pearson(xa, xb)
    click.echo(f"{value:.12g}")


if __name__ == "__main__":
    main()
