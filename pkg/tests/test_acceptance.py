"""Acceptance suite: one test per release criterion, each timed against its
stated budget.  The terminal summary (conftest hook) prints one PASS/FAIL
line per criterion."""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from air.attention import AttentionMap, FixationRecord, FixationSequence
from air.metrics import aire_box, aire_step, auc_judd, split_half_consistency, standardize
from air.program_ir import AtomicOp
from air.scene_graph import BoundingBox, SceneObject, StepROIs, build_cooccurrence, resolve_rois
from air.supervision import (
    LossConfig,
    ProposalSet,
    airc_total_loss,
    airm_total_loss,
    gt_attention,
    iou,
    kl_attention_loss,
    mine_hard_negatives,
    neg_ce_loss,
    overlap_over_min,
)
from air.synth import SynthConfig, build_synthetic_corpus, make_toy_dataset, write_synthetic_corpus
from air.toy_model import (
    ModelParams,
    aire_of_aggregate,
    attention_swap_eval,
    evaluate,
    loss_and_grads,
    train_toy,
)
from air.analysis import AttentionSource, question_scores

from oracles import oracle_cooccurrence, oracle_resolve, random_program, random_scene


class Budget:
    """Context manager asserting the block stays under its runtime budget."""

    def __init__(self, seconds: float):
        self.limit = seconds
        self.elapsed = 0.0

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._t0
        if exc[0] is None:
            assert self.elapsed < self.limit, (
                f"runtime {self.elapsed:.1f}s exceeds the {self.limit:.0f}s budget"
            )
        return False


def test_c01_standardization_identities():
    """1000 random maps: standardized moments, full-frame score, affine invariance."""
    rng = np.random.default_rng(101)
    with Budget(5.0):
        for i in range(1000):
            h, w = int(rng.integers(8, 33)), int(rng.integers(8, 33))
            grid = rng.uniform(0.0, 10.0, size=(h, w))
            m = AttentionMap(grid, (float(w), float(h)))
            std = standardize(m)
            assert abs(std.grid.mean()) < 1e-9
            assert abs(std.grid.std() - 1.0) < 1e-9
            assert abs(aire_box(std, BoundingBox(0, 0, w, h))) < 1e-9
            rois = StepROIs(0, [frozenset({
                SceneObject("a", "c", frozenset(),
                            BoundingBox(float(rng.uniform(0, w / 2)),
                                        float(rng.uniform(0, h / 2)),
                                        float(rng.uniform(1, w / 2)),
                                        float(rng.uniform(1, h / 2)))),
            })])
            a = float(rng.uniform(0.1, 10.0))
            b = float(rng.uniform(-5.0, 5.0))
            base = aire_step(m, rois, AtomicOp.SELECT).aire
            affine = aire_step(AttentionMap(a * grid + b, m.frame), rois, AtomicOp.SELECT).aire
            assert abs(base - affine) < 1e-9


def test_c02_roi_resolver_oracle_equivalence():
    """1000 random (program, scene) pairs match the brute-force interpreter exactly."""
    rng = np.random.default_rng(202)
    n_fallback = 0
    with Budget(10.0):
        for trial in range(1000):
            scenes = [random_scene(rng, f"s{trial}_{j}") for j in range(3)]
            scene = scenes[0]
            cooc = build_cooccurrence(scenes)
            counts = oracle_cooccurrence(scenes)
            program = random_program(rng)
            k = int(rng.integers(1, 8))
            got = resolve_rois(program, scene, cooc, k=k)
            want = oracle_resolve(program, scene, counts, k)
            for g, (sets, fb) in zip(got, want):
                assert [frozenset(o.id for o in s) for s in g.roi_sets] == sets
                assert g.fallback_used == fb
                n_fallback += fb
    assert n_fallback > 50  # the sweep genuinely exercises the fallback path


def test_c03_roi_vs_distractor_separation():
    """ROI-centered attention beats distractor-centered for all 8 operations."""
    with Budget(30.0):
        cfg = SynthConfig(n_images=100, questions_per_image=2, objects_per_scene=12,
                          n_subjects=2, fixations_per_subject=3, map_size=256,
                          p_absent=0.05)
        corpus, maps = build_synthetic_corpus(cfg, seed=303)
        assert len(corpus.programs) == 200
        on = question_scores(AttentionSource("roi", "model", maps["roi"]), corpus)
        off = question_scores(AttentionSource("off", "model", maps["distractor"]), corpus)
        wins: dict = {}
        sums: dict = {}
        for qid in corpus.question_ids:
            for op, v_on in on[qid].by_op.items():
                v_off = off[qid].by_op.get(op)
                if v_off is None:
                    continue
                w, s = wins.setdefault(op, [0, 0]), sums.setdefault(op, [0.0, 0.0])
                w[1] += 1
                w[0] += int(v_on > v_off)
                s[0] += v_on
                s[1] += v_off
        assert {op.value for op in wins} == {
            "select", "filter", "query", "verify", "compare", "relate", "and", "or"
        }
        for op, (won, total) in wins.items():
            mean_on = sums[op][0] / total
            mean_off = sums[op][1] / total
            assert mean_on > mean_off, f"{op}: {mean_on:.3f} <= {mean_off:.3f}"
            assert won / total >= 0.95, f"{op}: win rate {won}/{total}"


def test_c04_metric_unit_identities():
    """Frozen example values for the metric and supervision engines."""
    # standardization
    np.testing.assert_allclose(
        standardize(AttentionMap(np.array([[0.0, 2.0]]), (2.0, 1.0))).grid, [[-1, 1]]
    )
    grid = AttentionMap(np.array([[1.0, 1.0], [1.0, 3.0]]), (2.0, 2.0))
    np.testing.assert_allclose(
        standardize(grid).grid, [[-0.5774, -0.5774], [-0.5774, 1.7321]], atol=1e-4
    )
    # aire over the bottom-right pixel of the 2x2 example
    assert aire_box(standardize(grid), BoundingBox(1, 1, 1, 1)) == pytest.approx(1.7321, abs=1e-4)
    # auc-judd trapezoid cases
    m = AttentionMap(np.array([[0.1, 0.2], [0.3, 0.4]]), (2.0, 2.0))
    assert auc_judd(m, [FixationRecord(1.5, 1.5, 0.0)]) == pytest.approx(0.875)
    assert auc_judd(m, [FixationRecord(0.5, 0.5, 0.0)]) == pytest.approx(0.5)
    # kl divergence hand value and identities
    assert kl_attention_loss([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.5108, abs=1e-4)
    assert kl_attention_loss([0.25] * 4, [0.25] * 4) == pytest.approx(0.0, abs=1e-12)
    assert kl_attention_loss([0, 1, 0], [0.7, 0.2, 0.1]) == pytest.approx(-np.log(0.2))
    # iou cases
    assert iou(BoundingBox(0, 0, 1, 1), BoundingBox(0.5, 0, 1, 1)) == pytest.approx(1 / 3, abs=1e-9)
    assert iou(BoundingBox(0, 0, 5, 5), BoundingBox(0, 0, 5, 5)) == 1.0
    assert iou(BoundingBox(0, 0, 5, 5), BoundingBox(50, 50, 5, 5)) == 0.0
    # gt attention normalization (IoUs 0.5 and 0.25 -> 2/3, 1/3)
    rois = StepROIs(0, [frozenset({SceneObject("r", "c", frozenset(), BoundingBox(0, 0, 4, 4))})])
    t = gt_attention(rois, ProposalSet([BoundingBox(0, 0, 8, 4), BoundingBox(0, 0, 16, 4)]))
    np.testing.assert_allclose(t.weights, [2 / 3, 1 / 3], atol=1e-9)
    # hard-negative overlap threshold cases
    assert overlap_over_min(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0
    assert overlap_over_min(BoundingBox(0, 0, 10, 10), BoundingBox(50, 50, 10, 10)) == 0.0
    assert overlap_over_min(BoundingBox(0, 0, 10, 10), BoundingBox(5, 5, 20, 20)) == pytest.approx(0.25)
    pos = BoundingBox(0, 0, 10, 10)
    keep = mine_hard_negatives(
        "q", {"other": [StepROIs(0, [frozenset({
            SceneObject("cand", "c", frozenset(), BoundingBox(5, 5, 20, 20))})])]},
        [pos], k=3, tau=0.3,
    )
    assert keep == [BoundingBox(5, 5, 20, 20)]
    # negative cross-entropy identities
    assert neg_ce_loss([0, 0, 1, 0], [0.25] * 4) == pytest.approx(np.log(0.25))
    assert neg_ce_loss(np.zeros(3), [1 / 3] * 3) == 0.0
    # total losses
    assert airm_total_loss(1.0, [2.0], [3.0], LossConfig(1, 1)) == 6.0
    assert airm_total_loss(2.5, [9.0], [7.0], LossConfig(0, 0)) == 2.5
    assert airc_total_loss(1.0, 0.5, -0.2, LossConfig(1, 1)) == pytest.approx(1.3)


def test_c05_gradient_check():
    """Analytic gradients vs central differences over >=1000 coordinates."""
    rng = np.random.default_rng(505)
    eps = 1e-5
    n_checked = 0
    with Budget(60.0):
        for instance in range(20):
            mode = "airm" if instance % 2 == 0 else "airc"
            samples, dims = make_toy_dataset(
                n=2, seed=600 + instance, n_categories=6, n_answers=4,
                k=4, min_steps=1, max_steps=3,
            )
            p = ModelParams.init(dims, seed=700 + instance)
            cfg = LossConfig(float(rng.uniform(0.2, 1.5)), float(rng.uniform(0.2, 1.5)))
            _, grads = loss_and_grads(samples, p, cfg, mode=mode)
            vec, gvec = p.to_vector(), grads.to_vector()
            for i in rng.choice(vec.size, size=52, replace=False):
                v2 = vec.copy()
                v2[i] += eps
                lp = loss_and_grads(samples, p.from_vector(v2), cfg, mode=mode)[0]
                v2[i] -= 2 * eps
                lm = loss_and_grads(samples, p.from_vector(v2), cfg, mode=mode)[0]
                num = (lp - lm) / (2 * eps)
                rel = abs(num - gvec[i]) / max(abs(num), abs(gvec[i]), 1e-5)
                assert rel < 1e-4, f"instance {instance} coord {i}: rel={rel:.2e}"
                n_checked += 1
    assert n_checked >= 1000


def test_c06_toy_airm_supervision_effect():
    """Progressive supervision: >95% operation accuracy, >=20% relative AiR-E
    gain over the unsupervised baseline, answer accuracy not lower."""
    with Budget(300.0):
        samples, dims = make_toy_dataset(n=600, seed=0, noise=0.25)
        assert dims.k == 8 and dims.r == 9 and len(samples) >= 500
        p0 = ModelParams.init(dims, seed=0)
        p_sup, curves = train_toy(samples, p0, LossConfig(1.0, 1.0),
                                  lr=0.2, epochs=30, seed=0, eval_every=10)
        p_uns, _ = train_toy(samples, p0, LossConfig(0.0, 0.0),
                             lr=0.2, epochs=30, seed=0, eval_every=30)
        s_sup = evaluate(p_sup, samples, use_true_length=True)
        s_uns = evaluate(p_uns, samples, use_true_length=True)
        aire_sup = aire_of_aggregate(p_sup, samples)
        aire_uns = aire_of_aggregate(p_uns, samples)
        assert s_sup["op_acc"] > 0.95
        assert aire_sup >= 1.2 * aire_uns, f"{aire_sup:.3f} vs {aire_uns:.3f}"
        assert s_sup["answer_acc"] >= s_uns["answer_acc"]
        # supervision drives the attention KL down over training
        assert curves["mean_kl"][-1] < curves["mean_kl"][0]


def test_c07_toy_airc_negative_supervision_effect():
    """Adding the negative term cuts attention mass on mined distractors by
    >=30% relative, without hurting answer accuracy."""
    with Budget(300.0):
        samples, dims = make_toy_dataset(n=600, seed=0, noise=0.25)
        p0 = ModelParams.init(dims, seed=0)
        p_pos, _ = train_toy(samples, p0, LossConfig(1.0, 0.0), lr=0.2,
                             epochs=60, seed=0, mode="airc", eval_every=60)
        p_full, _ = train_toy(samples, p0, LossConfig(1.0, 0.4), lr=0.2,
                              epochs=60, seed=0, mode="airc", eval_every=60)
        s_pos = evaluate(p_pos, samples, use_true_length=True)
        s_full = evaluate(p_full, samples, use_true_length=True)
        assert s_pos["neg_mass"] > 0
        reduction = (s_pos["neg_mass"] - s_full["neg_mass"]) / s_pos["neg_mass"]
        assert reduction >= 0.30, f"reduction {reduction:.2%}"
        assert s_full["answer_acc"] >= s_pos["answer_acc"]


def test_c08_attention_swap_ordering():
    """acc(ground truth) > acc(model) > acc(random) on most of 5 seeds."""
    ordered = 0
    for seed in range(5):
        samples, dims = make_toy_dataset(n=600, seed=seed, noise=0.25)
        p0 = ModelParams.init(dims, seed=seed)
        p, _ = train_toy(samples, p0, LossConfig(1.0, 1.0), lr=0.2,
                         epochs=30, seed=seed, eval_every=30)
        gt = attention_swap_eval(p, samples, "ground_truth", seed=seed)
        mo = attention_swap_eval(p, samples, "model", seed=seed)
        ra = attention_swap_eval(p, samples, "random", seed=seed)
        ordered += int(gt > mo > ra)
    assert ordered >= 3, f"strict ordering held on only {ordered}/5 seeds"


def test_c09_split_half_consistency_cohorts():
    """Shared-attention cohort scores high; independent-uniform sits near 0.5."""
    rng = np.random.default_rng(909)
    shared = []
    for s in range(8):
        pts = rng.normal(loc=(128, 128), scale=15.0, size=(30, 2)).clip(0, 255.9)
        shared.append(FixationSequence.make("q", [
            FixationRecord(float(x), float(y), 0.01 * i, f"s{s}")
            for i, (x, y) in enumerate(pts)
        ]))
    v_shared = split_half_consistency(shared, n_splits=10, seed=0)
    assert v_shared > 0.85, f"shared cohort consistency {v_shared:.3f}"

    uniform = []
    for s in range(8):
        pts = rng.uniform(0, 255.9, size=(40, 2))
        uniform.append(FixationSequence.make("q", [
            FixationRecord(float(x), float(y), 0.01 * i, f"s{s}")
            for i, (x, y) in enumerate(pts)
        ]))
    v_uniform = split_half_consistency(uniform, n_splits=10, seed=0)
    assert 0.4 <= v_uniform <= 0.6, f"uniform cohort consistency {v_uniform:.3f}"


@pytest.fixture(scope="module")
def throughput_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("throughput") / "corpus"
    cfg = SynthConfig(n_images=50, questions_per_image=200, n_subjects=1,
                      fixations_per_subject=4, sources=())
    write_synthetic_corpus(cfg, seed=1010, out_dir=out)
    return out


def test_c10_scoring_throughput(throughput_corpus, tmp_path):
    """10,000 question/map pairs at 256x256 scored in under a minute."""
    env = dict(os.environ, AIR_THREADS="4")
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "air.cli", "score",
         "--corpus", str(throughput_corpus), "--from-fixations", "total",
         "--out", str(tmp_path / "scores")],
        capture_output=True, text=True, env=env,
    )
    elapsed = time.perf_counter() - t0
    assert proc.returncode == 0, proc.stderr
    n_rows = sum(1 for _ in open(tmp_path / "scores" / "scores.csv")) - 1
    n_questions = len(
        {line.split(",")[0] for line in open(tmp_path / "scores" / "scores.csv")}
    ) - 1
    assert n_questions == 10000
    assert n_rows >= 10000
    assert elapsed < 60.0, f"cmd_score took {elapsed:.1f}s"
