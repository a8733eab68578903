import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from air.attention import AttentionMap, FixationRecord, FixationSequence
from air.errors import ConstantInput, NoFixations, TooFewSubjects, ZeroAreaBox
from air.metrics import (
    aire_box,
    aire_step,
    auc_judd,
    cc,
    edr,
    nss,
    pearson,
    score_question,
    semantic_alignment,
    spearman,
    split_half_consistency,
    standardize,
)
from air.program_ir import AtomicOp, OperationTriplet, ReasoningProgram, Step
from air.scene_graph import BoundingBox, SceneGraph, SceneObject, StepROIs

from oracles import oracle_average_ranks, oracle_pearson


def amap(rows, frame=None):
    grid = np.asarray(rows, dtype=np.float64)
    if frame is None:
        frame = (float(grid.shape[1]), float(grid.shape[0]))
    return AttentionMap(grid, frame)


def fx(x, y, t=0.0, subject="s", correct=None):
    return FixationRecord(x, y, t, subject, correct)


def obj(oid, box, category="c"):
    return SceneObject(oid, category, frozenset(), box)


class TestStandardize:
    def test_constant_becomes_zero(self):
        out = standardize(amap([[3.0, 3.0], [3.0, 3.0]]))
        assert (out.grid == 0).all()

    def test_two_pixel_example(self):
        out = standardize(amap([[0.0, 2.0]]))
        np.testing.assert_allclose(out.grid, [[-1.0, 1.0]])

    def test_2x2_example(self):
        out = standardize(amap([[1.0, 1.0], [1.0, 3.0]]))
        np.testing.assert_allclose(
            out.grid, [[-0.5774, -0.5774], [-0.5774, 1.7321]], atol=1e-4
        )

    def test_population_std(self, rng):
        g = rng.uniform(size=(6, 6))
        out = standardize(AttentionMap(g, (6.0, 6.0)))
        assert out.grid.std() == pytest.approx(1.0, abs=1e-12)
        assert out.grid.mean() == pytest.approx(0.0, abs=1e-12)


class TestAireBox:
    def test_full_frame_is_zero(self, rng):
        m = standardize(AttentionMap(rng.uniform(size=(8, 8)), (8.0, 8.0)))
        assert aire_box(m, BoundingBox(0, 0, 8, 8)) == pytest.approx(0.0, abs=1e-9)

    def test_bottom_right_pixel(self, small_map):
        m = standardize(small_map)
        assert aire_box(m, BoundingBox(1, 1, 1, 1)) == pytest.approx(1.7321, abs=1e-4)

    def test_tiling_boxes_area_weighted_mean_zero(self, rng):
        m = standardize(AttentionMap(rng.uniform(size=(6, 8)), (8.0, 6.0)))
        left = BoundingBox(0, 0, 3, 6)
        right = BoundingBox(3, 0, 5, 6)
        total = 3 * 6 * aire_box(m, left) + 5 * 6 * aire_box(m, right)
        assert total / 48 == pytest.approx(0.0, abs=1e-9)

    def test_out_of_frame_raises(self, small_map):
        with pytest.raises(ZeroAreaBox):
            aire_box(standardize(small_map), BoundingBox(5, 5, 2, 2))

    def test_subpixel_box_raises(self):
        m = standardize(amap(np.arange(16.0).reshape(4, 4), frame=(40.0, 40.0)))
        # covers no pixel center after scaling onto the 4x4 grid
        with pytest.raises(ZeroAreaBox):
            aire_box(m, BoundingBox(0.0, 0.0, 1.0, 1.0))

    def test_scaled_frame_registration(self):
        # map grid 2x2 over a 100x100 frame: boxes in frame pixels
        m = standardize(amap([[1.0, 1.0], [1.0, 3.0]], frame=(100.0, 100.0)))
        assert aire_box(m, BoundingBox(50, 50, 50, 50)) == pytest.approx(1.7321, abs=1e-4)


class TestAireStep:
    def rois_of(self, *sets):
        return StepROIs(0, [frozenset(s) for s in sets])

    def test_max_rule_for_select(self, small_map):
        rois = self.rois_of({obj("a", BoundingBox(0, 0, 1, 1)), obj("b", BoundingBox(1, 1, 1, 1))})
        sc = aire_step(small_map, rois, AtomicOp.SELECT)
        assert sc.aire == pytest.approx(1.7321, abs=1e-4)
        assert sc.n_sets == 1

    def test_mean_of_sets_for_relate(self, small_map):
        rois = self.rois_of({obj("a", BoundingBox(0, 0, 1, 1))},
                            {obj("b", BoundingBox(1, 1, 1, 1))})
        sc = aire_step(small_map, rois, AtomicOp.RELATE)
        assert sc.aire == pytest.approx((1.7321 - 0.5774) / 2, abs=1e-4)
        assert sc.n_sets == 2

    def test_or_takes_max_across_sets(self, small_map):
        rois = self.rois_of({obj("a", BoundingBox(0, 0, 1, 1))},
                            {obj("b", BoundingBox(1, 1, 1, 1))})
        sc = aire_step(small_map, rois, AtomicOp.OR)
        assert sc.aire == pytest.approx(1.7321, abs=1e-4)

    def test_empty_sets_yield_missing(self, small_map):
        sc = aire_step(small_map, self.rois_of(set()), AtomicOp.SELECT)
        assert sc.aire is None

    def test_partial_empty_set_still_scores(self, small_map):
        rois = self.rois_of(set(), {obj("b", BoundingBox(1, 1, 1, 1))})
        sc = aire_step(small_map, rois, AtomicOp.AND)
        assert sc.aire == pytest.approx(1.7321, abs=1e-4)

    def test_positive_affine_invariance(self, rng):
        m = AttentionMap(rng.uniform(size=(16, 16)), (16.0, 16.0))
        rois = self.rois_of({obj("a", BoundingBox(2, 3, 5, 4)), obj("b", BoundingBox(9, 9, 4, 4))})
        base = aire_step(m, rois, AtomicOp.SELECT).aire
        scaled = AttentionMap(3.7 * m.grid + 11.0, m.frame)
        assert aire_step(scaled, rois, AtomicOp.SELECT).aire == pytest.approx(base, abs=1e-9)


class TestNss:
    def test_constant_map(self):
        assert nss(amap([[2.0, 2.0]]), [fx(0.5, 0.5)]) == 0.0

    def test_two_pixel_example(self):
        assert nss(amap([[0.0, 2.0]]), [fx(1.5, 0.5)]) == pytest.approx(1.0)

    def test_uniform_coverage_is_zero(self, rng):
        m = amap(rng.uniform(size=(4, 4)))
        pts = [fx(c + 0.5, r + 0.5) for r in range(4) for c in range(4)]
        assert nss(m, pts) == pytest.approx(0.0, abs=1e-9)

    def test_empty_raises(self):
        with pytest.raises(NoFixations):
            nss(amap([[1.0, 2.0]]), [])


class TestCc:
    def test_self_correlation(self, rng):
        m = amap(rng.uniform(size=(5, 5)))
        assert cc(m, m) == pytest.approx(1.0)

    def test_negation(self, rng):
        g = rng.uniform(size=(5, 5))
        assert cc(amap(g), amap(g.max() - g)) == pytest.approx(-1.0)

    def test_matches_covariance_oracle(self, rng):
        a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        assert cc(amap(a), amap(b)) == pytest.approx(
            oracle_pearson(a.ravel(), b.ravel()), abs=1e-9
        )

    def test_constant_raises(self):
        with pytest.raises(ConstantInput):
            cc(amap([[1.0, 1.0]]), amap([[1.0, 2.0]]))

    def test_symmetry(self, rng):
        a, b = amap(rng.uniform(size=(6, 6))), amap(rng.uniform(size=(6, 6)))
        assert cc(a, b) == pytest.approx(cc(b, a), abs=1e-12)


class TestAucJudd:
    def test_constant_map(self):
        assert auc_judd(amap([[1.0, 1.0], [1.0, 1.0]]), [fx(0.5, 0.5)]) == pytest.approx(0.5)

    def test_single_top_fixation(self):
        m = amap([[0.1, 0.2], [0.3, 0.4]])
        assert auc_judd(m, [fx(1.5, 1.5)]) == pytest.approx(0.875)

    def test_single_bottom_fixation(self):
        m = amap([[0.1, 0.2], [0.3, 0.4]])
        assert auc_judd(m, [fx(0.5, 0.5)]) == pytest.approx(0.5)

    def test_bounded(self, rng):
        m = amap(rng.uniform(size=(12, 12)))
        pts = [fx(float(x), float(y)) for x, y in rng.uniform(0, 12, size=(20, 2))]
        assert 0.0 <= auc_judd(m, pts) <= 1.0

    def test_monotone_in_quantile(self, rng):
        g = rng.permutation(64).reshape(8, 8).astype(float)  # unique values
        m = amap(g)
        aucs = []
        for q in (0.5, 0.25, 0.125):
            n = int(64 * q)
            thresh = np.sort(g, axis=None)[-n]
            rr, cols = np.where(g >= thresh)
            pts = [fx(c + 0.5, r + 0.5) for r, c in zip(rr, cols)]
            aucs.append(auc_judd(m, pts))
        assert aucs[0] < aucs[1] < aucs[2]


class TestSpearman:
    def test_identical(self):
        assert spearman([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_reversed(self):
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_average_ranks_with_ties(self):
        a, b = [1, 2, 2, 3], [1, 3, 2, 2]
        want = oracle_pearson(oracle_average_ranks(a), oracle_average_ranks(b))
        assert spearman(a, b) == pytest.approx(want, abs=1e-9)

    def test_accepts_maps(self, rng):
        a, b = amap(rng.uniform(size=(4, 4))), amap(rng.uniform(size=(4, 4)))
        assert spearman(a, b) == pytest.approx(spearman(a.grid.ravel(), b.grid.ravel()))


class TestEdr:
    def seq(self, pts):
        return FixationSequence.make("q", [fx(float(x), float(y), i * 0.1)
                                           for i, (x, y) in enumerate(pts)])

    def test_identical_sequences(self):
        s = self.seq([(0, 0), (5, 5), (9, 2)])
        assert edr(s, s, eps=1.0) == 0.0

    def test_vs_empty(self):
        s = self.seq([(0, 0), (5, 5), (9, 2)])
        assert edr(s, self.seq([]), eps=1.0) == 1.0
        assert edr(self.seq([]), self.seq([]), eps=1.0) == 0.0

    def test_all_far_equal_length(self):
        a = self.seq([(0, 0), (0, 10), (0, 20)])
        b = self.seq([(100, 0), (100, 10), (100, 20)])
        assert edr(a, b, eps=5.0) == 1.0

    def test_match_within_eps(self):
        a = self.seq([(0, 0), (10, 10)])
        b = self.seq([(1, 1), (11, 11)])
        assert edr(a, b, eps=2.0) == 0.0

    @given(st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=6),
           st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_symmetric_and_bounded(self, p1, p2):
        a, b = np.array(p1, dtype=float).reshape(-1, 2), np.array(p2, dtype=float).reshape(-1, 2)
        v = edr(a, b, eps=4.0)
        assert 0.0 <= v <= 1.0
        assert v == pytest.approx(edr(b, a, eps=4.0), abs=1e-12)

    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=5),
           st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=5),
           st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=5))
    @settings(max_examples=40, deadline=None)
    def test_triangle_inequality_of_raw_cost(self, p1, p2, p3):
        def raw(a, b):
            a = np.array(a, dtype=float)
            b = np.array(b, dtype=float)
            return edr(a, b, eps=4.0) * max(len(a), len(b))

        assert raw(p1, p3) <= raw(p1, p2) + raw(p2, p3) + 1e-9


class TestSemanticAlignment:
    def scene(self):
        objs = tuple(
            obj(f"o{i}", BoundingBox(10 * i, 10 * i, 8, 8), category=f"cat{i}")
            for i in range(7)
        )
        return SceneGraph("img", 100, 100, objs)

    def blob(self, idx, rng):
        g = np.full((100, 100), 1e-6)
        for i in idx:
            g[10 * i : 10 * i + 8, 10 * i : 10 * i + 8] = 10.0 - i * 0.5
        return AttentionMap(g, (100.0, 100.0))

    def test_identical_maps(self, rng):
        m = self.blob([0, 1, 2, 3, 4], rng)
        assert semantic_alignment(m, m, self.scene()) == 1.0

    def test_partial_overlap_three_of_five(self, rng):
        a = self.blob([0, 1, 2, 3, 4], rng)
        b = self.blob([0, 1, 2, 5, 6], rng)
        assert semantic_alignment(a, b, self.scene()) == pytest.approx(3 / 7)

    def test_fewer_categories_than_topk(self, rng):
        objs = (obj("a", BoundingBox(0, 0, 10, 10), "x"),
                obj("b", BoundingBox(50, 50, 10, 10), "y"))
        scene = SceneGraph("img", 100, 100, objs)
        a = AttentionMap(rng.uniform(size=(100, 100)), (100.0, 100.0))
        assert semantic_alignment(a, a, scene, topk=5) == 1.0


class TestSplitHalf:
    def cohort(self, rng, n_subjects, spread):
        seqs = []
        for s in range(n_subjects):
            pts = rng.normal(loc=(64, 64), scale=spread, size=(20, 2)).clip(0, 127.9)
            seqs.append(FixationSequence.make("q", [
                fx(float(x), float(y), 0.01 * i, subject=f"s{s}")
                for i, (x, y) in enumerate(pts)
            ]))
        return seqs

    def test_two_subjects_single_split_equals_direct_auc(self, rng):
        from air.attention import build_fixation_map

        seqs = self.cohort(rng, 2, 6.0)
        # identical fixations for both subjects make the split direction moot
        seqs[1] = FixationSequence.make("q", [
            fx(f.x, f.y, f.t_onset, "s1") for f in seqs[0].fixations
        ])
        got = split_half_consistency(seqs, n_splits=1, seed=0,
                                     frame=(128.0, 128.0), out_size=128, sigma=3.0)
        m = build_fixation_map(list(seqs[0].fixations), (128.0, 128.0), 128, 3.0)
        want = auc_judd(m, list(seqs[1].fixations))
        assert got == pytest.approx(want)

    def test_single_subject_raises(self, rng):
        with pytest.raises(TooFewSubjects):
            split_half_consistency(self.cohort(rng, 1, 5.0))

    def test_deterministic_given_seed(self, rng):
        seqs = self.cohort(rng, 6, 10.0)
        a = split_half_consistency(seqs, n_splits=4, seed=9, frame=(128.0, 128.0),
                                   out_size=64, sigma=3.0)
        b = split_half_consistency(seqs, n_splits=4, seed=9, frame=(128.0, 128.0),
                                   out_size=64, sigma=3.0)
        assert a == b


class TestPearson:
    def test_affine(self):
        x = np.arange(10.0)
        assert pearson(x, 2 * x + 1) == pytest.approx(1.0)
        assert pearson(x, -x) == pytest.approx(-1.0)

    def test_matches_oracle(self, rng):
        x, y = rng.uniform(size=20), rng.uniform(size=20)
        assert pearson(x, y) == pytest.approx(oracle_pearson(x, y), abs=1e-12)

    def test_constant_raises(self):
        with pytest.raises(ConstantInput):
            pearson([1, 1, 1], [1, 2, 3])


class TestScoreQuestion:
    def test_by_op_means_and_missing(self, small_map):
        program = ReasoningProgram((
            Step(OperationTriplet(AtomicOp.SELECT, None, "c")),
            Step(OperationTriplet(AtomicOp.VERIFY, None, "c"), (0,)),
        ), "q")
        rois = [
            StepROIs(0, [frozenset({obj("a", BoundingBox(1, 1, 1, 1))})]),
            StepROIs(1, [frozenset()]),
        ]
        qs = score_question(small_map, program, rois, "q")
        assert qs.steps[1].aire is None
        assert set(qs.by_op) == {AtomicOp.SELECT}
        assert qs.by_op[AtomicOp.SELECT] == pytest.approx(1.7321, abs=1e-4)
