import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from treecat.crf import (
    DEFAULT_EDGES,
    CrfModel,
    PriorHistogram,
    fit_prior_histogram,
    greedy_infer,
    objective,
    search_scalars,
    spatial_term,
    static_score,
)
from treecat.errors import ConfigError, DegenerateBinsWarning
from treecat.fusion import CandidateTree
from treecat.geo import GeoPoint
from treecat.synth import _to_geo, bench_model, exhaustive_infer, random_instance

ANCHOR = GeoPoint.from_degrees(34.1478, -118.1445)
WEIGHTS = (-6.0, -5.0, -4.0, -3.0, -1.0, 2.0, 0.5, -0.5, -1.0)


def cands_at(xy, psi, phi, d_m=None):
    xy = np.asarray(xy, float)
    lat, lng = _to_geo(xy[:, 0], xy[:, 1], ANCHOR)
    d_m = [3.0] * len(xy) if d_m is None else d_m
    return [
        CandidateTree(i, GeoPoint(float(lat[i]), float(lng[i])), float(psi[i]), float(phi[i]), None, float(d_m[i]), "t")
        for i in range(len(xy))
    ]


def model(k=(1.0, 1.0, 1.0, 1.0), **kw):
    hist = PriorHistogram(DEFAULT_EDGES, WEIGHTS)
    road = PriorHistogram(DEFAULT_EDGES, (-3.0, -2.0, 0.0, 1.0, 0.5, -1.0, -2.0, -3.0, -4.0))
    return CrfModel(k, hist, road, **kw)


class TestHistogram:
    def test_bins(self):
        h = PriorHistogram(DEFAULT_EDGES, WEIGHTS)
        assert h.n_bins == 9
        np.testing.assert_array_equal(h.bin_index([0.0, 0.49, 0.5, 10.0, 64.0, math.inf]), [0, 0, 1, 5, 8, 8])
        assert h.value(10.0) == 2.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            PriorHistogram((1.0, 1.0), (0, 0, 0))
        with pytest.raises(ConfigError):
            PriorHistogram((1.0, 2.0), (0, 0))
        with pytest.raises(ConfigError):
            PriorHistogram((1.0,), (0.0, math.nan))

    def test_model_validation_and_round_trip(self, tmp_path):
        with pytest.raises(ConfigError):
            CrfModel(k=(1.0, -1.0, 1.0, 1.0))
        with pytest.raises(ConfigError):
            CrfModel(mode="soft")
        m = model(k=(0.5, 2.0, 1.5, 0.25), tau_2=1.25)
        m.save(tmp_path / "m.json")
        assert CrfModel.load(tmp_path / "m.json") == m
        assert CrfModel.from_dict(model().to_dict()).tau_2 == -math.inf


class TestPotentials:
    def test_hand_sums(self):
        c = cands_at([[0.0, 0.0], [10.0, 0.0]], psi=[2.0, 1.0], phi=[0.5, -1.0], d_m=[3.0, 5.0])
        m = model(k=(1.0, 2.0, 0.5, 3.0))
        # road bins: 3 m -> [2, 4) = 1.0 ; 5 m -> [4, 8) = 0.5
        assert static_score(c[0], m) == pytest.approx(2.0 + 1.0 + 3.0)
        assert static_score(c[1], m) == pytest.approx(1.0 - 2.0 + 1.5)
        # 10 m apart lands in [8, 16) with weight 2.0
        assert spatial_term(c[0], [c[1]], m) == pytest.approx(0.5 * 2.0)
        assert spatial_term(c[0], [], m) == pytest.approx(0.5 * WEIGHTS[-1])
        assert objective(c, m) == pytest.approx(6.0 + 0.5 + 2 * 0.5 * 2.0)
        assert objective([], m) == 0.0

    def test_nms_spatial(self):
        c = cands_at([[0.0, 0.0], [2.0, 0.0], [9.0, 0.0]], psi=[1, 1, 1], phi=[0, 0, 0])
        m = model(mode="nms", tau_nms=4.0)
        assert spatial_term(c[0], [c[1]], m) == -math.inf
        assert spatial_term(c[0], [c[2]], m) == 0.0


class TestGreedy:
    def test_gains_match_recomputed_objective(self):
        rng = np.random.default_rng(0)
        m = bench_model()
        for _ in range(40):
            cands = random_instance(rng, int(rng.integers(1, 15)), ANCHOR)
            res = greedy_infer(cands, m)
            assert np.all(res.gains > 0)
            for j in range(1, len(res.members) + 1):
                before = objective(res.members[: j - 1], m, res.anchor)
                after = objective(res.members[:j], m, res.anchor)
                assert after - before == pytest.approx(res.gains[j - 1], abs=1e-9)
            assert res.objective == pytest.approx(objective(res.members, m, res.anchor), abs=1e-9)

    def test_record_scores_are_weighted_sums(self):
        rng = np.random.default_rng(1)
        res = greedy_infer(random_instance(rng, 12, ANCHOR), bench_model().with_k((1.0, 0.5, 2.0, 0.0)))
        for r in res.records:
            assert r.weighted_sum() == pytest.approx(r.score, abs=1e-12)

    def test_empty_and_threshold(self):
        m = model()
        assert len(greedy_infer([], m)) == 0
        c = cands_at([[0, 0], [20, 0], [40, 0]], psi=[3.0, 0.5, 2.0], phi=[0, 0, 0])
        res = greedy_infer(c, m, tau_2=2.0)
        # the second candidate's static score is 0.5 + 1.0, below the threshold
        assert sorted(x.id for x in res.members) == [0, 2]

    def test_nms_keeps_the_stronger(self):
        c = cands_at([[0.0, 0.0], [2.0, 0.0], [30.0, 0.0]], psi=[1.0, 2.0, 0.5], phi=[0, 0, 0])
        res = greedy_infer(c, model(mode="nms", tau_nms=4.0))
        assert [x.id for x in res.members] == [1, 2]

    def test_scaling_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            cands = random_instance(rng, 12, ANCHOR)
            m = bench_model().with_k(tuple(rng.uniform(0.2, 2.0, 4)))
            a = greedy_infer(cands, m)
            b = greedy_infer(cands, m.with_k(tuple(4.0 * v for v in m.k)))
            assert [x.id for x in a.members] == [x.id for x in b.members]

    def test_never_beats_exhaustive(self):
        rng = np.random.default_rng(4)
        m = bench_model()
        for _ in range(60):
            cands = random_instance(rng, 8, ANCHOR)
            g = greedy_infer(cands, m)
            e = exhaustive_infer(cands, m)
            assert g.objective <= e.objective + 1e-9

    def test_exhaustive_small_oracle(self):
        # two strong candidates 1 m apart: the spatial term forbids keeping both
        c = cands_at([[0.0, 0.0], [1.0, 0.0], [12.0, 0.0]], psi=[2.0, 2.5, 2.0], phi=[0, 0, 0])
        m = model(k=(1.0, 0.0, 1.0, 0.0))
        best = -math.inf
        for r in range(4):
            for sub in itertools.combinations(c, r):
                best = max(best, objective(list(sub), m, ANCHOR))
        e = exhaustive_infer(c, m, anchor=ANCHOR)
        assert e.objective == pytest.approx(best, abs=1e-9)
        assert sorted(x.id for x in e.members) == [1, 2]


class TestPriorFit:
    def test_zero_epochs_gives_zero_weights(self):
        fit = fit_prior_histogram([1.0, 5.0], [2.0, 9.0], epochs=0)
        assert not fit.weights.any()

    def test_symmetric_samples_give_small_weights(self):
        x = np.random.default_rng(0).uniform(0, 80, 5000)
        fit = fit_prior_histogram(x, x)
        assert np.max(np.abs(fit.weights)) < 1e-9

    def test_loss_non_increasing(self):
        rng = np.random.default_rng(1)
        fit = fit_prior_histogram(rng.gamma(5, 2, 400), rng.uniform(0, 100, 900), reg=1e-2)
        assert np.all(np.diff(fit.losses) <= 1e-12)

    def test_closed_form_per_bin(self):
        # with no regularization the optimum is the log odds of each bin
        rng = np.random.default_rng(2)
        pos, neg = rng.uniform(0, 100, 3000), rng.uniform(0, 100, 2000)
        fit = fit_prior_histogram(pos, neg, reg=0.0, epochs=100)
        h = PriorHistogram.zeros()
        a = np.bincount(h.bin_index(pos), minlength=9)
        b = np.bincount(h.bin_index(neg), minlength=9)
        np.testing.assert_allclose(fit.weights, np.log(a / b), atol=1e-8)

    def test_degenerate_bin_warning(self):
        with pytest.warns(DegenerateBinsWarning):
            fit_prior_histogram([1.0], [100.0], reg=0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fit_prior_histogram([1.0], [100.0], reg=1e-3)

    def test_needs_both_classes(self):
        with pytest.raises(ConfigError):
            fit_prior_histogram([], [1.0])

    @pytest.mark.parametrize("shape,scale,mode", [(5.0, 2.0, 8.0), (7.0, 0.5, 3.0)])
    def test_mode_lands_in_argmax_bin(self, shape, scale, mode):
        rng = np.random.default_rng(5)
        pos = rng.gamma(shape, scale, 4000)
        neg = np.exp(rng.uniform(np.log(0.25), np.log(128.0), 8000))
        fit = fit_prior_histogram(pos, neg)
        h = PriorHistogram.zeros()
        assert int(np.argmax(fit.weights)) == int(h.bin_index(mode))
        # the same bin also carries the most positive mass under the sampling law
        cdf = stats.gamma(shape, scale=scale).cdf(np.concatenate([[0.0], DEFAULT_EDGES, [np.inf]]))
        assert int(np.argmax(np.diff(cdf))) == int(h.bin_index(mode))
        again = fit_prior_histogram(pos, neg)
        np.testing.assert_array_equal(again.weights, fit.weights)


class TestScalarSearch:
    def test_unit_grid_is_identity(self):
        calls = []
        res = search_scalars(lambda k: calls.append(k) or 0.5, grid=(1.0,))
        assert res.k == (1.0, 1.0, 1.0, 1.0)
        assert res.score == 0.5
        assert len(calls) == 1

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.sampled_from([0.0, 0.5, 1.0]), min_size=4, max_size=4))
    def test_separable_matches_exhaustive(self, target):
        grid = (0.0, 0.5, 1.0)

        def f(k):
            return -sum((a - b) ** 2 for a, b in zip(k, target))

        res = search_scalars(f, grid=grid)
        best = max(itertools.product(grid, repeat=4), key=f)
        assert res.k == tuple(best)
        assert res.score == f(best)

    def test_never_worse_than_start(self):
        rng = np.random.default_rng(0)
        table = {}

        def f(k):
            return table.setdefault(k, float(rng.random()))

        res = search_scalars(f, grid=(0.0, 1.0, 2.0))
        assert res.score >= table[(1.0, 1.0, 1.0, 1.0)]
        scores = [s for _, s in res.history]
        assert scores == sorted(scores)

    def test_free_subset(self):
        res = search_scalars(lambda k: -abs(k[0] - 2.0) - abs(k[1] - 2.0), grid=(0.0, 2.0), free=(0,))
        assert res.k == (2.0, 1.0, 1.0, 1.0)
