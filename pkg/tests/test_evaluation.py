import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecat.errors import EmptyGroundTruth, EmptyPredictions, UnknownLabel
from treecat.evaluation import (
    BINARY_CLASSES,
    CHANGE_CLASSES,
    ConfusionMatrix,
    PRCurve,
    best_f1_threshold,
    change_metrics,
    collapse_binary,
    match_detections,
    match_xy,
    pr_curve_and_map,
    pr_from_matching,
    species_metrics,
    write_json_report,
)
from treecat.geo import GeoPoint
from treecat.store import GroundTruthTree
from treecat.synth import _to_geo

ANCHOR = GeoPoint.from_degrees(34.1478, -118.1445)

BINARY_COUNTS = [[183, 17], [21, 258]]
THREE_CLASS_COUNTS = [[182, 5, 13], [4, 119, 8], [10, 2, 136]]


class Det:
    def __init__(self, geo, score):
        self.geo, self.score = geo, score


def geo_points(xy):
    xy = np.asarray(xy, float).reshape(-1, 2)
    lat, lng = _to_geo(xy[:, 0], xy[:, 1], ANCHOR)
    return [GeoPoint(float(a), float(b)) for a, b in zip(lat, lng)]


def trees(xy):
    return [GroundTruthTree(f"g{i}", g) for i, g in enumerate(geo_points(xy))]


def dets(xy, scores):
    return [Det(g, float(s)) for g, s in zip(geo_points(xy), scores)]


def brute_match(det_xy, scores, gt_xy, radius):
    """Same greedy rule, written as plain loops."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    taken, tp = set(), []
    for i in order:
        cand = [
            (math.dist(det_xy[i], gt_xy[j]), j)
            for j in range(len(gt_xy))
            if j not in taken and math.dist(det_xy[i], gt_xy[j]) <= radius
        ]
        if cand:
            _, j = min(cand)
            taken.add(j)
            tp.append(True)
        else:
            tp.append(False)
    return tp


class TestMatching:
    def test_double_match_is_one_tp_one_fp(self):
        gt = trees([[0.0, 0.0]])
        d = dets([[1.0, 0.0], [-2.0, 0.0]], [0.9, 0.8])
        m = match_detections(d, gt)
        assert m.tp == 1
        assert m.false_positives == [1] and m.false_negatives == []

    def test_radius_boundary(self):
        gt_xy = np.array([[0.0, 0.0]])
        assert match_xy(np.array([[4.0, 0.0]]), [1.0], gt_xy, 4.0).tp == 1
        assert match_xy(np.array([[4.0 + 1e-9, 0.0]]), [1.0], gt_xy, 4.0).tp == 0
        with pytest.raises(ValueError):
            match_xy(gt_xy, [1.0], gt_xy, 0.0)

    def test_against_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            gt_xy = rng.uniform(0, 40, (int(rng.integers(1, 15)), 2))
            det_xy = rng.uniform(0, 40, (int(rng.integers(0, 20)), 2))
            scores = rng.integers(0, 4, len(det_xy)).astype(float)  # many ties
            m = match_xy(det_xy, scores, gt_xy, 4.0)
            assert list(m.tp_flags) == brute_match(det_xy, list(scores), gt_xy, 4.0)
            assert len({j for _, j, _ in m.pairs}) == m.tp
            assert all(d <= 4.0 for _, _, d in m.pairs)
            assert m.tp + len(m.false_negatives) == len(gt_xy)
            assert m.tp + len(m.false_positives) == len(det_xy)


class TestAveragePrecision:
    def test_hand_staircase(self):
        gt = trees([[0.0, 0.0], [20.0, 0.0]])
        d = dets([[0.5, 0.0], [50.0, 0.0], [20.0, 1.0]], [0.9, 0.8, 0.7])
        curve, ap = pr_curve_and_map(d, gt)
        np.testing.assert_allclose(curve.precision, [1.0, 0.5, 2 / 3])
        np.testing.assert_allclose(curve.recall, [0.5, 0.5, 1.0])
        # 0.5 * 1 + 0.5 * 2/3
        assert ap == pytest.approx(5 / 6, abs=1e-12)

    def test_perfect_and_empty(self):
        xy = np.random.default_rng(1).uniform(0, 1000, (339, 2))
        _, ap = pr_curve_and_map(dets(xy, np.linspace(0, 1, 339)), trees(xy))
        assert ap == 1.0
        _, ap = pr_curve_and_map([], trees(xy))
        assert ap == 0.0
        with pytest.raises(EmptyGroundTruth):
            pr_curve_and_map(dets(xy, np.ones(339)), [])

    def test_ties_form_one_point(self):
        gt = trees([[0.0, 0.0], [20.0, 0.0]])
        d = dets([[0.0, 0.0], [50.0, 0.0], [20.0, 0.0]], [1.0, 1.0, 1.0])
        curve, ap = pr_curve_and_map(d, gt)
        assert curve.thresholds.size == 1
        assert ap == pytest.approx(2 / 3)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            gt_xy = rng.uniform(0, 200, (int(rng.integers(1, 30)), 2))
            jitter = rng.normal(0, 2.5, gt_xy.shape)
            clutter = rng.uniform(0, 200, (int(rng.integers(0, 20)), 2))
            det_xy = np.vstack([gt_xy + jitter, clutter])
            s = rng.normal(0, 1, len(det_xy))
            gt = trees(gt_xy)
            _, base = pr_curve_and_map(dets(det_xy, s), gt)
            for f in (lambda x: 3 * x + 7, np.exp, lambda x: np.tanh(x / 10), lambda x: x ** 3):
                _, ap = pr_curve_and_map(dets(det_xy, f(s)), gt)
                assert ap == pytest.approx(base, abs=1e-12)

    def test_best_f1(self):
        gt_xy = np.array([[0.0, 0.0], [20.0, 0.0], [40.0, 0.0]])
        det_xy = np.array([[0.0, 0.0], [20.0, 0.0], [90.0, 0.0], [40.0, 0.0], [70.0, 0.0]])
        s = np.array([5.0, 4.0, 3.0, 2.0, 1.0])
        m = match_xy(det_xy, s, gt_xy, 4.0)
        thr, f1 = best_f1_threshold(s, m, 3)
        # keeping the top four gives P = 3/4, R = 1
        assert thr == 2.0
        assert f1 == pytest.approx(2 * 0.75 / 1.75)
        exhaustive = max(
            2 * p * r / (p + r)
            for k in range(1, 6)
            for p, r in [(m.tp_flags[:k].sum() / k, m.tp_flags[:k].sum() / 3)]
            if p + r > 0
        )
        assert f1 == pytest.approx(exhaustive)

    def test_csv(self, tmp_path):
        PRCurve(np.array([2.0, 1.0]), np.array([1.0, 0.5]), np.array([0.5, 0.5])).to_csv(tmp_path / "pr.csv")
        lines = (tmp_path / "pr.csv").read_text().splitlines()
        assert lines == ["threshold,precision,recall", "2.0,1.0,0.5", "1.0,0.5,0.5"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=40), st.integers(0, 10))
def test_ap_bounded_by_recall(flags, missed):
    # detections ranked by score with the given hit pattern
    n_gt = sum(flags) + missed
    if n_gt == 0:
        return
    scores = np.arange(len(flags), 0, -1, dtype=float)
    from treecat.evaluation import MatchResult

    m = MatchResult([], [], [], np.arange(len(flags)), np.array(flags))
    _, ap = pr_from_matching(scores, m, n_gt)
    assert 0.0 <= ap <= sum(flags) / n_gt + 1e-12


class TestSpecies:
    def test_imbalanced_hand_case(self):
        true = ["A"] * 9 + ["B"]
        pred = ["A"] * 10
        r = species_metrics(pred, true)
        assert r.dataset_precision == pytest.approx(0.9)
        assert r.per_class == {"A": pytest.approx(0.9), "B": 0.0}
        assert r.average_class_precision == pytest.approx(0.45)

    def test_all_correct_and_single_class(self):
        r = species_metrics(["a", "b", "b"], ["a", "b", "b"])
        assert r.dataset_precision == r.average_class_precision == 1.0
        r = species_metrics(["a", "a", "a"], ["a", "a", "a"])
        assert r.dataset_precision == r.average_class_precision

    def test_cumulative_curves(self):
        true = ["x"] * 5 + ["y"] * 3 + ["z"] * 2
        pred = ["x"] * 5 + ["y", "y", "x"] + ["z", "y"]
        r = species_metrics(pred, true)
        assert r.classes == ["x", "y", "z"]
        assert r.cumulative_dataset[0] == 1.0
        assert r.cumulative_dataset[-1] == r.dataset_precision == pytest.approx(0.8)
        assert len(r.cumulative_average) == 3

    def test_errors(self):
        with pytest.raises(EmptyPredictions):
            species_metrics([], [])
        with pytest.raises(ValueError):
            species_metrics(["a"], ["a", "b"])


class TestChange:
    def test_binary_counts(self):
        cm = ConfusionMatrix.from_counts(BINARY_CLASSES, BINARY_COUNTS)
        np.testing.assert_allclose(cm.precision(), [0.897, 0.938], atol=5e-4)
        np.testing.assert_allclose(cm.recall(), [0.915, 0.925], atol=5e-4)
        assert cm.moa == pytest.approx(0.9206, abs=1e-4)
        assert cm.total == 479

    def test_three_class_counts(self):
        cm = ConfusionMatrix.from_counts(CHANGE_CLASSES, THREE_CLASS_COUNTS)
        np.testing.assert_array_equal(np.diag(cm.counts), [182, 119, 136])
        np.testing.assert_allclose(cm.precision(), [0.929, 0.944, 0.866], atol=5e-4)
        np.testing.assert_allclose(cm.recall(), [0.910, 0.908, 0.919], atol=5e-4)
        assert cm.moa == pytest.approx(0.9123, abs=1e-4)

    def test_from_pairs_matches_counts(self):
        pairs = []
        for i, t in enumerate(CHANGE_CLASSES):
            for j, p in enumerate(CHANGE_CLASSES):
                pairs += [(t, p)] * THREE_CLASS_COUNTS[i][j]
        cm = change_metrics(pairs)
        np.testing.assert_array_equal(cm.counts, THREE_CLASS_COUNTS)
        np.testing.assert_array_equal(cm.counts.sum(axis=1), [200, 131, 148])

    def test_collapse(self):
        assert collapse_binary(["same", "new", "removed", "changed"]) == ["same", "changed", "changed", "changed"]
        with pytest.raises(UnknownLabel):
            collapse_binary(["moved"])
        with pytest.raises(UnknownLabel):
            change_metrics([("same", "moved")])

    def test_bad_counts(self):
        with pytest.raises(ValueError):
            ConfusionMatrix.from_counts(BINARY_CLASSES, [[1, -1], [0, 0]])
        with pytest.raises(ValueError):
            ConfusionMatrix.from_counts(BINARY_CLASSES, [[1, 2, 3]])

    def test_report_json(self, tmp_path):
        cm = ConfusionMatrix.from_counts(BINARY_CLASSES, BINARY_COUNTS)
        write_json_report(cm.to_dict(), tmp_path / "r.json")
        back = json.loads((tmp_path / "r.json").read_text())
        assert back["counts"] == BINARY_COUNTS
        assert back["moa"] == pytest.approx(441 / 479)

    @settings(max_examples=100)
    @given(st.lists(st.tuples(st.sampled_from(CHANGE_CLASSES), st.sampled_from(CHANGE_CLASSES)), min_size=1))
    def test_row_sums_and_trace(self, pairs):
        cm = change_metrics(pairs)
        for i, c in enumerate(CHANGE_CLASSES):
            assert cm.counts[i].sum() == sum(t == c for t, _ in pairs)
        assert cm.moa == pytest.approx(sum(t == p for t, p in pairs) / len(pairs))


def test_matching_is_maximal():
    # no unmatched detection has an unclaimed tree within the radius
    rng = np.random.default_rng(5)
    for _ in range(30):
        gt_xy = rng.uniform(0, 30, (8, 2))
        det_xy = rng.uniform(0, 30, (10, 2))
        m = match_xy(det_xy, rng.random(10), gt_xy, 4.0)
        free = set(m.false_negatives)
        for i in m.false_positives:
            assert not any(math.dist(det_xy[i], gt_xy[j]) <= 4.0 for j in free)
