import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecat.change import (
    ChangePair,
    assemble_change_dataset,
    match_epochs,
    pair_epochs,
    read_labels,
    read_pairs,
    split_counts,
    write_labels,
    write_manifest,
    write_pairs,
)
from treecat.errors import ConfigError, ParseError, UnknownLabel, UnlabeledPair
from treecat.geo import GeoPoint, local_xy
from treecat.synth import _to_geo

ANCHOR = GeoPoint.from_degrees(34.1478, -118.1445)
CLASS_COUNTS = {"same": 200, "new": 131, "removed": 148}


class Det:
    def __init__(self, geo, score):
        self.geo, self.score = geo, score

    def __repr__(self):
        return f"Det({self.score})"


def dets(xy, scores=None):
    xy = np.asarray(xy, float).reshape(-1, 2)
    lat, lng = _to_geo(xy[:, 0], xy[:, 1], ANCHOR)
    scores = np.ones(len(xy)) if scores is None else scores
    return [Det(GeoPoint(float(a), float(b)), float(s)) for a, b, s in zip(lat, lng, scores)]


def planar(pairs):
    lat = np.array([p.geo.lat for p in pairs])
    lng = np.array([p.geo.lng for p in pairs])
    x, y = local_xy(lat, lng, ANCHOR)
    return np.column_stack([x, y])


def reference_pairs():
    labels = {}
    n = 0
    for lab, cnt in CLASS_COUNTS.items():
        for _ in range(cnt):
            labels[f"c{n:05d}"] = lab
            n += 1
    return list(labels), labels


class TestPairing:
    def test_identical_and_single(self):
        a = dets([[0.0, 0.0]])
        assert [(p.present_in_a, p.present_in_b) for p in pair_epochs(a, dets([[0.0, 0.0]]))] == [(True, True)]
        assert [(p.present_in_a, p.present_in_b) for p in pair_epochs(a, [])] == [(True, False)]
        assert [(p.present_in_a, p.present_in_b) for p in pair_epochs([], a)] == [(False, True)]
        assert pair_epochs([], []) == []

    def test_midpoint(self):
        p = pair_epochs(dets([[0.0, 0.0]]), dets([[2.0, 0.0]]))
        assert len(p) == 1
        np.testing.assert_allclose(planar(p)[0], [1.0, 0.0], atol=1e-6)

    def test_counts_against_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            xa = rng.uniform(0, 200, (int(rng.integers(0, 25)), 2))
            kept = xa[rng.random(len(xa)) < 0.7]
            xb = np.vstack([kept, rng.uniform(0, 200, (int(rng.integers(0, 8)), 2))])
            xb = xb + rng.normal(0, 0.7, xb.shape)
            da, db = dets(xa, rng.random(len(xa))), dets(xb, rng.random(len(xb)))
            m = match_epochs(da, db)
            # oracle: same closest-first rule over all pairs
            cand = sorted(
                (math.dist(xa[i], xb[j]), -(da[i].score + db[j].score), i, j)
                for i in range(len(xa)) for j in range(len(xb)) if math.dist(xa[i], xb[j]) <= 4.0
            )
            ua, ub, pairs = set(), set(), []
            for _, _, i, j in cand:
                if i not in ua and j not in ub:
                    ua.add(i)
                    ub.add(j)
                    pairs.append((i, j))
            assert [(i, j) for i, j, _ in m.pairs] == pairs
            assert len(m.pairs) + len(m.unmatched_a) == len(xa)
            assert len(m.pairs) + len(m.unmatched_b) == len(xb)
            raw = pair_epochs(da, db, dedup=False)
            assert len(raw) == len(m.pairs) + len(m.unmatched_a) + len(m.unmatched_b)

    def test_no_two_pairs_within_radius(self):
        rng = np.random.default_rng(1)
        xa = rng.uniform(0, 60, (40, 2))
        xb = rng.uniform(0, 60, (40, 2))
        pairs = pair_epochs(dets(xa, rng.random(40)), dets(xb, rng.random(40)))
        xy = planar(pairs)
        d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
        np.fill_diagonal(d, np.inf)
        assert d.min() > 4.0

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetric_up_to_flag_swap(self, seed):
        rng = np.random.default_rng(seed)
        xa = rng.uniform(0, 80, (int(rng.integers(0, 15)), 2))
        xb = np.vstack([xa[: len(xa) // 2] + rng.normal(0, 1, (len(xa) // 2, 2)), rng.uniform(0, 80, (3, 2))])
        da, db = dets(xa, rng.random(len(xa))), dets(xb, rng.random(len(xb)))
        ab = {(p.geo.lat, p.geo.lng, p.present_in_a, p.present_in_b) for p in pair_epochs(da, db)}
        ba = {(p.geo.lat, p.geo.lng, p.present_in_b, p.present_in_a) for p in pair_epochs(db, da)}
        assert ab == ba

    def test_bad_radius(self):
        with pytest.raises(ConfigError):
            match_epochs([], [], 0.0)


class TestChangePair:
    def test_label_consistency(self):
        with pytest.raises(ValueError):
            ChangePair("x", ANCHOR, False, False)
        with pytest.raises(ValueError):
            ChangePair("x", ANCHOR, True, True, label="new")
        with pytest.raises(ValueError):
            ChangePair("x", ANCHOR, True, True, label="removed")
        with pytest.raises(UnknownLabel):
            ChangePair("x", ANCHOR, True, True, label="moved")
        assert ChangePair("x", ANCHOR, True, False, score_a=0.5).score == 0.5


class TestDataset:
    def test_split_counts_largest_remainder(self):
        assert split_counts(10, (0.64, 0.16, 0.20)) == [6, 2, 2]
        assert sum(split_counts(479, (0.64, 0.16, 0.20))) == 479
        with pytest.raises(ConfigError):
            split_counts(5, (0.0, 0.0))

    def test_reference_split_sizes(self):
        ids, labels = reference_pairs()
        ds = assemble_change_dataset(ids, labels, seed=0)
        sizes = [len(ds.splits[n]) for n in ("train", "validation", "test")]
        for got, want in zip(sizes, (306, 77, 96)):
            assert abs(got - want) <= 1
        assert sum(sizes) == 479
        # per class, each split is within one sample of its ratio
        for lab, cnt in CLASS_COUNTS.items():
            for name, r in zip(("train", "validation", "test"), (0.64, 0.16, 0.20)):
                k = sum(labels[p] == lab for p in ds.splits[name])
                assert abs(k - r * cnt) < 1.0

    def test_folds_partition(self):
        ids, labels = reference_pairs()
        ds = assemble_change_dataset(ids, labels, seed=3)
        flat = [p for f in ds.folds for p in f]
        assert sorted(flat) == sorted(ids)
        assert len(set(flat)) == len(flat)
        for train, held in ds.fold_splits():
            assert not set(train) & set(held)
            assert len(train) + len(held) == 479

    def test_seeded(self):
        ids, labels = reference_pairs()
        a = assemble_change_dataset(ids, labels, seed=1)
        b = assemble_change_dataset(ids, labels, seed=1)
        c = assemble_change_dataset(ids, labels, seed=2)
        assert a.splits == b.splits and a.splits != c.splits

    def test_balance(self):
        ids, labels = reference_pairs()
        ds = assemble_change_dataset(ids, labels, balance=True)
        assert len(ds.labels) == 3 * 131
        only = {i: "same" for i in ids[:10]}
        with pytest.warns(UserWarning):
            ds = assemble_change_dataset(ids[:10], only, balance=True)
        assert len(ds.labels) == 10

    def test_label_errors(self):
        with pytest.raises(UnlabeledPair):
            assemble_change_dataset(["a"], {})
        with pytest.raises(UnknownLabel):
            assemble_change_dataset(["a"], {"a": "moved"})


class TestFiles:
    def test_pairs_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        pairs = pair_epochs(dets(rng.uniform(0, 50, (10, 2)), rng.random(10)),
                            dets(rng.uniform(0, 50, (10, 2)), rng.random(10)), epoch_a="2011", epoch_b="2016")
        write_pairs(pairs, tmp_path / "p.jsonl")
        assert read_pairs(tmp_path / "p.jsonl") == pairs

    def test_bad_lines(self, tmp_path):
        p = tmp_path / "p.jsonl"
        p.write_text('{"id": "a"}\n')
        with pytest.raises(ParseError):
            read_pairs(p)
        p.write_text('{"id": "a", "label": "same"}\nnot json\n')
        with pytest.raises(ParseError) as exc:
            read_labels(p)
        assert exc.value.line == 2

    def test_labels_and_manifest(self, tmp_path):
        ids, labels = reference_pairs()
        write_labels(labels, tmp_path / "l.jsonl")
        assert read_labels(tmp_path / "l.jsonl") == labels
        write_manifest(assemble_change_dataset(ids, labels), tmp_path / "m.json")
        assert (tmp_path / "m.json").read_text().startswith("{")
