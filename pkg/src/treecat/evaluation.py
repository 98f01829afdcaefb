"""Detection, species and change-tracking metrics, plus the lesion harness.

Detections count as true positives within a fixed radius (4 m by default)
of a ground-truth tree, and every detection and tree is matched at most
once. Matching is greedy in descending detection score, each detection
claiming the nearest unclaimed tree in range, which makes the matching of
any score-threshold prefix consistent with the full one.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .crf import DEFAULT_GRID, CrfModel, Prepared, greedy_infer, search_scalars
from .errors import EmptyGroundTruth, EmptyPredictions, UnknownLabel
from .geo import GeoPoint, local_xy

MATCH_RADIUS = 4.0


# ---------------------------------------------------------------------------
# matching


@dataclass
class MatchResult:
    pairs: list  # (detection index, ground-truth index, distance in meters)
    false_positives: list
    false_negatives: list
    order: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    tp_flags: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))

    @property
    def tp(self) -> int:
        return len(self.pairs)


def _xy(items, anchor):
    lat = np.array([it.geo.lat for it in items], dtype=float)
    lng = np.array([it.geo.lng for it in items], dtype=float)
    if lat.size == 0:
        return np.empty((0, 2))
    x, y = local_xy(lat, lng, anchor)
    return np.column_stack([x, y])


def _anchor(*groups) -> GeoPoint:
    pts = [it.geo for g in groups for it in g]
    if not pts:
        return GeoPoint(0.0, 0.0)
    return GeoPoint(float(np.mean([p.lat for p in pts])), float(np.mean([p.lng for p in pts])))


def match_xy(det_xy, scores, gt_xy, radius: float) -> MatchResult:
    """Greedy one-to-one matching on planar coordinates (meters)."""
    if not radius > 0:
        raise ValueError("match radius must be positive")
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    order = np.lexsort((np.arange(n), -scores)) if n else np.empty(0, dtype=np.int64)
    claimed = np.zeros(len(gt_xy), dtype=bool)
    flags = np.zeros(n, dtype=bool)
    pairs, fps = [], []
    tree = cKDTree(gt_xy) if len(gt_xy) else None
    for pos, i in enumerate(order):
        best = -1
        best_d = math.inf
        if tree is not None:
            for j in tree.query_ball_point(det_xy[i], radius):
                if claimed[j]:
                    continue
                d = float(np.hypot(*(det_xy[i] - gt_xy[j])))
                if d <= radius and (d < best_d or (d == best_d and j < best)):
                    best, best_d = j, d
        if best >= 0:
            claimed[best] = True
            flags[pos] = True
            pairs.append((int(i), int(best), best_d))
        else:
            fps.append(int(i))
    fns = [int(j) for j in np.flatnonzero(~claimed)]
    return MatchResult(pairs, fps, fns, order, flags)


def match_detections(detections, ground_truth, radius: float = MATCH_RADIUS, anchor=None) -> MatchResult:
    """Match scored detections (``.geo``, ``.score``) to ground-truth trees (``.geo``)."""
    if anchor is None:
        anchor = _anchor(ground_truth, detections)
    det_xy = _xy(detections, anchor)
    gt_xy = _xy(ground_truth, anchor)
    return match_xy(det_xy, [d.score for d in detections], gt_xy, radius)


# ---------------------------------------------------------------------------
# precision / recall


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "precision", "recall"])
            for t, p, r in zip(self.thresholds, self.precision, self.recall):
                w.writerow([repr(float(t)), repr(float(p)), repr(float(r))])


def average_precision(precision, recall) -> float:
    """Area under the precision envelope (all-points interpolation)."""
    if len(recall) == 0:
        return 0.0
    mrec = np.concatenate([[0.0], recall])
    mpre = np.maximum.accumulate(np.asarray(precision, dtype=float)[::-1])[::-1]
    return float(np.sum(np.diff(mrec) * mpre))


def pr_from_matching(scores, match: MatchResult, n_gt: int):
    scores = np.asarray(scores, dtype=float)
    if n_gt <= 0:
        raise EmptyGroundTruth("precision/recall need at least one ground-truth tree")
    if scores.size == 0:
        return PRCurve(np.empty(0), np.empty(0), np.empty(0)), 0.0
    s_sorted = scores[match.order]
    tp = np.cumsum(match.tp_flags)
    n = np.arange(1, s_sorted.size + 1)
    # one point per distinct threshold: the last detection of each tied group
    last = np.append(s_sorted[1:] != s_sorted[:-1], True)
    prec = tp[last] / n[last]
    rec = tp[last] / n_gt
    curve = PRCurve(s_sorted[last], prec, rec)
    # integer recall steps keep a perfect ranking at exactly 1.0
    steps = np.diff(np.concatenate([[0], tp[last]]))
    envelope = np.maximum.accumulate(prec[::-1])[::-1]
    return curve, float(np.sum(steps * envelope) / n_gt)


def pr_curve_and_map(detections, ground_truth, radius: float = MATCH_RADIUS, anchor=None):
    """Precision-recall curve over all score thresholds and its average precision."""
    if len(ground_truth) == 0:
        raise EmptyGroundTruth("precision/recall need at least one ground-truth tree")
    match = match_detections(detections, ground_truth, radius, anchor)
    return pr_from_matching([d.score for d in detections], match, len(ground_truth))


def best_f1_threshold(scores, match: MatchResult, n_gt: int):
    """Score threshold maximizing F1; ties go to the higher threshold."""
    curve, _ = pr_from_matching(scores, match, n_gt)
    if curve.thresholds.size == 0:
        return math.inf, 0.0
    p, r = curve.precision, curve.recall
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    best = f1.max()
    i = int(np.flatnonzero(f1 == best)[0])  # thresholds descend, first = highest
    return float(curve.thresholds[i]), float(best)


class DetectionEvaluator:
    """Reusable mAP evaluation of one candidate set against its ground truth."""

    def __init__(self, prepared: Prepared, ground_truth, radius: float = MATCH_RADIUS):
        if len(ground_truth) == 0:
            raise EmptyGroundTruth("evaluation scene has no ground-truth trees")
        self.prepared = prepared
        self.radius = radius
        self.n_gt = len(ground_truth)
        self.gt_xy = _xy(ground_truth, prepared.anchor)

    def run(self, model: CrfModel, tau_2=-math.inf):
        result = greedy_infer(None, model, tau_2=tau_2, prepared=self.prepared)
        det_xy = self.prepared.xy[result.order] if len(result.order) else np.empty((0, 2))
        scores = np.array([r.score for r in result.records])
        match = match_xy(det_xy, scores, self.gt_xy, self.radius)
        curve, ap = pr_from_matching(scores, match, self.n_gt)
        return result, match, curve, ap

    def map(self, model: CrfModel) -> float:
        return self.run(model)[3]


# ---------------------------------------------------------------------------
# lesion studies

LESION_VARIANTS = ("full", "no-aerial", "no-streetview", "no-map", "no-spatial", "no-crf-learning")


def lesion_suite(base: CrfModel, validation: DetectionEvaluator, test: DetectionEvaluator, grid=DEFAULT_GRID):
    """Re-evaluate the model with one component removed at a time.

    Every lesioned variant re-learns the scalars of its remaining terms on
    the validation set; ``no-crf-learning`` sets every scalar to 1.
    """
    table = {}
    for name in LESION_VARIANTS:
        if name == "full":
            model = base
            val = validation.map(model)
        elif name == "no-crf-learning":
            model = base.with_k((1.0, 1.0, 1.0, 1.0))
            val = validation.map(model)
        else:
            start = [1.0, 1.0, 1.0, 1.0]
            free = [0, 1, 2, 3]
            template = base
            if name == "no-spatial":
                template = replace(base, mode="nms")
                free.remove(2)
            else:
                dropped = {"no-aerial": 0, "no-streetview": 1, "no-map": 3}[name]
                start[dropped] = 0.0
                free.remove(dropped)
            res = search_scalars(
                lambda k, m=template: validation.map(m.with_k(k)), tuple(start), grid, tuple(free)
            )
            model, val = template.with_k(res.k), res.score
        table[name] = {
            "k": list(model.k),
            "mode": model.mode,
            "validation_map": val,
            "test_map": test.map(model),
        }
    return table


# ---------------------------------------------------------------------------
# species


@dataclass
class SpeciesReport:
    dataset_precision: float
    average_class_precision: float
    per_class: dict
    classes: list  # by descending ground-truth frequency
    cumulative_dataset: list
    cumulative_average: list

    def to_dict(self) -> dict:
        return {
            "dataset_precision": self.dataset_precision,
            "average_class_precision": self.average_class_precision,
            "per_class_precision": self.per_class,
            "classes_by_frequency": self.classes,
            "cumulative_dataset_precision": self.cumulative_dataset,
            "cumulative_average_class_precision": self.cumulative_average,
        }


def _species_core(pred, true, classes):
    correct = sum(p == t for p, t in zip(pred, true))
    dataset = correct / len(true)
    per = {}
    for c in classes:
        predicted = [t for p, t in zip(pred, true) if p == c]
        per[c] = (sum(t == c for t in predicted) / len(predicted)) if predicted else 0.0
    avg = float(np.mean([per[c] for c in classes])) if classes else 0.0
    return dataset, avg, per


def species_metrics(predictions, ground_truth) -> SpeciesReport:
    """Dataset precision (global hit rate) and average per-class precision.

    A class that is never predicted has precision 0. Cumulative curves
    evaluate both metrics on the test samples of the n most frequent
    species, n = 1..N.
    """
    pred = list(predictions)
    true = list(ground_truth)
    if not pred:
        raise EmptyPredictions("no species predictions")
    if len(pred) != len(true):
        raise ValueError("predictions and labels differ in length")
    freq = Counter(true)
    vocab = set(true) | set(pred)
    classes = sorted(vocab, key=lambda c: (-freq.get(c, 0), c))
    dataset, avg, per = _species_core(pred, true, classes)
    cum_d, cum_a = [], []
    ranked = [c for c in classes if freq.get(c, 0) > 0]
    for n in range(1, len(ranked) + 1):
        top = set(ranked[:n])
        sel = [(p, t) for p, t in zip(pred, true) if t in top]
        d, a, _ = _species_core([p for p, _ in sel], [t for _, t in sel], ranked[:n])
        cum_d.append(d)
        cum_a.append(a)
    return SpeciesReport(dataset, avg, per, classes, cum_d, cum_a)


# ---------------------------------------------------------------------------
# change tracking

CHANGE_CLASSES = ("same", "new", "removed")
BINARY_CLASSES = ("same", "changed")


def collapse_binary(labels):
    out = []
    for lab in labels:
        if lab == "same":
            out.append("same")
        elif lab in ("new", "removed", "changed"):
            out.append("changed")
        else:
            raise UnknownLabel(f"unknown change label {lab!r}")
    return out


@dataclass
class ConfusionMatrix:
    """Counts with true classes as rows and predicted classes as columns."""

    classes: tuple
    counts: np.ndarray

    @classmethod
    def from_counts(cls, classes, counts) -> ConfusionMatrix:
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (len(classes), len(classes)) or np.any(counts < 0):
            raise ValueError("confusion counts must be a non-negative square matrix")
        return cls(tuple(classes), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def precision(self) -> np.ndarray:
        col = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), col, out=np.zeros(len(self.classes)), where=col > 0)

    def recall(self) -> np.ndarray:
        row = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), row, out=np.zeros(len(self.classes)), where=row > 0)

    @property
    def moa(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "counts": self.counts.tolist(),
            "precision": dict(zip(self.classes, self.precision().tolist())),
            "recall": dict(zip(self.classes, self.recall().tolist())),
            "moa": self.moa,
            "total": self.total,
        }


def change_metrics(pairs, classes=CHANGE_CLASSES) -> ConfusionMatrix:
    """Confusion matrix from ``(true, predicted)`` label pairs."""
    classes = tuple(classes)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in pairs:
        if t not in pos or p not in pos:
            raise UnknownLabel(f"label outside {classes}: {t!r} / {p!r}")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(classes, counts)


def write_json_report(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
