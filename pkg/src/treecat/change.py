"""Pairing detections from two acquisition epochs for change tracking.

Detections of epoch A and epoch B are matched one-to-one within a pairing
radius; matched detections become "present in both" pairs, leftovers become
candidate removed (A only) or new (B only) trees. Emitted pairs are then
thinned so that no two lie within the radius of each other.

Classifying a pair (same / new / removed) happens upstream; this module only
builds the pairs and the labeled train/validation/test splits.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, ParseError, UnknownLabel, UnlabeledPair
from .evaluation import CHANGE_CLASSES
from .geo import GeoPoint, local_xy
from .store import exact_degrees

log = logging.getLogger(__name__)

PAIR_RADIUS = 4.0
CHANGE_SPLITS = (0.64, 0.16, 0.20)
SPLIT_NAMES = ("train", "validation", "test")


@dataclass(frozen=True, slots=True)
class ChangePair:
    id: str
    geo: GeoPoint
    present_in_a: bool
    present_in_b: bool
    epoch_a: str | None = None
    epoch_b: str | None = None
    label: str | None = None
    score_a: float | None = None
    score_b: float | None = None

    def __post_init__(self):
        if not (self.present_in_a or self.present_in_b):
            raise ValueError("a change pair must be present in at least one epoch")
        if self.label is not None:
            if self.label not in CHANGE_CLASSES:
                raise UnknownLabel(f"unknown change label {self.label!r}")
            if self.label == "new" and self.present_in_a:
                raise ValueError("a new tree cannot be present in the first epoch")
            if self.label == "removed" and self.present_in_b:
                raise ValueError("a removed tree cannot be present in the second epoch")

    @property
    def score(self) -> float:
        return max(s for s in (self.score_a, self.score_b) if s is not None)


@dataclass
class EpochMatch:
    pairs: list  # (index in a, index in b, distance m)
    unmatched_a: list
    unmatched_b: list


def _planar(dets_a, dets_b):
    pts = [d.geo for d in dets_a] + [d.geo for d in dets_b]
    if not pts:
        return np.empty((0, 2)), np.empty((0, 2))
    lat = np.array([p.lat for p in pts])
    lng = np.array([p.lng for p in pts])
    x, y = local_xy(lat, lng, GeoPoint(float(lat.mean()), float(lng.mean())))
    xy = np.column_stack([x, y])
    return xy[: len(dets_a)], xy[len(dets_a):]


def match_epochs(dets_a, dets_b, pair_radius: float = PAIR_RADIUS) -> EpochMatch:
    """One-to-one matching within ``pair_radius``.

    Candidate pairs are taken closest first; equal distances prefer the pair
    with the higher combined score. Swapping the epochs yields the same
    matching with the roles swapped.
    """
    if not pair_radius > 0:
        raise ConfigError("pairing radius must be positive")
    xa, xb = _planar(dets_a, dets_b)
    cand = []
    if len(xa) and len(xb):
        for i, js in enumerate(cKDTree(xb).query_ball_point(xa, pair_radius)):
            for j in js:
                d = float(np.hypot(*(xa[i] - xb[j])))
                if d <= pair_radius:
                    cand.append((d, -(dets_a[i].score + dets_b[j].score), i, j))
    cand.sort()
    used_a, used_b = set(), set()
    pairs = []
    for d, _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j, d))
    ua = [i for i in range(len(dets_a)) if i not in used_a]
    ub = [j for j in range(len(dets_b)) if j not in used_b]
    return EpochMatch(pairs, ua, ub)


def _midpoint(p: GeoPoint, q: GeoPoint) -> GeoPoint:
    dl = (q.lng - p.lng + math.pi) % (2 * math.pi) - math.pi
    lng = (p.lng + dl / 2 + math.pi) % (2 * math.pi) - math.pi
    return GeoPoint((p.lat + q.lat) / 2, lng)


def pair_epochs(dets_a, dets_b, pair_radius: float = PAIR_RADIUS, epoch_a=None, epoch_b=None,
                dedup: bool = True) -> list[ChangePair]:
    """Per-location pairs across two epochs, with double entries suppressed.

    A matched pair sits at the midpoint of its two detections. When
    ``dedup`` is set, pairs are visited (both-present first, then by
    descending score) and any pair within ``pair_radius`` of an already kept
    one is dropped. Ids are assigned in (lat, lng) order.
    """
    m = match_epochs(dets_a, dets_b, pair_radius)
    raw = []
    for i, j, _ in m.pairs:
        a, b = dets_a[i], dets_b[j]
        raw.append((_midpoint(a.geo, b.geo), True, True, a.score, b.score))
    for i in m.unmatched_a:
        raw.append((dets_a[i].geo, True, False, dets_a[i].score, None))
    for j in m.unmatched_b:
        raw.append((dets_b[j].geo, False, True, None, dets_b[j].score))

    def best(r):
        return max(s for s in (r[3], r[4]) if s is not None)

    if dedup and raw:
        raw.sort(key=lambda r: (not (r[1] and r[2]), -best(r), r[0].lat, r[0].lng))
        lat = np.array([r[0].lat for r in raw])
        lng = np.array([r[0].lng for r in raw])
        x, y = local_xy(lat, lng, GeoPoint(float(lat.mean()), float(lng.mean())))
        xy = np.column_stack([x, y])
        kept = []
        for k in range(len(raw)):
            if kept:
                d = np.hypot(*(xy[kept] - xy[k]).T)
                if np.any(d <= pair_radius):
                    continue
            kept.append(k)
        dropped = len(raw) - len(kept)
        if dropped:
            log.info("suppressed %d double entr%s", dropped, "y" if dropped == 1 else "ies")
        raw = [raw[k] for k in kept]
    raw.sort(key=lambda r: (r[0].lat, r[0].lng))
    return [
        ChangePair(f"c{n:05d}", g, pa, pb, epoch_a, epoch_b, None, sa, sb)
        for n, (g, pa, pb, sa, sb) in enumerate(raw)
    ]


# ---------------------------------------------------------------------------
# labeled splits


@dataclass
class ChangeDataset:
    labels: dict  # pair id -> label
    splits: dict  # split name -> list of pair ids
    folds: list  # list of lists of pair ids

    def manifest(self) -> dict:
        return {"splits": self.splits, "folds": self.folds, "labels": self.labels}

    def fold_splits(self):
        """Yield ``(train ids, held-out ids)`` for each fold."""
        for k, held in enumerate(self.folds):
            rest = [pid for j, f in enumerate(self.folds) if j != k for pid in f]
            yield rest, list(held)


def split_counts(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment of ``n`` items to ``ratios``."""
    r = np.asarray(ratios, dtype=float)
    if r.ndim != 1 or np.any(r < 0) or r.sum() <= 0:
        raise ConfigError("split ratios must be non-negative with a positive sum")
    exact = n * r / r.sum()
    base = np.floor(exact).astype(int)
    rest = n - int(base.sum())
    order = sorted(range(len(r)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:rest]:
        base[i] += 1
    return base.tolist()


def assemble_change_dataset(pairs, labels, ratios=CHANGE_SPLITS, seed: int = 0, balance: bool = False,
                            n_folds: int = 5) -> ChangeDataset:
    """Seeded stratified splits of labeled pairs.

    ``labels`` maps pair id to label. With ``balance`` every class is
    subsampled to the size of the rarest one. Each class is split on its own,
    so class proportions per split stay within one sample of the ratios.
    """
    if len(ratios) != len(SPLIT_NAMES):
        raise ConfigError(f"need {len(SPLIT_NAMES)} split ratios")
    ids = [p.id if isinstance(p, ChangePair) else str(p) for p in pairs]
    by_class = defaultdict(list)
    for pid in ids:
        if pid not in labels:
            raise UnlabeledPair(f"pair {pid!r} has no label")
        lab = labels[pid]
        if lab not in CHANGE_CLASSES:
            raise UnknownLabel(f"unknown change label {lab!r} for pair {pid!r}")
        by_class[lab].append(pid)
    rng = np.random.default_rng(seed)
    classes = [c for c in CHANGE_CLASSES if c in by_class]
    pools = {c: [by_class[c][i] for i in rng.permutation(len(by_class[c]))] for c in classes}
    if balance:
        if len(classes) < 2:
            warnings.warn("balancing needs at least two classes; keeping all pairs", stacklevel=2)
        else:
            n_min = min(len(v) for v in pools.values())
            pools = {c: v[:n_min] for c, v in pools.items()}
    splits = {name: [] for name in SPLIT_NAMES}
    folds = [[] for _ in range(n_folds)]
    offset = 0
    for c in classes:
        members = pools[c]
        start = 0
        for name, cnt in zip(SPLIT_NAMES, split_counts(len(members), ratios)):
            splits[name].extend(members[start:start + cnt])
            start += cnt
        for pos, pid in enumerate(members):
            folds[(offset + pos) % n_folds].append(pid)
        offset += len(members)
    kept = {pid for v in pools.values() for pid in v}
    return ChangeDataset({pid: labels[pid] for pid in ids if pid in kept}, splits, folds)


# ---------------------------------------------------------------------------
# files


def write_pairs(pairs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            rec = {
                "id": p.id,
                "lat_deg": exact_degrees(p.geo.lat),
                "lng_deg": exact_degrees(p.geo.lng),
                "lat_rad": p.geo.lat,
                "lng_rad": p.geo.lng,
                "present_in_a": p.present_in_a,
                "present_in_b": p.present_in_b,
                "epoch_a": p.epoch_a,
                "epoch_b": p.epoch_b,
                "label": p.label,
                "score_a": p.score_a,
                "score_b": p.score_b,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_pairs(path) -> list[ChangePair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                o = json.loads(raw)
                if "lat_rad" in o:
                    geo = GeoPoint(float(o["lat_rad"]), float(o["lng_rad"]))
                else:
                    geo = GeoPoint.from_degrees(float(o["lat_deg"]), float(o["lng_deg"]))
                out.append(
                    ChangePair(
                        str(o["id"]), geo, bool(o["present_in_a"]), bool(o["present_in_b"]),
                        o.get("epoch_a"), o.get("epoch_b"), o.get("label"),
                        o.get("score_a"), o.get("score_b"),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(f"bad pair record: {exc}", lineno, path) from None
    return out


def read_labels(path) -> dict:
    """JSON Lines of ``{"id": ..., "label": ...}``; also used for predictions."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                o = json.loads(raw)
                out[str(o["id"])] = str(o["label"])
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise ParseError(f"bad label record: {exc}", lineno, path) from None
    return out


def write_labels(labels: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pid, lab in labels.items():
            fh.write(json.dumps({"id": pid, "label": lab}) + "\n")


def write_manifest(ds: ChangeDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(ds.manifest(), fh, indent=2, sort_keys=True)
