"""Detection-set CRF: potentials, piecewise training and greedy inference.

The log-probability of a set of trees T (up to a constant) is

    sum over t in T of  k1*psi(t) + k2*phi(t) + k3*spatial(t, T - {t}) + k4*map(t)

``psi``/``phi`` are aerial and street-view detector scores, ``map`` is a
learned histogram over distance to the nearest road and ``spatial`` a learned
histogram over distance to the nearest other tree (or a hard suppression
radius in ``nms`` mode). A tree without neighbors falls in the last,
open-ended spacing bin.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ConfigError, DegenerateBinsWarning
from .geo import GeoPoint, local_xy
from .scoring import ScoreProviderConfig
from .store import DetectionRecord

FORMAT_VERSION = 1
DEFAULT_EDGES = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0)
DEFAULT_GRID = (0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0)


@dataclass(frozen=True)
class PriorHistogram:
    """Weights over quantized distances.

    ``edges`` split [0, inf) into ``len(edges) + 1`` bins: [0, e1), [e1, e2),
    ..., [e_last, inf).
    """

    edges: tuple
    weights: tuple

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size == 0 or np.any(e <= 0) or np.any(np.diff(e) <= 0):
            raise ConfigError("bin edges must be positive and strictly increasing")
        if len(self.weights) != e.size + 1:
            raise ConfigError(f"need {e.size + 1} weights, got {len(self.weights)}")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigError("histogram weights must be finite")
        object.__setattr__(self, "edges", tuple(float(v) for v in e))
        object.__setattr__(self, "weights", tuple(float(v) for v in self.weights))

    @classmethod
    def zeros(cls, edges=DEFAULT_EDGES) -> PriorHistogram:
        return cls(tuple(edges), (0.0,) * (len(edges) + 1))

    @property
    def n_bins(self) -> int:
        return len(self.weights)

    def bin_index(self, d):
        return np.searchsorted(np.asarray(self.edges), d, side="right")

    def value(self, d):
        return np.asarray(self.weights)[self.bin_index(d)]

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "weights": list(self.weights)}

    @classmethod
    def from_dict(cls, d) -> PriorHistogram:
        return cls(tuple(d["edges"]), tuple(d["weights"]))


@dataclass(frozen=True)
class CrfModel:
    k: tuple = (1.0, 1.0, 1.0, 1.0)
    spatial: PriorHistogram = field(default_factory=PriorHistogram.zeros)
    map_prior: PriorHistogram = field(default_factory=PriorHistogram.zeros)
    tau_2: float = -math.inf
    mode: str = "learned"
    tau_nms: float = 4.0
    providers: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.k) != 4 or any(not (v >= 0 and math.isfinite(v)) for v in self.k):
            raise ConfigError(f"scalars must be four finite non-negative values, got {self.k}")
        if self.mode not in ("learned", "nms"):
            raise ConfigError(f"unknown spatial mode {self.mode!r}")
        if self.mode == "nms" and not self.tau_nms > 0:
            raise ConfigError("suppression radius must be positive")
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))

    def with_k(self, k) -> CrfModel:
        return replace(self, k=tuple(k))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "k": list(self.k),
            "spatial": self.spatial.to_dict(),
            "map": self.map_prior.to_dict(),
            "tau_2": None if self.tau_2 == -math.inf else self.tau_2,
            "mode": self.mode,
            "tau_nms": self.tau_nms,
            "providers": {name: cfg.to_dict() for name, cfg in self.providers.items()},
        }

    @classmethod
    def from_dict(cls, d) -> CrfModel:
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported model format version {version!r}")
        tau_2 = d.get("tau_2")
        return cls(
            tuple(d["k"]),
            PriorHistogram.from_dict(d["spatial"]),
            PriorHistogram.from_dict(d["map"]),
            -math.inf if tau_2 is None else float(tau_2),
            d.get("mode", "learned"),
            float(d.get("tau_nms", 4.0)),
            {n: ScoreProviderConfig.from_dict(c) for n, c in d.get("providers", {}).items()},
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> CrfModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# potentials


def frame_anchor(cands) -> GeoPoint:
    """Reference point of the planar frame used for tree-to-tree distances."""
    lat = np.array([c.geo.lat for c in cands])
    lng = np.array([c.geo.lng for c in cands])
    if lat.size == 0:
        return GeoPoint(0.0, 0.0)
    return GeoPoint(float(lat.mean()), float(lng.mean()))


def planar(cands, anchor: GeoPoint) -> np.ndarray:
    lat = np.array([c.geo.lat for c in cands], dtype=float)
    lng = np.array([c.geo.lng for c in cands], dtype=float)
    x, y = local_xy(lat, lng, anchor)
    return np.column_stack([x, y]) if lat.size else np.empty((0, 2))


def static_score(t, model: CrfModel) -> float:
    """Aerial, street and map terms; fixed once a candidate is scored."""
    k1, k2, _, k4 = model.k
    return k1 * t.psi + k2 * t.phi + k4 * float(model.map_prior.value(t.d_m))


def spatial_value(d, model: CrfModel):
    """Unweighted spatial potential for nearest-neighbor distance ``d``."""
    if model.mode == "nms":
        return np.where(np.asarray(d) < model.tau_nms, -np.inf, 0.0)
    return model.spatial.value(d)


def spatial_term(t, others, model: CrfModel, anchor: GeoPoint | None = None) -> float:
    """Weighted spatial potential of ``t`` given the other members ``others``."""
    others = [o for o in others if o is not t]
    if anchor is None:
        anchor = t.geo
    if others:
        xy = planar([t] + others, anchor)
        d = float(np.min(np.hypot(xy[1:, 0] - xy[0, 0], xy[1:, 1] - xy[0, 1])))
    else:
        d = math.inf
    v = float(spatial_value(d, model))
    if model.mode == "nms":
        return v
    return model.k[2] * v


def objective(T, model: CrfModel, anchor: GeoPoint | None = None) -> float:
    """Unnormalized log-probability of the detection set ``T``."""
    T = list(T)
    if not T:
        return 0.0
    if anchor is None:
        anchor = frame_anchor(T)
    xy = planar(T, anchor)
    total = 0.0
    for i, t in enumerate(T):
        d = np.hypot(xy[:, 0] - xy[i, 0], xy[:, 1] - xy[i, 1])
        d[i] = np.inf
        s = float(spatial_value(float(d.min()), model))
        if model.mode == "learned":
            s *= model.k[2]
        total += static_score(t, model) + s
    return total


# ---------------------------------------------------------------------------
# greedy inference


class Prepared:
    """Candidate arrays reused across many inference runs (e.g. scalar search)."""

    def __init__(self, cands, model: CrfModel, anchor: GeoPoint | None = None):
        self.cands = sorted(cands, key=lambda c: c.id)
        self.anchor = anchor if anchor is not None else frame_anchor(self.cands)
        self.xy = planar(self.cands, self.anchor)
        self.psi = np.array([c.psi for c in self.cands], dtype=float)
        self.phi = np.array([c.phi for c in self.cands], dtype=float)
        self.d_m = np.array([c.d_m for c in self.cands], dtype=float)
        self.map_prior = model.map_prior
        self.mapv = model.map_prior.value(self.d_m).astype(float) if self.cands else np.empty(0)

    def __len__(self):
        return len(self.cands)


@dataclass
class DetectionSet:
    records: list
    order: np.ndarray  # candidate positions in acceptance order
    gains: np.ndarray
    anchor: GeoPoint
    members: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return float(np.sum(self.gains))

    def __len__(self):
        return len(self.records)


def greedy_infer(cands, model: CrfModel, anchor=None, tau_2=None, prepared: Prepared | None = None):
    """Greedy MAP inference.

    Starting from the empty set, repeatedly add the candidate whose addition
    raises the objective most, as long as the gain is positive. Candidates
    whose static score is below ``tau_2`` never enter. Ties go to the lower
    candidate id.
    """
    if prepared is None:
        prepared = Prepared(cands, model, anchor)
    elif prepared.map_prior != model.map_prior:
        prepared = Prepared(prepared.cands if cands is None else cands, model, anchor or prepared.anchor)
    p = prepared
    if tau_2 is None:
        tau_2 = model.tau_2
    k1, k2, k3, k4 = model.k
    static = k1 * p.psi + k2 * p.phi + k4 * p.mapv
    eligible = static >= tau_2
    nms = model.mode == "nms"
    weights = np.asarray(model.spatial.weights, dtype=float)
    order, gains = _kernels.greedy_select(
        p.xy, static, eligible, np.asarray(model.spatial.edges), weights,
        0.0 if nms else k3, nms, model.tau_nms,
    )
    members = [p.cands[i] for i in order]
    records = _records(p, order, static, model)
    return DetectionSet(records, order, gains, p.anchor, members)


def _records(p: Prepared, order, static, model: CrfModel):
    if len(order) == 0:
        return []
    xy = p.xy[order]
    if len(order) > 1:
        d, _ = cKDTree(xy).query(xy, k=2)
        nn = d[:, 1]
    else:
        nn = np.array([math.inf])
    spat = np.asarray(spatial_value(nn, model), dtype=float)
    if model.mode == "nms":
        spat = np.zeros_like(spat)
    k = model.k
    out = []
    for j, i in enumerate(order):
        c = p.cands[i]
        aerial, street, mp, sp = float(p.psi[i]), float(p.phi[i]), float(p.mapv[i]), float(spat[j])
        score = k[0] * aerial + k[1] * street + k[2] * sp + k[3] * mp
        out.append(DetectionRecord(str(c.id), c.geo, score, aerial, street, sp, mp, k))
    return out


# ---------------------------------------------------------------------------
# piecewise training


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class PriorFit:
    weights: np.ndarray
    losses: list


def fit_prior_histogram(pos, neg, edges=DEFAULT_EDGES, reg: float = 1e-3, epochs: int = 50):
    """Logistic regression on one-hot distance bins.

    Maximizes the summed log-likelihood of positives (label 1) and negatives
    (label 0) minus ``reg * ||w||^2``. Reported losses are divided by the
    sample count. The one-hot design decouples the bins,
    so each epoch takes a damped Newton step per bin; the backtracking keeps
    the loss non-increasing. Returns weights and per-epoch losses.
    """
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("prior fitting needs at least one positive and one negative sample")
    hist = PriorHistogram.zeros(edges)
    nb = hist.n_bins
    n_pos = np.bincount(hist.bin_index(pos), minlength=nb).astype(float)
    n_neg = np.bincount(hist.bin_index(neg), minlength=nb).astype(float)
    total = pos.size + neg.size
    a, b = n_pos, n_neg
    if reg == 0 and np.any((n_pos == 0) | (n_neg == 0)):
        warnings.warn(
            "a distance bin lacks positives or negatives; its weight is unbounded without regularization",
            DegenerateBinsWarning,
            stacklevel=2,
        )

    def bin_loss(w):
        return a * _softplus(-w) + b * _softplus(w) + reg * w * w

    w = np.zeros(nb)
    losses = [float(bin_loss(w).sum()) / total]
    for _ in range(epochs):
        s = _sigmoid(w)
        grad = -a * (1 - s) + b * s + 2 * reg * w
        hess = (a + b) * s * (1 - s) + 2 * reg
        step = np.where(hess > 0, grad / np.where(hess > 0, hess, 1.0), 0.0)
        cur = bin_loss(w)
        scale = np.ones(nb)
        for _ in range(40):
            trial = bin_loss(w - scale * step)
            bad = trial > cur
            if not bad.any():
                break
            scale = np.where(bad, scale * 0.5, scale)
        new = w - scale * step
        w = np.where(bin_loss(new) <= cur, new, w)
        losses.append(float(bin_loss(w).sum()) / total)
    return PriorFit(w, losses)


# ---------------------------------------------------------------------------
# scalar search


@dataclass
class SearchResult:
    k: tuple
    score: float
    history: list


def search_scalars(evaluate, start=(1.0, 1.0, 1.0, 1.0), grid=DEFAULT_GRID, free=(0, 1, 2, 3), max_rounds=5):
    """Coordinate ascent over the potential scalars.

    ``evaluate(k) -> float`` is the validation score (mAP). Each round sweeps
    every free scalar over ``grid`` and moves only on strict improvement, so
    the result never scores below ``start``. Stops after a round without
    change or ``max_rounds`` rounds.
    """
    k = list(start)
    cache = {}

    def score(kk):
        key = tuple(kk)
        if key not in cache:
            cache[key] = float(evaluate(key))
        return cache[key]

    best = score(k)
    history = [(tuple(k), best)]
    for _ in range(max_rounds):
        changed = False
        for i in free:
            for v in grid:
                trial = list(k)
                trial[i] = float(v)
                s = score(trial)
                if s > best:
                    best, k, changed = s, trial, True
                    history.append((tuple(k), best))
        if not changed:
            break
    return SearchResult(tuple(k), best, history)
