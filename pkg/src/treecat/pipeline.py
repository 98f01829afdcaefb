"""End-to-end orchestration: fuse a scene, fit the priors, tune, infer.

Prior fitting needs negatives that the ground truth alone does not give.
Two kinds are used:

* random locations (3 per positive), uniform over the bounding box of the
  trees and candidates, excluding points within 4 m of a ground-truth tree;
* duplicate and clutter candidates from fusion: every training candidate
  not chosen as the representative of a ground-truth tree. Their distance
  to the nearest representative is a spacing negative (this is what teaches
  the spacing prior to suppress duplicates); those further than 4 m from any
  tree also give road-distance negatives.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .crf import (
    DEFAULT_EDGES,
    DEFAULT_GRID,
    CrfModel,
    Prepared,
    PriorHistogram,
    fit_prior_histogram,
    greedy_infer,
    search_scalars,
)
from .errors import ConfigError, EmptyGroundTruth
from .evaluation import MATCH_RADIUS, DetectionEvaluator, lesion_suite, pr_from_matching
from .fusion import fuse
from .geo import GeoPoint, geo_from_enu_arrays, local_xy
from .mapprior import build_distance_field, in_extent, road_distance_arrays
from .scoring import FileBackedProvider, ScoreProviderConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    edges: tuple = DEFAULT_EDGES
    reg: float = 0.1
    epochs: int = 50
    grid: tuple = DEFAULT_GRID
    max_rounds: int = 5
    neg_ratio: float = 3.0
    exclude_radius: float = 4.0
    region_radius: float | None = None  # keep random negatives this close to a candidate
    hard_negatives: bool = True
    match_radius: float = MATCH_RADIUS
    select_tau_2: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.neg_ratio <= 0 or self.exclude_radius < 0 or self.match_radius <= 0:
            raise ConfigError("negative ratio and radii must be positive")
        object.__setattr__(self, "edges", tuple(float(e) for e in self.edges))
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))


@dataclass
class SceneData:
    """Fused candidates of one scene with what training and evaluation need."""

    cands: list
    ground_truth: list
    field: object  # DistanceField
    name: str = ""


def _geo_arrays(items):
    lat = np.array([it.geo.lat for it in items], dtype=float)
    lng = np.array([it.geo.lng for it in items], dtype=float)
    return lat, lng


def representatives(cand_xy, gt_xy, radius: float):
    """One candidate per ground-truth tree: closest pairs first, one-to-one."""
    if len(cand_xy) == 0 or len(gt_xy) == 0:
        return np.zeros(len(cand_xy), dtype=bool)
    pairs = []
    for j, near in enumerate(cKDTree(cand_xy).query_ball_point(gt_xy, radius)):
        for i in near:
            pairs.append((float(np.hypot(*(cand_xy[i] - gt_xy[j]))), i, j))
    pairs.sort()
    rep = np.zeros(len(cand_xy), dtype=bool)
    used = set()
    for _, i, j in pairs:
        if rep[i] or j in used:
            continue
        rep[i] = True
        used.add(j)
    return rep


def _random_points(rng, lo, hi, n, keep):
    """Uniform points in a box accepted by ``keep(x, y)``; at most 50 batches."""
    xs, ys = [], []
    got = 0
    for _ in range(50):
        if got >= n:
            break
        x = rng.uniform(lo[0], hi[0], 2 * n)
        y = rng.uniform(lo[1], hi[1], 2 * n)
        ok = keep(x, y)
        xs.append(x[ok])
        ys.append(y[ok])
        got += int(ok.sum())
    x = np.concatenate(xs)[:n] if xs else np.empty(0)
    y = np.concatenate(ys)[:n] if ys else np.empty(0)
    return x, y


@dataclass
class PriorSamples:
    spacing_pos: np.ndarray
    spacing_neg: np.ndarray
    road_pos: np.ndarray
    road_neg: np.ndarray


def prior_samples(scene: SceneData, cfg: TrainConfig) -> PriorSamples:
    gt = scene.ground_truth
    if not gt:
        raise EmptyGroundTruth(f"training scene {scene.name!r} has no ground-truth trees")
    rng = np.random.default_rng([cfg.seed, 11])
    glat, glng = _geo_arrays(gt)
    clat, clng = _geo_arrays(scene.cands)
    anchor = GeoPoint(float(glat.mean()), float(glng.mean()))
    gx, gy = local_xy(glat, glng, anchor)
    gt_xy = np.column_stack([gx, gy]).reshape(-1, 2)
    tree = cKDTree(gt_xy)

    inside_gt = in_extent(scene.field, glat, glng)
    if len(gt) > 1:
        d, _ = tree.query(gt_xy, k=2)
        spacing_pos = d[:, 1]
    else:
        spacing_pos = np.array([math.inf])
    road_pos = road_distance_arrays(scene.field, glat[inside_gt], glng[inside_gt])

    # random negatives in the bounding region of trees and candidates
    if clat.size:
        cx, cy = local_xy(clat, clng, anchor)
        allx, ally = np.concatenate([gx, cx]), np.concatenate([gy, cy])
    else:
        cx = cy = np.empty(0)
        allx, ally = gx, gy
    lo, hi = (allx.min(), ally.min()), (allx.max(), ally.max())
    n_neg = int(math.ceil(cfg.neg_ratio * len(gt)))

    region = cKDTree(np.column_stack([cx, cy])) if (clat.size and cfg.region_radius) else None

    def keep(x, y):
        pts = np.column_stack([x, y])
        far = tree.query(pts)[0] > cfg.exclude_radius
        if region is not None:
            far &= region.query(pts)[0] <= cfg.region_radius
        lat, lng = _unlocal(x, y, anchor)
        return far & in_extent(scene.field, lat, lng)

    rx, ry = _random_points(rng, lo, hi, n_neg, keep)
    spacing_neg = [tree.query(np.column_stack([rx, ry]))[0]] if rx.size else []
    rlat, rlng = _unlocal(rx, ry, anchor)
    road_neg = [road_distance_arrays(scene.field, rlat, rlng)] if rx.size else []

    if cfg.hard_negatives and clat.size:
        cand_xy = np.column_stack([cx, cy])
        rep = representatives(cand_xy, gt_xy, cfg.match_radius)
        extra = np.flatnonzero(~rep)
        if extra.size:
            ref = cand_xy[rep] if rep.any() else gt_xy
            spacing_neg.append(cKDTree(ref).query(cand_xy[extra])[0])
            far = tree.query(cand_xy[extra])[0] > cfg.exclude_radius
            sel = extra[far]
            ok = in_extent(scene.field, clat[sel], clng[sel])
            if ok.any():
                road_neg.append(road_distance_arrays(scene.field, clat[sel][ok], clng[sel][ok]))
        log.info("prior negatives: %d random, %d from unmatched candidates", rx.size, extra.size)
    cat = lambda parts: np.concatenate(parts) if parts else np.empty(0)  # noqa: E731
    return PriorSamples(spacing_pos, cat(spacing_neg), road_pos, cat(road_neg))


def _unlocal(x, y, anchor):
    lat, lng = geo_from_enu_arrays(np.asarray(x, float), np.asarray(y, float), anchor.lat, anchor.lng)
    return np.atleast_1d(lat), np.atleast_1d(lng)


def fit_priors(scene: SceneData, cfg: TrainConfig):
    s = prior_samples(scene, cfg)
    spatial = fit_prior_histogram(s.spacing_pos, s.spacing_neg, cfg.edges, cfg.reg, cfg.epochs)
    road = fit_prior_histogram(s.road_pos, s.road_neg, cfg.edges, cfg.reg, cfg.epochs)
    info = {
        "spacing_samples": [int(s.spacing_pos.size), int(s.spacing_neg.size)],
        "road_samples": [int(s.road_pos.size), int(s.road_neg.size)],
        "spacing_loss": [spatial.losses[0], spatial.losses[-1]],
        "road_loss": [road.losses[0], road.losses[-1]],
    }
    return (
        PriorHistogram(cfg.edges, tuple(spatial.weights)),
        PriorHistogram(cfg.edges, tuple(road.weights)),
        info,
    )


def select_tau_2(evaluator: DetectionEvaluator, model: CrfModel):
    """Static-score threshold maximizing validation F1 (ties: higher threshold).

    Every distinct static score of the unthresholded result is tried as a
    threshold, rerunning inference each time.
    """
    result, match, _, _ = evaluator.run(model, -math.inf)
    k = model.k
    statics = sorted({k[0] * r.aerial + k[1] * r.street + k[3] * r.map for r in result.records}, reverse=True)
    best_tau, best_f1 = -math.inf, _f1(match.tp, len(result.records), evaluator.n_gt)
    for tau in statics:
        res, m, _, _ = evaluator.run(model, tau)
        f1 = _f1(m.tp, len(res.records), evaluator.n_gt)
        if f1 > best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau, best_f1


def _f1(tp, n_det, n_gt):
    if tp == 0:
        return 0.0
    p, r = tp / n_det, tp / n_gt
    return 2 * p * r / (p + r)


@dataclass
class TrainResult:
    model: CrfModel
    base: CrfModel  # before tau_2 selection
    report: dict = field(default_factory=dict)


def train_model(train: SceneData, validation: SceneData, cfg: TrainConfig | None = None, providers=None) -> TrainResult:
    """Piecewise training: priors on ``train``, scalars and tau_2 on ``validation``."""
    cfg = cfg or TrainConfig()
    spatial, road, info = fit_priors(train, cfg)
    start = CrfModel((1.0, 1.0, 1.0, 1.0), spatial, road, providers=dict(providers or {}))
    evaluator = DetectionEvaluator(Prepared(validation.cands, start), validation.ground_truth, cfg.match_radius)
    res = search_scalars(lambda k: evaluator.map(start.with_k(k)), grid=cfg.grid, max_rounds=cfg.max_rounds)
    base = start.with_k(res.k)
    tau, f1 = (select_tau_2(evaluator, base) if cfg.select_tau_2 else (-math.inf, float("nan")))
    model = replace(base, tau_2=tau)
    report = {
        "priors": info,
        "k": list(res.k),
        "validation_map": res.score,
        "validation_map_at_ones": res.history[0][1],
        "search_history": [[list(k), s] for k, s in res.history],
        "tau_2": None if tau == -math.inf else tau,
        "validation_f1": f1,
    }
    return TrainResult(model, base, report)


def evaluate(scene: SceneData, model: CrfModel, radius: float = MATCH_RADIUS, tau_2=-math.inf):
    """Inference plus PR/AP on one scene; returns (DetectionSet, curve, ap, match)."""
    ev = DetectionEvaluator(Prepared(scene.cands, model), scene.ground_truth, radius)
    result, match, curve, ap = ev.run(model, tau_2)
    return result, curve, ap, match


def run_lesions(train_result: TrainResult, validation: SceneData, test: SceneData, cfg: TrainConfig | None = None):
    cfg = cfg or TrainConfig()
    base = train_result.base
    val = DetectionEvaluator(Prepared(validation.cands, base), validation.ground_truth, cfg.match_radius)
    tst = DetectionEvaluator(Prepared(test.cands, base), test.ground_truth, cfg.match_radius)
    return lesion_suite(base, val, tst, cfg.grid)


def infer(scene_cands, model: CrfModel):
    return greedy_infer(scene_cands, model)


# ---------------------------------------------------------------------------
# scene preparation


def scene_data(scene, field, provider_config: ScoreProviderConfig | None = None, tau_1: float = -math.inf,
               jobs: int = 1, name: str = "", street_config: ScoreProviderConfig | None = None) -> SceneData:
    """Fuse a loaded :class:`~treecat.store.Scene` against its distance field."""
    provider = FileBackedProvider(scene.proposals, scene.index.view_ids, provider_config, street_config)
    cands = fuse(scene.proposals, scene.index, provider, field, tau_1=tau_1, jobs=jobs)
    return SceneData(cands, list(scene.inventory), field, name)


def synth_scene_data(cfg, provider_config=None, jobs: int = 1, name: str = "", street_config=None) -> SceneData:
    """Generate, observe and fuse a synthetic scene in memory."""
    from .store import Scene
    from .synth import generate_observations, generate_scene

    sc = generate_scene(cfg)
    props = generate_observations(sc, cfg)
    field = build_distance_field(sc.raster)
    return scene_data(Scene(sc.trees, sc.index, props, None), field, provider_config, jobs=jobs, name=name,
                      street_config=street_config)


def detection_summary(result, match, n_gt) -> dict:
    scores = np.array([r.score for r in result.records])
    curve, ap = pr_from_matching(scores, match, n_gt)
    return {
        "detections": len(result.records),
        "true_positives": match.tp,
        "false_positives": len(match.false_positives),
        "false_negatives": len(match.false_negatives),
        "ground_truth": n_gt,
        "precision": match.tp / len(result.records) if result.records else 0.0,
        "recall": match.tp / n_gt,
        "map": ap,
    }


__all__ = [
    "TrainConfig",
    "SceneData",
    "PriorSamples",
    "prior_samples",
    "fit_priors",
    "select_tau_2",
    "train_model",
    "evaluate",
    "run_lesions",
    "infer",
    "scene_data",
    "synth_scene_data",
    "detection_summary",
    "representatives",
]
