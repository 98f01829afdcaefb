"""Seeded synthetic scenes and brute-force oracles.

A scene is laid out in local meters (x east, y north) around an anchor
point: straight road polylines, street trees planted on both sides at
sampled spacing and curb offset, panoramas along the road centerlines and a
grayscale map raster with white roads, white off-road symbols and dark text
blobs on the roads. Observations emulate per-view detectors: every tree is
proposed with probability ``p_det`` (street views also lose it to occlusion
with ``p_occ``), positions carry Gaussian noise and clutter objects along the
roads yield low-scoring proposals.

Everything is written in the regular scene-directory formats, so the
pipeline cannot tell synthetic data from real data.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .crf import (
    CrfModel,
    DetectionSet,
    Prepared,
    PriorHistogram,
    _records,
    fit_prior_histogram,
    spatial_value,
)
from .errors import ConfigError, DegenerateRoad, TooManyCandidates
from .fusion import CandidateTree
from .geo import (
    CameraPose,
    GeoPoint,
    PixelBox,
    enu_arrays,
    geo_from_enu_arrays,
    mercator_latlng_arrays,
    mercator_xy_arrays,
    street_box_arrays,
    wrap_yaw,
)
from .mapprior import MapRaster, write_map_raster
from .scoring import ScoreProviderConfig
from .store import (
    AERIAL_VIEW,
    SCENE_FILES,
    AerialFrame,
    GroundTruthTree,
    Proposal,
    ViewIndex,
    write_aerial_frame,
    write_inventory,
    write_panorama_index,
    write_proposals,
)

PASADENA = (34.1478, -118.1445)

# Score-provider settings for the synthetic benchmark; the library floor is -5.
BENCH_PROVIDER = {"sigma": 25.0, "s_min": -2.0}

# two east-west and three north-south streets: a 600 m x 300 m grid, 2.1 km of road
DEFAULT_ROADS = (
    ((0.0, 0.0), (600.0, 0.0)),
    ((0.0, 300.0), (600.0, 300.0)),
    ((0.0, 0.0), (0.0, 300.0)),
    ((300.0, 0.0), (300.0, 300.0)),
    ((600.0, 0.0), (600.0, 300.0)),
)

DEFAULT_SPECIES = ("london plane", "coast live oak", "jacaranda", "crape myrtle", "camphor", "sweetgum")

ROAD_GRAY = 255
BACKGROUND_GRAY = 238
TEXT_GRAY = 90


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    anchor_deg: tuple = PASADENA
    roads: tuple = DEFAULT_ROADS
    road_width: float = 8.0
    sides: tuple = (-1, 1)
    spacing_mean: float = 12.0
    spacing_std: float = 6.0
    spacing_min: float = 4.0
    spacing_max: float = 40.0
    offset_mean: float = 3.0  # from the road edge
    offset_std: float = 0.75
    offset_min: float = 0.5
    offset_max: float = 8.0
    pano_spacing: float = 15.0
    camera_height: float = 2.5
    pano_width: int = 1664
    pano_height: int = 832
    street_range: float = 25.0
    p_det: float = 0.9
    p_occ: float = 0.2
    sigma_loc: float = 1.0
    clutter_per_km: float = 20.0
    true_score: tuple = (3.0, 0.5)
    false_score: tuple = (0.0, 1.0)
    aerial_zoom: int = 20
    map_zoom: int = 18
    margin: float = 60.0
    map_symbols_per_km2: float = 400.0
    map_text_per_km: float = 40.0
    species: tuple = DEFAULT_SPECIES
    epoch: str | None = None

    def __post_init__(self):
        for name in ("p_det", "p_occ"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.sigma_loc < 0:
            raise ConfigError("sigma_loc must be non-negative")
        if not self.spacing_mean > 0:
            raise ConfigError("spacing_mean must be positive")
        if self.spacing_std < 0 or self.offset_std < 0:
            raise ConfigError("standard deviations must be non-negative")
        if not self.spacing_min <= self.spacing_max or not self.offset_min <= self.offset_max:
            raise ConfigError("truncation bounds are inverted")
        if self.clutter_per_km < 0:
            raise ConfigError("clutter rate must be non-negative")
        if not (self.pano_spacing > 0 and self.street_range > 0 and self.road_width > 0):
            raise ConfigError("panorama spacing, street range and road width must be positive")
        object.__setattr__(self, "roads", tuple(tuple(tuple(map(float, p)) for p in line) for line in self.roads))
        object.__setattr__(self, "anchor_deg", tuple(float(v) for v in self.anchor_deg))
        object.__setattr__(self, "sides", tuple(int(s) for s in self.sides))
        object.__setattr__(self, "true_score", tuple(float(v) for v in self.true_score))
        object.__setattr__(self, "false_score", tuple(float(v) for v in self.false_score))
        object.__setattr__(self, "species", tuple(self.species))

    @property
    def anchor(self) -> GeoPoint:
        return GeoPoint.from_degrees(*self.anchor_deg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["roads"] = [[list(p) for p in line] for line in self.roads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SynthConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def noise_free(cls, **kw) -> SynthConfig:
        base = dict(p_det=1.0, p_occ=0.0, sigma_loc=0.0, clutter_per_km=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class SynthScene:
    config: SynthConfig
    trees: list  # GroundTruthTree
    tree_xy: np.ndarray  # local meters
    spacing_samples: np.ndarray
    index: ViewIndex
    raster: MapRaster
    segments: np.ndarray  # (n, 4): x0, y0, x1, y1

    @property
    def anchor(self) -> GeoPoint:
        return self.config.anchor


def _segments(roads) -> np.ndarray:
    segs = []
    for line in roads:
        if len(line) < 2:
            raise DegenerateRoad("a road polyline needs at least two points")
        pts = np.asarray(line, dtype=float)
        lengths = np.hypot(*np.diff(pts, axis=0).T)
        if lengths.sum() == 0 or np.any(lengths == 0):
            raise DegenerateRoad("road polyline has zero length")
        segs.extend(np.hstack([pts[:-1], pts[1:]]))
    return np.asarray(segs).reshape(-1, 4)


def segment_distance(x, y, segs) -> np.ndarray:
    """Distance from points to the nearest of the segments (broadcasts)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    best = np.full(np.broadcast(x, y).shape, np.inf)
    for x0, y0, x1, y1 in segs:
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((x - x0) * dx + (y - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        best = np.minimum(best, np.hypot(x - x0 - t * dx, y - y0 - t * dy))
    return best


def _truncated_normal(rng, mean, std, lo, hi, n):
    if std == 0:
        return np.full(n, float(np.clip(mean, lo, hi)))
    out = np.empty(n)
    filled = 0
    while filled < n:
        draw = rng.normal(mean, std, max(16, 2 * (n - filled)))
        draw = draw[(draw >= lo) & (draw <= hi)]
        take = min(draw.size, n - filled)
        out[filled:filled + take] = draw[:take]
        filled += take
    return out


def _spacing_gap(rng, cfg) -> float:
    """One along-road gap: ``spacing_min`` plus a gamma variate.

    Shape and scale are set so the untruncated mean and std are the configured
    ones; the long right tail stands in for driveways and missing trees.
    Draws above ``spacing_max`` are redrawn.
    """
    excess = cfg.spacing_mean - cfg.spacing_min
    if cfg.spacing_std == 0 or excess <= 0:
        return float(np.clip(cfg.spacing_mean, cfg.spacing_min, cfg.spacing_max))
    shape = (excess / cfg.spacing_std) ** 2
    scale = cfg.spacing_std ** 2 / excess
    while True:
        gap = cfg.spacing_min + rng.gamma(shape, scale)
        if gap <= cfg.spacing_max:
            return float(gap)


def _to_geo(x, y, anchor: GeoPoint):
    lat, lng = geo_from_enu_arrays(np.asarray(x, float), np.asarray(y, float), anchor.lat, anchor.lng)
    return np.atleast_1d(lat), np.atleast_1d(lng)


def _plant(cfg: SynthConfig, segs, rng):
    half = cfg.road_width / 2.0
    xs, ys, spacing = [], [], []
    for x0, y0, x1, y1 in segs:
        length = math.hypot(x1 - x0, y1 - y0)
        ux, uy = (x1 - x0) / length, (y1 - y0) / length
        nx, ny = -uy, ux
        for side in cfg.sides:
            s = rng.uniform(0.0, cfg.spacing_mean)
            while s < length:
                off = _truncated_normal(rng, cfg.offset_mean, cfg.offset_std, cfg.offset_min, cfg.offset_max, 1)[0]
                lat = side * (half + off)
                xs.append(x0 + s * ux + lat * nx)
                ys.append(y0 + s * uy + lat * ny)
                gap = _spacing_gap(rng, cfg)
                spacing.append(gap)
                s += gap
    xs, ys = np.asarray(xs), np.asarray(ys)
    # drop trees standing on another road, then enforce the minimum spacing
    ok = segment_distance(xs, ys, segs) >= half + cfg.offset_min - 1e-9
    keep = []
    for i in np.flatnonzero(ok):
        if keep:
            d = np.hypot(xs[keep] - xs[i], ys[keep] - ys[i])
            if d.min() < cfg.spacing_min:
                continue
        keep.append(i)
    return xs[keep], ys[keep], np.asarray(spacing)


def _panoramas(cfg: SynthConfig, segs, anchor: GeoPoint):
    px, py, yaw = [], [], []
    for x0, y0, x1, y1 in segs:
        length = math.hypot(x1 - x0, y1 - y0)
        heading = wrap_yaw(math.atan2(x1 - x0, y1 - y0))
        n = int(math.floor(length / cfg.pano_spacing + 1e-9))
        for k in range(n + 1):
            t = k * cfg.pano_spacing / length
            x, y = x0 + t * (x1 - x0), y0 + t * (y1 - y0)
            if px and np.min(np.hypot(np.asarray(px) - x, np.asarray(py) - y)) < cfg.pano_spacing / 3:
                continue
            px.append(x)
            py.append(y)
            yaw.append(heading)
    lat, lng = _to_geo(px, py, anchor)
    return [
        CameraPose(f"pano_{i:05d}", GeoPoint(float(a), float(b)), y, cfg.camera_height,
                   cfg.pano_width, cfg.pano_height, cfg.epoch)
        for i, (a, b, y) in enumerate(zip(lat, lng, yaw))
    ]


def _frame(segs, cfg, anchor, zoom):
    lo = segs[:, [0, 2]].min() - cfg.margin, segs[:, [1, 3]].min() - cfg.margin
    hi = segs[:, [0, 2]].max() + cfg.margin, segs[:, [1, 3]].max() + cfg.margin
    lat, lng = _to_geo([lo[0], hi[0]], [hi[1], lo[1]], anchor)  # north-west, south-east
    gx, gy = mercator_xy_arrays(lat, lng, zoom)
    ox, oy = int(math.floor(gx[0])), int(math.floor(gy[0]))
    return ox, oy, int(math.ceil(gx[1])) - ox, int(math.ceil(gy[1])) - oy


def _raster(cfg: SynthConfig, segs, anchor: GeoPoint, rng) -> MapRaster:
    ox, oy, w, h = _frame(segs, cfg, anchor, cfg.map_zoom)
    lat_rows, _ = mercator_latlng_arrays(np.full(h, ox + 0.5), oy + np.arange(h) + 0.5, cfg.map_zoom)
    _, lng_cols = mercator_latlng_arrays(ox + np.arange(w) + 0.5, np.full(w, oy + 0.5), cfg.map_zoom)
    xcol, _ = enu_arrays(anchor.lat, lng_cols, anchor.lat, anchor.lng)
    _, yrow = enu_arrays(lat_rows, anchor.lng, anchor.lat, anchor.lng)
    d = segment_distance(xcol[None, :], yrow[:, None], segs)
    road = d <= cfg.road_width / 2.0
    values = np.where(road, ROAD_GRAY, BACKGROUND_GRAY).astype(np.uint8)

    area_km2 = (xcol[-1] - xcol[0]) * (yrow[0] - yrow[-1]) / 1e6
    n_sym = rng.poisson(cfg.map_symbols_per_km2 * abs(area_km2))
    for _ in range(n_sym):
        r, c = int(rng.integers(0, h)), int(rng.integers(0, w))
        if road[r, c] or d[r, c] < cfg.road_width / 2.0 + 4.0:
            continue
        rad = int(rng.integers(1, 3))
        yy, xx = np.ogrid[-rad:rad + 1, -rad:rad + 1]
        blob = xx * xx + yy * yy <= rad * rad
        r0, r1 = max(r - rad, 0), min(r + rad + 1, h)
        c0, c1 = max(c - rad, 0), min(c + rad + 1, w)
        sub = blob[r0 - (r - rad):r1 - (r - rad), c0 - (c - rad):c1 - (c - rad)]
        values[r0:r1, c0:c1][sub] = ROAD_GRAY
    road_km = float(np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1]).sum()) / 1000.0
    interior = np.argwhere(d <= cfg.road_width / 2.0 - 3.0)
    n_text = rng.poisson(cfg.map_text_per_km * road_km)
    if interior.size:
        for _ in range(n_text):
            r, c = interior[int(rng.integers(0, len(interior)))]
            values[r:r + 3, c:c + 6] = TEXT_GRAY
    return MapRaster(ox, oy, cfg.map_zoom, values)


def generate_scene(config: SynthConfig) -> SynthScene:
    """Plant trees, place panoramas and draw the map; deterministic per seed."""
    cfg = config
    segs = _segments(cfg.roads)
    rng = np.random.default_rng([cfg.seed, 0])
    anchor = cfg.anchor
    xs, ys, spacing = _plant(cfg, segs, rng)
    lat, lng = _to_geo(xs, ys, anchor)
    if cfg.species:
        weights = 1.0 / np.arange(1, len(cfg.species) + 1)
        labels = rng.choice(len(cfg.species), size=xs.size, p=weights / weights.sum())
    trees = [
        GroundTruthTree(
            f"t{i:05d}", GeoPoint(float(a), float(b)),
            cfg.species[labels[i]] if cfg.species else None, cfg.epoch,
        )
        for i, (a, b) in enumerate(zip(lat, lng))
    ]
    cams = _panoramas(cfg, segs, anchor)
    ax, ay, aw, ah = _frame(segs, cfg, anchor, cfg.aerial_zoom)
    index = ViewIndex(AerialFrame(cfg.aerial_zoom, ax, ay, aw, ah), tuple(cams), SCENE_FILES["map"])
    raster = _raster(cfg, segs, anchor, rng)
    return SynthScene(cfg, trees, np.column_stack([xs, ys]).reshape(-1, 2), spacing, index, raster, segs)


def _clutter_xy(cfg, segs, rng, n):
    lengths = np.hypot(segs[:, 2] - segs[:, 0], segs[:, 3] - segs[:, 1])
    which = rng.choice(len(segs), size=n, p=lengths / lengths.sum())
    t = rng.uniform(0.0, 1.0, n)
    side = rng.choice([-1.0, 1.0], size=n)
    off = cfg.road_width / 2.0 + rng.uniform(0.5, 6.0, n)
    x0, y0, x1, y1 = segs[which].T
    ux, uy = (x1 - x0) / lengths[which], (y1 - y0) / lengths[which]
    return x0 + t * (x1 - x0) - side * off * uy, y0 + t * (y1 - y0) + side * off * ux


def generate_observations(scene: SynthScene, config: SynthConfig | None = None) -> list[Proposal]:
    """Per-view proposals for a scene (aerial first, then panoramas by id)."""
    cfg = config or scene.config
    rng = np.random.default_rng([cfg.seed, 1])
    anchor = scene.anchor
    tx, ty = scene.tree_xy[:, 0], scene.tree_xy[:, 1]
    n = tx.size
    road_km = float(np.hypot(scene.segments[:, 2] - scene.segments[:, 0],
                             scene.segments[:, 3] - scene.segments[:, 1]).sum()) / 1000.0
    mu_t, sd_t = cfg.true_score
    mu_f, sd_f = cfg.false_score

    def jitter(x, y):
        if cfg.sigma_loc == 0:
            return x, y
        return x + rng.normal(0.0, cfg.sigma_loc, x.shape), y + rng.normal(0.0, cfg.sigma_loc, y.shape)

    props = []
    frame = scene.index.aerial
    # aerial: trees, then clutter
    det = rng.random(n) < cfg.p_det
    x, y = jitter(tx[det], ty[det])
    s = rng.normal(mu_t, sd_t, x.size)
    n_clutter = rng.poisson(cfg.clutter_per_km * road_km)
    cx, cy = jitter(*_clutter_xy(cfg, scene.segments, rng, n_clutter))
    cs = rng.normal(mu_f, sd_f, n_clutter)
    lat, lng = _to_geo(np.concatenate([x, cx]), np.concatenate([y, cy]), anchor)
    gx, gy = mercator_xy_arrays(lat, lng, frame.zoom)
    inside = frame.contains(gx, gy)
    for px, py, sc in zip(gx[inside], gy[inside], np.concatenate([s, cs])[inside]):
        props.append(Proposal(AERIAL_VIEW, PixelBox(float(px), float(py), 100.0, 100.0), float(sc)))

    # street level: poles are fixed objects seen from every covering panorama
    n_poles = rng.poisson(cfg.clutter_per_km * road_km)
    pole_x, pole_y = _clutter_xy(cfg, scene.segments, rng, n_poles)
    t_lat, t_lng = _to_geo(tx, ty, anchor)
    p_lat, p_lng = _to_geo(pole_x, pole_y, anchor)
    for cam in scene.index.panoramas:
        for kind, (olat, olng) in (("tree", (t_lat, t_lng)), ("pole", (p_lat, p_lng))):
            if olat.size == 0:
                continue
            ex, ey = enu_arrays(olat, olng, cam.geo.lat, cam.geo.lng)
            near = np.flatnonzero((np.hypot(ex, ey) <= cfg.street_range) & (np.hypot(ex, ey) > 1.0))
            if kind == "tree":
                keep = (rng.random(near.size) < cfg.p_det) & (rng.random(near.size) >= cfg.p_occ)
                near = near[keep]
                sc = rng.normal(mu_t, sd_t, near.size)
            else:
                sc = rng.normal(mu_f, sd_f, near.size)
            if near.size == 0:
                continue
            ox, oy = enu_arrays(olat[near], olng[near], anchor.lat, anchor.lng)
            ox, oy = jitter(ox, oy)
            lat, lng = _to_geo(ox, oy, anchor)
            ex, ey = enu_arrays(lat, lng, cam.geo.lat, cam.geo.lng)
            ok = np.hypot(ex, ey) > 0.5
            bx, by, bw, bh = street_box_arrays(ex[ok], ey[ok], cam.yaw, cam.h, cam.W, cam.H)
            for a, b, w, h, v in zip(bx, by, bw, bh, sc[ok]):
                props.append(Proposal(cam.id, PixelBox(float(a), float(b), float(w), float(h)), float(v)))
    return props


def write_scene(scene: SynthScene, proposals, root) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_inventory(scene.trees, root / SCENE_FILES["inventory"])
    write_panorama_index(scene.index.panoramas, root / SCENE_FILES["panoramas"])
    write_proposals(proposals, root / SCENE_FILES["proposals"])
    write_aerial_frame(scene.index.aerial, root / SCENE_FILES["aerial"])
    write_map_raster(scene.raster, root / SCENE_FILES["map"])
    (root / "synth.json").write_text(json.dumps(scene.config.to_dict(), indent=2), encoding="utf-8")
    return root


def split_configs(config: SynthConfig, names=("train", "validation", "test")) -> dict:
    """Independent scenes per split, seeded ``seed``, ``seed + 1``, ..."""
    return {name: replace(config, seed=config.seed + i) for i, name in enumerate(names)}


# ---------------------------------------------------------------------------
# exhaustive inference oracle


def subset_objectives(static, xy, model: CrfModel, eligible=None):
    """Objective of every subset of ``n`` candidates (bit i = candidate i).

    Ineligible subsets get ``-inf``.
    """
    n = static.shape[0]
    masks = ((np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1).astype(bool)
    if n == 0:
        return masks, np.zeros(1)
    d = np.hypot(xy[:, None, 0] - xy[None, :, 0], xy[:, None, 1] - xy[None, :, 1])
    np.fill_diagonal(d, np.inf)
    nn = np.where(masks[:, None, :], d[None, :, :], np.inf).min(axis=2)
    spat = np.asarray(spatial_value(nn, model), dtype=float)
    if model.mode == "learned":
        spat = model.k[2] * spat
    terms = np.where(masks, static[None, :] + spat, 0.0)
    with np.errstate(invalid="ignore"):
        obj = terms.sum(axis=1)
    if eligible is not None:
        obj = np.where(masks[:, ~eligible].any(axis=1), -np.inf, obj)
    return masks, obj


def exhaustive_infer(cands, model: CrfModel, max_n: int = 12, anchor=None, tau_2=None) -> DetectionSet:
    """Exact MAP set by enumerating all subsets.

    Candidates whose static score is below ``tau_2`` are excluded, as in
    greedy inference. Ties between optimal subsets go to the one whose
    sorted candidate ids come first lexicographically.
    """
    if len(cands) > max_n:
        raise TooManyCandidates(f"{len(cands)} candidates exceed the limit of {max_n}")
    p = Prepared(cands, model, anchor)
    k1, k2, _, k4 = model.k
    static = k1 * p.psi + k2 * p.phi + k4 * p.mapv
    if tau_2 is None:
        tau_2 = model.tau_2
    masks, obj = subset_objectives(static, p.xy, model, static >= tau_2)
    best = obj.max()
    tied = np.flatnonzero(obj == best)
    ids = [c.id for c in p.cands]
    pick = min(tied, key=lambda s: [ids[i] for i in np.flatnonzero(masks[s])])
    order = np.flatnonzero(masks[pick]).astype(np.int64)
    prefix = [0.0]
    for j in range(1, order.size + 1):
        sub = np.zeros(len(ids), dtype=bool)
        sub[order[:j]] = True
        prefix.append(float(obj[int(np.dot(sub, 1 << np.arange(len(ids))))]))
    gains = np.diff(prefix)
    return DetectionSet(_records(p, order, static, model), order, gains, p.anchor, [p.cands[i] for i in order])


@functools.lru_cache(maxsize=8)
def bench_model(seed: int = 0) -> CrfModel:
    """Unit-scalar CRF whose priors are fit on a default synthetic scene."""
    from .pipeline import TrainConfig, fit_priors, synth_scene_data

    provider = ScoreProviderConfig(**BENCH_PROVIDER)
    scene = synth_scene_data(SynthConfig(seed=seed), provider, name="bench", street_config=provider)
    spatial, road, _ = fit_priors(scene, TrainConfig(seed=seed))
    return CrfModel(spatial=spatial, map_prior=road)


def random_instance(rng, n: int = 10, anchor: GeoPoint | None = None,
                    config: SynthConfig | None = None) -> list[CandidateTree]:
    """Small candidate set resembling fused detections around a few trees.

    Two to four trees stand along a curb line at the configured spacing.
    Roughly 70% of candidates are observations of them with 1 m position
    noise, the rest is clutter along the same line. Per-view scores and
    road distances follow ``config`` (the synthetic defaults).
    """
    cfg = config or SynthConfig()
    anchor = anchor or GeoPoint.from_degrees(*PASADENA)
    n_trees = int(rng.integers(2, 5))
    tx = np.cumsum([_spacing_gap(rng, cfg) for _ in range(n_trees)])
    is_tree = rng.random(n) < 0.7
    owner = rng.integers(0, n_trees, n)
    x = np.where(is_tree, tx[owner] + rng.normal(0, 1.0, n), rng.uniform(0, tx[-1] + 10, n))
    y = np.where(is_tree, rng.normal(0, 1.0, n), rng.uniform(-3, 3, n))

    def scores():
        return np.where(is_tree, rng.normal(*cfg.true_score, n), rng.normal(*cfg.false_score, n))

    psi, phi = scores(), scores()
    d_m = np.where(is_tree, cfg.offset_mean + y, rng.uniform(cfg.offset_min, 6.0, n)).clip(0.0)
    lat, lng = _to_geo(x, y, anchor)
    return [
        CandidateTree(i, GeoPoint(float(lat[i]), float(lng[i])), float(psi[i]), float(phi[i]), None,
                      float(d_m[i]), "synthetic")
        for i in range(n)
    ]
