"""Multi-view proposal fusion.

Per-view proposals are kept liberally, projected to geographic coordinates,
pooled (with multiplicity) and then re-scored in every view: the aerial
frame, the nearest panorama, and the road-distance field. A tree found in
only one view therefore still gets scores from the others.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .geo import (
    GeoPoint,
    enu_arrays,
    mercator_latlng_arrays,
    mercator_xy_arrays,
    street_box_arrays,
    street_ground_arrays,
    geo_from_enu_arrays,
)
from .mapprior import in_extent, road_distance_arrays
from .store import AERIAL_VIEW, exact_degrees, nearest_panorama_indices

log = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class CandidateTree:
    id: int
    geo: GeoPoint
    psi: float
    phi: float
    pano_id: str | None
    d_m: float
    source: str


def collect_proposals(proposals, tau_1: float):
    """Keep every proposal scoring at least ``tau_1``."""
    return [p for p in proposals if p.score >= tau_1]


def pool_to_geo(proposals, index):
    """Project proposals to the ground.

    Aerial boxes use their center; street boxes use the bottom-center pixel
    (the trunk base). Street proposals at or above the horizon are dropped
    with a warning. Returns ``(lat, lng, sources)`` arrays.
    """
    by_view = {}
    for p in proposals:
        by_view.setdefault(p.view_id, []).append(p)
    lats, lngs, srcs = [], [], []
    for view_id, props in by_view.items():
        if view_id == AERIAL_VIEW:
            x = np.array([p.box.x for p in props])
            y = np.array([p.box.y for p in props])
            lat, lng = mercator_latlng_arrays(x, y, index.aerial.zoom)
        else:
            cam = index.panorama(view_id)
            x = np.array([p.box.x for p in props])
            y = np.array([p.box.y + p.box.h / 2.0 for p in props])
            ok = y > cam.H / 2.0
            if not ok.all():
                log.warning(
                    "dropped %d proposal(s) of %s at or above the horizon", int((~ok).sum()), view_id
                )
            x, y = x[ok], y[ok]
            ex, ey = street_ground_arrays(x, y, cam.yaw, cam.h, cam.W, cam.H)
            lat, lng = geo_from_enu_arrays(ex, ey, cam.geo.lat, cam.geo.lng)
        lats.append(np.atleast_1d(lat))
        lngs.append(np.atleast_1d(lng))
        srcs.extend([view_id] * np.atleast_1d(lat).shape[0])
    if not lats:
        return np.empty(0), np.empty(0), []
    lng = np.concatenate(lngs)
    lng = (lng + math.pi) % (2 * math.pi) - math.pi
    return np.concatenate(lats), lng, srcs


def _score_chunk(lat, lng, index, provider, field):
    ax, ay = mercator_xy_arrays(lat, lng, index.aerial.zoom)
    psi = provider.query_centers(AERIAL_VIEW, ax, ay)
    phi = np.full(lat.shape, getattr(provider, "street_config", provider.config).s_min)
    pano = np.full(lat.shape, -1, dtype=np.int64)
    if index.panoramas:
        best, _ = nearest_panorama_indices(lat, lng, index.panoramas)
        pano[:] = best
        for ci in np.unique(best):
            cam = index.panoramas[ci]
            sel = np.flatnonzero(best == ci)
            ex, ey = enu_arrays(lat[sel], lng[sel], cam.geo.lat, cam.geo.lng)
            ok = np.hypot(ex, ey) > 0
            if not ok.any():
                continue
            bx, by, _, _ = street_box_arrays(ex[ok], ey[ok], cam.yaw, cam.h, cam.W, cam.H)
            phi[sel[ok]] = provider.query_centers(cam.id, bx, by)
    d_m = road_distance_arrays(field, lat, lng)
    return psi, phi, pano, d_m


def rescore_candidates(lat, lng, sources, index, provider, field, jobs: int = 1):
    """Score pooled points in every view; returns candidates in canonical order.

    Points outside the aerial frame or the distance field are logged and
    excluded. Candidates are sorted by (lat, lng, source) and numbered in
    that order.
    """
    lat = np.asarray(lat, dtype=float)
    lng = np.asarray(lng, dtype=float)
    if lat.size == 0:
        return []
    ax, ay = mercator_xy_arrays(lat, lng, index.aerial.zoom)
    inside = in_extent(field, lat, lng) & index.aerial.contains(ax, ay)
    if not inside.all():
        log.warning("excluded %d candidate(s) outside the covered extent", int((~inside).sum()))
    keep = np.flatnonzero(inside)
    lat, lng = lat[keep], lng[keep]
    sources = [sources[i] for i in keep]
    order = sorted(range(lat.size), key=lambda i: (lat[i], lng[i], sources[i]))
    lat, lng = lat[order], lng[order]
    sources = [sources[i] for i in order]

    n = lat.size
    jobs = max(1, int(jobs))
    if jobs == 1 or n < 256:
        parts = [_score_chunk(lat, lng, index, provider, field)] if n else []
    else:
        bounds = np.linspace(0, n, jobs + 1).astype(int)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(
                pool.map(
                    lambda ab: _score_chunk(lat[ab[0]:ab[1]], lng[ab[0]:ab[1]], index, provider, field),
                    [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a],
                )
            )
    if not parts:
        return []
    psi, phi, pano, d_m = (np.concatenate(c) for c in zip(*parts))
    cams = index.panoramas
    return [
        CandidateTree(
            i,
            GeoPoint(float(lat[i]), float(lng[i])),
            float(psi[i]),
            float(phi[i]),
            cams[pano[i]].id if pano[i] >= 0 else None,
            float(d_m[i]),
            sources[i],
        )
        for i in range(n)
    ]


def fuse(proposals, index, provider, field, tau_1: float = -math.inf, jobs: int = 1):
    """Run the whole fusion workflow on one scene."""
    kept = collect_proposals(proposals, tau_1)
    lat, lng, src = pool_to_geo(kept, index)
    return rescore_candidates(lat, lng, src, index, provider, field, jobs=jobs)


# ---------------------------------------------------------------------------
# candidate checkpoints (JSON Lines)


def write_candidates(cands, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cands:
            fh.write(
                json.dumps(
                    {
                        "id": c.id,
                        "lat_deg": exact_degrees(c.geo.lat),
                        "lng_deg": exact_degrees(c.geo.lng),
                        "lat_rad": c.geo.lat,
                        "lng_rad": c.geo.lng,
                        "psi": c.psi,
                        "phi": c.phi,
                        "pano": c.pano_id,
                        "d_m": c.d_m,
                        "source": c.source,
                    },
                    sort_keys=True,
                    allow_nan=False,
                )
            )
            fh.write("\n")


def read_candidates(path) -> list[CandidateTree]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                o = json.loads(raw)
                out.append(
                    CandidateTree(
                        int(o["id"]),
                        GeoPoint(float(o["lat_rad"]), float(o["lng_rad"])),
                        float(o["psi"]),
                        float(o["phi"]),
                        o.get("pano"),
                        float(o["d_m"]),
                        str(o.get("source", "")),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ParseError(f"bad candidate record: {exc}", lineno, path) from None
    return out
