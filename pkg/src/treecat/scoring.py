"""Detection-score providers standing in for the per-view CNN detectors.

A provider answers one question: what is the detector's score for a box in
a given view? The file-backed provider derives a dense score surface from a
sparse list of proposals with a Gaussian kernel:

    score(q) = max(s_min, max_j [s_min + (s_j - s_min) * exp(-d_j^2 / 2 sigma^2)])

where ``d_j`` is the center distance (pixels) between the query box and
proposal ``j`` of the same view. The surface equals ``s_j`` on top of a
proposal and decays to the floor ``s_min`` away from all proposals. Box
sizes are ignored.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np

from . import _kernels
from .errors import UnknownView
from .geo import (
    PixelBox,
    enu_arrays,
    mercator_xy_arrays,
    street_box_arrays,
)
from .store import AERIAL_VIEW, Proposal


@dataclass(frozen=True)
class ScoreProviderConfig:
    kind: str = "file_backed"
    sigma: float = 25.0
    s_min: float = -5.0

    def __post_init__(self):
        if self.kind not in ("file_backed", "synthetic"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError("kernel bandwidth must be positive")
        if not np.isfinite(self.s_min):
            raise ValueError("floor score must be finite")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma": self.sigma, "s_min": self.s_min}

    @classmethod
    def from_dict(cls, d: dict) -> ScoreProviderConfig:
        return cls(d.get("kind", "file_backed"), float(d.get("sigma", 25.0)), float(d.get("s_min", -5.0)))


class ScoreProvider(Protocol):
    def query_score(self, view_id: str, box: PixelBox) -> float: ...

    def query_centers(self, view_id: str, x, y) -> np.ndarray: ...


class FileBackedProvider:
    """Kernel-smoothed score surface built from per-view proposals.

    ``config`` applies to the aerial view and ``street_config`` (defaulting
    to ``config``) to every panorama, since street boxes are several times
    larger in pixels than aerial ones.
    """

    def __init__(self, proposals: Iterable[Proposal], view_ids: Iterable[str], config=None, street_config=None):
        self.config = config or ScoreProviderConfig()
        self.street_config = street_config or self.config
        self._views = frozenset(view_ids)
        grouped = defaultdict(list)
        for p in proposals:
            if p.view_id not in self._views:
                raise UnknownView(f"proposal references unknown view {p.view_id!r}")
            grouped[p.view_id].append((p.box.x, p.box.y, p.score))
        self._centers = {
            v: np.asarray(rows, dtype=float).reshape(-1, 3) for v, rows in grouped.items()
        }

    @property
    def views(self) -> frozenset:
        return self._views

    def proposals_in(self, view_id: str) -> np.ndarray:
        self._check(view_id)
        return self._centers.get(view_id, np.empty((0, 3)))

    def _check(self, view_id):
        if view_id not in self._views:
            raise UnknownView(f"unknown view {view_id!r}")

    def query_centers(self, view_id: str, x, y) -> np.ndarray:
        self._check(view_id)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        cfg = self.config_for(view_id)
        pts = self._centers.get(view_id)
        if pts is None:
            return np.full(x.shape, cfg.s_min)
        return _kernels.kernel_max(x, y, pts[:, 0], pts[:, 1], pts[:, 2], cfg.sigma, cfg.s_min)

    def config_for(self, view_id: str) -> ScoreProviderConfig:
        return self.config if view_id == AERIAL_VIEW else self.street_config

    def query_score(self, view_id: str, box: PixelBox) -> float:
        return float(self.query_centers(view_id, box.x, box.y)[0])


def planted_provider(lat, lng, scores, index, config=None, street_range=25.0, street_config=None):
    """Provider whose surface peaks exactly at planted objects.

    Each object is projected with the standard box conventions into the
    aerial frame and into every panorama within ``street_range`` meters.
    Useful as a perfect detector for tests and noise-free benchmarks.
    """
    config = config or ScoreProviderConfig(kind="synthetic")
    lat = np.asarray(lat, dtype=float)
    lng = np.asarray(lng, dtype=float)
    scores = np.asarray(scores, dtype=float)
    props = []
    ax, ay = mercator_xy_arrays(lat, lng, index.aerial.zoom)
    for x, y, s in zip(ax, ay, scores):
        props.append(Proposal(AERIAL_VIEW, PixelBox(float(x), float(y), 100.0, 100.0), float(s)))
    for cam in index.panoramas:
        ex, ey = enu_arrays(lat, lng, cam.geo.lat, cam.geo.lng)
        z = np.hypot(ex, ey)
        sel = (z > 0) & (z <= street_range)
        if not sel.any():
            continue
        bx, by, bw, bh = street_box_arrays(ex[sel], ey[sel], cam.yaw, cam.h, cam.W, cam.H)
        for x, y, w, h, s in zip(bx, by, bw, bh, scores[sel]):
            props.append(Proposal(cam.id, PixelBox(float(x), float(y), float(w), float(h)), float(s)))
    return FileBackedProvider(props, index.view_ids, config, street_config)
