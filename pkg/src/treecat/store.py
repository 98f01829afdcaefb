"""Data model, file formats and persistence.

File formats (UTF-8 throughout):

* inventory: CSV with columns ``id, lat_deg, lng_deg, species, epoch, type``;
  rows whose ``type`` is not ``tree`` are dropped on load.
* panoramas: JSON Lines, one pose per line
  (``id, lat_deg, lng_deg, yaw_deg, h, width, height, epoch``).
* proposals: JSON Lines (``view_id, x, y, w, h, score``).
* aerial frame: JSON (``zoom, origin_x, origin_y, width, height``).
* detections: GeoJSON FeatureCollection of Point features.

Coordinates are degrees on disk and radians in memory.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateView,
    EmptyIndex,
    InvalidCoordinate,
    ParseError,
    UnknownView,
)
from .geo import MERCATOR_MAX_LAT, CameraPose, GeoPoint, PixelBox, enu_arrays, frame_size

INVENTORY_COLUMNS = ("id", "lat_deg", "lng_deg", "species", "epoch", "type")
AERIAL_VIEW = "aerial"


@dataclass(frozen=True, slots=True)
class GroundTruthTree:
    id: str
    geo: GeoPoint
    species: str | None = None
    epoch: str | None = None


@dataclass(frozen=True, slots=True)
class Proposal:
    view_id: str
    box: PixelBox
    score: float


@dataclass(frozen=True, slots=True)
class AerialFrame:
    """Window of the global Mercator frame covered by the aerial imagery."""

    zoom: int
    origin_x: float
    origin_y: float
    width: float
    height: float

    def contains(self, x, y):
        return (
            (x >= self.origin_x)
            & (x <= self.origin_x + self.width)
            & (y >= self.origin_y)
            & (y <= self.origin_y + self.height)
        )


@dataclass(frozen=True)
class ViewIndex:
    aerial: AerialFrame
    panoramas: tuple[CameraPose, ...] = ()
    map_path: str | None = None
    _by_id: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        by_id = {}
        for cam in self.panoramas:
            if cam.id in by_id or cam.id == AERIAL_VIEW:
                raise DuplicateView(f"duplicate view id {cam.id!r}")
            by_id[cam.id] = cam
        object.__setattr__(self, "_by_id", by_id)

    def panorama(self, view_id: str) -> CameraPose:
        try:
            return self._by_id[view_id]
        except KeyError:
            raise UnknownView(f"unknown view {view_id!r}") from None

    def has_view(self, view_id: str) -> bool:
        return view_id == AERIAL_VIEW or view_id in self._by_id

    @property
    def view_ids(self) -> list[str]:
        return [AERIAL_VIEW] + [c.id for c in self.panoramas]


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    """An accepted tree with its raw potential values.

    ``weights`` holds the scalars applied to (aerial, street, spatial, map);
    ``score`` is their weighted sum.
    """

    id: str
    geo: GeoPoint
    score: float
    aerial: float = 0.0
    street: float = 0.0
    spatial: float = 0.0
    map: float = 0.0
    weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    species: str | None = None

    def weighted_sum(self) -> float:
        k1, k2, k3, k4 = self.weights
        return k1 * self.aerial + k2 * self.street + k3 * self.spatial + k4 * self.map


def normalize_species(label: str | None) -> str | None:
    if label is None:
        return None
    label = " ".join(label.split()).lower()
    return label or None


def exact_degrees(rad: float) -> float:
    """Degree value that converts back to exactly ``rad`` when one exists nearby."""
    d = math.degrees(rad)
    if math.radians(d) == rad:
        return d
    lo = hi = d
    for _ in range(8):
        lo = math.nextafter(lo, -math.inf)
        hi = math.nextafter(hi, math.inf)
        if math.radians(lo) == rad:
            return lo
        if math.radians(hi) == rad:
            return hi
    return d


def _geo_from_degrees(lat_deg, lng_deg, line=None, path=None) -> GeoPoint:
    try:
        lat_deg = float(lat_deg)
        lng_deg = float(lng_deg)
    except (TypeError, ValueError):
        raise ParseError(f"non-numeric coordinate ({lat_deg!r}, {lng_deg!r})", line, path) from None
    if not (math.isfinite(lat_deg) and math.isfinite(lng_deg)):
        raise InvalidCoordinate("non-finite coordinate", line, path)
    lat = math.radians(lat_deg)
    if abs(lat) > MERCATOR_MAX_LAT:
        raise InvalidCoordinate(f"latitude {lat_deg} outside the Mercator band", line, path)
    if not (-180.0 <= lng_deg <= 180.0):
        raise InvalidCoordinate(f"longitude {lng_deg} out of range", line, path)
    lng = math.radians(lng_deg)
    if lng >= math.pi:
        lng -= 2 * math.pi
    return GeoPoint(lat, lng)


# ---------------------------------------------------------------------------
# inventory


def load_inventory(path) -> list[GroundTruthTree]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    reader = csv.DictReader(io.StringIO(text))
    missing = {"id", "lat_deg", "lng_deg"} - set(reader.fieldnames or ())
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}", 1, path)
    trees = []
    seen = set()
    for row in reader:
        line = reader.line_num
        if None in row:
            raise ParseError("too many fields", line, path)
        kind = (row.get("type") or "tree").strip().lower()
        if kind != "tree":
            continue
        tid = (row.get("id") or "").strip()
        if not tid:
            raise ParseError("empty id", line, path)
        if tid in seen:
            raise ParseError(f"duplicate tree id {tid!r}", line, path)
        seen.add(tid)
        geo = _geo_from_degrees(row["lat_deg"], row["lng_deg"], line, path)
        trees.append(
            GroundTruthTree(
                tid,
                geo,
                normalize_species(row.get("species") or None),
                (row.get("epoch") or "").strip() or None,
            )
        )
    return trees


def write_inventory(trees, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INVENTORY_COLUMNS)
        for t in trees:
            w.writerow(
                [
                    t.id,
                    repr(exact_degrees(t.geo.lat)),
                    repr(exact_degrees(t.geo.lng)),
                    t.species or "",
                    t.epoch or "",
                    "tree",
                ]
            )


# ---------------------------------------------------------------------------
# JSON Lines helpers


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno, path) from None


def _write_jsonl(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")


def _field(obj, key, lineno, path, kind=float):
    try:
        value = obj[key]
    except (KeyError, TypeError):
        raise ParseError(f"missing field {key!r}", lineno, path) from None
    try:
        value = kind(value)
    except (TypeError, ValueError):
        raise ParseError(f"bad value for {key!r}: {value!r}", lineno, path) from None
    if kind is float and not math.isfinite(value):
        raise ParseError(f"non-finite {key!r}", lineno, path)
    return value


def load_panorama_index(path) -> list[CameraPose]:
    cams = []
    seen = set()
    for lineno, obj in _iter_jsonl(path):
        cid = _field(obj, "id", lineno, path, str)
        if cid in seen:
            raise DuplicateView(f"duplicate view id {cid!r}", lineno, path)
        seen.add(cid)
        geo = _geo_from_degrees(obj.get("lat_deg"), obj.get("lng_deg"), lineno, path)
        yaw = math.radians(_field(obj, "yaw_deg", lineno, path)) % (2 * math.pi)
        h = _field(obj, "h", lineno, path)
        width = _field(obj, "width", lineno, path, int)
        height = _field(obj, "height", lineno, path, int)
        if h <= 0 or width <= 0 or height <= 0:
            raise ParseError("camera height and panorama size must be positive", lineno, path)
        epoch = obj.get("epoch")
        cams.append(CameraPose(cid, geo, yaw, h, width, height, None if epoch is None else str(epoch)))
    return cams


def write_panorama_index(cams, path) -> None:
    _write_jsonl(
        (
            {
                "id": c.id,
                "lat_deg": exact_degrees(c.geo.lat),
                "lng_deg": exact_degrees(c.geo.lng),
                "yaw_deg": exact_degrees(c.yaw),
                "h": c.h,
                "width": c.W,
                "height": c.H,
                "epoch": c.epoch,
            }
            for c in cams
        ),
        path,
    )


def load_proposals(path) -> list[Proposal]:
    props = []
    for lineno, obj in _iter_jsonl(path):
        view = _field(obj, "view_id", lineno, path, str)
        x, y, w, h, s = (_field(obj, k, lineno, path) for k in ("x", "y", "w", "h", "score"))
        if w <= 0 or h <= 0:
            raise ParseError("box size must be positive", lineno, path)
        props.append(Proposal(view, PixelBox(x, y, w, h), s))
    return props


def write_proposals(props, path) -> None:
    _write_jsonl(
        (
            {"view_id": p.view_id, "x": p.box.x, "y": p.box.y, "w": p.box.w, "h": p.box.h, "score": p.score}
            for p in props
        ),
        path,
    )


def check_proposals(props, index: ViewIndex) -> None:
    """Every proposal must reference a known view and lie inside its frame."""
    for i, p in enumerate(props, start=1):
        if p.view_id == AERIAL_VIEW:
            ok = bool(index.aerial.contains(p.box.x, p.box.y))
        else:
            if not index.has_view(p.view_id):
                raise UnknownView(f"proposal {i}: unknown view {p.view_id!r}")
            cam = index.panorama(p.view_id)
            ok = 0 <= p.box.x <= cam.W and 0 <= p.box.y <= cam.H
        if not ok:
            raise ParseError(f"proposal box center outside view {p.view_id!r}", i)


def load_aerial_frame(path) -> AerialFrame:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        frame = AerialFrame(
            int(obj["zoom"]), float(obj["origin_x"]), float(obj["origin_y"]),
            float(obj["width"]), float(obj["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad aerial frame: {exc}", path=path) from None
    if not (0 <= frame.zoom <= 23) or frame.width <= 0 or frame.height <= 0:
        raise ParseError("invalid aerial frame geometry", path=path)
    if frame.origin_x < 0 or frame.origin_x + frame.width > frame_size(frame.zoom):
        raise ParseError("aerial frame exceeds the Mercator frame", path=path)
    return frame


def write_aerial_frame(frame: AerialFrame, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"zoom": frame.zoom, "origin_x": frame.origin_x, "origin_y": frame.origin_y,
             "width": frame.width, "height": frame.height},
            fh, indent=2, sort_keys=True,
        )


# ---------------------------------------------------------------------------
# nearest panorama


def nearest_panorama_indices(lat, lng, cams) -> tuple[np.ndarray, np.ndarray]:
    """Index of the closest camera (ground distance in its ENU frame) per point.

    Ties resolve to the smallest camera id.
    """
    if not cams:
        raise EmptyIndex("no panoramas available")
    lat = np.atleast_1d(np.asarray(lat, dtype=float))
    lng = np.atleast_1d(np.asarray(lng, dtype=float))
    order = sorted(range(len(cams)), key=lambda i: cams[i].id)
    clat = np.array([cams[i].geo.lat for i in order])
    clng = np.array([cams[i].geo.lng for i in order])
    best = np.empty(lat.shape[0], dtype=np.int64)
    dist = np.empty(lat.shape[0])
    chunk = max(1, 2_000_000 // max(1, len(order)))
    for s in range(0, lat.shape[0], chunk):
        ex, ey = enu_arrays(lat[s:s + chunk, None], lng[s:s + chunk, None], clat[None, :], clng[None, :])
        d = np.hypot(ex, ey)
        j = np.argmin(d, axis=1)  # first minimum = smallest id in sorted order
        best[s:s + chunk] = np.asarray(order)[j]
        dist[s:s + chunk] = d[np.arange(d.shape[0]), j]
    return best, dist


def nearest_panorama(t: GeoPoint, index) -> CameraPose:
    cams = index.panoramas if isinstance(index, ViewIndex) else list(index)
    i, _ = nearest_panorama_indices(t.lat, t.lng, cams)
    return cams[int(i[0])]


# ---------------------------------------------------------------------------
# detections (GeoJSON)


def detections_to_geojson(records) -> dict:
    feats = []
    for r in records:
        feats.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [exact_degrees(r.geo.lng), exact_degrees(r.geo.lat)],
                },
                "properties": {
                    "id": r.id,
                    "score": r.score,
                    "aerial": r.aerial,
                    "street": r.street,
                    "spatial": r.spatial,
                    "map": r.map,
                    "weights": list(r.weights),
                    "species": r.species,
                    # exact radians; degrees alone do not always round-trip
                    "lat_rad": r.geo.lat,
                    "lng_rad": r.geo.lng,
                },
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def write_detections(records, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(detections_to_geojson(records), fh, allow_nan=False)
    os.replace(tmp, path)


def read_detections(path) -> list[DetectionRecord]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid GeoJSON: {exc.msg}", exc.lineno, path) from None
    if doc.get("type") != "FeatureCollection":
        raise ParseError("expected a FeatureCollection", path=path)
    out = []
    for i, feat in enumerate(doc.get("features", []), start=1):
        try:
            props = feat["properties"]
            lng_deg, lat_deg = feat["geometry"]["coordinates"][:2]
        except (KeyError, TypeError, ValueError):
            raise ParseError(f"feature {i} is not a Point feature", path=path) from None
        if "lat_rad" in props and "lng_rad" in props:
            geo = GeoPoint(float(props["lat_rad"]), float(props["lng_rad"]))
        else:
            geo = _geo_from_degrees(lat_deg, lng_deg, i, path)
        out.append(
            DetectionRecord(
                str(props.get("id", i - 1)),
                geo,
                float(props["score"]),
                float(props.get("aerial", 0.0)),
                float(props.get("street", 0.0)),
                float(props.get("spatial", 0.0)),
                float(props.get("map", 0.0)),
                tuple(float(v) for v in props.get("weights", (1.0, 1.0, 1.0, 1.0))),
                props.get("species"),
            )
        )
    return out


# ---------------------------------------------------------------------------
# scene directories


@dataclass(frozen=True)
class Scene:
    """Everything the pipeline reads for one region."""

    inventory: list
    index: ViewIndex
    proposals: list
    root: Path | None = None


SCENE_FILES = {
    "inventory": "inventory.csv",
    "panoramas": "panoramas.jsonl",
    "proposals": "proposals.jsonl",
    "aerial": "aerial.json",
    "map": "map.pgm",
}


def load_scene(root) -> Scene:
    root = Path(root)
    frame = load_aerial_frame(root / SCENE_FILES["aerial"])
    cams = load_panorama_index(root / SCENE_FILES["panoramas"])
    map_path = root / SCENE_FILES["map"]
    index = ViewIndex(frame, tuple(cams), str(map_path) if map_path.exists() else None)
    props = load_proposals(root / SCENE_FILES["proposals"])
    check_proposals(props, index)
    inv_path = root / SCENE_FILES["inventory"]
    inventory = load_inventory(inv_path) if inv_path.exists() else []
    return Scene(inventory, index, props, root)
