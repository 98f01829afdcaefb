"""Road masks and distance-to-road fields from grayscale map rasters.

Roads are pure white (255) in the source rasters. Small white symbols are
removed by a morphological opening and dark text painted on roads by a
closing, both with disk structuring elements. Rasters sit in the global
Mercator pixel frame of their zoom level, so their pixel size follows from
zoom and latitude.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import NoRoadPixelsWarning, OutsideExtent, ParseError
from .geo import GeoPoint, mercator_latlng_arrays, mercator_xy_arrays, meters_per_pixel

ROAD_VALUE = 255
DEFAULT_OPEN_RADIUS = 3
DEFAULT_CLOSE_RADIUS = 5


@dataclass(frozen=True)
class MapRaster:
    origin_x: int
    origin_y: int
    zoom: int
    values: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise ValueError("map raster must be a non-empty 2-D array")
        object.__setattr__(self, "values", v.astype(np.uint8, copy=False))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def center_lat(self) -> float:
        lat, _ = mercator_latlng_arrays(
            self.origin_x + self.width / 2.0, self.origin_y + self.height / 2.0, self.zoom
        )
        return float(lat)


@dataclass(frozen=True)
class DistanceField:
    """Meters from each raster cell to the nearest road cell."""

    origin_x: int
    origin_y: int
    zoom: int
    pixel_size_m: float
    values: np.ndarray
    no_road: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= r * r


def _open(mask, radius):
    if radius <= 0:
        return mask
    se = disk(radius)
    # outside counts as road for erosion and as background for dilation,
    # which keeps the pair adjoint on the bounded grid
    return ndimage.binary_dilation(
        ndimage.binary_erosion(mask, se, border_value=1), se, border_value=0
    )


def _close(mask, radius):
    if radius <= 0:
        return mask
    se = disk(radius)
    return ndimage.binary_erosion(
        ndimage.binary_dilation(mask, se, border_value=0), se, border_value=1
    )


def clean_mask(mask, open_radius=DEFAULT_OPEN_RADIUS, close_radius=DEFAULT_CLOSE_RADIUS):
    return _close(_open(np.asarray(mask, dtype=bool), open_radius), close_radius)


def binarize_roads(raster, open_radius=DEFAULT_OPEN_RADIUS, close_radius=DEFAULT_CLOSE_RADIUS):
    values = raster.values if isinstance(raster, MapRaster) else np.asarray(raster)
    return clean_mask(values == ROAD_VALUE, open_radius, close_radius)


def distance_transform(mask, pixel_size_m: float) -> np.ndarray:
    """Exact Euclidean distance to the nearest True cell, in meters.

    An empty mask yields an all-infinite field and a ``NoRoadPixelsWarning``.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        warnings.warn("road mask has no road pixels", NoRoadPixelsWarning, stacklevel=2)
        return np.full(mask.shape, np.inf)
    return np.sqrt(_kernels.edt_squared(mask)) * pixel_size_m


def build_distance_field(
    raster: MapRaster, open_radius=DEFAULT_OPEN_RADIUS, close_radius=DEFAULT_CLOSE_RADIUS
) -> DistanceField:
    mask = binarize_roads(raster, open_radius, close_radius)
    px = meters_per_pixel(raster.center_lat(), raster.zoom)
    values = distance_transform(mask, px)
    return DistanceField(raster.origin_x, raster.origin_y, raster.zoom, px, values, not mask.any())


def road_distance_arrays(field: DistanceField, lat, lng) -> np.ndarray:
    """Bilinear samples of the field at geographic points (vectorized).

    Cell (i, j) is sampled at its center. Points outside the raster's
    footprint raise ``OutsideExtent``.
    """
    gx, gy = mercator_xy_arrays(lat, lng, field.zoom)
    gx = np.atleast_1d(gx)
    gy = np.atleast_1d(gy)
    cx = gx - field.origin_x
    cy = gy - field.origin_y
    outside = (cx < 0) | (cx > field.width) | (cy < 0) | (cy > field.height)
    if np.any(outside):
        raise OutsideExtent(f"{int(outside.sum())} point(s) outside the map raster")
    if field.no_road:
        return np.full(gx.shape, np.inf)
    return _bilinear(field.values, cx - 0.5, cy - 0.5)


def _bilinear(values, fx, fy):
    h, w = values.shape
    fx = np.clip(fx, 0.0, w - 1.0)
    fy = np.clip(fy, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(fx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(fy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = fx - x0
    ay = fy - y0
    top = values[y0, x0] * (1 - ax) + values[y0, x1] * ax
    bottom = values[y1, x0] * (1 - ax) + values[y1, x1] * ax
    return top * (1 - ay) + bottom * ay


def road_distance_at(field: DistanceField, t: GeoPoint) -> float:
    return float(road_distance_arrays(field, t.lat, t.lng)[0])


def in_extent(field, lat, lng) -> np.ndarray:
    gx, gy = mercator_xy_arrays(lat, lng, field.zoom)
    cx = np.atleast_1d(gx) - field.origin_x
    cy = np.atleast_1d(gy) - field.origin_y
    return (cx >= 0) & (cx <= field.width) & (cy >= 0) & (cy <= field.height)


# ---------------------------------------------------------------------------
# file formats: PGM (P5) + JSON sidecar; float32 field cache + JSON sidecar


def _sidecar(path) -> Path:
    return Path(path).with_suffix(".json")


def _read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PGM header", path=path)
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise ParseError("not a binary PGM (P5) file", path=path)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("bad PGM header", path=path) from None
    if maxval != 255:
        raise ParseError("only 8-bit PGM rasters are supported", path=path)
    payload = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    return payload.reshape(height, width).copy()


def read_map_raster(path) -> MapRaster:
    values = _read_pgm(path)
    side = _sidecar(path)
    try:
        meta = json.loads(side.read_text(encoding="utf-8"))
        return MapRaster(int(meta["origin_x"]), int(meta["origin_y"]), int(meta["zoom"]), values)
    except FileNotFoundError:
        raise ParseError("missing map sidecar", path=side) from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad map sidecar: {exc}", path=side) from None


def write_map_raster(raster: MapRaster, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(raster.values, dtype=np.uint8).tobytes())
    _sidecar(path).write_text(
        json.dumps({"origin_x": raster.origin_x, "origin_y": raster.origin_y, "zoom": raster.zoom}),
        encoding="utf-8",
    )


def write_distance_field(field: DistanceField, path) -> None:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(field.values, dtype="<f4").tobytes())
    _sidecar(path).write_text(
        json.dumps(
            {
                "origin_x": field.origin_x,
                "origin_y": field.origin_y,
                "zoom": field.zoom,
                "width": field.width,
                "height": field.height,
                "pixel_size_m": field.pixel_size_m,
                "no_road": field.no_road,
            }
        ),
        encoding="utf-8",
    )


def read_distance_field(path) -> DistanceField:
    path = Path(path)
    try:
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
        shape = (int(meta["height"]), int(meta["width"]))
    except (FileNotFoundError, KeyError, ValueError) as exc:
        raise ParseError(f"bad distance-field sidecar: {exc}", path=_sidecar(path)) from None
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != shape[0] * shape[1]:
        raise ParseError("distance-field payload size does not match sidecar", path=path)
    return DistanceField(
        int(meta["origin_x"]),
        int(meta["origin_y"]),
        int(meta["zoom"]),
        float(meta["pixel_size_m"]),
        raw.reshape(shape).astype(float),
        bool(meta.get("no_road", False)),
    )


def pixel_size_for(raster: MapRaster) -> float:
    return meters_per_pixel(raster.center_lat(), raster.zoom)
