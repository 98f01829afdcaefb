"""Coordinate transforms between geographic, local ENU, aerial and panorama frames.

All angles are radians. Aerial pixel coordinates live in the global Web
Mercator frame of a zoom level (``256 * 2**zoom`` pixels square); tiles are
256x256 windows of that frame. Panorama pixels use a top-row origin with y
growing downward from the zenith.

The scalar functions taking :class:`GeoPoint` / :class:`CameraPose` validate
their inputs; the ``*_arrays`` helpers are the vectorized workhorses used by
the pipeline and skip per-element validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EnuOutOfRange,
    LatOutOfMercatorBand,
    NoGroundIntersection,
    PixelOutOfFrame,
    ZeroRange,
)

EARTH_RADIUS = 6378137.0
TILE_SIZE = 256
# atan(sinh(pi)): latitude where the Mercator frame ends (85.0511 deg)
MERCATOR_MAX_LAT = math.atan(math.sinh(math.pi))

AERIAL_BOX_PX = 100.0
STREET_OBJECT_WIDTH_M = 8.0
STREET_OBJECT_HEIGHT_M = 12.0

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True, slots=True)
class GeoPoint:
    lat: float
    lng: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lng)):
            raise LatOutOfMercatorBand(f"non-finite coordinate ({self.lat}, {self.lng})")
        if abs(self.lat) > MERCATOR_MAX_LAT:
            raise LatOutOfMercatorBand(
                f"latitude {math.degrees(self.lat):.6f} deg outside the Mercator band"
            )
        if not (-math.pi <= self.lng < math.pi):
            raise LatOutOfMercatorBand(f"longitude {self.lng} rad outside [-pi, pi)")

    @classmethod
    def from_degrees(cls, lat_deg: float, lng_deg: float) -> GeoPoint:
        return cls(math.radians(lat_deg), wrap_lng(math.radians(lng_deg)))

    @property
    def lat_deg(self) -> float:
        return math.degrees(self.lat)

    @property
    def lng_deg(self) -> float:
        return math.degrees(self.lng)


@dataclass(frozen=True, slots=True)
class EnuVector:
    e_x: float
    e_y: float
    e_z: float


@dataclass(frozen=True, slots=True)
class CameraPose:
    """Pose of an equirectangular panorama.

    ``yaw`` is the heading of the panorama's center column, clockwise from
    north; ``h`` is the camera height above the (flat) ground.
    """

    id: str
    geo: GeoPoint
    yaw: float
    h: float = 2.5
    W: int = 1664
    H: int = 832
    epoch: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.yaw < TWO_PI):
            raise ValueError(f"yaw {self.yaw} outside [0, 2pi)")
        if not self.h > 0:
            raise ValueError("camera height must be positive")
        if self.W <= 0 or self.H <= 0:
            raise ValueError("panorama dimensions must be positive")


@dataclass(frozen=True, slots=True)
class PixelPoint:
    x: float
    y: float


@dataclass(frozen=True, slots=True)
class PixelBox:
    """Box given by its center and size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got {self.w}x{self.h}")

    @property
    def bottom_center(self) -> PixelPoint:
        return PixelPoint(self.x, self.y + self.h / 2.0)


def wrap_lng(lng: float) -> float:
    """Wrap a longitude into [-pi, pi)."""
    return (lng + math.pi) % TWO_PI - math.pi


def wrap_yaw(yaw: float) -> float:
    return yaw % TWO_PI


def frame_size(zoom: int) -> float:
    """Width (= height) of the global Mercator pixel frame at ``zoom``."""
    return TILE_SIZE * float(2**zoom)


def meters_per_pixel(lat: float, zoom: int, radius: float = EARTH_RADIUS) -> float:
    return TWO_PI * radius * math.cos(lat) / frame_size(zoom)


# ---------------------------------------------------------------------------
# Web Mercator


def mercator_xy_arrays(lat, lng, zoom: int):
    n = frame_size(zoom)
    lat = np.asarray(lat, dtype=float)
    lng = np.asarray(lng, dtype=float)
    x = n * (lng + np.pi) / TWO_PI
    y = n * (0.5 - np.log(np.tan(np.pi / 4 + lat / 2)) / TWO_PI)
    return x, y


def mercator_latlng_arrays(x, y, zoom: int):
    n = frame_size(zoom) / 2.0
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lng = np.pi * x / n - np.pi
    lat = 2.0 * np.arctan(np.exp(np.pi - y * np.pi / n)) - np.pi / 2
    return lat, lng


def mercator_geo_to_pixel(p: GeoPoint, zoom: int) -> PixelPoint:
    if abs(p.lat) > MERCATOR_MAX_LAT:
        raise LatOutOfMercatorBand(f"latitude {p.lat} outside the Mercator band")
    n = frame_size(zoom)
    x = n * (p.lng + math.pi) / TWO_PI
    y = n * (0.5 - math.log(math.tan(math.pi / 4 + p.lat / 2)) / TWO_PI)
    # at the band edge rounding can step a hair outside the frame
    return PixelPoint(x, min(max(y, 0.0), n))


def mercator_pixel_to_geo(p: PixelPoint, zoom: int) -> GeoPoint:
    n = frame_size(zoom)
    if not (0.0 <= p.x <= n and 0.0 <= p.y <= n):
        raise PixelOutOfFrame(f"pixel ({p.x}, {p.y}) outside the zoom-{zoom} frame")
    half = n / 2.0
    lng = math.pi * p.x / half - math.pi
    lat = 2.0 * math.atan(math.exp(math.pi - p.y * math.pi / half)) - math.pi / 2
    return GeoPoint(max(-MERCATOR_MAX_LAT, min(MERCATOR_MAX_LAT, lat)), wrap_lng(lng))


# ---------------------------------------------------------------------------
# Local ENU frame


def enu_arrays(lat, lng, lat_c, lng_c, radius: float = EARTH_RADIUS):
    """East/north offsets of ``(lat, lng)`` from a reference point, flat-earth."""
    lat = np.asarray(lat, dtype=float)
    lng = np.asarray(lng, dtype=float)
    e_x = radius * np.cos(lat_c) * np.sin(lng - lng_c)
    e_y = radius * np.sin(lat - lat_c)
    return e_x, e_y


def geo_from_enu_arrays(e_x, e_y, lat_c, lng_c, radius: float = EARTH_RADIUS):
    sy = np.asarray(e_y, dtype=float) / radius
    sx = np.asarray(e_x, dtype=float) / (radius * np.cos(lat_c))
    if np.any(np.abs(sy) > 1) or np.any(np.abs(sx) > 1):
        raise EnuOutOfRange("ENU offset too large to invert")
    return lat_c + np.arcsin(sy), lng_c + np.arcsin(sx)


def enu_from_geo(target: GeoPoint, cam: CameraPose, radius: float = EARTH_RADIUS) -> EnuVector:
    c = cam.geo
    e_x = radius * math.cos(c.lat) * math.sin(target.lng - c.lng)
    e_y = radius * math.sin(target.lat - c.lat)
    return EnuVector(e_x, e_y, -cam.h)


def geo_from_enu(v: EnuVector, cam: CameraPose, radius: float = EARTH_RADIUS) -> GeoPoint:
    c = cam.geo
    sy = v.e_y / radius
    sx = v.e_x / (radius * math.cos(c.lat))
    if abs(sy) > 1 or abs(sx) > 1:
        raise EnuOutOfRange(f"ENU offset ({v.e_x}, {v.e_y}) cannot be inverted")
    return GeoPoint(c.lat + math.asin(sy), wrap_lng(c.lng + math.asin(sx)))


def local_xy(lat, lng, anchor: GeoPoint):
    """Planar meters about ``anchor``; good to millimeters across a few km."""
    return enu_arrays(lat, lng, anchor.lat, anchor.lng)


# ---------------------------------------------------------------------------
# Equirectangular panoramas


def street_pixel_arrays(e_x, e_y, yaw, h, W, H):
    e_x = np.asarray(e_x, dtype=float)
    e_y = np.asarray(e_y, dtype=float)
    z = np.hypot(e_x, e_y)
    x = np.mod((np.pi + np.arctan2(e_x, e_y) - yaw) * W / TWO_PI, W)
    y = (np.pi / 2 - np.arctan2(-h, z)) * H / np.pi
    return x, y, z


def streetview_geo_to_pixel(target: GeoPoint, cam: CameraPose) -> PixelPoint:
    e = enu_from_geo(target, cam)
    z = math.hypot(e.e_x, e.e_y)
    if z == 0.0:
        raise ZeroRange(f"target coincides with camera {cam.id}")
    x = ((math.pi + math.atan2(e.e_x, e.e_y) - cam.yaw) * cam.W / TWO_PI) % cam.W
    y = (math.pi / 2 - math.atan2(-cam.h, z)) * cam.H / math.pi
    return PixelPoint(x, y)


def street_ground_arrays(x, y, yaw, h, W, H):
    """Ground-plane ENU offsets of panorama pixels below the horizon."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    azimuth = TWO_PI * x / W - np.pi + yaw
    tilt = np.pi / 2 - np.pi * y / H
    with np.errstate(divide="ignore"):
        z = h / np.tan(-tilt)
    return z * np.sin(azimuth), z * np.cos(azimuth)


def streetview_pixel_to_geo(p: PixelPoint, cam: CameraPose) -> GeoPoint:
    if p.y <= cam.H / 2.0:
        raise NoGroundIntersection(f"row {p.y} is at or above the horizon of {cam.id}")
    azimuth = TWO_PI * p.x / cam.W - math.pi + cam.yaw
    tilt = math.pi / 2 - math.pi * p.y / cam.H
    z = cam.h / math.tan(-tilt)
    return geo_from_enu(EnuVector(z * math.sin(azimuth), z * math.cos(azimuth), -cam.h), cam)


# ---------------------------------------------------------------------------
# Box conventions


def aerial_box(target: GeoPoint, zoom: int) -> PixelBox:
    c = mercator_geo_to_pixel(target, zoom)
    return PixelBox(c.x, c.y, AERIAL_BOX_PX, AERIAL_BOX_PX)


def street_box_arrays(e_x, e_y, yaw, h, W, H):
    """Box occupied by an 8 m wide, 12 m tall object standing at the ground offset.

    Returns center x, center y, width, height. The box bottom is the ground
    contact row, so its bottom-center inverts back to the ground point.
    """
    x, y_ground, z = street_pixel_arrays(e_x, e_y, yaw, h, W, H)
    half_az = np.arctan2(STREET_OBJECT_WIDTH_M / 2.0, z)
    w = 2.0 * half_az * W / TWO_PI
    y_top = (np.pi / 2 - np.arctan2(STREET_OBJECT_HEIGHT_M - h, z)) * H / np.pi
    bh = y_ground - y_top
    return x, (y_ground + y_top) / 2.0, w, bh


def street_box(target: GeoPoint, cam: CameraPose) -> PixelBox:
    e = enu_from_geo(target, cam)
    if math.hypot(e.e_x, e.e_y) == 0.0:
        raise ZeroRange(f"target coincides with camera {cam.id}")
    x, y, w, h = street_box_arrays(e.e_x, e.e_y, cam.yaw, cam.h, cam.W, cam.H)
    return PixelBox(float(x), float(y), float(w), float(h))


def make_training_box(view_kind: str, target: GeoPoint, cam_or_zoom) -> PixelBox:
    """Feature-extraction box for a point target.

    ``view_kind`` is ``"aerial"`` (``cam_or_zoom`` is the zoom level) or
    ``"street"`` (``cam_or_zoom`` is a :class:`CameraPose`).
    """
    if view_kind == "aerial":
        return aerial_box(target, int(cam_or_zoom))
    if view_kind == "street":
        return street_box(target, cam_or_zoom)
    raise ValueError(f"unknown view kind {view_kind!r}")
