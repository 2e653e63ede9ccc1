"""Geodetic <-> local tangent-plane (east/north/up) conversion.

Small-offset equirectangular approximation on the WGS-84 ellipsoid. The
meridian and prime-vertical radii are taken at the mid latitude of the two
points, which makes the forward map antisymmetric under swapping point and
origin; the inverse solves for that mid latitude by fixed-point iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

MAX_OFFSET_M = 50_000.0


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float
    alt: float = 0.0

    def __post_init__(self):
        for name in ("lat", "lon", "alt"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"GeoPoint.{name} must be finite, got {getattr(self, name)!r}")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class LocalPoint:
    east: float
    north: float
    up: float = 0.0

    def __post_init__(self):
        for name in ("east", "north", "up"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"LocalPoint.{name} must be finite, got {getattr(self, name)!r}")

    def __sub__(self, other: LocalPoint) -> LocalPoint:
        return LocalPoint(self.east - other.east, self.north - other.north, self.up - other.up)

    def __add__(self, other: LocalPoint) -> LocalPoint:
        return LocalPoint(self.east + other.east, self.north + other.north, self.up + other.up)

    def norm(self) -> float:
        return math.sqrt(self.east**2 + self.north**2 + self.up**2)

    def horizontal_distance(self, other: LocalPoint) -> float:
        return math.hypot(self.east - other.east, self.north - other.north)

    def distance(self, other: LocalPoint) -> float:
        return (self - other).norm()

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.east, self.north, self.up)


def meridian_radius(lat_deg: float) -> float:
    """Radius of curvature along the meridian, in meters."""
    s = math.sin(math.radians(lat_deg))
    return WGS84_A * (1.0 - WGS84_E2) / (1.0 - WGS84_E2 * s * s) ** 1.5


def prime_vertical_radius(lat_deg: float) -> float:
    s = math.sin(math.radians(lat_deg))
    return WGS84_A / math.sqrt(1.0 - WGS84_E2 * s * s)


def _wrap_lon(dlon: float) -> float:
    return (dlon + 180.0) % 360.0 - 180.0


def to_local(p: GeoPoint, origin: GeoPoint) -> LocalPoint:
    """East/north/up offset of ``p`` relative to ``origin`` in meters."""
    mid = 0.5 * (p.lat + origin.lat)
    north = math.radians(p.lat - origin.lat) * meridian_radius(mid)
    east = (
        math.radians(_wrap_lon(p.lon - origin.lon))
        * prime_vertical_radius(mid)
        * math.cos(math.radians(mid))
    )
    if math.hypot(east, north) > MAX_OFFSET_M:
        raise ValueError(
            f"offset {math.hypot(east, north):.0f} m exceeds the {MAX_OFFSET_M:.0f} m "
            "tangent-plane limit"
        )
    return LocalPoint(east, north, p.alt - origin.alt)


def from_local(p: LocalPoint, origin: GeoPoint) -> GeoPoint:
    """Inverse of :func:`to_local` under the same approximation."""
    if math.hypot(p.east, p.north) > MAX_OFFSET_M:
        raise ValueError(f"local offset exceeds the {MAX_OFFSET_M:.0f} m tangent-plane limit")
    lat = origin.lat + math.degrees(p.north / meridian_radius(origin.lat))
    # converges to machine precision in a handful of iterations for < 50 km
    for _ in range(20):
        new_lat = origin.lat + math.degrees(p.north / meridian_radius(0.5 * (lat + origin.lat)))
        if abs(new_lat - lat) < 1e-15:
            lat = new_lat
            break
        lat = new_lat
    mid = 0.5 * (lat + origin.lat)
    lon = origin.lon + math.degrees(
        p.east / (prime_vertical_radius(mid) * math.cos(math.radians(mid)))
    )
    lon = _wrap_lon(lon)
    return GeoPoint(lat, lon, origin.alt + p.up)
