"""Small-angle geodesic math for waypoint navigation.

Bearing, distance, and turn angle between nearby GPS coordinates using
flat-earth approximations that are accurate to well under a hundredth of a
degree / a tenth of a meter for points within about a kilometer of each
other. Longitude differences are normalized into (-pi, pi] before use so
antimeridian-crossing pairs behave sensibly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Meters of arc length per radian of latitude (111320 m per degree).
METERS_PER_RADIAN = 111320.0 * 180.0 / math.pi


def wrap_radians(angle: float) -> float:
    """Normalize an angle in radians to (-pi, pi]."""
    return math.pi - (math.pi - angle) % (2.0 * math.pi)


def wrap_degrees(angle: float) -> float:
    """Normalize an angle in degrees to (-180, 180]."""
    return 180.0 - (180.0 - angle) % 360.0


def _delta_lon(a: GeoCoordinate, b: GeoCoordinate) -> float:
    # Branchy normalization keeps sub-epsilon deltas exact, unlike the
    # modulo form which rounds them away against 2*pi.
    dlon = b.lon - a.lon
    if dlon > math.pi:
        dlon -= 2.0 * math.pi
    elif dlon <= -math.pi:
        dlon += 2.0 * math.pi
    return dlon


@dataclass(frozen=True)
class GeoCoordinate:
    """A latitude/longitude pair in radians.

    Attributes:
        lat: Latitude in radians, in [-pi/2, pi/2].
        lon: Longitude in radians, in (-pi, pi].
    """

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -math.pi / 2.0 <= self.lat <= math.pi / 2.0:
            raise ValueError(f"latitude {self.lat} out of [-pi/2, pi/2]")
        if not math.isfinite(self.lon):
            raise ValueError(f"longitude {self.lon} not finite")

    @classmethod
    def from_degrees(cls, lat_deg: float, lon_deg: float) -> "GeoCoordinate":
        """Build a coordinate from decimal degrees."""
        return cls(math.radians(lat_deg), wrap_radians(math.radians(lon_deg)))

    def to_degrees(self) -> tuple[float, float]:
        """Return (latitude, longitude) in decimal degrees."""
        return math.degrees(self.lat), math.degrees(self.lon)


def bearing(a: GeoCoordinate, b: GeoCoordinate) -> float:
    """Compass bearing from ``a`` to ``b``.

    Args:
        a: Start coordinate.
        b: End coordinate; must differ from ``a``.

    Returns:
        Bearing in radians, clockwise from north, in (-pi, pi].

    Raises:
        ValueError: If the two coordinates are identical (bearing is
            undefined; silently returning 0 would corrupt turn detection).
    """
    dlat = b.lat - a.lat
    dlon = _delta_lon(a, b)
    if dlat == 0.0 and dlon == 0.0:
        raise ValueError("bearing undefined for identical coordinates")
    theta = math.atan2(dlon * math.cos(b.lat), dlat)
    return theta if theta > -math.pi else math.pi


def distance(a: GeoCoordinate, b: GeoCoordinate) -> float:
    """Distance in meters between two nearby coordinates.

    Uses the equirectangular approximation with the destination-latitude
    cosine; accurate to under 0.1 m within 1 km. Zero for identical points.
    """
    dlat = b.lat - a.lat
    dlon = _delta_lon(a, b)
    c = METERS_PER_RADIAN
    return math.hypot(dlat * c, dlon * c * math.cos(b.lat))


def turn_angle(a: GeoCoordinate, b: GeoCoordinate, c: GeoCoordinate) -> float:
    """Signed turn angle at waypoint ``b`` along the path a -> b -> c.

    Args:
        a: Previous waypoint.
        b: Turn waypoint; must differ from both neighbors.
        c: Next waypoint.

    Returns:
        Turn angle in degrees in (-180, 180]; positive means a right turn.

    Raises:
        ValueError: If a == b or b == c.
    """
    inbound = bearing(a, b)
    outbound = bearing(b, c)
    return wrap_degrees(math.degrees(outbound - inbound))
