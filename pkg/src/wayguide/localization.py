"""GPS offset correction, turn detection, and compass alignment.

Three mechanisms keep the estimated geo-position and heading honest:
lateral correction slides raw GPS sideways onto the waypoint line, surface
turn detection re-anchors the position when a mapped side opening matches
an upcoming route turn, and an SVD point-set alignment between the walked
world trajectory and its GPS track recovers the compass offset.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geodesy import METERS_PER_RADIAN, GeoCoordinate, turn_angle
from .occupancy import WorldPose
from .surface import SurfaceGrid2D, cast_walkable_line, cast_walkable_lines

LATERAL_GATE = 12.0
TURN_WAYPOINT_GATE = 8.0
BRANCH_START = 2.0
BRANCH_SPACING = 0.1
BRANCH_MARGIN = 3.5
MIN_TURN_DEGREES = 15.0
PAIR_SPACING = 0.3
BUFFER_SIZE = 20
MIN_SV_RATIO = 0.05


@dataclass(frozen=True)
class GeoOffset:
    """Correction added to raw GPS readings, in radians."""

    dlat: float = 0.0
    dlon: float = 0.0

    def apply(self, raw: GeoCoordinate) -> GeoCoordinate:
        return GeoCoordinate(raw.lat + self.dlat, raw.lon + self.dlon)

    def shifted(self, dlat: float, dlon: float) -> "GeoOffset":
        return GeoOffset(self.dlat + dlat, self.dlon + dlon)


@dataclass
class Route:
    """Ordered waypoints plus the index of the current target."""

    waypoints: list
    target_index: int = 0

    def __post_init__(self) -> None:
        if len(self.waypoints) < 2:
            raise ValueError("a route needs at least two waypoints")
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if a.lat == b.lat and a.lon == b.lon:
                raise ValueError("consecutive waypoints must be distinct")

    @property
    def target(self) -> GeoCoordinate:
        return self.waypoints[self.target_index]

    def previous(self, position: GeoCoordinate | None = None) -> GeoCoordinate:
        """Waypoint the current leg starts from (or the given position)."""
        if self.target_index > 0:
            return self.waypoints[self.target_index - 1]
        if position is not None:
            return position
        return self.waypoints[0]

    def next_after_target(self) -> GeoCoordinate | None:
        if self.target_index + 1 < len(self.waypoints):
            return self.waypoints[self.target_index + 1]
        return None

    def advance(self) -> bool:
        """Move to the next leg; returns False at the final waypoint."""
        if self.target_index + 1 < len(self.waypoints):
            self.target_index += 1
            return True
        return False

    @property
    def finished(self) -> bool:
        return self.target_index >= len(self.waypoints) - 1


def load_route(path) -> Route:
    """Read a route file: one 'lat lon' pair in decimal degrees per line.

    Blank lines and lines starting with '#' are ignored.
    """
    waypoints = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"route line needs 'lat lon': {line!r}")
        waypoints.append(GeoCoordinate.from_degrees(float(parts[0]), float(parts[1])))
    return Route(waypoints=waypoints)


def save_route(path, route: Route) -> None:
    lines = ["# route waypoints: decimal degrees, 'lat lon' per line"]
    for wp in route.waypoints:
        lat, lon = wp.to_degrees()
        lines.append(f"{lat!r} {lon!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def _local_meters(coord: GeoCoordinate, anchor: GeoCoordinate) -> np.ndarray:
    """(north, east) meters of coord relative to anchor."""
    c = METERS_PER_RADIAN
    return np.array(
        [
            (coord.lat - anchor.lat) * c,
            (coord.lon - anchor.lon) * c * math.cos(anchor.lat),
        ]
    )


def correct_lateral(
    raw_gps: GeoCoordinate,
    offset: GeoOffset,
    prev_wp: GeoCoordinate,
    target_wp: GeoCoordinate,
) -> GeoOffset:
    """Slide the corrected GPS fix sideways onto the current waypoint line.

    Projects raw + offset onto the infinite line through the leg's two
    waypoints in local meters. Within 12 m of the line the offset absorbs
    the full lateral error; farther away it is left untouched. The
    along-track coordinate never changes.
    """
    est = offset.apply(raw_gps)
    p = _local_meters(est, prev_wp)
    b = _local_meters(target_wp, prev_wp)
    norm = np.linalg.norm(b)
    if norm == 0.0:
        raise ValueError("waypoints of the leg coincide")
    d_hat = b / norm
    proj = (p @ d_hat) * d_hat
    lateral = p - proj
    if np.linalg.norm(lateral) >= LATERAL_GATE:
        return offset
    c = METERS_PER_RADIAN
    dlat = -lateral[0] / c
    dlon = -lateral[1] / (c * math.cos(prev_wp.lat))
    return offset.shifted(dlat, dlon)


@dataclass(frozen=True)
class TurnDetection:
    """A route turn located on the surface grid."""

    distance: float  # meters ahead along the path line
    world_xz: tuple  # world-frame (x, z) of the detected turn
    offset: GeoOffset  # updated offset pinning the turn to its waypoint


def detect_turn(
    grid: SurfaceGrid2D,
    path_heading: float,
    pose: WorldPose,
    route: Route,
    est_gps: GeoCoordinate,
    offset: GeoOffset,
    compass_theta: float = 0.0,
) -> TurnDetection | None:
    """Look for the upcoming route turn as a side opening in the surface grid.

    Casts the main path line, then from 2 m outward every 0.1 m casts a
    branch toward the turn direction and an opposing branch away from it
    (both stop at the first non-walkable cell). Branches whose main length
    and total length both exceed their lower medians by 3.5 m mark an
    opening; each maximal run of consecutive starts is a candidate whose
    distance is the mean of its start distances. A candidate landing within
    8 m of the target waypoint pins the GPS offset so the detected turn
    sits exactly on the waypoint.
    """
    next_wp = route.next_after_target()
    if next_wp is None:
        return None
    prev = route.previous(est_gps)
    try:
        turn_deg = turn_angle(prev, route.target, next_wp)
    except ValueError:
        return None
    if abs(turn_deg) <= MIN_TURN_DEGREES:
        return None

    start = (float(pose.position[0]), float(pose.position[2]))
    main_len = cast_walkable_line(grid, start, path_heading)
    n = int(math.floor((main_len - BRANCH_START) / BRANCH_SPACING)) + 1
    if n < 2:
        return None
    branch_heading = path_heading + math.radians(turn_deg)
    oppose_heading = branch_heading + math.pi
    dx, dz = math.sin(path_heading), math.cos(path_heading)
    dists = BRANCH_START + BRANCH_SPACING * np.arange(n)
    origins = np.stack(
        [start[0] + dists * dx, start[1] + dists * dz], axis=1
    )
    mains = cast_walkable_lines(
        grid, origins, np.full(n, branch_heading), max_gap=0
    )
    totals = mains + cast_walkable_lines(
        grid, origins, np.full(n, oppose_heading), max_gap=0
    )

    med_main = _lower_median(mains)
    med_total = _lower_median(totals)
    valid = (mains >= med_main + BRANCH_MARGIN) & (
        totals >= med_total + BRANCH_MARGIN
    )
    if not np.any(valid):
        return None

    idx = np.flatnonzero(valid)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) != 1) + 1)
    geo_bearing = path_heading + compass_theta
    c = METERS_PER_RADIAN
    for run in runs:
        turn_dist = float(np.mean(dists[run]))
        dlat = turn_dist * math.cos(geo_bearing) / c
        dlon = turn_dist * math.sin(geo_bearing) / (c * math.cos(est_gps.lat))
        expected = GeoCoordinate(est_gps.lat + dlat, est_gps.lon + dlon)
        gap = _local_meters(route.target, expected)
        if np.linalg.norm(gap) < TURN_WAYPOINT_GATE:
            new_offset = offset.shifted(
                route.target.lat - expected.lat,
                route.target.lon - expected.lon,
            )
            world_xz = (start[0] + turn_dist * dx, start[1] + turn_dist * dz)
            return TurnDetection(
                distance=turn_dist, world_xz=world_xz, offset=new_offset
            )
    return None


def _lower_median(values: np.ndarray) -> float:
    """Order statistic at floor(n/2) of the sorted values (lower median)."""
    s = np.sort(values)
    return float(s[len(s) // 2])


@dataclass(eq=False)
class CompassOffset:
    """Angle added to a world-frame heading to get a compass bearing.

    Keeps the aligning rotation matrix for inspection; it is always a
    proper rotation (determinant +1).
    """

    theta: float
    rotation: np.ndarray | None = None


@dataclass
class TrajectoryPairBuffer:
    """Rolling buffer of matched (world position, GPS fix) pairs.

    World positions are horizontal (x, z); a new pair is stored only when
    the user has moved at least 0.3 m since the last stored pair. Holds at
    most 20 pairs, evicting the oldest, and resets after a successful
    compass estimate.
    """

    capacity: int = BUFFER_SIZE
    min_spacing: float = PAIR_SPACING
    _pairs: deque = field(default_factory=lambda: deque(maxlen=BUFFER_SIZE))
    _last_world: tuple | None = None

    def __len__(self) -> int:
        return len(self._pairs)

    @property
    def full(self) -> bool:
        return len(self._pairs) == self.capacity

    def add(self, world_xz: tuple, gps: GeoCoordinate) -> bool:
        """Store the pair if far enough from the last one; returns full."""
        if self._last_world is not None:
            dx = world_xz[0] - self._last_world[0]
            dz = world_xz[1] - self._last_world[1]
            if math.hypot(dx, dz) < self.min_spacing:
                return self.full
        self._pairs.append((tuple(world_xz), gps))
        self._last_world = tuple(world_xz)
        return self.full

    def reset(self) -> None:
        self._pairs.clear()
        self._last_world = None

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(P, Q): world (north, east) rows and geo meter rows, uncentered."""
        world = np.array([[w[1], w[0]] for w, _ in self._pairs])
        lats = np.array([g.lat for _, g in self._pairs])
        lons = np.array([g.lon for _, g in self._pairs])
        mean_lat = float(np.mean(lats))
        c = METERS_PER_RADIAN
        geo = np.stack([lats * c, lons * c * math.cos(mean_lat)], axis=1)
        return world, geo


def estimate_compass(buffer: TrajectoryPairBuffer) -> CompassOffset | None:
    """Recover the compass offset aligning the walked path with its GPS track.

    Kabsch alignment between centered world (north, east) points and geo
    meter points: H = P^T Q, SVD H = U S V^T, R = V U^T with a reflection
    fix when det(R) < 0. Returns None (defer) when the walked geometry is
    too close to a straight line (singular value ratio below 0.05).

    Raises:
        ValueError: If the buffer is not full.
    """
    if not buffer.full:
        raise ValueError("compass estimation needs a full pair buffer")
    p, q = buffer.arrays()
    p = p - p.mean(axis=0)
    q = q - q.mean(axis=0)
    h = p.T @ q
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0.0 or s[1] / s[0] < MIN_SV_RATIO:
        return None
    v = vt.T
    r = v @ u.T
    if np.linalg.det(r) < 0.0:
        v = v.copy()
        v[:, 1] = -v[:, 1]
        r = v @ u.T
    return CompassOffset(theta=math.atan2(r[1, 0], r[0, 0]), rotation=r)
