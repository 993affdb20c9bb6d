"""Synthetic scene geometry: extruded boxes, surface labels, routes.

World coordinates are meters with y up; +z maps to geographic north and
+x to east at the scene's anchor coordinate via a local tangent plane.
Obstacles and walls are axis-aligned boxes extruded from the ground;
ground-truth surface classes are painted rectangles, later entries
overriding earlier ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geodesy import METERS_PER_RADIAN, GeoCoordinate
from ..localization import Route
from ..surface import SurfaceClass

ANCHOR = GeoCoordinate.from_degrees(42.36, -71.06)


@dataclass(frozen=True)
class Box:
    """An axis-aligned obstacle footprint extruded upward from the ground.

    Attributes:
        x0, x1: West/east extent in meters, x0 < x1.
        z0, z1: South/north extent in meters, z0 < z1.
        height: Extrusion height in meters.
        name: Stable identifier used for contact debouncing.
    """

    x0: float
    x1: float
    z0: float
    z1: float
    height: float
    name: str

    def __post_init__(self) -> None:
        if not (self.x0 < self.x1 and self.z0 < self.z1 and self.height > 0):
            raise ValueError("box extents must be positive")

    def distance_xz(self, x: float, z: float) -> float:
        """Horizontal distance from a point to the box footprint."""
        dx = max(self.x0 - x, 0.0, x - self.x1)
        dz = max(self.z0 - z, 0.0, z - self.z1)
        return math.hypot(dx, dz)


@dataclass(frozen=True)
class SurfaceRegion:
    """A painted ground-truth surface rectangle."""

    x0: float
    x1: float
    z0: float
    z1: float
    label: SurfaceClass


@dataclass(frozen=True)
class Scene:
    """A complete synthetic environment.

    Attributes:
        name: Scene identifier recorded in traces.
        boxes: Walls and obstacles.
        regions: Surface-label rectangles, painted in order.
        default_label: Class anywhere no region covers.
        route_world: Route waypoints as (x, z) world meters.
        anchor: Geo coordinate of world origin; +z north, +x east.
        bounds: (x0, x1, z0, z1) overall extent.
        comment: Free-form provenance note carried into scenario files.
    """

    name: str
    boxes: tuple[Box, ...]
    regions: tuple[SurfaceRegion, ...]
    default_label: SurfaceClass
    route_world: tuple[tuple[float, float], ...]
    anchor: GeoCoordinate = ANCHOR
    bounds: tuple[float, float, float, float] = (-50.0, 50.0, -50.0, 50.0)
    comment: str = ""

    def __post_init__(self) -> None:
        if len(self.route_world) < 2:
            raise ValueError("route needs at least two waypoints")
        x0, x1, z0, z1 = self.bounds
        for box in self.boxes:
            if box.x0 < x0 or box.x1 > x1 or box.z0 < z0 or box.z1 > z1:
                raise ValueError(f"box {box.name} outside scene bounds")
        for x, z in (self.route_world[0], self.route_world[-1]):
            if not self.labels_at(np.array([[x, z]]))[0] in _WALKABLE_VALUES:
                raise ValueError("route endpoints must be on walkable surface")

    def world_to_geo(self, x: float, z: float) -> GeoCoordinate:
        """Maps world meters to a geo coordinate via the anchor."""
        return GeoCoordinate(
            self.anchor.lat + z / METERS_PER_RADIAN,
            self.anchor.lon
            + x / (METERS_PER_RADIAN * math.cos(self.anchor.lat)),
        )

    def geo_to_world(self, coord: GeoCoordinate) -> tuple[float, float]:
        """Inverse of world_to_geo."""
        z = (coord.lat - self.anchor.lat) * METERS_PER_RADIAN
        x = (
            (coord.lon - self.anchor.lon)
            * METERS_PER_RADIAN
            * math.cos(self.anchor.lat)
        )
        return x, z

    def route(self) -> Route:
        """The route as geo waypoints."""
        return Route(
            waypoints=[self.world_to_geo(x, z) for x, z in self.route_world]
        )

    def labels_at(self, points: np.ndarray) -> np.ndarray:
        """Ground-truth surface class per (x, z) row, as uint8."""
        points = np.asarray(points)
        labels = np.full(len(points), int(self.default_label), dtype=np.uint8)
        for region in self.regions:
            inside = (
                (points[:, 0] >= region.x0)
                & (points[:, 0] <= region.x1)
                & (points[:, 1] >= region.z0)
                & (points[:, 1] <= region.z1)
            )
            labels[inside] = int(region.label)
        return labels

    def start(self) -> tuple[float, float, float]:
        """(x, z, heading) at the first waypoint facing the second."""
        (x0, z0), (x1, z1) = self.route_world[0], self.route_world[1]
        return x0, z0, math.atan2(x1 - x0, z1 - z0)

    def route_turns(self) -> list[int]:
        """Indices of interior waypoints where the route bends > 15 deg."""
        turns = []
        pts = self.route_world
        for i in range(1, len(pts) - 1):
            a = math.atan2(pts[i][0] - pts[i - 1][0], pts[i][1] - pts[i - 1][1])
            b = math.atan2(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1])
            if abs(math.degrees(math.atan2(math.sin(b - a), math.cos(b - a)))) > 15:
                turns.append(i)
        return turns


_WALKABLE_VALUES = {
    int(SurfaceClass.SIDEWALK),
    int(SurfaceClass.PLAIN_CROSSWALK),
    int(SurfaceClass.ZEBRA_CROSSWALK),
    int(SurfaceClass.CURB_CUT),
    int(SurfaceClass.COVERING),
}

HALLWAY_WIDTH = 1.8
HALLWAY_LENGTH = 4.2
OBSTACLE_WIDTH = 0.85
OBSTACLE_DEPTH = 0.4
OBSTACLE_HEIGHT = 1.0
OBSTACLE_INTERVAL = 0.6
OBSTACLE_MIN_SEPARATION = 1.8


def make_hallway(seed: int) -> Scene:
    """Obstacle-course hallway: 1.8 x 4.2 m with two protruding obstacles.

    Obstacle centers sit on a 0.6 m interval lattice along the hallway,
    at least 1.8 m apart, one protruding from each side wall; which side
    comes first is random. Drawn by rejection sampling, so every seed
    satisfies the constraints.

    Args:
        seed: Placement seed.

    Returns:
        The hallway scene, route running straight through.
    """
    rng = np.random.default_rng(seed)
    half = HALLWAY_WIDTH / 2
    lattice = np.arange(
        OBSTACLE_INTERVAL, HALLWAY_LENGTH - 0.3, OBSTACLE_INTERVAL
    )
    while True:
        za, zb = rng.choice(lattice, size=2, replace=False)
        if abs(za - zb) >= OBSTACLE_MIN_SEPARATION:
            break
    first_left = bool(rng.random() < 0.5)
    obstacles = []
    for i, (zc, left) in enumerate(
        ((min(za, zb), first_left), (max(za, zb), not first_left))
    ):
        x0 = -half if left else half - OBSTACLE_WIDTH
        obstacles.append(
            Box(
                x0=x0,
                x1=x0 + OBSTACLE_WIDTH,
                z0=zc - OBSTACLE_DEPTH / 2,
                z1=zc + OBSTACLE_DEPTH / 2,
                height=OBSTACLE_HEIGHT,
                name=f"obstacle-{i}",
            )
        )
    walls = (
        Box(-half - 0.1, -half, -1.0, HALLWAY_LENGTH + 1.0, 2.5, "wall-left"),
        Box(half, half + 0.1, -1.0, HALLWAY_LENGTH + 1.0, 2.5, "wall-right"),
    )
    floor = SurfaceRegion(
        -half, half, -1.5, HALLWAY_LENGTH + 1.5, SurfaceClass.SIDEWALK
    )
    return Scene(
        name=f"hallway-{seed}",
        boxes=walls + tuple(obstacles),
        regions=(floor,),
        default_label=SurfaceClass.NON_SURFACE,
        route_world=((0.0, -0.8), (0.0, HALLWAY_LENGTH + 0.8)),
        bounds=(-3.0, 3.0, -2.0, HALLWAY_LENGTH + 2.0),
        comment="obstacle course: two 0.85 m obstacles on a 0.6 m lattice",
    )


SIDEWALK_WIDTH = 2.0

# Five legs, four turns, 150 m total (35 + 25 + 30 + 30 + 30).
COMMUNITY_WAYPOINTS = (
    (0.0, 0.0),
    (0.0, 35.0),
    (25.0, 35.0),
    (25.0, 65.0),
    (-5.0, 65.0),
    (-5.0, 95.0),
)


def make_community_scene() -> Scene:
    """Synthetic community route: 150 m, four turns, sidewalk on terrain.

    The walkable sidewalk follows the route; everything else is terrain
    (not walkable), with a few building boxes set back from the path so
    depth frames see structure. The turn count mirrors the reference
    course; the exact geography is synthetic.

    Returns:
        The community scene.
    """
    half = SIDEWALK_WIDTH / 2
    regions = []
    pts = COMMUNITY_WAYPOINTS
    for (xa, za), (xb, zb) in zip(pts[:-1], pts[1:]):
        regions.append(
            SurfaceRegion(
                x0=min(xa, xb) - half,
                x1=max(xa, xb) + half,
                z0=min(za, zb) - half,
                z1=max(za, zb) + half,
                label=SurfaceClass.SIDEWALK,
            )
        )
    buildings = (
        Box(-6.0, -3.0, 5.0, 30.0, 4.0, "building-a"),
        Box(3.0, 22.0, 38.5, 41.5, 4.0, "building-b"),
        Box(28.5, 31.5, 40.0, 60.0, 4.0, "building-c"),
        Box(0.0, 20.0, 68.5, 71.5, 4.0, "building-d"),
        Box(-9.0, -8.0, 70.0, 90.0, 3.0, "building-e"),
    )
    return Scene(
        name="community",
        boxes=buildings,
        regions=tuple(regions),
        default_label=SurfaceClass.TERRAIN,
        route_world=pts,
        bounds=(-30.0, 45.0, -15.0, 110.0),
        comment="synthetic 150 m community route with four turns",
    )
