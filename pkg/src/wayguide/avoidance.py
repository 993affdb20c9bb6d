"""Collision detection and avoidance-heading search over a 2D grid.

Occupied 3D cells between ground level and the user's height project onto a
horizontal search grid. When an occupied cell enters the collision box ahead
of the user, candidate headings fan out at 2-degree steps and the first one
whose line cast runs 2 m without hitting a blocked cell wins; if none is
clear, the longest-running line wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .occupancy import OccupancyGrid3D, WorldPose

CLEAR_DISTANCE = 2.0
MAX_SCAN_DEGREES = 90
SCAN_STEP_DEGREES = 2
# Occupied cells within this height of the ground estimate count as floor,
# not obstacles: ground is the mean of floor cell centers, so half of them
# sit fractionally above it.
GROUND_CLEARANCE = 0.15


@dataclass(frozen=True)
class CollisionBox:
    """Body-relative box that triggers avoidance when an obstacle enters.

    Forward span (0, forward] meters along the heading, +/- lateral meters
    sideways, and vertically between ground clearance and the user's height.
    """

    forward: float = 1.5
    lateral: float = 0.2


@dataclass(eq=False)
class SearchGrid2D:
    """Binary horizontal grid: 1 = blocked by an obstacle at body height."""

    cell_size: float = 0.1
    blocked: set = field(default_factory=set)

    @classmethod
    def from_occupancy(
        cls,
        grid: OccupancyGrid3D,
        ground: float,
        user_height: float,
        clearance: float = GROUND_CLEARANCE,
    ) -> "SearchGrid2D":
        """Project occupied cells between ground and user height down to 2D."""
        keys, centers = grid.occupied_snapshot()
        blocked = set()
        if len(keys):
            lo = ground + clearance
            hi = ground + user_height
            sel = (centers[:, 1] > lo) & (centers[:, 1] < hi)
            blocked = {(int(i), int(k)) for i, _, k in keys[sel].tolist()}
        return cls(cell_size=grid.cell_size, blocked=blocked)

    def is_blocked(self, cell: tuple[int, int]) -> bool:
        return cell in self.blocked

    def cell_of(self, x: float, z: float) -> tuple[int, int]:
        return (
            int(math.floor(x / self.cell_size)),
            int(math.floor(z / self.cell_size)),
        )

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return (
            (cell[0] + 0.5) * self.cell_size,
            (cell[1] + 0.5) * self.cell_size,
        )


def detect_collision(
    grid: OccupancyGrid3D,
    pose: WorldPose,
    ground: float,
    user_height: float,
    box: CollisionBox = CollisionBox(),
    clearance: float = GROUND_CLEARANCE,
) -> tuple[bool, tuple[int, int, int] | None]:
    """Check whether any occupied cell sits inside the collision box.

    Returns:
        (collided, offending cell index or None). With several offenders the
        nearest one along the heading is reported.
    """
    keys, centers = grid.occupied_snapshot()
    if not len(keys):
        return False, None
    rel = centers - pose.position
    fwd = pose.forward()
    right = np.array([fwd[2], 0.0, -fwd[0]])
    along = rel @ fwd
    lateral = rel @ right
    hit = (
        (along > 0.0)
        & (along <= box.forward)
        & (np.abs(lateral) <= box.lateral)
        & (centers[:, 1] > ground + clearance)
        & (centers[:, 1] < ground + user_height)
    )
    if not np.any(hit):
        return False, None
    nearest = np.flatnonzero(hit)[np.argmin(along[hit])]
    return True, tuple(int(v) for v in keys[nearest])


def _traversal_steps(origin, direction, max_dist, cell_size):
    """Yield (i, k, entry_distance) for each cell the segment enters."""
    ox, oz = origin
    dx, dz = direction
    i = int(math.floor(ox / cell_size))
    k = int(math.floor(oz / cell_size))
    yield i, k, 0.0

    step_i = 1 if dx > 0.0 else -1
    step_k = 1 if dz > 0.0 else -1
    if dx != 0.0:
        next_x = (i + (step_i > 0)) * cell_size
        t_max_x = (next_x - ox) / dx
        t_delta_x = cell_size / abs(dx)
    else:
        t_max_x = math.inf
        t_delta_x = math.inf
    if dz != 0.0:
        next_z = (k + (step_k > 0)) * cell_size
        t_max_z = (next_z - oz) / dz
        t_delta_z = cell_size / abs(dz)
    else:
        t_max_z = math.inf
        t_delta_z = math.inf

    while True:
        if t_max_x < t_max_z:
            t = t_max_x
            i += step_i
            t_max_x += t_delta_x
        else:
            t = t_max_z
            k += step_k
            t_max_z += t_delta_z
        if t > max_dist:
            return
        yield i, k, t


def voxel_traverse(
    origin: tuple[float, float],
    direction: tuple[float, float],
    max_dist: float,
    cell_size: float = 0.1,
) -> list[tuple[int, int]]:
    """Ordered grid cells a 2D segment passes through (Amanatides-Woo).

    Args:
        origin: (x, z) start point in meters.
        direction: (dx, dz) unit vector.
        max_dist: Segment length in meters, >= 0.
        cell_size: Grid pitch in meters.

    Returns:
        Cells in entry order, each visited exactly once.

    Raises:
        ValueError: On a zero direction vector or negative max_dist.
    """
    norm = math.hypot(*direction)
    if norm == 0.0:
        raise ValueError("direction must be nonzero")
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    if max_dist < 0.0:
        raise ValueError("max_dist must be nonnegative")
    return [
        (i, k) for i, k, _ in _traversal_steps(origin, direction, max_dist, cell_size)
    ]


def clear_distance(
    search: SearchGrid2D,
    origin: tuple[float, float],
    heading: float,
    max_dist: float = CLEAR_DISTANCE,
) -> float:
    """Free length along a world heading before the first blocked cell."""
    direction = (math.sin(heading), math.cos(heading))
    for i, k, t in _traversal_steps(
        origin, direction, max_dist, search.cell_size
    ):
        if search.is_blocked((i, k)):
            return t
    return max_dist


def avoidance_heading(
    search: SearchGrid2D,
    pose: WorldPose,
    clear_dist: float = CLEAR_DISTANCE,
) -> float:
    """Pick an avoidance heading relative to the current one.

    Scans offsets 0, +2, -2, 4, -4, ... +/-90 degrees and returns the first
    whose cast runs ``clear_dist`` meters unobstructed; failing that, the
    offset with the longest run (first such offset in scan order).

    Returns:
        Heading offset in degrees; positive steers right.
    """
    origin = search.cell_center(
        search.cell_of(pose.position[0], pose.position[2])
    )
    best_angle = 0.0
    best_len = -1.0
    for mag in range(0, MAX_SCAN_DEGREES + 1, SCAN_STEP_DEGREES):
        for angle in ((mag,) if mag == 0 else (mag, -mag)):
            d = clear_distance(
                search, origin, pose.heading + math.radians(angle), clear_dist
            )
            if d >= clear_dist:
                return float(angle)
            if d > best_len:
                best_len = d
                best_angle = float(angle)
    return best_angle
