"""2D walkability surface grid and path-direction guidance.

Segmentation frames paint ground-level cells walkable or not; guidance then
fans out 181 line casts around the target direction, tolerates small gaps,
groups the long-enough lines into consecutive-angle path candidates, and
steers toward the best candidate within a 30 degree window of the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .avoidance import _traversal_steps
from .occupancy import Intrinsics, WorldPose

SURFACE_CELL_SIZE = 0.2
SURFACE_RANGE = 15.0
MAX_GAP_CELLS = 3
MAX_CAST_LENGTH = 20.0
MIN_VALID_LINE = 5.0
MAX_STEER_DEGREES = 30.0


class SurfaceClass(IntEnum):
    """Surface categories a segmentation frame can label."""

    ROAD = 0
    CURB = 1
    CURB_CUT = 2
    SIDEWALK = 3
    PLAIN_CROSSWALK = 4
    ZEBRA_CROSSWALK = 5
    COVERING = 6
    TERRAIN = 7
    NON_SURFACE = 8


# Surfaces a pedestrian may walk on; roads, curbs, terrain, and non-surface
# block. Configurable per scenario.
DEFAULT_WALKABLE = frozenset(
    {
        SurfaceClass.SIDEWALK,
        SurfaceClass.PLAIN_CROSSWALK,
        SurfaceClass.ZEBRA_CROSSWALK,
        SurfaceClass.CURB_CUT,
        SurfaceClass.COVERING,
    }
)


@dataclass(eq=False)
class SegmentationFrame:
    """Per-pixel surface labels with the pose they were captured at.

    Attributes:
        labels: (height, width) array of SurfaceClass values.
        pose: Camera pose recorded when the frame was captured.
        intrinsics: Pinhole intrinsics for the label image.
    """

    labels: np.ndarray
    pose: WorldPose
    intrinsics: Intrinsics

    DEFAULT_SIZE = 120

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError("labels must be a 2D array")


@dataclass(eq=False)
class SurfaceGrid2D:
    """Sparse map from 0.2 m cell index (i, k) to a walkability flag.

    ``level`` holds the ground height used when projecting cell centers
    into segmentation frames; callers keep it at the current ground
    estimate. Cells never observed are unknown and treated as non-walkable
    by line casts.
    """

    cell_size: float = SURFACE_CELL_SIZE
    level: float = 0.0
    walkable_classes: frozenset = DEFAULT_WALKABLE
    cells: dict = field(default_factory=dict)
    # Dense walkability mirror of ``cells`` for batched line casts,
    # rebuilt lazily whenever the dict's size no longer matches.
    _mirror: np.ndarray | None = field(default=None, repr=False)
    _m_origin: tuple = field(default=(0, 0), repr=False)
    _m_len: int = field(default=-1, repr=False)

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

    def is_walkable(self, cell: tuple[int, int]) -> bool:
        return self.cells.get(cell, False)

    def set_walkable(self, cell: tuple[int, int], walkable: bool) -> None:
        """Record one cell's walkability (scenario setup and tests)."""
        self.cells[(int(cell[0]), int(cell[1]))] = bool(walkable)
        self._m_len = -1

    def prune(self, position: np.ndarray) -> None:
        """Drop cells beyond the retention range of the given position."""
        if not self.cells:
            return
        px, pz = float(position[0]), float(position[2])
        limit = (SURFACE_RANGE + self.cell_size) ** 2
        keys = np.array(list(self.cells.keys()), dtype=np.int64)
        cx = (keys[:, 0] + 0.5) * self.cell_size - px
        cz = (keys[:, 1] + 0.5) * self.cell_size - pz
        keep = cx * cx + cz * cz <= limit
        if np.all(keep):
            return
        vals = np.fromiter(
            self.cells.values(), dtype=bool, count=len(self.cells)
        )
        self.cells = dict(
            zip(
                map(tuple, keys[keep].tolist()),
                vals[keep].tolist(),
            )
        )
        self._m_len = -1

    def _mirror_view(self) -> tuple[np.ndarray, tuple[int, int]]:
        """Dense bool view of the dict, refreshed when sizes diverge."""
        if self._m_len != len(self.cells):
            self._sync_mirror()
        return self._mirror, self._m_origin

    def _sync_mirror(self) -> None:
        if not self.cells:
            self._mirror = np.zeros((1, 1), dtype=bool)
            self._m_origin = (0, 0)
            self._m_len = 0
            return
        keys = np.array(list(self.cells.keys()), dtype=np.int64)
        vals = np.fromiter(
            self.cells.values(), dtype=bool, count=len(self.cells)
        )
        pad = 16
        i0 = int(keys[:, 0].min()) - pad
        k0 = int(keys[:, 1].min()) - pad
        i1 = int(keys[:, 0].max()) + pad
        k1 = int(keys[:, 1].max()) + pad
        self._mirror = np.zeros((i1 - i0 + 1, k1 - k0 + 1), dtype=bool)
        self._mirror[keys[:, 0] - i0, keys[:, 1] - k0] = vals
        self._m_origin = (i0, k0)
        self._m_len = len(self.cells)

    def _mirror_write(self, ii: np.ndarray, kk: np.ndarray,
                      walkable: np.ndarray, dict_len_before: int) -> None:
        """Fold a bulk update into the mirror, or mark it stale.

        ``dict_len_before`` is the dict size before the caller's update; a
        mismatch with the mirror means someone else wrote cells directly,
        in which case the incremental write is abandoned.
        """
        if self._m_len != dict_len_before or self._mirror is None:
            self._m_len = -1
            return
        i0, k0 = self._m_origin
        h, w = self._mirror.shape
        if (
            ii.min() < i0
            or kk.min() < k0
            or ii.max() >= i0 + h
            or kk.max() >= k0 + w
        ):
            self._m_len = -1
            return
        self._mirror[ii - i0, kk - k0] = walkable
        self._m_len = len(self.cells)


def update_surface(
    grid: SurfaceGrid2D, frame: SegmentationFrame, user_pose: WorldPose
) -> None:
    """Fold one segmentation frame into the walkability grid.

    Candidate cells within range and not behind the user have their centers
    (at ground level) projected into the frame; cells landing inside the
    image take the walkability of their pixel's class, others are left
    unchanged.
    """
    footprint = _ground_footprint(frame, grid.level)
    if footprint is None:
        return
    (i_lo, i_hi), (k_lo, k_hi) = footprint
    ii, kk = np.meshgrid(
        np.arange(i_lo, i_hi + 1), np.arange(k_lo, k_hi + 1), indexing="ij"
    )
    ii = ii.ravel()
    kk = kk.ravel()
    cx = (ii + 0.5) * grid.cell_size
    cz = (kk + 0.5) * grid.cell_size

    ux, uz = user_pose.position[0], user_pose.position[2]
    within = (cx - ux) ** 2 + (cz - uz) ** 2 <= SURFACE_RANGE**2
    fwd = user_pose.forward()
    ahead = (cx - ux) * fwd[0] + (cz - uz) * fwd[2] >= 0.0
    sel = within & ahead
    if not np.any(sel):
        return
    ii, kk, cx, cz = ii[sel], kk[sel], cx[sel], cz[sel]

    world = np.stack([cx, np.full(cx.shape, grid.level), cz], axis=1)
    cam = (world - frame.pose.position) @ frame.pose.rotation
    intr = frame.intrinsics
    h, w = frame.labels.shape
    z = cam[:, 2]
    front = z > 0.0
    u = np.full(z.shape, -1.0)
    v = np.full(z.shape, -1.0)
    u[front] = intr.cx + intr.fx * cam[front, 0] / z[front]
    v[front] = intr.cy - intr.fy * cam[front, 1] / z[front]
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    inside = front & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    if not np.any(inside):
        return
    classes = frame.labels[vi[inside], ui[inside]]
    walk_lut = np.zeros(256, dtype=bool)
    for c in grid.walkable_classes:
        walk_lut[int(c)] = True
    walkable = walk_lut[classes]
    before = len(grid.cells)
    grid.cells.update(
        zip(
            zip(ii[inside].tolist(), kk[inside].tolist()),
            walkable.tolist(),
        )
    )
    grid._mirror_write(ii[inside], kk[inside], walkable, before)


def _ground_footprint(frame: SegmentationFrame, level: float):
    """Cell-index bounding box of the frame's view of the ground plane."""
    intr = frame.intrinsics
    h, w = frame.labels.shape
    pose = frame.pose
    cam_pos = pose.position
    xs: list[float] = []
    zs: list[float] = []
    corners = [
        (0.0, 0.0),
        (w - 1.0, 0.0),
        (0.0, h - 1.0),
        (w - 1.0, h - 1.0),
        (intr.cx, intr.cy),
    ]
    for u, v in corners:
        ray = pose.rotation @ np.array(
            [(u - intr.cx) / intr.fx, -(v - intr.cy) / intr.fy, 1.0]
        )
        dy = level - cam_pos[1]
        if ray[1] * dy <= 0.0:
            # Ray parallel to or pointing away from the ground plane: cap
            # the footprint at maximum range along its horizontal part.
            horiz = math.hypot(ray[0], ray[2])
            if horiz == 0.0:
                continue
            t = SURFACE_RANGE / horiz
        else:
            t = min(dy / ray[1], SURFACE_RANGE / max(math.hypot(ray[0], ray[2]), 1e-9))
        xs.append(cam_pos[0] + t * ray[0])
        zs.append(cam_pos[2] + t * ray[2])
    if not xs:
        return None
    xs.append(cam_pos[0])
    zs.append(cam_pos[2])
    cs = SURFACE_CELL_SIZE
    i_lo = int(math.floor(min(xs) / cs)) - 1
    i_hi = int(math.floor(max(xs) / cs)) + 1
    k_lo = int(math.floor(min(zs) / cs)) - 1
    k_hi = int(math.floor(max(zs) / cs)) + 1
    return (i_lo, i_hi), (k_lo, k_hi)


def cast_walkable_line(
    grid: SurfaceGrid2D,
    start: tuple[float, float],
    heading: float,
    max_gap: int = MAX_GAP_CELLS,
    max_length: float = MAX_CAST_LENGTH,
) -> float:
    """Walkable length along a world heading from a start point.

    The cast survives runs of up to ``max_gap`` consecutive non-walkable or
    unknown cells and stops at longer ones; the returned length is the
    distance to the first cell of the run that stopped it (or
    ``max_length``).
    """
    direction = (math.sin(heading), math.cos(heading))
    gap_run = 0
    gap_start = 0.0
    for i, k, t in _traversal_steps(start, direction, max_length, grid.cell_size):
        if grid.is_walkable((i, k)):
            gap_run = 0
        else:
            if gap_run == 0:
                gap_start = t
            gap_run += 1
            if gap_run > max_gap:
                return gap_start
    return max_length


def cast_walkable_lines(
    grid: SurfaceGrid2D,
    starts: np.ndarray,
    headings: np.ndarray,
    max_gap: int = MAX_GAP_CELLS,
    max_length: float = MAX_CAST_LENGTH,
) -> np.ndarray:
    """``cast_walkable_line`` over many (start, heading) lanes at once.

    All lanes advance their grid walks in lockstep, so a fan of casts costs
    a bounded number of vector steps instead of one Python walk per ray.

    Args:
        starts: (N, 2) array of (x, z) start points, or a single (2,) point
            shared by every lane.
        headings: (N,) world headings in radians.
        max_gap: Longest survivable run of non-walkable cells.
        max_length: Cast length cap in meters.

    Returns:
        (N,) array of walkable lengths, identical lane-for-lane to the
        scalar function.
    """
    headings = np.asarray(headings, dtype=float)
    n = headings.shape[0]
    starts = np.asarray(starts, dtype=float)
    if starts.ndim == 1:
        starts = np.broadcast_to(starts, (n, 2))
    if n == 0:
        return np.full(n, float(max_length))
    mirror, (mi0, mk0) = grid._mirror_view()
    mh, mw = mirror.shape
    cs = grid.cell_size

    dx = np.sin(headings)
    dz = np.cos(headings)
    ox = starts[:, 0]
    oz = starts[:, 1]
    i0 = np.floor(ox / cs).astype(np.int64)
    k0 = np.floor(oz / cs).astype(np.int64)

    # Crossing times along each axis form arithmetic progressions. The
    # scalar walk advances them by repeated addition, so a cumulative sum
    # over [first, delta, delta, ...] reproduces its floats exactly; ties
    # resolve z before x, so the z block sorts first under a stable sort.
    steps = int(math.ceil(max_length / cs)) + 2
    moves_x = dx != 0.0
    moves_z = dz != 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        first_x = np.where(
            moves_x, ((i0 + (dx > 0.0)) * cs - ox) / dx, np.inf
        )
        delta_x = np.where(moves_x, cs / np.abs(dx), np.inf)
        first_z = np.where(
            moves_z, ((k0 + (dz > 0.0)) * cs - oz) / dz, np.inf
        )
        delta_z = np.where(moves_z, cs / np.abs(dz), np.inf)
    prog = np.empty((n, 2 * steps))
    prog[:, 0] = first_z
    prog[:, 1:steps] = delta_z[:, None]
    prog[:, steps] = first_x
    prog[:, steps + 1:] = delta_x[:, None]
    np.cumsum(prog[:, :steps], axis=1, out=prog[:, :steps])
    np.cumsum(prog[:, steps:], axis=1, out=prog[:, steps:])

    order = np.argsort(prog, axis=1, kind="stable")
    t_seq = np.take_along_axis(prog, order, axis=1)
    is_x = order >= steps
    step_i = np.where(dx > 0.0, 1, -1)[:, None]
    step_k = np.where(dz > 0.0, 1, -1)[:, None]
    i_seq = i0[:, None] + step_i * np.cumsum(is_x, axis=1)
    k_seq = k0[:, None] + step_k * np.cumsum(~is_x, axis=1)

    # Prepend the start cell at t = 0, then look up walkability; cells
    # past the cap read as walkable so no gap can end a cast out there.
    t_seq = np.concatenate([np.zeros((n, 1)), t_seq], axis=1)
    i_seq = np.concatenate([i0[:, None], i_seq], axis=1)
    k_seq = np.concatenate([k0[:, None], k_seq], axis=1)
    wi = i_seq - mi0
    wk = k_seq - mk0
    inb = (wi >= 0) & (wi < mh) & (wk >= 0) & (wk < mw)
    walk = inb & mirror[np.clip(wi, 0, mh - 1), np.clip(wk, 0, mw - 1)]
    walk |= ~(t_seq <= max_length)

    # A cast dies at the first run of max_gap + 1 straight blocked cells;
    # windowed sums over the walkability sequence locate that run.
    w = max_gap + 1
    cols = t_seq.shape[1]
    if w > cols:
        return np.full(n, float(max_length))
    csum = np.zeros((n, cols + 1), dtype=np.int64)
    np.cumsum(walk, axis=1, out=csum[:, 1:])
    dead = csum[:, w:] == csum[:, :-w]
    found = np.any(dead, axis=1)
    first = np.argmax(dead, axis=1)
    gap_start = np.take_along_axis(
        t_seq, first[:, None], axis=1
    ).ravel()
    return np.where(found, gap_start, float(max_length))


@dataclass(frozen=True)
class PathCandidate:
    """A maximal consecutive run of valid cast angles around the target.

    Attributes:
        angle: Chosen angle in degrees relative to the target direction
            (the angle of the subset's longest line).
        length: Length in meters of that longest line.
        member_angles: The consecutive integer degrees forming the subset.
    """

    angle: int
    length: float
    member_angles: tuple


def path_candidates(
    grid: SurfaceGrid2D, pose: WorldPose, target_direction: float
) -> list[PathCandidate]:
    """Valid path candidates from 181 one-degree casts around the target."""
    start = (float(pose.position[0]), float(pose.position[2]))
    degs = np.arange(-90, 91)
    cast = cast_walkable_lines(
        grid,
        np.array(start),
        target_direction + np.radians(degs),
    )
    lengths = dict(zip(degs.tolist(), cast.tolist()))
    candidates = []
    run: list[int] = []
    for deg in range(-90, 92):
        if deg <= 90 and lengths[deg] >= MIN_VALID_LINE:
            run.append(deg)
            continue
        if run:
            best = max(run, key=lambda d: (lengths[d], -abs(d)))
            candidates.append(
                PathCandidate(
                    angle=best,
                    length=lengths[best],
                    member_angles=tuple(run),
                )
            )
            run = []
    return candidates


def path_direction(
    grid: SurfaceGrid2D, pose: WorldPose, target_direction: float
) -> float:
    """World-frame heading to steer along, given a target direction.

    Picks the path candidate closest to the target when it deviates by at
    most 30 degrees; otherwise falls back to the target direction itself.
    """
    candidates = path_candidates(grid, pose, target_direction)
    if not candidates:
        return target_direction
    best = min(candidates, key=lambda c: (abs(c.angle), c.angle < 0))
    if abs(best.angle) <= MAX_STEER_DEGREES:
        return target_direction + math.radians(best.angle)
    return target_direction
