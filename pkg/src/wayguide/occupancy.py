"""3D obstacle occupancy grid built from depth images and camera poses.

Each depth frame back-projects its confident, near-range pixels into world
space and increments the 0.1 m cubic cell containing each point. Cells
currently visible to the camera decay exponentially first, so stale evidence
fades wherever the camera can see, and cells far from the user are pruned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CELL_SIZE = 0.1
DECAY = 0.9
MAX_PIXEL_DEPTH = 4.0
MIN_CONFIDENCE = 0.5
PRUNE_RADIUS = 5.0
GROUND_RADIUS = 0.3
DEFAULT_OCCUPIED_THRESHOLD = 3.0

# Cell indices are packed into a single int64 (21 bits per axis, offset
# to stay positive) so lookups hash an int instead of a tuple.
_PACK_OFFSET = 1 << 20
_PACK_MASK = (1 << 21) - 1


def _pack_rows(keys: np.ndarray) -> np.ndarray:
    k = np.asarray(keys, dtype=np.int64) + _PACK_OFFSET
    return (k[..., 0] << 42) | (k[..., 1] << 21) | k[..., 2]


def _pack_one(key) -> int:
    i, j, k = (int(v) + _PACK_OFFSET for v in key)
    return (i << 42) | (j << 21) | k


def _unpack_rows(packed: np.ndarray) -> np.ndarray:
    p = np.asarray(packed, dtype=np.int64)
    return (
        np.stack([p >> 42, (p >> 21) & _PACK_MASK, p & _PACK_MASK], axis=1)
        - _PACK_OFFSET
    )


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixel units."""

    cx: float
    cy: float
    fx: float
    fy: float

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")

    @classmethod
    def for_image(
        cls, width: int, height: int, fov_x_deg: float = 60.0
    ) -> "Intrinsics":
        """Centered intrinsics with square pixels from a horizontal FOV."""
        fx = (width / 2.0) / math.tan(math.radians(fov_x_deg) / 2.0)
        return cls(cx=width / 2.0, cy=height / 2.0, fx=fx, fy=fx)


def heading_rotation(heading: float, pitch_down: float = 0.0) -> np.ndarray:
    """Camera-to-world rotation for a yaw heading and downward pitch.

    World frame is y-up with heading 0 along +z, increasing to the right.
    Camera frame is +x right, +y up, +z optical axis.
    """
    ch, sh = math.cos(heading), math.sin(heading)
    yaw = np.array([[ch, 0.0, sh], [0.0, 1.0, 0.0], [-sh, 0.0, ch]])
    cp, sp = math.cos(pitch_down), math.sin(pitch_down)
    tilt = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    return yaw @ tilt


@dataclass(eq=False)
class WorldPose:
    """Camera/agent pose: world position, yaw heading, full orientation.

    Attributes:
        position: World position in meters, shape (3,), y up.
        heading: Yaw in radians; 0 faces +z, positive turns right.
        rotation: 3x3 camera-to-world rotation (proper, det +1).
    """

    position: np.ndarray
    heading: float = 0.0
    rotation: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        if self.rotation is None:
            self.rotation = heading_rotation(self.heading)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise ValueError("rotation must be proper (determinant +1)")

    @classmethod
    def identity(cls) -> "WorldPose":
        return cls(position=np.zeros(3), heading=0.0)

    @classmethod
    def from_heading(
        cls, position, heading: float, pitch_down: float = 0.0
    ) -> "WorldPose":
        return cls(
            position=np.asarray(position, dtype=float),
            heading=heading,
            rotation=heading_rotation(heading, pitch_down),
        )

    def forward(self) -> np.ndarray:
        """World-frame horizontal forward direction of the yaw heading."""
        return np.array([math.sin(self.heading), 0.0, math.cos(self.heading)])


@dataclass(eq=False)
class DepthImage:
    """A depth frame with per-pixel confidence and pinhole intrinsics.

    Attributes:
        depth: (height, width) depths in meters, >= 0.
        confidence: (height, width) confidence as a fraction of the platform
            maximum, normalized into [0, 1] regardless of source encoding.
        intrinsics: Pinhole intrinsics matching the image dimensions.
    """

    depth: np.ndarray
    confidence: np.ndarray
    intrinsics: Intrinsics

    DEFAULT_WIDTH = 256
    DEFAULT_HEIGHT = 192

    def __post_init__(self) -> None:
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        if self.depth.ndim != 2 or self.depth.shape != self.confidence.shape:
            raise ValueError("depth and confidence must be matching 2D arrays")
        if np.any(self.depth < 0.0):
            raise ValueError("depths must be nonnegative")
        if np.any((self.confidence < 0.0) | (self.confidence > 1.0)):
            raise ValueError("confidence must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


def project_pixel(
    pixel: tuple[float, float],
    depth: float,
    intrinsics: Intrinsics,
    pose: WorldPose,
) -> np.ndarray:
    """Back-project one pixel at a z-depth into the world frame.

    Args:
        pixel: (u, v) pixel coordinates, u right, v down.
        depth: Planar depth along the optical axis in meters, > 0.
        intrinsics: Camera intrinsics.
        pose: Camera pose.

    Returns:
        World point, shape (3,).

    Raises:
        ValueError: If depth is not positive.
    """
    if depth <= 0.0:
        raise ValueError("depth must be positive")
    u, v = pixel
    cam = np.array(
        [
            (u - intrinsics.cx) * depth / intrinsics.fx,
            -(v - intrinsics.cy) * depth / intrinsics.fy,
            depth,
        ]
    )
    return pose.rotation @ cam + pose.position


def project_to_pixel(
    point: np.ndarray, intrinsics: Intrinsics, pose: WorldPose
) -> tuple[float, float, float] | None:
    """Project a world point into the image; None if behind the camera.

    Returns:
        (u, v, z-depth) or None when the point has nonpositive depth.
    """
    cam = pose.rotation.T @ (np.asarray(point, dtype=float) - pose.position)
    if cam[2] <= 0.0:
        return None
    u = intrinsics.cx + intrinsics.fx * cam[0] / cam[2]
    v = intrinsics.cy - intrinsics.fy * cam[1] / cam[2]
    return u, v, cam[2]


@dataclass(eq=False)
class CameraFrustum:
    """Four oriented side planes (top, right, bottom, left) of the camera.

    Each plane passes through the camera position and two projected corner
    pixels; normals point inward, so a point is inside the frustum iff it is
    strictly on the positive side of all four planes.
    """

    origins: np.ndarray  # (4, 3) a point on each plane
    normals: np.ndarray  # (4, 3) inward unit normals

    @classmethod
    def from_pose(
        cls, pose: WorldPose, intrinsics: Intrinsics, width: int, height: int
    ) -> "CameraFrustum":
        corners = [
            (0.0, 0.0),  # top-left
            (width - 1.0, 0.0),  # top-right
            (width - 1.0, height - 1.0),  # bottom-right
            (0.0, height - 1.0),  # bottom-left
        ]
        rays = [project_pixel(c, 1.0, intrinsics, pose) for c in corners]
        center = project_pixel(
            (intrinsics.cx, intrinsics.cy), 1.0, intrinsics, pose
        )
        cam = pose.position
        # Plane per side, each defined by the camera position and two corners.
        sides = [
            (rays[0], rays[1]),  # top
            (rays[1], rays[2]),  # right
            (rays[2], rays[3]),  # bottom
            (rays[3], rays[0]),  # left
        ]
        origins = np.empty((4, 3))
        normals = np.empty((4, 3))
        for i, (p1, p2) in enumerate(sides):
            n = np.cross(p1 - cam, p2 - cam)
            n /= np.linalg.norm(n)
            if np.dot(n, center - cam) < 0.0:
                n = -n
            origins[i] = cam
            normals[i] = n
        return cls(origins=origins, normals=normals)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict inside test for an (N, 3) array; returns (N,) bools."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        # All four planes pass through the camera position.
        dots = (pts - self.origins[0]) @ self.normals.T
        return np.all(dots > 0.0, axis=1)


def is_visible(point: np.ndarray, frustum: CameraFrustum) -> bool:
    """True iff the point is strictly inside all four frustum planes."""
    return bool(frustum.contains(np.asarray(point, dtype=float))[0])


@dataclass(eq=False)
class OccupancyGrid3D:
    """Sparse 3D grid of accumulated obstacle evidence.

    Cell scores grow by 1 per confident near-range pixel landing in the
    cell, decay by 0.9 per frame while visible, and are pruned beyond 5 m
    horizontally from the last ingest position. A cell is occupied when its
    score exceeds ``occupied_threshold``.
    """

    cell_size: float = CELL_SIZE
    occupied_threshold: float = DEFAULT_OCCUPIED_THRESHOLD
    # Rows of _keys/_scores are kept sorted by packed cell index, so
    # lookups and bulk merges are binary searches instead of dict probes.
    _packed: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int64)
    )
    _keys: np.ndarray = field(
        default_factory=lambda: np.empty((0, 3), dtype=np.int64)
    )
    _scores: np.ndarray = field(default_factory=lambda: np.empty(0))
    _version: int = 0
    _occupied_cache: tuple | None = None

    def __len__(self) -> int:
        return self._keys.shape[0]

    @property
    def cells(self) -> dict:
        """Snapshot of the sparse map: (i, j, k) -> score."""
        return {
            tuple(k): s
            for k, s in zip(self._keys.tolist(), self._scores.tolist())
        }

    def cell_index(self, point) -> tuple[int, int, int]:
        p = np.asarray(point, dtype=float)
        return tuple(np.floor(p / self.cell_size).astype(np.int64).tolist())

    def cell_centers(self, keys: np.ndarray | None = None) -> np.ndarray:
        if keys is None:
            keys = self._keys
        return (np.asarray(keys, dtype=np.float64) + 0.5) * self.cell_size

    def _find(self, packed: int) -> int | None:
        pos = int(np.searchsorted(self._packed, packed))
        if pos < len(self._packed) and self._packed[pos] == packed:
            return pos
        return None

    def score(self, key: tuple[int, int, int]) -> float:
        i = self._find(_pack_one(key))
        return 0.0 if i is None else float(self._scores[i])

    def set_score(self, key: tuple[int, int, int], score: float) -> None:
        """Directly set one cell's score (scenario setup and tests)."""
        key = tuple(int(k) for k in key)
        packed = _pack_one(key)
        i = self._find(packed)
        if i is None:
            pos = int(np.searchsorted(self._packed, packed))
            self._packed = np.insert(self._packed, pos, packed)
            self._keys = np.insert(
                self._keys, pos, np.array(key, dtype=np.int64), axis=0
            )
            self._scores = np.insert(self._scores, pos, float(score))
        else:
            self._scores[i] = float(score)
        self._version += 1

    def occupied_keys(self) -> np.ndarray:
        """Cell indices with score strictly above the occupied threshold."""
        mask = self._scores > self.occupied_threshold
        return self._keys[mask]

    def occupied_snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        """(keys, centers) of occupied cells, cached until the next update."""
        if (
            self._occupied_cache is None
            or self._occupied_cache[0] != self._version
        ):
            keys = self.occupied_keys()
            self._occupied_cache = (
                self._version, keys, self.cell_centers(keys)
            )
        return self._occupied_cache[1], self._occupied_cache[2]

    def ingest_depth(self, img: DepthImage, pose: WorldPose) -> CameraFrustum:
        """Fold one depth frame into the grid; returns the frame's frustum.

        Visible cells decay first, then this frame's pixel hits increment,
        so a continuously observed cell converges to 1 / (1 - 0.9) = 10.
        """
        frustum = CameraFrustum.from_pose(
            pose, img.intrinsics, img.width, img.height
        )
        if len(self):
            vis = frustum.contains(self.cell_centers())
            self._scores[vis] *= DECAY

        mask = (
            (img.depth > 0.0)
            & (img.depth < MAX_PIXEL_DEPTH)
            & (img.confidence > MIN_CONFIDENCE)
        )
        if np.any(mask):
            vs, us = np.nonzero(mask)
            d = img.depth[vs, us]
            intr = img.intrinsics
            cam = np.stack(
                [
                    (us - intr.cx) * d / intr.fx,
                    -(vs - intr.cy) * d / intr.fy,
                    d,
                ],
                axis=1,
            )
            world = cam @ pose.rotation.T + pose.position
            keys = np.floor(world / self.cell_size).astype(np.int64)
            packed = _pack_rows(keys)
            uniq, counts = np.unique(packed, return_counts=True)
            self._increment(uniq, counts.astype(np.float64))

        self._prune(pose.position)
        self._version += 1
        return frustum

    def _increment(self, packed: np.ndarray, amounts: np.ndarray) -> None:
        # `packed` arrives sorted and duplicate-free from np.unique, so the
        # merge preserves the sorted storage order.
        pos = np.searchsorted(self._packed, packed)
        in_range = pos < len(self._packed)
        found = np.zeros(len(packed), dtype=bool)
        if np.any(in_range):
            found[in_range] = (
                self._packed[pos[in_range]] == packed[in_range]
            )
        if np.any(found):
            self._scores[pos[found]] += amounts[found]
        miss = ~found
        if np.any(miss):
            where = pos[miss]
            self._packed = np.insert(self._packed, where, packed[miss])
            self._keys = np.insert(
                self._keys, where, _unpack_rows(packed[miss]), axis=0
            )
            self._scores = np.insert(self._scores, where, amounts[miss])

    def _prune(self, phone_position: np.ndarray) -> None:
        if not len(self):
            return
        centers = self.cell_centers()
        dx = centers[:, 0] - phone_position[0]
        dz = centers[:, 2] - phone_position[2]
        keep = dx * dx + dz * dz <= PRUNE_RADIUS * PRUNE_RADIUS
        if np.all(keep):
            return
        self._packed = self._packed[keep]
        self._keys = self._keys[keep]
        self._scores = self._scores[keep]

    def estimate_ground(self, pose: WorldPose) -> float | None:
        """Mean height of occupied cells just below and around the phone.

        Considers occupied cell centers below the phone and within 0.3 m
        horizontally; returns their mean world y, or None when no cell
        qualifies (callers fall back to the last known ground).
        """
        keys, centers = self.occupied_snapshot()
        if not len(keys):
            return None
        dx = centers[:, 0] - pose.position[0]
        dz = centers[:, 2] - pose.position[2]
        near = dx * dx + dz * dz <= GROUND_RADIUS * GROUND_RADIUS
        below = centers[:, 1] < pose.position[1]
        sel = centers[near & below, 1]
        if not sel.size:
            return None
        return float(np.mean(sel))
