"""Closed-loop scenario runner and the fused navigation stack.

One 30 Hz loop per run: synthesize sensors, produce a guidance heading
per the selected mode, step the kinematic walker, and score the run.
The full stack (mode "mobilio") fuses depth, segmentation, GPS, and VIO
entirely in the phone's VIO frame; the baselines consume only the
sensors a real counterpart would have.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..audio import GENERIC_PARAMS, AudioParams, feedback, turn_prompt
from ..avoidance import SearchGrid2D, avoidance_heading, detect_collision
from ..geodesy import (
    METERS_PER_RADIAN,
    GeoCoordinate,
    bearing,
    distance,
    turn_angle,
    wrap_radians,
)
from ..localization import (
    GeoOffset,
    Route,
    TrajectoryPairBuffer,
    correct_lateral,
    detect_turn,
    estimate_compass,
)
from ..occupancy import DepthImage, Intrinsics, OccupancyGrid3D, WorldPose
from ..surface import SegmentationFrame, SurfaceGrid2D, path_direction, update_surface
from .agent import (
    CAMERA_PITCH_DOWN,
    Agent,
    ContactTracker,
    cane_contact,
    contact_sets,
    step,
)
from .scene import Scene
from .sensors import (
    DEFAULT_NOISE,
    SensorNoise,
    VioTracker,
    render_depth,
    render_segmentation,
    sample_gps,
)

FRAME_RATE = 30
DT = 1.0 / FRAME_RATE

# Sensor and pipeline cadences in frames (30 Hz loop).
DEPTH_PERIOD = 6  # 5 Hz
SEG_PERIOD = 5  # 6 Hz
GPS_PERIOD = 30  # 1 Hz
STEER_PERIOD = 15  # 2 Hz path casting
AVOID_PERIOD = 3  # 10 Hz collision checks
TURN_SCAN_PERIOD = 15  # 2 Hz turn detection near turns

DEPTH_SIZE = (64, 48)
SEG_SIZE = (80, 60)

MODES = ("mobilio", "gmaps-baseline", "oracle-guide", "cane-only")

CORRECTION_WINDOW = 10.0
CORRECTION_PENALTY = 30.0
STALL_DISTANCE = 0.75
# A correction walks the agent back toward the route until reattached
# (or the cap runs out), mirroring an experimenter redirecting them.
OVERRIDE_MAX_SECONDS = 12.0
OVERRIDE_RELEASE = 1.5
CANE_DEFLECT_DEGREES = 45.0
CANE_DEFLECT_SECONDS = 0.6
ARRIVAL_RADIUS = 2.0
EST_ARRIVAL_RADIUS = 2.0
# Physical arrival radius at the final waypoint: a tight box for indoor
# obstacle courses (past the last obstacle row), a destination zone at
# GPS scale outdoors.
COMPLETION_RADIUS_INDOOR = 0.75
COMPLETION_RADIUS_OUTDOOR = 2.0
PROMPT_RADIUS = 12.0
TURN_SCAN_RADIUS = 15.0
MAX_SIM_SECONDS = 600.0

# Fused-location gain per 1 Hz fix and spacing between compass pairs.
GPS_BLEND = 0.25
COMPASS_PAIR_METERS = 2.0
# Walked-path shape gates for accepting a compass estimate: straight-leg
# windows leave the alignment angle unconstrained against GPS noise, so
# wait until the window spans a corner.
COMPASS_MIN_EXTENT = 10.0
COMPASS_MIN_RATIO = 0.2

# Routes at obstacle-course scale are walked without GPS routing (and
# with a cane); longer outdoor routes get the full GPS pipeline.
INDOOR_ROUTE_LENGTH = 20.0

CARDINALS = (
    "north",
    "northeast",
    "east",
    "southeast",
    "south",
    "southwest",
    "west",
    "northwest",
)

TRACE_COLUMNS = (
    "frame",
    "time",
    "true_x",
    "true_z",
    "true_heading_deg",
    "est_lat_deg",
    "est_lon_deg",
    "offset_dlat_deg",
    "offset_dlon_deg",
    "compass_theta_deg",
    "command_deg",
    "heading_error_deg",
    "audio_angle_deg",
    "audio_pitch",
    "events",
)


def cardinal_name(bearing_rad: float) -> str:
    """Nearest eight-wind compass name for a bearing."""
    idx = int(round(math.degrees(bearing_rad) / 45.0)) % 8
    return CARDINALS[idx]


@dataclass(frozen=True)
class RunMetrics:
    """Outcome of one scenario run.

    Attributes:
        mode: Guidance mode that produced the run.
        scene: Scene name.
        seed: Noise seed.
        completion_time: Simulated seconds to reach the final waypoint
            (the time cap when the run timed out).
        contacts: Distinct body/cane obstacle contacts.
        corrections: Verbal corrections issued.
        adjusted_time: completion_time + 30 s per correction.
        heading_errors: Per-frame signed guidance heading error, degrees.
        timed_out: True when the run hit the simulated-time cap.
        frames: Simulated frames executed.
        sim_rate: Simulated frames per wall-clock second (not part of
            the deterministic trace).
    """

    mode: str
    scene: str
    seed: int
    completion_time: float
    contacts: int
    corrections: int
    adjusted_time: float
    heading_errors: np.ndarray
    timed_out: bool
    frames: int
    sim_rate: float

    def __post_init__(self) -> None:
        expected = self.completion_time + CORRECTION_PENALTY * self.corrections
        if abs(self.adjusted_time - expected) > 1e-9:
            raise ValueError("adjusted time must be completion + 30 s each")

    @property
    def mean_abs_heading_error(self) -> float:
        if not len(self.heading_errors):
            return 0.0
        return float(np.mean(np.abs(self.heading_errors)))


class _CorrectionMonitor:
    """Fires when the walker heads away from the route or stalls.

    Heading away means the distance to the route polyline increased every
    frame for a full 10 s window; stalling means net displacement under
    0.75 m over 10 s. Both reset after firing, so corrections are at
    least 10 s apart.
    """

    def __init__(self) -> None:
        self._window = int(round(CORRECTION_WINDOW * FRAME_RATE))
        self._increasing = 0
        self._prev: float | None = None
        self._positions: deque = deque(maxlen=self._window)

    def update(self, dist_to_route: float, x: float, z: float) -> bool:
        if self._prev is not None and dist_to_route > self._prev + 1e-9:
            self._increasing += 1
        else:
            self._increasing = 0
        self._prev = dist_to_route
        self._positions.append((x, z))
        fired = self._increasing >= self._window - 1
        if not fired and len(self._positions) == self._window:
            x0, z0 = self._positions[0]
            fired = math.hypot(x - x0, z - z0) < STALL_DISTANCE
        if fired:
            self.reset()
        return fired

    def reset(self) -> None:
        self._increasing = 0
        self._prev = None
        self._positions.clear()


def _segment_distance(x, z, ax, az, bx, bz) -> float:
    vx, vz = bx - ax, bz - az
    wx, wz = x - ax, z - az
    denom = vx * vx + vz * vz
    t = 0.0 if denom == 0.0 else max(0.0, min(1.0, (wx * vx + wz * vz) / denom))
    return math.hypot(wx - t * vx, wz - t * vz)


def route_distance(x: float, z: float, waypoints) -> float:
    """Distance from a point to the route polyline, meters."""
    return min(
        _segment_distance(x, z, ax, az, bx, bz)
        for (ax, az), (bx, bz) in zip(waypoints[:-1], waypoints[1:])
    )


def nearest_segment(x: float, z: float, waypoints) -> int:
    """Index of the route segment closest to a point.

    Segment ``i`` runs from waypoint ``i`` to waypoint ``i + 1``.
    """
    dists = [
        _segment_distance(x, z, ax, az, bx, bz)
        for (ax, az), (bx, bz) in zip(waypoints[:-1], waypoints[1:])
    ]
    return int(np.argmin(dists))


def nearest_route_point(x: float, z: float, waypoints) -> tuple:
    """Closest point on the route polyline to a point."""
    j = nearest_segment(x, z, waypoints)
    (ax, az), (bx, bz) = waypoints[j], waypoints[j + 1]
    vx, vz = bx - ax, bz - az
    denom = vx * vx + vz * vz
    t = 0.0 if denom == 0.0 else max(
        0.0, min(1.0, ((x - ax) * vx + (z - az) * vz) / denom)
    )
    return (ax + t * vx, az + t * vz)


class NavigationStack:
    """Phone-side sensor fusion: maps, localization, and steering.

    Everything here lives in the VIO frame; geo quantities (GPS fixes,
    route waypoints) are bridged through the estimated compass offset
    ``theta`` (VIO heading + theta = compass bearing) and the GPS offset
    accumulated by lateral and turn corrections.
    """

    def __init__(
        self,
        route: Route,
        params: AudioParams = GENERIC_PARAMS,
        user_height: float = 1.8,
        gps_routing: bool = True,
    ) -> None:
        self.route = route
        self.params = params
        self.user_height = user_height
        self.gps_routing = gps_routing
        self.grid3d = OccupancyGrid3D()
        self.grid2d = SurfaceGrid2D()
        self.buffer = TrajectoryPairBuffer()
        self.offset = GeoOffset()
        self.theta = 0.0
        self.ground = 0.0
        self.est_geo: GeoCoordinate | None = None
        self.search = SearchGrid2D()
        self.steer_vio: float | None = None
        self.avoid_offset_deg: float | None = None
        self.corridor_vio: float | None = None
        self.events: list = []
        self._depth_frames = 0
        self._pair_anchor: tuple | None = None

    def ingest_depth(self, img: DepthImage, vio_pose: WorldPose) -> None:
        self.grid3d.ingest_depth(img, vio_pose)
        g = self.grid3d.estimate_ground(vio_pose)
        if g is not None:
            self.ground = g
        self.grid2d.level = self.ground
        self.search = SearchGrid2D.from_occupancy(
            self.grid3d, self.ground, self.user_height
        )
        # The surface map only needs occasional memory bounding.
        self._depth_frames += 1
        if self._depth_frames % 10 == 0:
            self.grid2d.prune(vio_pose.position)

    def ingest_segmentation(self, labels: np.ndarray, intr: Intrinsics,
                            vio_pose: WorldPose) -> None:
        frame = SegmentationFrame(labels=labels, pose=vio_pose, intrinsics=intr)
        update_surface(self.grid2d, frame, vio_pose)

    def advance_est(self, dx_vio: float, dz_vio: float) -> None:
        """Dead-reckon the geo estimate by a VIO-frame displacement."""
        if self.est_geo is None:
            return
        ct, st = math.cos(self.theta), math.sin(self.theta)
        north = dz_vio * ct - dx_vio * st
        east = dz_vio * st + dx_vio * ct
        c = METERS_PER_RADIAN
        self.est_geo = GeoCoordinate(
            self.est_geo.lat + north / c,
            self.est_geo.lon + east / (c * math.cos(self.est_geo.lat)),
        )

    def ingest_gps(self, raw: GeoCoordinate, vio_xz: tuple) -> None:
        if not self.route.finished:
            prev = self.route.previous(self.offset.apply(raw))
            self.offset = correct_lateral(
                raw, self.offset, prev, self.route.target
            )
        fix = self.offset.apply(raw)
        if self.est_geo is None:
            self.est_geo = fix
        else:
            # VIO dead-reckoning is locally exact, so fixes only need to
            # bleed in slowly; a full snap would inherit each fix's noise.
            self.est_geo = GeoCoordinate(
                self.est_geo.lat + GPS_BLEND * (fix.lat - self.est_geo.lat),
                self.est_geo.lon + GPS_BLEND * (fix.lon - self.est_geo.lon),
            )
        # Compass pairs use the raw fix: the offset state shifts over time
        # and would warp the geo track into a phantom rotation, while a
        # constant GPS bias drops out when the point sets are centered.
        # Wider pair spacing stretches the alignment window so per-fix
        # noise averages out across a longer stretch of walked path.
        if self._pair_anchor is None or (
            math.hypot(
                vio_xz[0] - self._pair_anchor[0],
                vio_xz[1] - self._pair_anchor[1],
            )
            >= COMPASS_PAIR_METERS
        ):
            self._pair_anchor = (float(vio_xz[0]), float(vio_xz[1]))
            if self.buffer.add(vio_xz, raw) and self._buffer_is_bent():
                est = estimate_compass(self.buffer)
                if est is not None:
                    self.theta = est.theta
                    self.buffer.reset()
                    self.events.append(
                        f"compass:{math.degrees(est.theta):.1f}"
                    )

    def _buffer_is_bent(self) -> bool:
        """Whether the buffered walk spans two directions, not one leg."""
        world, _ = self.buffer.arrays()
        world = world - world.mean(axis=0)
        s = np.linalg.svd(world, compute_uv=False)
        return s[0] >= COMPASS_MIN_EXTENT and s[1] / s[0] >= COMPASS_MIN_RATIO

    def target_direction(self, vio_heading: float) -> float | None:
        """VIO-frame direction toward the current goal."""
        if not self.gps_routing:
            return self.corridor_vio
        if self.est_geo is None:
            return None
        try:
            geo_bearing = bearing(self.est_geo, self.route.target)
        except ValueError:
            return None
        return geo_bearing - self.theta

    def update_steer(self, vio_pose: WorldPose) -> None:
        target = self.target_direction(vio_pose.heading)
        if target is None:
            self.steer_vio = None
            return
        self.steer_vio = path_direction(self.grid2d, vio_pose, target)

    def update_avoidance(self, vio_pose: WorldPose) -> None:
        collided, _ = detect_collision(
            self.grid3d, vio_pose, self.ground, self.user_height
        )
        if collided:
            self.avoid_offset_deg = avoidance_heading(self.search, vio_pose)
        else:
            self.avoid_offset_deg = None

    def try_turn_pin(self, vio_pose: WorldPose) -> None:
        if self.est_geo is None or self.route.finished:
            return
        if distance(self.est_geo, self.route.target) > TURN_SCAN_RADIUS:
            return
        path_heading = (
            self.steer_vio
            if self.steer_vio is not None
            else self.target_direction(vio_pose.heading)
        )
        if path_heading is None:
            return
        det = detect_turn(
            self.grid2d,
            path_heading,
            vio_pose,
            self.route,
            self.est_geo,
            self.offset,
            compass_theta=self.theta,
        )
        if det is None:
            return
        dlat = det.offset.dlat - self.offset.dlat
        dlon = det.offset.dlon - self.offset.dlon
        self.offset = det.offset
        self.est_geo = GeoCoordinate(
            self.est_geo.lat + dlat, self.est_geo.lon + dlon
        )
        self.events.append(f"turnpin:{det.distance:.1f}")

    def command(self, vio_heading: float) -> float:
        """Final steering command in the VIO frame."""
        if self.avoid_offset_deg is not None:
            return vio_heading + math.radians(self.avoid_offset_deg)
        if self.steer_vio is not None:
            return self.steer_vio
        target = self.target_direction(vio_heading)
        return vio_heading if target is None else target


def _world_bearing(x: float, z: float, wx: float, wz: float) -> float:
    return math.atan2(wx - x, wz - z)


def run_scenario(
    scene: Scene,
    mode: str,
    noise: SensorNoise = DEFAULT_NOISE,
    seed: int = 0,
    *,
    params: AudioParams = GENERIC_PARAMS,
    cane: bool | None = None,
    gps_routing: bool | None = None,
    max_sim_seconds: float = MAX_SIM_SECONDS,
    max_wall_seconds: float | None = None,
) -> tuple[RunMetrics, list]:
    """Run one closed-loop navigation episode.

    Args:
        scene: Environment and route.
        mode: One of ``MODES``.
        noise: Sensor noise profile.
        seed: Seed for every random draw in the run.
        params: Audio feedback parameters used by the full stack.
        cane: Whether the walker carries a cane; default: only on
            obstacle-course-scale routes (under 20 m).
        gps_routing: Whether guidance may use GPS/route geo data;
            default: only on routes of at least 20 m.
        max_sim_seconds: Simulated-time cap; exceeding it flags the run.
        max_wall_seconds: Optional wall-clock cap with the same flag.

    Returns:
        (metrics, trace rows). Trace rows follow ``TRACE_COLUMNS``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    rng = np.random.default_rng(seed)
    pts = scene.route_world
    route_len = sum(
        math.hypot(bx - ax, bz - az)
        for (ax, az), (bx, bz) in zip(pts[:-1], pts[1:])
    )
    if cane is None:
        cane = route_len < INDOOR_ROUTE_LENGTH
    if gps_routing is None:
        gps_routing = route_len >= INDOOR_ROUTE_LENGTH
    completion_radius = (
        COMPLETION_RADIUS_INDOOR
        if route_len < INDOOR_ROUTE_LENGTH
        else COMPLETION_RADIUS_OUTDOOR
    )

    x0, z0, h0 = scene.start()
    agent = Agent(x=x0, z=z0, heading=h0)
    pitch = math.radians(CAMERA_PITCH_DOWN)

    stack: NavigationStack | None = None
    vio: VioTracker | None = None
    intr_depth = intr_seg = None
    if mode == "mobilio":
        stack = NavigationStack(
            scene.route(),
            params=params,
            user_height=agent.user_height,
            gps_routing=gps_routing,
        )
        stack.route.advance()
        vio = VioTracker(noise, rng)
        intr_depth = Intrinsics.for_image(*DEPTH_SIZE)
        intr_seg = Intrinsics.for_image(*SEG_SIZE)

    # Baseline state: current target waypoint index and held course.
    target_idx = 1
    gmaps_course: float | None = None
    gmaps_gps: GeoCoordinate | None = None
    gmaps_arrived = False
    geo_route = scene.route()
    compass_bias = math.radians(noise.compass_bias)

    def gmaps_prompt(idx: int) -> tuple:
        a = geo_route.waypoints[idx - 1]
        b = geo_route.waypoints[idx]
        leg = bearing(a, b)
        meters = int(round(distance(a, b)))
        return f"head {cardinal_name(leg)} for {meters} meters", leg

    tracker = ContactTracker()
    monitor = _CorrectionMonitor()
    corrections = 0
    override_until = -1
    override_point = (0.0, 0.0)
    deflect_until = -1
    deflect_cmd = 0.0
    completed = False
    timed_out = False
    rows: list = []
    errors: list = []

    frames_cap = int(round(max_sim_seconds * FRAME_RATE))
    start_wall = time.perf_counter()
    last_vio: tuple | None = None
    events: list = []

    for frame in range(frames_cap):
        t = frame * DT
        events = []

        # --- perception / mode state updates -------------------------
        if mode == "mobilio":
            vx, vz, vh = vio.observe(agent.x, agent.z, agent.heading)
            vio_pose = WorldPose.from_heading(
                (vx, agent.camera_height, vz), vh, pitch_down=pitch
            )
            if last_vio is not None:
                stack.advance_est(vx - last_vio[0], vz - last_vio[1])
            last_vio = (vx, vz)
            if stack.corridor_vio is None:
                stack.corridor_vio = vh
            if frame % DEPTH_PERIOD == 0:
                img = render_depth(
                    scene, agent.pose(), intr_depth, noise, rng,
                    width=DEPTH_SIZE[0], height=DEPTH_SIZE[1],
                )
                stack.ingest_depth(img, vio_pose)
            if frame % SEG_PERIOD == 2:
                seg = render_segmentation(
                    scene, agent.pose(), intr_seg, noise, rng,
                    width=SEG_SIZE[0], height=SEG_SIZE[1],
                )
                stack.ingest_segmentation(seg.labels, intr_seg, vio_pose)
            if gps_routing and frame % GPS_PERIOD == 0:
                raw = sample_gps(scene, agent.x, agent.z, noise, rng)
                stack.ingest_gps(raw, (vx, vz))
            if frame % STEER_PERIOD == 4 or frame == 0:
                stack.update_steer(vio_pose)
            if frame % AVOID_PERIOD == 0:
                stack.update_avoidance(vio_pose)
            if gps_routing and frame % TURN_SCAN_PERIOD == 7:
                stack.try_turn_pin(vio_pose)
            events.extend(stack.events)
            stack.events = []
        elif mode == "gmaps-baseline":
            if frame % GPS_PERIOD == 0:
                gmaps_gps = sample_gps(scene, agent.x, agent.z, noise, rng)
                if gmaps_course is None:
                    phrase, leg = gmaps_prompt(target_idx)
                    gmaps_course = leg
                    events.append(f"prompt:{phrase}")
                elif target_idx < len(pts) - 1:
                    if distance(gmaps_gps, geo_route.waypoints[target_idx]) <= PROMPT_RADIUS:
                        target_idx += 1
                        phrase, leg = gmaps_prompt(target_idx)
                        gmaps_course = leg
                        events.append(f"prompt:{phrase}")
                elif not gmaps_arrived:
                    # Final leg: announce arrival once the fix says the
                    # destination is at hand; the walker stops and waits.
                    if distance(gmaps_gps, geo_route.waypoints[-1]) <= PROMPT_RADIUS:
                        gmaps_arrived = True
                        events.append("prompt:you have arrived")

        # --- waypoint advancement ------------------------------------
        true_target = pts[min(target_idx, len(pts) - 1)]
        true_dist = math.hypot(true_target[0] - agent.x, true_target[1] - agent.z)
        if mode == "mobilio" and gps_routing:
            r = stack.route
            est_dist = (
                distance(stack.est_geo, r.target)
                if stack.est_geo is not None
                else math.inf
            )
            wp_dist = math.hypot(
                pts[r.target_index][0] - agent.x,
                pts[r.target_index][1] - agent.z,
            )
            if (est_dist < EST_ARRIVAL_RADIUS or wp_dist < ARRIVAL_RADIUS) and (
                not r.finished
            ):
                idx = r.target_index
                angle = turn_angle(
                    r.waypoints[idx - 1],
                    r.waypoints[idx],
                    r.waypoints[idx + 1],
                )
                prompt = turn_prompt(angle)
                if prompt is not None:
                    events.append(f"prompt:{prompt.phrase}")
                r.advance()
                target_idx = r.target_index
        elif mode in ("oracle-guide", "cane-only"):
            if true_dist < ARRIVAL_RADIUS and target_idx < len(pts) - 1:
                if mode == "oracle-guide":
                    angle = turn_angle(
                        geo_route.waypoints[target_idx - 1],
                        geo_route.waypoints[target_idx],
                        geo_route.waypoints[target_idx + 1],
                    )
                    prompt = turn_prompt(angle)
                    if prompt is not None:
                        events.append(f"prompt:{prompt.phrase}")
                target_idx += 1

        # --- completion: physical arrival at the final waypoint -------
        final = pts[-1]
        if math.hypot(final[0] - agent.x, final[1] - agent.z) < completion_radius:
            completed = True
            break

        # --- guidance command (true frame) ----------------------------
        if mode == "mobilio":
            cmd_vio = stack.command(vh)
            err = wrap_radians(cmd_vio - vh)
            cmd_true = wrap_radians(agent.heading + err)
        elif mode == "gmaps-baseline":
            course = gmaps_course if gmaps_course is not None else agent.heading
            cmd_true = wrap_radians(course - compass_bias)
        elif mode == "oracle-guide":
            wx, wz = pts[target_idx]
            cmd_true = _world_bearing(agent.x, agent.z, wx, wz)
        else:  # cane-only: walk the remembered leg course
            ax, az = pts[target_idx - 1]
            wx, wz = pts[target_idx]
            cmd_true = _world_bearing(ax, az, wx, wz)

        # --- cane reaction -------------------------------------------
        if cane:
            hit = cane_contact(agent, t, scene.boxes)
            if hit is not None:
                cx = (hit.x0 + hit.x1) / 2.0
                cz = (hit.z0 + hit.z1) / 2.0
                to_box = wrap_radians(
                    _world_bearing(agent.x, agent.z, cx, cz) - agent.heading
                )
                away = -1.0 if to_box >= 0.0 else 1.0
                deflect_cmd = wrap_radians(
                    agent.heading + away * math.radians(CANE_DEFLECT_DEGREES)
                )
                deflect_until = frame + int(CANE_DEFLECT_SECONDS * FRAME_RATE)
        if frame < deflect_until:
            cmd_true = deflect_cmd

        # --- corrections ----------------------------------------------
        d_route = route_distance(agent.x, agent.z, pts)
        d_override = math.hypot(
            override_point[0] - agent.x, override_point[1] - agent.z
        )
        if frame < override_until and d_override > OVERRIDE_RELEASE:
            # Still being walked back toward the route.
            cmd_true = _world_bearing(agent.x, agent.z, *override_point)
        else:
            override_until = -1
            if monitor.update(d_route, agent.x, agent.z):
                corrections += 1
                if mode == "gmaps-baseline" and gmaps_gps is not None:
                    # The app reroutes from its own fix: if the walker
                    # wandered onto a later leg, skip the stale waypoint.
                    # Never target a waypoint already passed.
                    fx, fz = scene.geo_to_world(gmaps_gps)
                    new_idx = min(nearest_segment(fx, fz, pts) + 1, len(pts) - 1)
                    if new_idx > target_idx:
                        target_idx = new_idx
                        phrase, leg = gmaps_prompt(target_idx)
                        gmaps_course = leg
                        events.append(f"prompt:{phrase}")
                elif mode == "mobilio" and gps_routing and stack.est_geo is not None:
                    ex, ez = scene.geo_to_world(stack.est_geo)
                    new_idx = min(nearest_segment(ex, ez, pts) + 1, len(pts) - 1)
                    while stack.route.target_index < new_idx and not stack.route.finished:
                        stack.route.advance()
                    target_idx = stack.route.target_index
                # Walk the agent toward the waypoint it should be heading
                # for: redirecting to the nearest route point can land on a
                # segment already behind it and make no forward progress.
                override_point = pts[min(target_idx, len(pts) - 1)]
                override_until = frame + int(OVERRIDE_MAX_SECONDS * FRAME_RATE)
                events.append("correction")
                cmd_true = _world_bearing(agent.x, agent.z, *override_point)

        # --- act -------------------------------------------------------
        err_deg = math.degrees(wrap_radians(cmd_true - agent.heading))
        errors.append(err_deg)
        if mode == "mobilio":
            angle, pitch_val = feedback(err_deg, params)
        else:
            angle, pitch_val = 0.0, 1.0
        # An arrived gmaps walker waits in place; stall corrections then
        # walk them the last stretch to the physical destination.
        waiting = (
            mode == "gmaps-baseline" and gmaps_arrived and frame >= override_until
        )
        if not waiting:
            step(agent, cmd_true, DT)

        engaged, holding = contact_sets(agent, t, scene.boxes, cane)
        for name in tracker.update(t, engaged, holding):
            events.append(f"contact:{name}")

        # --- trace row --------------------------------------------------
        if mode == "mobilio" and stack.est_geo is not None:
            est_lat, est_lon = stack.est_geo.to_degrees()
        elif mode == "gmaps-baseline" and gmaps_gps is not None:
            est_lat, est_lon = gmaps_gps.to_degrees()
        else:
            est_lat, est_lon = scene.world_to_geo(agent.x, agent.z).to_degrees()
        off = stack.offset if stack is not None else GeoOffset()
        theta = stack.theta if stack is not None else 0.0
        rows.append(
            (
                frame,
                t,
                agent.x,
                agent.z,
                math.degrees(agent.heading),
                est_lat,
                est_lon,
                math.degrees(off.dlat),
                math.degrees(off.dlon),
                math.degrees(theta),
                math.degrees(cmd_true),
                err_deg,
                angle,
                pitch_val,
                "|".join(events),
            )
        )
        if max_wall_seconds is not None and frame % FRAME_RATE == 0:
            if time.perf_counter() - start_wall > max_wall_seconds:
                timed_out = True
                break
    else:
        timed_out = True

    elapsed = time.perf_counter() - start_wall
    n_frames = len(rows)
    completion = n_frames * DT if completed else max_sim_seconds
    if timed_out:
        completion = min(n_frames * DT, max_sim_seconds)
    metrics = RunMetrics(
        mode=mode,
        scene=scene.name,
        seed=seed,
        completion_time=completion,
        contacts=tracker.count,
        corrections=corrections,
        adjusted_time=completion + CORRECTION_PENALTY * corrections,
        heading_errors=np.asarray(errors),
        timed_out=timed_out and not completed,
        frames=n_frames,
        sim_rate=n_frames / elapsed if elapsed > 0 else float("inf"),
    )
    return metrics, rows
