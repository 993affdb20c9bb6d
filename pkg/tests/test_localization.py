"""Tests for GPS lateral correction, turn detection, and compass alignment."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from corridors import ANCHOR, build_l_corridor, build_straight_corridor, world_to_geo
from wayguide.geodesy import METERS_PER_RADIAN, GeoCoordinate, wrap_degrees
from wayguide.localization import (
    CompassOffset,
    GeoOffset,
    Route,
    TrajectoryPairBuffer,
    correct_lateral,
    detect_turn,
    estimate_compass,
    load_route,
    save_route,
)
from wayguide.occupancy import WorldPose

C = METERS_PER_RADIAN


def local_meters(coord, anchor):
    return np.array(
        [
            (coord.lat - anchor.lat) * C,
            (coord.lon - anchor.lon) * C * math.cos(anchor.lat),
        ]
    )


class TestCorrectLateral:
    PREV = GeoCoordinate(0.0, 0.0)
    TARGET = GeoCoordinate(1e-3, 0.0)  # due north leg

    def test_on_line_unchanged(self):
        raw = GeoCoordinate(5e-4, 0.0)
        off = correct_lateral(raw, GeoOffset(), self.PREV, self.TARGET)
        assert off == GeoOffset(0.0, 0.0)

    def test_three_meters_west_pulled_onto_line(self):
        raw = GeoCoordinate(5e-4, -3.0 / C)
        off = correct_lateral(raw, GeoOffset(), self.PREV, self.TARGET)
        corrected = off.apply(raw)
        p = local_meters(corrected, self.PREV)
        assert abs(p[1]) < 1e-9  # exactly on the north-going line
        assert p[0] == pytest.approx(5e-4 * C)  # along-track untouched

    def test_fifteen_meters_off_is_ignored(self):
        raw = GeoCoordinate(5e-4, -15.0 / C)
        off = correct_lateral(raw, GeoOffset(), self.PREV, self.TARGET)
        assert off == GeoOffset(0.0, 0.0)

    def test_existing_offset_accumulates(self):
        prior = GeoOffset(dlat=1e-6, dlon=0.0)
        raw = GeoCoordinate(5e-4, -3.0 / C)
        off = correct_lateral(raw, prior, self.PREV, self.TARGET)
        assert off.dlat == prior.dlat  # lateral-only on this leg
        corrected = off.apply(raw)
        assert abs(local_meters(corrected, self.PREV)[1]) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(-60.0, 60.0),
        st.floats(0.0, 359.0),
        st.floats(5.0, 400.0),
        st.floats(-11.5, 11.5),
        st.floats(0.0, 300.0),
    )
    def test_along_track_never_changes(self, lat_deg, brg, leg, lateral, along):
        prev = GeoCoordinate.from_degrees(lat_deg, 10.0)
        b = math.radians(brg)
        d_hat = np.array([math.cos(b), math.sin(b)])
        n_hat = np.array([-math.sin(b), math.cos(b)])
        p = along * d_hat + lateral * n_hat
        target = GeoCoordinate(
            prev.lat + leg * d_hat[0] / C,
            prev.lon + leg * d_hat[1] / (C * math.cos(prev.lat)),
        )
        raw = GeoCoordinate(
            prev.lat + p[0] / C, prev.lon + p[1] / (C * math.cos(prev.lat))
        )
        off = correct_lateral(raw, GeoOffset(), prev, target)
        corrected = off.apply(raw)
        before = local_meters(raw, prev) @ d_hat
        after = local_meters(corrected, prev) @ d_hat
        assert abs(after - before) < 1e-9


def l_walk_buffer(theta_deg, noise_sigma, seed, spacing=1.5):
    """20-pair buffer from an L-shaped walk, geo rotated and noise-corrupted.

    The walk covers two perpendicular legs with 20 points at the given
    spacing. East longitudes are scaled by cos(mean latitude) so that the
    buffer's own local-meter convention reproduces the rotated points
    exactly; the noiseless case is then exact to machine precision.
    """
    rng = np.random.default_rng(seed)
    t = math.radians(theta_deg)
    buf = TrajectoryPairBuffer()
    pts = [(0.0, spacing * i) for i in range(10)] + [
        (spacing * (i + 1), spacing * 9) for i in range(10)
    ]
    ne = []
    for x, z in pts:
        n = z * math.cos(t) - x * math.sin(t) + rng.normal(0.0, noise_sigma)
        e = z * math.sin(t) + x * math.cos(t) + rng.normal(0.0, noise_sigma)
        ne.append((n, e))
    mean_lat = ANCHOR.lat + np.mean([n for n, _ in ne]) / C
    for (x, z), (n, e) in zip(pts, ne):
        gps = GeoCoordinate(
            ANCHOR.lat + n / C, ANCHOR.lon + e / (C * math.cos(mean_lat))
        )
        buf.add((x, z), gps)
    return buf


class TestEstimateCompass:
    def test_identity_alignment(self):
        buf = l_walk_buffer(0.0, 0.0, seed=0)
        est = estimate_compass(buf)
        assert est is not None
        assert abs(est.theta) < 1e-9

    def test_recovers_known_rotation(self):
        for theta in (30.0, -75.0, 120.0):
            est = estimate_compass(l_walk_buffer(theta, 0.0, seed=1))
            assert est is not None
            err = wrap_degrees(math.degrees(est.theta) - theta)
            assert abs(err) < 1e-6

    def test_requires_full_buffer(self):
        buf = TrajectoryPairBuffer()
        buf.add((0.0, 0.0), ANCHOR)
        with pytest.raises(ValueError):
            estimate_compass(buf)

    def test_straight_line_deferred(self):
        buf = TrajectoryPairBuffer()
        for i in range(20):
            z = 0.5 * i
            gps = GeoCoordinate(ANCHOR.lat + (z + 1e-4) / C, ANCHOR.lon)
            buf.add((0.0, z), gps)
        assert estimate_compass(buf) is None

    def test_det_plus_one_over_1000_noisy_buffers(self):
        ok = 0
        for seed in range(1000):
            theta = (seed * 7) % 360 - 180.0
            buf = l_walk_buffer(theta, 8.0, seed=seed)
            est = estimate_compass(buf)
            if est is None:
                continue
            ok += 1
            assert np.linalg.det(est.rotation) == pytest.approx(1.0, abs=1e-9)
            assert np.allclose(
                est.rotation @ est.rotation.T, np.eye(2), atol=1e-9
            )
        assert ok > 900  # the gate may defer a few of the noisiest

    def test_translation_invariance(self):
        base = l_walk_buffer(40.0, 1.0, seed=3)
        t0 = estimate_compass(base).theta

        # World and longitude shifts are absorbed exactly by centering.
        shifted = TrajectoryPairBuffer()
        for (w, g) in base._pairs:
            shifted.add(
                (w[0] + 500.0, w[1] - 250.0),
                GeoCoordinate(g.lat, g.lon - 40.0 / C),
            )
        t1 = estimate_compass(shifted).theta
        assert abs(t1 - t0) < 1e-9

        # A latitude shift nudges the east-meter scale (cos of the mean
        # latitude), so invariance there is only approximate.
        north = TrajectoryPairBuffer()
        for (w, g) in base._pairs:
            north.add(w, GeoCoordinate(g.lat + 300.0 / C, g.lon))
        t2 = estimate_compass(north).theta
        assert abs(t2 - t0) < 1e-4

    def test_noisy_recovery_rate_smoke(self):
        # Angular error std for fit noise on the geo side is
        # sigma / sqrt(sum |p - mean|^2); a 36/40 m L at 4 m spacing puts
        # sigma=3 m trials at ~2.1 degrees, so <5 degrees is ~98% likely.
        hits = 0
        for seed in range(50):
            est = estimate_compass(l_walk_buffer(25.0, 3.0, seed=seed, spacing=4.0))
            if est is not None and abs(
                wrap_degrees(math.degrees(est.theta) - 25.0)
            ) < 5.0:
                hits += 1
        assert hits >= 46


class TestTrajectoryPairBuffer:
    def test_spacing_rule(self):
        buf = TrajectoryPairBuffer()
        buf.add((0.0, 0.0), ANCHOR)
        buf.add((0.1, 0.0), ANCHOR)  # too close, skipped
        assert len(buf) == 1
        buf.add((0.35, 0.0), ANCHOR)
        assert len(buf) == 2

    def test_rolling_eviction(self):
        buf = TrajectoryPairBuffer()
        for i in range(25):
            buf.add((0.0, 0.5 * i), ANCHOR)
        assert len(buf) == 20
        assert buf._pairs[0][0] == (0.0, 2.5)

    def test_reset(self):
        buf = TrajectoryPairBuffer()
        for i in range(20):
            buf.add((0.0, 0.5 * i), ANCHOR)
        assert buf.full
        buf.reset()
        assert len(buf) == 0 and not buf.full


class TestDetectTurn:
    def run_detect(self, grid, route, est_gps=None, offset=GeoOffset()):
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        if est_gps is None:
            est_gps = world_to_geo(0.0, 0.0)
        return detect_turn(
            grid,
            path_heading=0.0,
            pose=pose,
            route=route,
            est_gps=est_gps,
            offset=offset,
            compass_theta=0.0,
        )

    def test_straight_corridor_no_detection(self):
        grid = build_straight_corridor(width=2.0)
        route = Route(
            waypoints=[
                world_to_geo(0.0, 0.0),
                world_to_geo(0.0, 10.0),
                world_to_geo(6.0, 10.0),
            ],
            target_index=1,
        )
        assert self.run_detect(grid, route) is None

    def test_l_corridor_right_turn_located(self):
        grid, route = build_l_corridor(width=2.0, corner_dist=10.0, side_len=6.0)
        det = self.run_detect(grid, route)
        assert det is not None
        assert det.distance == pytest.approx(10.0, abs=0.3)
        assert det.world_xz[0] == pytest.approx(0.0, abs=1e-9)
        assert det.world_xz[1] == pytest.approx(10.0, abs=0.3)

    def test_l_corridor_left_turn_located(self):
        grid, route = build_l_corridor(
            width=2.0, corner_dist=9.0, side_len=6.0, turn_sign=-1
        )
        det = self.run_detect(grid, route)
        assert det is not None
        assert det.distance == pytest.approx(9.0, abs=0.3)

    def test_offset_pins_turn_to_waypoint(self):
        grid, route = build_l_corridor(width=2.0, corner_dist=10.0)
        # GPS estimate 5 m east of truth: detection still within the 8 m
        # gate, and the new offset puts the detected turn on the waypoint.
        est = world_to_geo(5.0, 0.0)
        prior = GeoOffset(dlat=2e-7, dlon=-1e-7)
        det = self.run_detect(grid, route, est_gps=est, offset=prior)
        assert det is not None
        geo_b = 0.0
        expected = GeoCoordinate(
            est.lat + det.distance * math.cos(geo_b) / C,
            est.lon + det.distance * math.sin(geo_b) / (C * math.cos(est.lat)),
        )
        pinned = GeoCoordinate(
            expected.lat + (det.offset.dlat - prior.dlat),
            expected.lon + (det.offset.dlon - prior.dlon),
        )
        assert abs(pinned.lat - route.target.lat) < 1e-15
        assert abs(pinned.lon - route.target.lon) < 1e-15

    def test_nine_meters_from_waypoint_ignored(self):
        grid, route = build_l_corridor(width=2.0, corner_dist=10.0)
        est = world_to_geo(9.0, 0.0)  # expected turn lands ~9 m east of wp
        assert self.run_detect(grid, route, est_gps=est) is None

    def test_no_next_waypoint_no_detection(self):
        grid, _ = build_l_corridor(width=2.0, corner_dist=10.0)
        route = Route(
            waypoints=[world_to_geo(0.0, 0.0), world_to_geo(0.0, 10.0)],
            target_index=1,
        )
        assert self.run_detect(grid, route) is None

    def test_shallow_turn_not_searched(self):
        grid, _ = build_l_corridor(width=2.0, corner_dist=10.0)
        route = Route(
            waypoints=[
                world_to_geo(0.0, 0.0),
                world_to_geo(0.0, 10.0),
                world_to_geo(1.0, 20.0),  # ~6 degree bend
            ],
            target_index=1,
        )
        assert self.run_detect(grid, route) is None

    def test_translation_invariance(self):
        grid1, route1 = build_l_corridor(width=2.0, corner_dist=10.0)
        d1 = self.run_detect(grid1, route1)

        # Shift the whole world 4 m east, 6 m north: same relative result.
        grid2, _ = build_l_corridor(width=2.0, corner_dist=10.0)
        shift_i, shift_k = 20, 30  # cells (0.2 m each)
        grid2.cells = {
            (i + shift_i, k + shift_k): w for (i, k), w in grid2.cells.items()
        }
        route2 = Route(
            waypoints=[
                world_to_geo(4.0, 6.0),
                world_to_geo(4.0, 16.0),
                world_to_geo(10.0, 16.0),
            ],
            target_index=1,
        )
        pose = WorldPose(position=np.array([4.0, 0.0, 6.0]))
        d2 = detect_turn(
            grid2,
            path_heading=0.0,
            pose=pose,
            route=route2,
            est_gps=world_to_geo(4.0, 6.0),
            offset=GeoOffset(),
            compass_theta=0.0,
        )
        assert d1 is not None and d2 is not None
        assert d2.distance == pytest.approx(d1.distance, abs=1e-9)


class TestRouteFile:
    def test_round_trip(self, tmp_path):
        route = Route(
            waypoints=[
                GeoCoordinate.from_degrees(42.36, -71.06),
                GeoCoordinate.from_degrees(42.3605, -71.0598),
                GeoCoordinate.from_degrees(42.3606, -71.0590),
            ]
        )
        path = tmp_path / "route.txt"
        save_route(path, route)
        loaded = load_route(path)
        assert len(loaded.waypoints) == 3
        for a, b in zip(route.waypoints, loaded.waypoints):
            assert a.lat == pytest.approx(b.lat, abs=1e-15)
            assert a.lon == pytest.approx(b.lon, abs=1e-15)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "route.txt"
        path.write_text("# header\n\n42.36 -71.06\n42.37 -71.05\n")
        route = load_route(path)
        assert len(route.waypoints) == 2

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "route.txt"
        path.write_text("42.36\n")
        with pytest.raises(ValueError):
            load_route(path)

    def test_route_validation(self):
        with pytest.raises(ValueError):
            Route(waypoints=[ANCHOR])
        with pytest.raises(ValueError):
            Route(waypoints=[ANCHOR, ANCHOR])
