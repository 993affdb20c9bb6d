"""Tests for depth back-projection and the 3D occupancy grid rules."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wayguide.occupancy import (
    CELL_SIZE,
    DECAY,
    PRUNE_RADIUS,
    CameraFrustum,
    DepthImage,
    Intrinsics,
    OccupancyGrid3D,
    WorldPose,
    heading_rotation,
    is_visible,
    project_pixel,
)

INTR = Intrinsics.for_image(64, 48)


def make_image(depth, confidence=None, intr=INTR):
    depth = np.asarray(depth, dtype=float)
    if confidence is None:
        confidence = np.ones_like(depth)
    return DepthImage(depth=depth, confidence=confidence, intrinsics=intr)


def single_pixel_image(u, v, depth_value, shape=(48, 64), intr=INTR):
    """Image where exactly one pixel carries confident near-range depth."""
    depth = np.full(shape, 10.0)
    conf = np.zeros(shape)
    depth[v, u] = depth_value
    conf[v, u] = 1.0
    return make_image(depth, conf, intr)


class TestProjectPixel:
    def test_principal_point_is_optical_axis(self):
        p = project_pixel((INTR.cx, INTR.cy), 2.0, INTR, WorldPose.identity())
        assert np.allclose(p, [0.0, 0.0, 2.0])

    def test_one_focal_length_right_is_unit_lateral(self):
        p = project_pixel(
            (INTR.cx + INTR.fx, INTR.cy), 1.0, INTR, WorldPose.identity()
        )
        assert np.allclose(p, [1.0, 0.0, 1.0])

    def test_nonpositive_depth_rejected(self):
        with pytest.raises(ValueError):
            project_pixel((1.0, 1.0), 0.0, INTR, WorldPose.identity())

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(-math.pi, math.pi),
        st.floats(-0.5, 0.5),
        st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5)),
        st.floats(2.0, 60.0),
        st.floats(2.0, 44.0),
        st.floats(0.2, 8.0),
    )
    def test_round_trip_against_forward_oracle(self, hdg, pitch, pos, u, v, d):
        pose = WorldPose.from_heading(np.array(pos), hdg, pitch)
        world = project_pixel((u, v), d, INTR, pose)
        # Independent forward projection of that world point.
        cam = pose.rotation.T @ (world - pose.position)
        assert cam[2] > 0.0
        u2 = INTR.cx + INTR.fx * cam[0] / cam[2]
        v2 = INTR.cy - INTR.fy * cam[1] / cam[2]
        back = project_pixel((u2, v2), cam[2], INTR, pose)
        assert np.allclose(back, world, atol=1e-6)
        assert abs(u2 - u) < 1e-6 and abs(v2 - v) < 1e-6


class TestFrustumVisibility:
    def test_point_ahead_visible(self):
        pose = WorldPose.identity()
        fr = CameraFrustum.from_pose(pose, INTR, 64, 48)
        assert is_visible(np.array([0.0, 0.0, 1.0]), fr)

    def test_point_behind_not_visible(self):
        pose = WorldPose.identity()
        fr = CameraFrustum.from_pose(pose, INTR, 64, 48)
        assert not is_visible(np.array([0.0, 0.0, -1.0]), fr)

    def test_point_on_plane_not_visible(self):
        pose = WorldPose.identity()
        fr = CameraFrustum.from_pose(pose, INTR, 64, 48)
        # Construct a point exactly on the left plane, 2 m out along the
        # plane: project the left edge ray and scale it.
        left_ray = project_pixel((0.0, INTR.cy), 1.0, INTR, pose)
        on_plane = 2.0 * left_ray
        rel = on_plane - fr.origins
        dots = np.einsum("pk,pk->p", rel, fr.normals)
        assert math.isclose(min(np.abs(dots)), 0.0, abs_tol=1e-12)
        assert not is_visible(on_plane, fr)

    def test_rotated_pose_tracks_heading(self):
        pose = WorldPose.from_heading(np.zeros(3), math.pi / 2.0)
        fr = CameraFrustum.from_pose(pose, INTR, 64, 48)
        assert is_visible(np.array([1.0, 0.0, 0.0]), fr)
        assert not is_visible(np.array([0.0, 0.0, 1.0]), fr)


class TestIngest:
    def test_far_pixels_not_incremented(self):
        grid = OccupancyGrid3D()
        img = make_image(np.full((48, 64), 4.0))
        grid.ingest_depth(img, WorldPose.identity())
        assert len(grid) == 0

    def test_low_confidence_not_incremented(self):
        grid = OccupancyGrid3D()
        img = make_image(np.full((48, 64), 2.0), np.full((48, 64), 0.5))
        grid.ingest_depth(img, WorldPose.identity())
        assert len(grid) == 0  # confidence must be strictly > 0.5

    def test_single_pixel_increments_containing_cell(self):
        grid = OccupancyGrid3D()
        pose = WorldPose.identity()
        img = single_pixel_image(int(INTR.cx), int(INTR.cy), 2.0)
        grid.ingest_depth(img, pose)
        world = project_pixel(
            (int(INTR.cx), int(INTR.cy)), 2.0, INTR, pose
        )
        assert grid.score(grid.cell_index(world)) == 1.0

    def test_decay_law_for_visible_unobserved_cell(self):
        grid = OccupancyGrid3D()
        pose = WorldPose.identity()
        hit = single_pixel_image(int(INTR.cx), int(INTR.cy), 2.0)
        empty = make_image(np.full((48, 64), 10.0), np.zeros((48, 64)))
        grid.ingest_depth(hit, pose)
        world = project_pixel((int(INTR.cx), int(INTR.cy)), 2.0, INTR, pose)
        key = grid.cell_index(world)
        for k in range(1, 51):
            grid.ingest_depth(empty, pose)
            expected = DECAY**k
            assert abs(grid.score(key) - expected) <= 1e-9 * expected

    def test_cells_outside_frustum_never_decay(self):
        grid = OccupancyGrid3D()
        pose = WorldPose.identity()
        behind = (-3, 5, -20)  # behind the camera
        grid.set_score(behind, 7.25)
        empty = make_image(np.full((48, 64), 10.0), np.zeros((48, 64)))
        for _ in range(20):
            grid.ingest_depth(empty, pose)
        assert grid.score(behind) == 7.25

    def test_continuous_observation_converges_to_ten(self):
        grid = OccupancyGrid3D()
        pose = WorldPose.identity()
        img = single_pixel_image(int(INTR.cx), int(INTR.cy), 2.0)
        world = project_pixel((int(INTR.cx), int(INTR.cy)), 2.0, INTR, pose)
        key = grid.cell_index(world)
        for _ in range(200):
            grid.ingest_depth(img, pose)
        assert grid.score(key) == pytest.approx(1.0 / (1.0 - DECAY), abs=1e-6)

    def test_pruning_beyond_five_meters(self):
        grid = OccupancyGrid3D()
        near_key = grid.cell_index(np.array([0.0, 0.0, 2.0]))
        far_key = grid.cell_index(np.array([0.0, 0.0, 5.5]))
        edge_key = grid.cell_index(np.array([0.0, 0.0, 4.9]))
        for k in (near_key, far_key, edge_key):
            grid.set_score(k, 5.0)
        empty = make_image(np.full((48, 64), 10.0), np.zeros((48, 64)))
        grid.ingest_depth(empty, WorldPose.identity())
        assert grid.score(far_key) == 0.0  # pruned
        assert grid.score(near_key) > 0.0
        assert grid.score(edge_key) > 0.0
        # Pruning keys off the grid entirely, not just zeroing them.
        assert far_key not in grid.cells

    def test_memory_bounded_by_prune_slab(self):
        grid = OccupancyGrid3D()
        rng = np.random.default_rng(3)
        pose = WorldPose.identity()
        for _ in range(30):
            depth = rng.uniform(0.5, 3.9, (48, 64))
            grid.ingest_depth(make_image(depth), pose)
        # Horizontal disk of radius 5 m plus one cell of slop, times the
        # vertical extent reachable from a 4 m range sensor.
        r_cells = (PRUNE_RADIUS + CELL_SIZE) / CELL_SIZE
        height_cells = 2.0 * 4.0 / CELL_SIZE + 2.0
        bound = math.pi * r_cells**2 * height_cells
        assert len(grid) <= bound

    def test_determinism_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            grid = OccupancyGrid3D()
            for i in range(10):
                depth = rng.uniform(0.5, 6.0, (48, 64))
                conf = (rng.random((48, 64)) > 0.3).astype(float)
                pose = WorldPose.from_heading(
                    np.array([0.1 * i, 0.0, 0.05 * i]), 0.02 * i
                )
                grid.ingest_depth(make_image(depth, conf), pose)
            return grid.cells

        a, b = run(), run()
        assert a == b  # exact float equality, not approx


class TestEstimateGround:
    def test_single_cell_below(self):
        grid = OccupancyGrid3D()
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        key = grid.cell_index(np.array([0.1, -1.6, 0.0]))
        grid.set_score(key, 5.0)
        center_y = grid.cell_centers(np.array([key]))[0][1]
        assert grid.estimate_ground(pose) == pytest.approx(center_y)

    def test_mean_of_two_qualifying_cells(self):
        grid = OccupancyGrid3D()
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        k1 = grid.cell_index(np.array([0.05, -1.55, 0.05]))
        k2 = grid.cell_index(np.array([0.05, -1.65, 0.05]))
        grid.set_score(k1, 5.0)
        grid.set_score(k2, 5.0)
        c1 = grid.cell_centers(np.array([k1]))[0][1]
        c2 = grid.cell_centers(np.array([k2]))[0][1]
        assert grid.estimate_ground(pose) == pytest.approx((c1 + c2) / 2.0)
        assert grid.estimate_ground(pose) == pytest.approx(-1.6)

    def test_cells_above_phone_do_not_count(self):
        grid = OccupancyGrid3D()
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        grid.set_score(grid.cell_index(np.array([0.1, 1.0, 0.0])), 5.0)
        assert grid.estimate_ground(pose) is None

    def test_horizontally_distant_cells_do_not_count(self):
        grid = OccupancyGrid3D()
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        grid.set_score(grid.cell_index(np.array([1.0, -1.6, 0.0])), 5.0)
        assert grid.estimate_ground(pose) is None

    def test_subthreshold_cells_do_not_count(self):
        grid = OccupancyGrid3D(occupied_threshold=3.0)
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        grid.set_score(grid.cell_index(np.array([0.1, -1.6, 0.0])), 2.0)
        assert grid.estimate_ground(pose) is None


class TestWorldPose:
    def test_identity_defaults(self):
        pose = WorldPose.identity()
        assert np.allclose(pose.position, 0.0)
        assert np.allclose(pose.rotation, np.eye(3))

    def test_heading_rotation_is_proper(self):
        for h in np.linspace(-3.0, 3.0, 7):
            for p in np.linspace(-0.6, 0.6, 5):
                r = heading_rotation(float(h), float(p))
                assert np.linalg.det(r) == pytest.approx(1.0)
                assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)

    def test_improper_rotation_rejected(self):
        bad = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            WorldPose(position=np.zeros(3), rotation=bad)

    def test_forward_vector(self):
        pose = WorldPose.from_heading(np.zeros(3), math.pi / 2.0)
        assert np.allclose(pose.forward(), [1.0, 0.0, 0.0], atol=1e-12)


class TestDepthImageValidation:
    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ValueError):
            DepthImage(
                depth=np.zeros((4, 4)),
                confidence=np.zeros((4, 5)),
                intrinsics=INTR,
            )

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            make_image(np.full((4, 4), -1.0))

    def test_confidence_range_enforced(self):
        with pytest.raises(ValueError):
            make_image(np.ones((4, 4)), np.full((4, 4), 1.5))

    def test_default_dimensions(self):
        assert DepthImage.DEFAULT_WIDTH == 256
        assert DepthImage.DEFAULT_HEIGHT == 192
