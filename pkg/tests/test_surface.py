"""Tests for the walkability grid, line casts, and path direction."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wayguide.occupancy import Intrinsics, WorldPose
from wayguide.surface import (
    DEFAULT_WALKABLE,
    MAX_CAST_LENGTH,
    SegmentationFrame,
    SurfaceClass,
    SurfaceGrid2D,
    cast_walkable_line,
    path_candidates,
    path_direction,
    update_surface,
)

INTR = Intrinsics.for_image(120, 120, fov_x_deg=60.0)


def walkable_strip(grid, angle_deg, length=12.0, half_width=0.6, origin=(0.0, 0.0)):
    """Rasterize a walkable strip from origin along a world heading."""
    rad = math.radians(angle_deg)
    d = (math.sin(rad), math.cos(rad))
    n = (d[1], -d[0])
    cs = grid.cell_size
    for i in range(-120, 121):
        for k in range(-120, 121):
            x = (i + 0.5) * cs - origin[0]
            z = (k + 0.5) * cs - origin[1]
            along = x * d[0] + z * d[1]
            across = x * n[0] + z * n[1]
            if -0.4 <= along <= length and abs(across) <= half_width:
                grid.cells[(i, k)] = True


class TestUpdateSurface:
    def make_frame(self, labels, position=(0.0, 1.5, 0.0), pitch=math.radians(30)):
        pose = WorldPose.from_heading(np.array(position), 0.0, pitch)
        return SegmentationFrame(labels=labels, pose=pose, intrinsics=INTR)

    def test_cell_behind_user_unchanged(self):
        grid = SurfaceGrid2D()
        labels = np.full((120, 120), SurfaceClass.SIDEWALK, dtype=np.uint8)
        # Camera looks backwards over the user's shoulder; cells behind the
        # user project fine but must stay unknown.
        back_pose = WorldPose.from_heading(
            np.array([0.0, 1.5, 0.0]), math.pi, math.radians(30)
        )
        frame = SegmentationFrame(labels=labels, pose=back_pose, intrinsics=INTR)
        user = WorldPose.from_heading(np.zeros(3), 0.0)
        update_surface(grid, frame, user)
        behind = grid.cell_of(0.0, -3.0)
        assert behind not in grid.cells

    def test_cell_outside_image_unchanged(self):
        grid = SurfaceGrid2D()
        # Narrow FOV straight down the middle: cells far to the side of the
        # footprint project outside the image and stay unknown.
        labels = np.full((120, 120), SurfaceClass.SIDEWALK, dtype=np.uint8)
        frame = self.make_frame(labels)
        user = WorldPose.identity()
        update_surface(grid, frame, user)
        side = grid.cell_of(10.0, 3.0)  # ~73 deg off-axis at 3 m out
        assert side not in grid.cells

    def test_pitched_projection_against_pixel_oracle(self):
        user = WorldPose.identity()
        cell = (0, 15)  # center (0.1, 3.1), about 3 m ahead on the ground
        cx, cz = (cell[0] + 0.5) * 0.2, (cell[1] + 0.5) * 0.2

        # Independent pinhole oracle: camera 1.5 m up, pitched 30 deg down.
        pitch = math.radians(30.0)
        rel = np.array([cx, 0.0 - 1.5, cz])
        up = np.array([0.0, math.cos(pitch), math.sin(pitch)])
        optical = np.array([0.0, -math.sin(pitch), math.cos(pitch)])
        right = np.array([1.0, 0.0, 0.0])
        cam = np.array([rel @ right, rel @ up, rel @ optical])
        u = int(round(INTR.cx + INTR.fx * cam[0] / cam[2]))
        v = int(round(INTR.cy - INTR.fy * cam[1] / cam[2]))
        assert 0 <= u < 120 and 0 <= v < 120

        # All-sidewalk frame marks the cell walkable.
        grid = SurfaceGrid2D()
        labels = np.full((120, 120), SurfaceClass.SIDEWALK, dtype=np.uint8)
        update_surface(grid, self.make_frame(labels), user)
        assert grid.cells[cell] is True

        # Poisoning exactly the oracle pixel flips exactly that cell.
        grid2 = SurfaceGrid2D()
        labels2 = labels.copy()
        labels2[v, u] = SurfaceClass.ROAD
        update_surface(grid2, self.make_frame(labels2), user)
        assert grid2.cells[cell] is False

    def test_beyond_range_unchanged(self):
        grid = SurfaceGrid2D()
        labels = np.full((120, 120), SurfaceClass.SIDEWALK, dtype=np.uint8)
        # Nearly level camera sees far ground, but 15 m is the cap.
        frame = self.make_frame(labels, pitch=math.radians(4.0))
        update_surface(grid, frame, WorldPose.identity())
        far = grid.cell_of(0.0, 18.0)
        assert far not in grid.cells

    def test_idempotent_for_identical_frame(self):
        grid = SurfaceGrid2D()
        labels = np.full((120, 120), SurfaceClass.SIDEWALK, dtype=np.uint8)
        labels[60:, :] = SurfaceClass.ROAD
        frame = self.make_frame(labels)
        user = WorldPose.identity()
        update_surface(grid, frame, user)
        first = dict(grid.cells)
        update_surface(grid, frame, user)
        assert grid.cells == first

    def test_walkable_class_set(self):
        assert SurfaceClass.SIDEWALK in DEFAULT_WALKABLE
        assert SurfaceClass.PLAIN_CROSSWALK in DEFAULT_WALKABLE
        assert SurfaceClass.ZEBRA_CROSSWALK in DEFAULT_WALKABLE
        assert SurfaceClass.CURB_CUT in DEFAULT_WALKABLE
        assert SurfaceClass.COVERING in DEFAULT_WALKABLE
        for blocked in (
            SurfaceClass.ROAD,
            SurfaceClass.CURB,
            SurfaceClass.TERRAIN,
            SurfaceClass.NON_SURFACE,
        ):
            assert blocked not in DEFAULT_WALKABLE

    def test_pruning_keeps_query_disk(self):
        grid = SurfaceGrid2D()
        walkable_strip(grid, 0.0, length=12.0)
        grid.cells[(200, 200)] = True  # 40 m away, prunable
        before = cast_walkable_line(grid, (0.1, 0.0), 0.0)
        grid.prune(np.array([0.0, 0.0, 0.0]))
        assert (200, 200) not in grid.cells
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == before


class TestCastWalkableLine:
    def test_fully_walkable_run(self):
        grid = SurfaceGrid2D()
        for k in range(0, 50):
            grid.cells[(0, k)] = True
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == pytest.approx(10.0)

    def test_two_cell_hole_is_crossed(self):
        grid = SurfaceGrid2D()
        for k in range(0, 100):
            grid.cells[(0, k)] = True
        grid.cells[(0, 15)] = False
        grid.cells[(0, 16)] = False  # 0.4 m hole starting at 3 m
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == pytest.approx(
            MAX_CAST_LENGTH
        )

    def test_three_cell_hole_is_crossed(self):
        grid = SurfaceGrid2D()
        for k in range(0, 100):
            grid.cells[(0, k)] = True
        for k in (15, 16, 17):
            grid.cells[(0, k)] = False
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == pytest.approx(
            MAX_CAST_LENGTH
        )

    def test_four_cell_hole_stops_at_three_meters(self):
        grid = SurfaceGrid2D()
        for k in range(0, 100):
            grid.cells[(0, k)] = True
        for k in (15, 16, 17, 18):
            grid.cells[(0, k)] = False
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == pytest.approx(3.0)

    def test_unknown_cells_block_like_non_walkable(self):
        grid = SurfaceGrid2D()
        for k in range(0, 15):
            grid.cells[(0, k)] = True
        # Nothing observed past 3 m: unknown cells end the cast there.
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == pytest.approx(3.0)

    def test_cap_respected(self):
        grid = SurfaceGrid2D()
        for k in range(0, 200):
            grid.cells[(0, k)] = True
        assert cast_walkable_line(grid, (0.1, 0.0), 0.0) == MAX_CAST_LENGTH


class TestPathDirection:
    def test_fully_walkable_gives_target(self):
        # Walkable out past the cast cap in every direction: all 181 lines
        # tie at the cap and the tie breaks toward the target itself.
        grid = SurfaceGrid2D()
        for i in range(-105, 106):
            for k in range(-105, 106):
                grid.cells[(i, k)] = True
        pose = WorldPose.identity()
        target = 0.3
        assert path_direction(grid, pose, target) == pytest.approx(target)

    def test_corridor_at_plus_20(self):
        grid = SurfaceGrid2D()
        walkable_strip(grid, 20.0, length=16.0)
        pose = WorldPose.identity()
        got = path_direction(grid, pose, 0.0)
        assert math.degrees(got) == pytest.approx(20.0, abs=2.5)
        # Verify against the candidates the casts actually produced.
        cands = path_candidates(grid, pose, 0.0)
        assert len(cands) == 1
        assert 20 in cands[0].member_angles
        assert cands[0].angle == pytest.approx(20.0, abs=2.5)

    def test_corridor_at_plus_50_is_ignored(self):
        grid = SurfaceGrid2D()
        walkable_strip(grid, 50.0)
        pose = WorldPose.identity()
        target = 0.0
        assert path_direction(grid, pose, target) == target

    def test_empty_grid_gives_target(self):
        grid = SurfaceGrid2D()
        assert path_direction(grid, WorldPose.identity(), 0.7) == 0.7

    def test_deviation_never_exceeds_30_degrees(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            grid = SurfaceGrid2D()
            for _ in range(rng.integers(10, 300)):
                grid.cells[
                    (int(rng.integers(-40, 41)), int(rng.integers(-40, 41)))
                ] = bool(rng.random() < 0.8)
            target = float(rng.uniform(-math.pi, math.pi))
            out = path_direction(grid, WorldPose.identity(), target)
            dev = math.degrees(out - target)
            assert abs(dev) <= 30.0 + 1e-9

    def test_rotation_by_quarter_turn_equivariant(self):
        grid = SurfaceGrid2D()
        walkable_strip(grid, 15.0)
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        out = path_direction(grid, pose, 0.0)

        rotated = SurfaceGrid2D()
        rotated.cells = {(k, -1 - i): w for (i, k), w in grid.cells.items()}
        out_r = path_direction(rotated, pose, math.pi / 2.0)
        assert math.degrees(out_r - out) == pytest.approx(90.0, abs=1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-150.0, 150.0), st.floats(-20.0, 20.0))
    def test_strip_rotation_equivariance(self, strip_deg, target_off):
        grid = SurfaceGrid2D()
        walkable_strip(grid, strip_deg, length=16.0, half_width=0.5)
        pose = WorldPose(position=np.array([0.0, 0.0, 0.0]))
        target = math.radians(strip_deg + target_off)
        out = path_direction(grid, pose, target)
        # The strip is the only walkable surface; steering lands near its
        # axis (when within the 30 degree window) or at the target.
        rel = math.degrees(out - target)
        if abs(target_off) <= 26.0:
            assert abs(math.degrees(out) - strip_deg) <= 3.0
        assert abs(rel) <= 30.0 + 1e-9
