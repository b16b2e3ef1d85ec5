import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidar_forge import SensorModel, build_range_index, project, to_spherical
from lidar_forge.sensor import (
    CellIndex,
    DegeneratePointError,
    SphericalPoint,
    column_of_azimuth,
    project_cloud,
)
from lidar_forge.synth import spherical_to_cartesian

from helpers import sensor_shape
from oracles import cell_of_point, point_range


class TestSensorModel:
    def test_default_grid(self, sensor):
        assert sensor.num_beams == 64
        assert sensor.num_columns == 2048
        assert sensor.azimuth_resolution == pytest.approx(2 * math.pi / 2048)
        assert sensor.cell_count == 64 * 2048

    def test_rejects_odd_column_count(self):
        with pytest.raises(ValueError):
            SensorModel(num_columns=2047)

    def test_rejects_inverted_fov(self):
        with pytest.raises(ValueError):
            SensorModel(fov_up=math.radians(-25.0), fov_down=math.radians(3.0))


class TestToSpherical:
    def test_345_triangle(self):
        sp = to_spherical((3.0, 4.0, 0.0))
        assert sp.range == 5.0
        assert sp.azimuth == math.atan2(4.0, 3.0)
        assert sp.elevation == 0.0

    def test_straight_up(self):
        sp = to_spherical((0.0, 0.0, 2.0))
        assert sp.range == 2.0
        assert sp.elevation == math.pi / 2

    def test_origin_has_no_direction(self):
        with pytest.raises(DegeneratePointError):
            to_spherical((0.0, 0.0, 0.0))

    def test_nonfinite_has_no_direction(self):
        with pytest.raises(DegeneratePointError):
            to_spherical((float("nan"), 1.0, 0.0))
        with pytest.raises(DegeneratePointError):
            to_spherical((float("inf"), 0.0, 0.0))


class TestProject:
    def test_forward_level_point(self, sensor):
        # Azimuth 0, elevation 0: the middle column, and with the default
        # +3/-25 degree window the level beam sits on row 6.
        assert project(SphericalPoint(10.0, 0.0, 0.0), sensor) == CellIndex(6, 1024)

    def test_sweep_start_is_column_zero(self, sensor):
        assert project(SphericalPoint(10.0, math.pi, 0.0), sensor).col == 0

    def test_just_before_sweep_start_is_last_column(self, sensor):
        assert project(SphericalPoint(10.0, -math.pi + 1e-9, 0.0), sensor).col == 2047

    def test_top_beam(self, sensor):
        assert project(SphericalPoint(10.0, 0.0, sensor.fov_up), sensor).row == 0

    def test_bottom_beam_clamps(self, sensor):
        assert project(SphericalPoint(10.0, 0.0, sensor.fov_down), sensor).row == 63

    def test_outside_fov_is_none(self, sensor):
        assert project(SphericalPoint(10.0, 0.0, sensor.fov_up + 1e-6), sensor) is None
        assert project(SphericalPoint(10.0, 0.0, sensor.fov_down - 1e-6), sensor) is None

    def test_matches_reference_on_random_directions(self, sensor, rng):
        r = rng.uniform(0.5, 80.0, 3000)
        az = rng.uniform(-math.pi, math.pi, 3000)
        el = rng.uniform(sensor.fov_down - 0.1, sensor.fov_up + 0.1, 3000)
        xyz = spherical_to_cartesian(r, az, el)
        shape = sensor_shape(sensor)
        for p in xyz:
            expected = cell_of_point(p[0], p[1], p[2], *shape)
            got = project(to_spherical(p), sensor)
            assert (None if got is None else tuple(got)) == expected


@given(az=st.floats(min_value=-math.pi, max_value=math.pi, exclude_min=True))
def test_column_of_azimuth_in_range(az):
    sensor = SensorModel()
    col = int(column_of_azimuth(np.array([az]), sensor)[0])
    assert 0 <= col < sensor.num_columns


@given(
    az1=st.floats(min_value=-math.pi, max_value=math.pi, exclude_min=True),
    az2=st.floats(min_value=-math.pi, max_value=math.pi, exclude_min=True),
)
def test_columns_decrease_with_azimuth(az1, az2):
    sensor = SensorModel()
    lo, hi = sorted((az1, az2))
    cols = column_of_azimuth(np.array([lo, hi]), sensor)
    assert cols[0] >= cols[1]


class TestProjectCloud:
    def test_matches_scalar_reference_pointwise(self, sensor, rng):
        # A big mixed batch: points straddling the elevation window plus
        # planted degenerates, checked against the scalar reference one
        # point at a time.
        n = 120_000
        r = rng.uniform(0.5, 80.0, n)
        az = rng.uniform(-math.pi, math.pi, n)
        el = rng.uniform(sensor.fov_down - 0.08, sensor.fov_up + 0.08, n)
        xyz = spherical_to_cartesian(r, az, el)
        xyz[::997] = 0.0
        xyz[5::1999, 0] = np.nan
        xyz[7::1499, 1] = np.inf

        proj = project_cloud(xyz, sensor)
        shape = sensor_shape(sensor)
        mismatches = 0
        for i in range(n):
            expected = cell_of_point(xyz[i, 0], xyz[i, 1], xyz[i, 2], *shape)
            if expected is None:
                if proj.in_view[i]:
                    mismatches += 1
            elif (not proj.in_view[i]) or (proj.rows[i], proj.cols[i]) != expected:
                mismatches += 1
        assert mismatches == 0

    def test_rejects_wrong_shape(self, sensor):
        with pytest.raises(ValueError):
            project_cloud(np.zeros((4, 2)), sensor)


class TestRangeIndex:
    def test_entries_sorted_by_cell_then_range(self, small_sensor, rng):
        xyz = spherical_to_cartesian(
            rng.uniform(1.0, 50.0, 4000),
            rng.uniform(-math.pi, math.pi, 4000),
            rng.uniform(small_sensor.fov_down, small_sensor.fov_up, 4000),
        )
        index = build_range_index(xyz, small_sensor, "t")
        cells = index.cell_ids
        assert (np.diff(cells) >= 0).all()
        same = np.flatnonzero(np.diff(cells) == 0)
        assert (index.ranges[same + 1] >= index.ranges[same]).all()

    def test_every_point_accounted_for(self, small_sensor, rng):
        xyz = rng.normal(0.0, 20.0, (500, 3))
        index = build_range_index(xyz, small_sensor, "t")
        seen = np.concatenate([index.ordinals, index.out_of_view])
        assert sorted(seen) == list(range(500))

    def test_cell_entries_match_brute_force(self, small_sensor, rng):
        xyz = spherical_to_cartesian(
            rng.uniform(1.0, 50.0, 800),
            rng.uniform(-math.pi, math.pi, 800),
            rng.uniform(small_sensor.fov_down, small_sensor.fov_up, 800),
        )
        index = build_range_index(xyz, small_sensor, "t")
        shape = sensor_shape(small_sensor)
        table = {}
        for i, p in enumerate(xyz):
            cell = cell_of_point(p[0], p[1], p[2], *shape)
            assert cell is not None
            table.setdefault(cell, []).append((i, point_range(p)))
        for (row, col), entries in table.items():
            entries.sort(key=lambda e: (e[1], e[0]))
            assert index.cell_entries(row, col) == entries

    def test_min_range_grid_matches_brute_force(self, small_sensor, rng):
        xyz = spherical_to_cartesian(
            rng.uniform(1.0, 50.0, 1500),
            rng.uniform(-math.pi, math.pi, 1500),
            rng.uniform(small_sensor.fov_down, small_sensor.fov_up, 1500),
        )
        index = build_range_index(xyz, small_sensor, "t")
        grid = index.min_range_grid()
        expected = np.full(small_sensor.cell_count, np.inf)
        for cell, rng_val in zip(index.cell_ids, index.ranges):
            expected[cell] = min(expected[cell], rng_val)
        assert np.array_equal(grid, expected)

    def test_empty_cloud_gives_empty_index(self, sensor):
        index = build_range_index(np.zeros((0, 3)), sensor, "empty")
        assert index.entry_count == 0
        assert index.occupied_cell_count() == 0
        assert np.isinf(index.min_range_grid()).all()

    def test_rebuild_is_identical(self, small_sensor, rng):
        xyz = rng.normal(0.0, 15.0, (600, 3))
        a = build_range_index(xyz, small_sensor, "t")
        b = build_range_index(xyz, small_sensor, "t")
        assert np.array_equal(a.ordinals, b.ordinals)
        assert np.array_equal(a.ranges, b.ranges)
        assert np.array_equal(a.out_of_view, b.out_of_view)
