import numpy as np
import pytest

from prefgeo import (DomainError, InvalidRegionError, SpatialGrid,
                     bin_locations, build_grid)

UNIT = (0.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("nx,ny,N", [(15, 15, 225), (20, 20, 400), (30, 30, 900)])
def test_unit_square_cell_counts(nx, ny, N):
    g = build_grid(UNIT, nx, ny)
    assert g.n_cells == N
    assert g.cell_area == pytest.approx(1.0 / N, rel=1e-15)


def test_centroids_row_major_order():
    g = build_grid(UNIT, 3, 2)
    expect = np.array([[1 / 6, 1 / 4], [3 / 6, 1 / 4], [5 / 6, 1 / 4],
                       [1 / 6, 3 / 4], [3 / 6, 3 / 4], [5 / 6, 3 / 4]])
    np.testing.assert_allclose(g.centroids, expect)


def test_centroids_strictly_inside_and_distinct():
    g = build_grid((-2.0, 3.0, 1.0, 4.0), 7, 5)
    c = g.centroids
    assert (c[:, 0] > g.x_min).all() and (c[:, 0] < g.x_max).all()
    assert (c[:, 1] > g.y_min).all() and (c[:, 1] < g.y_max).all()
    assert len({tuple(p) for p in c}) == g.n_cells


@pytest.mark.parametrize("bounds", [(0, 0, 0, 1), (0, 1, 1, 1), (1, 0, 0, 1)])
def test_degenerate_bounds_rejected(bounds):
    with pytest.raises(InvalidRegionError):
        build_grid(bounds, 4, 4)


def test_bad_cell_counts_rejected():
    with pytest.raises(InvalidRegionError):
        build_grid(UNIT, 0, 3)


def test_halfopen_membership_center_point():
    g = build_grid(UNIT, 2, 2)
    b = bin_locations(g, np.array([[0.5, 0.5]]))
    # (0.5, 0.5) is the shared corner; half-open intervals put it top-right
    assert b.cell_of[0] == 3


def test_boundary_points_belong_to_last_cells():
    g = build_grid(UNIT, 4, 4)
    b = bin_locations(g, np.array([[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]))
    assert b.cell_of[0] == 15
    assert b.cell_of[1] == 3
    assert b.cell_of[2] == 12


def test_all_points_in_one_cell():
    g = build_grid(UNIT, 5, 5)
    pts = np.full((9, 2), 0.05)
    b = bin_locations(g, pts)
    assert b.counts[0] == 9
    assert b.counts.sum() == 9
    assert (b.counts[1:] == 0).all()


def test_uniform_points_counts_sum():
    # oracle: the counts must total the number of inputs
    rng = np.random.default_rng(0)
    g = build_grid(UNIT, 15, 15)
    pts = rng.random((100, 2))
    b = bin_locations(g, pts)
    assert b.counts.sum() == 100
    direct = np.zeros(g.n_cells, dtype=int)
    for p in pts:
        ix = min(int(p[0] // g.dx), g.nx - 1)
        iy = min(int(p[1] // g.dy), g.ny - 1)
        direct[iy * g.nx + ix] += 1
    np.testing.assert_array_equal(b.counts, direct)


def test_centroids_bin_to_their_own_cell():
    g = build_grid((-1.0, 2.0, 0.5, 2.5), 6, 4)
    b = bin_locations(g, g.centroids)
    np.testing.assert_array_equal(b.cell_of, np.arange(g.n_cells))


def test_out_of_region_names_offending_index():
    g = build_grid(UNIT, 3, 3)
    with pytest.raises(DomainError, match="location 2"):
        bin_locations(g, np.array([[0.5, 0.5], [0.1, 0.1], [1.5, 0.5]]))


def test_json_round_trip():
    g = build_grid((0.0, 2.0, -1.0, 1.0), 8, 9)
    g2 = SpatialGrid.from_json(g.to_json())
    assert g2 == g
    np.testing.assert_allclose(g2.centroids, g.centroids)


class TestInclusionMask:
    def test_masked_grid_shrinks_n(self):
        g = build_grid(UNIT, 3, 3, include=(0, 1, 2, 4, 8))
        assert g.n_cells == 5
        assert g.cell_area == pytest.approx(1.0 / 9)

    def test_masked_binning_maps_to_active_indices(self):
        g = build_grid(UNIT, 3, 3, include=(0, 4, 8))
        b = bin_locations(g, g.centroids)
        np.testing.assert_array_equal(b.cell_of, [0, 1, 2])

    def test_location_in_excluded_cell_rejected(self):
        g = build_grid(UNIT, 3, 3, include=(0, 4, 8))
        with pytest.raises(DomainError, match="excluded"):
            bin_locations(g, np.array([[0.5, 0.05]]))

    def test_mask_json_round_trip(self):
        g = build_grid(UNIT, 3, 3, include=(1, 3, 5))
        assert SpatialGrid.from_json(g.to_json()) == g

    def test_empty_mask_rejected(self):
        with pytest.raises(InvalidRegionError):
            build_grid(UNIT, 3, 3, include=())
