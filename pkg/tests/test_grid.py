import numpy as np
import pytest
import scipy.sparse as sp

from mesodg import build_grid, chi_matrix, row_sum_diag
from mesodg.grid import ORIENTATIONS


def brute_force_adjacency(grid):
    """Count (cell, orientation) incidences geometric-face by face."""
    incident = {i: 0 for i in range(grid.n_cells)}
    for f in grid.faces:
        incident[f.i] += 1
        incident[f.j] += 1
    return incident


def test_5x1_face_counts():
    grid = build_grid(5, 1, (1.0, 5.0))
    assert grid.n_cells == 5
    assert len(grid.faces) == 10
    horizontal = [f for f in grid.faces if abs(f.q) == 1]
    vertical = [f for f in grid.faces if abs(f.q) == 2]
    assert len(horizontal) == 5
    assert len(vertical) == 5
    assert all(f.i == f.j for f in vertical)          # self-wrapped row
    assert all(f.measure == 5.0 for f in horizontal)
    assert all(f.measure == 1.0 for f in vertical)


def test_1x1_grid_self_wraps():
    grid = build_grid(1, 1, (1.0, 1.0))
    assert grid.n_cells == 1
    assert len(grid.faces) == 2
    assert all(f.i == 0 and f.j == 0 and f.is_wrapped for f in grid.faces)


def test_3x3_brute_force_adjacency():
    grid = build_grid(3, 3, (1.0, 1.0))
    assert grid.n_cells == 9
    assert len(grid.faces) == 18
    incident = brute_force_adjacency(grid)
    assert all(count == 4 for count in incident.values())


def test_every_linear_index_maps_once():
    grid = build_grid(4, 3, (1.0, 1.0))
    seen = {grid.cell_index(*grid.cell_coords(i)) for i in range(12)}
    assert seen == set(range(12))


def test_build_grid_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_grid(0, 1, (1.0, 1.0))
    with pytest.raises(ValueError):
        build_grid(1, -2, (1.0, 1.0))
    with pytest.raises(ValueError):
        build_grid(2, 2, (0.0, 1.0))


def test_chi_permutation_on_3_ring():
    grid = build_grid(3, 1, (1.0, 1.0))
    chi = chi_matrix(grid, 1, lambda i, j: 1.0)
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 2] = expected[2, 0] = 1.0
    np.testing.assert_allclose(chi.toarray(), expected)


def test_chi_zero_weight():
    grid = build_grid(3, 2, (1.0, 1.0))
    chi = chi_matrix(grid, -2, lambda i, j: 0.0)
    assert chi.nnz == 0 or np.all(chi.data == 0)


def test_chi_self_wrap_single_cell():
    grid = build_grid(1, 1, (1.0, 1.0))
    chi = chi_matrix(grid, 1, lambda i, j: 4.5)
    np.testing.assert_allclose(chi.toarray(), [[4.5]])


def test_chi_one_nonzero_per_row():
    grid = build_grid(4, 5, (1.0, 2.0))
    for q in ORIENTATIONS:
        chi = chi_matrix(grid, q, lambda i, j: 1.0)
        counts = np.diff(chi.tocsr().indptr)
        assert np.all(counts == 1)
        assert np.all(chi.data == 1.0)


def test_chi_transpose_relation():
    grid = build_grid(4, 3, (1.0, 1.0))
    weight = lambda i, j: 1.0 + 3.0 * i + 0.5 * j
    for q in (1, 2):
        chi = chi_matrix(grid, q, weight)
        chi_rev = chi_matrix(grid, -q, lambda i, j: weight(j, i))
        assert (chi.T != chi_rev).nnz == 0


def test_chi_sum_is_periodic_adjacency():
    grid = build_grid(3, 4, (1.0, 1.0))
    total = sum(chi_matrix(grid, q, lambda i, j: 1.0)
                for q in ORIENTATIONS)
    rows = np.asarray(total.sum(axis=1)).ravel()
    np.testing.assert_allclose(rows, 4.0)


def test_row_sum_diag():
    eye = sp.identity(4, format="csr")
    assert (row_sum_diag(eye) != eye).nnz == 0

    grid = build_grid(3, 1, (1.0, 1.0))
    chi = chi_matrix(grid, 1, lambda i, j: 1.0)
    np.testing.assert_allclose(row_sum_diag(chi).toarray(), np.eye(3))

    zero = sp.csr_matrix((3, 3))
    assert row_sum_diag(zero).nnz == 0

    with pytest.raises(ValueError):
        row_sum_diag(sp.csr_matrix((2, 3)))
