import numpy as np
import pytest

from mesodg import (build_grid, build_cell_space, pattern,
                    bernoulli_conductivity, corrector_source,
                    assemble_operator, assemble_rhs, direct_dg_solve,
                    cg_fem_solve, compare, greedy_solve)
from mesodg.media import SeparatedField
from mesodg.reference import cg_dof_counts, save_solution, load_solution
from mesodg.solver import GreedyConfig


def uniform_field(grid, space):
    return SeparatedField([(np.ones(grid.n_cells), np.ones(space.dim))])


def test_direct_uniform_corrector_is_zero():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((6, 6), (1.0, 1.0))
    cond = uniform_field(grid, space)
    f = corrector_source(cond, space)
    sol = direct_dg_solve(grid, space, cond, f, sigma=30.0)
    assert np.abs(sol.values).max() < 1e-12


def test_direct_periodic_solution_is_rank_one():
    grid = build_grid(4, 4, (1.0, 1.0))
    space = build_cell_space((8, 8), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.0, seed=1)
    f = corrector_source(cond, space)
    sol = direct_dg_solve(grid, space, cond, f, sigma=20.0)
    assert sol.linear_residual <= 1e-10
    sv = np.linalg.svd(sol.as_broken_matrix(), compute_uv=False)
    assert sv[1] <= 1e-8 * sv[0]


def test_cg_dof_counts_match_published_example():
    grid = build_grid(32, 32, (1.0, 1.0))
    space = build_cell_space((20, 20), (1.0, 1.0))
    counts = cg_dof_counts(grid, space)
    assert counts["raw"] == 410881
    assert counts["broken"] == 451584
    assert counts["unique"] == 640 * 640


def test_cg_uniform_corrector_is_zero():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((4, 4), (1.0, 1.0))
    cond = uniform_field(grid, space)
    f = corrector_source(cond, space)
    sol = cg_fem_solve(grid, space, cond, f)
    assert np.abs(sol.values).max() < 1e-12
    assert sol.meta["raw_nodes"] == 13 * 13
    assert sol.meta["unique_nodes"] == 144


def test_compare_identical_is_zero():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((4, 4), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.3, seed=7)
    f = corrector_source(cond, space)
    op = assemble_operator(grid, space, cond, sigma=30.0)
    sol = direct_dg_solve(grid, space, cond, f, sigma=30.0)
    err = compare(sol, sol, op)
    assert err["energy"] == pytest.approx(0.0, abs=1e-14)
    assert err["l2"] == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(ValueError):
        compare(sol, np.zeros((9, space.dim)), op)


def test_greedy_vs_direct_energy_bound():
    grid = build_grid(4, 4, (1.0, 1.0))
    space = build_cell_space((8, 8), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.2, seed=6)
    f = corrector_source(cond, space)
    op = assemble_operator(grid, space, cond, sigma=20.0)
    rhs = assemble_rhs(grid, space, f)
    u, trace = greedy_solve(op, rhs, tol=1e-3, max_rank=16,
                            cfg=GreedyConfig(seed=6))
    assert trace.converged
    direct = direct_dg_solve(grid, space, cond, f, sigma=20.0)
    err = compare(u, direct, op)
    assert err["energy"] <= 1e-3 / (1.0 - np.sqrt(0.5))


def test_cg_injection_is_continuous_and_periodic():
    grid = build_grid(2, 2, (1.0, 1.0))
    space = build_cell_space((4, 4), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.5, seed=3)
    f = corrector_source(cond, space)
    sol = cg_fem_solve(grid, space, cond, f)
    mat = sol.as_broken_matrix()
    right = space.boundary_dofs(1)
    left = space.boundary_dofs(-1)
    for i in range(grid.n_cells):
        j = grid.neighbor(i, 1)
        np.testing.assert_allclose(mat[i, right], mat[j, left],
                                   atol=1e-12)


def test_dg_cg_difference_shrinks_under_refinement():
    diffs = []
    for n_el in (4, 8):
        grid = build_grid(3, 3, (1.0, 1.0))
        space = build_cell_space((n_el, n_el), (1.0, 1.0))
        k1, k2 = pattern("missing_inclusion", space)
        cond = bernoulli_conductivity(grid, k1, k2, p=0.0, seed=1)
        f = corrector_source(cond, space)
        op = assemble_operator(grid, space, cond, sigma=20.0 * n_el / 4.0)
        dg = direct_dg_solve(grid, space, cond, f,
                             sigma=20.0 * n_el / 4.0)
        cg = cg_fem_solve(grid, space, cond, f)
        diffs.append(compare(dg, cg, op)["l2"])
    assert diffs[1] <= diffs[0] / 1.5


def test_direct_svd_consistent_with_greedy_rank():
    grid = build_grid(4, 4, (1.0, 1.0))
    space = build_cell_space((8, 8), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.2, seed=6)
    f = corrector_source(cond, space)
    op = assemble_operator(grid, space, cond, sigma=20.0)
    rhs = assemble_rhs(grid, space, f)
    tol = 1e-3
    u, trace = greedy_solve(op, rhs, tol=tol, max_rank=16,
                            cfg=GreedyConfig(seed=6))
    assert trace.converged
    direct = direct_dg_solve(grid, space, cond, f, sigma=20.0)
    sv = np.linalg.svd(direct.as_broken_matrix(), compute_uv=False)
    r = u.rank
    assert sv[min(r, len(sv) - 1)] <= 10.0 * tol * sv[0]


def test_solution_io_roundtrip(tmp_path):
    grid = build_grid(2, 2, (1.0, 1.0))
    space = build_cell_space((3, 3), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.5, seed=2)
    f = corrector_source(cond, space)
    sol = direct_dg_solve(grid, space, cond, f, sigma=15.0)
    path = tmp_path / "solution.txt"
    save_solution(path, sol)
    meta, values = load_solution(path)
    assert meta["kind"] == "dg_broken"
    assert meta["n_cells"] == 4
    np.testing.assert_allclose(values, sol.values, rtol=1e-15)


def test_direct_dof_guard():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((4, 4), (1.0, 1.0))
    cond = uniform_field(grid, space)
    f = corrector_source(cond, space)
    with pytest.raises(ValueError):
        direct_dg_solve(grid, space, cond, f, sigma=10.0, max_dofs=5)
