import numpy as np
import pytest
import scipy.sparse as sp

from mesodg import (build_grid, build_cell_space, pattern,
                    bernoulli_conductivity, cell_bounds, compute_weights,
                    sigma_lower_bound, assemble_operator, assemble_rhs,
                    monolithic_assemble, energy_norm, corrector_source,
                    uniform_source)
from mesodg.cell import max_trace_constant, load_vector
from mesodg.media import SeparatedField
from mesodg.operator import dump_operator


@pytest.fixture(scope="module")
def small_case():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((4, 4), (1.0, 1.0))
    k1, k2 = pattern("missing_inclusion", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.3, seed=7)
    return grid, space, cond


def uniform_field(grid, space, value=1.0):
    return SeparatedField([(np.ones(grid.n_cells),
                            np.full(space.dim, value))])


def test_weights_formulas():
    grid = build_grid(2, 1, (1.0, 1.0))
    space = build_cell_space((2, 2), (1.0, 1.0))
    # two cells with bounds 100 and 1
    k = SeparatedField([(np.array([1.0, 0.0]), np.full(space.dim, 100.0)),
                        (np.array([0.0, 1.0]), np.ones(space.dim))])
    w = compute_weights(grid, cell_bounds(k))
    mixed = [idx for idx, f in enumerate(grid.faces) if f.i != f.j
             and abs(f.q) == 1]
    for idx in mixed:
        assert w.omega[idx] == pytest.approx(200.0 / 101.0)
        assert {round(w.beta_i[idx], 10), round(w.beta_j[idx], 10)} == \
            {round(100.0 / 101.0, 10), round(1.0 / 101.0, 10)}
    np.testing.assert_allclose(w.beta_i + w.beta_j, 1.0)
    assert w.beta_max == pytest.approx(100.0 / 101.0)


def test_weights_uniform_and_bounds_property():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((2, 2), (1.0, 1.0))
    c = 3.7
    w = compute_weights(grid, cell_bounds(uniform_field(grid, space, c)))
    np.testing.assert_allclose(w.omega, c)
    np.testing.assert_allclose(w.beta_i, 0.5)
    assert w.omega_min == pytest.approx(c)
    # harmonic-mean bounds on a random-bounds medium
    rng = np.random.default_rng(1)
    vals = 1.0 + 9.0 * rng.random(9)
    k = SeparatedField([(vals, np.ones(space.dim))])
    w = compute_weights(grid, cell_bounds(k))
    kp = vals
    for idx, f in enumerate(grid.faces):
        lo = min(kp[f.i], kp[f.j])
        assert lo <= w.omega[idx] <= 2 * lo + 1e-12


def test_sigma_lower_bound_values():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((2, 2), (1.0, 1.0))
    w = compute_weights(grid, cell_bounds(uniform_field(grid, space)))
    s = sigma_lower_bound(7.0, w)
    assert s == pytest.approx(49.0 * 0.25 * 4.0)
    assert sigma_lower_bound(14.0, w) == pytest.approx(4.0 * s)


def test_operator_term_count(small_case):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=50.0)
    assert cond.rank == 2
    assert op.n_terms <= 43      # r_K (1 + 8d) + 4d + 1 in 2D


def test_operator_symmetry(small_case):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=50.0)
    a = op.expand()
    assert np.abs(a - a.T).max() <= 1e-12 * np.abs(a).max()


@pytest.mark.parametrize("m_variant", ["mean_penalty", "cell_mass"])
def test_oracle_equivalence(small_case, m_variant):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=80.0,
                           m_variant=m_variant)
    mono = monolithic_assemble(grid, space, cond, sigma=80.0,
                               m_variant=m_variant)
    a = op.expand()
    b = mono.to_dense()
    assert np.abs(a - b).max() <= 1e-12 * np.abs(b).max()


def test_oracle_equivalence_anisotropic_fibre():
    grid = build_grid(4, 1, (1.0, 5.0))
    space = build_cell_space((4, 4), (1.0, 5.0))
    k1, k2 = pattern("missing_fibre", space)
    cond = bernoulli_conductivity(grid, k1, k2, p=0.4, seed=2)
    op = assemble_operator(grid, space, cond, sigma=120.0)
    mono = monolithic_assemble(grid, space, cond, sigma=120.0)
    diff = np.abs(op.expand() - mono.to_dense()).max()
    assert diff <= 1e-12 * np.abs(mono.to_dense()).max()


def test_assembly_validation(small_case):
    grid, space, cond = small_case
    with pytest.raises(ValueError):
        assemble_operator(grid, space, cond, sigma=0.0)
    with pytest.raises(ValueError):
        assemble_operator(grid, space, cond, sigma=10.0, m_variant="nope")
    bad = SeparatedField([(np.ones(9), -np.ones(space.dim))])
    with pytest.raises(ValueError):
        assemble_operator(grid, space, bad, sigma=10.0)


def test_monolithic_guard():
    grid = build_grid(3, 3, (1.0, 1.0))
    space = build_cell_space((4, 4), (1.0, 1.0))
    with pytest.raises(ValueError):
        monolithic_assemble(grid, space, uniform_field(grid, space),
                            sigma=10.0, max_dofs=10)


def test_single_cell_constants_feel_only_m():
    grid = build_grid(1, 1, (1.0, 1.0))
    space = build_cell_space((3, 3), (1.0, 1.0))
    cond = uniform_field(grid, space)
    op = assemble_operator(grid, space, cond, sigma=30.0)
    mono = monolithic_assemble(grid, space, cond, sigma=30.0)
    const = np.ones(space.dim)
    quad_mono = const @ (mono.matvec(const))
    assert quad_mono == pytest.approx(1.0)           # phi(1)^2 = |D|^2 = 1
    assert op.quadratic(const.reshape(1, -1)) == pytest.approx(1.0)
    assert op.quadratic(const.reshape(1, -1),
                        parts=("a", "s")) == pytest.approx(0.0, abs=1e-13)


def test_constants_annihilated_by_a_c_s(small_case):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=50.0)
    const = np.ones((grid.n_cells, space.dim))
    for parts in (("a",), ("s",), ("c", "ct")):
        assert abs(op.quadratic(const, parts=parts)) < 1e-10


def test_interpolated_periodic_function_has_no_jumps(small_case):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=50.0)
    # nodal interpolant of a globally continuous periodic function
    vals = np.empty((grid.n_cells, space.dim))
    for i in range(grid.n_cells):
        ox, oy = grid.cell_origin(i)
        gx = (ox + space.node_x) / 3.0
        gy = (oy + space.node_y) / 3.0
        vals[i] = np.sin(2 * np.pi * gx) * np.cos(2 * np.pi * gy)
    s_val = op.quadratic(vals, parts=("s",))
    c_val = op.quadratic(vals, parts=("c", "ct"))
    a_val = op.quadratic(vals, parts=("a",))
    assert abs(s_val) < 1e-18 * op.sigma * a_val
    assert abs(c_val) < 1e-12 * a_val


def test_energy_norm_properties(small_case):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=50.0)
    zero = np.zeros((grid.n_cells, space.dim))
    assert energy_norm(op, zero) == 0.0
    const = np.ones((grid.n_cells, space.dim))
    assert energy_norm(op, const) == pytest.approx(9.0)  # |D| = 9
    rng = np.random.default_rng(0)
    v = rng.standard_normal((grid.n_cells, space.dim))
    assert energy_norm(op, 2.5 * v) == pytest.approx(2.5 * energy_norm(op, v))
    assert energy_norm(op, v) > 0.0


def test_coercivity_at_twice_lower_bound(small_case):
    grid, space, cond = small_case
    c_trace = max_trace_constant(space)
    s_minus = sigma_lower_bound(c_trace, compute_weights(grid,
                                                         cell_bounds(cond)))
    op = assemble_operator(grid, space, cond, sigma=2.0 * s_minus)
    bound = 1.0 - np.sqrt(0.5)
    rng = np.random.default_rng(42)
    for _ in range(200):
        v = rng.standard_normal((grid.n_cells, space.dim))
        assert op.quadratic(v) >= bound * energy_norm(op, v) ** 2 * (1 - 1e-10)


def test_rhs_assembly(small_case):
    grid, space, cond = small_case
    empty = assemble_rhs(grid, space, SeparatedField([]))
    assert empty.rank == 0
    np.testing.assert_allclose(empty.to_matrix(), 0.0)

    ones = assemble_rhs(grid, space, uniform_source_like(grid, space))
    assert ones.rank == 1
    assert ones.to_matrix().sum() == pytest.approx(9.0)   # |D|

    uniform_k = uniform_field(grid, space)
    zero_src = corrector_source(uniform_k, space)
    rhs = assemble_rhs(grid, space, zero_src)
    np.testing.assert_allclose(rhs.to_matrix(), 0.0)


def uniform_source_like(grid, space):
    return uniform_source(grid, space)


def test_mean_zero_solution_compatibility(small_case):
    from mesodg import direct_dg_solve
    grid, space, cond = small_case
    f = corrector_source(cond, space)
    sol = direct_dg_solve(grid, space, cond, f, sigma=50.0,
                          m_variant="mean_penalty")
    u = sol.as_broken_matrix()
    mean = float(np.ones(grid.n_cells) @ u @ load_vector(space, 1.0))
    assert abs(mean) <= 1e-10 * np.linalg.norm(u.ravel())


def test_operator_dump(tmp_path, small_case):
    grid, space, cond = small_case
    op = assemble_operator(grid, space, cond, sigma=50.0)
    dump_operator(op, tmp_path / "dump")
    index = (tmp_path / "dump" / "index.txt").read_text()
    assert f"n_terms {op.n_terms}" in index
    from scipy.io import mmread
    m0 = mmread(tmp_path / "dump" / "meso_000.mtx")
    assert (sp.csr_matrix(m0) != op.terms[0].meso).nnz == 0
