"""Independent reference solvers and comparison metrics.

``direct_dg_solve`` factorises the full monolithic SWIP system over the
broken space; ``cg_fem_solve`` solves the same diffusion problem with a
continuous Q1 space on the glued global grid, periodic DOF
identification and the same mean-penalty constant-mode fix.  Both serve
as oracles for the greedy low-rank solver.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cell import CellSpace, load_vector
from .grid import MesoGrid
from .media import SeparatedField
from .operator import (DEFAULT_MAX_DOFS, SeparatedOperator, assemble_rhs,
                       monolithic_assemble)


@dataclass
class FullSolution:
    """Coefficient vector of a full (non-separated) solve."""

    values: np.ndarray
    kind: str                    # 'dg_broken' | 'cg_periodic'
    n_cells: int
    cell_dim: int
    seconds: float
    linear_residual: float
    grid: MesoGrid | None = None
    space: CellSpace | None = None
    meta: dict = field(default_factory=dict)

    def as_broken_matrix(self) -> np.ndarray:
        """Solution as a (#cells, cell dim) table of broken coefficients."""
        if self.kind == "dg_broken":
            return self.values.reshape(self.n_cells, self.cell_dim)
        return _inject_cg(self.values, self.grid, self.space)


def direct_dg_solve(grid: MesoGrid, space: CellSpace, k: SeparatedField,
                    f: SeparatedField, sigma: float,
                    m_variant: str = "mean_penalty",
                    max_dofs: int = DEFAULT_MAX_DOFS) -> FullSolution:
    """Sparse direct factorisation of the monolithic SWIP system."""
    t0 = time.perf_counter()
    mono = monolithic_assemble(grid, space, k, sigma, m_variant,
                               max_dofs=max_dofs)
    b = assemble_rhs(grid, space, f).to_matrix().ravel()
    if mono.phi_vec is not None:
        g = mono.phi_vec
        bordered = sp.bmat([[mono.matrix, g.reshape(-1, 1)],
                            [g.reshape(1, -1), -np.ones((1, 1))]],
                           format="csc")
        x = splu(bordered).solve(np.append(b, 0.0))[:-1]
    else:
        x = splu(mono.matrix.tocsc()).solve(b)
    seconds = time.perf_counter() - t0
    b_norm = np.linalg.norm(b)
    res = np.linalg.norm(mono.matvec(x) - b)
    res = res / b_norm if b_norm > 0 else res
    return FullSolution(values=x, kind="dg_broken", n_cells=grid.n_cells,
                        cell_dim=space.dim, seconds=seconds,
                        linear_residual=float(res), grid=grid, space=space)


def _global_node_counts(grid: MesoGrid, space: CellSpace):
    mx, my = space.n_el
    nx_el = grid.nx * mx
    ny_el = grid.ny * my
    raw = (nx_el + 1) * (ny_el + 1)
    unique = nx_el * ny_el
    return nx_el, ny_el, raw, unique


def cg_dof_counts(grid: MesoGrid, space: CellSpace) -> dict:
    """Node counts of the continuous periodic space vs the broken space.

    ``raw`` counts grid nodes before periodic identification, ``unique``
    after; ``broken`` is #cells * dim of the cell space.
    """
    _, _, raw, unique = _global_node_counts(grid, space)
    return {"raw": raw, "unique": unique,
            "broken": grid.n_cells * space.dim}


def cg_fem_solve(grid: MesoGrid, space: CellSpace, k: SeparatedField,
                 f: SeparatedField,
                 max_dofs: int = DEFAULT_MAX_DOFS) -> FullSolution:
    """Continuous Q1 solve on the glued global grid with periodic
    identification and the mean-penalty constant-mode fix."""
    t0 = time.perf_counter()
    mx, my = space.n_el
    nx_el, ny_el, raw, unique = _global_node_counts(grid, space)
    if unique > max_dofs:
        raise ValueError(f"CG problem has {unique} DOFs, above the cap "
                         f"{max_dofs}")

    def uid(jx, jy):
        return (jy % ny_el) * nx_el + (jx % nx_el)

    # global element list; each element lies inside exactly one cell
    ex = np.tile(np.arange(nx_el), ny_el)
    ey = np.repeat(np.arange(ny_el), nx_el)
    conn = np.column_stack([uid(ex, ey), uid(ex + 1, ey),
                            uid(ex + 1, ey + 1), uid(ex, ey + 1)])
    cell_of = (ey // my) * grid.nx + (ex // mx)
    # local node ids inside the owning cell (for coefficient lookup)
    lx, ly = ex % mx, ey % my
    local = np.column_stack([ly * (mx + 1) + lx, ly * (mx + 1) + lx + 1,
                             (ly + 1) * (mx + 1) + lx + 1,
                             (ly + 1) * (mx + 1) + lx])

    k_table = k.to_matrix()
    f_table = f.to_matrix() if f.terms else np.zeros_like(k_table)
    k_el = k_table[cell_of[:, None], local]            # (n_el_glob, 4)
    f_el = f_table[cell_of[:, None], local]

    shp, gx, gy, w = space.vol_shp, space.vol_gx, space.vol_gy, space.vol_w
    k_gp = k_el @ shp.T
    blocks = (np.einsum("g,kg,ga,gb->kba", w, k_gp, gx, gx)
              + np.einsum("g,kg,ga,gb->kba", w, k_gp, gy, gy))
    nk = conn.shape[0]
    rows = np.broadcast_to(conn[:, :, None], (nk, 4, 4)).ravel()
    cols = np.broadcast_to(conn[:, None, :], (nk, 4, 4)).ravel()
    a_mat = sp.csr_matrix((blocks.ravel(), (rows, cols)),
                          shape=(unique, unique))

    f_gp = f_el @ shp.T
    load = np.einsum("g,kg,ga->ka", w, f_gp, shp)
    b = np.zeros(unique)
    np.add.at(b, conn, load)

    phi = np.zeros(unique)
    np.add.at(phi, conn, np.broadcast_to(
        np.einsum("g,ga->a", w, shp), (nk, 4)))

    bordered = sp.bmat([[a_mat, phi.reshape(-1, 1)],
                        [phi.reshape(1, -1), -np.ones((1, 1))]],
                       format="csc")
    x = splu(bordered).solve(np.append(b, 0.0))[:-1]
    seconds = time.perf_counter() - t0
    b_norm = np.linalg.norm(b)
    res = np.linalg.norm(a_mat @ x + phi * (phi @ x) - b)
    res = res / b_norm if b_norm > 0 else res
    return FullSolution(values=x, kind="cg_periodic", n_cells=grid.n_cells,
                        cell_dim=space.dim, seconds=seconds,
                        linear_residual=float(res), grid=grid, space=space,
                        meta={"raw_nodes": raw, "unique_nodes": unique,
                              "broken_dofs": grid.n_cells * space.dim})


def _inject_cg(values: np.ndarray, grid: MesoGrid,
               space: CellSpace) -> np.ndarray:
    """Duplicate continuous DOFs onto the broken space, cell by cell."""
    mx, my = space.n_el
    nx_el = grid.nx * mx
    ny_el = grid.ny * my
    out = np.empty((grid.n_cells, space.dim))
    jx_local = np.tile(np.arange(mx + 1), my + 1)
    jy_local = np.repeat(np.arange(my + 1), mx + 1)
    for i in range(grid.n_cells):
        ix, iy = grid.cell_coords(i)
        jx = (ix * mx + jx_local) % nx_el
        jy = (iy * my + jy_local) % ny_el
        out[i] = values[jy * nx_el + jx]
    return out


def _as_matrix(u, op: SeparatedOperator) -> np.ndarray:
    if isinstance(u, FullSolution):
        return u.as_broken_matrix()
    if hasattr(u, "to_matrix"):
        return u.to_matrix()
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        return u.reshape(op.n_cells, op.cell_dim)
    return u


def compare(u_a, u_b, op: SeparatedOperator) -> dict:
    """Relative energy and L2 errors of ``u_a`` against ``u_b``.

    Both solutions are expanded on the broken space; the energy norm uses
    the a/s/m parts of ``op`` and the L2 norm the cell mass matrix.
    """
    from .cell import mass_matrix

    mat_a = _as_matrix(u_a, op)
    mat_b = _as_matrix(u_b, op)
    diff = mat_a - mat_b
    if "mass" not in op._cache:
        op._cache["mass"] = mass_matrix(op.space)
    mass = op._cache["mass"]

    def energy(mat):
        return np.sqrt(max(op.quadratic(mat, parts=("a", "s", "m")), 0.0))

    def l2(mat):
        return np.sqrt(max(float(np.sum(mat * (mass @ mat.T).T)), 0.0))

    be, bl = energy(mat_b), l2(mat_b)
    if be == 0 or bl == 0:
        raise ValueError("reference solution has zero norm")
    return {"energy": energy(diff) / be, "l2": l2(diff) / bl}


def save_solution(path, sol: FullSolution) -> None:
    """Write a solution as a delimited-text coefficient table."""
    header = (f"kind={sol.kind} n_cells={sol.n_cells} "
              f"cell_dim={sol.cell_dim}")
    np.savetxt(path, sol.values, header=header, fmt="%.17g")


def load_solution(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValueError(f"{path}: missing solution header")
    meta = {}
    for tok in first[1:].split():
        key, _, val = tok.partition("=")
        meta[key] = int(val) if val.isdigit() else val
    return meta, np.loadtxt(path)
