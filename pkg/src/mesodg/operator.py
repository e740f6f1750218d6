"""Separated (Kronecker) assembly of the SWIP interior-penalty operator.

The broken space over the periodic cell tiling is identified with the
tensor product (vectors over cells) x (reference-cell space).  The SWIP
bilinear form

    a_swip = a - c - c^T + s + m

then decomposes into a short sum of Kronecker terms (meso matrix) x
(cell matrix):

- ``a``  couples nothing across cells: diag(K_n^meso) x N[K_n^cell] per
  conductivity term.
- ``c``  (consistency) contributes, per orientation ``o`` and
  conductivity term, ``l(chi_o[psi]) x N0_o  -  chi_o[psi]^T x N1_o``
  where the meso pair weight ``psi(i, j) = 2 beta_i K_n^meso(i)`` folds
  the face-average weight of the trace from cell ``i`` (so the 1/2 kept
  inside N0/N1 reproduces the weighted average exactly).
- ``s``  (jump penalty) contributes, per orientation,
  ``sigma ( l(chi_o[omega/|F|]) x M0_o  -  chi_o[omega/|F|]^T x M1_o )``.
- ``m``  fixes the constant mode: either the mean-penalty rank-one form
  phi(u) phi(v) with phi(v) = int v (kept in factored form), or the full
  L2 inner product (identity x cell mass).

Terms are stored *signed*, so the operator is the plain sum of its terms
(plus the factored mean-penalty term).  A face-by-face monolithic
assembly of the same form over the full broken space serves as an
independent oracle for the decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import cell as cellmod
from .cell import CellSpace, load_vector, mass_matrix, stiffness_matrix
from .grid import ORIENTATIONS, MesoGrid
from .media import SeparatedField, cell_bounds, CellBounds

DEFAULT_MAX_DOFS = 400_000

ENERGY_PARTS = ("a", "s", "m")


@dataclass
class SwipWeights:
    """Face weights of the SWIP form, in grid.faces order.

    ``beta_i``/``beta_j`` weight the traces from the lower/higher indexed
    cell of each face; ``omega`` is the harmonic-type stabilisation
    weight.  Aggregates feed the penalty lower bound.
    """

    omega: np.ndarray
    beta_i: np.ndarray
    beta_j: np.ndarray
    beta_max: float
    omega_min: float
    k_plus_max: float
    k_minus_min: float
    n_faces_per_cell: int
    face_measure_max: float


def compute_weights(grid: MesoGrid, bounds: CellBounds) -> SwipWeights:
    """Per-face stabilisation and average weights from cell bounds."""
    kp = bounds.k_plus
    i_idx = np.array([f.i for f in grid.faces])
    j_idx = np.array([f.j for f in grid.faces])
    kpi, kpj = kp[i_idx], kp[j_idx]
    omega = 2.0 * kpi * kpj / (kpi + kpj)
    beta_i = kpi / (kpi + kpj)
    beta_j = kpj / (kpi + kpj)
    measures = np.array([f.measure for f in grid.faces])
    return SwipWeights(
        omega=omega, beta_i=beta_i, beta_j=beta_j,
        beta_max=float(np.max(np.maximum(beta_i, beta_j))),
        omega_min=float(np.min(omega)),
        k_plus_max=float(np.max(kp)),
        k_minus_min=float(np.min(bounds.k_minus)),
        n_faces_per_cell=4,
        face_measure_max=float(np.max(measures)),
    )


def sigma_lower_bound(c_trace: float, weights: SwipWeights) -> float:
    """Penalty threshold sigma_- guaranteeing coercivity for sigma above it."""
    return (c_trace ** 2 * weights.beta_max ** 2
            * weights.n_faces_per_cell * weights.face_measure_max
            * (weights.k_plus_max / weights.omega_min)
            * (weights.k_plus_max / weights.k_minus_min))


@dataclass
class KronTerm:
    """One signed Kronecker term (meso x cell) of the operator."""

    meso: sp.csr_matrix
    cell: sp.csr_matrix
    part: str  # 'a' | 'c' | 'ct' | 's' | 'm'


@dataclass
class SeparatedOperator:
    """Sum of Kronecker terms, plus an optional factored mean-penalty term.

    ``phi = (g_meso, g_cell)`` represents the rank-one form
    ``(g_meso g_meso^T) x (g_cell g_cell^T)``.
    """

    terms: list[KronTerm]
    phi: tuple[np.ndarray, np.ndarray] | None
    sigma: float
    m_variant: str
    n_cells: int
    cell_dim: int
    grid: MesoGrid | None = None
    space: CellSpace | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_terms(self) -> int:
        return len(self.terms) + (1 if self.phi is not None else 0)

    @property
    def n_dofs(self) -> int:
        return self.n_cells * self.cell_dim

    def _as_matrix(self, v) -> np.ndarray:
        if hasattr(v, "to_matrix"):
            return v.to_matrix()
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return v.reshape(self.n_cells, self.cell_dim)
        return v

    def phi_value(self, u_mat: np.ndarray) -> float:
        """phi(u) = int_D u for the mean-penalty factors."""
        g_meso, g_cell = self.phi
        return float(g_meso @ u_mat @ g_cell)

    def apply_mat(self, u_mat: np.ndarray, parts=None) -> np.ndarray:
        """Matricized operator application sum_t meso_t @ U @ cell_t^T."""
        out = np.zeros_like(u_mat)
        for term in self.terms:
            if parts is not None and term.part not in parts:
                continue
            out += term.meso @ np.asarray((term.cell @ u_mat.T).T)
        if self.phi is not None and (parts is None or "m" in parts):
            g_meso, g_cell = self.phi
            out += self.phi_value(u_mat) * np.outer(g_meso, g_cell)
        return out

    def quadratic(self, v, parts=None) -> float:
        u_mat = self._as_matrix(v)
        return float(np.sum(u_mat * self.apply_mat(u_mat, parts=parts)))

    def expand(self, max_dofs: int = DEFAULT_MAX_DOFS) -> np.ndarray:
        """Dense expansion (small problems only; testing/debugging)."""
        if self.n_dofs > max_dofs:
            raise ValueError(
                f"refusing to expand {self.n_dofs} DOFs (cap {max_dofs})")
        out = np.zeros((self.n_dofs, self.n_dofs))
        for term in self.terms:
            out += sp.kron(term.meso, term.cell).toarray()
        if self.phi is not None:
            g = np.kron(self.phi[0], self.phi[1])
            out += np.outer(g, g)
        return out


@dataclass
class SeparatedRHS:
    """Separated right-hand side: sum of (meso vector) x (cell load)."""

    terms: list[tuple[np.ndarray, np.ndarray]]
    n_cells: int
    cell_dim: int

    @property
    def rank(self) -> int:
        return len(self.terms)

    def to_matrix(self) -> np.ndarray:
        out = np.zeros((self.n_cells, self.cell_dim))
        for meso, load in self.terms:
            out += np.outer(meso, load)
        return out


def _merge_duplicate_terms(terms: list[KronTerm]) -> list[KronTerm]:
    """Merge terms of the same part with identical meso factors."""
    merged: dict[tuple, KronTerm] = {}
    order: list[tuple] = []
    for term in terms:
        m = term.meso.copy()
        m.sum_duplicates()
        m.sort_indices()
        key = (term.part, m.shape, m.indptr.tobytes(), m.indices.tobytes(),
               m.data.tobytes())
        if key in merged:
            merged[key].cell = (merged[key].cell + term.cell).tocsr()
        else:
            merged[key] = KronTerm(meso=m, cell=term.cell.tocsr(),
                                   part=term.part)
            order.append(key)
    return [merged[k] for k in order]


def _pair_weights(grid: MesoGrid, bounds: CellBounds, o: int):
    """Per-cell (trace weight, omega, neighbor) along orientation ``o``."""
    nbr = grid.neighbor_array(o)
    kpi = bounds.k_plus
    kpj = kpi[nbr]
    beta_trace = kpi / (kpi + kpj)
    omega = 2.0 * kpi * kpj / (kpi + kpj)
    return beta_trace, omega, nbr


def assemble_operator(grid: MesoGrid, space: CellSpace, k: SeparatedField,
                      sigma: float, m_variant: str = "mean_penalty"
                      ) -> SeparatedOperator:
    """Assemble the separated SWIP operator.

    ``m_variant`` selects the constant-mode fix: ``mean_penalty`` (the
    rank-one form phi(u) phi(v), default) or ``cell_mass`` (identity x
    cell mass).  The conductivity must be strictly positive and
    ``sigma`` positive.
    """
    if sigma <= 0:
        raise ValueError(f"penalty parameter must be positive, got {sigma}")
    if m_variant not in ("mean_penalty", "cell_mass"):
        raise ValueError(f"unknown m variant {m_variant!r}")
    bounds = cell_bounds(k)  # validates positivity
    n = grid.n_cells
    rows = np.arange(n)
    terms: list[KronTerm] = []

    for meso_k, cell_k in k.terms:
        terms.append(KronTerm(meso=sp.diags(meso_k, format="csr"),
                              cell=stiffness_matrix(space, cell_k),
                              part="a"))

    c_terms: list[KronTerm] = []
    for o in ORIENTATIONS:
        beta_trace, omega, nbr = _pair_weights(grid, bounds, o)
        n0 = {}
        n1 = {}
        for t_idx, (meso_k, cell_k) in enumerate(k.terms):
            key = t_idx
            n0[key] = cellmod.boundary_flux(space, o, cell_k)
            n1[key] = cellmod.boundary_flux_coupling(space, o, cell_k)
            psi = 2.0 * beta_trace * meso_k
            chi = sp.csr_matrix((psi, (rows, nbr)), shape=(n, n))
            # a_swip carries -c: signed terms
            c_terms.append(KronTerm(meso=sp.diags(-psi, format="csr"),
                                    cell=n0[key], part="c"))
            c_terms.append(KronTerm(meso=chi.T.tocsr(), cell=n1[key],
                                    part="c"))
        # jump penalty along this orientation
        pen = sigma * omega / grid.face_measure(o)
        chi_s = sp.csr_matrix((pen, (rows, nbr)), shape=(n, n))
        terms.append(KronTerm(meso=sp.diags(pen, format="csr"),
                              cell=cellmod.boundary_mass(space, o),
                              part="s"))
        terms.append(KronTerm(meso=(-chi_s.T).tocsr(),
                              cell=cellmod.boundary_coupling(space, o),
                              part="s"))

    terms.extend(c_terms)
    terms.extend(KronTerm(meso=t.meso.T.tocsr(), cell=t.cell.T.tocsr(),
                          part="ct") for t in c_terms)

    phi = None
    if m_variant == "mean_penalty":
        phi = (np.ones(n), load_vector(space, 1.0))
    else:
        terms.append(KronTerm(meso=sp.identity(n, format="csr"),
                              cell=mass_matrix(space), part="m"))

    return SeparatedOperator(terms=_merge_duplicate_terms(terms), phi=phi,
                             sigma=float(sigma), m_variant=m_variant,
                             n_cells=n, cell_dim=space.dim,
                             grid=grid, space=space)


def assemble_rhs(grid: MesoGrid, space: CellSpace,
                 f: SeparatedField) -> SeparatedRHS:
    """Separated right-hand side from a separated source field."""
    terms = [(meso.copy(), load_vector(space, cell_f))
             for meso, cell_f in f.terms]
    return SeparatedRHS(terms=terms, n_cells=grid.n_cells,
                        cell_dim=space.dim)


def energy_norm(op: SeparatedOperator, v) -> float:
    """Broken energy norm sqrt(a(v,v) + s(v,v) + m(v,v))."""
    val = op.quadratic(v, parts=ENERGY_PARTS)
    return float(np.sqrt(max(val, 0.0)))


@dataclass
class MonolithicOperator:
    """Full sparse operator over the broken space (independent oracle).

    The mean-penalty variant keeps its rank-one part factored as
    ``phi_vec`` so the sparse core stays sparse.
    """

    matrix: sp.csr_matrix
    phi_vec: np.ndarray | None
    n_cells: int
    cell_dim: int

    @property
    def n_dofs(self) -> int:
        return self.n_cells * self.cell_dim

    def matvec(self, x: np.ndarray) -> np.ndarray:
        out = self.matrix @ x
        if self.phi_vec is not None:
            out = out + self.phi_vec * (self.phi_vec @ x)
        return out

    def to_dense(self) -> np.ndarray:
        out = self.matrix.toarray()
        if self.phi_vec is not None:
            out = out + np.outer(self.phi_vec, self.phi_vec)
        return out


def monolithic_assemble(grid: MesoGrid, space: CellSpace, k: SeparatedField,
                        sigma: float, m_variant: str = "mean_penalty",
                        max_dofs: int = DEFAULT_MAX_DOFS
                        ) -> MonolithicOperator:
    """Cell-by-cell, face-by-face assembly of the SWIP form.

    Independent of the Kronecker decomposition: faces are integrated
    directly with the weighted average and jump, traces taken from each
    adjacent cell through the periodic identification.
    """
    if sigma <= 0:
        raise ValueError(f"penalty parameter must be positive, got {sigma}")
    if m_variant not in ("mean_penalty", "cell_mass"):
        raise ValueError(f"unknown m variant {m_variant!r}")
    n_dofs = grid.n_cells * space.dim
    if n_dofs > max_dofs:
        raise ValueError(
            f"monolithic problem has {n_dofs} DOFs, above the cap "
            f"{max_dofs}")
    bounds = cell_bounds(k)
    dim = space.dim

    data, rows, cols = [], [], []

    def scatter(block_rows, block_cols, blocks):
        rows.append(block_rows.ravel())
        cols.append(block_cols.ravel())
        data.append(np.ascontiguousarray(blocks).ravel())

    # volume diffusion, one block per cell
    for i in range(grid.n_cells):
        coo = stiffness_matrix(space, k.evaluate_cell(i)).tocoo()
        rows.append(coo.row + i * dim)
        cols.append(coo.col + i * dim)
        data.append(coo.data)

    # faces: -c - c^T + s, integrated station by station
    for f in grid.faces:
        i, j, q = f.i, f.j, f.q
        eq = space.edge_data(q)
        em = space.edge_data(-q)
        ki_g = k.evaluate_cell(i)[eq.conn] @ eq.shp.T      # (n_edge, n_gp)
        kj_g = k.evaluate_cell(j)[em.conn] @ em.shp.T
        kpi, kpj = bounds.k_plus[i], bounds.k_plus[j]
        beta_i = kpi / (kpi + kpj)
        beta_j = kpj / (kpi + kpj)
        omega = 2.0 * kpi * kpj / (kpi + kpj)
        pen = sigma * omega / f.measure
        sgn = 1.0 if q > 0 else -1.0
        gni = sgn * (eq.gx if abs(q) == 1 else eq.gy)      # e_q . grad, i side
        gnj = sgn * (em.gx if abs(q) == 1 else em.gy)      # e_q . grad, j side
        w = eq.w
        nk = eq.conn.shape[0]

        def offs(conn, cell_idx):
            return conn + cell_idx * dim

        def rc(conn_test, cell_test, conn_trial, cell_trial):
            r = np.broadcast_to(offs(conn_test, cell_test)[:, :, None],
                                (nk, 4, 4))
            c = np.broadcast_to(offs(conn_trial, cell_trial)[:, None, :],
                                (nk, 4, 4))
            return r, c

        # consistency: c(u, v) = int n . {K grad u} [v]; four side blocks
        c_blocks = [
            (beta_i * np.einsum("g,kg,ga,gb->kba", w, ki_g, gni, eq.shp),
             eq.conn, i, eq.conn, i),
            (beta_j * np.einsum("g,kg,ga,gb->kba", w, kj_g, gnj, eq.shp),
             eq.conn, i, em.conn, j),
            (-beta_i * np.einsum("g,kg,ga,gb->kba", w, ki_g, gni, em.shp),
             em.conn, j, eq.conn, i),
            (-beta_j * np.einsum("g,kg,ga,gb->kba", w, kj_g, gnj, em.shp),
             em.conn, j, em.conn, j),
        ]
        for blocks, conn_t, cell_t, conn_u, cell_u in c_blocks:
            r, c = rc(conn_t, cell_t, conn_u, cell_u)
            scatter(r, c, -blocks)     # -c
            scatter(c, r, -blocks)     # -c^T (index arrays already transpose)

        # jump penalty: pen * int [u][v]
        s_blocks = [
            (np.einsum("g,ga,gb->ba", w, eq.shp, eq.shp), eq.conn, i,
             eq.conn, i, 1.0),
            (np.einsum("g,ga,gb->ba", w, em.shp, eq.shp), eq.conn, i,
             em.conn, j, -1.0),
            (np.einsum("g,ga,gb->ba", w, eq.shp, em.shp), em.conn, j,
             eq.conn, i, -1.0),
            (np.einsum("g,ga,gb->ba", w, em.shp, em.shp), em.conn, j,
             em.conn, j, 1.0),
        ]
        for block, conn_t, cell_t, conn_u, cell_u, sign in s_blocks:
            r, c = rc(conn_t, cell_t, conn_u, cell_u)
            blocks = np.broadcast_to(sign * pen * block, (nk, 4, 4))
            scatter(r, c, blocks)

    phi_vec = None
    if m_variant == "mean_penalty":
        phi_vec = np.tile(load_vector(space, 1.0), grid.n_cells)
    else:
        coo = mass_matrix(space).tocoo()
        for i in range(grid.n_cells):
            rows.append(coo.row + i * dim)
            cols.append(coo.col + i * dim)
            data.append(coo.data)

    matrix = sp.csr_matrix((np.concatenate(data),
                            (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n_dofs, n_dofs))
    return MonolithicOperator(matrix=matrix, phi_vec=phi_vec,
                              n_cells=grid.n_cells, cell_dim=space.dim)


def dump_operator(op: SeparatedOperator, directory) -> None:
    """Debug dump: per-term sparse blocks in Matrix Market format."""
    import os
    from scipy.io import mmwrite

    os.makedirs(directory, exist_ok=True)
    lines = [f"sigma {op.sigma:.17g}", f"m_variant {op.m_variant}",
             f"n_cells {op.n_cells}", f"cell_dim {op.cell_dim}",
             f"n_terms {op.n_terms}"]
    for idx, term in enumerate(op.terms):
        lines.append(f"term {idx} part {term.part} "
                     f"meso_nnz {term.meso.nnz} cell_nnz {term.cell.nnz}")
        mmwrite(os.path.join(directory, f"meso_{idx:03d}"), term.meso)
        mmwrite(os.path.join(directory, f"cell_{idx:03d}"), term.cell)
    if op.phi is not None:
        np.savetxt(os.path.join(directory, "phi_meso.txt"), op.phi[0])
        np.savetxt(os.path.join(directory, "phi_cell.txt"), op.phi[1])
        lines.append("phi mean_penalty factored")
    with open(os.path.join(directory, "index.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
