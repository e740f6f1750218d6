"""Reference-cell Q1 finite element space and cell-level forms.

The reference cell ``Y = ]0, Lx[ x ]0, Ly[`` carries a structured grid of
``mx * my`` quadrangle elements with bilinear (Q1) nodal shape functions.
Nodes are numbered x-fastest: ``a = jy * (mx + 1) + jx``.

Cell-level bilinear forms used by the Kronecker decomposition of the SWIP
operator:

- volume:   ``M(v, w) = int_Y v w``,  ``N[psi](v, w) = int_Y psi grad v . grad w``
- boundary: ``M0_q(v, w) = int_{dY_q} v w``,
            ``M1_q(v, w) = int_{dY_q} v (w o tau_q)``,
            ``N0_q[psi](v, w) = int_{dY_q} psi (e_q / 2) . (grad v) w``,
            ``N1_q[psi](v, w) = int_{dY_q} psi (e_q / 2) . (grad v) (w o tau_q)``

``dY_q`` is the face of Y with outward normal ``e_q`` and ``tau_q`` the
translation mapping ``dY_q`` onto ``dY_{-q}``.  Matrices are stored with
the test function on rows and the trial function on columns, i.e.
``A[b, a] = form(phi_a, phi_b)``.

Quadrature is 2x2 Gauss per element and 2-point Gauss per edge element,
which integrates every Q1 x Q1 x (Q1 coefficient) volume and edge term
exactly.

Coefficients ``psi`` are given by nodal values and interpolated
bilinearly; boundary forms take the one-sided trace of ``psi`` from
inside the cell.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .grid import ORIENTATIONS

_GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])


def _shape_values(xi, eta):
    """Q1 shapes on the unit reference square, local node order
    (0,0), (1,0), (1,1), (0,1)."""
    return np.stack([(1 - xi) * (1 - eta), xi * (1 - eta),
                     xi * eta, (1 - xi) * eta], axis=-1)


def _shape_grads(xi, eta):
    dxi = np.stack([-(1 - eta), (1 - eta), eta, -eta], axis=-1)
    deta = np.stack([-(1 - xi), -xi, xi, (1 - xi)], axis=-1)
    return dxi, deta


class _EdgeData:
    """Precomputed trace quadrature for one oriented boundary edge.

    ``conn[k]`` holds the 4 node ids of the volume element owning the
    k-th edge element; edge elements and Gauss points are ordered by
    increasing tangential coordinate, so the k-th station of ``dY_q``
    faces the k-th station of ``dY_{-q}``.
    """

    def __init__(self, conn, shp, gx, gy, weights, dofs):
        self.conn = conn          # (n_edge, 4) volume-element nodes
        self.shp = shp            # (n_gp, 4) shape values on the edge
        self.gx = gx              # (n_gp, 4) d/dx of shapes on the edge
        self.gy = gy              # (n_gp, 4)
        self.w = weights          # (n_gp,) incl. edge jacobian
        self.dofs = dofs          # boundary node ids, tangential order


class CellSpace:
    """Q1 space on a structured rectangular grid over the reference cell."""

    def __init__(self, n_el: tuple[int, int], extent: tuple[float, float]):
        mx, my = int(n_el[0]), int(n_el[1])
        if mx < 1 or my < 1:
            raise ValueError(f"element counts must be positive, got {n_el}")
        lx, ly = float(extent[0]), float(extent[1])
        if lx <= 0 or ly <= 0:
            raise ValueError(f"cell extent must be positive, got {extent}")
        self.n_el = (mx, my)
        self.extent = (lx, ly)
        self.hx = lx / mx
        self.hy = ly / my
        self.dim = (mx + 1) * (my + 1)

        jx = np.arange(mx + 1)
        jy = np.arange(my + 1)
        self.node_x = np.tile(jx * self.hx, my + 1)
        self.node_y = np.repeat(jy * self.hy, mx + 1)

        # element connectivity, x-fastest element order
        ex = np.tile(np.arange(mx), my)
        ey = np.repeat(np.arange(my), mx)
        n00 = ey * (mx + 1) + ex
        self.conn = np.column_stack([n00, n00 + 1,
                                     n00 + mx + 2, n00 + mx + 1])

        # 2x2 Gauss volume rule
        xi, eta = np.meshgrid(_GAUSS_1D, _GAUSS_1D, indexing="ij")
        xi = xi.ravel()
        eta = eta.ravel()
        self.vol_shp = _shape_values(xi, eta)           # (4 gp, 4)
        dxi, deta = _shape_grads(xi, eta)
        self.vol_gx = dxi / self.hx
        self.vol_gy = deta / self.hy
        self.vol_w = np.full(4, self.hx * self.hy / 4.0)

        self._edges = {q: self._build_edge(q) for q in ORIENTATIONS}

    def _build_edge(self, q: int) -> _EdgeData:
        mx, my = self.n_el
        t = _GAUSS_1D
        if abs(q) == 1:
            # vertical edge, tangential coordinate y
            exi = 1.0 if q == 1 else 0.0
            xi = np.full(2, exi)
            eta = t
            col = mx - 1 if q == 1 else 0
            elems = col + np.arange(my) * mx
            w = np.full(2, self.hy / 2.0)
            jx = mx if q == 1 else 0
            dofs = jx + np.arange(my + 1) * (mx + 1)
        else:
            exi = 1.0 if q == 2 else 0.0
            xi = t
            eta = np.full(2, exi)
            row = my - 1 if q == 2 else 0
            elems = np.arange(mx) + row * mx
            w = np.full(2, self.hx / 2.0)
            jy = my if q == 2 else 0
            dofs = np.arange(mx + 1) + jy * (mx + 1)
        shp = _shape_values(xi, eta)
        dxi, deta = _shape_grads(xi, eta)
        return _EdgeData(conn=self.conn[elems], shp=shp,
                         gx=dxi / self.hx, gy=deta / self.hy,
                         weights=w, dofs=dofs)

    def edge_data(self, q: int) -> _EdgeData:
        if q not in ORIENTATIONS:
            raise ValueError(f"invalid orientation {q!r}")
        return self._edges[q]

    def boundary_dofs(self, q: int) -> np.ndarray:
        """Node ids on face ``dY_q``, ordered by tangential coordinate."""
        return self.edge_data(q).dofs.copy()

    def tau_map(self, q: int) -> tuple[np.ndarray, np.ndarray]:
        """Paired node ids (on dY_q, on dY_{-q}) under the translation tau_q."""
        return self.boundary_dofs(q), self.boundary_dofs(-q)

    def _scatter(self, conn, blocks) -> sp.csr_matrix:
        nk = conn.shape[0]
        rows = np.broadcast_to(conn[:, :, None], (nk, 4, 4)).ravel()
        cols = np.broadcast_to(conn[:, None, :], (nk, 4, 4)).ravel()
        return sp.csr_matrix((blocks.ravel(), (rows, cols)),
                             shape=(self.dim, self.dim))

    def _scatter_pair(self, conn_rows, conn_cols, blocks) -> sp.csr_matrix:
        nk = conn_rows.shape[0]
        rows = np.broadcast_to(conn_rows[:, :, None], (nk, 4, 4)).ravel()
        cols = np.broadcast_to(conn_cols[:, None, :], (nk, 4, 4)).ravel()
        return sp.csr_matrix((blocks.ravel(), (rows, cols)),
                             shape=(self.dim, self.dim))


def build_cell_space(n_el: tuple[int, int],
                     extent: tuple[float, float]) -> CellSpace:
    """Build the reference-cell Q1 space (deterministic DOF numbering)."""
    return CellSpace(n_el, extent)


def mass_matrix(space: CellSpace) -> sp.csr_matrix:
    block = np.einsum("g,ga,gb->ba", space.vol_w, space.vol_shp,
                      space.vol_shp)
    blocks = np.broadcast_to(block, (space.conn.shape[0], 4, 4))
    return space._scatter(space.conn, blocks)


def stiffness_matrix(space: CellSpace, psi: np.ndarray) -> sp.csr_matrix:
    """``N[psi]``: psi-weighted gradient form, psi given nodally."""
    psi = np.asarray(psi, dtype=float)
    psi_gp = psi[space.conn] @ space.vol_shp.T        # (n_el, n_gp)
    blocks = (np.einsum("g,kg,ga,gb->kba", space.vol_w, psi_gp,
                        space.vol_gx, space.vol_gx)
              + np.einsum("g,kg,ga,gb->kba", space.vol_w, psi_gp,
                          space.vol_gy, space.vol_gy))
    return space._scatter(space.conn, blocks)


def load_vector(space: CellSpace, g) -> np.ndarray:
    """Nodal load vector of a nodally-given source (scalars broadcast)."""
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = np.full(space.dim, float(g))
    g_gp = g[space.conn] @ space.vol_shp.T
    contrib = np.einsum("g,kg,ga->ka", space.vol_w, g_gp, space.vol_shp)
    vec = np.zeros(space.dim)
    np.add.at(vec, space.conn, contrib)
    return vec


def integrate_nodal(space: CellSpace, g) -> float:
    """Integral over Y of a nodally-given field."""
    return float(load_vector(space, 1.0) @ np.asarray(g, dtype=float))


def boundary_mass(space: CellSpace, q: int) -> sp.csr_matrix:
    """``M0_q``: edge mass on ``dY_q``."""
    e = space.edge_data(q)
    block = np.einsum("g,ga,gb->ba", e.w, e.shp, e.shp)
    blocks = np.broadcast_to(block, (e.conn.shape[0], 4, 4))
    return space._scatter(e.conn, blocks)


def boundary_coupling(space: CellSpace, q: int) -> sp.csr_matrix:
    """``M1_q``: edge mass pairing traces on ``dY_q`` with ``dY_{-q}``."""
    eq = space.edge_data(q)
    em = space.edge_data(-q)
    block = np.einsum("g,ga,gb->ba", eq.w, eq.shp, em.shp)
    blocks = np.broadcast_to(block, (eq.conn.shape[0], 4, 4))
    return space._scatter_pair(em.conn, eq.conn, blocks)


def _normal_grad(e: _EdgeData, q: int) -> np.ndarray:
    g = e.gx if abs(q) == 1 else e.gy
    return g if q > 0 else -g


def boundary_flux(space: CellSpace, q: int, psi) -> sp.csr_matrix:
    """``N0_q[psi]``: one-sided half-flux form on ``dY_q``."""
    psi = np.asarray(psi, dtype=float)
    e = space.edge_data(q)
    psi_gp = psi[e.conn] @ e.shp.T                    # (n_edge, n_gp)
    gn = 0.5 * _normal_grad(e, q)
    blocks = np.einsum("g,kg,ga,gb->kba", e.w, psi_gp, gn, e.shp)
    return space._scatter(e.conn, blocks)


def boundary_flux_coupling(space: CellSpace, q: int, psi) -> sp.csr_matrix:
    """``N1_q[psi]``: half-flux from ``dY_q`` tested through ``tau_q``."""
    psi = np.asarray(psi, dtype=float)
    eq = space.edge_data(q)
    em = space.edge_data(-q)
    psi_gp = psi[eq.conn] @ eq.shp.T
    gn = 0.5 * _normal_grad(eq, q)
    blocks = np.einsum("g,kg,ga,gb->kba", eq.w, psi_gp, gn, em.shp)
    return space._scatter_pair(em.conn, eq.conn, blocks)


def face_gradient_gram(space: CellSpace, q: int) -> sp.csr_matrix:
    """Gram matrix of full gradient traces on ``dY_q`` (one-sided)."""
    e = space.edge_data(q)
    block = (np.einsum("g,ga,gb->ba", e.w, e.gx, e.gx)
             + np.einsum("g,ga,gb->ba", e.w, e.gy, e.gy))
    blocks = np.broadcast_to(block, (e.conn.shape[0], 4, 4))
    return space._scatter(e.conn, blocks)


def trace_constant(space: CellSpace, q: int) -> float:
    """Best constant in the discrete trace inequality on ``dY_q``.

    Largest generalized eigenvalue of the face-gradient Gram against the
    volume-gradient Gram, restricted to the orthogonal complement of the
    constant function (where the volume form is definite); the constant
    is its square root.
    """
    gf = face_gradient_gram(space, q).toarray()
    gy = stiffness_matrix(space, np.ones(space.dim)).toarray()
    ones = np.ones((1, space.dim))
    basis = scipy.linalg.null_space(ones)
    a = basis.T @ gf @ basis
    b = basis.T @ gy @ basis
    try:
        eigvals = scipy.linalg.eigh(a, b, eigvals_only=True)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise RuntimeError(f"trace-constant eigensolve failed: {exc}") from exc
    c2 = float(eigvals[-1])
    if not np.isfinite(c2) or c2 <= 0:
        raise RuntimeError(f"non-finite trace constant (lambda={c2})")
    return float(np.sqrt(c2))


def max_trace_constant(space: CellSpace) -> float:
    """Max of the trace constants over the four oriented faces."""
    return max(trace_constant(space, q) for q in ORIENTATIONS)


def derivative_x_projected(space: CellSpace, g: np.ndarray) -> np.ndarray:
    """Element-wise d/dx of a nodal field, projected back to nodes by a
    lumped-mass L2 projection."""
    g = np.asarray(g, dtype=float)
    dg_gp = g[space.conn] @ space.vol_gx.T            # (n_el, n_gp)
    contrib = np.einsum("g,kg,ga->ka", space.vol_w, dg_gp, space.vol_shp)
    num = np.zeros(space.dim)
    np.add.at(num, space.conn, contrib)
    return num / load_vector(space, 1.0)
