"""Greedy rank-one solver with alternating minimisation and Galerkin updates.

Solves the tensor-structured SPD system A u = b, A given as a sum of
Kronecker terms, by constructing approximations of increasing rank
starting from u = 0.  Each step

1. computes a rank-one correction v_meso x v_cell by a few sweeps of
   alternating minimisation of the energy functional
   J(v) = 1/2 a_swip(v, v) - b(v);
2. re-solves all meso vectors jointly with the cell factors held fixed
   (Galerkin projection onto R^I x span{cell factors});
3. re-solves all cell factors jointly with the meso vectors held fixed;
4. stops once the relative residual reaches the tolerance, measured
   either as the plain Euclidean coefficient norm or as the tensor-space
   dual norm (inverse cell H1 Gram weighting, the default).

J never increases across any recorded optimisation step; a J increase
beyond roundoff slack indicates a non-coercive operator (penalty
parameter too small) and raises :class:`SolverDiagnosticError`.

All reduced systems are solved by sparse direct factorisation.  The
factored mean-penalty term reduces to a rank-one update in every
subspace, handled by a bordered (augmented) solve so sparse cores stay
sparse.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .operator import SeparatedOperator, SeparatedRHS


class SolverDiagnosticError(RuntimeError):
    """Loss of positive-definiteness or a singular reduced system."""


@dataclass
class SeparatedTensor:
    """Rank-structured iterate: list of (meso vector, cell vector) terms."""

    terms: list[tuple[np.ndarray, np.ndarray]]
    n_cells: int = 0
    cell_dim: int = 0

    def __post_init__(self):
        if self.terms and not self.n_cells:
            self.n_cells = len(self.terms[0][0])
            self.cell_dim = len(self.terms[0][1])

    @property
    def rank(self) -> int:
        return len(self.terms)

    def meso_stack(self) -> np.ndarray:
        return np.stack([m for m, _ in self.terms])

    def cell_stack(self) -> np.ndarray:
        return np.stack([c for _, c in self.terms])

    def to_matrix(self) -> np.ndarray:
        out = np.zeros((self.n_cells, self.cell_dim))
        for meso, cell in self.terms:
            out += np.outer(meso, cell)
        return out

    def norm(self) -> float:
        if not self.terms:
            return 0.0
        gm = self.meso_stack() @ self.meso_stack().T
        gc = self.cell_stack() @ self.cell_stack().T
        return float(np.sqrt(max(np.sum(gm * gc), 0.0)))

    def normalized(self) -> "SeparatedTensor":
        """Meso factors scaled to unit norm, magnitude in the cell factor."""
        terms = []
        for meso, cell in self.terms:
            s = np.linalg.norm(meso)
            if s > 0:
                terms.append((meso / s, cell * s))
            else:
                terms.append((meso.copy(), cell.copy()))
        return SeparatedTensor(terms, self.n_cells, self.cell_dim)

    def pruned(self, rel_tol: float = 1e-14) -> "SeparatedTensor":
        """Drop terms below rel_tol * |u| (no silent zero terms)."""
        total = self.norm()
        kept = [(m, c) for m, c in self.terms
                if np.linalg.norm(m) * np.linalg.norm(c) > rel_tol * total]
        return SeparatedTensor(kept, self.n_cells, self.cell_dim)


@dataclass
class TraceRow:
    rank: int
    residual: float
    j_value: float
    als_iters: int
    seconds: float
    orth_meso: float = 0.0
    orth_cell: float = 0.0


@dataclass
class SolveTrace:
    """Per-iteration solver records plus a fine-grained J history."""

    rows: list[TraceRow] = field(default_factory=list)
    j_history: list[tuple[str, float]] = field(default_factory=list)
    converged: bool = False
    sigma: float = 0.0

    @property
    def final_rank(self) -> int:
        return self.rows[-1].rank if self.rows else 0

    @property
    def final_residual(self) -> float:
        return self.rows[-1].residual if self.rows else 0.0

    def residuals(self) -> list[float]:
        return [r.residual for r in self.rows]

    def to_csv(self) -> str:
        lines = ["rank,residual,J,als_iters,seconds"]
        for r in self.rows:
            lines.append(f"{r.rank},{r.residual:.10g},{r.j_value:.10g},"
                         f"{r.als_iters},{r.seconds:.3f}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


@dataclass
class GreedyConfig:
    als_max_sweeps: int = 10
    als_j_rel_tol: float = 1e-4
    als_init: str = "residual_svd"  # or "random"
    als_restarts: int = 2           # extra random starts, best J kept
    residual_norm: str = "h1_dual"  # or "euclidean"
    seed: int = 0
    gram_tol: float = 1e-10       # on Gram eigenvalues of the fixed factors
    prune_tol: float = 1e-14
    j_slack: float = 1e-12        # accepted roundoff in the J monotonicity
    j_abort: float = 1e-6         # beyond this, J increase => SPD diagnostic


def _refined_solve(matrix: sp.spmatrix, rhs: np.ndarray,
                   max_refine: int = 3) -> np.ndarray:
    """Sparse LU with iterative refinement.

    The penalty parameter makes the reduced systems badly conditioned;
    a few refinement passes on the factorisation recover near-machine
    backward error at negligible cost.
    """
    lu = splu(matrix.tocsc())
    x = lu.solve(rhs)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0:
        return x
    for _ in range(max_refine):
        r = rhs - matrix @ x
        if np.linalg.norm(r) <= 1e-14 * rhs_norm:
            break
        x = x + lu.solve(r)
    return x


def _solve_with_rank_one(core: sp.spmatrix, g: np.ndarray | None,
                         rhs: np.ndarray) -> np.ndarray:
    """Solve (core + g g^T) x = rhs by a bordered sparse factorisation."""
    try:
        if g is None or not np.any(g):
            return _refined_solve(core, rhs)
        n = core.shape[0]
        bordered = sp.bmat([[core, g.reshape(-1, 1)],
                            [g.reshape(1, -1), -np.ones((1, 1))]],
                           format="csc")
        return _refined_solve(bordered, np.append(rhs, 0.0))[:n]
    except RuntimeError as exc:
        raise SolverDiagnosticError(
            f"singular reduced system ({exc}); check operator assembly "
            f"and penalty parameter") from exc


def _meso_groups(op: SeparatedOperator):
    """Operator terms grouped by the sparsity pattern of the meso factor.

    Every meso factor here has at most one entry per row (diagonals and
    neighbor maps), so stacking values per pattern turns the reduced and
    block meso systems into single einsum contractions.
    """
    if "meso_groups" in op._cache:
        return op._cache["meso_groups"]
    groups: dict[bytes, dict] = {}
    for t_idx, term in enumerate(op.terms):
        coo = term.meso.tocoo()
        order = np.lexsort((coo.col, coo.row))
        r, c, v = coo.row[order], coo.col[order], coo.data[order]
        key = r.tobytes() + c.tobytes()
        entry = groups.setdefault(key, {"rows": r, "cols": c,
                                        "vals": [], "idx": []})
        entry["vals"].append(v)
        entry["idx"].append(t_idx)
    out = [(e["rows"], e["cols"], np.stack(e["vals"]), np.array(e["idx"]))
           for e in groups.values()]
    op._cache["meso_groups"] = out
    return out


def _cell_groups(op: SeparatedOperator):
    """Term indices grouped by identical cell factors (merged kron blocks)."""
    if "cell_groups" in op._cache:
        return op._cache["cell_groups"]
    groups: dict[tuple, dict] = {}
    order_keys = []
    for t_idx, term in enumerate(op.terms):
        m = term.cell.tocsr().copy()
        m.sum_duplicates()
        m.sort_indices()
        key = (m.shape, m.indptr.tobytes(), m.indices.tobytes(),
               m.data.tobytes())
        if key not in groups:
            groups[key] = {"cell": m, "idx": []}
            order_keys.append(key)
        groups[key]["idx"].append(t_idx)
    out = [(groups[k]["cell"], np.array(groups[k]["idx"]))
           for k in order_keys]
    op._cache["cell_groups"] = out
    return out


def _reduced_meso_matrix(op: SeparatedOperator,
                         alpha: np.ndarray) -> sp.csr_matrix:
    """sum_t alpha_t meso_t as one sparse matrix."""
    n = op.n_cells
    rows, cols, vals = [], [], []
    for r, c, v_stack, idx in _meso_groups(op):
        rows.append(r)
        cols.append(c)
        vals.append(alpha[idx] @ v_stack)
    return sp.csr_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


def _reduced_cell_matrix(op: SeparatedOperator,
                         gamma: np.ndarray) -> sp.csr_matrix:
    """sum_t gamma_t cell_t as one sparse matrix."""
    parts = [float(np.sum(gamma[idx])) * cell_mat
             for cell_mat, idx in _cell_groups(op)]
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return out.tocsr()


def _contract_cell(op: SeparatedOperator, v_cell: np.ndarray) -> np.ndarray:
    return np.array([v_cell @ (term.cell @ v_cell) for term in op.terms])


def _contract_meso(op: SeparatedOperator, v_meso: np.ndarray) -> np.ndarray:
    return np.array([v_meso @ (term.meso @ v_meso) for term in op.terms])


def _correction_energy(op: SeparatedOperator, v_meso, v_cell,
                       residual_mat) -> float:
    """J(u + v x w) - J(u) for the current residual r = b - A u."""
    quad = float(_contract_meso(op, v_meso) @ _contract_cell(op, v_cell))
    if op.phi is not None:
        quad += float((op.phi[0] @ v_meso) ** 2 * (op.phi[1] @ v_cell) ** 2)
    lin = float(v_meso @ residual_mat @ v_cell)
    return 0.5 * quad - lin


def _top_right_singular(residual_mat: np.ndarray, iters: int = 8
                        ) -> np.ndarray | None:
    """Leading right singular vector of the residual by power iteration."""
    v = residual_mat.sum(axis=0)
    nv = np.linalg.norm(v)
    if nv == 0:
        return None
    v /= nv
    for _ in range(iters):
        w = residual_mat.T @ (residual_mat @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return None
        v = w / nw
    return v


def _als_sweeps(op: SeparatedOperator, residual_mat: np.ndarray,
                v_cell: np.ndarray, max_iters: int, j_rel_tol: float):
    """Alternating minimisation sweeps from a given cell-factor start."""
    v_meso = np.ones(op.n_cells)
    j_delta = 0.0
    sweeps = 0
    for sweeps in range(1, max_iters + 1):
        alpha = _contract_cell(op, v_cell)
        g = None
        if op.phi is not None:
            g = op.phi[0] * float(op.phi[1] @ v_cell)
        v_meso = _solve_with_rank_one(_reduced_meso_matrix(op, alpha), g,
                                      residual_mat @ v_cell)
        if not np.any(v_meso):
            return (np.zeros(op.n_cells), np.zeros(op.cell_dim), sweeps, 0.0)
        gamma = _contract_meso(op, v_meso)
        g = None
        if op.phi is not None:
            g = op.phi[1] * float(op.phi[0] @ v_meso)
        v_cell = _solve_with_rank_one(_reduced_cell_matrix(op, gamma), g,
                                      residual_mat.T @ v_meso)
        j_new = _correction_energy(op, v_meso, v_cell, residual_mat)
        change = abs(j_new - j_delta)
        j_delta = j_new
        # relative to the correction's own energy: J(u_prev) is an offset
        if change <= j_rel_tol * max(abs(j_delta), 1e-300):
            break
    return v_meso, v_cell, sweeps, j_delta


def als_rank_one(op: SeparatedOperator, rhs: SeparatedRHS,
                 u_prev: SeparatedTensor | None = None,
                 max_iters: int = 10, init_seed: int = 0,
                 j_rel_tol: float = 1e-4,
                 residual_mat: np.ndarray | None = None,
                 j_prev: float = 0.0,
                 rng: np.random.Generator | None = None,
                 init: str = "residual_svd", restarts: int = 2):
    """One rank-one correction by alternating minimisation.

    Alternates an exact meso solve (cell factor fixed) with an exact cell
    solve (meso factor fixed); both are minimisations of J, so J can only
    decrease from the first half-sweep on.  The cell factor starts from
    the residual's leading singular direction (``init='residual_svd'``)
    or a random unit vector; ``restarts`` extra random starts are run and
    the candidate with the lowest J kept.  Returns
    ``(v_meso, v_cell, sweeps, j_delta)`` where ``j_delta`` is the change
    of J produced by adding the correction to ``u_prev``.
    """
    if rng is None:
        rng = np.random.default_rng(init_seed)
    if residual_mat is None:
        b_mat = rhs.to_matrix()
        residual_mat = b_mat
        if u_prev is not None and u_prev.rank:
            residual_mat = b_mat - op.apply_mat(u_prev.to_matrix())

    starts = []
    if init == "residual_svd":
        top = _top_right_singular(residual_mat)
        if top is not None:
            starts.append(top)
    n_random = max(restarts, 0) + (0 if starts else 1)
    for _ in range(n_random):
        v = rng.standard_normal(op.cell_dim)
        starts.append(v / np.linalg.norm(v))

    best = None
    for v0 in starts:
        cand = _als_sweeps(op, residual_mat, v0, max_iters, j_rel_tol)
        if best is None or cand[3] < best[3]:
            best = cand
    return best


def _span_basis(factors: np.ndarray, gram_tol: float) -> np.ndarray | None:
    """Orthonormal basis of the row span, dropping dependent directions.

    Independence is a property of directions, so rows are normalized
    before the rank decision; a direction whose Gram eigenvalue (squared
    singular value of the normalized stack) falls below ``gram_tol``
    relative to the largest is dependent up to roundoff and is dropped.
    The Galerkin updates depend only on the span, so re-expressing the
    factors in the resulting orthonormal basis leaves the projection
    unchanged while keeping the block systems well conditioned.
    """
    norms = np.linalg.norm(factors, axis=1)
    unit = factors[norms > 0]
    if not len(unit):
        return None
    unit = unit / np.linalg.norm(unit, axis=1)[:, None]
    _, s, vt = np.linalg.svd(unit, full_matrices=False)
    keep = s ** 2 > gram_tol * s[0] ** 2
    return vt[keep]


def _block_meso_system(op: SeparatedOperator, cell_factors: np.ndarray):
    """Matrix of the joint meso update in R^(n * n_cells)."""
    n = cell_factors.shape[0]
    ni = op.n_cells
    gs = np.stack([cell_factors @ (term.cell @ cell_factors.T)
                   for term in op.terms])
    rows, cols, vals = [], [], []
    l_idx = np.arange(n)
    for r, c, v_stack, idx in _meso_groups(op):
        contrib = np.einsum("tlk,te->lke", gs[idx], v_stack)
        rr = (l_idx[:, None, None] * ni + r[None, None, :])
        cc = (l_idx[None, :, None] * ni + c[None, None, :])
        rows.append(np.broadcast_to(rr, contrib.shape).ravel())
        cols.append(np.broadcast_to(cc, contrib.shape).ravel())
        vals.append(contrib.ravel())
    big = sp.csr_matrix((np.concatenate(vals),
                         (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n * ni, n * ni))
    g_big = None
    if op.phi is not None:
        g_big = np.kron(cell_factors @ op.phi[1], op.phi[0])
    return big, g_big


def _block_cell_system(op: SeparatedOperator, meso_factors: np.ndarray):
    """Matrix of the joint cell update in R^(n * cell_dim)."""
    hs = np.stack([meso_factors @ (term.meso @ meso_factors.T)
                   for term in op.terms])
    big = None
    for cell_mat, idx in _cell_groups(op):
        h = np.sum(hs[idx], axis=0)
        contrib = sp.kron(sp.csr_matrix(h), cell_mat)
        big = contrib if big is None else big + contrib
    g_big = None
    if op.phi is not None:
        g_big = np.kron(meso_factors @ op.phi[0], op.phi[1])
    return big.tocsr(), g_big


def update_meso(op: SeparatedOperator, rhs: SeparatedRHS,
                u: SeparatedTensor,
                gram_tol: float = 1e-10) -> SeparatedTensor:
    """Galerkin re-solve of all meso vectors, cell factors fixed.

    The cell factors are replaced by an orthonormal basis of their span
    (dependent factors dropped at the Gram tolerance), which leaves the
    projection unchanged but keeps the joint system well conditioned.
    """
    if not u.rank:
        return u
    cells = _span_basis(u.cell_stack(), gram_tol)
    if cells is None:
        return SeparatedTensor([], u.n_cells, u.cell_dim)
    big, g_big = _block_meso_system(op, cells)
    b_mat = rhs.to_matrix()
    rhs_big = (b_mat @ cells.T).T.ravel()
    x = _solve_with_rank_one(big, g_big, rhs_big)
    n = cells.shape[0]
    mesos = x.reshape(n, op.n_cells)
    out = SeparatedTensor([(mesos[k].copy(), cells[k].copy())
                           for k in range(n)], u.n_cells, u.cell_dim)
    return out.normalized().pruned()


def update_cell(op: SeparatedOperator, rhs: SeparatedRHS,
                u: SeparatedTensor,
                gram_tol: float = 1e-10) -> SeparatedTensor:
    """Galerkin re-solve of all cell factors, meso vectors fixed.

    Mirror image of :func:`update_meso`; the meso vectors are
    orthonormalized before the joint solve.
    """
    if not u.rank:
        return u
    mesos = _span_basis(u.meso_stack(), gram_tol)
    if mesos is None:
        return SeparatedTensor([], u.n_cells, u.cell_dim)
    big, g_big = _block_cell_system(op, mesos)
    b_mat = rhs.to_matrix()
    rhs_big = (b_mat.T @ mesos.T).T.ravel()
    x = _solve_with_rank_one(big, g_big, rhs_big)
    n = mesos.shape[0]
    cells = x.reshape(n, op.cell_dim)
    out = SeparatedTensor([(mesos[k].copy(), cells[k].copy())
                           for k in range(n)], u.n_cells, u.cell_dim)
    return out.normalized().pruned()


def j_value(op: SeparatedOperator, b_mat: np.ndarray,
            u_mat: np.ndarray) -> float:
    """Energy functional J(u) = 1/2 u' A u - b' u (matricized)."""
    return float(0.5 * np.sum(u_mat * op.apply_mat(u_mat))
                 - np.sum(b_mat * u_mat))


def _residual_norm_fn(op: SeparatedOperator, norm: str):
    """Norm of matricized residual functionals.

    'euclidean' is the plain coefficient norm; 'h1_dual' realizes the
    dual norm of the tensor-space inner product (Euclidean over cells,
    H1 over the reference cell), weighting coefficients by the inverse
    cell H1 Gram matrix.
    """
    if norm == "euclidean":
        return lambda r: float(np.linalg.norm(r))
    if norm != "h1_dual":
        raise ValueError(f"unknown residual norm {norm!r}")
    key = "h1_gram_lu"
    if key not in op._cache:
        from .cell import mass_matrix, stiffness_matrix
        gram = (mass_matrix(op.space)
                + stiffness_matrix(op.space, np.ones(op.cell_dim)))
        op._cache[key] = splu(gram.tocsc())
    lu = op._cache[key]

    def dual(r):
        return float(np.sqrt(max(np.sum(r * lu.solve(r.T).T), 0.0)))
    return dual


def relative_residual(op: SeparatedOperator, rhs: SeparatedRHS,
                      u: SeparatedTensor | np.ndarray,
                      norm: str = "euclidean") -> float:
    """Residual norm of the matricized system over that of the rhs.

    ``norm`` selects the coefficient Euclidean norm (default) or the
    'h1_dual' tensor-space dual norm.  Falls back to the absolute
    residual norm when the right-hand side is zero (flagged degenerate
    mode).
    """
    b_mat = rhs.to_matrix()
    u_mat = u.to_matrix() if hasattr(u, "to_matrix") else np.asarray(u)
    if u_mat.ndim == 1:
        u_mat = u_mat.reshape(op.n_cells, op.cell_dim)
    nfn = _residual_norm_fn(op, norm)
    r = b_mat - op.apply_mat(u_mat)
    bnorm = nfn(b_mat)
    rnorm = nfn(r)
    return rnorm / bnorm if bnorm > 0 else rnorm


def _orthogonality(residual_mat: np.ndarray, factors: np.ndarray,
                   against: str, b_norm: float) -> float:
    """Largest residual contraction against a fixed factor basis,
    relative to the rhs scale."""
    worst = 0.0
    for f in factors:
        fn = np.linalg.norm(f)
        if fn == 0 or b_norm == 0:
            continue
        if against == "cell":
            val = np.linalg.norm(residual_mat @ f)
        else:
            val = np.linalg.norm(residual_mat.T @ f)
        worst = max(worst, float(val) / (b_norm * fn))
    return worst


def _check_j(trace: SolveTrace, stage: str, j_old: float, j_new: float,
             cfg: GreedyConfig) -> None:
    trace.j_history.append((stage, j_new))
    scale = 1.0 + abs(j_old)
    if j_new > j_old + cfg.j_abort * scale:
        raise SolverDiagnosticError(
            f"J increased at {stage} ({j_old:.6g} -> {j_new:.6g}); "
            f"operator appears non-coercive (penalty too small?)")


def greedy_solve(op: SeparatedOperator, rhs: SeparatedRHS, tol: float,
                 max_rank: int = 64,
                 cfg: GreedyConfig | None = None
                 ) -> tuple[SeparatedTensor, SolveTrace]:
    """Greedy rank-one solve to a relative-residual tolerance.

    Each step runs the alternating-minimisation correction followed by
    the two Galerkin updates, then checks the residual.  Returns the
    iterate and its trace; ``trace.converged`` is False when the rank
    budget is exhausted first.  Deterministic for a fixed config seed.
    """
    if tol < 0:
        raise ValueError(f"tolerance must be nonnegative, got {tol}")
    cfg = cfg or GreedyConfig()
    rng = np.random.default_rng(cfg.seed)
    trace = SolveTrace(sigma=op.sigma)

    nfn = _residual_norm_fn(op, cfg.residual_norm)
    b_mat = rhs.to_matrix()
    b_norm = nfn(b_mat)
    b_norm_eucl = float(np.linalg.norm(b_mat))
    u = SeparatedTensor([], op.n_cells, op.cell_dim)
    residual = b_mat.copy()
    j_cur = 0.0
    trace.j_history.append(("start", j_cur))

    def rel(r_mat):
        rn = nfn(r_mat)
        return rn / b_norm if b_norm > 0 else rn

    if rel(residual) <= tol:
        trace.converged = True
        return u, trace

    for _ in range(max_rank):
        t0 = time.perf_counter()
        v_meso, v_cell, sweeps, j_delta = als_rank_one(
            op, rhs, u, max_iters=cfg.als_max_sweeps,
            j_rel_tol=cfg.als_j_rel_tol, residual_mat=residual,
            j_prev=j_cur, rng=rng, init=cfg.als_init,
            restarts=cfg.als_restarts)
        j_after = j_cur + j_delta
        _check_j(trace, "als", j_cur, j_after, cfg)
        if j_after > j_cur + cfg.j_slack * (1.0 + abs(j_cur)):
            # correction would increase J within roundoff; stagnation
            break
        scale = np.linalg.norm(v_meso)
        if scale == 0 or not np.any(v_cell):
            break
        u = SeparatedTensor(u.terms + [(v_meso / scale, v_cell * scale)],
                            op.n_cells, op.cell_dim)

        u = update_meso(op, rhs, u, gram_tol=cfg.gram_tol)
        u_mat = u.to_matrix()
        residual = b_mat - op.apply_mat(u_mat)
        j_mid = j_value(op, b_mat, u_mat)
        _check_j(trace, "update_meso", j_after, j_mid, cfg)
        orth_meso = _orthogonality(residual, u.cell_stack(), "cell",
                                   b_norm_eucl)

        u = update_cell(op, rhs, u, gram_tol=cfg.gram_tol)
        u_mat = u.to_matrix()
        residual = b_mat - op.apply_mat(u_mat)
        j_cur = j_value(op, b_mat, u_mat)
        _check_j(trace, "update_cell", j_mid, j_cur, cfg)
        orth_cell = _orthogonality(residual, u.meso_stack(), "meso",
                                   b_norm_eucl)

        res = rel(residual)
        trace.rows.append(TraceRow(
            rank=u.rank, residual=res, j_value=j_cur, als_iters=sweeps,
            seconds=time.perf_counter() - t0,
            orth_meso=orth_meso, orth_cell=orth_cell))
        if res <= tol:
            trace.converged = True
            break
    return u, trace
