"""Rank-structured conductivity and source fields.

A scalar field on (cell index) x (reference cell) is stored in separated
form: a list of (meso vector over cells, nodal cell field) pairs whose
outer-product sum reproduces the field.  Quasi-periodic two-phase media
are built from a Bernoulli cell indicator and two cell patterns, so their
rank is at most 2; full-rank sources are compressed by truncated SVD.

Set indicators are realized as nodal interpolants (1 at nodes inside the
feature, 0 outside), giving a one-element-wide continuous ramp.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cell import CellSpace, derivative_x_projected
from .grid import MesoGrid

PATTERN_KINDS = ("missing_fibre", "undulating_fibre", "missing_inclusion")

# centerline deviation of the bent fibre in the undulating pattern
_UNDULATION_AMPLITUDE = 0.15


@dataclass
class SeparatedField:
    """Rank-structured scalar field: sum of (meso vector) x (cell field)."""

    terms: list[tuple[np.ndarray, np.ndarray]]

    @property
    def rank(self) -> int:
        return len(self.terms)

    def to_matrix(self) -> np.ndarray:
        """Dense (#cells, cell dim) table of nodal values."""
        if not self.terms:
            raise ValueError("empty field has no shape")
        out = np.zeros((len(self.terms[0][0]), len(self.terms[0][1])))
        for meso, cell in self.terms:
            out += np.outer(meso, cell)
        return out

    def evaluate_cell(self, i: int) -> np.ndarray:
        """Nodal values of the field restricted to cell ``i``."""
        out = np.zeros(len(self.terms[0][1]))
        for meso, cell in self.terms:
            out += meso[i] * cell
        return out

    def pruned(self, tol: float = 0.0) -> "SeparatedField":
        kept = [(m, c) for m, c in self.terms
                if np.linalg.norm(m) > tol and np.linalg.norm(c) > tol]
        return SeparatedField(kept)


@dataclass
class CellBounds:
    """Per-cell lower/upper bounds of the conductivity."""

    k_minus: np.ndarray
    k_plus: np.ndarray


def _cell_uniform(seed: int, i: int) -> float:
    """Counter-based uniform draw indexed by cell id, so grids of
    different sizes share draw prefixes."""
    bits = np.random.Philox(key=np.uint64(seed),
                            counter=[0, 0, 0, np.uint64(i)])
    return float(np.random.Generator(bits).random())


def bernoulli_cells(grid: MesoGrid, p: float, seed: int) -> np.ndarray:
    """Sound/faulty indicator B per cell: P(B(i) = 0) = p."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"defect probability must lie in [0, 1], got {p}")
    u = np.array([_cell_uniform(seed, i) for i in range(grid.n_cells)])
    return (u >= p).astype(float)


def bernoulli_conductivity(grid: MesoGrid, k1: np.ndarray, k2: np.ndarray,
                           p: float, seed: int) -> SeparatedField:
    """Two-phase conductivity B x K1 + (1 - B) x K2 with iid Bernoulli B.

    Rank is at most 2, and 1 when B is constant.  Reproducible for a
    fixed seed; draws are indexed by cell id.
    """
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    if np.min(k1) <= 0 or np.min(k2) <= 0:
        raise ValueError("conductivity patterns must be strictly positive")
    b = bernoulli_cells(grid, p, seed)
    return SeparatedField([(b, k1), (1.0 - b, k2)]).pruned()


def pattern(kind: str, space: CellSpace) -> tuple[np.ndarray, np.ndarray]:
    """Sound/faulty conductivity patterns (K1, K2) for the test media.

    missing_fibre      strip [0.25, 0.75] x (full height) on Y = ]0,1[x]0,5[;
                       faulty cells have no fibre.
    undulating_fibre   crossed strips of width 1 - 2^(-1/2) on the unit
                       square; the faulty cross has a bent horizontal arm.
    missing_inclusion  square [(2-sqrt 2)/4, (2+sqrt 2)/4]^2 on the unit
                       square; absent in faulty cells.
    """
    x, y = space.node_x, space.node_y
    tol = 1e-12

    def expect_extent(ex, ey):
        if abs(space.extent[0] - ex) > tol or abs(space.extent[1] - ey) > tol:
            raise ValueError(
                f"pattern {kind!r} expects cell extent ({ex}, {ey}), "
                f"got {space.extent}")

    if kind == "missing_fibre":
        expect_extent(1.0, 5.0)
        chi = ((x >= 0.25 - tol) & (x <= 0.75 + tol)).astype(float)
        return 1.0 + 99.0 * chi, np.ones(space.dim)
    if kind == "undulating_fibre":
        expect_extent(1.0, 1.0)
        w = 1.0 - 2.0 ** -0.5
        vert = np.abs(x - 0.5) <= w / 2 + tol
        horiz = np.abs(y - 0.5) <= w / 2 + tol
        chi1 = (vert | horiz).astype(float)
        bent_mid = 0.5 + _UNDULATION_AMPLITUDE * np.sin(2 * np.pi * x)
        bent = np.abs(y - bent_mid) <= w / 2 + tol
        chi2 = (vert | bent).astype(float)
        return 1.0 + 99.0 * chi1, 1.0 + 99.0 * chi2
    if kind == "missing_inclusion":
        expect_extent(1.0, 1.0)
        lo = (2.0 - np.sqrt(2.0)) / 4.0
        hi = (2.0 + np.sqrt(2.0)) / 4.0
        inside = ((x >= lo - tol) & (x <= hi + tol)
                  & (y >= lo - tol) & (y <= hi + tol))
        chi = inside.astype(float)
        return 1.0 + 99.0 * chi, np.ones(space.dim)
    raise ValueError(f"unknown pattern kind {kind!r}")


def cell_bounds(k: SeparatedField) -> CellBounds:
    """Nodal min/max of the conductivity per cell (Q1 interpolants attain
    their extrema at nodes).  Rejects nonpositive conductivities."""
    vals = k.to_matrix()
    k_minus = vals.min(axis=1)
    k_plus = vals.max(axis=1)
    if np.min(k_minus) <= 0:
        bad = int(np.argmin(k_minus))
        raise ValueError(
            f"conductivity is not strictly positive on cell {bad} "
            f"(min {k_minus[bad]:g})")
    return CellBounds(k_minus=k_minus, k_plus=k_plus)


def corrector_source(k: SeparatedField, space: CellSpace) -> SeparatedField:
    """Source d/dx of the conductivity, term by term.

    Each term (kI, kY) maps to (kI, d1 kY) with the derivative taken
    element-wise and projected back to nodes by a lumped-mass L2
    projection.  The distributional part across cell interfaces is
    dropped, which keeps the source rank equal to the conductivity rank.
    """
    terms = [(meso.copy(), derivative_x_projected(space, cell))
             for meso, cell in k.terms]
    return SeparatedField(terms).pruned()


def uniform_source(grid: MesoGrid, space: CellSpace) -> SeparatedField:
    """Unit source, rank 1."""
    return SeparatedField([(np.ones(grid.n_cells), np.ones(space.dim))])


def peak_source(grid: MesoGrid, space: CellSpace,
                theta: tuple[float, float] | None = None,
                decay: float = 10.0) -> np.ndarray:
    """Exponential peak exp(-decay * |x - theta|) on the full domain.

    Returns the full (#cells, cell dim) nodal table; compress with
    :func:`svd_compress` before assembling a right-hand side.
    """
    if theta is None:
        dx, dy = grid.domain_extent
        theta = (dx / 2.0, dy / 2.0)
    out = np.empty((grid.n_cells, space.dim))
    for i in range(grid.n_cells):
        ox, oy = grid.cell_origin(i)
        r = np.hypot(ox + space.node_x - theta[0],
                     oy + space.node_y - theta[1])
        out[i] = np.exp(-decay * r)
    return out


def svd_compress(full: np.ndarray, tol: float) -> SeparatedField:
    """Smallest-rank truncated SVD with relative Frobenius error <= tol."""
    if not 0.0 < tol < 1.0:
        raise ValueError(f"tolerance must lie in (0, 1), got {tol}")
    full = np.asarray(full, dtype=float)
    u, s, vt = np.linalg.svd(full, full_matrices=False)
    total = float(np.linalg.norm(s))
    if total == 0.0:
        return SeparatedField([])
    # tail[r] = Frobenius error of the rank-r truncation
    tail = np.sqrt(np.concatenate([np.cumsum(s[::-1] ** 2)[::-1], [0.0]]))
    rank = int(np.searchsorted(-tail, -tol * total))
    rank = max(rank, 1)
    terms = [(u[:, k].copy(), s[k] * vt[k].copy()) for k in range(rank)]
    return SeparatedField(terms)


def save_field(path, grid: MesoGrid, space: CellSpace,
               field: SeparatedField | np.ndarray) -> None:
    """Write a field as a delimited-text table with a geometry header."""
    mat = field.to_matrix() if isinstance(field, SeparatedField) else field
    mat = np.asarray(mat, dtype=float)
    header = (f"nx={grid.nx} ny={grid.ny} "
              f"n_el={space.n_el[0]}x{space.n_el[1]} "
              f"extent={space.extent[0]:.17g}x{space.extent[1]:.17g}")
    np.savetxt(path, mat, header=header, fmt="%.17g")


def load_field(path) -> tuple[dict, np.ndarray]:
    """Read a field table written by :func:`save_field`."""
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("#"):
        raise ValueError(f"{path}: missing field header")
    meta = {}
    for tok in first[1:].split():
        key, _, val = tok.partition("=")
        if "x" in val:
            parts = val.split("x")
            meta[key] = tuple(float(p) if "." in p or "e" in p else int(p)
                              for p in parts)
        else:
            meta[key] = float(val) if "." in val else int(val)
    mat = np.loadtxt(path, ndmin=2)
    return meta, mat
