"""Mesoscopic cell grid with periodic face topology.

The domain is a rectangle tiled by ``nx * ny`` identical rectangular cells.
Cells are identified by a linear index ``i = iy * nx + ix`` (x fastest).
The tiling is periodic in both directions: every cell has exactly four
face-incidences, one per orientation ``q`` in {+1, -1, +2, -2}, where the
face of orientation ``q`` is the one whose outward normal is ``e_q``
(``e_{-q} = -e_q``).  External faces are identified with their opposite
face, so a 2D periodic grid with ``#I`` cells carries exactly ``2 * #I``
geometric faces.  Degenerate grids (``nx == 1`` or ``ny == 1``) produce
self-wrapped faces coupling a cell to itself.

The module also provides the mesoscopic matrix algebra used by the tensor
decompositions of the SWIP operator: orientation-selection matrices
``chi_matrix`` (one nonzero per row, at the q-neighbor) and the row-sum
lumping ``row_sum_diag``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

ORIENTATIONS = (1, -1, 2, -2)


@dataclass(frozen=True)
class Face:
    """One geometric face of the periodic mesoscopic grid.

    ``i <= j`` are the adjacent cell indices (equal for self-wrapped
    faces).  ``q`` is the orientation of the face as seen from cell ``i``:
    the outward normal of ``D_i`` on this face is ``e_q``.  ``measure``
    is the face length.
    """

    i: int
    j: int
    q: int
    is_wrapped: bool
    measure: float


@dataclass(frozen=True)
class MesoGrid:
    """Periodic grid of ``nx * ny`` translated copies of a reference cell."""

    nx: int
    ny: int
    cell_extent: tuple[float, float]
    faces: tuple[Face, ...]

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    def cell_index(self, ix: int, iy: int) -> int:
        return (iy % self.ny) * self.nx + (ix % self.nx)

    def cell_coords(self, i: int) -> tuple[int, int]:
        return i % self.nx, i // self.nx

    def cell_origin(self, i: int) -> tuple[float, float]:
        ix, iy = self.cell_coords(i)
        return ix * self.cell_extent[0], iy * self.cell_extent[1]

    @property
    def domain_extent(self) -> tuple[float, float]:
        return self.nx * self.cell_extent[0], self.ny * self.cell_extent[1]

    def neighbor(self, i: int, q: int) -> int:
        """Cell adjacent to ``i`` across its face of orientation ``q``."""
        if q not in ORIENTATIONS:
            raise ValueError(f"invalid orientation {q!r}")
        ix, iy = self.cell_coords(i)
        if q == 1:
            ix += 1
        elif q == -1:
            ix -= 1
        elif q == 2:
            iy += 1
        else:
            iy -= 1
        return self.cell_index(ix, iy)

    def neighbor_array(self, q: int) -> np.ndarray:
        """Vector of q-neighbors for every cell, in cell order."""
        return np.array([self.neighbor(i, q) for i in range(self.n_cells)])

    def face_measure(self, q: int) -> float:
        """Measure of any face of orientation ``q`` (faces are congruent)."""
        return self.cell_extent[1] if abs(q) == 1 else self.cell_extent[0]


def build_grid(nx: int, ny: int, cell_extent: tuple[float, float]) -> MesoGrid:
    """Build the periodic mesoscopic grid.

    Each geometric face is listed exactly once: for every cell ``c`` and
    positive orientation ``q`` in {+1, +2}, the face between ``c`` and its
    q-neighbor is stored under the lower of the two cell indices, with the
    orientation re-expressed from that cell's point of view.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"cell counts must be positive, got ({nx}, {ny})")
    ex, ey = float(cell_extent[0]), float(cell_extent[1])
    if ex <= 0 or ey <= 0:
        raise ValueError(f"cell extents must be positive, got {cell_extent}")

    grid = MesoGrid(nx=nx, ny=ny, cell_extent=(ex, ey), faces=())
    faces = []
    for c in range(nx * ny):
        ix, iy = grid.cell_coords(c)
        for q in (1, 2):
            n = grid.neighbor(c, q)
            if q == 1:
                wrapped = ix == nx - 1
            else:
                wrapped = iy == ny - 1
            if c <= n:
                i, j, qf = c, n, q
            else:
                # Same geometric face seen from the lower-indexed cell,
                # whose outward normal there is -e_q.
                i, j, qf = n, c, -q
            faces.append(Face(i=i, j=j, q=qf, is_wrapped=wrapped,
                              measure=grid.face_measure(q)))
    return MesoGrid(nx=nx, ny=ny, cell_extent=(ex, ey), faces=tuple(faces))


def chi_matrix(grid: MesoGrid, q: int,
               pair_weight: Callable[[int, int], float]) -> sp.csr_matrix:
    """Orientation-selection meso matrix.

    Entry ``(i, j)`` equals ``pair_weight(i, j)`` exactly when the face of
    cell ``i`` with outward normal ``e_q`` abuts cell ``j`` (periodic wrap
    included), and zero elsewhere.  Periodic grids have a unique q-neighbor
    per cell, so the result has exactly one stored entry per row.
    """
    if q not in ORIENTATIONS:
        raise ValueError(f"invalid orientation {q!r}")
    n = grid.n_cells
    rows = np.arange(n)
    cols = grid.neighbor_array(q)
    vals = np.array([pair_weight(int(i), int(j)) for i, j in zip(rows, cols)],
                    dtype=float)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def row_sum_diag(a: sp.spmatrix) -> sp.csr_matrix:
    """Diagonal matrix of the row sums of a square meso matrix."""
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    sums = np.asarray(a.sum(axis=1)).ravel()
    return sp.diags(sums, format="csr")
