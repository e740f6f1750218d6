"""Greedy low-rank tensor solver for diffusion on quasi-periodic media.

The domain is a periodic tiling of a reference cell; fields and operators
are represented in separated (Kronecker) form over (cell index) x (cell
space).  A symmetric weighted interior penalty dG discretization couples
cells through their faces, and a greedy rank-one algorithm with Galerkin
updates solves the resulting tensor-structured system.
"""

from .grid import Face, MesoGrid, build_grid, chi_matrix, row_sum_diag
from .cell import (CellSpace, build_cell_space, mass_matrix,
                   stiffness_matrix, load_vector, boundary_mass,
                   boundary_coupling, boundary_flux, boundary_flux_coupling,
                   trace_constant, max_trace_constant)
from .media import (SeparatedField, CellBounds, bernoulli_conductivity,
                    pattern, cell_bounds, corrector_source, uniform_source,
                    peak_source, svd_compress, save_field, load_field)
from .operator import (SwipWeights, SeparatedOperator, SeparatedRHS,
                       compute_weights, sigma_lower_bound, assemble_operator,
                       assemble_rhs, monolithic_assemble, energy_norm)
from .solver import (SeparatedTensor, SolveTrace, GreedyConfig,
                     SolverDiagnosticError, als_rank_one, update_meso,
                     update_cell, relative_residual, greedy_solve)
from .reference import (FullSolution, direct_dg_solve, cg_fem_solve, compare)

__all__ = [
    "Face", "MesoGrid", "build_grid", "chi_matrix", "row_sum_diag",
    "CellSpace", "build_cell_space", "mass_matrix", "stiffness_matrix",
    "load_vector", "boundary_mass", "boundary_coupling", "boundary_flux",
    "boundary_flux_coupling", "trace_constant", "max_trace_constant",
    "SeparatedField", "CellBounds", "bernoulli_conductivity", "pattern",
    "cell_bounds", "corrector_source", "uniform_source", "peak_source",
    "svd_compress", "save_field", "load_field",
    "SwipWeights", "SeparatedOperator", "SeparatedRHS", "compute_weights",
    "sigma_lower_bound", "assemble_operator", "assemble_rhs",
    "monolithic_assemble", "energy_norm",
    "SeparatedTensor", "SolveTrace", "GreedyConfig", "SolverDiagnosticError",
    "als_rank_one", "update_meso", "update_cell", "relative_residual",
    "greedy_solve",
    "FullSolution", "direct_dg_solve", "cg_fem_solve", "compare",
]
