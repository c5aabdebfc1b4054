"""Two-level multiscale finite elements (HMM with L2-projection compression / LOD)."""

__version__ = '0.1.0'

from .mesh import TwoLevelMesh, Patch, build_two_level, nodal_patch
from .coefficient import CoefficientField, make_coefficient
from .fem import (assemble_stiffness, assemble_mass, assemble_load, prolongation,
                  energy, energy_norm)
from .decomposition import (ProjectionKit, build_projection_kit, apply_P0, solve_constrained,
                            ConstrainedSolver, SaddleSolution)
from .correctors import (Corrector, MultiscaleBasis, compute_corrector, compute_correctors,
                         compute_remainder, build_basis, decay_profile)
from .solver import SolveResult, solve_reference, solve_multiscale, error_report
