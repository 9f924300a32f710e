"""Ultra-weak three-field mixed finite elements for fourth-order problems.

The scalar unknown ``u`` lives in discontinuous Lagrange ``P_k``, the
gradient ``sigma`` and the multiplier ``phi`` in Raviart-Thomas ``RT_k``
(``k`` in {0, 1}) on triangle meshes.  The stationary biharmonic problem and
the extended Fisher-Kolmogorov equation (backward Euler + Newton) are
supported, with simply supported or Cahn-Hilliard boundary conditions.
"""
from importlib.metadata import PackageNotFoundError, version as _version

from .assembly import CAHN_HILLIARD, SIMPLY_SUPPORTED, SingularSystemError
from .mesh import Mesh, build_unit_square_mesh, mesh_size, read_mesh, write_mesh
from .solvers import (
    ConfigurationError,
    NewtonDivergence,
    ProblemConfig,
    run_efk,
    solve_biharmonic,
)
from .spaces import build_dg_space, build_rt_space
from .verify import make_case, run_convergence_study, run_gamma_sweep

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout
    __version__ = "0.1.0"

__all__ = [
    "CAHN_HILLIARD",
    "SIMPLY_SUPPORTED",
    "ConfigurationError",
    "Mesh",
    "NewtonDivergence",
    "ProblemConfig",
    "SingularSystemError",
    "build_dg_space",
    "build_rt_space",
    "build_unit_square_mesh",
    "make_case",
    "mesh_size",
    "read_mesh",
    "run_convergence_study",
    "run_efk",
    "run_gamma_sweep",
    "solve_biharmonic",
    "write_mesh",
]
