"""cnsfv: mixed finite-element / finite-volume solver for compressible
isentropic viscous flow with general inflow/outflow boundary data, plus a
verification harness for the discrete structure the scheme guarantees
(density positivity, mass and energy balance, renormalized continuity,
consistency-residual decay, and error convergence against smooth flows).
"""

from .mesh import (TetMesh, BoundaryClassification, build_mesh,
                   structured_box_mesh, classify_boundary,
                   read_mesh_file, write_mesh_file)
from .spaces import (QField, CRField, project_Q, project_V, grad_h, div_h,
                     jump_avg, tri_quadrature, tet_quadrature)
from .flux import face_normal_velocity, upwind_value, up_operator, flux
from .physics import (PressureLaw, RegularizationParams, RegularizedLaw,
                      bregman, rel_entropy, relative_energy)
from .scheme import (SchemeParams, BoundaryData, State, StepInfo,
                     ConvergenceError, step, run)
from . import diagnostics, manufactured

__version__ = "0.1.0"

__all__ = [
    "TetMesh", "BoundaryClassification", "build_mesh",
    "structured_box_mesh", "classify_boundary", "read_mesh_file",
    "write_mesh_file",
    "QField", "CRField", "project_Q", "project_V", "grad_h", "div_h",
    "jump_avg", "tri_quadrature", "tet_quadrature",
    "face_normal_velocity", "upwind_value", "up_operator", "flux",
    "PressureLaw", "RegularizationParams", "RegularizedLaw", "bregman",
    "rel_entropy", "relative_energy",
    "SchemeParams", "BoundaryData", "State", "StepInfo",
    "ConvergenceError", "step", "run",
    "diagnostics", "manufactured",
    "__version__",
]
