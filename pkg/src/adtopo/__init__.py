"""Density-based topology optimization on a small reverse-mode AD engine.

Objectives are written with the traced primitives in :mod:`adtopo.adgraph`
and differentiated by :func:`value_and_grad`; designs are updated with MMA.
"""
from .adgraph import (ADError, DiffValue, NonFiniteError, ShapeError, SingularSystemError,
                      Tape, UnknownPrimitiveError, count_solves, linear_solve, value_and_grad)
from .constraints import LengthScaleParams, global_volume_constraint, max_length_scale_constraint
from .driver import (RunConfig, RunHistory, export_density, gradient_check, load_config,
                     run_optimization, timing_harness)
from .fem import assemble, element_base_stiffness, solve_with_bc
from .kernels import BACKEND
from .mesh import BoundaryConditions, GridMesh, build_grid, preset_problem
from .mma import MMAParams, MMAState, mma_update
from .models import (DesignPipeline, FilterOperator, MaterialParams, ProjectionParams,
                     build_filter, density_filter, material_model, projection_filter)
from .problems import (HomogenizedTensor, Setup, analytical_compliance_sensitivity, cm_objective,
                       compute_compliance, homogenize, micro_objective)

__version__ = "0.1.0"

__all__ = [
    "ADError", "BACKEND", "BoundaryConditions", "DesignPipeline", "DiffValue", "FilterOperator",
    "GridMesh", "HomogenizedTensor", "LengthScaleParams", "MMAParams", "MMAState",
    "MaterialParams", "NonFiniteError", "ProjectionParams", "RunConfig", "RunHistory", "Setup",
    "ShapeError", "SingularSystemError", "Tape", "UnknownPrimitiveError",
    "analytical_compliance_sensitivity", "assemble", "build_filter", "build_grid", "cm_objective",
    "compute_compliance", "count_solves", "density_filter", "element_base_stiffness",
    "export_density", "global_volume_constraint", "gradient_check", "homogenize",
    "linear_solve", "load_config", "material_model", "max_length_scale_constraint",
    "micro_objective", "mma_update", "preset_problem", "projection_filter", "run_optimization",
    "solve_with_bc", "timing_harness", "value_and_grad",
]
