"""Adaptive finite elements for stationary ALE fluid-structure interaction.

The package solves the monolithic stationary FSI problem with Q2/Q2/Q1
elements on adaptively refined quadrilateral meshes with hanging nodes and
controls several goal functionals at once through a combined functional
and a dual-weighted residual estimator localized with a partition of unity.

Modules
-------
mesh, fespace, linsolve, assembly, fsi_model, goals, multigoal, dwr, adapt,
cases, cli_io
"""

__version__ = "0.1.0"

from .adapt import AdaptParams, LevelReport, adaptive_loop, mark  # noqa: E402
from .cases import CaseConfig, builtin_case, case_from_text, case_to_text, load_case  # noqa: E402
from .fsi_model import BoundaryConditions, FsiProblem, MaterialParams  # noqa: E402
from .mesh import QuadMesh, read_mesh  # noqa: E402

__all__ = ["AdaptParams", "BoundaryConditions", "CaseConfig", "FsiProblem", "LevelReport",
           "MaterialParams", "QuadMesh", "adaptive_loop", "builtin_case", "case_from_text",
           "case_to_text", "load_case", "mark", "read_mesh", "__version__"]
