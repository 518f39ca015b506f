"""Conforming virtual element solver for polyharmonic equations on polygons."""

from .element import (
    ElementConfig,
    ElementError,
    ElementWorkspace,
    build_element,
    dimension_count,
    dump_matrices,
    interpolate_dofs,
)
from .mesh import (
    MeshError,
    PolygonalMesh,
    audit_quality,
    generate_mesh,
    load_mesh,
    save_mesh,
)
from .system import (
    BoundaryData,
    GlobalDofMap,
    SolveReport,
    SolverError,
    assemble,
    evaluate_solution,
    interpolate_global,
    solve,
)
from .verify import (
    CASE_NAMES,
    ConvergenceTable,
    ErrorReport,
    ManufacturedCase,
    builtin_case,
    compute_errors,
    run_convergence,
    run_t_variant,
)

__all__ = [
    "BoundaryData",
    "CASE_NAMES",
    "ConvergenceTable",
    "ElementConfig",
    "ElementError",
    "ElementWorkspace",
    "ErrorReport",
    "GlobalDofMap",
    "ManufacturedCase",
    "MeshError",
    "PolygonalMesh",
    "SolveReport",
    "SolverError",
    "assemble",
    "audit_quality",
    "build_element",
    "builtin_case",
    "compute_errors",
    "dimension_count",
    "dump_matrices",
    "evaluate_solution",
    "generate_mesh",
    "interpolate_dofs",
    "interpolate_global",
    "load_mesh",
    "run_convergence",
    "run_t_variant",
    "save_mesh",
    "solve",
]
