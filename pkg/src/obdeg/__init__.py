"""Degree theory, continuation and solvers for oblique boundary value problems."""

__version__ = "0.1.0"

from .domain import (
    DiscreteDomain,
    DomainFoliation,
    RadiusFunction,
    build_disk,
    build_star,
    foliation_domain,
)
from .calculus import (
    BoundaryField,
    ScalarField,
    apply_S,
    apply_T,
    gradient,
    hessian,
    solve_S,
    solve_T,
    tangential_laplacian,
)
from .problem import (
    LinearPair,
    ObliqueProblem,
    ellipticity_margin,
    linearize,
    obliqueness_margin,
    problem_by_name,
    residual,
)
from .degree import (
    DegreeReport,
    degree_at_zero,
    degree_linear,
    degree_sum,
    homotopy_invariance_check,
    multistart_tracker,
    negative_eigencount,
    product_formula_check,
)
from .linops import (
    assemble_LN,
    find_N0,
    frozen_split,
    rellich_ratio,
    resolvent_symbol_bound,
    semifiniteness_mu,
)
from .continuation import (
    ContinuationSchedule,
    NewtonOptions,
    SolvePath,
    continue_homotopy,
    newton_solve,
)
from .reflector import (
    ReflectorProblem,
    boundary_defect,
    ma_residual,
    manufacture,
    mass_balance,
    reflection_jacobian,
    reflection_map,
    solve_reflector,
)
from .yamabe import YamabeConfig, solve_yamabe, yamabe_residual

__all__ = [
    "DiscreteDomain",
    "DomainFoliation",
    "RadiusFunction",
    "build_disk",
    "build_star",
    "foliation_domain",
    "BoundaryField",
    "ScalarField",
    "apply_S",
    "apply_T",
    "gradient",
    "hessian",
    "solve_S",
    "solve_T",
    "tangential_laplacian",
    "LinearPair",
    "ObliqueProblem",
    "ellipticity_margin",
    "linearize",
    "obliqueness_margin",
    "problem_by_name",
    "residual",
    "DegreeReport",
    "degree_at_zero",
    "degree_linear",
    "degree_sum",
    "homotopy_invariance_check",
    "multistart_tracker",
    "negative_eigencount",
    "product_formula_check",
    "assemble_LN",
    "find_N0",
    "frozen_split",
    "rellich_ratio",
    "resolvent_symbol_bound",
    "semifiniteness_mu",
    "ContinuationSchedule",
    "NewtonOptions",
    "SolvePath",
    "continue_homotopy",
    "newton_solve",
    "ReflectorProblem",
    "boundary_defect",
    "ma_residual",
    "manufacture",
    "mass_balance",
    "reflection_jacobian",
    "reflection_map",
    "solve_reflector",
    "YamabeConfig",
    "solve_yamabe",
    "yamabe_residual",
]
