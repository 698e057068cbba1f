"""Deterministic engine and verifier for reflected BSDEs on polygonal domains.

The package computes exact shortest paths in simple polygons, geodesic
barycenters, reflected drift transports, and a backward lattice recursion
solving terminal-value problems whose solution is constrained to the closed
domain; a verifier turns the governing inequalities into executable checks.
"""

from .errors import (
    CapacityError,
    ContractionFailure,
    ConvergenceError,
    EvalError,
    ExteriorPointError,
    GammaBsdeError,
    GeometryError,
    LatticeMismatchError,
    ParameterRangeError,
    ParseError,
    SliceOrderError,
    StepTooLargeError,
)
from .geometry import (
    BOUNDARY,
    EXTERIOR,
    INTERIOR,
    Domain,
    NormalCone,
    boundary_distance,
    contains,
    domain_from_vertices,
    load_domain,
    normal_cone,
    project,
    reflection_cone,
)
from .geodesics import (
    Cat0Report,
    GeodesicPath,
    cat0_audit,
    geodesic,
    geodesic_oracle,
    geodesic_point,
    log_map,
    psi,
    rotation_angle,
    rotation_matrix,
)
from .frechet import (
    DiscreteMeasure,
    JensenReport,
    MeanCertificate,
    frechet_gradient,
    frechet_mean,
    jensen_check,
    sturm_mean,
)
from .transport import (
    TransportCheckReport,
    TransportResult,
    reflect_transport,
    skorokhod_lipschitz_check,
)
from .lattice import (
    Lattice,
    NodeField,
    build_lattice,
    conditional_measure,
    node_expectation,
)
from .scheme import (
    RefinementTable,
    SchemeResult,
    refine_and_compare,
    solve_exogenous,
    solve_state_dependent,
)
from .bsde import (
    BsdeSolution,
    GeneratorSpec,
    Scenario,
    bmo_diagnostic,
    evaluate_generator,
    generator_from_expression,
    load_scenario,
    solve_bsde,
)
from .verifier import (
    CheckReport,
    TestFunction,
    flat_off_check,
    psi_center,
    run_suites,
    stability_check,
    submartingale_check,
    uniqueness_probe,
    zdiff_stability_check,
)

__version__ = "0.1.0"
