"""Numerical toolkit for conformal-Laplacian eigenvalue extremization.

Computes spectra of the conformal Laplacian along conformal deformations of
discretized closed manifolds, evaluates and differentiates the
eigenvalue-times-mass functional F^k, certifies extremal factors through a
semidefinite feasibility certificate, and constructs the closed-form
maximizers for the first eigenvalue.
"""

from .errors import (
    ConstructionError,
    GapConditionError,
    HypothesisViolationError,
    InfeasibleCertificateError,
    LineSearchError,
    NormalizationError,
    PositivityError,
    SignConditionError,
    SolverError,
    ToolkitError,
    ZeroEigenvalueError,
)
from .geometry import (
    ConformalFactor,
    DiscreteConformalClass,
    build_sphere3_class,
    build_synthetic_class,
    build_torus_class,
    conformal_data,
    factor_mass,
    make_factor,
    normalize_factor,
)
from .spectral import (
    Cluster,
    SolveOptions,
    SpectrumResult,
    assemble_operator,
    cluster_eigenvalues,
    solve_pencil,
    solve_with_closed_cluster,
)

__version__ = "0.1.0"

from .extremal import (  # noqa: E402
    ExtremalityCertificate,
    MaximizerResult,
    OptimizeOptions,
    certify_extremal,
    construct_maximizer,
    for_eigen_residual,
    harmonic_map_residual,
    necessary_condition_residual,
    optimize_F1,
)
from .functional import (  # noqa: E402
    FunctionalValue,
    SamplerSpec,
    eval_F,
    sample_factor,
    sup_estimate,
    yamabe_sign,
)
from .perturbation import (  # noqa: E402
    DeformationDirection,
    FdDerivatives,
    PerturbationReport,
    fd_oracle,
    one_sided_F_derivatives,
    one_sided_lambda_derivatives,
    projected_perturbation_matrix,
    zero_mean_generator,
)
