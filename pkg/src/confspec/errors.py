"""Exception hierarchy for the toolkit.

Errors split into two families: ordinary failures (bad inputs, solver
breakdown) and mathematically meaningful refusals, where the inputs violate
a hypothesis required by the underlying eigenvalue theory. The latter carry
a stable ``hypothesis_tag`` and a dedicated process exit code so batch runs
can be asserted on.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors. Maps to process exit code 1."""

    exit_code = 1


class ConstructionError(ToolkitError):
    """Invalid parameters while building a discrete conformal class."""


class PositivityError(ToolkitError):
    """A conformal factor is non-positive or below the positivity floor."""


class NormalizationError(ToolkitError):
    """An operation required a unit-mass factor; run normalize_factor first."""


class SolverError(ToolkitError):
    """Eigenvalue solve failed to converge. Carries iteration diagnostics."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class LineSearchError(ToolkitError):
    """Backtracking line search could not produce an ascent step."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


class InfeasibleCertificateError(ToolkitError):
    """A residual check was requested on an infeasible certificate."""


class HypothesisViolationError(ToolkitError):
    """Inputs violate a hypothesis of the eigenvalue theory.

    These are hard refusals, never silent best-effort answers: the formulas
    the caller asked for are simply not established without the hypothesis.
    """

    exit_code = 2
    hypothesis_tag = "hypothesis"


class GapConditionError(HypothesisViolationError):
    """Neither spectral gap holds around the requested eigenvalue."""

    hypothesis_tag = "gap_condition"


class ZeroEigenvalueError(HypothesisViolationError):
    """The requested eigenvalue is numerically zero."""

    hypothesis_tag = "lambda_k_zero"


class SignConditionError(HypothesisViolationError):
    """Scalar curvature changes sign or vanishes; no extremal factor exists."""

    hypothesis_tag = "necessary_condition_sign"
