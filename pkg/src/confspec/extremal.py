"""Extremality certificates, pointwise identities, and maximizers.

An extremal factor is one along which every analytic conformal deformation
gives one-sided F^k derivatives of opposite (or vanishing) sign. The
operational test implemented here is a semidefinite feasibility problem:
find a positive-semidefinite, trace-one coefficient matrix P over a
weighted-orthonormal basis V of the eigenvalue cluster such that

    V(x)^T P V(x) = 1   at every node x.

Feasibility is sound by construction: for any direction h the one-sided
F^k derivatives bracket -volume_term because trace(P H) is a convex
combination of the eigenvalues of the projected matrix H, so their product
cannot be strictly positive. Infeasibility at tolerance produces a
separating direction h (the mean-free residual field times mu^2) whose
one-sided derivatives share a strict sign; for simple eigenvalues this is
an identity: both equal q lambda ||deviation||^2 in the deformed metric.

The eigendecomposition of P recovers the finite eigenfunction family whose
squares sum to one in deformed variables; on it the pointwise eigenvalue
identity, the sphere-valued harmonic-map equation, and the curvature lower
bound are checked with lumped discrete operators.

Closed-form maximizers for k = 1 exist whenever the curvature field is
single-signed: the factor with mu^q = R / sum(R dv) makes the constant
vector an exact discrete eigenvector (mass lumping makes this identity
exact, not approximate), and the constant test vector in the pencil
Rayleigh quotient shows every competitor satisfies F^1 <= c_n sum(R dv).
A projected-ascent optimizer drives random initial factors to the same
point using the derivative formulas as its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    GapConditionError,
    InfeasibleCertificateError,
    LineSearchError,
    NormalizationError,
    SignConditionError,
    ToolkitError,
    ZeroEigenvalueError,
)
from .functional import operator_norm_scale
from .geometry import (
    ConformalFactor,
    DiscreteConformalClass,
    conformal_data,
    factor_mass,
    normalize_factor,
)
from .perturbation import (
    one_sided_lambda_derivatives,
    projected_perturbation_matrix,
    zero_mean_generator,
)
from .spectral import SolveOptions, solve_pencil, solve_with_closed_cluster

_MASS_TOL = 1e-10
_FAMILY_CUTOFF = 1e-12


@dataclass
class ExtremalityCertificate:
    """Outcome of the convex-hull membership test for one cluster.

    ``P`` is the trace-one PSD coefficient matrix (m x m over the cluster
    basis), ``family`` the extracted node-field family (columns, one per
    kept rank) with sum of squares approximately one everywhere, and
    ``sup_residual`` the worst nodewise violation. When infeasible,
    ``witness`` holds a separating deformation direction and
    ``witness_derivative_set`` its first-order rate set.
    """

    k: int
    m: int
    lambda_k: float
    P: np.ndarray
    family: np.ndarray
    sup_residual: float
    feasible: bool
    cert_tol: float
    mu: ConformalFactor
    alternations: int = 0
    witness: np.ndarray | None = None
    witness_derivative_set: np.ndarray | None = None
    witness_definite: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.family.shape[1]

    def to_dict(self) -> dict:
        data = {
            "k": self.k,
            "m": self.m,
            "lambda_k": self.lambda_k,
            "P": [[float(x) for x in row] for row in self.P],
            "p": self.p,
            "sup_residual": self.sup_residual,
            "feasible": self.feasible,
            "cert_tol": self.cert_tol,
            "alternations": self.alternations,
            "witness_definite": self.witness_definite,
        }
        if self.witness_derivative_set is not None:
            data["witness_derivative_set"] = [
                float(x) for x in self.witness_derivative_set
            ]
        return data


def _svec(mat: np.ndarray, m: int) -> np.ndarray:
    """Symmetric matrix -> isometric vector (off-diagonals scaled by sqrt 2)."""
    iu = np.triu_indices(m)
    scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    return mat[iu] * scale


def _smat(vec: np.ndarray, m: int) -> np.ndarray:
    iu = np.triu_indices(m)
    scale = np.where(iu[0] == iu[1], 1.0, 1.0 / np.sqrt(2.0))
    mat = np.zeros((m, m))
    mat[iu] = vec * scale
    return mat + np.triu(mat, 1).T


def _psd_project(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(0.5 * (mat + mat.T))
    return (evecs * np.maximum(evals, 0.0)) @ evecs.T


def _dykstra_feasibility(vbasis: np.ndarray, cert_tol: float, max_alternations: int = 5000):
    """Alternating projections with Dykstra correction for the membership SDP.

    The affine set is the least-squares solution set of the nodewise
    equations plus the trace row (projection via a precomputed
    pseudoinverse); the cone set is handled by eigenvalue clipping.
    Declares infeasibility when the nodewise residual stalls above
    tolerance.
    """
    n_nodes, m = vbasis.shape
    d = m * (m + 1) // 2
    iu = np.triu_indices(m)
    off_scale = np.where(iu[0] == iu[1], 1.0, np.sqrt(2.0))
    # row x of the constraint matrix: svec of V(x) V(x)^T
    rows = vbasis[:, iu[0]] * vbasis[:, iu[1]] * off_scale
    trace_row = np.where(iu[0] == iu[1], 1.0, 0.0)
    a_mat = np.vstack([rows, trace_row])
    b_vec = np.ones(n_nodes + 1)
    pinv = np.linalg.pinv(a_mat, rcond=1e-12)

    def affine_project(vec):
        return vec - pinv @ (a_mat @ vec - b_vec)

    def sup_residual_of(vec):
        return float(np.abs(rows @ vec - 1.0).max())

    x_vec = _svec(np.eye(m) / m, m)
    incr_a = np.zeros(d)
    incr_b = np.zeros(d)
    best = np.inf
    best_vec = x_vec.copy()
    last_improvement = 0
    iters = 0
    for iters in range(1, max_alternations + 1):
        y_vec = affine_project(x_vec + incr_a)
        incr_a = x_vec + incr_a - y_vec
        z_mat = _psd_project(_smat(y_vec + incr_b, m))
        z_vec = _svec(z_mat, m)
        incr_b = y_vec + incr_b - z_vec
        x_vec = z_vec

        res = sup_residual_of(x_vec)
        if res < best:
            if res < best * (1.0 - 1e-3):
                last_improvement = iters
            best, best_vec = res, x_vec.copy()
        if res <= 0.5 * cert_tol:
            break
        if iters - last_improvement > 200:
            break  # residual stalled above tolerance: infeasible at cert_tol

    p_mat = _psd_project(_smat(best_vec, m))
    trace = np.trace(p_mat)
    if trace > 0:
        p_mat = p_mat / trace
    residual = float(np.abs(np.einsum("xi,ij,xj->x", vbasis, p_mat, vbasis) - 1.0).max())
    return p_mat, residual, iters


def _extract_family(vbasis: np.ndarray, p_mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(p_mat)
    keep = evals >= _FAMILY_CUTOFF
    if not np.any(keep):
        keep = evals == evals.max()
    return vbasis @ (evecs[:, keep] * np.sqrt(np.maximum(evals[keep], 0.0)))


def certify_extremal(
    cls: DiscreteConformalClass,
    mu_e: ConformalFactor,
    k: int,
    cert_tol: float = 1e-8,
    opts: SolveOptions | None = None,
) -> ExtremalityCertificate:
    """Decide membership of the constant function in the squared-family hull.

    Requires a unit-mass factor, a spectral gap on at least one side of the
    cluster of the k-th eigenvalue, and lambda_k away from zero (the
    certificate's defining identity degenerates at zero). For a feasible
    factor the eigendecomposition of P yields the finite family; for an
    infeasible one the residual field provides the separating direction.
    """
    opts = opts or SolveOptions()
    mass = factor_mass(cls, mu_e)
    if abs(mass - 1.0) > _MASS_TOL:
        raise NormalizationError(
            f"certificate requires unit mass, got {mass:.12e}; apply normalize_factor"
        )
    spectrum = solve_with_closed_cluster(cls, mu_e, k, opts)
    cluster = spectrum.cluster_of(k)
    idx = k - 1
    gap_below = idx == cluster.lo
    gap_above = idx == cluster.hi and (
        cluster.closed_above or spectrum.n_computed >= spectrum.n_dof
    )
    if not (gap_below or gap_above):
        raise GapConditionError(
            "no spectral gap on either side of the k-th eigenvalue; the "
            "certificate hypotheses fail"
        )
    lam = float(spectrum.eigenvalues[idx])
    if abs(lam) <= opts.sign_tol * operator_norm_scale(cls):
        raise ZeroEigenvalueError(
            f"lambda_k = {lam:.3e} is numerically zero; the certificate "
            "requires a nonzero eigenvalue"
        )

    vbasis = spectrum.vectors[:, cluster.lo : cluster.hi + 1]
    m = cluster.size
    if m == 1:
        p_mat = np.ones((1, 1))
        residual = float(np.abs(vbasis[:, 0] ** 2 - 1.0).max())
        alternations = 0
    else:
        p_mat, residual, alternations = _dykstra_feasibility(vbasis, cert_tol)

    feasible = residual <= cert_tol
    family = _extract_family(vbasis, p_mat)
    cert = ExtremalityCertificate(
        k=k,
        m=m,
        lambda_k=lam,
        P=p_mat,
        family=family,
        sup_residual=residual,
        feasible=feasible,
        cert_tol=cert_tol,
        mu=mu_e,
        alternations=alternations,
        meta={"gap_below": gap_below, "gap_above": gap_above},
    )
    if not feasible:
        # separating direction: mean-free part of (1 - V^T P V) times mu^2,
        # mirroring the separation argument behind the certificate
        deviation = 1.0 - np.einsum("xi,ij,xj->x", vbasis, p_mat, vbasis)
        witness = zero_mean_generator(cls, mu_e, deviation)
        _, rates = projected_perturbation_matrix(cls, mu_e, spectrum, cluster, witness)
        cert.witness = witness.h
        cert.witness_derivative_set = rates
        strict = opts.sign_tol * max(1.0, abs(lam))
        cert.witness_definite = bool(rates.min() > strict or rates.max() < -strict)
    return cert


@dataclass(frozen=True)
class ForEigenReport:
    """Nodewise residual of the pointwise eigenvalue identity."""

    residual: np.ndarray
    sup: float
    l2: float

    def to_dict(self) -> dict:
        return {"sup": self.sup, "l2": self.l2}


def _pointwise_gradient_dot(cls, a, b):
    """Discrete grad(a) . grad(b) via the localized stiffness quadratic form.

    The polarization [a S b + b S a - S(ab)] / (2 dv) is the edgewise
    energy-density splitting for graph-type stiffness and the weak-form
    product identity for spectral backends.
    """
    s_a = cls.apply_stiffness(a)
    s_b = cls.apply_stiffness(b)
    s_ab = cls.apply_stiffness(a * b)
    return (a * s_b + b * s_a - s_ab) / (2.0 * cls.dv)


def for_eigen_residual(
    cls: DiscreteConformalClass,
    mu_e: ConformalFactor,
    certificate: ExtremalityCertificate,
) -> ForEigenReport:
    """Residual of lambda_k = -1/2 mu^2 lap_e(mu^-2) + mu^2 sum|grad_e u|^2 + c_n R_e.

    Every deformed-metric object is rewritten through background operators:
    the deformed Laplacian via the conformal drift term, the deformed
    curvature through the conformal transformation of the operator applied
    to mu, and gradient energies through the localized stiffness recovery.
    Pointwise identities hold only to discretization order on non-exact
    inputs, so tolerances are backend-dependent; on maximizer certificates
    with constant factors every term is exact.
    """
    if not certificate.feasible:
        raise InfeasibleCertificateError(
            "the pointwise identity holds only for feasible certificates"
        )
    mu = mu_e.mu
    q = cls.q
    lam = certificate.lambda_k
    inv_mu2 = mu**-2.0
    log_mu = np.log(mu)

    def lap(phi):
        return -cls.apply_stiffness(phi) / cls.dv

    # deformed Laplacian of mu^-2 pulled back to background operators
    lap_e = mu**-q * (lap(inv_mu2) + 2.0 * _pointwise_gradient_dot(cls, log_mu, inv_mu2))
    term1 = -0.5 * mu**2 * lap_e

    family_u = certificate.family / mu[:, None]
    energy = np.zeros(cls.n_nodes)
    for j in range(family_u.shape[1]):
        energy += _pointwise_gradient_dot(cls, family_u[:, j], family_u[:, j])
    term2 = mu ** (2.0 - q) * energy

    # c_n R_e = mu^-(1+q) (conformal operator applied to mu)
    term3 = mu ** -(1.0 + q) * (cls.apply_stiffness(mu) / cls.dv + cls.c_n * cls.curvature * mu)

    residual = term1 + term2 + term3 - lam
    _, vol_tilde = conformal_data(cls, mu_e)
    return ForEigenReport(
        residual=residual,
        sup=float(np.abs(residual).max()),
        l2=float(np.sqrt(np.sum(residual**2 * vol_tilde))),
    )


@dataclass(frozen=True)
class HarmonicMapReport:
    """Weak-form residual of the sphere-valued harmonic-map system."""

    residual: float
    lambda_background: float
    curvature_bound_margin: float

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "lambda_background": self.lambda_background,
            "curvature_bound_margin": self.curvature_bound_margin,
        }


def harmonic_map_residual(
    cls: DiscreteConformalClass,
    certificate: ExtremalityCertificate,
    bound_tol: float = 1e-9,
) -> HarmonicMapReport:
    """Check -lap U_j = (lambda_bg - c_n R) U_j for the certificate family.

    Applicable when the certified factor is constant, i.e. the extremal
    metric is a rescaled background; the constant scale is absorbed by
    lambda_bg = w * lambda_k, under which the harmonic-map system is scale
    free. Also asserts the curvature lower bound
    lambda_bg >= c_n max(R) - bound_tol implied by the pointwise identity.
    """
    if not certificate.feasible:
        raise InfeasibleCertificateError(
            "harmonic-map residual requires a feasible certificate"
        )
    mu = certificate.mu.mu
    mean = float(mu.mean())
    if np.abs(mu - mean).max() > 1e-10 * mean:
        raise ToolkitError(
            "harmonic-map check applies only to constant factors (the "
            "extremal metric must be a rescaled background)"
        )
    w_const = mean**cls.q
    lam_bg = w_const * certificate.lambda_k
    rho = lam_bg - cls.c_n * cls.curvature

    worst = 0.0
    for j in range(certificate.family.shape[1]):
        u_j = certificate.family[:, j]
        res = cls.apply_stiffness(u_j) - rho * cls.dv * u_j
        worst = max(worst, float(np.linalg.norm(res)))

    margin = lam_bg - cls.c_n * float(cls.curvature.max())
    if margin < -bound_tol:
        raise ToolkitError(
            f"curvature bound violated: lambda_bg = {lam_bg:.6e} is below "
            f"c_n max(R) = {cls.c_n * cls.curvature.max():.6e}"
        )
    return HarmonicMapReport(
        residual=worst,
        lambda_background=lam_bg,
        curvature_bound_margin=margin,
    )


@dataclass(frozen=True)
class NecessaryConditionReport:
    """Nodewise residual of c_n R = lambda_1 mu^q plus sign diagnostics."""

    residual: np.ndarray
    sup: float
    curvature_sign_constant: bool
    sign_consistent: bool
    verdict: str

    def to_dict(self) -> dict:
        return {
            "sup": self.sup,
            "curvature_sign_constant": self.curvature_sign_constant,
            "sign_consistent": self.sign_consistent,
            "verdict": self.verdict,
        }


def necessary_condition_residual(
    cls: DiscreteConformalClass,
    mu_e: ConformalFactor,
    lambda1: float,
) -> NecessaryConditionReport:
    """Residual field c_n R - lambda_1 mu_e^q of the first-order condition.

    A vanishing residual forces the curvature sign to be constant and equal
    to the sign of lambda_1; when the background curvature changes sign, no
    extremal factor for F^1 can exist on it, and the verdict says so.
    """
    residual = cls.c_n * cls.curvature - lambda1 * mu_e.mu**cls.q
    r_pos = bool(np.all(cls.curvature > 0))
    r_neg = bool(np.all(cls.curvature < 0))
    sign_constant = r_pos or r_neg
    lam_sign = 1 if lambda1 > 0 else (-1 if lambda1 < 0 else 0)
    consistent = (r_pos and lam_sign > 0) or (r_neg and lam_sign < 0)
    verdict = (
        "sign condition satisfied"
        if consistent
        else "no extremal metric for F^1 can exist on this background"
    )
    return NecessaryConditionReport(
        residual=residual,
        sup=float(np.abs(residual).max()),
        curvature_sign_constant=sign_constant,
        sign_consistent=consistent,
        verdict=verdict,
    )


@dataclass
class MaximizerResult:
    """Closed-form maximizer of F^1 and its exactness diagnostics."""

    mu_max: ConformalFactor
    Lambda1: float
    lambda1_check: float
    eigenvector_check: float

    def to_dict(self) -> dict:
        return {
            "Lambda1": self.Lambda1,
            "lambda1_check": self.lambda1_check,
            "eigenvector_check": self.eigenvector_check,
        }


def _require_single_signed(curvature: np.ndarray, r_floor: float) -> int:
    if np.abs(curvature).min() < r_floor:
        raise SignConditionError(
            f"curvature field vanishes somewhere (min |R| < {r_floor:.1e}); "
            "the first-order necessary condition cannot hold"
        )
    if curvature.max() > 0 and curvature.min() < 0:
        raise SignConditionError(
            "curvature field changes sign; no extremal factor for F^1 "
            "exists on this background"
        )
    return 1 if curvature.min() > 0 else -1


def construct_maximizer(
    cls: DiscreteConformalClass,
    opts: SolveOptions | None = None,
    r_floor: float = 1e-10,
) -> MaximizerResult:
    """The factor with mu^q = R / sum(R dv); maximizes F^1 exactly.

    The constant vector is an exact discrete eigenvector of the resulting
    pencil (mass lumping makes A 1 = Lambda1 M_w 1 an identity), it is the
    lowest one because it is positive, and the constant test vector in the
    Rayleigh quotient bounds every competitor by Lambda1 = c_n sum(R dv).
    Requires single-signed, nonvanishing curvature.
    """
    opts = opts or SolveOptions()
    _require_single_signed(cls.curvature, r_floor)

    total = float(np.sum(cls.curvature * cls.dv))
    w_max = cls.curvature / total  # positive for either curvature sign
    mu_max = ConformalFactor(w_max ** (1.0 / cls.q), mu_floor=np.finfo(float).tiny)
    lam_target = cls.c_n * total

    from .spectral import assemble_operator

    a_mat = assemble_operator(cls)
    ones = np.ones(cls.n_nodes)
    a_one = a_mat @ ones
    m_one = w_max * cls.dv
    denom = max(float(np.abs(a_one).max()), np.finfo(float).tiny)
    eigenvector_check = float(np.abs(a_one - lam_target * m_one).max()) / denom

    spectrum = solve_pencil(cls, mu_max, 1, replace(opts, cluster_margin=1))
    lambda1_check = float(spectrum.eigenvalues[0])
    return MaximizerResult(
        mu_max=mu_max,
        Lambda1=lam_target,
        lambda1_check=lambda1_check,
        eigenvector_check=eigenvector_check,
    )


@dataclass(frozen=True)
class OptimizeOptions:
    """Projected-ascent knobs.

    ``opt_tol`` bounds the sup norm of the log-space update at convergence,
    relative to 1 + |F|; ``step_cap`` bounds the per-iteration log step so
    trial factors cannot blow up the pencil conditioning.
    """

    opt_tol: float = 1e-6
    max_iter: int = 500
    initial_step: float = 0.5
    step_cap: float = 1.0
    max_backtracks: int = 40
    armijo: float = 1e-4
    #: converged iterates with sup|v_1^2 - 1| above this are treated as
    #: spurious local maxima and retried from a log-shrunk start
    stationarity_tol: float = 1e-2
    max_restarts: int = 3


@dataclass
class OptimizeResult:
    mu_star: ConformalFactor
    converged: bool
    n_iter: int
    F_value: float
    restarts: int = 0
    stationarity_residual: float = float("nan")
    trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "n_iter": self.n_iter,
            "F_value": self.F_value,
            "restarts": self.restarts,
            "stationarity_residual": self.stationarity_residual,
            "trace": self.trace,
        }


def optimize_F1(
    cls: DiscreteConformalClass,
    mu_init: ConformalFactor,
    opt_opts: OptimizeOptions | None = None,
    opts: SolveOptions | None = None,
) -> OptimizeResult:
    """Projected ascent on F^1: renormalize each step, backtrack on failure.

    The ascent direction is the steepest one in the deformed inner product
    over mean-free generators, i.e. the deformed-mean-free part of
    q lambda_1 (1 - v_1^2); the first eigenvalue is simple so F^1 is
    differentiable and this is its full gradient. Updates are exponential
    (factors stay positive by construction) and renormalized to unit mass,
    under which F^1 equals lambda_1. The accepted step is refined by a
    quadratic fit of the line-search data.

    On spectral backends the ascent direction is projected onto the
    resolved harmonic span: directions outside it deform the factor in
    ways the Galerkin pencil cannot see, so the search space is the span
    itself (sampler-generated factors already live there).
    """
    opt_opts = opt_opts or OptimizeOptions()
    opts = opts or SolveOptions()
    sign = _require_single_signed(cls.curvature, 1e-10)

    solve_opts = replace(opts, cluster_margin=0)

    def solve_at(factor):
        spectrum = solve_pencil(cls, factor, 1, solve_opts)
        return float(spectrum.eigenvalues[0]), spectrum.vectors[:, 0]

    def span_project(direction):
        if cls.reduced:
            return cls.basis @ (cls.basis.T @ (cls.dv * direction))
        return direction

    def ascend(mu):
        lam, v1 = solve_at(mu)
        if (lam > 0) != (sign > 0):
            raise SignConditionError(
                "sign of lambda_1 does not match the curvature sign; the "
                "necessary condition rules out ascent to an extremal factor"
            )
        trace = []
        alpha = None
        converged = False
        fp_slack = 1e-12
        n_iter = 0
        for n_iter in range(opt_opts.max_iter + 1):
            _, vol_tilde = conformal_data(cls, mu)
            grad_w = cls.q * lam * (1.0 - v1**2)
            mean = float(np.sum(grad_w * vol_tilde) / np.sum(vol_tilde))
            w0 = grad_w - mean
            grad_sq = float(np.sum(w0**2 * vol_tilde))
            direction = span_project(w0 * mu.mu**2)
            step_sup = float(np.abs(direction).max())
            trace.append(
                {
                    "iter": n_iter,
                    "F": lam,
                    "grad_norm": float(np.sqrt(grad_sq)),
                    "step_sup": step_sup,
                }
            )
            if step_sup <= opt_opts.opt_tol * (1.0 + abs(lam)):
                converged = True
                break
            if n_iter == opt_opts.max_iter:
                break

            if alpha is None:
                alpha = opt_opts.initial_step / step_sup
            alpha = min(alpha, opt_opts.step_cap / step_sup)
            accepted = False
            best_gain = -np.inf
            for _ in range(opt_opts.max_backtracks):
                trial = normalize_factor(
                    cls,
                    ConformalFactor(
                        mu.mu * np.exp(alpha * direction),
                        mu_floor=np.finfo(float).tiny,
                    ),
                )
                lam_trial, v1_trial = solve_at(trial)
                gain = lam_trial - lam
                best_gain = max(best_gain, gain)
                if gain >= opt_opts.armijo * alpha * grad_sq:
                    # quadratic fit through (0, lam) with slope grad_sq and
                    # (alpha, lam_trial) proposes the next trial step
                    denom = 2.0 * (lam + grad_sq * alpha - lam_trial)
                    proposal = (
                        grad_sq * alpha * alpha / denom if denom > 0 else 2.0 * alpha
                    )
                    mu, lam, v1 = trial, lam_trial, v1_trial
                    alpha = min(max(proposal, 0.25 * alpha), 4.0 * alpha)
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                if best_gain >= -fp_slack * (1.0 + abs(lam)):
                    converged = True  # stationary to floating-point resolution
                    break
                raise LineSearchError(
                    "backtracking line search failed to increase F^1", trace=trace
                )
        stationarity = float(np.abs(v1**2 - 1.0).max())
        return mu, lam, converged, n_iter, stationarity, trace

    # the first-order condition at the true maximizer is v_1^2 = 1 at every
    # node; a converged iterate far from that is a spurious local maximum
    # (they exist for spectral backends). Retry from log-shrunk starts: the
    # constant factor attains the supremum, so its basin is reached once
    # the initial oscillation is damped enough.
    best = None
    log_init = np.log(normalize_factor(cls, mu_init).mu)
    for attempt in range(opt_opts.max_restarts + 1):
        mu_start = normalize_factor(
            cls, ConformalFactor(np.exp(0.5**attempt * log_init))
        )
        mu, lam, converged, n_iter, stationarity, trace = ascend(mu_start)
        candidate = OptimizeResult(
            mu_star=mu,
            converged=converged,
            n_iter=n_iter,
            F_value=lam,
            restarts=attempt,
            stationarity_residual=stationarity,
            trace=trace,
        )
        if best is None or candidate.F_value > best.F_value:
            best = candidate
        if converged and stationarity <= opt_opts.stationarity_tol:
            return candidate
    return best
