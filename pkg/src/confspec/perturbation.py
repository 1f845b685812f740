"""First-order eigenvalue perturbation along conformal deformations.

A deformation direction h is the multiplicative rate, relative to the
current factor mu_tilde, of a path of total factors mu_tilde (1 + t h).
Differentiating the pencil along such a path leaves the stiffness side
fixed and perturbs only the mass side, so the cluster of the k-th
eigenvalue splits at first order with rates given by the spectrum of the
projected matrix

    T_ij = -q lambda_k sum(h v_i v_j w dv)

over a weighted-orthonormal basis v_1..v_m of the cluster (the analytic
branch basis of the classical perturbation theorem diagonalizes T; its
eigenvalues are the branch derivatives, independent of the basis choice).

The sorted k-th eigenvalue is only piecewise analytic at t = 0; which
branch it follows is decided by gap position:

* gap below the cluster: right derivative = min of the rates, left = max;
* gap above the cluster: right derivative = max of the rates, left = min;
* both gaps (simple eigenvalue): the two coincide;
* no gap on either side: unsupported, the theory provides no formula.

For the mass-normalized functional F^k the same min/max is shifted by the
volume term q lambda_k sum(h w dv), which vanishes identically for
directions built by :func:`zero_mean_generator`.

:func:`fd_oracle` validates all of this independently by re-solving the
pencil at perturbed factors and extrapolating one-sided difference
quotients (one-sided because branches cross at t = 0; central differences
would mix them).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import GapConditionError, NormalizationError
from .geometry import (
    ConformalFactor,
    DiscreteConformalClass,
    conformal_data,
    factor_mass,
)
from .spectral import (
    Cluster,
    SolveOptions,
    SpectrumResult,
    solve_pencil,
    solve_with_closed_cluster,
)

_MASS_TOL = 1e-10
_BASIS_TOL = 1e-8


@dataclass(frozen=True)
class DeformationDirection:
    """Tangent direction of a conformal deformation (no sign constraint)."""

    h: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        if not np.all(np.isfinite(self.h)):
            raise ValueError("deformation direction has non-finite entries")


@dataclass(frozen=True)
class PerturbationReport:
    """One-sided derivative data of lambda_k and F^k along a direction."""

    k: int
    m: int
    lambda_k: float
    derivative_set: np.ndarray
    case_tag: str
    lambda_right: float
    lambda_left: float
    F_right: float
    F_left: float
    volume_term: float

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "m": self.m,
            "lambda_k": self.lambda_k,
            "derivative_set": [float(x) for x in self.derivative_set],
            "case_tag": self.case_tag,
            "lambda_right": self.lambda_right,
            "lambda_left": self.lambda_left,
            "F_right": self.F_right,
            "F_left": self.F_left,
            "volume_term": self.volume_term,
        }


def _as_direction(h) -> np.ndarray:
    if isinstance(h, DeformationDirection):
        return h.h
    return np.asarray(h, dtype=float)


def projected_perturbation_matrix(
    cls: DiscreteConformalClass,
    mu: ConformalFactor,
    spectrum: SpectrumResult,
    cluster: Cluster,
    h,
):
    """Projected first-order matrix T and its eigenvalues (the rate set).

    The cluster basis must be weighted-orthonormal, which is what
    solve_pencil returns; a mismatched basis (wrong factor, wrong columns)
    is rejected by a Gram check rather than silently producing garbage.
    """
    h = _as_direction(h)
    w = mu.mu**cls.q
    lo, hi = cluster.lo, cluster.hi
    if hi >= spectrum.n_computed:
        raise ValueError("cluster indices exceed the computed spectrum")
    basis = spectrum.vectors[:, lo : hi + 1]
    weights = w * cls.dv
    gram = basis.T @ (weights[:, None] * basis)
    if np.abs(gram - np.eye(gram.shape[0])).max() > _BASIS_TOL:
        raise ValueError(
            "cluster basis is not orthonormal under the weighted mass inner "
            "product; spectrum and factor do not match"
        )
    lam = float(spectrum.eigenvalues[lo])
    t_mat = -cls.q * lam * (basis.T @ ((h * weights)[:, None] * basis))
    t_mat = 0.5 * (t_mat + t_mat.T)
    derivative_set = np.linalg.eigvalsh(t_mat)
    return t_mat, derivative_set


def one_sided_lambda_derivatives(derivative_set, gap_below: bool, gap_above: bool):
    """Select the one-sided derivatives of the sorted k-th eigenvalue.

    ``gap_below`` / ``gap_above`` state which side of the cluster the k-th
    eigenvalue touches. With a gap below, the sorted eigenvalue rides the
    smallest rate for t > 0 and the largest for t < 0; with a gap above it
    is the other way around. Requires at least one gap.
    """
    derivative_set = np.asarray(derivative_set, dtype=float)
    d_min = float(derivative_set.min())
    d_max = float(derivative_set.max())
    if gap_below and gap_above:
        if derivative_set.size != 1:
            raise ValueError("both gaps imply a simple eigenvalue")
        return d_min, d_min, "both_gaps"
    if gap_below:
        return d_min, d_max, "gap_below"
    if gap_above:
        return d_max, d_min, "gap_above"
    raise GapConditionError(
        "no spectral gap on either side of the requested eigenvalue; the "
        "one-sided derivative formulas require one"
    )


def _gap_flags(spectrum: SpectrumResult, k: int):
    cluster = spectrum.cluster_of(k)
    idx = k - 1
    gap_below = idx == cluster.lo  # vacuously true at the bottom (k = 1)
    # a cluster ending at the last eigenvalue of the solve space has nothing
    # above it in the discrete model; that counts as a gap
    gap_above = idx == cluster.hi and (
        cluster.closed_above or spectrum.n_computed >= spectrum.n_dof
    )
    return cluster, gap_below, gap_above


def one_sided_F_derivatives(
    cls: DiscreteConformalClass,
    mu_tilde: ConformalFactor,
    h,
    k: int,
    opts: SolveOptions | None = None,
    spectrum: SpectrumResult | None = None,
) -> PerturbationReport:
    """One-sided derivatives of F^k along h at a unit-mass factor.

    The factor must satisfy sum(mu_tilde^q dv) = 1; the displayed formulas
    assume it, so anything else is an error directing the caller to
    normalize_factor. A pre-solved spectrum (with the cluster of k closed)
    may be passed to avoid a duplicate solve.
    """
    opts = opts or SolveOptions()
    h = _as_direction(h)
    mass = factor_mass(cls, mu_tilde)
    if abs(mass - 1.0) > _MASS_TOL:
        raise NormalizationError(
            f"factor mass {mass:.12e} differs from 1; apply normalize_factor "
            "before differentiating F"
        )
    if spectrum is None:
        spectrum = solve_with_closed_cluster(cls, mu_tilde, k, opts)
    cluster, gap_below, gap_above = _gap_flags(spectrum, k)
    lam = float(spectrum.eigenvalues[k - 1])

    _, derivative_set = projected_perturbation_matrix(cls, mu_tilde, spectrum, cluster, h)
    lambda_right, lambda_left, case_tag = one_sided_lambda_derivatives(
        derivative_set, gap_below, gap_above
    )
    w = mu_tilde.mu**cls.q
    volume_term = cls.q * lam * float(np.sum(h * w * cls.dv))
    return PerturbationReport(
        k=k,
        m=cluster.size,
        lambda_k=lam,
        derivative_set=derivative_set,
        case_tag=case_tag,
        lambda_right=lambda_right,
        lambda_left=lambda_left,
        F_right=volume_term + lambda_right,
        F_left=volume_term + lambda_left,
        volume_term=volume_term,
    )


def zero_mean_generator(
    cls: DiscreteConformalClass,
    mu_tilde: ConformalFactor,
    w_field,
) -> DeformationDirection:
    """Direction h = w0 mu_tilde^2 with w0 the deformed-mean-free part of w.

    Subtracting the mean with respect to the deformed volume element makes
    sum(h mu_tilde^q dv) = sum(w0 vol_tilde) vanish identically, which
    kills the volume term of the F derivatives. Idempotent in w.
    """
    w_field = cls.node_field(w_field)
    _, vol_tilde = conformal_data(cls, mu_tilde)
    mean = float(np.sum(w_field * vol_tilde) / np.sum(vol_tilde))
    return DeformationDirection((w_field - mean) * mu_tilde.mu**2)


@dataclass(frozen=True)
class FdDerivatives:
    """Extrapolated one-sided difference quotients of F^k and lambda_k."""

    F_right: float
    F_left: float
    lambda_right: float
    lambda_left: float
    F_right_err: float
    F_left_err: float
    lambda_right_err: float
    lambda_left_err: float

    def to_dict(self) -> dict:
        return {
            "F_right": self.F_right,
            "F_left": self.F_left,
            "lambda_right": self.lambda_right,
            "lambda_left": self.lambda_left,
            "F_right_err": self.F_right_err,
            "F_left_err": self.F_left_err,
            "lambda_right_err": self.lambda_right_err,
            "lambda_left_err": self.lambda_left_err,
        }


DEFAULT_STEPS = (1e-3, 5e-4, 2.5e-4)


def _neville_at_zero(ts, values):
    """Polynomial extrapolation of (t_i, value_i) to t = 0."""
    ts = np.asarray(ts, dtype=float)
    table = np.asarray(values, dtype=float).copy()
    n = table.size
    prev_best = table[0]
    err = float("nan")
    for level in range(1, n):
        for i in range(n - level):
            table[i] = (ts[i + level] * table[i] - ts[i] * table[i + 1]) / (
                ts[i + level] - ts[i]
            )
        err = abs(table[0] - prev_best)
        prev_best = table[0]
    return float(prev_best), float(err)


def fd_oracle(
    cls: DiscreteConformalClass,
    mu_tilde: ConformalFactor,
    h,
    k: int,
    step_schedule=DEFAULT_STEPS,
    opts: SolveOptions | None = None,
) -> FdDerivatives:
    """Finite-difference derivatives of F^k and of the sorted lambda_k.

    Re-solves the pencil at total factors mu_tilde (1 + t h) for each
    signed step, forms one-sided quotients, and extrapolates them to zero
    with Neville's scheme over the step schedule. The k-th *sorted*
    eigenvalue is tracked, so on degenerate clusters the quotients converge
    to the min/max branch selected by the gap rules. Entirely independent
    of the projected-matrix formulas.
    """
    opts = opts or SolveOptions()
    h = _as_direction(h)
    solve_opts = replace(opts, cluster_margin=min(opts.cluster_margin, 1))

    base = solve_pencil(cls, mu_tilde, k, solve_opts)
    lam0 = float(base.eigenvalues[k - 1])
    f0 = lam0 * factor_mass(cls, mu_tilde)

    def at_step(t: float):
        factor = 1.0 + t * h
        mu_t = ConformalFactor(mu_tilde.mu * factor, mu_floor=0.0 + np.finfo(float).tiny)
        spectrum = solve_pencil(cls, mu_t, k, solve_opts)
        lam = float(spectrum.eigenvalues[k - 1])
        return lam, lam * factor_mass(cls, mu_t)

    results = {}
    for side, sign in (("right", 1.0), ("left", -1.0)):
        ts, lam_q, f_q = [], [], []
        for step in step_schedule:
            t = sign * float(step)
            lam_t, f_t = at_step(t)
            ts.append(t)
            lam_q.append((lam_t - lam0) / t)
            f_q.append((f_t - f0) / t)
        results[side] = (
            _neville_at_zero(ts, lam_q),
            _neville_at_zero(ts, f_q),
        )

    (lam_r, lam_r_err), (f_r, f_r_err) = results["right"]
    (lam_l, lam_l_err), (f_l, f_l_err) = results["left"]
    return FdDerivatives(
        F_right=f_r,
        F_left=f_l,
        lambda_right=lam_r,
        lambda_left=lam_l,
        F_right_err=f_r_err,
        F_left_err=f_l_err,
        lambda_right_err=lam_r_err,
        lambda_left_err=lam_l_err,
    )
