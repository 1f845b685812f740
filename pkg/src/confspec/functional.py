"""The eigenvalue-times-mass functional, Yamabe sign, and sup sampling.

F^k(mu) = lambda_k(pencil at mu) * sum(mu^q dv). The mass factor makes the
functional invariant under rescaling mu (the eigenvalue scaling law cancels
it exactly), so its supremum over positive factors is a well-posed target.
Sampling only ever produces certified lower bounds for that supremum;
attainment claims are the business of the extremal module's certificates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .errors import PositivityError
from .geometry import (
    ConformalFactor,
    DiscreteConformalClass,
    factor_mass,
)
from .spectral import SolveOptions, solve_pencil


@dataclass(frozen=True)
class FunctionalValue:
    """Value of F^k at one factor: lambda_k, mass, and their product."""

    k: int
    lambda_k: float
    mass: float
    value: float

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "lambda_k": self.lambda_k,
            "mass": self.mass,
            "value": self.value,
        }


def eval_F(
    cls: DiscreteConformalClass,
    mu: ConformalFactor,
    k: int,
    opts: SolveOptions | None = None,
) -> FunctionalValue:
    """Evaluate F^k(mu) = lambda_k * sum(mu^q dv)."""
    opts = opts or SolveOptions()
    # only the k-th eigenvalue is needed; cluster structure (and the
    # simplicity diagnostic) is available through solve_pencil directly
    solve_opts = replace(opts, cluster_margin=0)
    spectrum = solve_pencil(cls, mu, k, solve_opts)
    lam = float(spectrum.eigenvalues[k - 1])
    mass = factor_mass(cls, mu)
    return FunctionalValue(k=k, lambda_k=lam, mass=mass, value=lam * mass)


def operator_norm_scale(cls: DiscreteConformalClass) -> float:
    """Infinity norm of the assembled operator, used in zero thresholds."""
    from .spectral import assemble_operator

    a_mat = assemble_operator(cls)
    if sp.issparse(a_mat):
        return float(abs(a_mat).sum(axis=1).max())
    return float(np.abs(a_mat).sum(axis=1).max())


def yamabe_sign(cls: DiscreteConformalClass, opts: SolveOptions | None = None) -> int:
    """Sign of lambda_1 at mu = 1: the conformally invariant sign.

    Returns -1, 0, or +1, declaring zero when |lambda_1| <= sign_tol * |A|.
    The sign is the same for every positive factor because the mass side of
    the pencil is positive definite.
    """
    opts = opts or SolveOptions()
    mu_one = ConformalFactor(np.ones(cls.n_nodes))
    spectrum = solve_pencil(cls, mu_one, 1, replace(opts, cluster_margin=1))
    lam = float(spectrum.eigenvalues[0])
    if abs(lam) <= opts.sign_tol * operator_norm_scale(cls):
        return 0
    return 1 if lam > 0 else -1


@dataclass(frozen=True)
class SamplerSpec:
    """Log-space Gaussian random field sampler: mu = exp(G).

    G is a random combination of the class's low modes (Fourier modes on
    the torus, low-degree harmonics on the sphere) up to ``band_limit``,
    scaled to RMS amplitude ``amplitude``. Factors are strictly positive by
    construction unless the exponential underflows, in which case the
    sample is rejected, never repaired.
    """

    band_limit: int = 2
    amplitude: float = 0.5


def low_mode_fields(cls: DiscreteConformalClass, band_limit: int) -> np.ndarray:
    """Columns of smooth non-constant fields up to the band limit."""
    if cls.backend_tag == "sphere3_spectral":
        degrees = cls.meta["degrees"]
        keep = (degrees >= 1) & (degrees <= band_limit)
        cols = cls.basis[:, keep]
        # normalize each column to unit RMS so amplitudes are comparable
        rms = np.sqrt(np.mean(cols**2, axis=0))
        return cols / rms
    # grid backends: real Fourier modes k with 0 < max|k_a| <= band_limit
    coords = cls.coords
    edges = cls.meta.get("edges")
    if edges is None:
        spans = coords.max(axis=0) - coords.min(axis=0)
        edges = tuple(np.where(spans > 0, spans, 1.0))
    ks = range(-band_limit, band_limit + 1)
    cols = []
    seen = set()
    for kx in ks:
        for ky in ks:
            for kz in ks:
                kvec = (kx, ky, kz)
                if kvec == (0, 0, 0) or tuple(-k for k in kvec) in seen:
                    continue
                seen.add(kvec)
                phase = 2.0 * np.pi * (
                    kx * coords[:, 0] / edges[0]
                    + ky * coords[:, 1] / edges[1]
                    + kz * coords[:, 2] / edges[2]
                )
                cols.append(np.cos(phase))
                cols.append(np.sin(phase))
    mat = np.array(cols).T
    rms = np.sqrt(np.mean(mat**2, axis=0))
    return mat / np.where(rms > 0, rms, 1.0)


def sample_factor(
    cls: DiscreteConformalClass,
    spec: SamplerSpec,
    rng: np.random.Generator,
) -> ConformalFactor:
    """Draw one log-Gaussian random factor; raises if positivity fails."""
    modes = low_mode_fields(cls, spec.band_limit)
    coeff = rng.standard_normal(modes.shape[1]) / np.sqrt(modes.shape[1])
    log_field = spec.amplitude * (modes @ coeff)
    return ConformalFactor(np.exp(log_field))


@dataclass(frozen=True)
class SampleRecord:
    index: int
    status: str  # "ok" or "rejected"
    lambda_k: float | None = None
    mass: float | None = None
    value: float | None = None
    detail: str = ""

    def to_row(self):
        return (self.index, self.status, self.value, self.mass, self.lambda_k)


@dataclass
class SupEstimate:
    """Monte-Carlo lower bound for the supremum of F^k."""

    k: int
    best_value: float
    best_mu: ConformalFactor | None
    trace: list[SampleRecord] = field(default_factory=list)

    @property
    def n_ok(self) -> int:
        return sum(1 for r in self.trace if r.status == "ok")


def sup_estimate(
    cls: DiscreteConformalClass,
    k: int,
    sampler_spec: SamplerSpec | None = None,
    num_samples: int = 100,
    seed: int = 0,
    opts: SolveOptions | None = None,
    sampler=None,
) -> SupEstimate:
    """max of F^k over seeded random factors; a lower bound for the sup.

    Deterministic given the seed: sample i draws from a substream keyed by
    (seed, i), so the running maximum is monotone in num_samples. A custom
    ``sampler(cls, rng) -> ConformalFactor`` may replace the default
    log-Gaussian field sampler. Samples that fail positivity are recorded
    as rejected and skipped, never silently fixed.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    sampler_spec = sampler_spec or SamplerSpec()
    opts = opts or SolveOptions()
    draw = sampler if sampler is not None else (
        lambda c, rng: sample_factor(c, sampler_spec, rng)
    )

    trace: list[SampleRecord] = []
    best_value = -np.inf
    best_mu = None
    for index in range(num_samples):
        rng = np.random.default_rng([seed, index])
        try:
            mu = draw(cls, rng)
        except PositivityError as exc:
            trace.append(SampleRecord(index=index, status="rejected", detail=str(exc)))
            continue
        fval = eval_F(cls, mu, k, opts)
        trace.append(
            SampleRecord(
                index=index,
                status="ok",
                lambda_k=fval.lambda_k,
                mass=fval.mass,
                value=fval.value,
            )
        )
        if fval.value > best_value:
            best_value = fval.value
            best_mu = mu
    return SupEstimate(k=k, best_value=best_value, best_mu=best_mu, trace=trace)
