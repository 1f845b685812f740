"""Assembly and solution of the weighted conformal-Laplacian pencil.

For a class (S, dv, R, n) and a positive factor mu, the spectrum of the
conformally deformed operator is encoded by the symmetric-definite pencil

    A v = lambda M_w v,    A = S + c_n diag(dv R),    M_w = diag(w dv),

with w = mu^q. The substitution v = mu u turns the deformed eigenfunctions
u into pencil eigenvectors, and the weighted normalization
sum(v_i v_j w dv) = delta_ij reproduces the deformed-metric orthonormality
of the u_i. Two consequences are preserved exactly at the discrete level:

* scaling law: replacing mu by c^{(n-2)/4} mu divides every eigenvalue by c
  (M_w scales by c, A does not);
* sign and kernel invariance of the bottom of the spectrum, since M_w is
  positive definite for every positive factor.

Multiplicity is a numerical notion here: eigenvalues are grouped into
clusters by a relative gap rule, and all case logic downstream keys off
those gaps rather than exact degeneracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError
from .geometry import ConformalFactor, DiscreteConformalClass

#: Seed for the deterministic ARPACK starting vector (reproducibility).
_V0_SEED = 0x5EED


@dataclass(frozen=True)
class SolveOptions:
    """Knobs for solve_pencil and everything built on it."""

    solver_tol: float = 1e-9
    cluster_tol: float = 1e-7
    dense_threshold: int = 4000
    max_iterations: int = 2000
    reproducible: bool = True
    #: extra eigenpairs computed beyond k_max so boundary clusters close
    cluster_margin: int = 4
    sign_tol: float = 1e-10


@dataclass(frozen=True)
class Cluster:
    """Maximal group of eigenvalue indices equal up to the relative gap rule."""

    lo: int  # 0-based first index
    hi: int  # 0-based last index (inclusive)
    gap_below: float | None  # distance to previous eigenvalue, None at bottom
    gap_above: float | None  # distance to next computed eigenvalue
    closed_above: bool  # False if the cluster touches the computed range end

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1


@dataclass
class SpectrumResult:
    """Eigenpairs of the pencil, ascending, with cluster structure.

    ``vectors`` columns are node fields, orthonormal under the weighted
    mass inner product. ``residuals`` are solve-space relative residuals
    (coefficient space for spectral backends, node space otherwise),
    normalized by ||A v|| with an absolute floor so that kernel modes,
    whose ||A v|| sits at rounding level, are judged against the operator
    scale instead. Pairs beyond ``k_requested`` are margin pairs: their
    values are cluster-accurate but their residuals are not held to
    ``solver_tol``.
    """

    eigenvalues: np.ndarray
    vectors: np.ndarray
    clusters: list[Cluster]
    residuals: np.ndarray
    k_requested: int
    n_dof: int
    weight: np.ndarray
    opts: SolveOptions
    meta: dict = field(default_factory=dict)

    @property
    def n_computed(self) -> int:
        return self.eigenvalues.size

    def cluster_of(self, k: int) -> Cluster:
        """Cluster containing the k-th eigenvalue (k is 1-based)."""
        idx = k - 1
        if idx < 0 or idx >= self.n_computed:
            raise IndexError(f"eigenvalue index {k} outside computed range")
        for cluster in self.clusters:
            if cluster.lo <= idx <= cluster.hi:
                return cluster
        raise RuntimeError("cluster partition does not cover the spectrum")


def assemble_operator(cls: DiscreteConformalClass):
    """A = S + c_n diag(dv R); satisfies A 1 = c_n (dv R)."""
    zero_order = sp.diags(cls.c_n * cls.dv * cls.curvature)
    if cls.reduced:
        return cls.stiffness_matrix() + zero_order.toarray()
    return (cls.stiffness_csr + zero_order).tocsc()


def _reduced_matrices(cls: DiscreteConformalClass, w: np.ndarray):
    """Galerkin matrices A_c, M_c in coefficient space."""
    basis = cls.basis
    a_c = np.diag(cls.basis_stiffness) + basis.T @ (
        (cls.c_n * cls.dv * cls.curvature)[:, None] * basis
    )
    m_c = basis.T @ ((cls.dv * w)[:, None] * basis)
    return a_c, m_c


def _shift_below_spectrum(cls, a_mat, m_diag: np.ndarray, w: np.ndarray) -> float:
    """A shift strictly below lambda_1, at a distance scaled to the pencil.

    lambda_1 is bracketed exactly: above by the Rayleigh quotient of the
    constant vector (which the lumped pencil evaluates in closed form) and
    below by c_n min(R / w) since the stiffness is PSD. The margin uses
    that bracket and its magnitude, falling back to a small fraction of
    the Gershgorin spread when both vanish (flat zero-curvature spectra).
    Every term scales like the eigenvalues themselves, so shift-invert
    separation survives arbitrary rescaling of the weights.
    """
    lb = float((cls.c_n * cls.curvature / w).min())
    ones = np.ones(m_diag.size)
    ub1 = float(ones @ (a_mat @ ones)) / float(m_diag.sum())
    row_sums = np.asarray(abs(a_mat).sum(axis=1)).ravel()
    gersh = float((row_sums / m_diag).max())
    margin = max(0.05 * (ub1 - lb), 0.05 * abs(ub1), 1e-6 * (gersh - lb))
    if margin <= 0.0:
        margin = 1.0
    return lb - margin


def _rayleigh_ritz(a_mat, m_diag, vecs):
    """Project the pencil on span(vecs) and re-solve; returns clean pairs.

    Tightens ARPACK output to machine-precision orthonormality and sorts
    eigenvalues; within clusters this just rotates the basis, which is
    unconstrained anyway.
    """
    mv = m_diag[:, None] * vecs
    gram = vecs.T @ mv
    chol = np.linalg.cholesky(gram)
    ortho = sla.solve_triangular(chol, vecs.T, lower=True).T
    a_proj = ortho.T @ (a_mat @ ortho)
    a_proj = 0.5 * (a_proj + a_proj.T)
    m_proj = ortho.T @ (m_diag[:, None] * ortho)
    m_proj = 0.5 * (m_proj + m_proj.T)
    evals, coeff = sla.eigh(a_proj, m_proj)
    return evals, ortho @ coeff


def solve_pencil(
    cls: DiscreteConformalClass,
    mu: ConformalFactor,
    k_max: int,
    opts: SolveOptions | None = None,
) -> SpectrumResult:
    """First k_max eigenpairs of A v = lambda M_w v, ascending.

    A margin of extra pairs (``opts.cluster_margin``) is computed so that
    the cluster containing the last requested eigenvalue can be closed;
    all computed pairs are returned. Dense solvers are used when the solve
    space is small (always, for spectral backends, whose Galerkin space is
    tiny); shift-invert Lanczos with a deterministic start vector above the
    dense threshold.
    """
    opts = opts or SolveOptions()
    k_max = int(k_max)
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    n_dof = cls.n_dof
    if k_max > n_dof:
        raise SolverError(
            f"k_max = {k_max} exceeds the {n_dof}-dimensional solve space"
        )
    w = mu.mu**cls.q
    k_eff = min(n_dof, k_max + max(0, int(opts.cluster_margin)))

    if cls.reduced:
        evals, vecs, residuals, path = _solve_reduced(cls, w, k_eff)
    elif n_dof <= opts.dense_threshold or k_eff > n_dof - 2:
        evals, vecs, residuals, path = _solve_dense(cls, w, k_eff)
    else:
        evals, vecs, residuals, path = _solve_iterative(cls, w, k_max, k_eff, opts)

    # margin pairs (beyond k_max) only inform cluster boundaries and are
    # held to value stability, not the full residual tolerance
    if np.any(residuals[:k_max] > opts.solver_tol):
        raise SolverError(
            "eigenpair residuals exceed solver_tol",
            diagnostics={
                "path": path,
                "residuals": residuals.tolist(),
                "solver_tol": opts.solver_tol,
            },
        )

    result = SpectrumResult(
        eigenvalues=evals,
        vectors=vecs,
        clusters=[],
        residuals=residuals,
        k_requested=k_max,
        n_dof=n_dof,
        weight=w,
        opts=opts,
        meta={"path": path, "backend": cls.backend_tag},
    )
    result.clusters = cluster_eigenvalues(result, opts.cluster_tol)
    return result


def _solve_reduced(cls, w, k_eff):
    a_c, m_c = _reduced_matrices(cls, w)
    try:
        evals, coeff = sla.eigh(a_c, m_c, subset_by_index=(0, k_eff - 1))
    except sla.LinAlgError as exc:
        raise SolverError(f"dense generalized eigensolve failed: {exc}") from exc
    vecs = cls.basis @ coeff
    # solve-space residuals (the Galerkin system is the object being
    # solved), in the M^-1 metric via the mass Cholesky factor
    chol = np.linalg.cholesky(m_c)
    ac_coeff = a_c @ coeff
    res = sla.solve_triangular(
        chol, ac_coeff - m_c @ coeff * evals[None, :], lower=True
    )
    av_sym = sla.solve_triangular(chol, ac_coeff, lower=True)
    half = sla.solve_triangular(chol, a_c, lower=True)
    sym_red = sla.solve_triangular(chol, half.T, lower=True)
    scale = np.maximum(
        np.linalg.norm(av_sym, axis=0),
        _RESIDUAL_FLOOR * np.abs(sym_red).max(),
    )
    residuals = np.linalg.norm(res, axis=0) / scale
    return evals, vecs, residuals, "reduced_dense"


def _solve_dense(cls, w, k_eff):
    a_mat = assemble_operator(cls)
    if sp.issparse(a_mat):
        a_mat = a_mat.toarray()
    m_diag = w * cls.dv
    inv_sqrt = 1.0 / np.sqrt(m_diag)
    sym = inv_sqrt[:, None] * a_mat * inv_sqrt[None, :]
    sym = 0.5 * (sym + sym.T)
    try:
        evals, y_vecs = sla.eigh(sym, subset_by_index=(0, k_eff - 1))
    except sla.LinAlgError as exc:
        raise SolverError(f"dense eigensolve failed: {exc}") from exc
    vecs = inv_sqrt[:, None] * y_vecs
    residuals = _node_residuals(a_mat, m_diag, evals, vecs)
    return evals, vecs, residuals, "dense"


def _solve_iterative(cls, w, k_max, k_eff, opts):
    """Block shift-invert subspace iteration with full reorthogonalization.

    A block of deterministic random vectors is driven by (A - sigma M)^-1 M
    with the shift below the spectrum, M-orthonormalized every step, and
    Rayleigh-Ritz extracted until the k_eff lowest pairs converge. Blocks
    (unlike single-vector Lanczos) capture full degenerate multiplicities;
    a cluster straddling the block edge is visible in the Ritz values and
    the block is grown until the edge is clean.
    """
    a_mat = assemble_operator(cls)
    m_diag = w * cls.dv
    m_mat = sp.diags(m_diag).tocsc()
    sigma = _shift_below_spectrum(cls, a_mat, m_diag, w)
    try:
        lu = spla.splu((a_mat - sigma * m_mat).tocsc(), permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise SolverError(f"shift-invert factorization failed: {exc}") from exc

    n = cls.n_nodes
    k_hard = k_max  # full residual tolerance for the requested pairs
    block = min(n, max(k_eff + 4, int(np.ceil(1.5 * k_eff))))
    rng = np.random.default_rng(_V0_SEED)
    basis = rng.standard_normal((n, block))
    tol = max(opts.solver_tol * 0.3, 1e-12)
    # margin pairs only inform clustering; Ritz values converge at the
    # square of the subspace rate, so value stability is the cheap test
    theta_tol = opts.cluster_tol * 1e-4
    total_iters = 0

    while True:
        converged = False
        worst = None
        theta_prev = None
        for _ in range(opts.max_iterations):
            total_iters += 1
            basis = lu.solve(m_diag[:, None] * basis)
            basis = _m_orthonormalize(basis, m_diag)
            if total_iters % 4 != 0:
                continue
            evals, vecs = _rayleigh_ritz(a_mat, m_diag, basis)
            worst = float(
                _node_residuals(a_mat, m_diag, evals[:k_hard], vecs[:, :k_hard]).max()
            )
            theta = evals[:k_eff]
            theta_stable = theta_prev is not None and np.all(
                np.abs(theta - theta_prev) <= theta_tol * (1.0 + np.abs(theta))
            )
            theta_prev = theta.copy()
            if worst <= tol and theta_stable:
                converged = True
                break
        if not converged:
            raise SolverError(
                "subspace iteration did not converge",
                diagnostics={
                    "iterations": total_iters,
                    "block": block,
                    "shift": sigma,
                    "worst_residual": worst,
                    "requested": k_eff,
                },
            )
        # block edge must not split a cluster, or multiplicities at the top
        # of the returned range could be silently truncated
        edge_gap = evals[-1] - evals[k_eff - 1]
        if block >= n or edge_gap > opts.cluster_tol * (1.0 + abs(evals[k_eff - 1])):
            break
        grow = min(n, block + max(4, block // 2))
        extra = rng.standard_normal((n, grow - block))
        basis = np.hstack([vecs, extra])
        block = grow

    meta_iters = total_iters
    evals, vecs = evals[:k_eff], vecs[:, :k_eff]
    residuals = _node_residuals(a_mat, m_diag, evals, vecs)
    return evals, vecs, residuals, f"shift_invert(iters={meta_iters},block={block})"


def _m_orthonormalize(basis, m_diag):
    gram = basis.T @ (m_diag[:, None] * basis)
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        # block became numerically dependent; re-expand via QR first
        basis, _ = np.linalg.qr(basis)
        gram = basis.T @ (m_diag[:, None] * basis)
        chol = np.linalg.cholesky(gram)
    return sla.solve_triangular(chol, basis.T, lower=True).T


#: Absolute floor (relative to the symmetrized operator scale) in residual
#: normalization: kernel modes have ||A v|| at rounding level, where a pure
#: relative-to-||A v|| contract is unattainable in floating point; the
#: floor is far below any physical residual.
_RESIDUAL_FLOOR = 1e-5


def _node_residuals(a_mat, m_diag, evals, vecs):
    """Pencil residuals in the natural M^-1 metric.

    For M-orthonormal columns v this equals the residual of the
    symmetrized standard problem at the unit vector M^(1/2) v, which is
    what a backward-stable solve controls; raw node-space norms would be
    distorted by extreme mass weights.
    """
    inv_sqrt = 1.0 / np.sqrt(m_diag)
    av = a_mat @ vecs
    res = inv_sqrt[:, None] * (av - (m_diag[:, None] * vecs) * evals[None, :])
    av_sym = inv_sqrt[:, None] * av
    a_scale = abs(a_mat).max() if sp.issparse(a_mat) else np.abs(a_mat).max()
    sym_scale = a_scale / m_diag.min()
    m_norms = np.linalg.norm(np.sqrt(m_diag)[:, None] * vecs, axis=0)
    scale = np.maximum(
        np.linalg.norm(av_sym, axis=0), _RESIDUAL_FLOOR * sym_scale * m_norms
    )
    return np.linalg.norm(res, axis=0) / scale


def cluster_eigenvalues(spectrum: SpectrumResult, cluster_tol: float | None = None) -> list[Cluster]:
    """Partition computed eigenvalues into maximal relative-gap clusters.

    Adjacent eigenvalues are merged when |l_i - l_j| <= tol (1 + |l_i|).
    The last cluster is flagged as not closed above when it touches the end
    of the computed range but more eigenvalues exist beyond it.
    """
    if cluster_tol is None:
        cluster_tol = spectrum.opts.cluster_tol
    if spectrum.opts.solver_tol > cluster_tol / 10.0:
        raise ValueError(
            f"cluster_tol {cluster_tol:.1e} requires solver_tol <= "
            f"{cluster_tol / 10.0:.1e} (got {spectrum.opts.solver_tol:.1e})"
        )
    evals = spectrum.eigenvalues
    clusters: list[Cluster] = []
    lo = 0
    for i in range(evals.size):
        at_end = i == evals.size - 1
        if not at_end:
            gap = evals[i + 1] - evals[i]
            if gap <= cluster_tol * (1.0 + abs(evals[i])):
                continue
        hi = i
        gap_below = float(evals[lo] - evals[lo - 1]) if lo > 0 else None
        gap_above = float(evals[hi + 1] - evals[hi]) if not at_end else None
        closed_above = (not at_end) or (evals.size == spectrum.n_dof)
        clusters.append(Cluster(lo, hi, gap_below, gap_above, closed_above))
        lo = i + 1
    return clusters


def solve_with_closed_cluster(
    cls: DiscreteConformalClass,
    mu: ConformalFactor,
    k: int,
    opts: SolveOptions | None = None,
) -> SpectrumResult:
    """Solve with enough eigenpairs that the cluster containing k is closed.

    Doubles the request until the cluster of the k-th eigenvalue no longer
    touches the end of the computed range (or the solve space is exhausted,
    in which case the cluster is closed by definition).
    """
    opts = opts or SolveOptions()
    request = k
    while True:
        spectrum = solve_pencil(cls, mu, request, opts)
        cluster = spectrum.cluster_of(k)
        # the whole cluster must sit inside the hard-converged range, since
        # downstream projections use its eigenvectors
        inside_hard = cluster.hi < spectrum.k_requested
        if (cluster.closed_above and inside_hard) or spectrum.n_computed >= spectrum.n_dof:
            return spectrum
        request = min(spectrum.n_dof, max(2 * request, cluster.hi + 2))


def eigenvalue_scale(spectrum: SpectrumResult) -> float:
    """Magnitude scale used for zero tests on eigenvalues."""
    return max(1.0, float(np.abs(spectrum.eigenvalues).max()))
