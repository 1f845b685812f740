"""Discrete conformal classes and conformal factors.

A discrete conformal class is the tuple (S, dv, R, n): a symmetric
positive-semidefinite stiffness operator S with S 1 = 0 approximating the
Dirichlet form, lumped volume weights dv, a scalar-curvature field R, and
the manifold dimension n >= 3. Every operation in the toolkit is expressed
through these four objects plus the conformal exponents

    c_n = (n - 2) / (4 (n - 1)),    q = 4 / (n - 2).

A conformal factor mu is a strictly positive node field; it deforms the
background metric within its conformal class, with weight w = mu^q and
deformed volume element vol_tilde = mu^(2+q) dv (the nodewise form of the
exponent identity 2 + q = 2n/(n-2)).

Two concrete backends are provided:

* ``torus_fd``: flat 3-torus with a 7-point second-order periodic
  finite-difference stiffness and uniform cell volumes. Curvature is a
  synthetic node field; the class is defined by (S, dv, R, n) alone, so
  any smooth field is admissible and gives analytically checkable cases.
* ``sphere3_spectral``: the round 3-sphere discretized by a Galerkin basis
  of hyperspherical harmonics of degree <= L over a product quadrature
  exact for polynomial degree 2L. The stiffness is diagonal in coefficient
  space with entries l(l+2); node values live on the quadrature points.

A third tag, ``synthetic``, wraps caller-supplied (S, dv, R, n) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import eval_gegenbauer, sph_harm_y

from .errors import ConstructionError, PositivityError
from .expressions import evaluate_expression

#: Default positivity floor for conformal factors. Factors below it are
#: rejected, never clamped: silent clamping hides modeling errors.
MU_FLOOR = 1e-8

_SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteConformalClass:
    """Background data of a discretized closed manifold.

    ``stiffness`` is stored in CSR form for grid backends. For spectral
    backends the operator is the sandwich W B D B^T W (W = diag(dv), D the
    diagonal of Laplace-Beltrami eigenvalues), represented by ``basis`` and
    ``basis_stiffness``; :meth:`apply_stiffness` hides the difference.
    """

    dim: int
    dv: np.ndarray
    curvature: np.ndarray
    backend_tag: str
    coords: np.ndarray
    stiffness_csr: sp.csr_matrix | None = None
    basis: np.ndarray | None = None
    basis_stiffness: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def c_n(self) -> float:
        return (self.dim - 2) / (4.0 * (self.dim - 1))

    @property
    def q(self) -> float:
        return 4.0 / (self.dim - 2)

    @property
    def n_nodes(self) -> int:
        return self.dv.size

    @property
    def reduced(self) -> bool:
        """True when the pencil is solved in Galerkin coefficient space."""
        return self.basis is not None

    @property
    def n_dof(self) -> int:
        """Dimension of the solve space (coefficients if reduced)."""
        return self.basis.shape[1] if self.reduced else self.n_nodes

    def apply_stiffness(self, x: np.ndarray) -> np.ndarray:
        """S x as a node field; works for grid and spectral backends."""
        x = np.asarray(x, dtype=float)
        if self.reduced:
            coeff = self.basis_stiffness * (self.basis.T @ (self.dv * x))
            return self.dv * (self.basis @ coeff)
        return self.stiffness_csr @ x

    def stiffness_matrix(self):
        """Assembled N x N stiffness (sparse for grids, dense sandwich else)."""
        if self.reduced:
            wb = self.dv[:, None] * self.basis
            return (wb * self.basis_stiffness) @ wb.T
        return self.stiffness_csr

    def node_field(self, spec) -> np.ndarray:
        """Resolve a constant / expression / array / callable into a field."""
        return _resolve_field(spec, self.coords)

    def __post_init__(self):
        if self.dim < 3:
            raise ConstructionError(f"dimension must be >= 3, got {self.dim}")
        if np.any(self.dv <= 0):
            raise ConstructionError("volume weights must be strictly positive")
        ones = np.ones(self.n_nodes)
        s_one = self.apply_stiffness(ones)
        scale = float(np.abs(self.dv).max()) or 1.0
        if np.abs(s_one).max() > 1e-10 * scale * self.n_nodes:
            raise ConstructionError("stiffness does not annihilate constants")


@dataclass(frozen=True)
class ConformalFactor:
    """A strictly positive node field mu defining the metric mu^q g."""

    mu: np.ndarray
    mu_floor: float = MU_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        if self.mu_floor <= 0:
            raise PositivityError("mu_floor must be positive")
        if not np.all(np.isfinite(self.mu)):
            raise PositivityError("conformal factor has non-finite entries")
        if np.any(self.mu < self.mu_floor):
            bad = float(self.mu.min())
            raise PositivityError(
                f"conformal factor min {bad:.3e} is below the floor "
                f"{self.mu_floor:.1e}; factors are rejected, not clamped"
            )

    @property
    def n_nodes(self) -> int:
        return self.mu.size


def _resolve_field(spec, coords) -> np.ndarray:
    """Standalone version of node_field for use during construction."""
    n_nodes = coords.shape[0]
    if isinstance(spec, str):
        return evaluate_expression(spec, coords)
    if callable(spec):
        return np.asarray(spec(coords), dtype=float)
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 0:
        return np.full(n_nodes, float(arr))
    if arr.shape != (n_nodes,):
        raise ConstructionError(f"field has shape {arr.shape}, expected ({n_nodes},)")
    return arr.copy()


def _periodic_lap1d(n: int, h: float) -> sp.csr_matrix:
    """1-D periodic second-difference operator (positive semidefinite)."""
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    mat = sp.diags([main, off, off], [0, 1, -1], format="lil")
    mat[0, n - 1] += -1.0
    mat[n - 1, 0] += -1.0
    return (mat / h**2).tocsr()


def build_torus_class(grid_per_axis, edge_lengths, curvature_spec) -> DiscreteConformalClass:
    """Flat 3-torus with periodic 7-point stiffness and uniform cell volumes.

    ``curvature_spec`` may be a constant, an expression in x1..x3, an array
    of length N, or a callable on the node coordinates. The curvature is
    synthetic: all implemented identities depend only on (S, dv, R, n).
    """
    grid = tuple(int(g) for g in np.atleast_1d(grid_per_axis))
    if len(grid) == 1:
        grid = grid * 3
    edges = tuple(float(e) for e in np.atleast_1d(edge_lengths))
    if len(edges) == 1:
        edges = edges * 3
    if len(grid) != 3 or len(edges) != 3:
        raise ConstructionError("torus backend needs 3 grid sizes and 3 edges")
    if any(g < 4 for g in grid):
        raise ConstructionError(f"grid sizes must be >= 4 per axis, got {grid}")
    if any(e <= 0 for e in edges):
        raise ConstructionError(f"edge lengths must be positive, got {edges}")

    steps = [edges[a] / grid[a] for a in range(3)]
    dv_cell = steps[0] * steps[1] * steps[2]
    n_nodes = grid[0] * grid[1] * grid[2]

    eyes = [sp.identity(g, format="csr") for g in grid]
    lap = [_periodic_lap1d(grid[a], steps[a]) for a in range(3)]
    stiffness = dv_cell * (
        sp.kron(sp.kron(lap[0], eyes[1]), eyes[2])
        + sp.kron(sp.kron(eyes[0], lap[1]), eyes[2])
        + sp.kron(sp.kron(eyes[0], eyes[1]), lap[2])
    )
    stiffness = stiffness.tocsr()

    axes = [steps[a] * np.arange(grid[a]) for a in range(3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)

    return DiscreteConformalClass(
        dim=3,
        dv=np.full(n_nodes, dv_cell),
        curvature=_resolve_field(curvature_spec, coords),
        backend_tag="torus_fd",
        coords=coords,
        stiffness_csr=stiffness,
        meta={"grid": grid, "edges": edges},
    )


def _sphere3_quadrature(degree_cutoff: int):
    """Product quadrature on S^3 exact for polynomial degree 2L + 1.

    Gauss-Chebyshev (2nd kind) in cos(chi) absorbs the sin^2(chi) volume
    factor, Gauss-Legendre in cos(theta) the sin(theta) factor, and a
    uniform grid covers phi. Returns angles, weights, and R^4 embeddings.
    """
    n1 = degree_cutoff + 1
    k = np.arange(1, n1 + 1)
    s_nodes = np.cos(k * np.pi / (n1 + 1))
    s_weights = (np.pi / (n1 + 1)) * np.sin(k * np.pi / (n1 + 1)) ** 2
    t_nodes, t_weights = np.polynomial.legendre.leggauss(n1)
    n_phi = 2 * degree_cutoff + 2
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    phi_w = 2.0 * np.pi / n_phi

    ss, tt, pp = np.meshgrid(s_nodes, t_nodes, phi, indexing="ij")
    ws, wt = np.meshgrid(s_weights, t_weights, indexing="ij")
    weights = (ws[..., None] * wt[..., None] * phi_w * np.ones(n_phi)).ravel()
    chi = np.arccos(ss.ravel())
    theta = np.arccos(tt.ravel())
    phi_flat = pp.ravel()

    sin_chi = np.sin(chi)
    sin_theta = np.sin(theta)
    coords = np.stack(
        [
            np.cos(chi),
            sin_chi * np.cos(theta),
            sin_chi * sin_theta * np.cos(phi_flat),
            sin_chi * sin_theta * np.sin(phi_flat),
        ],
        axis=1,
    )
    return chi, theta, phi_flat, weights, coords


def _real_sph_harm(l: int, m: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    val = sph_harm_y(l, abs(m), theta, phi)
    if m < 0:
        return np.sqrt(2.0) * (-1) ** m * val.imag
    if m > 0:
        return np.sqrt(2.0) * (-1) ** m * val.real
    return val.real


def build_sphere3_class(degree_cutoff: int) -> DiscreteConformalClass:
    """Round S^3 spectral-Galerkin class with harmonics of degree <= L.

    The basis column of degree l and S^2-order (j, m) is

        sin^j(chi) * C_{l-j}^{(j+1)}(cos chi) * Y_{jm}(theta, phi),

    normalized under the quadrature (which is exact for these products, so
    the basis is orthonormal to machine precision). Degree-l columns carry
    Laplace-Beltrami eigenvalue l(l+2); there are (l+1)^2 of them.
    """
    degree_cutoff = int(degree_cutoff)
    if degree_cutoff < 2:
        raise ConstructionError(f"degree cutoff must be >= 2, got {degree_cutoff}")

    chi, theta, phi, weights, coords = _sphere3_quadrature(degree_cutoff)
    cos_chi = np.cos(chi)
    sin_chi = np.sin(chi)

    columns = []
    degrees = []
    for l in range(degree_cutoff + 1):
        for j in range(l + 1):
            radial = sin_chi**j * eval_gegenbauer(l - j, j + 1, cos_chi)
            for m in range(-j, j + 1):
                col = radial * _real_sph_harm(j, m, theta, phi)
                col /= np.sqrt(np.sum(weights * col * col))
                columns.append(col)
                degrees.append(l)
    basis = np.array(columns).T
    degrees = np.array(degrees, dtype=float)

    return DiscreteConformalClass(
        dim=3,
        dv=weights,
        curvature=np.full(weights.size, 6.0),
        backend_tag="sphere3_spectral",
        coords=coords,
        basis=basis,
        basis_stiffness=degrees * (degrees + 2.0),
        meta={"degree_cutoff": degree_cutoff, "degrees": degrees},
    )


def build_synthetic_class(stiffness, dv, curvature, dim) -> DiscreteConformalClass:
    """Wrap caller-supplied (S, dv, R, n) arrays as a conformal class.

    S must be symmetric positive-semidefinite with vanishing row sums; both
    properties are checked at construction.
    """
    dv = np.asarray(dv, dtype=float)
    curvature = np.asarray(curvature, dtype=float)
    mat = sp.csr_matrix(stiffness)
    asym = abs(mat - mat.T).max()
    scale = max(abs(mat).max(), 1.0)
    if asym > _SYMMETRY_TOL * scale:
        raise ConstructionError(f"stiffness asymmetry {asym:.2e} exceeds tolerance")
    coords = np.arange(dv.size, dtype=float)[:, None]
    return DiscreteConformalClass(
        dim=int(dim),
        dv=dv,
        curvature=curvature,
        backend_tag="synthetic",
        coords=coords,
        stiffness_csr=mat,
    )


def make_factor(cls: DiscreteConformalClass, spec, mu_floor: float = MU_FLOOR) -> ConformalFactor:
    """Build a conformal factor from a constant/expression/array/callable."""
    return ConformalFactor(cls.node_field(spec), mu_floor=mu_floor)


def conformal_data(cls: DiscreteConformalClass, mu: ConformalFactor):
    """Weight w = mu^q and deformed volume element vol_tilde = mu^(2+q) dv.

    The exponent identity 2 + q = 2n/(n-2) holds exactly, so vol_tilde is
    computed as mu^2 * w * dv nodewise.
    """
    w = mu.mu**cls.q
    vol_tilde = mu.mu**2 * w * cls.dv
    return w, vol_tilde


def normalize_factor(cls: DiscreteConformalClass, mu: ConformalFactor) -> ConformalFactor:
    """Rescale mu so that sum(mu^q dv) = 1.

    The map is idempotent and scale-invariant: mu and c*mu return the same
    output up to roundoff.
    """
    mass = float(np.sum(mu.mu**cls.q * cls.dv))
    scale = mass ** (-1.0 / cls.q)
    return ConformalFactor(scale * mu.mu, mu_floor=mu.mu_floor * min(scale, 1.0))


def factor_mass(cls: DiscreteConformalClass, mu: ConformalFactor) -> float:
    """The normalization integral sum(mu^q dv)."""
    return float(np.sum(mu.mu**cls.q * cls.dv))
