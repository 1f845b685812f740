"""Backend construction, conformal bookkeeping, and normalization."""

import numpy as np
import pytest

import confspec as cs
from confspec.expressions import ExpressionError, evaluate_expression
from confspec.geometry import build_synthetic_class, conformal_data, factor_mass

TWO_PI = 2.0 * np.pi


def path_graph_class(n=6, dim=4):
    """Small synthetic class: path-graph stiffness, random positive weights."""
    rng = np.random.default_rng(42)
    stiff = np.zeros((n, n))
    for i in range(n - 1):
        stiff[i, i] += 1.0
        stiff[i + 1, i + 1] += 1.0
        stiff[i, i + 1] -= 1.0
        stiff[i + 1, i] -= 1.0
    dv = rng.uniform(0.5, 1.5, n)
    curvature = rng.uniform(-1.0, 1.0, n)
    return build_synthetic_class(stiff, dv, curvature, dim)


class TestTorus:
    def test_total_volume(self, torus16):
        assert abs(torus16.dv.sum() - TWO_PI**3) <= 1e-10 * TWO_PI**3

    def test_conformal_constants(self, torus16):
        assert torus16.c_n == pytest.approx(1.0 / 8.0, abs=0)
        assert torus16.q == pytest.approx(4.0, abs=0)

    def test_curvature_integral_with_sine(self, torus16_sin):
        # oracle: the sine term integrates to zero over a full period
        expected = 6.0 * TWO_PI**3
        total = float(np.sum(torus16_sin.dv * torus16_sin.curvature))
        assert abs(total - expected) <= 1e-10 * expected

    def test_stiffness_annihilates_constants(self, torus16):
        ones = np.ones(torus16.n_nodes)
        assert np.abs(torus16.apply_stiffness(ones)).max() == 0.0

    def test_stiffness_symmetric_psd(self, torus8):
        mat = torus8.stiffness_csr
        assert abs(mat - mat.T).max() == 0.0
        rng = np.random.default_rng(1)
        for _ in range(5):
            vec = rng.standard_normal(torus8.n_nodes)
            assert vec @ (mat @ vec) >= -1e-12

    @pytest.mark.parametrize(
        "grid, edges",
        [((3, 8, 8), (TWO_PI,) * 3), ((8, 8, 8), (0.0, TWO_PI, TWO_PI)), ((8,), (-1.0,))],
    )
    def test_rejects_bad_construction(self, grid, edges):
        with pytest.raises(cs.ConstructionError):
            cs.build_torus_class(grid, edges, 6.0)


class TestSphere:
    def test_total_volume(self, sphere4):
        assert abs(sphere4.dv.sum() - 2 * np.pi**2) <= 1e-10 * 2 * np.pi**2

    def test_basis_count_matches_multiplicities(self, sphere4):
        # oracle: degree-l harmonics on the 3-sphere have multiplicity (l+1)^2
        expected = sum((l + 1) ** 2 for l in range(5))
        assert sphere4.basis.shape[1] == expected == 55

    def test_basis_orthonormal_under_quadrature(self, sphere4):
        gram = sphere4.basis.T @ (sphere4.dv[:, None] * sphere4.basis)
        assert np.abs(gram - np.eye(55)).max() <= 1e-12

    def test_curvature_is_six(self, sphere4):
        assert np.all(sphere4.curvature == 6.0)

    def test_constant_annihilated(self, sphere4):
        ones = np.ones(sphere4.n_nodes)
        assert np.abs(sphere4.apply_stiffness(ones)).max() <= 1e-12

    def test_rejects_small_cutoff(self):
        with pytest.raises(cs.ConstructionError):
            cs.build_sphere3_class(1)


class TestSynthetic:
    def test_exponent_consistency(self):
        for dim in (3, 4, 5, 7):
            cls = path_graph_class(dim=dim)
            assert cls.c_n * 4.0 * (dim - 1) == pytest.approx(dim - 2, rel=1e-15)
            assert cls.q * (dim - 2) == pytest.approx(4.0, rel=1e-15)

    def test_rejects_asymmetric_stiffness(self):
        bad = np.array([[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]])
        with pytest.raises(cs.ConstructionError):
            build_synthetic_class(bad, np.ones(3), np.zeros(3), 3)

    def test_rejects_nonpositive_weights(self):
        stiff = np.zeros((3, 3))
        with pytest.raises(cs.ConstructionError):
            build_synthetic_class(stiff, np.array([1.0, 0.0, 1.0]), np.zeros(3), 3)


class TestConformalData:
    def test_identity_factor(self, torus8):
        mu = cs.make_factor(torus8, 1.0)
        w, vol = conformal_data(torus8, mu)
        assert np.all(w == 1.0)
        assert np.abs(vol - torus8.dv).max() == 0.0

    def test_constant_factor_n3(self, torus8):
        mu = cs.make_factor(torus8, 2.0)
        w, vol = conformal_data(torus8, mu)
        assert np.allclose(w, 16.0, rtol=1e-14)
        assert np.allclose(vol, 64.0 * torus8.dv, rtol=1e-14)

    def test_constant_factor_n4(self):
        cls = path_graph_class(dim=4)
        mu = cs.make_factor(cls, 3.0)
        w, vol = conformal_data(cls, mu)
        assert np.allclose(w, 9.0, rtol=1e-14)
        assert np.allclose(vol, 81.0 * cls.dv, rtol=1e-14)

    def test_nodewise_volume_identity(self, torus8):
        rng = np.random.default_rng(7)
        for _ in range(5):
            mu = cs.ConformalFactor(np.exp(rng.normal(0, 0.5, torus8.n_nodes)))
            w, vol = conformal_data(torus8, mu)
            assert np.all(w > 0) and np.all(vol > 0)
            expected = mu.mu**2 * w * torus8.dv
            assert np.abs(vol - expected).max() <= 1e-14 * np.abs(expected).max()


class TestNormalizeFactor:
    def test_constant_on_torus(self, torus16):
        mu = cs.normalize_factor(torus16, cs.make_factor(torus16, 1.0))
        # solve c^4 (2 pi)^3 = 1
        assert np.allclose(mu.mu, TWO_PI ** (-0.75), rtol=1e-13)
        assert abs(factor_mass(torus16, mu) - 1.0) <= 1e-12

    def test_idempotent(self, torus8):
        rng = np.random.default_rng(3)
        mu = cs.ConformalFactor(np.exp(rng.normal(0, 0.4, torus8.n_nodes)))
        once = cs.normalize_factor(torus8, mu)
        twice = cs.normalize_factor(torus8, once)
        assert np.abs(once.mu - twice.mu).max() <= 1e-12 * np.abs(once.mu).max()

    def test_scale_invariant(self, torus8):
        rng = np.random.default_rng(4)
        mu = cs.ConformalFactor(np.exp(rng.normal(0, 0.4, torus8.n_nodes)))
        scaled = cs.ConformalFactor(5.0 * mu.mu)
        a = cs.normalize_factor(torus8, mu)
        b = cs.normalize_factor(torus8, scaled)
        assert np.abs(a.mu - b.mu).max() <= 1e-12 * np.abs(a.mu).max()


class TestFactorValidation:
    def test_rejects_nonpositive(self):
        with pytest.raises(cs.PositivityError):
            cs.ConformalFactor(np.array([1.0, 0.0, 1.0]))
        with pytest.raises(cs.PositivityError):
            cs.ConformalFactor(np.array([1.0, -2.0, 1.0]))

    def test_rejects_below_floor_not_clamped(self):
        values = np.array([1.0, 1e-9, 1.0])
        with pytest.raises(cs.PositivityError):
            cs.ConformalFactor(values)  # default floor 1e-8
        ok = cs.ConformalFactor(values, mu_floor=1e-10)
        assert ok.mu[1] == 1e-9  # accepted unchanged under a lower floor

    def test_rejects_nonfinite(self):
        with pytest.raises(cs.PositivityError):
            cs.ConformalFactor(np.array([1.0, np.nan, 1.0]))


class TestExpressions:
    def test_basic_fields(self, torus8):
        field = torus8.node_field("6 + 2*sin(x1)")
        assert np.allclose(field, 6.0 + 2.0 * np.sin(torus8.coords[:, 0]))
        field = torus8.node_field("exp(0.5*cos(x2 - pi))")
        assert np.allclose(field, np.exp(0.5 * np.cos(torus8.coords[:, 1] - np.pi)))

    def test_constants_broadcast(self):
        out = evaluate_expression("3.5", np.zeros((4, 2)))
        assert out.shape == (4,) and np.all(out == 3.5)

    @pytest.mark.parametrize(
        "expr", ["__import__('os')", "x1**2", "tan(x1)", "x9", "lambda: 1", "sin(x1, x2)"]
    )
    def test_rejects_outside_grammar(self, expr):
        with pytest.raises(ExpressionError):
            evaluate_expression(expr, np.zeros((3, 3)))
