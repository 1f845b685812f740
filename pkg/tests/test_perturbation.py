"""First-order perturbation formulas validated against finite differences."""

import numpy as np
import pytest

import confspec as cs
from confspec.perturbation import (
    DeformationDirection,
    fd_oracle,
    one_sided_F_derivatives,
    one_sided_lambda_derivatives,
    projected_perturbation_matrix,
    zero_mean_generator,
)
from confspec.spectral import solve_with_closed_cluster


def normalized_random_factor(cls, seed, amplitude=0.3):
    rng = np.random.default_rng(seed)
    x = cls.coords
    field = amplitude * (
        rng.normal() * np.sin(x[:, 0])
        + rng.normal() * np.cos(x[:, 1])
        + rng.normal() * np.sin(x[:, 1] + x[:, 2])
    )
    return cs.normalize_factor(cls, cs.ConformalFactor(np.exp(field)))


@pytest.fixture(scope="module")
def sphere_setup(sphere4):
    mu = cs.normalize_factor(sphere4, cs.make_factor(sphere4, 1.0))
    spectrum = solve_with_closed_cluster(sphere4, mu, 2)
    return sphere4, mu, spectrum


class TestProjectedMatrix:
    def test_simple_constant_direction(self, torus8):
        # rate = -q lambda c when the deformed metric has unit mass
        mu = cs.normalize_factor(torus8, cs.make_factor(torus8, 1.0))
        spectrum = solve_with_closed_cluster(torus8, mu, 1)
        cluster = spectrum.cluster_of(1)
        c_val = 2.5
        h = np.full(torus8.n_nodes, c_val)
        _, rates = projected_perturbation_matrix(torus8, mu, spectrum, cluster, h)
        lam = spectrum.eigenvalues[0]
        assert rates.shape == (1,)
        assert rates[0] == pytest.approx(-4.0 * lam * c_val, rel=1e-11)

    def test_zero_direction(self, sphere_setup):
        sphere4, mu, spectrum = sphere_setup
        cluster = spectrum.cluster_of(2)
        _, rates = projected_perturbation_matrix(
            sphere4, mu, spectrum, cluster, np.zeros(sphere4.n_nodes)
        )
        assert rates.shape == (4,)
        assert np.abs(rates).max() == 0.0

    def test_linear_in_direction(self, sphere_setup):
        sphere4, mu, spectrum = sphere_setup
        cluster = spectrum.cluster_of(2)
        rng = np.random.default_rng(17)
        h1 = rng.standard_normal(sphere4.n_nodes)
        h2 = rng.standard_normal(sphere4.n_nodes)
        t1, _ = projected_perturbation_matrix(sphere4, mu, spectrum, cluster, h1)
        t2, _ = projected_perturbation_matrix(sphere4, mu, spectrum, cluster, h2)
        t12, _ = projected_perturbation_matrix(sphere4, mu, spectrum, cluster, h1 + h2)
        scale = max(np.abs(t12).max(), 1.0)
        assert np.abs(t12 - t1 - t2).max() <= 1e-12 * scale

    def test_rate_set_invariant_under_basis_rotation(self, sphere_setup):
        # the rate set is the spectrum of the projected matrix, so any
        # orthonormal re-basis of the cluster must reproduce it
        sphere4, mu, spectrum = sphere_setup
        cluster = spectrum.cluster_of(2)
        deg = sphere4.meta["degrees"]
        i2 = int(np.argmax(deg == 2))
        h = sphere4.basis[:, i2]
        _, base_rates = projected_perturbation_matrix(sphere4, mu, spectrum, cluster, h)
        rng = np.random.default_rng(3)
        for _ in range(10):
            gauss = rng.standard_normal((4, 4))
            q_mat, _ = np.linalg.qr(gauss)
            rotated = spectrum.vectors.copy()
            rotated[:, cluster.lo : cluster.hi + 1] = (
                spectrum.vectors[:, cluster.lo : cluster.hi + 1] @ q_mat
            )
            rot_spec = type(spectrum)(
                eigenvalues=spectrum.eigenvalues,
                vectors=rotated,
                clusters=spectrum.clusters,
                residuals=spectrum.residuals,
                k_requested=spectrum.k_requested,
                n_dof=spectrum.n_dof,
                weight=spectrum.weight,
                opts=spectrum.opts,
            )
            _, rates = projected_perturbation_matrix(sphere4, mu, rot_spec, cluster, h)
            assert np.abs(rates - base_rates).max() <= 1e-9 * (1 + np.abs(base_rates).max())

    def test_mismatched_basis_rejected(self, torus8):
        mu = cs.normalize_factor(torus8, cs.make_factor(torus8, 1.0))
        spectrum = solve_with_closed_cluster(torus8, mu, 1)
        cluster = spectrum.cluster_of(1)
        other = cs.ConformalFactor(np.exp(0.5 * np.sin(torus8.coords[:, 0])))
        with pytest.raises(ValueError):
            projected_perturbation_matrix(
                torus8, other, spectrum, cluster, np.ones(torus8.n_nodes)
            )


class TestCaseRules:
    def test_gap_below_selects_min_then_max(self):
        right, left, tag = one_sided_lambda_derivatives([-2.0, 1.0, 3.0], True, False)
        assert (right, left, tag) == (-2.0, 3.0, "gap_below")

    def test_gap_above_selects_max_then_min(self):
        right, left, tag = one_sided_lambda_derivatives([-2.0, 1.0, 3.0], False, True)
        assert (right, left, tag) == (3.0, -2.0, "gap_above")

    def test_both_gaps_simple(self):
        right, left, tag = one_sided_lambda_derivatives([1.5], True, True)
        assert right == left == 1.5 and tag == "both_gaps"

    def test_both_gaps_rejects_multiple(self):
        with pytest.raises(ValueError):
            one_sided_lambda_derivatives([1.0, 2.0], True, True)

    def test_no_gap_is_hard_error(self):
        with pytest.raises(cs.GapConditionError):
            one_sided_lambda_derivatives([1.0, 2.0], False, False)

    def test_no_gap_from_cluster_interior(self, sphere4):
        mu = cs.normalize_factor(sphere4, cs.make_factor(sphere4, 1.0))
        h = np.ones(sphere4.n_nodes)
        with pytest.raises(cs.GapConditionError):
            one_sided_F_derivatives(sphere4, mu, h, 3)  # strictly inside {3.75} x 4


class TestFDerivatives:
    def test_constant_direction_vanishes(self, torus8):
        # scale invariance: the volume term cancels the rate exactly
        mu = cs.normalize_factor(torus8, cs.make_factor(torus8, 1.0))
        report = one_sided_F_derivatives(torus8, mu, np.full(torus8.n_nodes, 3.0), 1)
        assert abs(report.F_right) <= 1e-12
        assert abs(report.F_left) <= 1e-12

    def test_requires_unit_mass(self, torus8):
        with pytest.raises(cs.NormalizationError):
            one_sided_F_derivatives(
                torus8, cs.make_factor(torus8, 1.0), np.ones(torus8.n_nodes), 1
            )

    def test_report_serializable(self, torus8):
        import json

        mu = normalized_random_factor(torus8, 5)
        h = zero_mean_generator(torus8, mu, "sin(x1)")
        report = one_sided_F_derivatives(torus8, mu, h, 1)
        payload = json.dumps(report.to_dict())
        assert "derivative_set" in payload


class TestZeroMeanGenerator:
    def test_constant_input_gives_zero(self, torus8):
        mu = normalized_random_factor(torus8, 1)
        h = zero_mean_generator(torus8, mu, 5.0)
        assert np.abs(h.h).max() <= 1e-12

    def test_kills_volume_term(self, torus8):
        mu = cs.normalize_factor(torus8, cs.make_factor(torus8, 1.0))
        h = zero_mean_generator(torus8, mu, "sin(x1)")
        # the sine comes back times mu^2 and its deformed mean vanishes
        assert np.abs(np.sum(h.h * mu.mu**4 * torus8.dv)) <= 1e-12
        expected = np.sin(torus8.coords[:, 0]) * mu.mu**2
        assert np.abs(h.h - expected).max() <= 1e-12 * np.abs(expected).max()

    def test_volume_term_zero_for_random_fields(self, torus8):
        rng = np.random.default_rng(0)
        mu = normalized_random_factor(torus8, 2)
        for seed in range(5):
            w_field = rng.standard_normal(torus8.n_nodes)
            h = zero_mean_generator(torus8, mu, w_field)
            report = one_sided_F_derivatives(torus8, mu, h, 1)
            assert abs(report.volume_term) <= 1e-12

    def test_idempotent(self, torus8):
        mu = normalized_random_factor(torus8, 3)
        w_field = np.cos(torus8.coords[:, 1])
        once = zero_mean_generator(torus8, mu, w_field)
        # feeding the generator output back through (divided by mu^2)
        twice = zero_mean_generator(torus8, mu, once.h / mu.mu**2)
        assert np.abs(once.h - twice.h).max() <= 1e-12 * (1 + np.abs(once.h).max())


class TestFdOracle:
    def test_zero_direction(self, torus8):
        mu = normalized_random_factor(torus8, 4)
        fd = fd_oracle(torus8, mu, np.zeros(torus8.n_nodes), 1)
        assert fd.F_right == 0.0 and fd.F_left == 0.0
        assert fd.lambda_right == 0.0 and fd.lambda_left == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_formula_simple_eigenvalue(self, torus8, seed):
        mu = normalized_random_factor(torus8, seed)
        rng = np.random.default_rng(seed + 100)
        x = torus8.coords
        h_raw = rng.normal() * np.sin(x[:, 0]) + rng.normal() * np.cos(x[:, 1] + 1.0)
        report = one_sided_F_derivatives(torus8, mu, h_raw, 1)
        fd = fd_oracle(torus8, mu, h_raw, 1)
        scale = max(abs(fd.F_right), 1e-5)
        assert abs(report.F_right - fd.F_right) <= 1e-3 * scale
        assert abs(report.F_left - fd.F_left) <= 1e-3 * scale

    def test_degenerate_cluster_branches(self, sphere4):
        # the sorted k-th eigenvalue follows the min rate to the right and
        # the max rate to the left when the gap is below the cluster
        mu = cs.normalize_factor(sphere4, cs.make_factor(sphere4, 1.0))
        deg = sphere4.meta["degrees"]
        i2 = int(np.argmax(deg == 2))
        h = 0.5 * sphere4.basis[:, i2] / np.abs(sphere4.basis[:, i2]).max()
        report = one_sided_F_derivatives(sphere4, mu, h, 2)
        assert report.case_tag == "gap_below"
        spread = report.derivative_set.max() - report.derivative_set.min()
        assert spread > 1.0  # a genuinely split cluster
        fd = fd_oracle(sphere4, mu, h, 2)
        assert fd.lambda_right == pytest.approx(report.derivative_set.min(), rel=1e-2)
        assert fd.lambda_left == pytest.approx(report.derivative_set.max(), rel=1e-2)
        # the fd branch matches the case-rule value, not some other branch
        assert abs(fd.lambda_right - report.derivative_set.max()) > 0.1 * spread

    def test_positivity_guard(self, torus8):
        mu = normalized_random_factor(torus8, 6)
        giant = np.full(torus8.n_nodes, 5.0e3)
        with pytest.raises(cs.PositivityError):
            fd_oracle(torus8, mu, giant, 1)

    def test_direction_wrapper_accepted(self, torus8):
        mu = normalized_random_factor(torus8, 7)
        wrapped = DeformationDirection(np.sin(torus8.coords[:, 0]) * mu.mu**2)
        fd = fd_oracle(torus8, mu, wrapped, 1)
        assert np.isfinite(fd.F_right)
