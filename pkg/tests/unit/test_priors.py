"""
Unit tests for the prior densities, penalties and calibration.

The three non-local families share one contract: the density vanishes at
theta_i = 0, integrates to one, and at its default dispersion puts 1% of
its mass on |theta| / sqrt(phi) < 0.2.
"""

import math

import numpy as np
import pytest
from scipy import stats

from nlpmix.models import PriorFamily, PriorSpec
from nlpmix.services.priors import (
    calibrate_tau,
    default_tau,
    density_1d,
    local_kernel_log_density,
    log_density,
    log_inverse_gamma,
    log_penalty,
    marginal_cdf,
    penalty_d,
    prob_below_threshold,
    total_mass,
)


# =============================================================================
# TEST CLASS: Default Dispersions and Calibration
# =============================================================================

@pytest.mark.unit
class TestCalibration:
    """Default tau values and the 1% mass below 0.2 they are chosen for."""

    @pytest.mark.parametrize("family,expected", [
        ("pmom", 0.358),
        ("pimom", 0.133),
        ("pemom", 0.119),
        ("normal", 1.0),
    ])
    def test_default_tau(self, family, expected):
        assert default_tau(family) == expected, f"default tau for {family}"

    def test_prob_below_threshold_is_one_percent(self, nonlocal_spec):
        """Quadrature P(|theta| < 0.2) at phi = 1 is 0.01 +/- 0.002."""
        # Act
        prob = prob_below_threshold(nonlocal_spec, 0.2)

        # Assert
        assert abs(prob - 0.01) <= 0.002, \
            f"{nonlocal_spec.family.value}: P(|theta|<0.2) = {prob:.5f}"

    def test_density_integrates_to_one(self, nonlocal_spec):
        mass = total_mass(nonlocal_spec)
        assert abs(mass - 1.0) <= 1e-6, f"{nonlocal_spec.family.value}: mass {mass:.9f}"

    def test_density_integrates_to_one_at_other_phi(self, nonlocal_spec):
        mass = total_mass(nonlocal_spec, phi=3.5)
        assert abs(mass - 1.0) <= 1e-6, f"mass at phi=3.5 is {mass:.9f}"

    def test_threshold_probability_is_scale_free(self, nonlocal_spec):
        """P(|theta| / sqrt(phi) < t) does not depend on phi."""
        assert prob_below_threshold(nonlocal_spec, 0.2, phi=4.0) == \
            pytest.approx(prob_below_threshold(nonlocal_spec, 0.2, phi=1.0), abs=1e-8)

    @pytest.mark.parametrize("family", ["pmom", "pimom", "pemom"])
    def test_calibrate_tau_recovers_defaults(self, family):
        """Root-finding the 1% condition lands within 5% of the tabulated default."""
        tau = calibrate_tau(family)
        assert abs(tau - default_tau(family)) / default_tau(family) < 0.05, \
            f"calibrated tau {tau:.4f} vs default {default_tau(family)}"

    def test_calibrated_tau_hits_target(self):
        tau = calibrate_tau("pimom")
        prob = prob_below_threshold(PriorSpec(family="pimom", tau=tau), 0.2)
        assert prob == pytest.approx(0.01, abs=1e-7)

    def test_calibrate_rejects_normal(self):
        with pytest.raises(ValueError):
            calibrate_tau("normal")

    def test_threshold_must_be_positive(self, pmom_spec):
        with pytest.raises(ValueError):
            prob_below_threshold(pmom_spec, 0.0)


# =============================================================================
# TEST CLASS: Penalties and Densities
# =============================================================================

@pytest.mark.unit
class TestDensities:
    """Closed forms of each family against independent formulas."""

    def test_pmom_density_matches_formula(self, pmom_spec):
        """pMOM: theta^2 / (tau phi) * N(theta; 0, tau phi)."""
        # Arrange
        theta = np.array([-1.3, -0.2, 0.05, 0.7, 2.0])
        phi = 1.7
        v = pmom_spec.tau * phi

        # Act
        got = density_1d(pmom_spec, theta, phi)

        # Assert
        expected = theta ** 2 / v * stats.norm.pdf(theta, scale=math.sqrt(v))
        np.testing.assert_allclose(got, expected, rtol=1e-12)

    def test_pimom_density_matches_formula(self, pimom_spec):
        """piMOM: sqrt(tau phi / pi) theta^-2 exp(-tau phi / theta^2)."""
        theta = np.array([-2.0, -0.4, 0.1, 0.9, 25.0])
        phi = 0.8
        tp = pimom_spec.tau * phi
        expected = np.sqrt(tp / np.pi) / theta ** 2 * np.exp(-tp / theta ** 2)
        np.testing.assert_allclose(density_1d(pimom_spec, theta, phi), expected, rtol=1e-12)

    def test_pemom_density_matches_formula(self, pemom_spec):
        """peMOM: exp(sqrt 2 - tau phi / theta^2) N(theta; 0, tau phi)."""
        theta = np.array([-1.0, -0.3, 0.2, 0.6])
        phi = 1.2
        v = pemom_spec.tau * phi
        expected = np.exp(math.sqrt(2) - v / theta ** 2) * stats.norm.pdf(theta, scale=math.sqrt(v))
        np.testing.assert_allclose(density_1d(pemom_spec, theta, phi), expected, rtol=1e-12)

    def test_pimom_penalty_times_envelope_is_density(self, pimom_spec):
        """d(theta, phi) is the iMOM density over N(0, tau_n phi)."""
        theta = np.array([-0.8, 0.3, 1.1])
        phi = 1.4
        envelope = np.exp(local_kernel_log_density(pimom_spec, theta, phi))
        product = penalty_d(pimom_spec, theta, phi) * envelope
        np.testing.assert_allclose(product, density_1d(pimom_spec, theta, phi), rtol=1e-10)

    def test_density_vanishes_at_zero(self, nonlocal_spec):
        assert density_1d(nonlocal_spec, 0.0) == 0.0, "non-local density must be 0 at the origin"
        assert log_penalty(nonlocal_spec, np.array([0.0]), 1.0)[0] == -np.inf

    def test_normal_family_has_no_penalty(self):
        spec = PriorSpec(family="normal")
        np.testing.assert_array_equal(log_penalty(spec, np.array([0.0, 0.5]), 1.0), [0.0, 0.0])
        assert density_1d(spec, 0.0) == pytest.approx(stats.norm.pdf(0.0))

    def test_density_is_symmetric(self, nonlocal_spec):
        theta = np.linspace(0.05, 3.0, 17)
        np.testing.assert_allclose(density_1d(nonlocal_spec, theta), density_1d(nonlocal_spec, -theta))

    def test_penalty_d_scalar_returns_float(self, pmom_spec):
        value = penalty_d(pmom_spec, 0.5, 1.0)
        assert isinstance(value, float)
        assert value == pytest.approx(0.25 / pmom_spec.tau)

    def test_log_density_is_sum_of_coordinates(self, pemom_spec):
        theta = np.array([0.4, -1.1, 0.9])
        expected = float(np.sum(np.log(density_1d(pemom_spec, theta, 2.0))))
        assert log_density(pemom_spec, theta, 2.0) == pytest.approx(expected, rel=1e-12)

    def test_far_tail_is_finite(self, pimom_spec):
        """The direct piMOM form stays accurate where the envelope form cancels."""
        value = density_1d(pimom_spec, 1e4, 1.0)
        expected = math.sqrt(pimom_spec.tau / math.pi) / 1e8
        assert value == pytest.approx(expected, rel=1e-6)

    @pytest.mark.parametrize("phi", [0.0, -1.0, float("nan"), float("inf")])
    def test_invalid_phi_rejected(self, pmom_spec, phi):
        with pytest.raises(ValueError):
            log_density(pmom_spec, [0.5], phi)

    def test_non_finite_theta_rejected(self, pmom_spec):
        with pytest.raises(ValueError):
            log_density(pmom_spec, [0.5, np.nan], 1.0)


# =============================================================================
# TEST CLASS: Marginal cdf and the Residual-Variance Prior
# =============================================================================

@pytest.mark.unit
class TestMarginalCdf:

    def test_cdf_at_origin_is_half(self, nonlocal_spec):
        assert marginal_cdf(nonlocal_spec, 0.0) == pytest.approx(0.5, abs=1e-12)

    def test_cdf_is_monotone_and_reaches_one(self, nonlocal_spec):
        xs = np.array([-5.0, -1.0, -0.2, 0.2, 1.0, 5.0, 200.0])
        values = marginal_cdf(nonlocal_spec, xs)
        assert np.all(np.diff(values) > 0), f"cdf not increasing: {values}"
        assert values[-1] == pytest.approx(1.0, abs=5e-3)

    def test_pmom_cdf_closed_form(self, pmom_spec):
        """For pMOM, F(x) = Phi(u) - u phi(u), u = x / sqrt(tau)."""
        x = 0.45
        u = x / math.sqrt(pmom_spec.tau)
        expected = stats.norm.cdf(u) - u * stats.norm.pdf(u)
        assert marginal_cdf(pmom_spec, x) == pytest.approx(expected, abs=1e-8)

    def test_inverse_gamma_matches_scipy(self):
        phi = np.array([0.1, 0.9, 4.0])
        expected = stats.invgamma.logpdf(phi, 1.5, scale=2.5)
        np.testing.assert_allclose(log_inverse_gamma(phi, 3.0, 5.0), expected, rtol=1e-12)
