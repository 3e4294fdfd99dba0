"""
Unit tests for the truncation-mixture representation and prior simulation.
"""

import math

import numpy as np
import pytest
from scipy import integrate, stats
from scipy.special import erfc

from nlpmix.models import PriorFamily, PriorSpec
from nlpmix.services.priors import density_1d, marginal_cdf
from nlpmix.services.truncation import (
    chi1_survival,
    imom_cauchy_ratio,
    lambda_cdf,
    sample_nlp_prior_rejection,
    sample_pmom_prior,
    tabulate_lambda_inverse_cdf,
)


# =============================================================================
# TEST CLASS: Mixing Distribution of the Truncation Point
# =============================================================================

@pytest.mark.unit
class TestLambdaDistribution:
    """pi(lambda) = h(lambda / tau) / tau with h the chi-square(1) survival."""

    def test_chi1_survival_matches_scipy(self):
        x = np.array([0.0, 0.3, 1.0, 4.0, 30.0])
        np.testing.assert_allclose(chi1_survival(x), stats.chi2.sf(x, 1), rtol=1e-12)

    def test_chi1_survival_rejects_negative(self):
        with pytest.raises(ValueError):
            chi1_survival(-0.1)

    @pytest.mark.parametrize("lam", [0.01, 0.2, 1.0, 3.0])
    def test_closed_form_cdf_matches_quadrature(self, lam):
        tau = 0.358
        numeric = integrate.quad(lambda t: chi1_survival(t / tau) / tau, 0.0, lam, epsabs=1e-12)[0]
        assert lambda_cdf(tau, lam) == pytest.approx(numeric, abs=1e-9)

    def test_cdf_limits(self):
        assert lambda_cdf(0.5, 0.0) == 0.0
        assert lambda_cdf(0.5, 500.0) == pytest.approx(1.0, abs=1e-12)

    def test_table_is_monotone(self):
        table = tabulate_lambda_inverse_cdf(0.358)
        assert table.grid[0] == 0.0, "grid must start at lambda = 0"
        assert np.all(np.diff(table.cdf) >= 0), "tabulated cdf must be nondecreasing"

    @pytest.mark.parametrize("x", [0.01, 0.1, 1.0, 3.0, 10.0])
    def test_inverse_cdf_inverts(self, x):
        tau = 0.7
        table = tabulate_lambda_inverse_cdf(tau)
        lam = tau * x
        assert float(table.inverse_cdf(lambda_cdf(tau, lam))) == pytest.approx(lam, rel=1e-6)

    def test_pdf_is_zero_below_origin(self):
        table = tabulate_lambda_inverse_cdf(1.0)
        assert float(table.pdf(-1.0)) == 0.0
        assert float(table.pdf(0.0)) == pytest.approx(1.0)

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            tabulate_lambda_inverse_cdf(1.0, grid_size=10)


# =============================================================================
# TEST CLASS: pMOM Prior Draws
# =============================================================================

@pytest.mark.unit
class TestPmomPriorDraws:

    def test_draws_follow_pmom_cdf(self):
        """Kolmogorov-Smirnov against F(u) = Phi(u) - u phi(u) on the standardised scale."""
        # Arrange
        tau = 0.358

        # Act
        draws = sample_pmom_prior(1, tau, 100_000, seed=11)[:, 0]

        # Assert
        result = stats.kstest(draws / math.sqrt(tau), lambda u: stats.norm.cdf(u) - u * stats.norm.pdf(u))
        assert result.pvalue > 0.01, f"KS p-value {result.pvalue:.2e}"

    def test_second_moment(self):
        """E theta^2 = 3 tau phi, standard error sqrt(6) tau phi / sqrt(n)."""
        tau, phi, n = 0.358, 2.0, 100_000
        draws = sample_pmom_prior(1, tau, n, seed=5, phi=phi)
        v = tau * phi
        se = math.sqrt(6.0) * v / math.sqrt(n)
        assert abs(np.mean(draws ** 2) - 3.0 * v) < 5.0 * se

    def test_shape_and_determinism(self):
        first = sample_pmom_prior(4, 0.358, 100, seed=3)
        second = sample_pmom_prior(4, 0.358, 100, seed=3)
        assert first.shape == (100, 4)
        np.testing.assert_array_equal(first, second)
        assert np.all(first != 0.0), "pMOM draws are never exactly zero"

    def test_calibration_from_draws(self):
        draws = sample_pmom_prior(1, 0.358, 50_000, seed=8)
        frac = float(np.mean(np.abs(draws) < 0.2))
        assert abs(frac - 0.01) < 0.003, f"sample P(|theta|<0.2) = {frac:.4f}"

    def test_p_must_be_positive(self):
        with pytest.raises(ValueError):
            sample_pmom_prior(0, 0.358, 10)


# =============================================================================
# TEST CLASS: Rejection Samplers for peMOM and piMOM
# =============================================================================

@pytest.mark.unit
class TestRejectionSampler:

    def test_pemom_acceptance_rate(self, pemom_spec):
        result = sample_nlp_prior_rejection(pemom_spec, n_draws=20_000, seed=1)
        assert result.acceptance_rate == pytest.approx(math.exp(-math.sqrt(2)), abs=0.01)

    def test_pimom_acceptance_rate(self, pimom_spec):
        result = sample_nlp_prior_rejection(pimom_spec, n_draws=20_000, seed=1)
        assert result.acceptance_rate == pytest.approx(1.0 / math.sqrt(math.pi), abs=0.01)

    def test_pimom_draws_follow_cdf(self, pimom_spec):
        """P(|theta| < x) = erfc(sqrt(tau phi) / x) for piMOM."""
        phi = 2.0
        draws = sample_nlp_prior_rejection(pimom_spec, phi, 20_000, seed=4).draws[:, 0]
        a = math.sqrt(pimom_spec.tau * phi)

        def cdf(x):
            x = np.asarray(x, dtype=float)
            half = 0.5 * erfc(a / np.abs(x))
            return np.where(x < 0, 0.5 - half, 0.5 + half)

        result = stats.kstest(draws, cdf)
        assert result.pvalue > 0.01, f"KS p-value {result.pvalue:.2e}"

    def test_pemom_draws_follow_quadrature_cdf(self, pemom_spec):
        draws = sample_nlp_prior_rejection(pemom_spec, 1.0, 400, seed=9).draws[:, 0]
        result = stats.kstest(draws, lambda x: marginal_cdf(pemom_spec, x))
        assert result.pvalue > 0.01, f"KS p-value {result.pvalue:.2e}"

    def test_shape(self, pemom_spec):
        result = sample_nlp_prior_rejection(pemom_spec, n_draws=50, seed=2, p=3)
        assert result.draws.shape == (50, 3)
        assert result.proposals >= 150

    def test_pmom_not_supported(self, pmom_spec):
        with pytest.raises(ValueError):
            sample_nlp_prior_rejection(pmom_spec, n_draws=10)

    def test_cauchy_ratio_bound(self):
        """Density ratio iMOM / Cauchy(0, sqrt(tau phi)) never exceeds sqrt(pi)."""
        spec = PriorSpec(family="pimom")
        theta = np.concatenate((np.linspace(-20, -1e-3, 400), np.linspace(1e-3, 20, 400)))
        ratio = imom_cauchy_ratio(theta, spec.tau)
        assert np.all(ratio <= math.sqrt(math.pi) + 1e-12)
        cauchy = stats.cauchy.pdf(theta, scale=math.sqrt(spec.tau))
        np.testing.assert_allclose(ratio, density_1d(spec, theta) / cauchy, rtol=1e-9)


# =============================================================================
# TEST CLASS: Behaviour at the Origin and in the Tails
# =============================================================================

def _prior_draws(spec, n_draws, seed):
    if spec.family is PriorFamily.PMOM:
        return sample_pmom_prior(1, spec.tau, n_draws, seed=seed)[:, 0]
    return sample_nlp_prior_rejection(spec, 1.0, n_draws, seed=seed).draws[:, 0]


def _kernel_exceedance(spec, q):
    """P(|theta| > q) under the kernel whose tails the prior keeps: Cauchy for piMOM, Normal otherwise."""
    scale = math.sqrt(spec.tau)
    if spec.family is PriorFamily.PIMOM:
        return 2.0 * stats.cauchy.sf(q, scale=scale)
    return 2.0 * stats.norm.sf(q, scale=scale)


def _exceedance(spec, q):
    return 2.0 * integrate.quad(lambda t: density_1d(spec, t), q, np.inf, epsabs=1e-13, epsrel=1e-10)[0]


TAIL_BOUND = {
    # u phi(u) / Phi-bar(u) < u^2 + 1, so the pMOM ratio stays below 2 + 4^2 on the grid
    PriorFamily.PMOM: 18.0,
    PriorFamily.PEMOM: math.exp(math.sqrt(2.0)),
    PriorFamily.PIMOM: math.sqrt(math.pi),
}


@pytest.mark.unit
class TestOriginAndTails:

    def test_mass_near_origin_vanishes_against_normal(self, nonlocal_spec):
        """P(0 < theta < t) / P_Normal(0 < theta < t) falls towards zero as t shrinks."""
        scale = math.sqrt(nonlocal_spec.tau)
        ts = scale * np.array([0.4, 0.2, 0.1, 0.05])
        nonlocal_mass = np.asarray(marginal_cdf(nonlocal_spec, ts)) - 0.5
        normal_mass = stats.norm.cdf(ts, scale=scale) - 0.5
        ratio = nonlocal_mass / normal_mass
        assert np.all(np.diff(ratio) <= 1e-5), f"{nonlocal_spec.family.value}: ratios {ratio}"
        assert ratio[-1] < 0.01

    def test_pmom_cdf_is_cubic_at_origin(self, pmom_spec):
        """Halving t divides the pMOM mass on (0, t) by about eight."""
        scale = math.sqrt(pmom_spec.tau)
        small, large = np.asarray(marginal_cdf(pmom_spec, [0.05 * scale, 0.1 * scale])) - 0.5
        assert small / large == pytest.approx(0.125, rel=0.25)

    def test_exceedance_ratio_grows_to_a_bound(self, nonlocal_spec):
        """On q in [2, 4] sqrt(tau) the tail ratio to the kernel is nondecreasing and bounded."""
        qs = math.sqrt(nonlocal_spec.tau) * np.linspace(2.0, 4.0, 5)
        ratio = np.array([_exceedance(nonlocal_spec, q) / _kernel_exceedance(nonlocal_spec, q) for q in qs])
        assert np.all(np.diff(ratio) >= -1e-9), f"{nonlocal_spec.family.value}: ratios {ratio}"
        assert np.all(ratio <= TAIL_BOUND[nonlocal_spec.family]), f"{nonlocal_spec.family.value}: ratios {ratio}"

    @pytest.mark.parametrize("multiple", [2.0, 3.0])
    def test_sampled_exceedance_matches_density(self, nonlocal_spec, multiple):
        """Draws beyond q sqrt(tau) occur as often as the density says, within 4 binomial SE."""
        n_draws = 100_000
        q = multiple * math.sqrt(nonlocal_spec.tau)
        draws = _prior_draws(nonlocal_spec, n_draws, seed=17)
        expected = _exceedance(nonlocal_spec, q)
        observed = float(np.mean(np.abs(draws) > q))
        se = math.sqrt(expected * (1.0 - expected) / n_draws)
        assert abs(observed - expected) <= 4.0 * se, (
            f"{nonlocal_spec.family.value}: {observed:.5f} beyond q vs {expected:.5f}"
        )
