"""
Unit tests for inverting the iMOM log-penalty g(z).
"""

import math

import numpy as np
import pytest

from nlpmix.exceptions import InvalidPriorError
from nlpmix.services.penalty_inverse import (
    ImomPenaltyCurve,
    g_of_z,
    g_prime,
    initial_guess,
    invert_g,
    solve_g,
)


# =============================================================================
# TEST CLASS: Curve Construction
# =============================================================================

@pytest.mark.unit
class TestCurve:

    def test_rejects_non_monotone_envelope(self):
        """tau_n above 2 tau gives g' real roots, so g is not invertible."""
        with pytest.raises(InvalidPriorError):
            ImomPenaltyCurve(tau=0.133, tau_n=0.3, phi=1.0)

    @pytest.mark.parametrize("field", ["tau", "tau_n", "phi"])
    def test_rejects_non_positive(self, field):
        kwargs = {"tau": 0.133, "tau_n": 0.266, "phi": 1.0}
        kwargs[field] = 0.0
        with pytest.raises(InvalidPriorError):
            ImomPenaltyCurve(**kwargs)

    @pytest.mark.parametrize("ratio", [0.5, 1.0, 2.0])
    def test_g_is_increasing(self, ratio):
        """For tau_n <= 2 tau the derivative is nonnegative everywhere."""
        curve = ImomPenaltyCurve(tau=0.2, tau_n=0.2 * ratio, phi=1.3)
        z = np.geomspace(1e-4, 1e3, 2000)
        assert np.all(g_prime(curve, z) >= -1e-12), "g must be nondecreasing"
        assert np.all(np.diff(g_of_z(curve, z)) > -1e-12)

    def test_g_at_zero_is_minus_infinity(self):
        curve = ImomPenaltyCurve(tau=0.2, tau_n=0.4, phi=1.0)
        assert g_of_z(curve, 0.0) == -math.inf
        assert g_of_z(curve, np.array([0.0, 1.0]))[0] == -math.inf

    def test_g_scalar_and_vector_agree(self):
        curve = ImomPenaltyCurve(tau=0.2, tau_n=0.4, phi=0.7)
        z = np.array([0.01, 0.3, 5.0])
        np.testing.assert_allclose(g_of_z(curve, z), [g_of_z(curve, float(v)) for v in z])

    def test_initial_guess_fallback(self):
        """When the discriminant is negative the guess is the tangency point tau_n phi."""
        curve = ImomPenaltyCurve(tau=0.2, tau_n=0.4, phi=1.5)
        t = math.log(curve.tau * curve.tau_n) + 2.0 * math.log(curve.phi) + math.log(2.0)
        assert initial_guess(curve, t) == pytest.approx(curve.tau_n * curve.phi)

    def test_initial_guess_positive(self):
        curve = ImomPenaltyCurve(tau=0.133, tau_n=0.266, phi=1.0)
        for t in (-40.0, -3.0, 0.0, 3.0, 40.0):
            assert initial_guess(curve, t) > 0.0


# =============================================================================
# TEST CLASS: Inversion Accuracy
# =============================================================================

@pytest.mark.unit
class TestInversion:

    def test_grid_of_levels_and_random_parameters(self):
        """|g(invert_g(t)) - t| <= 1e-5 for t in [-50, 50] and random (tau, phi), tau_n = 2 tau."""
        rng = np.random.default_rng(42)
        levels = np.linspace(-50.0, 50.0, 101)
        for _ in range(20):
            # Arrange
            tau = float(rng.uniform(0.02, 2.0))
            phi = float(rng.uniform(0.05, 20.0))
            curve = ImomPenaltyCurve(tau=tau, tau_n=2.0 * tau, phi=phi)

            for t in levels:
                # Act
                z = invert_g(curve, float(t))

                # Assert
                assert z > 0.0
                residual = abs(g_of_z(curve, z) - t)
                assert residual <= 1e-5, f"tau={tau:.3f} phi={phi:.3f} t={t}: residual {residual:.2e}"

    def test_narrower_envelope(self):
        curve = ImomPenaltyCurve(tau=0.5, tau_n=0.3, phi=2.0)
        for t in (-20.0, -1.0, 0.5, 10.0):
            assert abs(g_of_z(curve, invert_g(curve, t)) - t) <= 1e-5

    def test_result_reports_iterations(self):
        curve = ImomPenaltyCurve(tau=0.133, tau_n=0.266, phi=1.0)
        result = solve_g(curve, -10.0)
        assert result.iterations >= 0
        assert abs(result.residual) <= curve.tolerance
        assert g_of_z(curve, result.z) == pytest.approx(-10.0, abs=1e-5)

    def test_custom_tolerance(self):
        curve = ImomPenaltyCurve(tau=0.133, tau_n=0.266, phi=1.0, tolerance=1e-10)
        z = invert_g(curve, 2.5)
        assert abs(g_of_z(curve, z) - 2.5) <= 1e-10

    def test_non_finite_level_rejected(self):
        curve = ImomPenaltyCurve(tau=0.133, tau_n=0.266, phi=1.0)
        with pytest.raises(ValueError):
            invert_g(curve, math.inf)

    def test_many_inversions(self):
        """10^4 inversions complete and all meet the tolerance."""
        curve = ImomPenaltyCurve(tau=0.133, tau_n=0.266, phi=0.9)
        levels = np.random.default_rng(1).uniform(-30, 30, size=10_000)
        residuals = np.array([abs(g_of_z(curve, invert_g(curve, float(t))) - t) for t in levels])
        assert residuals.max() <= 1e-5
