"""
Inversion of the iMOM log-penalty.

With z = theta^2 the piMOM penalty relative to N(0, tau_n*phi) is
exp(g(z)) where

    g(z) = 0.5*(log(tau*tau_n) + 2*log(phi) + log 2) - log z - tau*phi/z + z/(2*tau_n*phi).

g'(z) has real roots z = tau_n*phi*(1 +/- sqrt(1 - 2*tau/tau_n)) only when
tau_n >= 2*tau, so g is nondecreasing exactly when tau_n <= 2*tau (with a
single tangency at z = tau_n*phi on the boundary tau_n = 2*tau).
"""

import logging
import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from nlpmix.exceptions import BracketError, InvalidPriorError
from nlpmix.utils.constants import INVERSE_TOLERANCE, MAX_BRACKET_STEPS, MAX_FALSI_ITERATIONS

logger = logging.getLogger(__name__)

_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class ImomPenaltyCurve:
    """g(z) for fixed (tau, tau_n, phi)."""
    tau: float
    tau_n: float
    phi: float
    tolerance: float = INVERSE_TOLERANCE

    def __post_init__(self):
        for name in ("tau", "tau_n", "phi", "tolerance"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise InvalidPriorError(f"{name} must be positive and finite, got {value}")
        if self.tau_n > 2.0 * self.tau * (1 + 1e-12):
            raise InvalidPriorError(
                f"tau_n={self.tau_n:g} > 2*tau={2 * self.tau:g}: g'(z) then has real roots "
                "tau_n*phi*(1 +/- sqrt(1 - 2*tau/tau_n)) and g is not monotone"
            )

    @property
    def constant(self) -> float:
        return 0.5 * (math.log(self.tau * self.tau_n) + 2.0 * math.log(self.phi) + _LOG2)


@dataclass(frozen=True)
class InversionResult:
    z: float
    iterations: int
    residual: float


def g_of_z(curve: ImomPenaltyCurve, z: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Log-penalty as a function of z = theta^2."""
    if np.ndim(z) == 0:
        z = float(z)
        if z <= 0.0:
            return -math.inf
        return curve.constant - math.log(z) - curve.tau * curve.phi / z + z / (2.0 * curve.tau_n * curve.phi)
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        out = curve.constant - np.log(z) - curve.tau * curve.phi / z + z / (2.0 * curve.tau_n * curve.phi)
    return np.where(z > 0.0, out, -np.inf)


def g_prime(curve: ImomPenaltyCurve, z: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Derivative of g with respect to z."""
    z = np.asarray(z, dtype=float)
    out = -1.0 / z + curve.tau * curve.phi / (z * z) + 1.0 / (2.0 * curve.tau_n * curve.phi)
    return float(out) if out.ndim == 0 else out


def initial_guess(curve: ImomPenaltyCurve, t: float) -> float:
    """Starting point tau_n*phi*(-b + sqrt(b^2 - 2*tau/tau_n)), b = log(tau*tau_n) + 2 log(phi) + log 2 - t.

    Falls back to the tangency point tau_n*phi when the discriminant is
    negative or the formula gives a non-positive value.
    """
    b = math.log(curve.tau * curve.tau_n) + 2.0 * math.log(curve.phi) + _LOG2 - t
    disc = b * b - 2.0 * curve.tau / curve.tau_n
    if disc >= 0.0:
        z0 = curve.tau_n * curve.phi * (-b + math.sqrt(disc))
        if math.isfinite(z0) and z0 > 0.0:
            return z0
    return curve.tau_n * curve.phi


def solve_g(curve: ImomPenaltyCurve, t: float) -> InversionResult:
    """Find z with |g(z) - t| <= curve.tolerance.

    Brackets by doubling/halving z from the initial guess, then refines with
    Illinois-modified regula falsi on u = log z.
    """
    if not math.isfinite(t):
        raise ValueError(f"level must be finite, got {t}")
    tol = curve.tolerance

    def f(u: float) -> float:
        return g_of_z(curve, math.exp(u)) - t

    u0 = math.log(initial_guess(curve, t))
    f0 = f(u0)
    iterations = 0
    if abs(f0) <= tol:
        return InversionResult(math.exp(u0), 0, f0)

    step = _LOG2 if f0 < 0.0 else -_LOG2
    a, fa = u0, f0
    for _ in range(MAX_BRACKET_STEPS):
        b = a + step
        fb = f(b)
        iterations += 1
        if abs(fb) <= tol:
            return InversionResult(math.exp(b), iterations, fb)
        if (fb > 0.0) != (fa > 0.0):
            break
        a, fa = b, fb
    else:
        raise BracketError(
            f"no bracket for g(z) = {t:g} after {MAX_BRACKET_STEPS} steps",
            {"tau": curve.tau, "tau_n": curve.tau_n, "phi": curve.phi, "t": t,
             "last_z": math.exp(a), "last_residual": fa},
        )

    best_u, best_f = (a, fa) if abs(fa) < abs(fb) else (b, fb)
    for _ in range(MAX_FALSI_ITERATIONS):
        c = b - fb * (b - a) / (fb - fa)
        fc = f(c)
        iterations += 1
        if abs(fc) < abs(best_f):
            best_u, best_f = c, fc
        if abs(fc) <= tol:
            break
        if (fb > 0.0) != (fc > 0.0):
            a, fa = b, fb
        else:
            fa *= 0.5
        b, fb = c, fc
        if abs(b - a) < 1e-15:
            break
    else:
        logger.warning("regula falsi stopped at residual %.3g for t=%g", best_f, t)
    return InversionResult(math.exp(best_u), iterations, best_f)


def invert_g(curve: ImomPenaltyCurve, t: float) -> float:
    """z0 > 0 with |g(z0) - t| <= tolerance."""
    return solve_g(curve, t).z
