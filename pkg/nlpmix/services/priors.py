"""
Non-local prior densities, penalties and calibration.

Every family is written as penalty * Normal kernel, coordinatewise:
pMOM and peMOM multiply N(0, tau*phi); piMOM is expressed against the
wider envelope N(0, tau_n*phi). The residual variance prior is
IG(a_phi/2, b_phi/2).
"""

import logging
import math
from typing import Callable, Tuple, Union

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from nlpmix.config import QUADRATURE_ABSTOL
from nlpmix.exceptions import QuadratureError
from nlpmix.models import PriorFamily, PriorSpec
from nlpmix.utils.constants import (
    CALIBRATION_PROBABILITY,
    CALIBRATION_THRESHOLD,
    DEFAULT_TAUS,
    SQRT2,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_PI = math.log(math.pi)


def default_tau(family: Union[PriorFamily, str]) -> float:
    """Default dispersion: 0.358 (pMOM), 0.133 (piMOM), 0.119 (peMOM)."""
    return DEFAULT_TAUS[PriorFamily(family).value]


def _check_inputs(theta: ArrayLike, phi: ArrayLike) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    phi = np.asarray(phi, dtype=float)
    if not (np.all(np.isfinite(phi)) and np.all(phi > 0)):
        raise ValueError(f"phi must be positive and finite, got {phi}")
    return theta


def log_double_factorial_odd(r: int) -> float:
    """log((2r-1)!!)."""
    return float(gammaln(2 * r + 1) - r * math.log(2.0) - gammaln(r + 1))


def log_penalty(spec: PriorSpec, theta: ArrayLike, phi: ArrayLike) -> np.ndarray:
    """Coordinatewise log d(theta_i, phi); -inf at theta_i = 0."""
    theta = _check_inputs(theta, phi)
    z = theta * theta
    family = spec.family
    with np.errstate(divide="ignore", invalid="ignore"):
        if family is PriorFamily.PMOM:
            out = spec.r * np.log(z) - log_double_factorial_odd(spec.r) - spec.r * np.log(spec.tau * phi)
        elif family is PriorFamily.PEMOM:
            out = SQRT2 - spec.tau * phi / z
        elif family is PriorFamily.PIMOM:
            const = 0.5 * (math.log(spec.tau * spec.tau_n) + 2.0 * np.log(phi) + math.log(2.0))
            out = const - np.log(z) - spec.tau * phi / z + z / (2.0 * spec.tau_n * phi)
        else:
            return np.zeros_like(theta)
    return np.where(z == 0.0, -np.inf, out)


def penalty_d(spec: PriorSpec, theta_i: ArrayLike, phi: float) -> ArrayLike:
    """Penalty d(theta_i, phi) multiplying the local Normal kernel."""
    value = np.exp(log_penalty(spec, theta_i, phi))
    return float(value) if np.ndim(value) == 0 else value


def local_kernel_log_density(spec: PriorSpec, theta: ArrayLike, phi: ArrayLike) -> np.ndarray:
    """Coordinatewise log N(theta_i; 0, local_tau * phi)."""
    theta = _check_inputs(theta, phi)
    v = spec.local_tau * np.asarray(phi, dtype=float)
    return -0.5 * (_LOG_2PI + np.log(v)) - theta * theta / (2.0 * v)


def _log_density_1d(spec: PriorSpec, theta: np.ndarray, phi: float) -> np.ndarray:
    if spec.family is PriorFamily.PIMOM:
        # direct form: the envelope factorisation cancels badly in the far tail
        theta = _check_inputs(theta, phi)
        z = theta * theta
        tp = spec.tau * phi
        with np.errstate(divide="ignore", invalid="ignore"):
            out = 0.5 * math.log(tp) - 0.5 * _LOG_PI - np.log(z) - tp / z
        return np.where(z == 0.0, -np.inf, out)
    return log_penalty(spec, theta, phi) + local_kernel_log_density(spec, theta, phi)


def log_density(spec: PriorSpec, theta: ArrayLike, phi: float) -> float:
    """Log of the product prior density of theta given phi."""
    theta = np.atleast_1d(_check_inputs(theta, phi))
    return float(np.sum(_log_density_1d(spec, theta, phi)))


def density_1d(spec: PriorSpec, theta: ArrayLike, phi: float = 1.0) -> ArrayLike:
    """Univariate marginal prior density, elementwise."""
    value = np.exp(_log_density_1d(spec, np.asarray(theta, dtype=float), phi))
    return float(value) if value.ndim == 0 else value


def log_inverse_gamma(phi: ArrayLike, a_phi: float, b_phi: float) -> ArrayLike:
    """log IG(phi; a/2, b/2) density."""
    phi = np.asarray(phi, dtype=float)
    shape, scale = 0.5 * a_phi, 0.5 * b_phi
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(phi) - scale / phi


def _quad(f: Callable[[float], float], a: float, b: float) -> Tuple[float, float]:
    out = integrate.quad(f, a, b, epsabs=QUADRATURE_ABSTOL, epsrel=1e-10, limit=200, full_output=1)
    value, abserr = out[0], out[1]
    if len(out) > 3:
        if abserr > 10 * QUADRATURE_ABSTOL:
            raise QuadratureError(f"quadrature on [{a:g}, {b:g}] did not converge", abserr)
        logger.debug("quadrature warning on [%g, %g]: %s", a, b, out[3])
    return value, abserr


def _half_mass(spec: PriorSpec, upper: float, phi: float) -> float:
    """Integral of the univariate density over (0, upper)."""
    if upper <= 0.0:
        return 0.0
    scale = math.sqrt(spec.local_tau * phi)
    f = lambda t: density_1d(spec, t, phi)  # noqa: E731
    cuts = [0.0] + [c for c in (scale, 10.0 * scale) if c < upper] + [upper]
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += _quad(f, a, b)[0]
    return total


def total_mass(spec: PriorSpec, phi: float = 1.0) -> float:
    """Integral of the univariate density over the real line."""
    return 2.0 * _half_mass(spec, math.inf, phi)


def marginal_cdf(spec: PriorSpec, x: ArrayLike, phi: float = 1.0) -> ArrayLike:
    """Univariate marginal cdf by quadrature, split at the origin."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.array([0.5 + math.copysign(_half_mass(spec, abs(v), phi), v) for v in xs])
    return float(out[0]) if np.ndim(x) == 0 else out


def prob_below_threshold(spec: PriorSpec, t: float, phi: float = 1.0) -> float:
    """P(|theta_i| / sqrt(phi) < t) under the univariate marginal."""
    if not t > 0:
        raise ValueError(f"threshold must be positive, got {t}")
    return min(1.0, 2.0 * _half_mass(spec, t * math.sqrt(phi), phi))


def calibrate_tau(
    family: Union[PriorFamily, str],
    t: float = CALIBRATION_THRESHOLD,
    prob: float = CALIBRATION_PROBABILITY,
) -> float:
    """Dispersion giving P(|theta| / sqrt(phi) < t) = prob."""
    family = PriorFamily(family)
    if not family.is_nonlocal:
        raise ValueError("calibration applies to non-local families only")

    def excess(log_tau: float) -> float:
        tau = math.exp(log_tau)
        return prob_below_threshold(PriorSpec(family=family, tau=tau), t) - prob

    log_tau = optimize.brentq(excess, math.log(1e-3), math.log(10.0), xtol=1e-10)
    return math.exp(log_tau)
