"""
Truncation-mixture representation of non-local priors and prior simulation.

A pMOM coordinate (r=1) is a mixture over lambda of N(0, v) truncated to
theta^2 > lambda, v = tau*phi, with pi(lambda) = h(lambda/v)/v and h the
chi-square(1) survival function. Writing x = lambda/v, the lambda cdf has
the closed form H(x) = x*h(x) + F3(x), F3 the chi-square(3) cdf, because
x*f1(x) = f3(x).
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy import integrate
from scipy.special import erfc, gammainc

from nlpmix.exceptions import AcceptanceRateError, NumericalError
from nlpmix.models import PriorFamily, PriorSpec
from nlpmix.services.tmvn import sample_normal_tail
from nlpmix.utils.constants import MIN_ACCEPTANCE_RATE, SQRT_PI

logger = logging.getLogger(__name__)

_X_MIN = 1e-12
_X_MAX = 90.0


def chi1_survival(x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """P(chi-square(1) > x) = erfc(sqrt(x/2))."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("chi1_survival is defined for x >= 0")
    out = erfc(np.sqrt(x / 2.0))
    return float(out) if out.ndim == 0 else out


def lambda_cdf(tau: float, lam: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """P(Lambda <= lam) for pi(lambda) = h(lambda/tau)/tau."""
    x = np.maximum(np.asarray(lam, dtype=float), 0.0) / tau
    out = x * erfc(np.sqrt(x / 2.0)) + gammainc(1.5, x / 2.0)
    out = np.minimum(out, 1.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TruncationMixture:
    """Tabulated lambda cdf for a Normal(0, tau) base with penalty theta^2/tau."""
    tau: float
    grid: np.ndarray
    cdf: np.ndarray
    base: str = "normal"
    penalty: str = "pmom"

    def pdf(self, lam: Union[float, np.ndarray]) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        return np.where(lam >= 0, chi1_survival(np.maximum(lam, 0.0) / self.tau) / self.tau, 0.0)

    def inverse_cdf(self, u: Union[float, np.ndarray]) -> np.ndarray:
        """lambda with P(Lambda <= lambda) = u, interpolated then Newton-polished."""
        u = np.asarray(u, dtype=float)
        shape = u.shape
        u = u.reshape(-1)
        lam = np.interp(u, self.cdf, self.grid)
        for _ in range(2):
            x = lam / self.tau
            h = erfc(np.sqrt(x / 2.0))
            resid = lambda_cdf(self.tau, lam) - u
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(h > 0, resid * self.tau / h, 0.0)
            lam = np.maximum(lam - step, 0.0)
        lam[u <= 0.0] = 0.0
        return lam.reshape(shape)


@lru_cache(maxsize=32)
def tabulate_lambda_inverse_cdf(tau: float, grid_size: int = 4096) -> TruncationMixture:
    """Monotone table of the lambda cdf on a log-spaced grid with lambda = 0 prepended.

    Raises:
        NumericalError: pi(lambda) does not integrate to 1 within 1e-6.
    """
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    if not tau > 0:
        raise ValueError("tau must be positive")
    mass = integrate.quad(lambda x: float(chi1_survival(x)), 0.0, np.inf, epsabs=1e-10, limit=200)[0]
    if abs(mass - 1.0) > 1e-6:
        raise NumericalError(f"lambda prior integrates to {mass:.9f}, expected 1")
    x = np.concatenate(([0.0], np.geomspace(_X_MIN, _X_MAX, grid_size - 1)))
    grid = tau * x
    cdf = np.maximum.accumulate(lambda_cdf(tau, grid))
    return TruncationMixture(tau=tau, grid=grid, cdf=cdf)


def sample_pmom_prior(
    p: int,
    tau: float,
    n_draws: int,
    seed: Optional[int] = None,
    phi: float = 1.0,
    grid_size: int = 4096,
) -> np.ndarray:
    """Draws from the product MOM prior (r=1) through the truncation mixture.

    Per coordinate: lambda from its tabulated inverse cdf, then theta from
    N(0, tau*phi) restricted to theta^2 > lambda.
    """
    if p < 1:
        raise ValueError("p must be at least 1")
    v = tau * phi
    table = tabulate_lambda_inverse_cdf(v, grid_size)
    rng = np.random.default_rng(seed)
    lam = table.inverse_cdf(rng.random((n_draws, p)))
    a = np.sqrt(lam / v)
    magnitude = sample_normal_tail(a, 1.0 - rng.random((n_draws, p)))
    sign = np.where(rng.random((n_draws, p)) < 0.5, -1.0, 1.0)
    return sign * magnitude * math.sqrt(v)


@dataclass
class RejectionDraws:
    draws: np.ndarray
    acceptance_rate: float
    proposals: int


def imom_cauchy_ratio(theta: Union[float, np.ndarray], tau: float, phi: float = 1.0) -> np.ndarray:
    """iMOM density over the Cauchy(0, sqrt(tau*phi)) density; bounded by sqrt(pi)."""
    theta = np.asarray(theta, dtype=float)
    w = tau * phi / np.square(theta)
    with np.errstate(over="ignore", invalid="ignore"):
        out = SQRT_PI * (1.0 + w) * np.exp(-w)
    return np.where(theta == 0.0, 0.0, out)


def sample_nlp_prior_rejection(
    spec: PriorSpec,
    phi: float = 1.0,
    n_draws: int = 1000,
    seed: Optional[int] = None,
    p: int = 1,
) -> RejectionDraws:
    """Exact peMOM / piMOM draws by envelope rejection.

    peMOM proposes from N(0, tau*phi) and accepts with exp(-tau*phi/theta^2),
    an overall rate of exp(-sqrt(2)). piMOM proposes from Cauchy(0, sqrt(tau*phi))
    and accepts with (1 + w) exp(-w), w = tau*phi/theta^2, a rate of 1/sqrt(pi).

    Raises:
        AcceptanceRateError: fewer than 1e-3 of proposals accepted.
    """
    if spec.family not in (PriorFamily.PEMOM, PriorFamily.PIMOM):
        raise ValueError("rejection sampling covers the peMOM and piMOM families")
    rng = np.random.default_rng(seed)
    scale = math.sqrt(spec.tau * phi)
    total = n_draws * p
    accepted = np.empty(0)
    proposals = 0
    while accepted.size < total:
        batch = max(1024, 2 * (total - accepted.size))
        if spec.family is PriorFamily.PEMOM:
            cand = scale * rng.standard_normal(batch)
            with np.errstate(divide="ignore"):
                log_accept = -spec.tau * phi / np.square(cand)
        else:
            cand = scale * rng.standard_cauchy(batch)
            w = spec.tau * phi / np.square(cand)
            with np.errstate(divide="ignore", invalid="ignore"):
                log_accept = np.log1p(w) - w
        keep = (np.log(rng.random(batch)) < log_accept) & (cand != 0.0)
        proposals += batch
        accepted = np.concatenate((accepted, cand[keep]))
        rate = accepted.size / proposals
        if proposals >= 10_000 and rate < MIN_ACCEPTANCE_RATE:
            raise AcceptanceRateError(f"acceptance rate {rate:.2e} below {MIN_ACCEPTANCE_RATE:g}", rate)
    draws = accepted[:total].reshape(n_draws, p)
    rate = accepted.size / proposals
    logger.debug("%s rejection sampler: acceptance %.3f", spec.family.value, rate)
    return RejectionDraws(draws=draws, acceptance_rate=rate, proposals=proposals)
