"""
Marginal likelihoods under the conjugate Normal-IG local prior and the
non-local factorisation m_k(y) = m_k^L(y) * g_k(y).

The local prior is theta | phi ~ N(0, tau*phi*I), phi ~ IG(a/2, b/2). With
S = X'X + I/tau, m = S^{-1} X'y and R = y'y - m'Sm the posterior is
phi | y ~ IG((a+n)/2, (b+R)/2), theta | phi, y ~ N(m, phi*S^{-1}), and g_k is
the posterior expectation of the penalty d(theta, phi). For piMOM the local
prior uses the envelope dispersion tau_n, so the penalty is the exact
iMOM/Normal density ratio and the posterior draws act as importance samples.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import gammaln, logsumexp

from nlpmix.exceptions import RankDeficientError
from nlpmix.models import Dataset, LogMarginal, ModelIndicator, PriorFamily, PriorSpec
from nlpmix.services.priors import log_penalty
from nlpmix.utils.constants import MAX_WEIGHT_SHARE, MIN_EFFECTIVE_SAMPLE_SIZE, N_BATCHES
from nlpmix.utils.helpers import effective_sample_size

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ConjugatePosterior:
    """Normal-IG posterior of one model under the local prior."""
    model: ModelIndicator
    tau: float
    n: int
    chol: np.ndarray      # lower Cholesky factor of S
    mean: np.ndarray      # m
    rss: float            # y'y - m'Sm
    shape: float          # (a+n)/2
    scale: float          # (b+rss)/2
    log_marginal: float

    @property
    def size(self) -> int:
        return self.mean.size

    @property
    def covariance_unit(self) -> np.ndarray:
        """S^{-1}, the covariance of theta given phi = 1."""
        if self.size == 0:
            return np.zeros((0, 0))
        return linalg.cho_solve((self.chol, True), np.eye(self.size))

    def draw(self, n_samples: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Exact (theta, phi) draws."""
        phi = self.scale / rng.gamma(self.shape, 1.0, size=n_samples)
        if self.size == 0:
            return np.zeros((n_samples, 0)), phi
        z = rng.standard_normal((self.size, n_samples))
        noise = linalg.solve_triangular(self.chol, z, lower=True, trans="T")
        theta = self.mean + (noise * np.sqrt(phi)).T
        return theta, phi


def conjugate_posterior(
    data: Dataset,
    model: ModelIndicator,
    tau: float,
    a_phi: float,
    b_phi: float,
) -> ConjugatePosterior:
    """Closed-form local-prior posterior and log m_k^L(y)."""
    idx = list(model.indices)
    k = len(idx)
    n = data.n
    if k:
        S = data.xtx[np.ix_(idx, idx)] + np.eye(k) / tau
        try:
            chol = linalg.cholesky(S, lower=True)
        except linalg.LinAlgError as exc:
            raise RankDeficientError(f"S is not positive definite for model {model.key}") from exc
        xty = data.xty[idx]
        mean = linalg.cho_solve((chol, True), xty)
        rss = max(data.yty - float(mean @ xty), 0.0)
        log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    else:
        chol = np.zeros((0, 0))
        mean = np.zeros(0)
        rss = data.yty
        log_det = 0.0
    shape = 0.5 * (a_phi + n)
    scale = 0.5 * (b_phi + rss)
    log_m = (
        -0.5 * n * _LOG_2PI
        - 0.5 * k * math.log(tau)
        - 0.5 * log_det
        + 0.5 * a_phi * math.log(0.5 * b_phi)
        - gammaln(0.5 * a_phi)
        + gammaln(shape)
        - shape * math.log(scale)
    )
    return ConjugatePosterior(model, tau, n, chol, mean, rss, shape, scale, float(log_m))


def log_marginal_normal_ig(
    data: Dataset,
    model: ModelIndicator,
    tau: float,
    a_phi: float,
    b_phi: float,
) -> LogMarginal:
    """Exact log m_k^L(y) under theta ~ N(0, tau*phi*I), phi ~ IG(a/2, b/2)."""
    return LogMarginal(conjugate_posterior(data, model, tau, a_phi, b_phi).log_marginal)


def _exact_pmom_g(post: ConjugatePosterior, tau: float) -> float:
    """E[prod theta_i^2 / (tau*phi)] for one or two coordinates."""
    m = post.mean
    V = post.covariance_unit
    inv_phi = post.shape / post.scale
    inv_phi2 = post.shape * (post.shape + 1.0) / post.scale ** 2
    if post.size == 1:
        return (m[0] ** 2 * inv_phi + V[0, 0]) / tau
    m1, m2 = m
    linear = m1 * m1 * V[1, 1] + m2 * m2 * V[0, 0] + 4.0 * m1 * m2 * V[0, 1]
    const = V[0, 0] * V[1, 1] + 2.0 * V[0, 1] ** 2
    return (m1 * m1 * m2 * m2 * inv_phi2 + linear * inv_phi + const) / tau ** 2


def _log_penalty_draws(spec: PriorSpec, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.sum(log_penalty(spec, theta, phi[:, None]), axis=1)


def _log_mean_with_se(log_d: np.ndarray, n_batches: int = N_BATCHES) -> Tuple[float, float]:
    """log of the sample mean of exp(log_d) and its delta-method standard error."""
    n = log_d.size
    if not np.isfinite(log_d).any():
        return -math.inf, 0.0
    shift = float(np.max(log_d))
    w = np.exp(log_d - shift)
    mean_w = float(np.mean(w))
    size = n // n_batches
    batch_means = w[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    se_w = float(np.std(batch_means, ddof=1) / math.sqrt(n_batches))
    return shift + math.log(mean_w), se_w / mean_w


def g_factor(
    data: Dataset,
    model: ModelIndicator,
    spec: PriorSpec,
    n_samples: int = 1000,
    seed: Optional[int] = None,
    exact: bool = True,
) -> LogMarginal:
    """log g_k(y) = log E[d(theta, phi) | y] under the local-prior posterior.

    pMOM with r=1 and at most two coordinates uses closed-form moments
    (mc_se = 0) unless exact=False.
    """
    if n_samples < 1000:
        raise ValueError("g_factor needs at least 1000 samples")
    if model.size == 0 or spec.family is PriorFamily.NORMAL:
        return LogMarginal(0.0, 0.0, n_samples)
    post = conjugate_posterior(data, model, spec.local_tau, spec.a_phi, spec.b_phi)
    if exact and spec.family is PriorFamily.PMOM and spec.r == 1 and model.size <= 2:
        return LogMarginal(math.log(_exact_pmom_g(post, spec.tau)), 0.0, n_samples)

    rng = np.random.default_rng(seed)
    theta, phi = post.draw(n_samples, rng)
    log_d = _log_penalty_draws(spec, theta, phi)
    value, se = _log_mean_with_se(log_d)
    ess, max_share = effective_sample_size(log_d)
    result = LogMarginal(
        value=value,
        mc_se=se,
        n_samples=n_samples,
        effective_sample_size=ess,
        low_ess=ess < MIN_EFFECTIVE_SAMPLE_SIZE,
        degenerate_weights=max_share > MAX_WEIGHT_SHARE,
    )
    if result.low_ess:
        logger.warning("model %s: effective sample size %.1f below %d",
                       model.key, ess, MIN_EFFECTIVE_SAMPLE_SIZE)
    if result.degenerate_weights:
        logger.warning("model %s: one draw carries %.0f%% of the weight", model.key, 100 * max_share)
    return result


def log_marginal_nlp(
    data: Dataset,
    model: ModelIndicator,
    spec: PriorSpec,
    n_samples: int = 1000,
    seed: Optional[int] = None,
) -> LogMarginal:
    """log m_k(y) = log m_k^L(y) + log g_k(y)."""
    local = log_marginal_normal_ig(data, model, spec.local_tau, spec.a_phi, spec.b_phi)
    g = g_factor(data, model, spec, n_samples, seed)
    return LogMarginal(
        value=local.value + g.value,
        mc_se=g.mc_se,
        n_samples=g.n_samples,
        effective_sample_size=g.effective_sample_size,
        low_ess=g.low_ess,
        degenerate_weights=g.degenerate_weights,
    )


@dataclass
class ImportanceMean:
    mean: np.ndarray
    phi_mean: float
    log_g: float
    effective_sample_size: float


def nlp_posterior_mean(
    data: Dataset,
    model: ModelIndicator,
    spec: PriorSpec,
    n_samples: int = 10_000,
    seed: Optional[int] = None,
) -> ImportanceMean:
    """E(theta | M_k, y) under the non-local prior, weighting local-posterior draws by d."""
    post = conjugate_posterior(data, model, spec.local_tau, spec.a_phi, spec.b_phi)
    if model.size == 0 or spec.family is PriorFamily.NORMAL:
        phi_mean = post.scale / (post.shape - 1.0) if post.shape > 1.0 else math.inf
        return ImportanceMean(post.mean.copy(), phi_mean, 0.0, float(n_samples))
    rng = np.random.default_rng(seed)
    theta, phi = post.draw(n_samples, rng)
    log_d = _log_penalty_draws(spec, theta, phi)
    w = np.exp(log_d - np.max(log_d))
    mean = (w @ theta) / w.sum()
    phi_mean = float(w @ phi / w.sum())
    ess, _ = effective_sample_size(log_d)
    log_g = float(logsumexp(log_d) - math.log(n_samples))
    return ImportanceMean(mean, phi_mean, log_g, ess)
