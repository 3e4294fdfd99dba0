"""
Model-conditional posterior samplers for (theta, phi).

Each non-local family is sampled by Gibbs with one latent truncation per
coefficient: lambda_i ~ Unif(0, d(theta_i, phi)) turns the penalty into the
constraint d(theta_i, phi) > lambda_i, i.e. |theta_i| above a threshold, and
theta is then drawn from the matching Normal restricted to the outer
rectangle of those thresholds.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from nlpmix.exceptions import RankDeficientError
from nlpmix.models import Dataset, ModelIndicator, PriorFamily, PriorSpec
from nlpmix.services.marglik import conjugate_posterior
from nlpmix.services.penalty_inverse import ImomPenaltyCurve, invert_g
from nlpmix.services.priors import default_tau, log_penalty
from nlpmix.services.tmvn import outer_gibbs_sweep
from nlpmix.utils.constants import DEFAULT_BURN_FRACTION, SQRT2
from nlpmix.utils.helpers import autocorrelation, batch_means_se

logger = logging.getLogger(__name__)


@dataclass
class ChainOutput:
    """Post-burn-in draws of one model-conditional chain."""
    theta_draws: np.ndarray
    phi_draws: np.ndarray
    model: ModelIndicator
    family: PriorFamily
    burn_in: int = 0
    seed: Optional[int] = None
    lambda_draws: Optional[np.ndarray] = None
    mh_accepted: int = 0
    mh_proposals: int = 0
    boundary_events: int = 0

    @property
    def n_draws(self) -> int:
        return self.phi_draws.shape[0]

    @property
    def acceptance_rate(self) -> Optional[float]:
        if self.mh_proposals == 0:
            return None
        return self.mh_accepted / self.mh_proposals

    def posterior_mean(self) -> np.ndarray:
        if self.n_draws == 0:
            return np.zeros(self.theta_draws.shape[1])
        return self.theta_draws.mean(axis=0)

    def phi_mean(self) -> float:
        return float(self.phi_draws.mean())

    def autocorrelation(self, lag: int = 1) -> Dict[str, np.ndarray]:
        return {
            "theta": autocorrelation(self.theta_draws, lag) if self.theta_draws.shape[1] else np.zeros(0),
            "phi": float(autocorrelation(self.phi_draws, lag)[0]),
        }

    def mcse(self) -> Dict[str, np.ndarray]:
        """Batch-means standard errors of the posterior means."""
        return {
            "theta": batch_means_se(self.theta_draws) if self.theta_draws.shape[1] else np.zeros(0),
            "phi": float(batch_means_se(self.phi_draws)),
        }


def init_chain(
    data: Dataset,
    model: ModelIndicator,
    tau: float = default_tau(PriorFamily.PMOM),
) -> Tuple[np.ndarray, float]:
    """Ridge start (X'X + I/tau)^{-1} X'y with exact zeros nudged off the origin."""
    idx = list(model.indices)
    k = len(idx)
    if k > data.n:
        logger.debug("ridge start with %d coefficients and %d observations", k, data.n)
    xtx = data.xtx[np.ix_(idx, idx)]
    xty = data.xty[idx]
    theta = linalg.solve(xtx + np.eye(k) / tau, xty, assume_a="pos") if k else np.zeros(0)

    def residual_variance(t: np.ndarray) -> float:
        rss = data.yty - 2.0 * float(t @ xty) + float(t @ xtx @ t)
        return max(rss / data.n, 1e-10)

    phi = residual_variance(theta)
    zero = theta == 0.0
    if np.any(zero):
        theta[zero] = 1e-3 * math.sqrt(phi * tau)
        phi = residual_variance(theta)
    return theta, phi


class TruncationGibbs:
    """Shared machinery: data summaries, Cholesky factor, outer-rectangle sweep."""

    family: PriorFamily = PriorFamily.PMOM

    def __init__(
        self,
        data: Dataset,
        model: ModelIndicator,
        spec: PriorSpec,
        rng: np.random.Generator,
    ):
        if spec.family is not self.family:
            raise ValueError(f"{type(self).__name__} needs a {self.family.value} prior, got {spec.family.value}")
        if model.size == 0:
            raise ValueError("model-conditional samplers need a nonempty model")
        if spec.r != 1:
            raise ValueError("samplers are implemented for r = 1")
        self.data = data
        self.model = model
        self.spec = spec
        self.rng = rng
        idx = list(model.indices)
        self.k = len(idx)
        self.n = data.n
        self.xtx = data.xtx[np.ix_(idx, idx)]
        self.xty = data.xty[idx]
        self.yty = data.yty
        self._check_design()
        S = self.xtx + np.eye(self.k) / self.envelope_tau
        chol_S = linalg.cholesky(S, lower=True)
        self.mean = linalg.cho_solve((chol_S, True), self.xty)
        S_inv = linalg.cho_solve((chol_S, True), np.eye(self.k))
        # chol(phi * S^{-1}) = sqrt(phi) * chol(S^{-1})
        self.chol_unit = linalg.cholesky(S_inv, lower=True)
        self.mh_accepted = 0
        self.mh_proposals = 0
        self.boundary_events = 0

    @property
    def envelope_tau(self) -> float:
        return self.spec.tau

    def _check_design(self) -> None:
        pass

    def rss(self, theta: np.ndarray) -> float:
        value = self.yty - 2.0 * float(theta @ self.xty) + float(theta @ self.xtx @ theta)
        return max(value, 0.0)

    def _inverse_gamma(self, shape: float, scale: float) -> float:
        return scale / self.rng.gamma(shape)

    def _metropolis(self, phi: float, proposal: float, theta: np.ndarray) -> float:
        """Independence MH step for exp(-tau*phi*sum(theta^-2)) times the proposal density."""
        self.mh_proposals += 1
        log_accept = (phi - proposal) * self.spec.tau * float(np.sum(1.0 / np.square(theta)))
        if log_accept >= 0.0 or math.log(self.rng.random()) < log_accept:
            self.mh_accepted += 1
            return proposal
        return phi

    def update_phi(self, theta: np.ndarray, phi: float) -> float:
        raise NotImplementedError

    def draw_log_lambda(self, theta: np.ndarray, phi: float) -> np.ndarray:
        raise NotImplementedError

    def thresholds(self, log_lambda: np.ndarray, phi: float) -> np.ndarray:
        raise NotImplementedError

    def step(self, theta: np.ndarray, phi: float) -> Tuple[np.ndarray, float, np.ndarray]:
        """One Gibbs iteration: phi, then lambda, then theta."""
        phi = self.update_phi(theta, phi)
        log_lambda = self.draw_log_lambda(theta, phi)
        t = self.thresholds(log_lambda, phi)
        theta, fallbacks = outer_gibbs_sweep(
            theta, self.mean, math.sqrt(phi) * self.chol_unit, -t, t, self.rng
        )
        self.boundary_events += fallbacks
        return theta, phi, log_lambda

    def run(
        self,
        n_iter: int,
        burn: Optional[int] = None,
        init: Optional[Tuple[np.ndarray, float]] = None,
        keep_lambda: bool = False,
        seed: Optional[int] = None,
    ) -> ChainOutput:
        if burn is None:
            burn = int(DEFAULT_BURN_FRACTION * n_iter)
        if not 0 <= burn < n_iter:
            raise ValueError(f"burn-in {burn} must lie in [0, {n_iter})")
        theta, phi = init if init is not None else init_chain(self.data, self.model, self.spec.tau)
        theta = np.asarray(theta, dtype=float).copy()
        if np.any(theta == 0.0):
            raise ValueError("initial coefficients must be nonzero")
        kept = n_iter - burn
        thetas = np.empty((kept, self.k))
        phis = np.empty(kept)
        lambdas = np.empty((kept, self.k)) if keep_lambda else None
        for it in range(n_iter):
            theta, phi, log_lambda = self.step(theta, phi)
            if it >= burn:
                thetas[it - burn] = theta
                phis[it - burn] = phi
                if lambdas is not None:
                    lambdas[it - burn] = np.exp(log_lambda)
        if self.boundary_events:
            logger.warning("model %s: %d boundary-atom fallbacks", self.model.key, self.boundary_events)
        return ChainOutput(
            theta_draws=thetas,
            phi_draws=phis,
            model=self.model,
            family=self.family,
            burn_in=burn,
            seed=seed,
            lambda_draws=lambdas,
            mh_accepted=self.mh_accepted,
            mh_proposals=self.mh_proposals,
            boundary_events=self.boundary_events,
        )


class PmomGibbs(TruncationGibbs):
    """pMOM: conjugate phi step, lambda_i ~ Unif(0, theta_i^2/(tau*phi))."""

    family = PriorFamily.PMOM

    def update_phi(self, theta: np.ndarray, phi: float) -> float:
        spec = self.spec
        shape = 0.5 * (spec.a_phi + self.n + 3 * self.k)
        scale = 0.5 * (spec.b_phi + self.rss(theta) + float(theta @ theta) / spec.tau)
        return self._inverse_gamma(shape, scale)

    def draw_log_lambda(self, theta: np.ndarray, phi: float) -> np.ndarray:
        u = 1.0 - self.rng.random(self.k)
        return np.log(u) + np.log(np.square(theta) / (self.spec.tau * phi))

    def thresholds(self, log_lambda: np.ndarray, phi: float) -> np.ndarray:
        return np.sqrt(self.spec.tau * phi * np.exp(log_lambda))


class PemomGibbs(TruncationGibbs):
    """peMOM: MH phi step, lambda_i ~ Unif(0, exp(sqrt(2) - tau*phi/theta_i^2))."""

    family = PriorFamily.PEMOM

    def update_phi(self, theta: np.ndarray, phi: float) -> float:
        spec = self.spec
        shape = 0.5 * (spec.a_phi + self.n + self.k)
        scale = 0.5 * (spec.b_phi + self.rss(theta) + float(theta @ theta) / spec.tau)
        return self._metropolis(phi, self._inverse_gamma(shape, scale), theta)

    def draw_log_lambda(self, theta: np.ndarray, phi: float) -> np.ndarray:
        u = 1.0 - self.rng.random(self.k)
        return np.log(u) + SQRT2 - self.spec.tau * phi / np.square(theta)

    def thresholds(self, log_lambda: np.ndarray, phi: float) -> np.ndarray:
        # theta^2 > tau*phi / (sqrt(2) - log(lambda)), and log(lambda) < sqrt(2)
        return np.sqrt(self.spec.tau * phi / (SQRT2 - log_lambda))


class PimomGibbs(TruncationGibbs):
    """piMOM: MH phi step, lambda_i ~ Unif(0, d(theta_i, phi)) against N(0, tau_n*phi).

    The truncated Normal combines the likelihood with the N(0, tau_n*phi)
    envelope, so S = X'X + I/tau_n.
    """

    family = PriorFamily.PIMOM

    @property
    def envelope_tau(self) -> float:
        return self.spec.tau_n

    def _check_design(self) -> None:
        if self.k >= self.n:
            raise RankDeficientError(f"piMOM sampler needs |model| < n, got {self.k} >= {self.n}")
        rank = np.linalg.matrix_rank(self.xtx)
        if rank < self.k:
            raise RankDeficientError(f"X'X of model {self.model.key} has rank {rank} < {self.k}")

    def update_phi(self, theta: np.ndarray, phi: float) -> float:
        spec = self.spec
        shape = 0.5 * (spec.a_phi + self.n - self.k)
        scale = 0.5 * (spec.b_phi + self.rss(theta))
        return self._metropolis(phi, self._inverse_gamma(shape, scale), theta)

    def draw_log_lambda(self, theta: np.ndarray, phi: float) -> np.ndarray:
        u = 1.0 - self.rng.random(self.k)
        return np.log(u) + log_penalty(self.spec, theta, phi)

    def thresholds(self, log_lambda: np.ndarray, phi: float) -> np.ndarray:
        curve = ImomPenaltyCurve(self.spec.tau, self.spec.tau_n, phi)
        return np.sqrt([invert_g(curve, float(level)) for level in log_lambda])


_SAMPLERS = {
    PriorFamily.PMOM: PmomGibbs,
    PriorFamily.PIMOM: PimomGibbs,
    PriorFamily.PEMOM: PemomGibbs,
}


def _run(cls, data, model, spec, n_iter, burn, seed, keep_lambda, init) -> ChainOutput:
    sampler = cls(data, model, spec, np.random.default_rng(seed))
    return sampler.run(n_iter, burn, init=init, keep_lambda=keep_lambda, seed=seed)


def gibbs_pmom(data: Dataset, model: ModelIndicator, spec: PriorSpec, n_iter: int = 1000,
               burn: Optional[int] = None, seed: Optional[int] = None,
               keep_lambda: bool = False, init=None) -> ChainOutput:
    """pMOM posterior draws (r = 1)."""
    return _run(PmomGibbs, data, model, spec, n_iter, burn, seed, keep_lambda, init)


def gibbs_pimom(data: Dataset, model: ModelIndicator, spec: PriorSpec, n_iter: int = 1000,
                burn: Optional[int] = None, seed: Optional[int] = None,
                keep_lambda: bool = False, init=None) -> ChainOutput:
    """piMOM posterior draws; requires a full-rank design with |model| < n."""
    return _run(PimomGibbs, data, model, spec, n_iter, burn, seed, keep_lambda, init)


def gibbs_pemom(data: Dataset, model: ModelIndicator, spec: PriorSpec, n_iter: int = 1000,
                burn: Optional[int] = None, seed: Optional[int] = None,
                keep_lambda: bool = False, init=None) -> ChainOutput:
    """peMOM posterior draws."""
    return _run(PemomGibbs, data, model, spec, n_iter, burn, seed, keep_lambda, init)


def sample_conjugate_normal(
    data: Dataset,
    model: ModelIndicator,
    spec: PriorSpec,
    n_draws: int,
    seed: Optional[int] = None,
) -> ChainOutput:
    """Independent draws from the Normal-IG posterior (local prior, or the null model)."""
    post = conjugate_posterior(data, model, spec.tau, spec.a_phi, spec.b_phi)
    theta, phi = post.draw(n_draws, np.random.default_rng(seed))
    return ChainOutput(theta_draws=theta, phi_draws=phi, model=model, family=spec.family, seed=seed)


def sample_model_posterior(
    data: Dataset,
    model: ModelIndicator,
    spec: PriorSpec,
    n_iter: int = 1000,
    burn: Optional[int] = None,
    seed: Optional[int] = None,
) -> ChainOutput:
    """Dispatch on family; the null model and the Normal family are sampled exactly."""
    if model.size == 0 or spec.family is PriorFamily.NORMAL:
        if burn is None:
            burn = int(DEFAULT_BURN_FRACTION * n_iter)
        return sample_conjugate_normal(data, model, spec, n_iter - burn, seed)
    return _run(_SAMPLERS[spec.family], data, model, spec, n_iter, burn, seed, False, None)
