"""
Bayesian model averaging.

E(theta | y) = sum_k E(theta | M_k, y) P(M_k | y), with coordinates absent
from M_k contributing zero. Model-conditional means come either from the
family samplers (chains per model) or from importance-weighted local
posterior draws.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from nlpmix.exceptions import NlpmixError
from nlpmix.models import Dataset, ModelIndicator, PriorSpec
from nlpmix.services.marglik import nlp_posterior_mean
from nlpmix.services.modelsearch import ModelPosterior, posterior_model_probs
from nlpmix.services.samplers import ChainOutput, sample_model_posterior
from nlpmix.utils.constants import (
    DEFAULT_BURN_FRACTION,
    DEFAULT_DRAWS_PER_MODEL,
    DEFAULT_MAX_MODELS,
    MIN_BURN_IN,
    REPORT_MARGINAL_SAMPLES,
)
from nlpmix.utils.helpers import derive_seed, resolve_seed

logger = logging.getLogger(__name__)

PATHS = ("sampled", "exact")


@dataclass
class BmaEstimate:
    """Model-averaged posterior summary."""
    theta_hat: np.ndarray
    phi_hat: float
    inclusion_probs: np.ndarray
    model_means: Dict[int, np.ndarray] = field(default_factory=dict)
    model_phi: Dict[int, float] = field(default_factory=dict)
    model_weights: Dict[int, float] = field(default_factory=dict)
    seeds: Dict[int, int] = field(default_factory=dict)
    counts: Dict[int, int] = field(default_factory=dict)
    mean_model_size: float = 0.0
    visited_mass: float = 1.0
    excluded: List[int] = field(default_factory=list)
    renormalized: bool = False
    autocorrelations: Dict[int, Dict] = field(default_factory=dict)
    draws: Optional[Tuple[np.ndarray, np.ndarray]] = None
    path: str = "sampled"

    def recompute_mean(self) -> np.ndarray:
        """Weighted average of the stored per-model means."""
        out = np.zeros_like(self.theta_hat)
        for mask, w in self.model_weights.items():
            out += w * self.model_means[mask]
        return out


@dataclass
class Prediction:
    mean: np.ndarray
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    level: Optional[float] = None


def marginal_inclusion_probs(mp: ModelPosterior) -> np.ndarray:
    """P(delta_i = 1 | y) summed over models containing i."""
    out = np.zeros(mp.p)
    for mask, prob in mp.probabilities().items():
        for i in ModelIndicator(mask, mp.p).indices:
            out[i] += prob
    return np.minimum(out, 1.0)


def _mean_model_size(mp: ModelPosterior) -> float:
    return float(sum(prob * bin(mask).count("1") for mask, prob in mp.probabilities().items()))


def _embed(values: np.ndarray, model: ModelIndicator) -> np.ndarray:
    out = np.zeros(model.p)
    if model.size:
        out[list(model.indices)] = values
    return out


def _burn_for(n_draws: int) -> int:
    return max(MIN_BURN_IN, int(math.ceil(DEFAULT_BURN_FRACTION * n_draws)))


def _run_model_chain(
    data: Dataset, model: ModelIndicator, spec: PriorSpec, n_draws: int, seed: int
) -> Union[ChainOutput, str]:
    burn = _burn_for(n_draws)
    try:
        return sample_model_posterior(data, model, spec, n_draws + burn, burn, seed)
    except (NlpmixError, np.linalg.LinAlgError) as exc:
        return str(exc)


def _allocate_draws(
    ranked: List[Tuple[ModelIndicator, float]],
    draws_per_model: int,
    path: str,
    rng: np.random.Generator,
) -> List[Tuple[ModelIndicator, int, float]]:
    """(model, draws, weight) per kept model."""
    probs = np.array([prob for _, prob in ranked])
    probs = probs / probs.sum()
    if path == "exact":
        return [(model, draws_per_model, float(w)) for (model, _), w in zip(ranked, probs)]
    # sampled path: delta drawn from the model probabilities, then theta | delta.
    # Every kept model gets one draw up front so no visited model drops out.
    k = len(ranked)
    if k > draws_per_model:
        raise ValueError(f"{k} models cannot share {draws_per_model} draws")
    counts = 1 + rng.multinomial(draws_per_model - k, probs)
    return [(model, int(c), c / draws_per_model) for (model, _), c in zip(ranked, counts)]


def bma_posterior_mean(
    mp: ModelPosterior,
    data: Dataset,
    spec: PriorSpec,
    draws_per_model: int = DEFAULT_DRAWS_PER_MODEL,
    seed: Optional[int] = None,
    max_models: int = DEFAULT_MAX_MODELS,
    path: str = "sampled",
    n_jobs: int = 1,
    retain_draws: bool = False,
) -> BmaEstimate:
    """Model-averaged posterior mean from per-model sampler chains.

    Args:
        mp: model posterior from search or enumeration
        data: dataset the search was run on
        spec: prior on (theta, phi)
        draws_per_model: total draws for the sampled path, per model for the exact path
        seed: base seed; each model chain gets a seed derived from its bitmask
        max_models: keep only the most probable models (their mass is renormalised);
            the sampled path keeps no more models than draws_per_model
        path: "sampled" draws delta from the model probabilities first; "exact"
            weights each kept model's chain by its probability
        n_jobs: parallel chains
        retain_draws: keep pooled (theta, phi) draws for predictive intervals

    Returns:
        BmaEstimate
    """
    if path not in PATHS:
        raise ValueError(f"path must be one of {PATHS}, got '{path}'")
    if data.p != mp.p:
        raise ValueError(f"model posterior has p={mp.p} but data has p={data.p}")
    seed = resolve_seed(seed)
    ranked = posterior_model_probs(mp)
    cap = max_models if path == "exact" else min(max_models, draws_per_model)
    kept = ranked[:cap]
    visited_mass = float(sum(prob for _, prob in kept))
    if len(kept) < len(ranked):
        logger.info("BMA keeps %d of %d models (mass %.4f)", len(kept), len(ranked), visited_mass)

    rng = np.random.default_rng(derive_seed(seed, 0))
    plan = _allocate_draws(kept, draws_per_model, path, rng)
    seeds = {model.mask: derive_seed(seed, model.mask) for model, _, _ in plan}
    chains = Parallel(n_jobs=n_jobs)(
        delayed(_run_model_chain)(data, model, spec, n_draws, seeds[model.mask])
        for model, n_draws, _ in plan
    )

    excluded: List[int] = []
    means: Dict[int, np.ndarray] = {}
    phis: Dict[int, float] = {}
    weights: Dict[int, float] = {}
    counts: Dict[int, int] = {}
    acfs: Dict[int, Dict] = {}
    pooled_theta, pooled_phi = [], []
    for (model, n_draws, w), chain in zip(plan, chains):
        if isinstance(chain, str):
            logger.warning("model %s excluded from BMA: %s", model.key, chain)
            excluded.append(model.mask)
            continue
        means[model.mask] = _embed(chain.posterior_mean(), model)
        phis[model.mask] = chain.phi_mean()
        weights[model.mask] = w
        counts[model.mask] = n_draws
        if model.size and chain.n_draws > 2:
            acfs[model.mask] = chain.autocorrelation(1)
        if retain_draws:
            full = np.zeros((chain.n_draws, data.p))
            if model.size:
                full[:, list(model.indices)] = chain.theta_draws
            pooled_theta.append(full)
            pooled_phi.append(chain.phi_draws)

    if not weights:
        raise NlpmixError("every model failed in the model-conditional samplers")
    total = sum(weights.values())
    renormalized = bool(excluded)
    if renormalized:
        logger.warning("BMA weights renormalised after excluding %d models", len(excluded))
    weights = {mask: w / total for mask, w in weights.items()}

    estimate = BmaEstimate(
        theta_hat=np.zeros(data.p),
        phi_hat=float(sum(weights[m] * phis[m] for m in weights)),
        inclusion_probs=marginal_inclusion_probs(mp),
        model_means=means,
        model_phi=phis,
        model_weights=weights,
        seeds={m: seeds[m] for m in weights},
        counts=counts,
        mean_model_size=_mean_model_size(mp),
        visited_mass=visited_mass,
        excluded=excluded,
        renormalized=renormalized,
        autocorrelations=acfs,
        path=path,
    )
    estimate.theta_hat = estimate.recompute_mean()
    if retain_draws:
        estimate.draws = _resample_pool(pooled_theta, pooled_phi, weights, counts, path, rng)
    return estimate


def _resample_pool(thetas, phis, weights, counts, path, rng) -> Tuple[np.ndarray, np.ndarray]:
    theta = np.vstack(thetas)
    phi = np.concatenate(phis)
    if path == "sampled":
        return theta, phi
    # exact path: per-draw weights w_k / n_k, resampled to a pooled sample
    w = np.concatenate([np.full(counts[m], weights[m] / counts[m]) for m in weights])
    idx = rng.choice(theta.shape[0], size=theta.shape[0], replace=True, p=w / w.sum())
    return theta[idx], phi[idx]


def exact_mixture_mean(
    mp: ModelPosterior,
    data: Dataset,
    spec: PriorSpec,
    n_samples: int = REPORT_MARGINAL_SAMPLES,
    seed: int = 0,
    max_models: Optional[int] = None,
    min_weight: float = 0.0,
) -> BmaEstimate:
    """Model-averaged mean from importance-weighted per-model means, no chains."""
    ranked = posterior_model_probs(mp, max_models)
    if min_weight > 0.0:
        ranked = [(m, w) for m, w in ranked if w >= min_weight] or ranked[:1]
    total = sum(w for _, w in ranked)
    means, phis, weights, seeds = {}, {}, {}, {}
    for model, w in ranked:
        s = derive_seed(seed, model.mask)
        im = nlp_posterior_mean(data, model, spec, n_samples, s)
        means[model.mask] = _embed(im.mean, model)
        phis[model.mask] = im.phi_mean
        weights[model.mask] = w / total
        seeds[model.mask] = s
    estimate = BmaEstimate(
        theta_hat=np.zeros(data.p),
        phi_hat=float(sum(weights[m] * phis[m] for m in weights)),
        inclusion_probs=marginal_inclusion_probs(mp),
        model_means=means,
        model_phi=phis,
        model_weights=weights,
        seeds=seeds,
        mean_model_size=_mean_model_size(mp),
        visited_mass=float(total),
        path="exact",
    )
    estimate.theta_hat = estimate.recompute_mean()
    return estimate


def predict(
    estimate: Union[BmaEstimate, Tuple[np.ndarray, np.ndarray]],
    X_new: np.ndarray,
    level: Optional[float] = None,
    seed: Optional[int] = None,
) -> Prediction:
    """Point predictions X_new @ theta_hat, with predictive intervals from draws.

    Intervals add residual noise drawn with each retained phi.
    """
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new[None, :]
    if isinstance(estimate, BmaEstimate):
        theta_hat, draws = estimate.theta_hat, estimate.draws
    else:
        draws = (np.asarray(estimate[0], dtype=float), np.asarray(estimate[1], dtype=float))
        theta_hat = draws[0].mean(axis=0)
    if X_new.shape[1] != theta_hat.shape[0]:
        raise ValueError(f"X_new has {X_new.shape[1]} columns, expected {theta_hat.shape[0]}")
    mean = X_new @ theta_hat
    if level is None:
        return Prediction(mean)
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if draws is None:
        raise ValueError("predictive intervals need retained draws")
    theta, phi = draws
    rng = np.random.default_rng(seed)
    sim = theta @ X_new.T + np.sqrt(phi)[:, None] * rng.standard_normal((phi.size, X_new.shape[0]))
    tail = 0.5 * (1.0 - level)
    lower, upper = np.quantile(sim, [tail, 1.0 - tail], axis=0)
    return Prediction(mean, lower, upper, level)


def cross_chain_correlation(estimates: Sequence[BmaEstimate]) -> float:
    """Smallest pairwise Pearson correlation between BMA mean vectors.

    A constant vector has no correlation; the pair scores 1 when both
    vectors are equal and 0 otherwise.
    """
    if len(estimates) < 2:
        raise ValueError("need at least two estimates")
    lowest = 1.0
    for a, b in itertools.combinations(estimates, 2):
        if np.ptp(a.theta_hat) == 0.0 or np.ptp(b.theta_hat) == 0.0:
            r = 1.0 if np.allclose(a.theta_hat, b.theta_hat) else 0.0
        else:
            r = float(np.corrcoef(a.theta_hat, b.theta_hat)[0, 1])
        lowest = min(lowest, r)
    return lowest
