"""
Model search over inclusion indicators.

A Gibbs scan flips one indicator at a time, comparing the two neighbouring
models through their log marginal likelihood plus log model prior. Marginals
are memoised per model bitmask so each model is evaluated once per search;
Monte Carlo marginals are frozen at first evaluation, which keeps the
chain's target fixed.
"""

import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Protocol, Tuple

import numpy as np
from scipy.special import expit, gammaln

from nlpmix.exceptions import NlpmixError
from nlpmix.models import Dataset, LogMarginal, ModelIndicator, PriorSpec
from nlpmix.services.marglik import log_marginal_nlp
from nlpmix.utils.constants import DEFAULT_SEARCH_SWEEPS, MODEL_PRIORS, SEARCH_MARGINAL_SAMPLES
from nlpmix.utils.helpers import derive_seed, resolve_seed

logger = logging.getLogger(__name__)

MAX_ENUMERATION_P = 16


def log_model_prior(delta: ModelIndicator, p: int, n: int, kind: str = "beta_binomial") -> float:
    """Log prior probability of a model, zero mass above n variables.

    beta_binomial: Beta-Binomial(1,1) on the model size, uniform within a size,
    giving -log(p+1) - log C(p, |delta|). uniform: 2^-p for every model.
    """
    kind = kind.replace("-", "_")
    if kind not in MODEL_PRIORS:
        raise ValueError(f"model prior must be one of {MODEL_PRIORS}, got '{kind}'")
    size = delta.size
    if size > n:
        return -math.inf
    if kind == "uniform":
        return -p * math.log(2.0)
    log_choose = gammaln(p + 1) - gammaln(size + 1) - gammaln(p - size + 1)
    return float(-math.log(p + 1.0) - log_choose)


class MarginalStore(Protocol):
    """Persistent backing for MarginalCache (see repository.PersistentMarginalStore)."""

    def get(self, data_key: str, prior_key: str, model_key: str, n_samples: int,
            seed: int) -> Optional[LogMarginal]: ...

    def put(self, data_key: str, prior_key: str, model_key: str, seed: int,
            value: LogMarginal) -> None: ...


class MarginalCache:
    """Memoised log marginal likelihoods keyed by model bitmask.

    Safe for concurrent readers; the first inserted value for a model wins.
    Models whose evaluation fails are quarantined as -inf evidence.
    """

    def __init__(
        self,
        data: Dataset,
        spec: PriorSpec,
        n_samples: int = SEARCH_MARGINAL_SAMPLES,
        seed: int = 0,
        store: Optional[MarginalStore] = None,
    ):
        self.data = data
        self.spec = spec
        self.n_samples = n_samples
        self.seed = seed
        self.store = store
        self._values: Dict[int, LogMarginal] = {}
        self._lock = threading.Lock()
        self.failures: Dict[int, str] = {}
        self.hits = 0
        self.misses = 0
        self._data_key: Optional[str] = None

    @property
    def data_key(self) -> str:
        if self._data_key is None:
            self._data_key = self.data.key
        return self._data_key

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, model: ModelIndicator) -> bool:
        return model.mask in self._values

    def items(self) -> Iterator[Tuple[int, LogMarginal]]:
        with self._lock:
            return iter(list(self._values.items()))

    def model_seed(self, model: ModelIndicator) -> int:
        return derive_seed(self.seed, model.mask)

    def _evaluate(self, model: ModelIndicator) -> LogMarginal:
        seed = self.model_seed(model)
        if self.store is not None:
            stored = self.store.get(self.data_key, self.spec.key, model.key, self.n_samples, seed)
            if stored is not None:
                return stored
        try:
            value = log_marginal_nlp(self.data, model, self.spec, self.n_samples, seed)
        except (NlpmixError, np.linalg.LinAlgError) as exc:
            logger.warning("model %s quarantined: %s", model.key, exc)
            self.failures[model.mask] = str(exc)
            return LogMarginal(-math.inf, 0.0, self.n_samples)
        if self.store is not None and math.isfinite(value.value):
            self.store.put(self.data_key, self.spec.key, model.key, seed, value)
        return value

    def get(self, model: ModelIndicator) -> LogMarginal:
        with self._lock:
            cached = self._values.get(model.mask)
            if cached is not None:
                self.hits += 1
                return cached
            self.misses += 1
        value = self._evaluate(model)
        with self._lock:
            return self._values.setdefault(model.mask, value)

    def log_marginal(self, model: ModelIndicator) -> float:
        return self.get(model).value


@dataclass
class ModelPosterior:
    """Visit counts (or exact weights) over models."""
    p: int
    n: int
    counts: Counter = field(default_factory=Counter)
    n_iter: int = 0
    seed: Optional[int] = None
    cache: Optional[MarginalCache] = None
    trace: List[int] = field(default_factory=list)
    model_prior: str = "beta_binomial"
    burn_in: int = 0
    weights: Optional[Dict[int, float]] = None

    @property
    def exact(self) -> bool:
        return self.weights is not None

    @property
    def n_visited(self) -> int:
        return len(self.weights) if self.exact else len(self.counts)

    def probabilities(self) -> Dict[int, float]:
        """Normalised model probabilities keyed by bitmask."""
        if self.weights is not None:
            return dict(self.weights)
        total = sum(self.counts.values())
        if total == 0:
            return {}
        return {mask: c / total for mask, c in self.counts.items()}

    def modal_model(self) -> ModelIndicator:
        return posterior_model_probs(self, 1)[0][0]

    def log_posterior(self, model: ModelIndicator) -> float:
        """Unnormalised log posterior from the cache."""
        if self.cache is None:
            raise ValueError("model posterior carries no marginal cache")
        return self.cache.log_marginal(model) + log_model_prior(model, self.p, self.n, self.model_prior)


def _flip_probability(lp1: float, lp0: float) -> float:
    if lp1 == -math.inf:
        return 0.0
    if lp0 == -math.inf:
        return 1.0
    return float(expit(lp1 - lp0))


def gibbs_model_search(
    data: Dataset,
    spec: PriorSpec,
    n_iter: int = DEFAULT_SEARCH_SWEEPS,
    seed: Optional[int] = None,
    n_samples: int = SEARCH_MARGINAL_SAMPLES,
    burn: int = 0,
    random_order: bool = False,
    model_prior: str = "beta_binomial",
    cache: Optional[MarginalCache] = None,
    init: Optional[ModelIndicator] = None,
) -> ModelPosterior:
    """Gibbs scan over inclusion indicators, starting from the null model.

    Each sweep updates delta_1..delta_p (or a random permutation) from
    P(delta_i = 1 | delta_-i, y); the model is recorded after every sweep
    past burn-in.
    """
    p = data.p
    if p < 1:
        raise ValueError("model search needs at least one candidate variable")
    if n_iter < 1:
        raise ValueError("n_iter must be positive")
    seed = resolve_seed(seed)
    rng = np.random.default_rng(seed)
    if cache is None:
        cache = MarginalCache(data, spec, n_samples, seed)
    model = init if init is not None else ModelIndicator.null(p)
    if model.size > data.n:
        raise ValueError(f"initial model has {model.size} variables but n={data.n}")

    def log_post(m: ModelIndicator) -> float:
        prior = log_model_prior(m, p, data.n, model_prior)
        if prior == -math.inf:
            return -math.inf
        return cache.log_marginal(m) + prior

    counts: Counter = Counter()
    trace: List[int] = []
    for it in range(burn + n_iter):
        order = rng.permutation(p) if random_order else range(p)
        for i in order:
            m0 = model.with_variable(int(i), False)
            m1 = model.with_variable(int(i), True)
            prob = _flip_probability(log_post(m1), log_post(m0))
            model = m1 if rng.random() < prob else m0
        if it >= burn:
            counts[model.mask] += 1
            trace.append(model.mask)
    logger.info(
        "model search: %d sweeps, %d models visited, %d marginals evaluated, %d quarantined",
        n_iter, len(counts), len(cache), len(cache.failures),
    )
    return ModelPosterior(
        p=p, n=data.n, counts=counts, n_iter=n_iter, seed=seed, cache=cache,
        trace=trace, model_prior=model_prior, burn_in=burn,
    )


def posterior_model_probs(
    mp: ModelPosterior, top_k: Optional[int] = None
) -> List[Tuple[ModelIndicator, float]]:
    """Models ranked by posterior probability, ties broken by bitmask."""
    probs = mp.probabilities()
    if not probs:
        raise ValueError("model posterior is empty")
    ranked = sorted(probs.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_k is not None:
        ranked = ranked[:top_k]
    return [(ModelIndicator(mask, mp.p), prob) for mask, prob in ranked]


def enumerate_model_posterior(
    data: Dataset,
    spec: PriorSpec,
    n_samples: int = SEARCH_MARGINAL_SAMPLES,
    seed: int = 0,
    model_prior: str = "beta_binomial",
    cache: Optional[MarginalCache] = None,
) -> ModelPosterior:
    """Exact posterior over all 2^p models (p <= 16)."""
    p = data.p
    if p > MAX_ENUMERATION_P:
        raise ValueError(f"enumeration limited to p <= {MAX_ENUMERATION_P}, got {p}")
    if cache is None:
        cache = MarginalCache(data, spec, n_samples, seed)
    masks = np.arange(1 << p)
    log_post = np.empty(masks.size)
    for j, mask in enumerate(masks):
        model = ModelIndicator(int(mask), p)
        prior = log_model_prior(model, p, data.n, model_prior)
        log_post[j] = -math.inf if prior == -math.inf else cache.log_marginal(model) + prior
    if not np.isfinite(log_post).any():
        raise NlpmixError("every model has zero posterior mass")
    w = np.exp(log_post - np.max(log_post))
    w /= w.sum()
    weights = {int(mask): float(wj) for mask, wj in zip(masks, w) if wj > 0.0}
    return ModelPosterior(p=p, n=data.n, seed=seed, cache=cache, model_prior=model_prior, weights=weights)


def total_variation(first: Dict[int, float], second: Dict[int, float]) -> float:
    """Total-variation distance between two model distributions."""
    keys = set(first) | set(second)
    return 0.5 * sum(abs(first.get(k, 0.0) - second.get(k, 0.0)) for k in keys)
