"""Services module for nlpmix: priors, samplers, marginals, search and averaging."""

from .bma import BmaEstimate, bma_posterior_mean, marginal_inclusion_probs, predict
from .marglik import g_factor, log_marginal_nlp, log_marginal_normal_ig
from .modelsearch import ModelPosterior, gibbs_model_search, log_model_prior, posterior_model_probs
from .priors import default_tau, log_density, penalty_d, prob_below_threshold
from .samplers import ChainOutput, gibbs_pemom, gibbs_pimom, gibbs_pmom, init_chain

__all__ = [
    "BmaEstimate",
    "ChainOutput",
    "ModelPosterior",
    "bma_posterior_mean",
    "default_tau",
    "g_factor",
    "gibbs_model_search",
    "gibbs_pemom",
    "gibbs_pimom",
    "gibbs_pmom",
    "init_chain",
    "log_density",
    "log_marginal_nlp",
    "log_marginal_normal_ig",
    "log_model_prior",
    "marginal_inclusion_probs",
    "penalty_d",
    "posterior_model_probs",
    "predict",
    "prob_below_threshold",
]
