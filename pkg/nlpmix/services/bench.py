"""
Simulation and cross-validation harness.

Generates equicorrelated Gaussian designs, fits the Bayesian estimators and
the ridge / oracle least-squares baselines, and tabulates squared error
split by the support of the true coefficients. Also measures how fast
model-averaged estimates of a spurious coefficient shrink as n grows.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from nlpmix.exceptions import NlpmixError
from nlpmix.models import Dataset, MethodConfig, PriorFamily, PriorSpec, SimConfig
from nlpmix.services.bma import bma_posterior_mean, exact_mixture_mean
from nlpmix.services.modelsearch import enumerate_model_posterior, gibbs_model_search
from nlpmix.utils.constants import REPORT_MARGINAL_SAMPLES, SEARCH_MARGINAL_SAMPLES, SIM_NONZERO_COEFFICIENTS
from nlpmix.utils.helpers import derive_seed, pearson_r2

logger = logging.getLogger(__name__)


# =============================================================================
# DATA GENERATION
# =============================================================================

def gen_equicorr_data(cfg: SimConfig, replicate_index: int = 0) -> Dataset:
    """Rows N(0, (1-rho) I + rho 11'), y = X theta* + sqrt(phi*) noise."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, replicate_index]))
    n, p = cfg.n, cfg.p
    shared = rng.standard_normal((n, 1))
    X = math.sqrt(cfg.rho) * shared + math.sqrt(1.0 - cfg.rho) * rng.standard_normal((n, p))
    theta = np.asarray(cfg.theta_star, dtype=float)
    y = X @ theta + math.sqrt(cfg.phi_star) * rng.standard_normal(n)
    return Dataset(y, X)


def gen_two_predictor_data(
    theta: Sequence[float], n: int = 1000, seed: Optional[int] = None, phi: float = 1.0
) -> Dataset:
    """Two predictors with variance 2 and covariance 1."""
    rng = np.random.default_rng(seed)
    cov = np.array([[2.0, 1.0], [1.0, 2.0]])
    X = rng.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    y = X @ np.asarray(theta, dtype=float) + math.sqrt(phi) * rng.standard_normal(n)
    return Dataset(y, X)


def max_abs_sample_correlation(X: np.ndarray) -> float:
    """Largest absolute off-diagonal sample correlation between columns."""
    R = np.corrcoef(np.asarray(X, dtype=float), rowvar=False)
    np.fill_diagonal(R, 0.0)
    return float(np.max(np.abs(R)))


# =============================================================================
# ESTIMATORS
# =============================================================================

def sse(theta_hat: Sequence[float], theta_star: Sequence[float]) -> Tuple[float, float, float]:
    """(total, zero_part, nonzero_part) of sum (theta_hat - theta*)^2."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_hat.shape != theta_star.shape:
        raise ValueError(f"length mismatch: {theta_hat.shape} vs {theta_star.shape}")
    sq = (theta_hat - theta_star) ** 2
    zero = theta_star == 0.0
    zero_part = float(np.sum(sq[zero]))
    nonzero_part = float(np.sum(sq[~zero]))
    return zero_part + nonzero_part, zero_part, nonzero_part


def ridge_gcv(X: np.ndarray, y: np.ndarray, n_grid: int = 80) -> Tuple[np.ndarray, float]:
    """Ridge regression with the penalty chosen by generalised cross-validation.

    Returns:
        (coefficients, penalty)
    """
    n = X.shape[0]
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    uty = U.T @ y
    s2 = s * s
    top = s2[0] if s2.size else 1.0
    grid = top * np.logspace(-10, 3, n_grid)
    rss_perp = float(y @ y - uty @ uty)
    best, best_lam = math.inf, grid[0]
    for lam in grid:
        shrink = s2 / (s2 + lam)
        resid = float(np.sum(((1.0 - shrink) * uty) ** 2)) + max(rss_perp, 0.0)
        df = float(np.sum(shrink))
        if df >= n:
            continue
        score = n * resid / (n - df) ** 2
        if score < best:
            best, best_lam = score, lam
    coef = Vt.T @ (s / (s2 + best_lam) * uty)
    return coef, float(best_lam)


def ols_oracle(X: np.ndarray, y: np.ndarray, support: Sequence[int]) -> np.ndarray:
    """Least squares on the true support, zeros elsewhere."""
    support = list(support)
    out = np.zeros(X.shape[1])
    if support:
        out[support] = np.linalg.lstsq(X[:, support], y, rcond=None)[0]
    return out


def fit_method(
    data: Dataset,
    method: MethodConfig,
    seed: int = 0,
    support: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Coefficient estimate of one method on one dataset."""
    if method.name == "ridge":
        return ridge_gcv(data.X, data.y)[0]
    if method.name == "ols_oracle":
        if support is None:
            raise ValueError("ols_oracle needs the true support")
        return ols_oracle(data.X, data.y, support)
    spec = method.prior_spec()
    mp = gibbs_model_search(
        data, spec, n_iter=method.n_sweeps, seed=seed,
        n_samples=method.search_samples, model_prior=method.model_prior,
    )
    return bma_posterior_mean(mp, data, spec, method.draws_per_model, seed=derive_seed(seed, 1)).theta_hat


# =============================================================================
# SIMULATION STUDY
# =============================================================================

@dataclass
class SseReport:
    """Replicate-level SSE rows and their per-method summary."""
    replicates: pd.DataFrame
    excluded: int = 0

    GROUP = ["n", "p", "rho", "phi_star", "method"]

    def summary(self) -> pd.DataFrame:
        ok = self.replicates[~self.replicates["failed"]]
        parts = ["sse_total", "sse_zero", "sse_nonzero"]
        grouped = ok.groupby(self.GROUP, sort=True)[parts]
        mean = grouped.mean().add_prefix("mean_")
        se = (grouped.std(ddof=1) / np.sqrt(grouped.count())).add_prefix("se_")
        out = mean.join(se)
        out["replicates"] = grouped.size()
        return out.reset_index()

    def mean_sse(self, method: str, part: str = "sse_total", **where) -> float:
        rows = self.replicates[(self.replicates["method"] == method) & ~self.replicates["failed"]]
        for key, value in where.items():
            rows = rows[rows[key] == value]
        return float(rows[part].mean())

    def write(self, prefix: str) -> List[str]:
        """Replicate CSV, JSON summary and one gnuplot table per (p, method)."""
        paths = [f"{prefix}.csv", f"{prefix}.summary.json"]
        self.replicates.to_csv(paths[0], index=False, float_format="%.10g")
        summary = self.summary()
        summary.to_json(paths[1], orient="records", indent=2, double_precision=10)
        for (p, method), rows in summary.groupby(["p", "method"], sort=True):
            path = f"{prefix}.p{p}.{method}.dat"
            cols = ["n", "rho", "phi_star", "mean_sse_total", "se_sse_total", "mean_sse_zero", "mean_sse_nonzero"]
            with open(path, "w") as fh:
                fh.write("# " + " ".join(cols) + "\n")
                rows[cols].to_csv(fh, sep=" ", index=False, header=False, float_format="%.10g")
            paths.append(path)
        return paths


def _replicate_rows(cfg: SimConfig, rep: int, methods: Sequence[MethodConfig]) -> List[Dict]:
    data = gen_equicorr_data(cfg, rep)
    support = cfg.support
    fit_seed = derive_seed(cfg.seed, rep, 1)
    rows = []
    for method in methods:
        row = {"n": cfg.n, "p": cfg.p, "rho": cfg.rho, "phi_star": cfg.phi_star,
               "replicate": rep, "method": method.name, "failed": False}
        try:
            theta_hat = fit_method(data, method, fit_seed, support)
            row["sse_total"], row["sse_zero"], row["sse_nonzero"] = sse(theta_hat, cfg.theta_star)
        except (NlpmixError, np.linalg.LinAlgError) as exc:
            logger.warning("replicate %d of %s failed (%s): %s", rep, method.name, cfg, exc)
            row.update(failed=True, sse_total=np.nan, sse_zero=np.nan, sse_nonzero=np.nan)
        rows.append(row)
    return rows


def run_sim_study(
    configs: Sequence[SimConfig],
    methods: Sequence[MethodConfig],
    n_jobs: int = 1,
) -> SseReport:
    """SSE of every method on every replicate of every configuration."""
    tasks = [(cfg, rep) for cfg in configs for rep in range(cfg.replicates)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(_replicate_rows)(cfg, rep, methods) for cfg, rep in tasks
    )
    frame = pd.DataFrame([row for rows in results for row in rows])
    excluded = int(frame["failed"].sum()) if len(frame) else 0
    if excluded:
        logger.warning("%d replicate fits excluded", excluded)
    return SseReport(frame, excluded)


def preset_study(name: str, seed: int = 0) -> Tuple[List[SimConfig], List[MethodConfig]]:
    """Named benchmark grids."""
    if name == "sim-small":
        configs = [SimConfig.sparse_design(p=20, replicates=3, seed=seed)]
        methods = [MethodConfig(name="pmom", n_sweeps=50, draws_per_model=200),
                   MethodConfig(name="ridge"), MethodConfig(name="ols_oracle")]
    elif name == "sim-desk":
        configs = [
            SimConfig.sparse_design(p=p, phi_star=phi, rho=rho, replicates=50, seed=seed)
            for p in (50, 100, 200) for phi in (1.0, 4.0, 8.0) for rho in (0.0, 0.25)
        ]
        methods = [MethodConfig(name=m) for m in ("pmom", "pimom", "pemom", "ridge", "ols_oracle")]
    else:
        raise ValueError(f"unknown preset '{name}'")
    return configs, methods


# =============================================================================
# SHRINKAGE RATE
# =============================================================================

@dataclass
class ShrinkageRate:
    """Decay of |E(theta_spurious | y)| along an increasing n grid."""
    family: PriorFamily
    n_grid: List[int]
    mean_abs: np.ndarray
    per_replicate: np.ndarray
    slope: float
    scale: str
    replicate_slopes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    censored: int = 0


def _rate_axis(n_grid: np.ndarray, scale: str) -> np.ndarray:
    return np.log(n_grid) if scale == "log_n" else np.sqrt(n_grid)


def _fit_slope(x: np.ndarray, y: np.ndarray) -> float:
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(x[ok], y[ok], 1)[0])


def spurious_bma_estimate(
    data: Dataset,
    spec: PriorSpec,
    index: int,
    seed: int,
    n_samples: int = REPORT_MARGINAL_SAMPLES,
    model_prior: str = "beta_binomial",
    rel_cutoff: float = 1e-12,
) -> float:
    """Exact-enumeration BMA estimate of one coefficient."""
    mp = enumerate_model_posterior(data, spec, SEARCH_MARGINAL_SAMPLES, seed, model_prior)
    weights = {m: w for m, w in mp.weights.items() if m >> index & 1}
    if not weights:
        return 0.0
    top = max(weights.values())
    # coordinate-only mixture: models without the coordinate contribute zero
    mp.weights = {m: w for m, w in weights.items() if w >= rel_cutoff * top}
    total = sum(mp.weights.values())
    estimate = exact_mixture_mean(mp, data, spec, n_samples, seed)
    return float(estimate.theta_hat[index] * total)


def empirical_shrinkage_rate(
    family: PriorFamily,
    n_grid: Sequence[int] = (100, 200, 400, 800),
    p_fixed: int = 10,
    replicates: int = 10,
    seed: int = 0,
    spurious_index: int = 0,
    n_samples: int = REPORT_MARGINAL_SAMPLES,
    n_jobs: int = 1,
) -> ShrinkageRate:
    """Slope of the spurious-coefficient BMA estimate against the sample size.

    pMOM and the Normal baseline are regressed as log|theta_hat| on log n;
    peMOM and piMOM as log|theta_hat| on sqrt(n). Each replicate is one growing
    sample: the dataset for n is the first n rows of the largest one. The
    aggregate slope is fitted to the replicate average of log|theta_hat|;
    estimates that underflow to zero are censored out of it.
    """
    family = PriorFamily(family)
    n_grid = sorted(int(n) for n in n_grid)
    if len(n_grid) < 4:
        raise ValueError("n_grid needs at least four sample sizes")
    base = SimConfig.sparse_design(p=p_fixed, seed=seed)
    if base.theta_star[spurious_index] != 0.0:
        raise ValueError(f"coefficient {spurious_index} is not spurious")
    spec = PriorSpec(family=family)
    scale = "log_n" if family in (PriorFamily.PMOM, PriorFamily.NORMAL) else "sqrt_n"

    full = base.model_copy(update={"n": n_grid[-1]})

    def one(rep: int, n: int) -> float:
        data = gen_equicorr_data(full, rep).subset_rows(np.arange(n))
        return abs(spurious_bma_estimate(data, spec, spurious_index, derive_seed(seed, rep, n), n_samples))

    cells = [(rep, n) for rep in range(replicates) for n in n_grid]
    values = Parallel(n_jobs=n_jobs)(delayed(one)(rep, n) for rep, n in cells)
    per_rep = np.asarray(values, dtype=float).reshape(replicates, len(n_grid))
    censored = int(np.sum(per_rep == 0.0))
    if censored:
        logger.warning("%s: %d shrinkage estimates below float resolution", family.value, censored)
    x = _rate_axis(np.asarray(n_grid, dtype=float), scale)
    with np.errstate(divide="ignore"):
        log_rep = np.where(per_rep > 0.0, np.log(per_rep), np.nan)
        mean_abs = per_rep.mean(axis=0)
    log_mean = np.array([np.mean(col[np.isfinite(col)]) if np.isfinite(col).any() else np.nan
                         for col in log_rep.T])
    return ShrinkageRate(
        family=family,
        n_grid=n_grid,
        mean_abs=mean_abs,
        per_replicate=per_rep,
        slope=_fit_slope(x, log_mean),
        scale=scale,
        replicate_slopes=np.array([_fit_slope(x, row) for row in log_rep]),
        censored=censored,
    )


# =============================================================================
# CROSS-VALIDATION
# =============================================================================

@dataclass
class CvResult:
    r2: float
    predictions: np.ndarray
    constant_predictions: bool = False


def loo_cv_r2(
    data: Dataset,
    method: MethodConfig,
    seed: int = 0,
    n_jobs: int = 1,
    support: Optional[Sequence[int]] = None,
) -> CvResult:
    """Leave-one-out squared correlation between predictions and observations.

    Every fold uses the full-sample centring, so the intercept of the
    prediction does not move against the held-out response.
    """
    n = data.n
    if n < 10:
        raise ValueError(f"leave-one-out needs n >= 10, got {n}")
    y_bar = float(data.y.mean())
    x_bar = data.X.mean(axis=0)
    centred = Dataset(data.y - y_bar, data.X - x_bar, list(data.names))

    def fold(i: int) -> float:
        train = np.delete(np.arange(n), i)
        fold_data = Dataset(centred.y[train], centred.X[train], list(data.names))
        theta = fit_method(fold_data, method, derive_seed(seed, i), support)
        return float(y_bar + centred.X[i] @ theta)

    predictions = np.asarray(Parallel(n_jobs=n_jobs)(delayed(fold)(i) for i in range(n)))
    r2 = pearson_r2(predictions, data.y)
    if r2 is None:
        logger.warning("leave-one-out predictions are constant; R^2 set to 0")
        return CvResult(0.0, predictions, constant_predictions=True)
    return CvResult(r2, predictions)


def default_output_prefix(directory: str, name: str) -> str:
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)
