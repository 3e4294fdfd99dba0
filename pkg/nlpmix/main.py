"""
Command-line entry point for nlpmix.

Subcommands:
    fit           model search + model averaging on a CSV (response first)
    simulate      equicorrelated simulation datasets as CSV
    benchmark     SSE study presets and the shrinkage-rate study
    prior-sample  draws from a prior family
    marglik       log marginal likelihood of one model

Exit codes: 0 ok, 2 malformed input, 3 configuration, 4 numerical failure.
"""

import argparse
import json
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from nlpmix import __version__, config
from nlpmix.exceptions import ConfigurationError, MalformedInputError, NlpmixError
from nlpmix.models import Dataset, ModelIndicator, PriorFamily, RunConfig, SimConfig, validation_cause
from nlpmix.services.bench import empirical_shrinkage_rate, gen_equicorr_data, preset_study, run_sim_study
from nlpmix.services.bma import bma_posterior_mean
from nlpmix.services.marglik import g_factor, log_marginal_nlp, log_marginal_normal_ig
from nlpmix.services.modelsearch import MarginalCache, ModelPosterior, gibbs_model_search, posterior_model_probs
from nlpmix.services.truncation import sample_nlp_prior_rejection, sample_pmom_prior
from nlpmix.utils.constants import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK
from nlpmix.utils.helpers import derive_seed, resolve_seed, standardize, unstandardize_coefficients

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 3) rather than argparse's exit 2."""

    def error(self, message: str):
        raise ConfigurationError(message)


# =============================================================================
# INPUT / OUTPUT
# =============================================================================

def read_regression_csv(path: str) -> Dataset:
    """Header row, response in the first column, predictors after it.

    Raises:
        MalformedInputError: unreadable file, ragged rows or non-numeric cells
            (line numbers count the header as line 1).
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as exc:
        raise MalformedInputError(f"no such file: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise MalformedInputError("empty CSV") from exc
    except pd.errors.ParserError as exc:
        raise MalformedInputError(f"malformed CSV: {exc}") from exc
    if frame.shape[1] < 1:
        raise MalformedInputError("CSV needs a response column")
    if len(frame) == 0:
        raise MalformedInputError("CSV has a header but no data rows")
    for row_index, row in enumerate(frame.itertuples(index=False)):
        for column, cell in zip(frame.columns, row):
            if not isinstance(cell, str) or cell.strip() == "":
                raise MalformedInputError(f"missing value in column '{column}'", line=row_index + 2)
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float))
    if bad.to_numpy().any():
        row_index, col_index = np.argwhere(bad.to_numpy())[0]
        cell = frame.iat[row_index, col_index]
        raise MalformedInputError(
            f"non-numeric value '{cell}' in column '{frame.columns[col_index]}'", line=int(row_index) + 2
        )
    array = values.to_numpy(dtype=float)
    return Dataset(array[:, 0], array[:, 1:], [str(c) for c in frame.columns[1:]])


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _finish(run: RunConfig, store_session=None) -> None:
    """Manifest next to the output, and in the run store when one is open."""
    manifest = run.manifest(__version__)
    if run.output_path:
        _emit(_dump(manifest), f"{run.output_path}.manifest.json")
    if store_session is not None:
        from nlpmix.repository import RunRepository
        RunRepository.record_run(store_session, manifest)


def _open_store(args: argparse.Namespace):
    url = getattr(args, "cache_db", None) or config.DATABASE_URL
    if not url:
        return None
    from nlpmix import database
    database.init_db(url)
    return database.get_db()


# =============================================================================
# CONFIGURATION
# =============================================================================

def _run_config(args: argparse.Namespace, subcommand: str, **extra: Any) -> RunConfig:
    fields = {
        "subcommand": subcommand,
        "input_path": getattr(args, "input", None),
        "output_path": args.output,
        "family": args.family,
        "tau": args.tau,
        "tau_n": args.tau_n,
        "a_phi": args.a_phi,
        "b_phi": args.b_phi,
        "iterations": args.iterations,
        "burn_in": args.burn_in,
        "seed": resolve_seed(args.seed),
        "threads": args.threads,
        "standardize": getattr(args, "standardize", True),
        "model_prior": args.model_prior.replace("-", "_"),
        "search_samples": args.search_samples,
        "report_samples": args.report_samples,
        "draws_per_model": args.draws_per_model,
        "top_k": getattr(args, "top_k", None),
        "extra": extra,
    }
    return RunConfig(**{k: v for k, v in fields.items() if v is not None})


def _parse_model(text: str, names: Sequence[str]) -> ModelIndicator:
    """Comma-separated 1-based indices or column names; empty is the null model."""
    p = len(names)
    indices = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        if token in names:
            indices.append(list(names).index(token))
        elif token.isdigit() and 1 <= int(token) <= p:
            indices.append(int(token) - 1)
        else:
            raise ConfigurationError(f"unknown variable '{token}'")
    return ModelIndicator.from_indices(indices, p)


# =============================================================================
# SUBCOMMANDS
# =============================================================================

def cmd_fit(args: argparse.Namespace) -> int:
    """Model search and model averaging; writes a JSON report."""
    run = _run_config(args, "fit", max_models=args.max_models)
    spec = run.prior_spec()
    raw = read_regression_csv(args.input)
    data = raw
    y_stats = x_stats = None
    if run.standardize:
        y_std, X_std, y_stats, x_stats = standardize(raw.y, raw.X)
        data = Dataset(y_std, X_std, raw.names)

    session = _open_store(args)
    try:
        store = None
        if session is not None:
            from nlpmix.repository import PersistentMarginalStore
            store = PersistentMarginalStore(session)
        cache = MarginalCache(data, spec, run.search_samples, run.seed, store)
        if data.p == 0:
            mp = ModelPosterior(p=0, n=data.n, n_iter=run.iterations, seed=run.seed, cache=cache)
            mp.counts[0] = run.iterations
        else:
            mp = gibbs_model_search(
                data, spec, n_iter=run.iterations, seed=run.seed, burn=run.burn_in,
                model_prior=run.model_prior, cache=cache,
            )
        estimate = bma_posterior_mean(
            mp, data, spec, run.draws_per_model, seed=derive_seed(run.seed, 1),
            max_models=args.max_models, n_jobs=run.threads,
        )

        top = []
        for model, prob in posterior_model_probs(mp, run.top_k):
            lm = log_marginal_nlp(data, model, spec, run.report_samples, derive_seed(run.seed, model.mask, 2))
            top.append({
                "model": model.key,
                "variables": [data.names[i] for i in model.indices],
                "probability": prob,
                "log_marginal": lm.value,
                "mc_se": lm.mc_se,
            })
        report: Dict[str, Any] = {
            "n": data.n,
            "p": data.p,
            "prior": spec.model_dump(mode="json"),
            "model_prior": run.model_prior,
            "seed": run.seed,
            "standardized": run.standardize,
            "top_models": top,
            "inclusion_probs": dict(zip(data.names, estimate.inclusion_probs)),
            "theta_hat": dict(zip(data.names, estimate.theta_hat)),
            "phi_hat": estimate.phi_hat,
            "mean_model_size": estimate.mean_model_size,
            "diagnostics": {
                "models_visited": mp.n_visited,
                "marginals_evaluated": len(cache),
                "quarantined": sorted(format(m, "x") for m in cache.failures),
                "visited_mass": estimate.visited_mass,
                "excluded_models": sorted(format(m, "x") for m in estimate.excluded),
                "renormalized": estimate.renormalized,
                "autocorrelations": {
                    format(m, "x"): acf for m, acf in sorted(estimate.autocorrelations.items())
                },
            },
        }
        if run.standardize:
            intercept, coefs = unstandardize_coefficients(estimate.theta_hat, y_stats, x_stats)
            report["original_scale"] = {
                "intercept": intercept,
                "theta_hat": dict(zip(data.names, coefs)),
                "y_mean": y_stats[0],
                "y_scale": y_stats[1],
                "x_means": dict(zip(data.names, x_stats[0])),
                "x_scales": dict(zip(data.names, x_stats[1])),
            }
        _emit(_dump(report), run.output_path)
        _finish(run, session)
    finally:
        if session is not None:
            session.close()
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    """Equicorrelated datasets, one CSV per replicate."""
    run = _run_config(args, "simulate", n=args.n, p=args.p, rho=args.rho,
                      phi_star=args.phi_star, replicates=args.replicates, theta=args.theta)
    if args.theta:
        theta = [float(v) for v in args.theta.split(",")]
        cfg = SimConfig(n=args.n, p=args.p, theta_star=theta, phi_star=args.phi_star,
                        rho=args.rho, replicates=args.replicates, seed=run.seed)
    else:
        cfg = SimConfig.sparse_design(p=args.p, n=args.n, phi_star=args.phi_star, rho=args.rho,
                                     replicates=args.replicates, seed=run.seed)
    if run.output_path is None and cfg.replicates > 1:
        raise ConfigurationError("--output is required for more than one replicate")
    for rep in range(cfg.replicates):
        data = gen_equicorr_data(cfg, rep)
        frame = pd.DataFrame(data.X, columns=data.names)
        frame.insert(0, "y", data.y)
        path = run.output_path
        if cfg.replicates > 1:
            stem, ext = os.path.splitext(run.output_path)
            path = f"{stem}_r{rep}{ext or '.csv'}"
        _emit(frame.to_csv(index=False, float_format="%.17g"), path)
    _finish(run)
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    """SSE presets or the shrinkage-rate study."""
    run = _run_config(args, "benchmark", preset=args.preset, replicates=args.replicates)
    if run.output_path is None:
        raise ConfigurationError("--output (file prefix) is required for benchmark")
    directory = os.path.dirname(run.output_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    if args.preset == "shrinkage":
        families = [PriorFamily.PMOM, PriorFamily.NORMAL, PriorFamily.PEMOM, PriorFamily.PIMOM]
        summary = {}
        for family in families:
            rate = empirical_shrinkage_rate(family, replicates=args.replicates or 10,
                                            seed=run.seed, n_jobs=run.threads)
            summary[family.value] = {
                "n_grid": rate.n_grid,
                "mean_abs": rate.mean_abs,
                "slope": rate.slope,
                "scale": rate.scale,
                "replicate_slopes": rate.replicate_slopes,
                "censored": rate.censored,
            }
        _emit(_dump(summary), f"{run.output_path}.json")
    else:
        configs, methods = preset_study(args.preset, run.seed)
        if args.replicates:
            configs = [c.model_copy(update={"replicates": args.replicates}) for c in configs]
        report = run_sim_study(configs, methods, n_jobs=run.threads)
        report.write(run.output_path)
    _finish(run)
    return EXIT_OK


def cmd_prior_sample(args: argparse.Namespace) -> int:
    """Prior draws as CSV, one column per coordinate."""
    run = _run_config(args, "prior-sample", n_draws=args.n_draws, p=args.p, phi=args.phi)
    spec = run.prior_spec()
    if spec.family is PriorFamily.PMOM:
        draws = sample_pmom_prior(args.p, spec.tau, args.n_draws, seed=run.seed, phi=args.phi)
    elif spec.family is PriorFamily.NORMAL:
        rng = np.random.default_rng(run.seed)
        draws = math.sqrt(spec.tau * args.phi) * rng.standard_normal((args.n_draws, args.p))
    else:
        draws = sample_nlp_prior_rejection(spec, args.phi, args.n_draws, run.seed, p=args.p).draws
    frame = pd.DataFrame(draws, columns=[f"theta{j + 1}" for j in range(args.p)])
    logger.info("P(|theta| < 0.2 sqrt(phi)) = %.4f", float(np.mean(np.abs(draws) < 0.2 * math.sqrt(args.phi))))
    _emit(frame.to_csv(index=False, float_format="%.17g"), run.output_path)
    _finish(run)
    return EXIT_OK


def cmd_marglik(args: argparse.Namespace) -> int:
    """Log marginal likelihood and g-factor of one model as JSON."""
    run = _run_config(args, "marglik", model=args.model, n_samples=args.n_samples)
    spec = run.prior_spec()
    data = read_regression_csv(args.input)
    if run.standardize:
        y_std, X_std, _, _ = standardize(data.y, data.X)
        data = Dataset(y_std, X_std, data.names)
    model = _parse_model(args.model, data.names)
    seed = derive_seed(run.seed, model.mask)
    local = log_marginal_normal_ig(data, model, spec.local_tau, spec.a_phi, spec.b_phi)
    g = g_factor(data, model, spec, args.n_samples, seed)
    total = log_marginal_nlp(data, model, spec, args.n_samples, seed)
    report = {
        "model": model.key,
        "variables": [data.names[i] for i in model.indices],
        "prior": spec.model_dump(mode="json"),
        "log_marginal": total.value,
        "mc_se": total.mc_se,
        "log_local_marginal": local.value,
        "log_g": g.value,
        "g_factor": math.exp(g.value) if g.value < 700 else math.inf,
        "n_samples": g.n_samples,
        "effective_sample_size": g.effective_sample_size,
        "low_ess": g.low_ess,
        "degenerate_weights": g.degenerate_weights,
        "seed": run.seed,
    }
    _emit(_dump(report), run.output_path)
    _finish(run)
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================

def _common_options() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    prior = common.add_argument_group("prior")
    prior.add_argument("--family", choices=[f.value for f in PriorFamily], default="pmom",
                       help="Coefficient prior family (default pmom).")
    prior.add_argument("--tau", type=float, default=None, help="Prior dispersion (family default if omitted).")
    prior.add_argument("--tau-n", type=float, default=None,
                       help="piMOM Normal-envelope dispersion, at most 2*tau (default 2*tau).")
    prior.add_argument("--a-phi", type=float, default=config.A_PHI, help="IG(a/2, b/2) shape input.")
    prior.add_argument("--b-phi", type=float, default=config.B_PHI, help="IG(a/2, b/2) scale input.")
    prior.add_argument("--model-prior", choices=["beta-binomial", "uniform"], default="beta-binomial")

    run = common.add_argument_group("run")
    run.add_argument("--iterations", type=int, default=config.ITERATIONS)
    run.add_argument("--burn-in", type=int, default=config.BURN_IN)
    run.add_argument("--seed", type=int, default=None, help="Generated and recorded when omitted.")
    run.add_argument("--threads", type=int, default=config.THREADS)
    run.add_argument("--search-samples", type=int, default=config.SEARCH_SAMPLES)
    run.add_argument("--report-samples", type=int, default=config.REPORT_SAMPLES)
    run.add_argument("--draws-per-model", type=int, default=config.DRAWS_PER_MODEL)
    run.add_argument("-o", "--output", default=None, help="Output path (stdout when omitted).")
    run.add_argument("--cache-db", default=None, help="SQLAlchemy URL of the marginal-likelihood store.")
    run.add_argument("-v", "--verbose", action="store_true")
    return common


def _standardize_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--standardize", dest="standardize", action="store_true", default=True,
                       help="Centre and scale y and X (default).")
    group.add_argument("--no-standardize", dest="standardize", action="store_false")


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = _Parser(prog="nlpmix", description="Non-local prior variable selection and model averaging.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    fit = sub.add_parser("fit", parents=[common], help="Model search and BMA on a CSV.")
    fit.add_argument("input", help="CSV with header; response first, predictors after.")
    fit.add_argument("--top-k", type=int, default=10)
    fit.add_argument("--max-models", type=int, default=config.MAX_MODELS)
    _standardize_flags(fit)
    fit.set_defaults(func=cmd_fit)

    sim = sub.add_parser("simulate", parents=[common], help="Equicorrelated simulation datasets.")
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--p", type=int, default=100)
    sim.add_argument("--rho", type=float, default=0.0)
    sim.add_argument("--phi-star", type=float, default=1.0)
    sim.add_argument("--replicates", type=int, default=1)
    sim.add_argument("--theta", default=None, help="Comma-separated true coefficients (length p).")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("benchmark", parents=[common], help="SSE and shrinkage-rate studies.")
    bench.add_argument("--preset", choices=["sim-small", "sim-desk", "shrinkage"], default="sim-small")
    bench.add_argument("--replicates", type=int, default=None)
    bench.set_defaults(func=cmd_benchmark)

    prior = sub.add_parser("prior-sample", parents=[common], help="Draws from a prior family.")
    prior.add_argument("-n", "--n-draws", type=int, default=10_000)
    prior.add_argument("--p", type=int, default=1)
    prior.add_argument("--phi", type=float, default=1.0)
    prior.set_defaults(func=cmd_prior_sample)

    ml = sub.add_parser("marglik", parents=[common], help="Log marginal likelihood of one model.")
    ml.add_argument("input", help="CSV with header; response first, predictors after.")
    ml.add_argument("--model", default="", help="Comma-separated 1-based indices or names; empty = null model.")
    ml.add_argument("--n-samples", type=int, default=config.REPORT_SAMPLES)
    _standardize_flags(ml)
    ml.set_defaults(func=cmd_marglik)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as exc:
        sys.stderr.write(f"nlpmix: error: {exc}\n")
        return EXIT_CONFIG
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else config.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except NlpmixError as exc:
        sys.stderr.write(f"nlpmix: error: {exc}\n")
        return exc.exit_code
    except ValidationError as exc:
        cause = validation_cause(exc)
        if cause is not None:
            sys.stderr.write(f"nlpmix: error: {cause}\n")
            return cause.exit_code
        sys.stderr.write(f"nlpmix: invalid configuration: {exc}\n")
        return EXIT_CONFIG
    except ValueError as exc:
        sys.stderr.write(f"nlpmix: error: {exc}\n")
        return EXIT_CONFIG
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"nlpmix: numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
