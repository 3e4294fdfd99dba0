"""
Multivariate Normal restricted to an outer rectangle.

The region is T = {theta : theta_i <= l_i or theta_i >= u_i for every i}.
Sampling works in the canonical frame Z = D^{-1} theta, D the lower
Cholesky factor of Sigma, where Z ~ N(D^{-1} mu, I). Each full conditional
of Z_i is a univariate Normal with a union of open intervals removed.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri, ndtri_exp

from nlpmix.exceptions import InfeasibleRegionError
from nlpmix.utils.constants import INFINITE_BOUND, MIN_KEPT_PROBABILITY
from nlpmix.utils.helpers import log1mexp

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DisjointIntervalUnion:
    """Sorted, strictly separated open intervals (a_j, b_j)."""
    intervals: Tuple[Tuple[float, float], ...] = ()

    @property
    def lefts(self) -> np.ndarray:
        return np.array([a for a, _ in self.intervals], dtype=float)

    @property
    def rights(self) -> np.ndarray:
        return np.array([b for _, b in self.intervals], dtype=float)

    def __len__(self) -> int:
        return len(self.intervals)

    def contains(self, x) -> np.ndarray:
        """Membership of x (scalar or array) in the union."""
        x = np.asarray(x, dtype=float)
        if not self.intervals:
            return np.zeros(x.shape, dtype=bool)
        lefts, rights = self.lefts, self.rights
        j = np.searchsorted(lefts, x, side="left") - 1
        inside = (j >= 0) & (x < rights[np.clip(j, 0, None)])
        return inside


def merge_intervals(intervals: Iterable[Tuple[float, float]]) -> DisjointIntervalUnion:
    """Minimal disjoint union of open intervals.

    Input may be unsorted and overlapping. Empty intervals (a >= b) are
    dropped; intervals sharing an endpoint are merged.
    """
    items = sorted((float(a), float(b)) for a, b in intervals if a < b)
    merged = []
    for a, b in items:
        if merged and a <= merged[-1][1]:
            if b > merged[-1][1]:
                merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return DisjointIntervalUnion(tuple(merged))


@dataclass
class OuterRectangle:
    """Exclusion interval (l_i, u_i) per coordinate; l_i = u_i means no exclusion."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(self.lower > self.upper):
            raise ValueError("outer rectangle requires lower <= upper")

    @classmethod
    def symmetric(cls, thresholds: Sequence[float]) -> "OuterRectangle":
        t = np.abs(np.asarray(thresholds, dtype=float))
        return cls(-t, t)

    @property
    def active(self) -> np.ndarray:
        return self.lower < self.upper

    def contains(self, theta: np.ndarray) -> np.ndarray:
        """True for each row of theta lying in the region."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        outside = (theta <= self.lower) | (theta >= self.upper) | ~self.active
        return np.all(outside, axis=1)


@dataclass
class TmvnChain:
    draws: np.ndarray
    fallback_events: int = 0
    burn_in: int = 0
    seed: Optional[int] = None


# Univariate pieces --------------------------------------------------------------

def _log_upper(x: float) -> float:
    return float(log_ndtr(-x))


def _log_mass(lo: float, hi: float) -> float:
    """log P(lo < Z < hi) for standard Normal Z."""
    if not lo < hi:
        return -math.inf
    if lo >= 0.0:
        a = _log_upper(lo)
        if a == -math.inf:
            return a
        return a + float(log1mexp(_log_upper(hi) - a))
    if hi <= 0.0:
        b = float(log_ndtr(hi))
        if b == -math.inf:
            return b
        return b + float(log1mexp(float(log_ndtr(lo)) - b))
    return math.log1p(-(float(ndtr(lo)) + float(ndtr(-hi))))


def _draw_in_piece(lo: float, hi: float, u: float) -> float:
    """Inverse-cdf draw of a standard Normal restricted to (lo, hi)."""
    if lo >= 0.0:
        a = _log_upper(lo)
        delta = _log_upper(hi) - a
        target = a + math.log1p(-u * float(-np.expm1(delta)))
        z = -float(ndtri_exp(target))
    elif hi <= 0.0:
        b = float(log_ndtr(hi))
        delta = float(log_ndtr(lo)) - b
        e = math.exp(delta)
        target = b + math.log(e + u * (1.0 - e))
        z = float(ndtri_exp(target))
    else:
        flo, fhi = float(ndtr(lo)), float(ndtr(hi))
        z = float(ndtri(flo + u * (fhi - flo)))
    return min(max(z, lo), hi)


def sample_normal_tail(a: np.ndarray, u: np.ndarray) -> np.ndarray:
    """z >= a >= 0 with P(Z > z) = u * P(Z > a), vectorised."""
    a = np.asarray(a, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore"):
        z = -ndtri_exp(log_ndtr(-a) + np.log(u))
    return np.maximum(z, a)


def _open_unit(rng: np.random.Generator) -> float:
    u = rng.random()
    return u if u > 0.0 else 5e-324


def _standard_draw(excluded: DisjointIntervalUnion, rng: np.random.Generator) -> float:
    edges = [-math.inf]
    for a, b in excluded.intervals:
        edges.extend((a, b))
    edges.append(math.inf)
    pieces = [(edges[k], edges[k + 1]) for k in range(0, len(edges), 2)]
    log_masses = np.array([_log_mass(lo, hi) for lo, hi in pieces])
    total = float(logsumexp(log_masses)) if np.isfinite(log_masses).any() else -math.inf
    if total < math.log(MIN_KEPT_PROBABILITY):
        raise InfeasibleRegionError(
            f"kept probability {math.exp(total):.3g} below {MIN_KEPT_PROBABILITY:g}"
        )
    if len(pieces) == 1:
        k = 0
    else:
        cumulative = np.cumsum(np.exp(log_masses - total))
        k = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        k = min(k, len(pieces) - 1)
        while not np.isfinite(log_masses[k]):
            k -= 1
    lo, hi = pieces[k]
    return _draw_in_piece(lo, hi, _open_unit(rng))


def sample_truncated_univariate_normal(
    mean: float,
    sd: float,
    exclusion: DisjointIntervalUnion,
    rng: np.random.Generator,
) -> float:
    """Exact draw from N(mean, sd^2) outside the excluded union.

    Raises:
        InfeasibleRegionError: kept probability below 1e-12.
    """
    if not sd > 0:
        raise ValueError(f"sd must be positive, got {sd}")
    scaled = DisjointIntervalUnion(
        tuple(((a - mean) / sd, (b - mean) / sd) for a, b in exclusion.intervals)
    )
    return mean + sd * _standard_draw(scaled, rng)


def _nearest_boundary(excluded: DisjointIntervalUnion) -> float:
    """Kept-region point closest to 0, nudged off the excluded interval."""
    best, best_dist = 0.0, math.inf
    for a, b in excluded.intervals:
        for edge, outward in ((a, -1.0), (b, 1.0)):
            if math.isfinite(edge) and abs(edge) < best_dist:
                best, best_dist = edge + outward * 1e-12 * (1.0 + abs(edge)), abs(edge)
    if not math.isfinite(best_dist):
        raise InfeasibleRegionError("conditional excludes the whole real line")
    return best


# Gibbs sweep --------------------------------------------------------------------

def outer_gibbs_sweep(
    theta: np.ndarray,
    mu: np.ndarray,
    chol_lower: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, int]:
    """One systematic scan over Z = D^{-1} theta.

    theta must already lie in the region. Returns the updated theta and the
    number of coordinates that fell back to a boundary atom.
    """
    D = chol_lower
    p = theta.shape[0]
    z = linalg.solve_triangular(D, theta, lower=True)
    alpha = linalg.solve_triangular(D, mu, lower=True)
    active = lower < upper
    theta = theta.copy()
    fallbacks = 0
    for i in range(p):
        col = D[:, i]
        rows = np.flatnonzero(active & (col != 0.0))
        zi = z[i]
        if rows.size == 0:
            new = alpha[i] + rng.standard_normal()
        else:
            d = col[rows]
            rest = theta[rows] - d * zi
            with np.errstate(over="ignore"):
                e1 = (lower[rows] - rest) / d
                e2 = (upper[rows] - rest) / d
            excluded = merge_intervals(zip(np.minimum(e1, e2) - alpha[i], np.maximum(e1, e2) - alpha[i]))
            try:
                new = alpha[i] + _standard_draw(excluded, rng)
            except InfeasibleRegionError:
                new = alpha[i] + _nearest_boundary(excluded)
                fallbacks += 1
        theta += col * (new - zi)
        z[i] = new
    return theta, fallbacks


def feasible_start(mu: np.ndarray, region: OuterRectangle) -> np.ndarray:
    """mu with every coordinate inside its exclusion pushed just past the nearer endpoint."""
    theta = np.asarray(mu, dtype=float).copy()
    lo, hi = region.lower, region.upper
    for i in np.flatnonzero(region.active):
        if lo[i] < theta[i] < hi[i]:
            left_ok = lo[i] > -INFINITE_BOUND
            right_ok = hi[i] < INFINITE_BOUND
            if not (left_ok or right_ok):
                raise InfeasibleRegionError(f"coordinate {i} is excluded everywhere")
            go_left = left_ok and (not right_ok or theta[i] - lo[i] < hi[i] - theta[i])
            if go_left:
                theta[i] = lo[i] - 1e-8 * (1.0 + abs(lo[i]))
            else:
                theta[i] = hi[i] + 1e-8 * (1.0 + abs(hi[i]))
    return theta


def gibbs_tmvn_outer(
    mu: np.ndarray,
    Sigma: np.ndarray,
    region: OuterRectangle,
    n_draws: int,
    burn: int = 0,
    seed: Optional[int] = None,
    init: Optional[np.ndarray] = None,
) -> TmvnChain:
    """Gibbs chain targeting N(mu, Sigma) restricted to the outer region.

    Raises:
        numpy.linalg.LinAlgError: Sigma is not positive definite.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (mu.size, mu.size) or region.lower.size != mu.size:
        raise ValueError("mu, Sigma and region dimensions disagree")
    D = np.linalg.cholesky(Sigma)
    rng = np.random.default_rng(seed)
    theta = feasible_start(mu, region) if init is None else np.asarray(init, dtype=float).copy()
    if not region.contains(theta)[0]:
        raise ValueError("initial point is outside the region")

    draws = np.empty((n_draws, mu.size))
    fallbacks = 0
    for it in range(burn + n_draws):
        theta, nf = outer_gibbs_sweep(theta, mu, D, region.lower, region.upper, rng)
        fallbacks += nf
        if it >= burn:
            draws[it - burn] = theta
    if fallbacks:
        logger.warning("%d boundary-atom fallbacks in %d sweeps", fallbacks, burn + n_draws)
    return TmvnChain(draws=draws, fallback_events=fallbacks, burn_in=burn, seed=seed)
