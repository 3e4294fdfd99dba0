"""
Helper functions for nlpmix.
Seeds, chain diagnostics, standardisation and model keys.
"""

from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from nlpmix.utils.constants import N_BATCHES


def resolve_seed(seed: Optional[int]) -> int:
    """Return the seed unchanged, or draw fresh OS entropy when None."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().entropy % (2**63))


def derive_seed(base: int, *keys: int) -> int:
    """Deterministic child seed for (base, keys...), independent of call order."""
    words: List[int] = [int(base) % (2**63)]
    for key in keys:
        key = int(key)
        # split arbitrarily wide integers (model bitmasks) into 32-bit words
        if key == 0:
            words.append(0)
        while key > 0:
            words.append(key & 0xFFFFFFFF)
            key >>= 32
        words.append(0xFFFFFFFF)
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


def autocorrelation(chain: np.ndarray, lag: int = 1) -> np.ndarray:
    """Lag-k autocorrelation of each column of a (draws x dims) chain."""
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n <= lag + 1:
        return np.full(x.shape[1], np.nan)
    centred = x - x.mean(axis=0)
    gamma0 = np.sum(centred * centred, axis=0)
    gammak = np.sum(centred[lag:] * centred[: n - lag], axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(gamma0 > 0, gammak / gamma0, 0.0)


def batch_means_se(chain: np.ndarray, n_batches: int = N_BATCHES) -> np.ndarray:
    """Monte Carlo standard error of column means by non-overlapping batch means."""
    x = np.asarray(chain, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    n = x.shape[0]
    n_batches = max(2, min(n_batches, n // 2))
    size = n // n_batches
    trimmed = x[: size * n_batches].reshape(n_batches, size, -1)
    means = trimmed.mean(axis=1)
    se = means.std(axis=0, ddof=1) / np.sqrt(n_batches)
    return se[0] if squeeze else se


def effective_sample_size(log_weights: np.ndarray) -> Tuple[float, float]:
    """Kish effective sample size and the largest normalised weight."""
    lw = np.asarray(log_weights, dtype=float)
    finite = np.isfinite(lw)
    if not finite.any():
        return 0.0, 1.0
    w = np.exp(lw[finite] - lw[finite].max())
    w /= w.sum()
    return float(1.0 / np.sum(w * w)), float(w.max())


def log1mexp(x: np.ndarray) -> np.ndarray:
    """log(1 - exp(x)) for x <= 0, accurate near both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(
            x > -0.6931471805599453,
            np.log(-np.expm1(x)),
            np.log1p(-np.exp(x)),
        )


def standardize(
    y: np.ndarray, X: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, Tuple[float, float], Tuple[np.ndarray, np.ndarray]]:
    """Centre and scale y and the columns of X to zero mean, unit variance.

    Returns:
        (y_std, X_std, (y_mean, y_scale), (x_means, x_scales))
    """
    y_mean, y_scale = float(np.mean(y)), float(np.std(y))
    x_means = X.mean(axis=0) if X.shape[1] else np.zeros(0)
    x_scales = X.std(axis=0) if X.shape[1] else np.zeros(0)
    if y_scale == 0.0:
        y_scale = 1.0
    y_std = (y - y_mean) / y_scale
    X_std = (X - x_means) / np.where(x_scales > 0, x_scales, 1.0)
    return y_std, X_std, (y_mean, y_scale), (x_means, x_scales)


def unstandardize_coefficients(
    theta: np.ndarray,
    y_stats: Tuple[float, float],
    x_stats: Tuple[np.ndarray, np.ndarray],
) -> Tuple[float, np.ndarray]:
    """Map standardised coefficients back to the original scale.

    Returns:
        (intercept, coefficients)
    """
    y_mean, y_scale = y_stats
    x_means, x_scales = x_stats
    x_scales = np.where(np.asarray(x_scales, dtype=float) > 0, x_scales, 1.0)
    coefficients = np.asarray(theta, dtype=float) * y_scale / x_scales
    intercept = y_mean - float(np.dot(coefficients, x_means))
    return intercept, coefficients


def mask_from_indices(indices: Iterable[int]) -> int:
    """Bitmask with bit i set for every index i."""
    mask = 0
    for i in indices:
        mask |= 1 << int(i)
    return mask


def indices_from_mask(mask: int) -> Tuple[int, ...]:
    """Sorted indices of the set bits of a bitmask."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def pearson_r2(a: Sequence[float], b: Sequence[float]) -> Optional[float]:
    """Squared Pearson correlation, None when either vector is constant."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        return None
    r = np.corrcoef(a, b)[0, 1]
    return float(r * r)
