"""
Statistical helpers shared by the samplers, the simulator and the scans:
counter-based random streams, Wilson intervals, effective sample size,
self-normalized moments and the small-gamma Richardson fit.
"""
import math
from typing import NamedTuple, Sequence, Tuple

import numpy as np
from scipy import stats

from wflab.core.exceptions import InvalidStateError

BLOCK_SIZE = 1024
Z_TWO_SIDED = float(stats.norm.ppf(0.975))
Z_ONE_SIDED = float(stats.norm.ppf(0.95))

_U64 = (1 << 64) - 1


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Independent generator for block `block` of the stream keyed by `seed`.

    Philox is counter based, so block b's draws depend only on (seed, b) and not
    on which worker thread produces them.
    """
    bit_gen = np.random.Philox(key=int(seed) & _U64, counter=int(block) << 128)
    return np.random.Generator(bit_gen)


def blocks(count: int, block_size: int = BLOCK_SIZE) -> list:
    """[(block index, start, stop)] covering range(count)"""
    return [(b, start, min(start + block_size, count))
            for b, start in enumerate(range(0, count, block_size))]


class WilsonInterval(NamedTuple):
    estimate: float
    lower: float
    upper: float
    zero_hits: bool


def wilson_interval(successes: float, total: float, z: float = Z_TWO_SIDED) -> WilsonInterval:
    """Wilson score interval for a binomial proportion.

    With zero successes the upper end is the one-sided 95% Wilson bound and the
    row is flagged.
    """
    if total <= 0:
        raise InvalidStateError(f"wilson_interval needs total >= 1, got {total}")
    if successes == 0:
        z1 = Z_ONE_SIDED
        return WilsonInterval(0.0, 0.0, z1 * z1 / (total + z1 * z1), True)
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    margin = z * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total)) / denom
    return WilsonInterval(p, max(0.0, center - margin), min(1.0, center + margin), False)


def gamma_log(gamma: float, probability: float) -> float:
    """gamma * log(probability) with log 0 = -inf"""
    if probability <= 0.0:
        return -math.inf
    return gamma * math.log(probability)


def effective_sample_size(weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2"""
    w = np.asarray(weights, dtype=float)
    return float(w.sum() ** 2 / np.sum(w * w))


def normalized_log_weights(log_weights: np.ndarray) -> np.ndarray:
    """exp(l - max l), floored at the smallest positive double"""
    lw = np.asarray(log_weights, dtype=float)
    return np.maximum(np.exp(lw - lw.max()), np.finfo(float).tiny)


def weighted_mean(values: np.ndarray, weights: np.ndarray) -> Tuple[float, float]:
    """Self-normalized mean of `values` and its delta-method standard error"""
    g = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    mean = float(w @ g / total)
    stderr = float(math.sqrt(np.sum(w * w * (g - mean) ** 2)) / total)
    return mean, stderr


def mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    g = np.asarray(values, dtype=float)
    return float(g.mean()), float(g.std(ddof=1) / math.sqrt(g.size))


def ks_uniform(samples: np.ndarray) -> Tuple[float, float]:
    """Kolmogorov-Smirnov statistic and p-value against U(0, 1)"""
    res = stats.kstest(np.asarray(samples, dtype=float), "uniform")
    return float(res.statistic), float(res.pvalue)


def ks_critical_value(count: int, alpha: float = 1e-3) -> float:
    """Asymptotic one-sample KS critical value at level alpha"""
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(count)


class RichardsonFit(NamedTuple):
    limit: float
    log_coefficient: float
    linear_coefficient: float


def richardson_extrapolate(gammas: Sequence[float], values: Sequence[float]) -> RichardsonFit:
    """Least-squares fit of values ~ a + b gamma log(1/gamma) + c gamma; `limit` is a"""
    g = np.asarray(gammas, dtype=float)
    y = np.asarray(values, dtype=float)
    if g.size < 3:
        raise InvalidStateError(f"richardson_extrapolate needs >= 3 points, got {g.size}")
    if not np.all(np.isfinite(y)):
        raise InvalidStateError("richardson_extrapolate needs finite values")
    design = np.column_stack([np.ones_like(g), g * np.log(1.0 / g), g])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return RichardsonFit(float(coef[0]), float(coef[1]), float(coef[2]))
