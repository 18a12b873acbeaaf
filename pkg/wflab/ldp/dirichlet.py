"""
Wright's Dirichlet equilibrium and its selection-tilted version: sampling,
exact low-dimensional quadrature, and gamma-sweep LDP scans.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from wflab.core.exceptions import InvalidStateError, UnsupportedDimensionError
from wflab.ldp import stats
from wflab.ldp.simplex import (
    FitnessMatrix,
    ModelParams,
    SimplexPoint,
    _check_dims,
    compute_C,
    selection_landscape,
)

logger = logging.getLogger(__name__)

ESS_WARNING_FRACTION = 0.01
EXACT_MAX_DIM = 3


@dataclass(frozen=True, eq=False)
class EventBox:
    """Coordinate box prod_i [lower_i, upper_i] intersected with the simplex"""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise InvalidStateError(f"EventBox bounds must be vectors of equal length, got {lo.shape} and {hi.shape}")
        if lo.size < 2:
            raise InvalidStateError("EventBox needs n >= 2")
        if np.any(lo < 0.0) or np.any(hi > 1.0):
            raise InvalidStateError("EventBox bounds must lie in [0, 1]")
        if np.any(lo > hi):
            raise InvalidStateError("EventBox needs lower <= upper in every coordinate")
        if lo.sum() > 1.0 + 1e-12 or hi.sum() < 1.0 - 1e-12:
            raise InvalidStateError("EventBox does not intersect the simplex")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def whole(cls, n: int) -> "EventBox":
        return cls(np.zeros(n), np.ones(n))

    @property
    def n(self) -> int:
        return self.lower.size

    def contains(self, X: np.ndarray) -> np.ndarray:
        """Closed-box membership of points X (..., n)"""
        return np.all((X >= self.lower) & (X <= self.upper), axis=-1)

    def contains_open(self, X: np.ndarray) -> np.ndarray:
        return np.all((X > self.lower) & (X < self.upper), axis=-1)

    def covers_simplex(self) -> bool:
        return bool(np.all(self.lower <= 0.0) and np.all(self.upper >= 1.0))

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Draws stored row-wise in `points` (count, n) with positive importance weights"""

    points: np.ndarray
    weights: np.ndarray
    seed: int
    params: ModelParams
    warnings: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise InvalidStateError("SampleBatch needs at least one point")
        if self.weights.shape != (self.points.shape[0],):
            raise InvalidStateError("SampleBatch points and weights differ in length")
        if not np.all(np.isfinite(self.weights) & (self.weights > 0.0)):
            raise InvalidStateError("SampleBatch weights must be positive and finite")

    def __len__(self) -> int:
        return self.points.shape[0]

    def point(self, i: int) -> SimplexPoint:
        return SimplexPoint(self.points[i])

    @property
    def ess(self) -> float:
        return stats.effective_sample_size(self.weights)

    def mean(self, statistic: Callable[[np.ndarray], np.ndarray]) -> Tuple[float, float]:
        """Self-normalized mean and standard error of a scalar statistic, points (count, n) -> (count,)"""
        return stats.weighted_mean(statistic(self.points), self.weights)

    def event_frequency(self, box: EventBox) -> float:
        hits = box.contains(self.points)
        return float(self.weights[hits].sum() / self.weights.sum())


def _map(pool, fn, items: Iterable):
    return list(pool.map(fn, items)) if pool is not None else [fn(item) for item in items]


def _sample_block(shapes: np.ndarray, seed: int, block: int, size: int) -> np.ndarray:
    """Normalized Gamma draws for one block, in log space so tiny shapes cannot underflow"""
    rng = stats.block_rng(seed, block)
    small = shapes < 1.0
    boosted = np.where(small, shapes + 1.0, shapes)
    log_g = np.log(rng.standard_gamma(boosted, size=(size, shapes.size)))
    if small.any():
        u = rng.random(size=(size, shapes.size))
        log_g = log_g + np.where(small, np.log(u) / shapes, 0.0)
    return special.softmax(log_g, axis=1)


def dirichlet_sample(params: ModelParams, count: int, seed: int, pool=None) -> SampleBatch:
    """`count` draws from Dirichlet(theta p / gamma); coordinates off the support of p are exactly 0"""
    if count < 1:
        raise InvalidStateError(f"count must be >= 1, got {count}")
    support = params.support
    shapes = params.dirichlet_shapes[support]
    points = np.zeros((count, params.n))
    if shapes.size == 1:
        points[:, support] = 1.0
    else:
        def run(item):
            b, start, stop = item
            return start, stop, _sample_block(shapes, seed, b, stop - start)

        for start, stop, block in _map(pool, run, stats.blocks(count)):
            points[start:stop][:, support] = block
    points.setflags(write=False)
    return SampleBatch(points, np.ones(count), seed, params)


def dirichlet_log_density(params: ModelParams, x: SimplexPoint) -> float:
    """Log Dirichlet density w.r.t. Lebesgue measure on the first n-1 coordinates"""
    _check_dims(params.n, x.n)
    if not params.p.is_interior():
        raise InvalidStateError(
            "dirichlet_log_density needs p > 0 in every coordinate; "
            "sample degenerate p with dirichlet_sample, which restricts to the support"
        )
    a = params.dirichlet_shapes
    log_norm = special.gammaln(a.sum()) - special.gammaln(a).sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = special.xlogy(a - 1.0, x.weights)
    if np.any(terms == -np.inf):
        return -math.inf
    return float(log_norm + terms.sum())


# -- exact quadrature ----------------------------------------------------------

def _log_quad_1d(log_f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float) -> float:
    """log int_lo^hi exp(log_f), scaled by the grid maximum of log_f"""
    if hi <= lo:
        return -math.inf
    grid = np.linspace(lo, hi, 513)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = log_f(grid)
    finite = np.isfinite(values)
    if not finite.any():
        return -math.inf
    k = int(np.argmax(np.where(finite, values, -np.inf)))
    scale = float(values[k])

    def integrand(t):
        with np.errstate(divide="ignore", invalid="ignore"):
            v = float(log_f(np.array([t]))[0]) - scale
        return math.exp(v) if v > -745.0 else 0.0

    inner = [grid[k]] if lo < grid[k] < hi else None
    total, _ = integrate.quad(integrand, lo, hi, points=inner, epsabs=0.0, epsrel=1e-12, limit=500)
    return scale + math.log(total) if total > 0.0 else -math.inf


def _beta_log_mass(alpha: Tuple[float, float], tilt: Callable[[np.ndarray], np.ndarray],
                   lo: float, hi: float) -> float:
    """log int_lo^hi x^(a1-1) (1-x)^(a2-1) e^tilt(x) dx, with x = u^(1/a) at singular endpoints"""
    a1, a2 = alpha

    def density(x):
        return special.xlogy(a1 - 1.0, x) + special.xlogy(a2 - 1.0, 1.0 - x) + tilt(x)

    pieces = []
    mid = min(max(0.5, lo), hi)
    left, right = (lo, mid), (mid, hi)

    if left[1] > left[0]:
        if a1 < 1.0 and left[0] == 0.0:
            def g_left(u):
                x = u ** (1.0 / a1)
                return -math.log(a1) + special.xlogy(a2 - 1.0, 1.0 - x) + tilt(x)
            pieces.append(_log_quad_1d(g_left, 0.0, left[1] ** a1))
        else:
            pieces.append(_log_quad_1d(density, *left))
    if right[1] > right[0]:
        if a2 < 1.0 and right[1] == 1.0:
            def g_right(w):
                x = 1.0 - w ** (1.0 / a2)
                return -math.log(a2) + special.xlogy(a1 - 1.0, x) + tilt(x)
            pieces.append(_log_quad_1d(g_right, 0.0, (1.0 - right[0]) ** a2))
        else:
            pieces.append(_log_quad_1d(density, *right))
    return float(special.logsumexp(pieces)) if pieces else -math.inf


def _triangle_log_mass(alpha: np.ndarray, tilt: Callable[[np.ndarray], np.ndarray],
                       lower: np.ndarray, upper: np.ndarray) -> float:
    """log of the 2-D integral of the unnormalized 3-type density over a box"""
    a = alpha
    x1_lo = max(lower[0], 1.0 - upper[1] - upper[2], 0.0)
    x1_hi = min(upper[0], 1.0 - lower[1] - lower[2], 1.0)
    if x1_hi <= x1_lo:
        return -math.inf

    def x2_range(x1):
        return max(lower[1], 1.0 - x1 - upper[2], 0.0), min(upper[1], 1.0 - x1 - lower[2])

    def log_f(X):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sum(special.xlogy(a - 1.0, X), axis=-1) + tilt(X)

    grid1 = np.linspace(x1_lo, x1_hi, 257)
    scale = -math.inf
    for x1 in grid1:
        lo2, hi2 = x2_range(x1)
        if hi2 < lo2:
            continue
        x2 = np.linspace(lo2, hi2, 257)
        X = np.stack([np.full_like(x2, x1), x2, np.clip(1.0 - x1 - x2, 0.0, 1.0)], axis=-1)
        values = log_f(X)
        values = values[np.isfinite(values)]
        if values.size:
            scale = max(scale, float(values.max()))
    if not math.isfinite(scale):
        return -math.inf

    def integrand(x2, x1):
        X = np.array([[x1, x2, max(1.0 - x1 - x2, 0.0)]])
        v = float(log_f(X)[0]) - scale
        return math.exp(v) if v > -745.0 else 0.0

    total, _ = integrate.dblquad(integrand, x1_lo, x1_hi,
                                 lambda x1: x2_range(x1)[0], lambda x1: max(*x2_range(x1)),
                                 epsabs=1e-13, epsrel=1e-10)
    return scale + math.log(total) if total > 0.0 else -math.inf


def exact_event_log_prob(params: ModelParams, box: EventBox, V: Optional[FitnessMatrix] = None) -> float:
    """log of the (optionally tilted) equilibrium probability of `box` by quadrature, n <= 3"""
    _check_dims(params.n, box.n, "event box")
    if V is not None:
        _check_dims(params.n, V.n, "fitness matrix")
    if params.n > EXACT_MAX_DIM:
        raise UnsupportedDimensionError(f"exact event probabilities cover n <= {EXACT_MAX_DIM}, got n={params.n}")

    support = params.support
    if np.any(box.lower[~support] > 0.0):
        return -math.inf
    lower, upper = box.lower[support], box.upper[support]
    if np.all(lower <= 0.0) and np.all(upper >= 1.0):
        return 0.0
    alpha = params.dirichlet_shapes[support]
    r = alpha.size
    if r == 1:
        return 0.0 if lower[0] <= 1.0 <= upper[0] else -math.inf

    if V is None:
        V_s = None
    else:
        V_s = V.entries[np.ix_(support, support)]
    gamma = params.gamma

    if r == 2:
        lo = max(lower[0], 1.0 - upper[1], 0.0)
        hi = min(upper[0], 1.0 - lower[1], 1.0)
        if hi <= lo:
            return -math.inf
        if V_s is None:
            a1, a2 = alpha
            mean = a1 / (a1 + a2)
            if lo >= mean:
                prob = special.betainc(a2, a1, 1.0 - lo) - special.betainc(a2, a1, 1.0 - hi)
            else:
                prob = special.betainc(a1, a2, hi) - special.betainc(a1, a2, lo)
            if prob > 1e-280:
                return math.log(min(prob, 1.0))
            log_z = special.gammaln(a1) + special.gammaln(a2) - special.gammaln(a1 + a2)
            return _beta_log_mass((a1, a2), lambda x: 0.0 * x, lo, hi) - log_z

        def tilt(x):
            x = np.asarray(x, dtype=float)
            return (V_s[0, 0] * x * x + 2.0 * V_s[0, 1] * x * (1.0 - x) + V_s[1, 1] * (1.0 - x) ** 2) / gamma

        return (_beta_log_mass(tuple(alpha), tilt, lo, hi)
                - _beta_log_mass(tuple(alpha), tilt, 0.0, 1.0))

    if V_s is None:
        def tilt3(X):
            return np.zeros(np.shape(X)[:-1])
        log_z = float(special.gammaln(alpha).sum() - special.gammaln(alpha.sum()))
    else:
        def tilt3(X):
            return np.einsum("...i,ij,...j->...", X, V_s, X) / gamma
        log_z = _triangle_log_mass(alpha, tilt3, np.zeros(3), np.ones(3))
    return _triangle_log_mass(alpha, tilt3, lower, upper) - log_z


def exact_event_prob(params: ModelParams, box: EventBox, V: Optional[FitnessMatrix] = None) -> float:
    """Equilibrium probability of `box`, tilted by exp(V(x)/gamma) when V is given"""
    return float(min(1.0, math.exp(exact_event_log_prob(params, box, V))))


def tilted_sample(params: ModelParams, V: FitnessMatrix, count: int, seed: int, pool=None) -> SampleBatch:
    """Dirichlet proposals weighted by exp(V(x)/gamma), self-normalized"""
    _check_dims(params.n, V.n)
    if not params.p.is_interior():
        raise InvalidStateError("tilted_sample needs p > 0 in every coordinate")
    proposals = dirichlet_sample(params, count, seed, pool)
    X = proposals.points
    log_w = np.einsum("ki,ij,kj->k", X, V.entries, X) / params.gamma
    weights = stats.normalized_log_weights(log_w)
    batch = SampleBatch(X, weights, seed, params)
    ess = batch.ess
    if ess < ESS_WARNING_FRACTION * count:
        message = f"weight degeneracy: ESS={ess:.1f} of {count} draws"
        logger.warning(message)
        batch.warnings.append(message)
    return batch


# -- scans -----------------------------------------------------------------------

@dataclass
class ScanRow:
    gamma: float
    gamma_log_prob: float
    probability: float
    ci_lower: float
    ci_upper: float
    mode: str
    samples: int = 0
    hits: float = 0.0
    zero_hits: bool = False

    def to_row(self) -> dict:
        return {
            "gamma": self.gamma,
            "gamma_log_prob": self.gamma_log_prob,
            "probability": self.probability,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
            "mode": self.mode,
            "samples": self.samples,
            "hits": self.hits,
            "zero_hits": int(self.zero_hits),
        }


def box_rate_infimum(params: ModelParams, box: EventBox, V: Optional[FitnessMatrix] = None,
                     constant: Optional[float] = None, resolution: Optional[float] = None) -> Tuple[float, float]:
    """Grid infimum of the equilibrium rate over the closed box and over its interior.

    The rate is theta H(p|x), or C - V(x) + theta H(p|x) with selection; `constant`
    is C and is computed when omitted.
    """
    _check_dims(params.n, box.n, "event box")
    n = params.n
    if n > EXACT_MAX_DIM:
        raise UnsupportedDimensionError(f"box infima cover n <= {EXACT_MAX_DIM}, got n={n}")
    fitness = V if V is not None else FitnessMatrix.zeros(n)
    if V is not None and constant is None:
        constant = compute_C(params, V).value
    offset = constant if V is not None else 0.0

    if n == 2:
        h = resolution or 1e-6
        lo = max(box.lower[0], 1.0 - box.upper[1])
        hi = min(box.upper[0], 1.0 - box.lower[1])
        count = min(int(math.ceil((hi - lo) / h)) + 1, 2_000_001)
        x1 = np.linspace(lo, hi, max(count, 2))
        X = np.stack([x1, 1.0 - x1], axis=-1)
    else:
        h = resolution or 1e-3
        axis = np.linspace(0.0, 1.0, int(round(1.0 / h)) + 1)
        a, b = np.meshgrid(axis, axis, indexing="ij")
        a, b = a.ravel(), b.ravel()
        keep = a + b <= 1.0 + 1e-12
        X = np.stack([a[keep], b[keep], np.clip(1.0 - a[keep] - b[keep], 0.0, 1.0)], axis=-1)
    rates = offset - selection_landscape(params, fitness, X)
    closed = rates[box.contains(X)]
    opened = rates[box.contains_open(X)]
    inf_closed = float(closed.min()) if closed.size else math.inf
    inf_open = float(opened.min()) if opened.size else math.inf
    return inf_closed, inf_open


def ldp_scan(params: ModelParams, box: EventBox, gammas: Sequence[float], V: Optional[FitnessMatrix] = None,
             mode: str = "exact", seed: int = 0, samples: int = 100_000, pool=None) -> List[ScanRow]:
    """One row of gamma * log Pi(box) per gamma, exactly or by Monte Carlo"""
    gammas = [float(g) for g in gammas]
    if not gammas:
        raise InvalidStateError("ldp_scan needs at least one gamma")
    if any(g <= 0.0 for g in gammas) or any(b >= a for a, b in zip(gammas, gammas[1:])):
        raise InvalidStateError("gammas must be positive and strictly decreasing")
    if mode not in ("exact", "monte-carlo"):
        raise InvalidStateError(f"unknown scan mode {mode!r}")

    rows = []
    for gamma in gammas:
        row_params = params.with_gamma(gamma)
        if mode == "exact":
            log_p = exact_event_log_prob(row_params, box, V)
            value = gamma * log_p if math.isfinite(log_p) else -math.inf
            rows.append(ScanRow(gamma, value, math.exp(log_p), value, value, mode))
            continue

        if V is None:
            batch = dirichlet_sample(row_params, samples, seed, pool)
        else:
            batch = tilted_sample(row_params, V, samples, seed, pool)
        hits = box.contains(batch.points)
        n_eff = batch.ess
        fraction = float(batch.weights[hits].sum() / batch.weights.sum())
        interval = stats.wilson_interval(fraction * n_eff, n_eff)
        if interval.zero_hits:
            logger.info(f"gamma={gamma:g}: no sample hit the event, reporting the Wilson upper bound")
            upper = stats.gamma_log(gamma, interval.upper)
            rows.append(ScanRow(gamma, upper, 0.0, -math.inf, upper, mode, samples, 0.0, True))
        else:
            rows.append(ScanRow(gamma, stats.gamma_log(gamma, fraction), fraction,
                                stats.gamma_log(gamma, interval.lower), stats.gamma_log(gamma, interval.upper),
                                mode, samples, float(hits.sum())))
        logger.debug(f"scan row gamma={gamma:g}: {rows[-1].gamma_log_prob:.6g}")
    return rows
