"""
Simplex geometry, model parameters, drifts, entropies and the closed-form
ingredients of the finite-allele rate functions.

Every function here is pure. Array-level helpers (``drift_field``,
``selection_field``, ``covariance_apply``, ``softmax_chart`` ...) broadcast over
leading axes and are what the simulator, the action evaluator and the
minimizer call in their inner loops; the typed operations wrap them.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import optimize, special

from wflab.core.exceptions import (
    ConvergenceError,
    DimensionMismatchError,
    InvalidStateError,
    UnsupportedDimensionError,
)

logger = logging.getLogger(__name__)

SUM_TOL = 1e-12
SNAP_TOL = 1e-15

ArrayLike = Union[Sequence[float], np.ndarray]


def _as_vector(values: ArrayLike, what: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise InvalidStateError(f"{what} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"{what} has non-finite entries")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SimplexPoint:
    """A probability vector on n >= 2 types.

    Weights below 1e-15 are snapped to 0 and the vector renormalized, so that
    support tests (``x << p``) are exact comparisons against zero.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = _as_vector(self.weights, "SimplexPoint")
        if w.size < 2:
            raise InvalidStateError(f"SimplexPoint needs n >= 2 types, got {w.size}")
        if np.any(w < -SUM_TOL):
            raise InvalidStateError(f"SimplexPoint has negative weight {w.min()!r}")
        w[w < SNAP_TOL] = 0.0
        total = w.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise InvalidStateError(f"SimplexPoint weights sum to {total!r}, expected 1")
        object.__setattr__(self, "weights", _frozen(w / total))

    @classmethod
    def uniform(cls, n: int) -> "SimplexPoint":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def vertex(cls, n: int, i: int) -> "SimplexPoint":
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w)

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0.0

    def is_interior(self) -> bool:
        return bool(np.all(self.weights > 0.0))

    def absolutely_continuous(self, other: "SimplexPoint") -> bool:
        """True iff self << other, i.e. self vanishes wherever other does"""
        _check_dims(other.n, self.n)
        return not bool(np.any(self.support & ~other.support))

    def allclose(self, other: "SimplexPoint", atol: float = 1e-12) -> bool:
        return self.n == other.n and bool(np.allclose(self.weights, other.weights, rtol=0.0, atol=atol))

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"SimplexPoint({np.array2string(self.weights, precision=6, separator=', ')})"


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Mutation intensity theta, mutation center p and sampling rate gamma = epsilon^2"""

    theta: float
    p: SimplexPoint
    gamma: float

    def __post_init__(self):
        if not isinstance(self.p, SimplexPoint):
            object.__setattr__(self, "p", SimplexPoint(self.p))
        theta, gamma = float(self.theta), float(self.gamma)
        if not (math.isfinite(theta) and theta > 0.0):
            raise InvalidStateError(f"theta must be positive, got {self.theta!r}")
        if not (math.isfinite(gamma) and gamma > 0.0):
            raise InvalidStateError(f"gamma must be positive, got {self.gamma!r}")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def epsilon(self) -> float:
        return math.sqrt(self.gamma)

    @property
    def n(self) -> int:
        return self.p.n

    @property
    def support(self) -> np.ndarray:
        return self.p.support

    @property
    def dirichlet_shapes(self) -> np.ndarray:
        return self.theta * self.p.weights / self.gamma

    def with_gamma(self, gamma: float) -> "ModelParams":
        return dataclasses.replace(self, gamma=gamma)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "p": self.p.weights.tolist(), "gamma": self.gamma}


@dataclass(frozen=True, eq=False)
class FitnessMatrix:
    """Symmetric pairwise fitness V(i, j)"""

    entries: np.ndarray

    def __post_init__(self):
        v = np.array(self.entries, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidStateError(f"FitnessMatrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidStateError("FitnessMatrix has non-finite entries")
        if not np.array_equal(v, v.T):
            raise InvalidStateError("FitnessMatrix must be symmetric")
        object.__setattr__(self, "entries", _frozen(v))

    @classmethod
    def constant(cls, n: int, value: float) -> "FitnessMatrix":
        return cls(np.full((n, n), float(value)))

    @classmethod
    def zeros(cls, n: int) -> "FitnessMatrix":
        return cls.constant(n, 0.0)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def is_zero(self) -> bool:
        return not bool(np.any(self.entries))


@dataclass(frozen=True, eq=False)
class ZeroSumVector:
    """A tangent direction to the simplex.

    The residual sum is removed at construction from the non-zero components
    only, so exact zeros (directions outside a support) stay exact.
    """

    components: np.ndarray

    def __post_init__(self):
        c = _as_vector(self.components, "ZeroSumVector")
        total = c.sum()
        if abs(total) > 1e-9 * max(1.0, float(np.abs(c).sum())):
            raise InvalidStateError(f"ZeroSumVector components sum to {total!r}")
        nonzero = c != 0.0
        if nonzero.any():
            c[nonzero] -= total / nonzero.sum()
        object.__setattr__(self, "components", _frozen(c))

    @property
    def n(self) -> int:
        return self.components.size


class SelectionConstant(NamedTuple):
    """sup of V(mu) - theta H(p|mu) and a maximizer"""

    value: float
    argmax: SimplexPoint


def _check_dims(expected: int, got: int, what: str = "operand"):
    if expected != got:
        raise DimensionMismatchError(expected, got, what)


# -- array-level fields --------------------------------------------------------

def drift_field(theta: float, p: np.ndarray, x: np.ndarray) -> np.ndarray:
    """b(x) = theta/2 (p - x), broadcast over leading axes"""
    return 0.5 * theta * (p - x)


def selection_field(V: np.ndarray, x: np.ndarray) -> np.ndarray:
    """r(x) = x * (Vx - x'Vx), broadcast over leading axes"""
    vx = x @ V
    mean = np.sum(x * vx, axis=-1, keepdims=True)
    return x * (vx - mean)


def covariance_apply(x: np.ndarray, f: np.ndarray) -> np.ndarray:
    """D(x) f with D_kl = x_k (delta_kl - x_l), over all n coordinates"""
    return x * (f - np.sum(x * f, axis=-1, keepdims=True))


def quadratic_form(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sum_i u_i^2 / x_i with 0/0 = 0 and c/0 = +inf"""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(u == 0.0, 0.0, u * u / x)
    terms = np.where((x <= 0.0) & (u != 0.0), np.inf, terms)
    return np.sum(terms, axis=-1)


def softmax_chart(z: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Logistic-normalization map from R^(r-1) onto the open face of the simplex on `support`"""
    z = np.asarray(z, dtype=float)
    padded = np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)
    out = np.zeros(z.shape[:-1] + (support.size,))
    out[..., support] = special.softmax(padded, axis=-1)
    return out


def chart_coordinates(x: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Inverse of softmax_chart; x must be strictly positive on `support`"""
    xs = np.asarray(x, dtype=float)[..., support]
    logs = np.log(xs)
    return logs[..., :-1] - logs[..., -1:]


def chart_pullback(x: np.ndarray, grad: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Pull an ambient gradient at x = softmax_chart(z) back to a gradient in z"""
    xs = x[..., support]
    gs = grad[..., support]
    pulled = xs * (gs - np.sum(xs * gs, axis=-1, keepdims=True))
    return pulled[..., :-1]


# -- typed operations ----------------------------------------------------------

def relative_entropy(p: SimplexPoint, x: SimplexPoint) -> float:
    """H(p|x) = sum_{p_i > 0} p_i log(p_i / x_i); +inf when p is not << x"""
    _check_dims(p.n, x.n)
    return float(np.sum(special.rel_entr(p.weights, x.weights)))


def equilibrium_rate(params: ModelParams, x: SimplexPoint) -> float:
    """theta H(p|x) if x << p, else +inf"""
    _check_dims(params.n, x.n)
    if not x.absolutely_continuous(params.p):
        return math.inf
    return params.theta * relative_entropy(params.p, x)


def mutation_drift(params: ModelParams, x: SimplexPoint) -> ZeroSumVector:
    _check_dims(params.n, x.n)
    return ZeroSumVector(drift_field(params.theta, params.p.weights, x.weights))


def selection_drift(V: FitnessMatrix, x: SimplexPoint) -> ZeroSumVector:
    _check_dims(V.n, x.n)
    return ZeroSumVector(selection_field(V.entries, x.weights))


def mean_fitness(V: FitnessMatrix, x: SimplexPoint) -> float:
    """V(x) = x'Vx"""
    _check_dims(V.n, x.n)
    return float(x.weights @ V.entries @ x.weights)


def dual_norm_sq(mu: SimplexPoint, theta_vec: ZeroSumVector) -> float:
    """1/2 sum_i theta_i^2 / mu_i, the Legendre dual of f -> 1/2 f'D(mu)f"""
    _check_dims(mu.n, theta_vec.n)
    return 0.5 * float(quadratic_form(mu.weights, theta_vec.components))


def dual_norm_sq_variational(mu: SimplexPoint, theta_vec: ZeroSumVector) -> float:
    """sup_f [theta'f - 1/2 f'D(mu)f], solved through the stationarity condition D f = theta.

    Returns +inf when theta has mass outside the range of D(mu).
    """
    _check_dims(mu.n, theta_vec.n)
    x = mu.weights
    D = np.diag(x) - np.outer(x, x)
    theta = theta_vec.components
    f, *_ = np.linalg.lstsq(D, theta, rcond=None)
    if not np.allclose(D @ f, theta, rtol=0.0, atol=1e-10 * max(1.0, np.abs(theta).max())):
        return math.inf
    return float(theta @ f - 0.5 * f @ D @ f)


def covariance_matrix(x: SimplexPoint) -> np.ndarray:
    """D(x) on the first n-1 coordinates (the simplex chart)"""
    w = x.weights[:-1]
    return np.diag(w) - np.outer(w, w)


def covariance_inverse(x: SimplexPoint) -> np.ndarray:
    """Explicit inverse D^-1_kl = delta_kl / x_k + 1 / x_n, interior x only"""
    if not x.is_interior():
        raise InvalidStateError("covariance_inverse needs an interior point")
    w = x.weights
    return np.diag(1.0 / w[:-1]) + 1.0 / w[-1]


def donsker_varadhan(p: SimplexPoint, x: SimplexPoint, g: ArrayLike) -> float:
    """sum_i p_i g_i - log sum_i x_i e^{g_i}; a lower bound for H(p|x) for every g"""
    _check_dims(p.n, x.n)
    g = _as_vector(g, "test function")
    _check_dims(p.n, g.size, "test function")
    return float(p.weights @ g - special.logsumexp(g, b=x.weights))


def entropy_variational(p: SimplexPoint, x: SimplexPoint) -> float:
    """H(p|x) as the supremum of the Donsker-Varadhan functional over test functions"""
    _check_dims(p.n, x.n)
    if not p.absolutely_continuous(x):
        return math.inf
    support = p.support
    ps, xs = p.weights[support], x.weights[support]

    def objective(g):
        lse = special.logsumexp(g, b=xs)
        tilted = xs * np.exp(g - lse)
        return -(ps @ g - lse), -(ps - tilted)

    res = optimize.minimize(objective, np.zeros(ps.size), jac=True, method="L-BFGS-B",
                            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 1000})
    return float(-res.fun)


# -- selection landscape ---------------------------------------------------------

def selection_landscape(params: ModelParams, V: FitnessMatrix, X: np.ndarray) -> np.ndarray:
    """V(x) - theta H(p|x) for points X (..., n); -inf off the support of p"""
    with np.errstate(divide="ignore", invalid="ignore"):
        fitness = np.einsum("...i,ij,...j->...", X, V.entries, X)
        entropy = np.sum(special.rel_entr(params.p.weights, X), axis=-1)
    outside = np.any((X > 0.0) & ~params.support, axis=-1)
    return np.where(outside | ~np.isfinite(entropy), -np.inf, fitness - params.theta * entropy)


def compute_C(params: ModelParams, V: FitnessMatrix, restarts: int = 16, seed: int = 0,
              grad_tol: float = 1e-9, max_iters: int = 10_000) -> SelectionConstant:
    """C(theta, p, V) = sup_mu [V(mu) - theta H(p|mu)] by multi-start ascent in softmax coordinates.

    The search runs on the support of p. The best restart must reach a gradient
    norm of 1e3 * grad_tol, otherwise ConvergenceError carries the best iterate.
    """
    _check_dims(params.n, V.n)
    support = params.support
    p_s = params.p.weights[support]
    r = p_s.size
    if r == 1:
        return SelectionConstant(mean_fitness(V, params.p), params.p)

    V_s = V.entries[np.ix_(support, support)]
    theta = params.theta
    offset = theta * float(p_s @ np.log(p_s))

    def objective(z):
        mu = special.softmax(np.append(z, 0.0))
        v_mu = V_s @ mu
        value = mu @ v_mu + theta * (p_s @ np.log(mu)) - offset
        g = 2.0 * v_mu + theta * p_s / mu
        grad = mu * (g - mu @ g)
        return -value, -grad[:-1]

    rng = np.random.default_rng(seed)
    starts = [np.log(p_s[:-1] / p_s[-1])]
    starts += [rng.normal(scale=2.0, size=r - 1) for _ in range(restarts - 1)]

    best_value, best_z, best_gnorm = -math.inf, None, math.inf
    for i, z0 in enumerate(starts):
        res = optimize.minimize(objective, z0, jac=True, method="L-BFGS-B",
                                options={"maxiter": max_iters, "gtol": grad_tol, "ftol": 1e-15})
        value = -float(res.fun)
        gnorm = float(np.linalg.norm(res.jac))
        logger.debug(f"compute_C restart {i}: value={value:.12g} |grad|={gnorm:.3g} ({res.message})")
        if value > best_value:
            best_value, best_z, best_gnorm = value, res.x, gnorm

    mu = np.zeros(params.n)
    mu[support] = special.softmax(np.append(best_z, 0.0))
    argmax = SimplexPoint(mu)
    if best_gnorm > 1e3 * grad_tol:
        raise ConvergenceError(f"compute_C did not converge (|grad|={best_gnorm:.3g})",
                               best=argmax, value=best_value, gradient_norm=best_gnorm)
    return SelectionConstant(best_value, argmax)


def compute_C_grid(params: ModelParams, V: FitnessMatrix, resolution: Optional[float] = None,
                   final_resolution: float = 1e-6) -> SelectionConstant:
    """Exhaustive grid oracle for C on supports of size <= 3, refined locally to `final_resolution`"""
    _check_dims(params.n, V.n)
    support = params.support
    idx = np.flatnonzero(support)
    r = idx.size
    if r == 1:
        return SelectionConstant(mean_fitness(V, params.p), params.p)
    if r > 3:
        raise UnsupportedDimensionError(f"grid oracle covers supports of size <= 3, got {r}")

    def embed(coords: np.ndarray) -> np.ndarray:
        # coords (..., r-1) -> full points (..., n)
        last = 1.0 - coords.sum(axis=-1, keepdims=True)
        X = np.zeros(coords.shape[:-1] + (params.n,))
        X[..., idx] = np.concatenate([coords, last], axis=-1)
        return X

    def best_on(coords: np.ndarray):
        inside = np.all(coords >= 0.0, axis=-1) & (coords.sum(axis=-1) <= 1.0)
        values = np.where(inside, selection_landscape(params, V, embed(np.clip(coords, 0.0, 1.0))), -np.inf)
        k = int(np.argmax(values))
        return coords[k], float(values[k])

    if r == 2:
        h = resolution or 1e-4
        center, value = best_on(np.linspace(0.0, 1.0, int(round(1.0 / h)) + 1)[:, None])
        fine = center[0] + np.arange(-h, h + final_resolution / 2, final_resolution)
        center, value = best_on(fine[:, None])
    else:
        h = resolution or 1e-3
        axis = np.linspace(0.0, 1.0, int(round(1.0 / h)) + 1)
        a, b = np.meshgrid(axis, axis, indexing="ij")
        center, value = best_on(np.stack([a.ravel(), b.ravel()], axis=-1))
        while h > final_resolution * (1 + 1e-9):
            step = max(h / 10.0, final_resolution)
            offsets = np.arange(-2 * h, 2 * h + step / 2, step)
            a, b = np.meshgrid(center[0] + offsets, center[1] + offsets, indexing="ij")
            center, value = best_on(np.stack([a.ravel(), b.ravel()], axis=-1))
            h = step
    return SelectionConstant(value, SimplexPoint(embed(center)))


def selection_equilibrium_rate(params: ModelParams, V: FitnessMatrix, x: SimplexPoint,
                               constant: Optional[SelectionConstant] = None) -> float:
    """C - V(x) + theta H(p|x); pass a precomputed `constant` to avoid re-running compute_C"""
    _check_dims(params.n, x.n)
    base = equilibrium_rate(params, x)
    if math.isinf(base):
        return math.inf
    if constant is None:
        constant = compute_C(params, V)
    return max(0.0, constant.value - mean_fitness(V, x) + base)
