"""
Minimal-action paths between fixed endpoints, quasi-potential tables and a
two-point boundary-value oracle for the two-type Euler-Lagrange equations.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, optimize

from wflab.core.exceptions import ConvergenceError, InvalidStateError, NumericalError, UnsupportedDimensionError
from wflab.ldp.action import PathGrid, admissible, segment_costs
from wflab.ldp.simplex import (
    FitnessMatrix,
    ModelParams,
    SimplexPoint,
    _check_dims,
    chart_coordinates,
    chart_pullback,
    compute_C,
    drift_field,
    equilibrium_rate,
    selection_field,
    softmax_chart,
)
from wflab.ldp.simulator import flow_path

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS = (1.0, 2.0, 5.0, 10.0, 20.0, 40.0)
KNOTS_PER_TIME = 16
MIN_KNOTS = 16


@dataclass(frozen=True, eq=False)
class MinimizeSpec:
    start: SimplexPoint
    end: SimplexPoint
    horizon: float
    knots: int
    max_iters: int = 50_000
    grad_tol: float = 1e-8
    with_selection: Optional[FitnessMatrix] = None

    def __post_init__(self):
        _check_dims(self.start.n, self.end.n, "end point")
        if self.with_selection is not None:
            _check_dims(self.start.n, self.with_selection.n, "fitness matrix")
        if not self.horizon > 0.0:
            raise InvalidStateError(f"horizon must be positive, got {self.horizon}")
        if self.knots < 4:
            raise InvalidStateError(f"knots must be >= 4, got {self.knots}")
        if self.max_iters < 1 or not self.grad_tol > 0.0:
            raise InvalidStateError("max_iters must be >= 1 and grad_tol > 0")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.knots + 1)


@dataclass
class MinimizeResult:
    path: PathGrid
    action: float
    iterations: int
    gradient_norm: float
    init: str
    converged: bool
    history: List[float] = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "horizon": self.path.T,
            "knots": self.path.M,
            "init": self.init,
            "converged": self.converged,
            "message": self.message,
        }


def _value_and_gradient(params: ModelParams, V: Optional[np.ndarray], X: np.ndarray,
                        dt: np.ndarray) -> Tuple[float, np.ndarray]:
    """Midpoint action and its gradient with respect to every knot coordinate"""
    theta = params.theta
    c = 0.5 * (X[:-1] + X[1:])
    v = np.diff(X, axis=0) / dt[:, None]
    F = drift_field(theta, params.p.weights, c)
    if V is not None:
        F = F + selection_field(V, c)
    u = v - F
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(c > 0.0, u / c, 0.0)
    value = 0.5 * float(np.sum(u * w * dt[:, None]))

    jtw = -0.5 * theta * w
    if V is not None:
        vc = c @ V
        mean = np.sum(c * vc, axis=1, keepdims=True)
        cw = np.sum(c * w, axis=1, keepdims=True)
        jtw = jtw + (vc - mean) * w + (c * w) @ V - 2.0 * vc * cw
    common = dt[:, None] * (-0.5 * jtw - 0.25 * w * w)
    grad = np.zeros_like(X)
    grad[:-1] += common - w
    grad[1:] += common + w
    return value, grad


def action_gradient(params: ModelParams, V: Optional[FitnessMatrix], path: PathGrid) -> np.ndarray:
    """Gradient (M-1, r-1) of the midpoint action in the softmax chart of each interior knot"""
    if not admissible(params, path):
        raise InvalidStateError("action gradient is undefined on a boundary-touching path")
    V_arr = None if V is None else V.entries
    _, grad = _value_and_gradient(params, V_arr, path.knots, path.steps())
    support = params.support
    return chart_pullback(path.knots[1:-1], grad[1:-1], support)


def _check_endpoints(params: ModelParams, spec: MinimizeSpec):
    support = params.support
    for name, x in (("start", spec.start), ("end", spec.end)):
        _check_dims(params.n, x.n, name)
        if np.any(x.weights[support] <= 0.0):
            raise InvalidStateError(f"{name} must be strictly positive on the support of p")
        if np.any(x.weights[~support] != 0.0):
            raise InvalidStateError(f"{name} must vanish off the support of p")


def initial_paths(params: ModelParams, spec: MinimizeSpec) -> List[Tuple[str, PathGrid]]:
    """Chart-linear interpolation and, when theta H(p|end) is finite, the reversed-flow ansatz"""
    support = params.support
    t = spec.times
    s = (t / spec.horizon)[:, None]
    z0 = chart_coordinates(spec.start.weights, support)
    z1 = chart_coordinates(spec.end.weights, support)
    candidates = [("chart-linear", PathGrid(t, softmax_chart((1.0 - s) * z0 + s * z1, support)))]
    if math.isfinite(equilibrium_rate(params, spec.end)):
        half = 0.5 * params.theta
        ramp = (np.expm1(half * t) / np.expm1(half * spec.horizon))[:, None]
        X = spec.start.weights + (spec.end.weights - spec.start.weights) * ramp
        candidates.append(("reversed-flow", PathGrid(t, X)))
    return candidates


def _descend(params: ModelParams, spec: MinimizeSpec, label: str, init: PathGrid) -> MinimizeResult:
    support = params.support
    r = int(support.sum())
    M = spec.knots
    times = spec.times
    dt = np.diff(times)
    V_arr = None if spec.with_selection is None else spec.with_selection.entries
    X = np.zeros((M + 1, params.n))
    X[0], X[-1] = spec.start.weights, spec.end.weights
    seen = {}

    def objective(z):
        X[1:-1] = softmax_chart(z.reshape(M - 1, r - 1), support)
        value, grad = _value_and_gradient(params, V_arr, X, dt)
        seen[z.tobytes()] = value
        pulled = chart_pullback(X[1:-1], grad[1:-1], support)
        return value, pulled.ravel()

    z0 = chart_coordinates(init.knots[1:-1], support).ravel()
    history = [objective(z0)[0]]

    def record(zk):
        value = seen.get(zk.tobytes())
        history.append(value if value is not None else objective(zk)[0])

    res = optimize.minimize(objective, z0, jac=True, method="L-BFGS-B", callback=record,
                            options={"maxiter": spec.max_iters, "gtol": spec.grad_tol, "ftol": 0.0,
                                     "maxfun": 4 * spec.max_iters})
    value, gradient = objective(res.x)
    gnorm = float(np.max(np.abs(gradient))) if gradient.size else 0.0
    if not math.isfinite(value):
        raise NumericalError(f"{label} descent produced a non-finite action")
    path = PathGrid(times, X.copy())
    logger.debug(f"{label}: action={value:.10g} |grad|_inf={gnorm:.3g} after {res.nit} iterations ({res.message})")
    return MinimizeResult(path, value, int(res.nit), gnorm, label, gnorm <= 1e3 * spec.grad_tol,
                          history, str(res.message))


def minimize_action(params: ModelParams, spec: MinimizeSpec, init: Optional[PathGrid] = None,
                    pool=None) -> MinimizeResult:
    """Quasi-Newton descent of the midpoint action in the softmax chart.

    Starts from `init` (or the chart-linear path) and from the reversed-flow
    ansatz, keeping the lower action. The achieved action bounds the discrete
    infimum from above.
    """
    _check_endpoints(params, spec)
    if int(params.support.sum()) < 2:
        path = PathGrid.constant(spec.start, spec.horizon, spec.knots)
        action = float(np.sum(segment_costs(params, path, spec.with_selection)))
        return MinimizeResult(path, action, 0, 0.0, "constant", True, [action])

    candidates = initial_paths(params, spec)
    if init is not None:
        if init.n != params.n:
            raise InvalidStateError("init path has the wrong dimension")
        resampled = init.interpolate(spec.times * (init.T / spec.horizon) + init.times[0])
        X = resampled.knots.copy()
        X[0], X[-1] = spec.start.weights, spec.end.weights
        candidates[0] = ("init", PathGrid(spec.times, X))

    def run(candidate):
        label, path = candidate
        return _descend(params, spec, label, path)

    results = list(pool.map(run, candidates)) if pool is not None else [run(c) for c in candidates]
    best = min(results, key=lambda res: res.action)
    if not best.converged:
        raise ConvergenceError(
            f"minimize_action stopped with |grad|={best.gradient_norm:.3g} > {1e3 * spec.grad_tol:.3g}",
            best=best, value=best.action, gradient_norm=best.gradient_norm,
        )
    return best


def refine_minimizer(params: ModelParams, spec: MinimizeSpec, result: MinimizeResult,
                     pool=None) -> Tuple[MinimizeResult, float]:
    """Re-minimize on 2M segments from the interpolated minimizer; returns the relative action change"""
    fine_spec = dataclasses.replace(spec, knots=2 * spec.knots)
    refined = minimize_action(params, fine_spec, init=result.path, pool=pool)
    scale = max(abs(result.action), 1e-300)
    return refined, abs(refined.action - result.action) / scale


class TubeInfimum(NamedTuple):
    action: float
    end: SimplexPoint
    path: PathGrid
    in_tube: bool


def tube_infimum_action(params: ModelParams, center: PathGrid, delta: float, V: Optional[FitnessMatrix] = None,
                        max_iters: int = 50_000, grad_tol: float = 1e-8, candidates: int = 4,
                        pool=None) -> TubeInfimum:
    """Least minimized action from the center's start to an endpoint within `delta` of its end.

    Endpoints are searched on the segment from the center's endpoint toward the
    flow's endpoint, clipped to the sup-norm ball; each minimization warm-starts
    from the previous path. The tube constraint at interior knots is reported in
    `in_tube`, not imposed.
    """
    if not delta > 0.0:
        raise InvalidStateError(f"tube radius must be positive, got {delta}")
    if candidates < 1:
        raise InvalidStateError(f"candidates must be >= 1, got {candidates}")
    _check_dims(params.n, center.n, "tube center")
    start = SimplexPoint(center.knots[0])
    end = center.knots[-1]
    toward = flow_path(params, V, start, [0.0, center.T]).knots[-1] - end
    span = float(np.max(np.abs(toward)))
    reach = min(1.0, delta / span) if span > 0.0 else 0.0
    steps = np.linspace(0.0, reach, candidates) if reach > 0.0 else np.zeros(1)

    best: Optional[MinimizeResult] = None
    best_end = None
    previous = center
    for s in steps:
        target = SimplexPoint(end + s * toward)
        spec = MinimizeSpec(start, target, center.T, center.M, max_iters, grad_tol, V)
        result = minimize_action(params, spec, init=previous, pool=pool)
        logger.debug(f"tube endpoint shift {s:.3g}: action={result.action:.10g}")
        previous = result.path
        if best is None or result.action < best.action:
            best, best_end = result, target
    in_tube = bool(np.max(np.abs(best.path.knots - center.knots)) <= delta * (1.0 + 1e-9))
    return TubeInfimum(best.action, best_end, best.path, in_tube)


@dataclass
class QuasiPotentialRow:
    horizon: float
    knots: int
    action: float
    running_min: float
    iterations: int
    gradient_norm: float
    init: str

    def to_row(self) -> dict:
        return dataclasses.asdict(self)


def _prefix_stay(path: PathGrid, horizon: float, knots: int) -> PathGrid:
    """Warm start for a longer horizon: rest at the start point, then follow `path`"""
    extra = knots - path.M
    dt = path.T / path.M
    rest = np.tile(path.knots[0], (extra, 1))
    times = np.concatenate([np.arange(extra) * dt, path.times + extra * dt])
    return PathGrid(times * (horizon / times[-1]), np.vstack([rest, path.knots]))


def quasi_potential(params: ModelParams, target: SimplexPoint, V: Optional[FitnessMatrix] = None,
                    horizons: Sequence[float] = DEFAULT_HORIZONS, knots_per_time: int = KNOTS_PER_TIME,
                    start: Optional[SimplexPoint] = None, max_iters: int = 50_000, grad_tol: float = 1e-8,
                    pool=None) -> List[QuasiPotentialRow]:
    """Minimal action from the attractor to `target` over increasing horizons.

    The attractor defaults to p (neutral) or the maximizer of the selection
    landscape. Each horizon is warm-started from the previous minimizer padded
    with a rest at the attractor, which keeps the table non-increasing when the
    horizons sit on a common time grid.
    """
    horizons = [float(T) for T in horizons]
    if not horizons or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise InvalidStateError("horizons must be non-empty and strictly increasing")
    if start is None:
        start = params.p if V is None else compute_C(params, V).argmax
    rows: List[QuasiPotentialRow] = []
    previous: Optional[MinimizeResult] = None
    running = math.inf
    for T in horizons:
        knots = max(MIN_KNOTS, int(math.ceil(knots_per_time * T - 1e-9)))
        spec = MinimizeSpec(start, target, T, knots, max_iters, grad_tol, V)
        warm = None
        if previous is not None and knots > previous.path.M:
            warm = _prefix_stay(previous.path, T, knots)
        result = minimize_action(params, spec, init=warm, pool=pool)
        running = min(running, result.action)
        rows.append(QuasiPotentialRow(T, knots, result.action, running, result.iterations,
                                      result.gradient_norm, result.init))
        logger.info(f"quasi-potential T={T:g} M={knots}: action={result.action:.10g}")
        previous = result
    return rows


def instanton_bvp(params: ModelParams, start: SimplexPoint, end: SimplexPoint, horizon: float,
                  V: Optional[FitnessMatrix] = None, nodes: int = 401) -> Tuple[PathGrid, float]:
    """Two-type Hamilton equations x' = F + aP, P' = -(F'P + a'P^2/2) by collocation.

    Returns the optimal path and its action int a P^2 / 2 dt.
    """
    if params.n != 2 or not params.p.is_interior():
        raise UnsupportedDimensionError("instanton_bvp covers two types with p > 0")
    theta, p1 = params.theta, params.p.weights[0]
    x0, x1 = float(start.weights[0]), float(end.weights[0])
    if not (0.0 < x0 < 1.0 and 0.0 < x1 < 1.0):
        raise InvalidStateError("instanton_bvp needs interior endpoints")
    if V is None:
        slope, offset = 0.0, 0.0
    else:
        e = V.entries
        slope = (e[0, 0] - e[1, 0]) - (e[0, 1] - e[1, 1])
        offset = e[0, 1] - e[1, 1]

    def drift(x):
        a = x * (1.0 - x)
        return 0.5 * theta * (p1 - x) + a * (slope * x + offset)

    def drift_prime(x):
        return -0.5 * theta + (1.0 - 2.0 * x) * (slope * x + offset) + x * (1.0 - x) * slope

    def rhs(_, y):
        x, P = y
        a = x * (1.0 - x)
        return np.vstack([drift(x) + a * P, -(drift_prime(x) * P + 0.5 * (1.0 - 2.0 * x) * P * P)])

    def bc(ya, yb):
        return np.array([ya[0] - x0, yb[0] - x1])

    t = np.linspace(0.0, horizon, nodes)
    half = 0.5 * theta
    guess_x = x0 + (x1 - x0) * np.expm1(half * t) / np.expm1(half * horizon)
    guess_v = (x1 - x0) * half * np.exp(half * t) / np.expm1(half * horizon)
    guess_p = (guess_v - drift(guess_x)) / (guess_x * (1.0 - guess_x))
    sol = integrate.solve_bvp(rhs, bc, t, np.vstack([guess_x, guess_p]), tol=1e-10, max_nodes=200_000)
    if not sol.success:
        raise ConvergenceError(f"instanton_bvp failed: {sol.message}")
    fine = np.linspace(0.0, horizon, 20 * nodes + 1)
    x, P = sol.sol(fine)
    action = float(integrate.simpson(0.5 * x * (1.0 - x) * P * P, x=fine))
    path = PathGrid(t, np.column_stack([sol.sol(t)[0], 1.0 - sol.sol(t)[0]]))
    return path, action
