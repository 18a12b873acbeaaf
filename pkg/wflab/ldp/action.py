"""
Discretized Freidlin-Wentzell action functionals on piecewise-linear paths.

All functionals use the same midpoint quadrature: on segment m the state is
the midpoint c_m of the two knots and the velocity is the difference quotient,
so the completing-the-square identity and the dual-norm form hold node by node.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from wflab.core.exceptions import DimensionMismatchError, InvalidStateError
from wflab.ldp.simplex import (
    SUM_TOL,
    SNAP_TOL,
    FitnessMatrix,
    ModelParams,
    SimplexPoint,
    ZeroSumVector,
    _check_dims,
    covariance_apply,
    drift_field,
    dual_norm_sq_variational,
    quadratic_form,
    selection_field,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PathGrid:
    """Knots (M+1, n) of a piecewise-linear simplex path at strictly increasing times"""

    times: np.ndarray
    knots: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        X = np.array(self.knots, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise InvalidStateError("PathGrid needs at least 2 knots")
        if X.ndim != 2 or X.shape[0] != t.size:
            raise InvalidStateError(f"PathGrid knots shape {X.shape} does not match {t.size} times")
        if X.shape[1] < 2:
            raise InvalidStateError("PathGrid knots need n >= 2")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(X))):
            raise InvalidStateError("PathGrid has non-finite entries")
        if np.any(np.diff(t) <= 0.0):
            raise InvalidStateError("PathGrid times must be strictly increasing")
        if np.any(X < -SUM_TOL):
            raise InvalidStateError("PathGrid has a knot with a negative weight")
        X[X < SNAP_TOL] = 0.0
        sums = X.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise InvalidStateError(f"PathGrid knot {bad} sums to {sums[bad]!r}")
        X /= sums[:, None]
        t.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "knots", X)

    @classmethod
    def from_points(cls, times: Sequence[float], points: Sequence[SimplexPoint]) -> "PathGrid":
        return cls(np.asarray(times, dtype=float), np.stack([p.weights for p in points]))

    @classmethod
    def constant(cls, x: SimplexPoint, t_end: float, segments: int) -> "PathGrid":
        return cls(np.linspace(0.0, t_end, segments + 1), np.tile(x.weights, (segments + 1, 1)))

    @property
    def M(self) -> int:
        return self.times.size - 1

    @property
    def n(self) -> int:
        return self.knots.shape[1]

    @property
    def T(self) -> float:
        return float(self.times[-1] - self.times[0])

    @property
    def start(self) -> SimplexPoint:
        return SimplexPoint(self.knots[0])

    @property
    def end(self) -> SimplexPoint:
        return SimplexPoint(self.knots[-1])

    def knot(self, i: int) -> SimplexPoint:
        return SimplexPoint(self.knots[i])

    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.knots[:-1] + self.knots[1:])

    def velocities(self) -> np.ndarray:
        return np.diff(self.knots, axis=0) / self.steps()[:, None]

    def interpolate(self, times: Sequence[float]) -> "PathGrid":
        """Piecewise-linear resampling at new times inside [t_0, t_M]"""
        t = np.asarray(times, dtype=float)
        X = np.column_stack([np.interp(t, self.times, self.knots[:, i]) for i in range(self.n)])
        return PathGrid(t, X / X.sum(axis=1, keepdims=True))


def _check_path(params: ModelParams, path: PathGrid):
    if path.n != params.n:
        raise DimensionMismatchError(params.n, path.n, "path")


def admissible(params: ModelParams, path: PathGrid) -> bool:
    """False when a knot or midpoint touches zero inside supp(p) or a coordinate outside it moves"""
    _check_path(params, path)
    support = params.support
    X = path.knots
    if np.any(X[:, support] <= 0.0):
        return False
    if np.any(path.midpoints()[:, support] <= 0.0):
        return False
    return not bool(np.any(X[:, ~support] != X[0, ~support]))


def segment_costs(params: ModelParams, path: PathGrid, V: Optional[FitnessMatrix] = None) -> np.ndarray:
    """Per-segment midpoint action dt * 1/2 sum_i (v_i - b_i - r_i)^2 / c_i; +inf on boundary contact"""
    _check_path(params, path)
    if V is not None:
        _check_dims(params.n, V.n, "fitness matrix")
    dt = path.steps()
    c = path.midpoints()
    u = path.velocities() - drift_field(params.theta, params.p.weights, c)
    if V is not None:
        u = u - selection_field(V.entries, c)
    costs = 0.5 * quadratic_form(c, u) * dt
    support = params.support
    knots = path.knots
    touched = np.any(knots[:-1, support] <= 0.0, axis=1) | np.any(knots[1:, support] <= 0.0, axis=1)
    touched |= np.any(c[:, support] <= 0.0, axis=1)
    moved = np.any(knots[1:, ~support] != knots[:-1, ~support], axis=1)
    return np.where(touched | moved, np.inf, costs)


def _total(costs: np.ndarray) -> float:
    if np.any(np.isinf(costs)):
        return math.inf
    return float(costs.sum())


def action_neutral(params: ModelParams, path: PathGrid) -> float:
    """Midpoint value of 1/2 int sum_i (phi'_i - b_i(phi))^2 / phi_i dt; math.inf on boundary contact"""
    return _total(segment_costs(params, path))


def action_selective(params: ModelParams, V: FitnessMatrix, path: PathGrid) -> float:
    """Neutral action with the replicator drift added to b"""
    return _total(segment_costs(params, path, V))


def gamma_V(params: ModelParams, V: FitnessMatrix, path: PathGrid) -> float:
    """Midpoint value of int <phi' - b(phi), V phi> dt - 1/2 int (V phi)' D(phi) (V phi) dt"""
    _check_path(params, path)
    _check_dims(params.n, V.n, "fitness matrix")
    dt = path.steps()
    c = path.midpoints()
    u = path.velocities() - drift_field(params.theta, params.p.weights, c)
    vc = c @ V.entries
    pairing = np.sum(u * vc, axis=1)
    energy = np.sum(vc * covariance_apply(c, vc), axis=1)
    return float(np.sum((pairing - 0.5 * energy) * dt))


def gamma_V_boundary(params: ModelParams, V: FitnessMatrix, path: PathGrid) -> float:
    """Boundary-term form 1/2 [phi'V phi]_0^T - int b'V phi - 1/2 int (V phi)'D(V phi)"""
    _check_path(params, path)
    _check_dims(params.n, V.n, "fitness matrix")
    X = path.knots
    dt = path.steps()
    c = path.midpoints()
    vc = c @ V.entries
    boundary = 0.5 * (X[-1] @ V.entries @ X[-1] - X[0] @ V.entries @ X[0])
    drift = np.sum(drift_field(params.theta, params.p.weights, c) * vc, axis=1)
    energy = np.sum(vc * covariance_apply(c, vc), axis=1)
    return float(boundary - np.sum((drift + 0.5 * energy) * dt))


def action_variational(params: ModelParams, path: PathGrid, V: Optional[FitnessMatrix] = None) -> float:
    """Action as a sum of per-segment Legendre suprema sup_f [u'f - 1/2 f'D(c)f]"""
    costs = segment_costs(params, path, V)
    if np.any(np.isinf(costs)):
        return math.inf
    c = path.midpoints()
    u = path.velocities() - drift_field(params.theta, params.p.weights, c)
    if V is not None:
        u = u - selection_field(V.entries, c)
    total = 0.0
    for m, dt in enumerate(path.steps()):
        total += dt * dual_norm_sq_variational(SimplexPoint(c[m]), ZeroSumVector(u[m]))
    return total


def boundary_blowup_profile(params: ModelParams, path: PathGrid) -> List[Tuple[float, float]]:
    """[(t_k, I^{t_k})]: cumulative neutral action up to every knot, starting at (t_0, 0)"""
    costs = segment_costs(params, path)
    with np.errstate(invalid="ignore"):
        partial = np.concatenate([[0.0], np.cumsum(costs)])
    return [(float(t), float(a)) for t, a in zip(path.times, partial)]


def linear_path(start: SimplexPoint, end: SimplexPoint, times: Sequence[float]) -> PathGrid:
    """Straight segment from start to end, parametrized linearly over [t_0, t_M]"""
    _check_dims(start.n, end.n, "end point")
    t = np.asarray(times, dtype=float)
    s = ((t - t[0]) / (t[-1] - t[0]))[:, None]
    return PathGrid(t, (1.0 - s) * start.weights + s * end.weights)


def dyadic_approach_grid(levels: int, per_level: int = 32, t_end: float = 1.0) -> np.ndarray:
    """Times on [0, t_end (1 - 2^-levels)] graded toward t_end.

    Level j covers [1 - 2^-j, 1 - 2^-(j+1)] (scaled by t_end) with `per_level`
    uniform steps, so the spacing next to the last time is 2^-levels / per_level.
    """
    if levels < 1 or per_level < 1:
        raise InvalidStateError("dyadic_approach_grid needs levels >= 1 and per_level >= 1")
    pieces = [np.zeros(1)]
    for j in range(levels):
        left, right = 1.0 - 2.0 ** -j, 1.0 - 2.0 ** -(j + 1)
        pieces.append(np.linspace(left, right, per_level + 1)[1:])
    return t_end * np.concatenate(pieces)
