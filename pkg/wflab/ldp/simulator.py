"""
Euler-Maruyama simulation of the Wright-Fisher diffusion with parent-independent
mutation and optional selection, and Girsanov reweighting between the neutral
and selective path laws.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import integrate, linalg

from wflab.core.exceptions import DimensionMismatchError, InvalidStateError, NumericalError
from wflab.ldp import stats
from wflab.ldp.action import PathGrid
from wflab.ldp.simplex import (
    FitnessMatrix,
    ModelParams,
    SimplexPoint,
    _check_dims,
    covariance_apply,
    covariance_matrix,
    drift_field,
    selection_field,
)

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-14
MAX_STEPS = 10**9


@dataclass(frozen=True)
class SimConfig:
    """Time discretization of one simulation run"""

    t_end: float
    dt: float = 1e-3
    record_stride: int = 1
    boundary_floor: float = 0.0
    seed: int = 0
    zero_noise: bool = False

    def __post_init__(self):
        if not (self.dt > 0.0 and self.dt <= self.t_end):
            raise InvalidStateError(f"need 0 < dt <= t_end, got dt={self.dt}, t_end={self.t_end}")
        if self.t_end / self.dt > MAX_STEPS:
            raise InvalidStateError(f"t_end/dt exceeds {MAX_STEPS:g} steps")
        if self.record_stride < 1:
            raise InvalidStateError(f"record_stride must be >= 1, got {self.record_stride}")
        if self.boundary_floor < 0.0:
            raise InvalidStateError("boundary_floor must be non-negative")
        steps = self.steps
        if abs(steps * self.dt - self.t_end) > 1e-9 * self.t_end:
            raise InvalidStateError(f"t_end={self.t_end} is not a multiple of dt={self.dt}")
        if steps % self.record_stride:
            raise InvalidStateError(f"record_stride={self.record_stride} does not divide {steps} steps")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def record_times(self) -> np.ndarray:
        count = self.steps // self.record_stride
        return np.arange(count + 1) * (self.dt * self.record_stride)

    def to_dict(self) -> dict:
        return {
            "t_end": self.t_end,
            "dt": self.dt,
            "record_stride": self.record_stride,
            "boundary_floor": self.boundary_floor,
            "seed": self.seed,
            "zero_noise": self.zero_noise,
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: PathGrid
    config: SimConfig
    params: ModelParams
    seed: int
    girsanov_log_weight: Optional[float] = None


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Recorded states (trajectories, knots, n) of a vectorized run"""

    times: np.ndarray
    states: np.ndarray
    config: SimConfig
    params: ModelParams
    log_weights: Optional[np.ndarray] = None
    fitness: Optional[FitnessMatrix] = None

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]

    def trajectory(self, i: int) -> Trajectory:
        weight = None if self.log_weights is None else float(self.log_weights[i])
        return Trajectory(PathGrid(self.times, self.states[i]), self.config, self.params, self.config.seed, weight)


def factor_covariance(x: SimplexPoint) -> np.ndarray:
    """Lower-triangular sigma with sigma sigma' = D(x) on the first n-1 coordinates.

    Pivoted Cholesky truncates at pivots below 1e-14; a QR step restores the
    lower-triangular shape after undoing the pivoting.
    """
    D = covariance_matrix(x)
    c, piv, rank, info = linalg.lapack.dpstrf(D, tol=PIVOT_TOL, lower=1)
    if info < 0:
        raise NumericalError(f"dpstrf rejected argument {-info}")
    L = np.tril(c)
    L[:, rank:] = 0.0
    permuted = np.zeros_like(L)
    permuted[piv - 1, :] = L
    r = linalg.qr(permuted.T, mode="r")[0]
    signs = np.where(np.diag(r) < 0.0, -1.0, 1.0)
    return r.T * signs[None, :]


def stick_breaking_noise(x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Full n-vector increments sigma(x) xi for states x (..., n) and normals xi (..., n-1).

    Uses the closed-form Cholesky factor of D(x): with R_k = 1 - sum_{i<k} x_i,
    sigma_kk = sqrt(x_k R_{k+1} / R_k) and sigma_jk = -x_j sqrt(x_k / (R_k R_{k+1})).
    Columns sum to zero, so the n-th coordinate receives minus the rest.
    """
    n = x.shape[-1]
    out = np.zeros_like(x)
    remaining = np.ones(x.shape[:-1])
    for k in range(n - 1):
        xk = x[..., k]
        after = np.maximum(remaining - xk, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            diag = np.where(remaining > 0.0, np.sqrt(xk * after / remaining), 0.0)
            off = np.where(remaining * after > 0.0, np.sqrt(xk / (remaining * after)), 0.0)
        z = xi[..., k]
        out[..., k] += diag * z
        out[..., k + 1:] -= x[..., k + 1:] * (off * z)[..., None]
        remaining = after
    return out


def _project(x: np.ndarray, support: np.ndarray, floor: float) -> np.ndarray:
    x = np.maximum(x, 0.0)
    if floor > 0.0:
        x[:, support] = np.maximum(x[:, support], floor)
    total = x.sum(axis=1, keepdims=True)
    return x / total


def _run_block(params: ModelParams, V: Optional[np.ndarray], cfg: SimConfig, start: np.ndarray,
               size: int, block: int, tilt: Optional[np.ndarray]):
    rng = stats.block_rng(cfg.seed, block)
    n = params.n
    theta, p = params.theta, params.p.weights
    support = params.support
    scale = 0.0 if cfg.zero_noise else params.epsilon * math.sqrt(cfg.dt)
    dt = cfg.dt
    stride = cfg.record_stride

    x = np.tile(start, (size, 1))
    records = np.empty((size, cfg.steps // stride + 1, n))
    records[:, 0] = x
    log_w = np.zeros(size) if tilt is not None else None

    for step in range(cfg.steps):
        b = drift_field(theta, p, x)
        drift = b if V is None else b + selection_field(V, x)
        x_new = x + drift * dt
        if scale > 0.0:
            x_new += scale * stick_breaking_noise(x, rng.standard_normal((size, n - 1)))
        if not np.all(np.isfinite(x_new)):
            raise NumericalError("non-finite state", step=step + 1)
        x_new = _project(x_new, support, cfg.boundary_floor)
        if tilt is not None:
            vx = x @ tilt
            increment = (x_new - x) - b * dt
            log_w += np.sum(vx * increment, axis=1) - 0.5 * np.sum(vx * covariance_apply(x, vx), axis=1) * dt
        x = x_new
        if (step + 1) % stride == 0:
            records[:, (step + 1) // stride] = x
    return records, log_w


def simulate_batch(params: ModelParams, V: Optional[FitnessMatrix], cfg: SimConfig, start: SimplexPoint,
                   trajectories: int, pool=None, girsanov: Optional[FitnessMatrix] = None) -> BatchResult:
    """Simulate `trajectories` independent paths in blocks with counter-based streams.

    With `girsanov` set, the run must be neutral (V None) and each path carries
    (1/gamma) G_V accumulated at every Euler step, left-endpoint evaluation.
    """
    _check_dims(params.n, start.n, "start")
    if V is not None:
        _check_dims(params.n, V.n, "fitness matrix")
    if girsanov is not None:
        _check_dims(params.n, girsanov.n, "girsanov fitness")
        if V is not None:
            raise InvalidStateError("Girsanov weights need a neutral run (no selection drift)")
    if trajectories < 1:
        raise InvalidStateError(f"trajectories must be >= 1, got {trajectories}")
    if not start.absolutely_continuous(params.p) and cfg.boundary_floor == 0.0:
        logger.warning("start is not supported by p; off-support coordinates will decay")

    V_arr = None if V is None else V.entries
    tilt = None if girsanov is None else girsanov.entries

    def run(item):
        b, lo, hi = item
        return _run_block(params, V_arr, cfg, start.weights, hi - lo, b, tilt)

    parts = list(pool.map(run, stats.blocks(trajectories))) if pool is not None else \
        [run(item) for item in stats.blocks(trajectories)]
    states = np.concatenate([s for s, _ in parts], axis=0)
    log_weights = None
    if tilt is not None:
        log_weights = np.concatenate([w for _, w in parts]) / params.gamma
    logger.debug(f"simulated {trajectories} paths x {cfg.steps} steps")
    return BatchResult(cfg.record_times, states, cfg, params, log_weights, girsanov)


def simulate(params: ModelParams, V: Optional[FitnessMatrix], cfg: SimConfig, start: SimplexPoint) -> Trajectory:
    """One Euler-Maruyama path; x <- project(x + (b + r) dt + eps sigma(x) sqrt(dt) xi)"""
    return simulate_batch(params, V, cfg, start, 1).trajectory(0)


def girsanov_log_weight(params: ModelParams, V: FitnessMatrix, traj: Trajectory) -> float:
    """(1/gamma) G_V on the recorded grid of a neutral trajectory; exp of it is dP^V / dP^neutral"""
    _check_dims(params.n, V.n, "fitness matrix")
    if traj.grid.n != params.n:
        raise DimensionMismatchError(params.n, traj.grid.n, "trajectory")
    if traj.params.theta != params.theta or traj.params.gamma != params.gamma \
            or not np.array_equal(traj.params.p.weights, params.p.weights):
        raise InvalidStateError("trajectory was simulated with different model parameters")
    X = traj.grid.knots
    dt = traj.grid.steps()
    left = X[:-1]
    vx = left @ V.entries
    increment = np.diff(X, axis=0) - drift_field(params.theta, params.p.weights, left) * dt[:, None]
    energy = np.sum(vx * covariance_apply(left, vx), axis=1)
    g = np.sum(vx * increment) - 0.5 * np.sum(energy * dt)
    return float(g / params.gamma)


def flow_path(params: ModelParams, V: Optional[FitnessMatrix], start: SimplexPoint, times) -> PathGrid:
    """Deterministic flow x' = b(x) + r(x) sampled at `times` by an adaptive high-order integrator"""
    _check_dims(params.n, start.n, "start")
    t = np.asarray(times, dtype=float)
    theta, p = params.theta, params.p.weights
    V_arr = None if V is None else V.entries

    def rhs(_, x):
        dx = drift_field(theta, p, x)
        return dx if V_arr is None else dx + selection_field(V_arr, x)

    sol = integrate.solve_ivp(rhs, (t[0], t[-1]), start.weights, method="DOP853", t_eval=t,
                              rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise NumericalError(f"flow integration failed: {sol.message}")
    X = np.clip(sol.y.T, 0.0, None)
    return PathGrid(t, X / X.sum(axis=1, keepdims=True))


class TubeEstimate(NamedTuple):
    probability: float
    interval: stats.WilsonInterval
    gamma_log: float
    hits: int
    trajectories: int


def estimate_tube_probability(params: ModelParams, cfg: SimConfig, center: PathGrid, delta: float,
                              trajectories: int, V: Optional[FitnessMatrix] = None, pool=None) -> TubeEstimate:
    """Fraction of paths within sup-norm `delta` of `center` at every recorded knot.

    The center must live on the recorded grid of `cfg`; distances are the max over
    coordinates and knots. Paths are simulated from the center's start and counted
    block by block.
    """
    if not delta > 0.0:
        raise InvalidStateError(f"tube radius must be positive, got {delta}")
    _check_dims(params.n, center.n, "tube center")
    grid = cfg.record_times
    if center.M + 1 != grid.size or not np.allclose(center.times, grid, rtol=0.0, atol=1e-9 * cfg.t_end):
        raise InvalidStateError(f"tube center has {center.M + 1} knots on [0, {center.T:g}], "
                                f"simulation records {grid.size} on [0, {cfg.t_end:g}]")
    if trajectories < 1:
        raise InvalidStateError(f"trajectories must be >= 1, got {trajectories}")
    V_arr = None if V is None else V.entries
    knots = center.knots

    def run(item):
        b, lo, hi = item
        states, _ = _run_block(params, V_arr, cfg, knots[0], hi - lo, b, None)
        distance = np.max(np.abs(states - knots[None, :, :]), axis=(1, 2))
        return int(np.count_nonzero(distance <= delta))

    items = stats.blocks(trajectories)
    counts = pool.map(run, items) if pool is not None else [run(item) for item in items]
    hits = int(sum(counts))
    interval = stats.wilson_interval(hits, trajectories)
    probability = hits / trajectories
    value = stats.gamma_log(params.gamma, probability if hits else interval.upper)
    logger.debug(f"tube delta={delta:g}: {hits}/{trajectories} hits")
    return TubeEstimate(probability, interval, value, hits, trajectories)
