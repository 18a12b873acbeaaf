"""
Unit tests for the Euler-Maruyama simulator, noise factors, Girsanov weights
and tube probabilities.
"""
import math

import numpy as np
import pytest

from wflab.core.exceptions import InvalidStateError
from wflab.ldp import stats
from wflab.ldp.action import PathGrid
from wflab.ldp.simplex import FitnessMatrix, ModelParams, SimplexPoint, covariance_matrix
from wflab.ldp.simulator import (
    SimConfig,
    estimate_tube_probability,
    factor_covariance,
    flow_path,
    girsanov_log_weight,
    simulate,
    simulate_batch,
    stick_breaking_noise,
)


def _full_covariance(x):
    return np.diag(x) - np.outer(x, x)


@pytest.mark.unit
class TestSimConfig:
    def test_record_times(self):
        cfg = SimConfig(t_end=1.0, dt=0.01, record_stride=10)
        assert cfg.steps == 100
        assert np.allclose(cfg.record_times, np.linspace(0.0, 1.0, 11))

    @pytest.mark.parametrize("kwargs", [
        {"t_end": 1.0, "dt": 0.0},
        {"t_end": 1.0, "dt": 2.0},
        {"t_end": 1.0, "dt": 0.3},
        {"t_end": 1.0, "dt": 0.01, "record_stride": 7},
        {"t_end": 1.0, "dt": 0.01, "record_stride": 0},
        {"t_end": 1.0, "dt": 0.01, "boundary_floor": -1e-3},
    ])
    def test_rejects_inconsistent_grids(self, kwargs):
        with pytest.raises(InvalidStateError):
            SimConfig(**kwargs)


@pytest.mark.unit
class TestNoiseFactors:
    @pytest.mark.parametrize("weights", [
        [0.2, 0.3, 0.5],
        [0.1, 0.2, 0.3, 0.4],
        [0.5, 0.0, 0.5],
        [0.0, 0.0, 1.0],
    ])
    def test_factor_reproduces_covariance(self, weights):
        x = SimplexPoint(weights)
        sigma = factor_covariance(x)
        assert np.allclose(sigma, np.tril(sigma))
        assert np.allclose(sigma @ sigma.T, covariance_matrix(x), atol=1e-14)

    def test_stick_breaking_covariance(self, rng):
        for n in (2, 3, 5):
            x = rng.dirichlet(np.ones(n))
            columns = stick_breaking_noise(np.tile(x, (n - 1, 1)), np.eye(n - 1))
            assert np.allclose(columns.sum(axis=1), 0.0, atol=1e-14)
            assert np.allclose(columns.T @ columns, _full_covariance(x), atol=1e-14)

    @pytest.mark.parametrize("weights", [
        [0.2, 0.3, 0.5],
        [0.1, 0.2, 0.3, 0.4],
        [0.5, 0.0, 0.5],
        [0.25, 0.0, 0.0, 0.75],
    ])
    def test_stick_breaking_agrees_with_pivoted_cholesky(self, weights):
        x = SimplexPoint(weights)
        n = x.n
        columns = stick_breaking_noise(np.tile(x.weights, (n - 1, 1)), np.eye(n - 1))
        closed_form = columns[:, : n - 1].T
        pivoted = factor_covariance(x)
        assert np.allclose(closed_form @ closed_form.T, pivoted @ pivoted.T, atol=1e-14)
        if np.all(x.weights > 0.0):
            assert np.allclose(closed_form, pivoted, atol=1e-12)

    def test_stick_breaking_silent_off_support(self, rng):
        x = np.array([[0.4, 0.0, 0.6]])
        out = stick_breaking_noise(x, rng.standard_normal((1, 2)))
        assert out[0, 1] == 0.0


@pytest.mark.unit
class TestSimulation:
    def test_states_stay_on_simplex(self, three_type_params):
        cfg = SimConfig(t_end=1.0, dt=1e-3, record_stride=100, seed=4)
        batch = simulate_batch(three_type_params, None, cfg, SimplexPoint([0.6, 0.3, 0.1]), 200)
        assert batch.states.shape == (200, 11, 3)
        assert np.all(batch.states >= 0.0)
        assert np.allclose(batch.states.sum(axis=2), 1.0, atol=1e-12)

    def test_deterministic_across_worker_pools(self, two_type_params, pool):
        cfg = SimConfig(t_end=0.5, dt=0.01, seed=17)
        start = SimplexPoint([0.3, 0.7])
        serial = simulate_batch(two_type_params, None, cfg, start, 2500)
        threaded = simulate_batch(two_type_params, None, cfg, start, 2500, pool=pool)
        assert np.array_equal(serial.states, threaded.states)

    def test_first_path_matches_single_simulation(self, two_type_params):
        cfg = SimConfig(t_end=0.5, dt=0.01, seed=5)
        start = SimplexPoint([0.3, 0.7])
        traj = simulate(two_type_params, None, cfg, start)
        batch = simulate_batch(two_type_params, None, cfg, start, 10)
        assert np.array_equal(traj.grid.knots, batch.states[0])

    def test_zero_noise_follows_flow(self, three_type_params):
        V = FitnessMatrix([[1.0, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.0]])
        cfg = SimConfig(t_end=2.0, dt=1e-3, record_stride=100, zero_noise=True)
        start = SimplexPoint([0.1, 0.1, 0.8])
        batch = simulate_batch(three_type_params, V, cfg, start, 3)
        flow = flow_path(three_type_params, V, start, cfg.record_times)
        assert np.allclose(batch.states[0], flow.knots, atol=3e-3)
        assert np.array_equal(batch.states[0], batch.states[2])

    def test_zero_noise_relaxes_exponentially(self, two_type_params):
        cfg = SimConfig(t_end=20.0, dt=1e-3, record_stride=1000, zero_noise=True)
        start = SimplexPoint([0.9, 0.1])
        terminal = simulate(two_type_params, None, cfg, start).grid.end.weights
        p = two_type_params.p.weights
        np.testing.assert_allclose(terminal, p + math.exp(-10.0) * (start.weights - p), atol=1e-6)
        flow = flow_path(two_type_params, None, start, cfg.record_times)
        np.testing.assert_allclose(terminal, flow.end.weights, atol=1e-6)

    def test_mean_tracks_deterministic_flow(self):
        params = ModelParams(1.0, SimplexPoint([0.5, 0.5]), 0.05)
        cfg = SimConfig(t_end=5.0, dt=1e-2, record_stride=500, seed=8)
        start = SimplexPoint([0.9, 0.1])
        terminal = simulate_batch(params, None, cfg, start, 10_000).terminal[:, 0]
        expected = flow_path(params, None, start, cfg.record_times).end.weights[0]
        standard_error = terminal.std(ddof=1) / math.sqrt(terminal.size)
        assert abs(terminal.mean() - expected) <= 4.0 * standard_error

    def test_neutral_flow_relaxes_to_center(self, three_type_params):
        flow = flow_path(three_type_params, None, SimplexPoint([0.9, 0.05, 0.05]), np.linspace(0.0, 30.0, 31))
        assert np.allclose(flow.end.weights, three_type_params.p.weights, atol=1e-6)

    def test_face_is_invariant(self, boundary_params):
        cfg = SimConfig(t_end=0.5, dt=1e-3, record_stride=50, seed=2)
        batch = simulate_batch(boundary_params, None, cfg, SimplexPoint([0.5, 0.5, 0.0]), 50)
        assert np.all(batch.states[:, :, 2] == 0.0)

    def test_rejects_bad_arguments(self, two_type_params, selection_matrix):
        cfg = SimConfig(t_end=0.1, dt=0.01)
        start = SimplexPoint([0.5, 0.5])
        with pytest.raises(InvalidStateError):
            simulate_batch(two_type_params, None, cfg, start, 0)
        with pytest.raises(InvalidStateError):
            simulate_batch(two_type_params, selection_matrix, cfg, start, 10, girsanov=selection_matrix)


@pytest.mark.unit
class TestGirsanov:
    def test_trajectory_weight_matches_running_sum(self, two_type_params, selection_matrix):
        cfg = SimConfig(t_end=0.5, dt=1e-3, seed=8)
        batch = simulate_batch(two_type_params, None, cfg, SimplexPoint([0.4, 0.6]), 5, girsanov=selection_matrix)
        for i in range(len(batch)):
            traj = batch.trajectory(i)
            recomputed = girsanov_log_weight(two_type_params, selection_matrix, traj)
            assert recomputed == pytest.approx(traj.girsanov_log_weight, rel=1e-9, abs=1e-12)

    def test_weights_have_unit_mean(self, selection_matrix):
        params = ModelParams(1.0, SimplexPoint([0.5, 0.5]), 0.2)
        cfg = SimConfig(t_end=1.0, dt=1e-2, record_stride=100, seed=21)
        batch = simulate_batch(params, None, cfg, SimplexPoint([0.5, 0.5]), 4000, girsanov=selection_matrix)
        weights = np.exp(batch.log_weights)
        mean, se = stats.mean_and_stderr(weights)
        assert abs(mean - 1.0) < 5.0 * se + 0.02

    def test_zero_fitness_has_zero_weight(self, two_type_params):
        cfg = SimConfig(t_end=0.2, dt=1e-2, seed=1)
        batch = simulate_batch(two_type_params, None, cfg, SimplexPoint([0.5, 0.5]), 20,
                               girsanov=FitnessMatrix.zeros(2))
        assert np.all(batch.log_weights == 0.0)

    def test_rejects_foreign_trajectory(self, two_type_params, selection_matrix):
        cfg = SimConfig(t_end=0.1, dt=1e-2)
        traj = simulate(two_type_params.with_gamma(0.1), None, cfg, SimplexPoint([0.5, 0.5]))
        with pytest.raises(InvalidStateError):
            girsanov_log_weight(two_type_params, selection_matrix, traj)


@pytest.mark.unit
class TestTubeProbability:
    def _setup(self, params):
        cfg = SimConfig(t_end=1.0, dt=1e-2, record_stride=10, seed=3)
        center = flow_path(params, None, SimplexPoint([0.3, 0.7]), cfg.record_times)
        return cfg, center

    def test_wide_tube_catches_everything(self, two_type_params):
        cfg, center = self._setup(two_type_params)
        estimate = estimate_tube_probability(two_type_params, cfg, center, 1.0, 300)
        assert estimate.hits == 300
        assert estimate.probability == 1.0
        assert estimate.gamma_log == 0.0

    def test_probability_grows_with_radius(self, two_type_params):
        cfg, center = self._setup(two_type_params)
        narrow = estimate_tube_probability(two_type_params, cfg, center, 0.05, 2000)
        wide = estimate_tube_probability(two_type_params, cfg, center, 0.2, 2000)
        assert 0 < narrow.hits <= wide.hits
        assert narrow.interval.lower <= narrow.probability <= narrow.interval.upper

    def test_zero_hits_use_upper_bound(self, two_type_params):
        cfg, center = self._setup(two_type_params)
        estimate = estimate_tube_probability(two_type_params, cfg, center, 1e-6, 500)
        assert estimate.hits == 0
        assert estimate.interval.zero_hits
        assert math.isfinite(estimate.gamma_log)
        assert estimate.gamma_log < 0.0

    def test_deterministic_across_worker_pools(self, two_type_params, pool):
        cfg, center = self._setup(two_type_params)
        serial = estimate_tube_probability(two_type_params, cfg, center, 0.05, 2100)
        threaded = estimate_tube_probability(two_type_params, cfg, center, 0.05, 2100, pool=pool)
        assert serial.hits == threaded.hits

    def test_center_must_match_record_grid(self, two_type_params):
        cfg, _ = self._setup(two_type_params)
        center = PathGrid.constant(SimplexPoint([0.5, 0.5]), 1.0, 20)
        with pytest.raises(InvalidStateError):
            estimate_tube_probability(two_type_params, cfg, center, 0.1, 10)

    def test_rejects_non_positive_radius(self, two_type_params):
        cfg, center = self._setup(two_type_params)
        with pytest.raises(InvalidStateError):
            estimate_tube_probability(two_type_params, cfg, center, 0.0, 10)
