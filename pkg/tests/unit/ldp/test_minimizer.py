"""
Unit tests for action minimization, quasi-potential tables and the two-type
boundary-value oracle.
"""
import numpy as np
import pytest

from tests.conftest import NEUTRAL_TARGET_RATE
from wflab.core.exceptions import InvalidStateError, UnsupportedDimensionError
from wflab.ldp.action import PathGrid, action_neutral, action_selective
from wflab.ldp.minimizer import (
    MinimizeSpec,
    action_gradient,
    initial_paths,
    instanton_bvp,
    minimize_action,
    quasi_potential,
    refine_minimizer,
    tube_infimum_action,
)
from wflab.ldp.simplex import ModelParams, SimplexPoint, chart_coordinates, softmax_chart

TARGET = SimplexPoint([0.8, 0.2])


def _random_path(rng, params, knots=12, horizon=2.0):
    times = np.linspace(0.0, horizon, knots + 1)
    X = rng.dirichlet(5.0 * np.ones(params.n), size=knots + 1)
    return PathGrid(times, X)


def _chart_action(params, V, path, z):
    X = path.knots.copy()
    X[1:-1] = softmax_chart(z, params.support)
    grid = PathGrid(path.times, X)
    return action_neutral(params, grid) if V is None else action_selective(params, V, grid)


@pytest.mark.unit
class TestActionGradient:
    @pytest.mark.parametrize("with_selection", [False, True])
    def test_matches_finite_differences(self, rng, three_type_params, random_symmetric, with_selection):
        V = random_symmetric(3, seed=4) if with_selection else None
        path = _random_path(rng, three_type_params)
        grad = action_gradient(three_type_params, V, path)
        z = chart_coordinates(path.knots[1:-1], three_type_params.support)
        h = 1e-6
        numeric = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            up, down = z.copy(), z.copy()
            up[idx] += h
            down[idx] -= h
            numeric[idx] = (_chart_action(three_type_params, V, path, up)
                            - _chart_action(three_type_params, V, path, down)) / (2.0 * h)
        assert grad.shape == (path.M - 1, 2)
        assert np.max(np.abs(grad - numeric)) < 1e-5

    def test_boundary_path_rejected(self, three_type_params):
        path = PathGrid([0.0, 1.0, 2.0], [[0.2, 0.3, 0.5], [0.0, 0.5, 0.5], [0.2, 0.3, 0.5]])
        with pytest.raises(InvalidStateError):
            action_gradient(three_type_params, None, path)


@pytest.mark.unit
class TestMinimizeSpec:
    @pytest.mark.parametrize("horizon,knots", [(0.0, 16), (1.0, 3)])
    def test_rejects_bad_grids(self, horizon, knots):
        with pytest.raises(InvalidStateError):
            MinimizeSpec(SimplexPoint([0.5, 0.5]), TARGET, horizon, knots)

    def test_endpoints_must_be_interior_on_support(self, two_type_params, boundary_params):
        spec = MinimizeSpec(SimplexPoint([0.5, 0.5]), SimplexPoint([1.0, 0.0]), 1.0, 16)
        with pytest.raises(InvalidStateError):
            minimize_action(two_type_params, spec)
        off_support = MinimizeSpec(SimplexPoint([0.4, 0.5, 0.1]), SimplexPoint([0.5, 0.5, 0.0]), 1.0, 16)
        with pytest.raises(InvalidStateError):
            minimize_action(boundary_params, off_support)

    def test_initial_paths_pin_endpoints(self, two_type_params):
        spec = MinimizeSpec(two_type_params.p, TARGET, 4.0, 32)
        candidates = initial_paths(two_type_params, spec)
        assert [label for label, _ in candidates] == ["chart-linear", "reversed-flow"]
        for _, path in candidates:
            assert np.allclose(path.knots[0], spec.start.weights)
            assert np.allclose(path.knots[-1], spec.end.weights)


@pytest.mark.unit
class TestMinimizeAction:
    def test_resting_path_has_zero_action(self, three_type_params):
        spec = MinimizeSpec(three_type_params.p, three_type_params.p, 2.0, 32)
        result = minimize_action(three_type_params, spec)
        assert result.action < 1e-8
        assert result.converged

    def test_descent_history_decreases(self, two_type_params):
        spec = MinimizeSpec(two_type_params.p, TARGET, 4.0, 64)
        result = minimize_action(two_type_params, spec)
        assert result.history[-1] <= result.history[0]
        assert result.action == pytest.approx(result.history[-1])
        assert result.action == pytest.approx(action_neutral(two_type_params, result.path), rel=1e-12)

    def test_agrees_with_boundary_value_oracle(self, two_type_params, pool):
        spec = MinimizeSpec(two_type_params.p, TARGET, 5.0, 160)
        result = minimize_action(two_type_params, spec, pool=pool)
        _, exact = instanton_bvp(two_type_params, two_type_params.p, TARGET, 5.0)
        assert result.action == pytest.approx(exact, rel=1e-2)
        assert exact > NEUTRAL_TARGET_RATE

    def test_degenerate_center_stays_on_face(self, boundary_params):
        spec = MinimizeSpec(boundary_params.p, SimplexPoint([0.6, 0.4, 0.0]), 2.0, 32)
        result = minimize_action(boundary_params, spec)
        assert np.all(result.path.knots[:, 2] == 0.0)
        assert result.action > 0.0

    def test_refinement_changes_little(self, two_type_params):
        spec = MinimizeSpec(two_type_params.p, TARGET, 3.0, 48)
        coarse = minimize_action(two_type_params, spec)
        refined, change = refine_minimizer(two_type_params, spec, coarse)
        assert refined.path.M == 96
        assert change < 1e-2


    def test_gradient_vanishes_at_minimizer(self, two_type_params):
        spec = MinimizeSpec(two_type_params.p, TARGET, 2.0, 64)
        result = minimize_action(two_type_params, spec)
        gradient = action_gradient(two_type_params, None, result.path)
        assert np.max(np.abs(gradient)) <= 1e3 * spec.grad_tol


@pytest.mark.unit
class TestTubeInfimum:
    def test_shifts_endpoint_toward_the_flow(self, two_type_params):
        center = minimize_action(two_type_params, MinimizeSpec(two_type_params.p, TARGET, 2.0, 40)).path
        tube = tube_infimum_action(two_type_params, center, 0.05)
        shifted = minimize_action(two_type_params, MinimizeSpec(two_type_params.p, SimplexPoint([0.75, 0.25]), 2.0, 40))

        assert tube.end.weights == pytest.approx([0.75, 0.25], abs=1e-12)
        assert tube.action == pytest.approx(shifted.action, rel=1e-5)
        assert tube.action < action_neutral(two_type_params, center)
        assert tube.in_tube
        assert np.allclose(tube.path.knots[0], center.knots[0])

    def test_flow_centered_tube_is_free(self, two_type_params):
        center = PathGrid.constant(two_type_params.p, 1.0, 16)
        tube = tube_infimum_action(two_type_params, center, 0.1)
        assert tube.action < 1e-8
        assert tube.in_tube

    def test_rejects_non_positive_radius(self, two_type_params):
        center = PathGrid.constant(two_type_params.p, 1.0, 16)
        with pytest.raises(InvalidStateError):
            tube_infimum_action(two_type_params, center, 0.0)


@pytest.mark.unit
class TestQuasiPotential:
    def test_table_is_non_increasing_toward_rate(self, two_type_params):
        rows = quasi_potential(two_type_params, TARGET, horizons=(1.0, 2.0, 4.0))
        assert [row.knots for row in rows] == [16, 32, 64]
        running = [row.running_min for row in rows]
        assert running == sorted(running, reverse=True)
        assert rows[-1].action < rows[0].action
        assert rows[-1].action == pytest.approx(NEUTRAL_TARGET_RATE, rel=0.1)

    def test_rejects_unordered_horizons(self, two_type_params):
        with pytest.raises(InvalidStateError):
            quasi_potential(two_type_params, TARGET, horizons=(2.0, 1.0))


@pytest.mark.unit
class TestInstantonOracle:
    def test_long_horizon_approaches_equilibrium_rate(self):
        params = ModelParams(1.0, SimplexPoint([0.5, 0.5]), 0.05)
        _, action = instanton_bvp(params, params.p, TARGET, 20.0)
        assert action == pytest.approx(NEUTRAL_TARGET_RATE, rel=1e-3)

    def test_more_than_two_types_unsupported(self, three_type_params):
        with pytest.raises(UnsupportedDimensionError):
            instanton_bvp(three_type_params, three_type_params.p, SimplexPoint([0.4, 0.3, 0.3]), 1.0)
