"""
Unit tests for the simulate module.
"""

import math

import numpy as np
import pytest

from intermittent_sdde.errors import ConfigurationError
from intermittent_sdde.markov import ModePath, path_seed
from intermittent_sdde.model import (
    CallbackCoefficients,
    ControlSchedule,
    DelayFunction,
    GeneratorMatrix,
    InitialHistory,
    PolynomialCoefficients,
    PolynomialMode,
    SystemSpec,
    monomial_table,
)
from intermittent_sdde.simulate import TamedEulerIntegrator, integrate, integrate_ensemble


def callback_spec(drift_fn, diffusion_fn, history=1.0, delay=0.01):
    """Build a single-mode callback system with a constant delay."""
    return SystemSpec(
        generator=GeneratorMatrix(np.array([[0.0]])),
        coeffs=CallbackCoefficients(drift_fn=drift_fn, diffusion_fn=diffusion_fn),
        delay=DelayFunction("constant", base=delay),
        history=InitialHistory(constant=[history]),
    )


@pytest.fixture
def benchmark_schedule():
    """Provide the benchmark schedule with an observation gap of 0.01."""
    return ControlSchedule(period=1.0, width=0.6, obs_gap=0.01)


class TestIntegrate:
    """Test cases for single-path integration."""

    def test_zero_history_stays_at_origin(self, scalar_spec, schedule):
        """Test that the origin is an equilibrium of a system vanishing at zero."""
        spec = scalar_spec(drift=[{"1,0": 1.0, "3,0": -1.0}], diffusion=[{"1,0": 0.5}], gains=[-2.0], history=0.0)

        trajectory = integrate(spec, schedule, 1.0, 1e-3, 0)

        assert np.all(trajectory.states == 0.0)
        assert not trajectory.exploded

    def test_linear_decay(self, scalar_spec, schedule):
        """Test that dx = -x dt from x = 1 reaches e^-1 at t = 1."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}])

        trajectory = integrate(spec, schedule, 1.0, 1e-3, 0, controlled=False)

        assert trajectory.times[-1] == pytest.approx(1.0)
        assert trajectory.final_state[0] == pytest.approx(math.exp(-1.0), abs=0.01)

    def test_trajectory_grid(self, example_spec, benchmark_schedule):
        """Test the grid, initial state and column shapes of a trajectory."""
        trajectory = integrate(example_spec, benchmark_schedule, 0.5, 1e-3, 1)

        assert len(trajectory.times) == 501
        assert trajectory.states.shape == (501, 1)
        assert trajectory.states[0, 0] == 1.0
        assert trajectory.mode[0] == 1
        assert set(np.unique(trajectory.mode)) <= {1, 2}

    def test_observations_freeze_between_instants(self, example_spec, benchmark_schedule):
        """Test that observed state and mode only change at multiples of delta."""
        trajectory = integrate(example_spec, benchmark_schedule, 2.0, 1e-3, 4)
        stride = 10
        anchors = (np.arange(len(trajectory.times)) // stride) * stride

        np.testing.assert_array_equal(trajectory.obs_state, trajectory.states[anchors])
        np.testing.assert_array_equal(trajectory.obs_mode, trajectory.mode[anchors])

    def test_control_uses_observed_state(self, scalar_spec):
        """Test that the controller acts on the last observation only."""
        spec = scalar_spec(drift=[{}], diffusion=[{}], gains=[-1.0])
        schedule = ControlSchedule(period=1.0, width=1.0, obs_gap=0.1)

        trajectory = integrate(spec, schedule, 1.0, 0.01, 0)

        # Each block of ten steps removes a tenth of the observed state.
        assert trajectory.final_state[0] == pytest.approx(0.9 ** 10, rel=1e-9)

    def test_control_only_inside_windows(self, scalar_spec):
        """Test that no control acts outside [nT, nT + theta)."""
        spec = scalar_spec(drift=[{}], diffusion=[{}], gains=[-1.0])
        schedule = ControlSchedule(period=1.0, width=0.5, obs_gap=0.1)

        trajectory = integrate(spec, schedule, 1.0, 0.01, 0)

        assert trajectory.final_state[0] == pytest.approx(0.9 ** 5, rel=1e-9)
        np.testing.assert_array_equal(trajectory.control_on[:50], 1)
        np.testing.assert_array_equal(trajectory.control_on[50:100], 0)

    def test_zero_width_matches_uncontrolled(self, example_spec, benchmark_schedule):
        """Test that theta = 0 reproduces the uncontrolled run exactly."""
        never = ControlSchedule(period=1.0, width=0.0, obs_gap=0.01)

        silent = integrate(example_spec, never, 2.0, 1e-3, 9)
        uncontrolled = integrate(example_spec, benchmark_schedule, 2.0, 1e-3, 9, controlled=False)

        np.testing.assert_array_equal(silent.states, uncontrolled.states)

    def test_same_seed_same_path(self, example_spec, benchmark_schedule):
        """Test that integration is deterministic for a seed."""
        first = integrate(example_spec, benchmark_schedule, 1.0, 1e-3, 21)
        second = integrate(example_spec, benchmark_schedule, 1.0, 1e-3, 21)

        np.testing.assert_array_equal(first.states, second.states)
        np.testing.assert_array_equal(first.mode_path.jump_times, second.mode_path.jump_times)

    def test_supplied_mode_path(self, example_spec, benchmark_schedule):
        """Test that a supplied mode path drives the mode column."""
        mode_path = ModePath(np.array([0.0, 0.25]), np.array([1, 2]), 1.0)

        trajectory = integrate(example_spec, benchmark_schedule, 0.5, 1e-3, 0, mode_path=mode_path)

        assert trajectory.mode[249] == 1
        assert trajectory.mode[250] == 2

    def test_explosion_truncates(self, scalar_spec, schedule):
        """Test that a non-finite state ends the trajectory and is reported."""
        spec = scalar_spec(drift=[{}], diffusion=[{"1,0": 1.0}], history=1e200)
        noise = np.full((1000, 1), 1e200)

        trajectory = integrate(spec, schedule, 1.0, 1e-3, 0, controlled=False, noise=noise)

        assert trajectory.exploded
        assert trajectory.explosion_time == pytest.approx(1e-3)
        assert np.all(np.isfinite(trajectory.states))

    def test_history_interpolated_at_true_slot_times(self, schedule):
        """Test that the first lagged value is xi(-tau) when tau is not a whole number of steps."""
        tau = 0.0105
        spec = SystemSpec(
            generator=GeneratorMatrix(np.array([[0.0]])),
            coeffs=PolynomialCoefficients((PolynomialMode(monomial_table({"0,1": 1.0}), monomial_table({}), 0.0),)),
            delay=DelayFunction("constant", base=tau),
            history=InitialHistory(table_times=[-tau, 0.0], table_values=[[1.0 - 10.0 * tau], [1.0]]),
        )

        trajectory = integrate(spec, schedule, 0.01, 1e-3, 0, controlled=False)

        lagged = 1.0 - 10.0 * tau
        expected = 1.0 + 1e-3 * lagged / (1.0 + 1e-3 * lagged)
        assert trajectory.states[1, 0] == pytest.approx(expected, abs=1e-12)

    def test_observed_mode_lags_true_mode(self, example_spec):
        """Test that obs_mode differs from mode on a share of steps that shrinks with delta."""
        shares = []
        for delta in (0.1, 0.01, 0.001):
            schedule = ControlSchedule(period=1.0, width=0.6, obs_gap=delta)
            trajectory = integrate(example_spec, schedule, 20.0, 1e-3, 8, controlled=False)
            shares.append(np.mean(trajectory.obs_mode != trajectory.mode))

        assert shares[0] > shares[1] > 0
        assert shares[2] == 0.0
        assert shares[0] < 0.2


class TestIntegratorConfiguration:
    """Test cases for integrator argument checks."""

    def test_step_exceeding_min_delay(self, scalar_spec, schedule):
        """Test that a step above the minimum delay is rejected."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}], delay=0.005)

        with pytest.raises(ConfigurationError):
            TamedEulerIntegrator(spec, schedule, 1.0, 0.01)

    def test_gap_not_multiple_of_step(self, scalar_spec):
        """Test that delta must be an integer multiple of the step."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}], delay=0.1)
        schedule = ControlSchedule(period=1.0, width=0.5, obs_gap=0.015)

        with pytest.raises(ConfigurationError):
            TamedEulerIntegrator(spec, schedule, 1.0, 0.01)

    def test_nonpositive_horizon_and_step(self, scalar_spec, schedule):
        """Test that the horizon and step must be positive."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}])

        with pytest.raises(ConfigurationError):
            TamedEulerIntegrator(spec, schedule, 0.0, 1e-3)
        with pytest.raises(ConfigurationError):
            TamedEulerIntegrator(spec, schedule, 1.0, 0.0)

    def test_noise_shape_checked(self, scalar_spec, schedule):
        """Test that noise of the wrong shape is rejected."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}])

        with pytest.raises(ConfigurationError):
            integrate(spec, schedule, 1.0, 1e-3, 0, noise=np.zeros((10, 1)))

    def test_zero_paths_rejected(self, scalar_spec, schedule):
        """Test that an ensemble needs at least one path."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}])

        with pytest.raises(ConfigurationError):
            integrate_ensemble(spec, schedule, 1.0, 1e-3, 0, 0)


class TestEnsemble:
    """Test cases for ensemble integration."""

    def test_worker_count_does_not_change_results(self, example_spec, benchmark_schedule):
        """Test that paths are identical for one and several workers."""
        serial = integrate_ensemble(example_spec, benchmark_schedule, 0.5, 1e-3, 3, 6, workers=1, batch_size=2)
        parallel = integrate_ensemble(example_spec, benchmark_schedule, 0.5, 1e-3, 3, 6, workers=3, batch_size=2)

        for first, second in zip(serial, parallel):
            np.testing.assert_array_equal(first.states, second.states)

    def test_paths_use_indexed_streams(self, example_spec, benchmark_schedule):
        """Test that ensemble paths differ from each other."""
        paths = integrate_ensemble(example_spec, benchmark_schedule, 0.5, 1e-3, 3, 2, workers=1, batch_size=1)
        single = integrate(example_spec, benchmark_schedule, 0.5, 1e-3, path_seed(3, 1))

        assert not np.array_equal(paths[0].states, paths[1].states)
        np.testing.assert_array_equal(paths[1].states, single.states)

    @pytest.mark.slow
    def test_brownian_variance(self):
        """Test that dx = 0.5 dW from zero has variance 0.25 at t = 1."""
        spec = callback_spec(lambda x, y, m, t: np.zeros_like(x), lambda x, y, m, t: np.full((1, 1, 1), 0.5), 0.0)
        schedule = ControlSchedule(period=1.0, width=1.0, obs_gap=0.01)

        paths = integrate_ensemble(spec, schedule, 1.0, 0.01, 0, 4000, controlled=False)
        finals = np.array([path.final_state[0] for path in paths])

        assert np.var(finals) == pytest.approx(0.25, abs=0.02)
        assert np.mean(finals) == pytest.approx(0.0, abs=0.03)

    @pytest.mark.slow
    def test_strong_error_shrinks_with_step(self):
        """Test that halving the step roughly halves the strong error."""
        spec = callback_spec(lambda x, y, m, t: -x, lambda x, y, m, t: 0.1 * x[:, :, None])
        schedule = ControlSchedule(period=1.0, width=1.0, obs_gap=0.008)
        n_paths, fine_step = 100, 2e-5
        mode_paths = [ModePath(np.array([0.0]), np.array([1]), 1.0)] * n_paths
        fine_noise = np.random.default_rng(2).standard_normal((50_000, n_paths, 1))

        def final_states(step):
            integrator = TamedEulerIntegrator(spec, schedule, 1.0, step, controlled=False)
            ratio = int(round(step / fine_step))
            noise = fine_noise.reshape(integrator.n_steps, ratio, n_paths, 1).sum(axis=1) / math.sqrt(ratio)
            return integrator.run(mode_paths, noise, integrator.n_steps).states[-1, :, 0]

        reference = final_states(fine_step)
        coarse = np.sqrt(np.mean((final_states(4e-3) - reference) ** 2))
        finer = np.sqrt(np.mean((final_states(2e-3) - reference) ** 2))

        assert 2.0 / 1.5 <= coarse / finer <= 2.0 * 1.5

    @pytest.mark.slow
    def test_intermittent_control_stabilizes_benchmark(self, example_spec, benchmark_schedule):
        """Test that control drives the benchmark to zero while the free system does not."""
        controlled = integrate_ensemble(example_spec, benchmark_schedule, 5.0, 1e-3, 0, 50)
        free = integrate_ensemble(example_spec, benchmark_schedule, 5.0, 1e-3, 0, 50, controlled=False)

        assert np.mean([path.final_state[0] ** 2 for path in controlled]) < 1e-3
        assert np.mean([path.final_state[0] ** 2 for path in free]) > 1e-2
