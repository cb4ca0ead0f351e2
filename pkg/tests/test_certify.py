"""
Unit tests for the certify module.
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from intermittent_sdde.certify import (
    DissipativityData,
    boundedness_certificate,
    build_certificate,
    c_constants,
    certified_rate,
    delta_bound,
    gronwall_oracle,
    is_nonsingular_m_matrix,
    moment_rate_table,
    optimize_epsilon,
    rate_curve,
    solve_weights,
    verify_dissipativity,
    verify_control_windows,
    verify_control_bound,
    verify_growth,
    verify_khasminskii,
    zeta_constants,
)
from intermittent_sdde.errors import CertificateError, ConfigurationError, UnsupportedModelError, ValidationError
from intermittent_sdde.model import (
    CallbackCoefficients,
    ControlSchedule,
    DelayFunction,
    GeneratorMatrix,
    InitialHistory,
    SystemSpec,
)


def benchmark_delta_bound(spec, windows):
    """Evaluate the admissible observation gap of the benchmark."""
    return delta_bound(
        spec.growth.L, windows.gamma1, windows.gamma2, windows.gamma3,
        spec.generator.min_diagonal, windows.gamma4, windows.gamma_bar, spec.h_star,
    )


class TestModeWeights:
    """Test cases for M-matrix weights."""

    def test_benchmark_weights(self, example_weights):
        """Test the weights of the two-mode benchmark."""
        np.testing.assert_allclose(example_weights.theta, [0.0669958, 0.0627645], atol=1e-6)
        np.testing.assert_allclose(example_weights.theta_bar, [0.033628, 0.0313221], atol=1e-6)
        assert example_weights.a1 == pytest.approx(0.0627645, abs=1e-6)
        assert example_weights.a2 == pytest.approx(0.0669958, abs=1e-6)
        assert example_weights.a3 == pytest.approx(0.033628, abs=1e-6)

    def test_weights_solve_their_systems(self, example_weights):
        """Test that A1 theta = 1 and A2 theta_bar = 1."""
        np.testing.assert_allclose(example_weights.a1_matrix @ example_weights.theta, 1.0, atol=1e-12)
        np.testing.assert_allclose(example_weights.a2_matrix @ example_weights.theta_bar, 1.0, atol=1e-12)

    def test_random_m_matrices(self):
        """Test positivity and residual of weights for random M-matrices."""
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            off = rng.uniform(0.0, 1.0, size=(n, n))
            np.fill_diagonal(off, 0.0)
            matrix = np.diag(off.sum(axis=1) + rng.uniform(0.1, 1.0, size=n)) - off

            assert is_nonsingular_m_matrix(matrix)
            weights = solve_weights(matrix)
            assert np.all(weights > 0)
            assert np.max(np.abs(matrix @ weights - 1.0)) < 1e-10

    def test_not_m_matrix(self):
        """Test that non-M-matrices are recognized and rejected."""
        assert not is_nonsingular_m_matrix(np.array([[1.0, 2.0], [0.0, 1.0]]))
        assert not is_nonsingular_m_matrix(np.array([[1.0, -2.0], [-2.0, 1.0]]))
        with pytest.raises(CertificateError):
            solve_weights(np.array([[1.0, -2.0], [-2.0, 1.0]]))
        with pytest.raises(ValidationError):
            is_nonsingular_m_matrix(np.ones((2, 3)))

    def test_negative_condition_constants_rejected(self):
        """Test that l, beta and g constants must be nonnegative."""
        with pytest.raises(ValidationError):
            DissipativityData(k1=[-1.0], l1=[-0.1], beta1=[1.0], g1=[1.0],
                            k2=[-1.0], l2=[0.1], beta2=[1.0], g2=[1.0])


class TestScalarConstants:
    """Test cases for zeta, delta and the C-constant chain."""

    def test_zeta_inequalities_hold(self, example_spec, example_dissipation, example_weights):
        """Test that the benchmark satisfies all four zeta inequalities."""
        zeta = zeta_constants(example_dissipation, example_weights, 3.0, 4.0, example_spec.h_star)

        assert zeta.passed
        assert len(zeta.inequalities) == 4
        assert all(z > 0 for z in zeta.zeta)

    def test_gamma_margin(self, example_spec, example_windows):
        """Test the gamma_bar·h* value and its margin below 1 ∧ gamma4."""
        assert example_windows.gamma_bar * example_spec.h_star == pytest.approx(0.259284, abs=1e-6)
        assert min(1.0, example_windows.gamma4) > example_windows.gamma_bar * example_spec.h_star

    def test_delta_bound(self, example_spec, example_windows):
        """Test the admissible observation gap and its binding term."""
        bounds = benchmark_delta_bound(example_spec, example_windows)

        assert bounds.value == pytest.approx(0.002 / 162.0, rel=1e-12)
        assert bounds.binding == 2
        assert bounds.admits(1e-5)
        assert not bounds.admits(1e-3)
        assert not bounds.admits(0.0)

    def test_delta_bound_without_margin(self, example_spec, example_windows):
        """Test that gamma4 <= gamma_bar·h* leaves no admissible gap."""
        with pytest.raises(CertificateError):
            delta_bound(9.0, 1.0, 0.001, 0.002, -2.0, 0.2, example_windows.gamma_bar, example_spec.h_star)

    def test_delta_bound_shrinks_with_control_bound(self, example_spec, example_windows):
        """Test that delta_max falls towards zero as L grows."""
        w = example_windows
        values = [
            delta_bound(L, w.gamma1, w.gamma2, w.gamma3, example_spec.generator.min_diagonal, w.gamma4,
                        w.gamma_bar, example_spec.h_star).value
            for L in (9.0, 90.0, 900.0)
        ]

        assert values[0] > values[1] > values[2] > 0
        assert values[2] < 1e-3 * values[0]

    @pytest.mark.parametrize("name", ["gamma2", "gamma3"])
    def test_delta_bound_grows_with_gamma(self, example_spec, example_windows, name):
        """Test that delta_max does not decrease as gamma2 or gamma3 grows."""
        values = []
        for factor in (1e-6, 1e-5, 1.0, 10.0):
            w = example_windows.replace(**{name: getattr(example_windows, name) * factor})
            values.append(benchmark_delta_bound(example_spec, w).value)

        assert all(later >= earlier for earlier, later in zip(values, values[1:]))
        assert values[-1] > values[0]

    def test_c_constants_at_unit_epsilon(self, example_inputs):
        """Test C1..C5 at epsilon = 1 and delta = 1e-5."""
        constants = c_constants(example_inputs, 1.0, 1e-5)

        assert constants.feasible
        assert constants.c_min == pytest.approx(0.801665, abs=1e-5)
        assert constants.c4 == pytest.approx(0.158345, abs=1e-5)
        assert constants.c5 == pytest.approx(1.125086, abs=1e-5)
        assert constants.c4 <= constants.c_min

    def test_c_constants_infeasible_epsilon(self, example_inputs):
        """Test that a large epsilon is reported infeasible with reasons."""
        constants = c_constants(example_inputs, 10.0, 1e-5)

        assert not constants.feasible
        assert any(failure.startswith("C1=") for failure in constants.failures)

    def test_c_constants_need_positive_delta(self, example_inputs):
        """Test that delta must be positive."""
        with pytest.raises(ValidationError):
            c_constants(example_inputs, 1.0, 0.0)

    def test_boundedness_certificate(self, example_spec):
        """Test the moment-boundedness margin and its rate lambda."""
        result = boundedness_certificate(example_spec.growth, example_spec.h_star, 0.2, delta=1e-5)

        assert result.condition
        assert result.margin == pytest.approx(9.2346, abs=1e-3)
        assert result.lam > 0
        assert result.residual < 1e-8
        assert result.contraction_ok

    def test_moment_rate_table(self):
        """Test the transfer of the rate to other moment orders."""
        table = moment_rate_table(1.0, 7.0, (2.0, 4.0))

        assert table == {2.0: pytest.approx(1.0), 4.0: pytest.approx(0.6)}
        with pytest.raises(ValidationError):
            moment_rate_table(1.0, 7.0, (7.0,))
        with pytest.raises(ValidationError):
            moment_rate_table(1.0, 7.0, (1.0,))


class TestCertifiedRate:
    """Test cases for the certified rate and epsilon optimization."""

    def test_threshold_and_rates(self, example_inputs):
        """Test the threshold and rates at theta = 0.2 and 0.6."""
        c5 = c_constants(example_inputs, 1.0, 1e-5).c5

        low = certified_rate(1.0, c5, 1.0, 0.2)
        high = certified_rate(1.0, c5, 1.0, 0.6)

        assert low.theta_threshold == pytest.approx(0.111179, abs=1e-5)
        assert low.mu == pytest.approx(0.09993, abs=1e-4)
        assert high.mu == pytest.approx(0.54997, abs=1e-4)

    def test_no_rate_below_threshold(self):
        """Test that widths up to the threshold give no rate."""
        result = certified_rate(1.0, 2.0, 1.0, 0.5)

        assert result.theta_threshold == 0.5
        assert not result.certified
        assert certified_rate(1.0, 2.0, 1.0, 0.3).mu is None

    def test_rate_vanishes_at_threshold(self):
        """Test that the rate tends to zero exactly at the threshold."""
        threshold = certified_rate(1.0, 1.125086, 1.0, 0.5).theta_threshold

        just_above = certified_rate(1.0, 1.125086, 1.0, math.nextafter(threshold, 1.0))

        assert 0.0 <= just_above.mu < 1e-15

    def test_rate_increases_with_theta(self):
        """Test that the rate grows with slope C5/T."""
        thetas = np.linspace(0.2, 1.0, 9)
        rates = [certified_rate(1.0, 1.125086, 1.0, theta).mu for theta in thetas]

        np.testing.assert_allclose(np.diff(rates), 1.125086 * 0.1, rtol=1e-9)

    def test_rate_curve(self, example_inputs):
        """Test the rate curve across control widths."""
        curve = rate_curve(example_inputs, 1.0, 1e-5, 1.0, [0.0, 0.1, 0.2, 1.0])

        assert curve[0][1] is None
        assert curve[1][1] is None
        assert curve[2][1] == pytest.approx(0.09993, abs=1e-4)
        assert curve[3][1] == pytest.approx(1.0)

    def test_optimal_epsilon(self, example_inputs):
        """Test the optimal epsilon at theta = 0.6 and its binding constraint."""
        optimum = optimize_epsilon(example_inputs, 1e-5, 0.6, 1.0)

        assert optimum.epsilon == pytest.approx(4.7544, abs=1e-3)
        assert optimum.mu == pytest.approx(4.2259, abs=1e-3)
        assert optimum.constants.feasible
        assert optimum.constants.c4 == pytest.approx(optimum.constants.c1, abs=1e-3)

    def test_optimal_epsilon_beats_dense_grid(self, example_inputs):
        """Test that no point of a dense epsilon grid beats the optimum."""
        optimum = optimize_epsilon(example_inputs, 1e-5, 0.6, 1.0)
        best = -math.inf
        for epsilon in np.linspace(0.01, 6.0, 3000):
            constants = c_constants(example_inputs, float(epsilon), 1e-5)
            if constants.feasible:
                rate = certified_rate(float(epsilon), constants.c5, 1.0, 0.6)
                if rate.certified:
                    best = max(best, rate.mu)

        assert optimum.mu >= best - 1e-9

    def test_no_admissible_epsilon(self, example_inputs):
        """Test that a gap beyond 1/(4L) leaves no epsilon to optimize over."""
        with pytest.raises(CertificateError):
            optimize_epsilon(example_inputs, 0.05, 0.6, 1.0)


class TestGridChecks:
    """Test cases for grid-checked inequalities."""

    def test_benchmark_conditions_hold(self, example_spec, example_dissipation, example_windows, example_weights,
                                       coarse_grid):
        """Test that every benchmark inequality holds on the grid."""
        assert verify_khasminskii(example_spec, coarse_grid).passed
        assert verify_dissipativity(example_spec, example_dissipation, coarse_grid).passed
        report = verify_control_windows(example_spec, example_weights, example_windows, coarse_grid)

        assert report.passed
        assert report.worst_excess <= coarse_grid.atol
        assert {check.name for check in report.checks} >= {"W lower bound", "W upper bound"}

    @pytest.mark.parametrize("name", ["gamma4", "gamma7"])
    def test_tightened_constant_fails(self, example_spec, example_windows, example_weights, coarse_grid, name):
        """Test that tightening one constant by 20% breaks a check."""
        tightened = example_windows.replace(**{name: getattr(example_windows, name) * 1.2})

        report = verify_control_windows(example_spec, example_weights, tightened, coarse_grid)

        assert not report.passed

    def test_khasminskii_fails_with_large_alpha1(self, example_spec, coarse_grid):
        """Test that alpha1 = 13 asks for more quartic damping than mode 1 has."""
        growth = replace(example_spec.growth, alpha1=13.0)

        report = verify_khasminskii(example_spec, coarse_grid, growth)

        assert report.passed is False
        assert report.worst_excess > 0

    def test_dissipativity_fails_with_large_beta(self, example_spec, example_dissipation, coarse_grid):
        """Test that beta1 = 50 in mode 1 breaks the first dissipativity row."""
        dissipation = replace(example_dissipation, beta1=(50.0, example_dissipation.beta1[1]))

        report = verify_dissipativity(example_spec, dissipation, coarse_grid)

        assert report.passed is False
        assert report.worst_excess > 0
        failing = [check.name for check in report.checks if not check.passed]
        assert failing and all("mode 1" in name for name in failing)

    def test_growth_report(self, example_spec, coarse_grid):
        """Test that every benchmark monomial is dominated at infinity."""
        report = verify_growth(example_spec, grid=coarse_grid)

        assert report.passed
        assert report.k_drift > 0
        assert report.k_diffusion > 0

    def test_unbounded_monomial(self, scalar_spec, example_spec, coarse_grid):
        """Test that a monomial beyond the growth exponents is flagged."""
        spec = scalar_spec(drift=[{"5,0": -1.0}], diffusion=[{"1,0": 0.1}], growth=example_spec.growth)

        report = verify_growth(spec, grid=coarse_grid)

        assert not report.passed
        assert report.unbounded_terms == ("drift mode 1 x^5 y^0",)

    def test_control_bound(self, example_spec):
        """Test |u| <= L|x| for the linear gains."""
        assert verify_control_bound(example_spec, 9.0).passed
        assert not verify_control_bound(example_spec, 8.0).passed

    def test_missing_growth(self, scalar_spec, coarse_grid):
        """Test that grid checks need growth parameters."""
        spec = scalar_spec(drift=[{"1,0": -1.0}], diffusion=[{}])

        with pytest.raises(ConfigurationError):
            verify_khasminskii(spec, coarse_grid)

    def test_callback_model_unsupported(self, example_spec, example_dissipation, coarse_grid):
        """Test that callback coefficients cannot be certified."""
        spec = SystemSpec(
            generator=GeneratorMatrix(np.array([[-2.0, 2.0], [1.0, -1.0]])),
            coeffs=CallbackCoefficients(drift_fn=lambda x, y, m, t: -x, diffusion_fn=lambda x, y, m, t: 0.0, n_modes=2),
            delay=DelayFunction("constant", base=0.1),
            history=InitialHistory(constant=[1.0]),
            growth=example_spec.growth,
        )

        with pytest.raises(UnsupportedModelError):
            verify_dissipativity(spec, example_dissipation, coarse_grid)


class TestGronwallOracle:
    """Test cases for the discrete Gronwall recursion."""

    def test_random_draws_hold(self):
        """Test that random draws meeting the contraction condition satisfy the bound."""
        rng = np.random.default_rng(42)
        for _ in range(20):
            lam = rng.uniform(0.1, 1.0)
            delta = rng.uniform(1e-3, 1e-2)
            c3 = rng.uniform(0.1, 0.9) * lam / delta
            result = gronwall_oracle(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0), c3, lam, delta, 10_000)

            assert result.holds
            assert result.max_ratio <= 1.0 + 1e-12

    def test_inconclusive_without_contraction(self):
        """Test that a non-contracting recursion is inconclusive."""
        result = gronwall_oracle(1.0, 1.0, 200.0, 1.0, 0.01, 100)

        assert result.status == "inconclusive"
        assert result.holds is None

    def test_invalid_arguments(self):
        """Test that nonpositive lambda is rejected."""
        with pytest.raises(ValidationError):
            gronwall_oracle(1.0, 1.0, 1.0, 0.0, 0.01, 10)


class TestBuildCertificate:
    """Test cases for the full certificate pipeline."""

    def test_certificate_holds(self, example_spec, example_dissipation, example_windows, coarse_grid):
        """Test that theta = 0.2 with delta = 1e-5 is certified at epsilon = 1."""
        schedule = ControlSchedule(period=1.0, width=0.2, obs_gap=1e-5)

        certificate = build_certificate(example_spec, schedule, example_dissipation, example_windows,
                                        epsilon=1.0, qbars=(2.0, 4.0), grid=coarse_grid)

        assert certificate.passed, certificate.reasons
        assert certificate.mu == pytest.approx(0.09993, abs=1e-4)
        assert certificate.rate_table[4.0] == pytest.approx(0.6 * certificate.mu)
        assert certificate.delta_max == pytest.approx(1.2345679e-5, abs=1e-11)
        assert certificate.optimum is not None

    def test_narrow_window_not_certified(self, example_spec, example_dissipation, example_windows, coarse_grid):
        """Test that theta = 0.05 lies below the threshold."""
        schedule = ControlSchedule(period=1.0, width=0.05, obs_gap=1e-5)

        certificate = build_certificate(example_spec, schedule, example_dissipation, example_windows,
                                        epsilon=1.0, grid=coarse_grid)

        assert not certificate.passed
        assert "θ=0.05 ≤ θ_threshold 0.1112" in certificate.reasons
        assert certificate.mu is None

    def test_large_gap_not_certified(self, example_spec, example_dissipation, example_windows, coarse_grid):
        """Test that delta = 1e-3 exceeds the admissible gap."""
        schedule = ControlSchedule(period=1.0, width=0.6, obs_gap=1e-3)

        certificate = build_certificate(example_spec, schedule, example_dissipation, example_windows,
                                        epsilon=1.0, grid=coarse_grid)

        assert not certificate.passed
        assert any(reason.startswith("δ=0.001 exceeds δ_max") for reason in certificate.reasons)

    def test_certificate_serializes(self, example_spec, example_dissipation, example_windows, coarse_grid):
        """Test that the certificate dictionary carries the main results."""
        schedule = ControlSchedule(period=1.0, width=0.6, obs_gap=1e-5)

        data = build_certificate(example_spec, schedule, example_dissipation, example_windows,
                                 epsilon=1.0, grid=coarse_grid).to_dict()

        assert data["passed"] is True
        assert data["mu"] == pytest.approx(0.54997, abs=1e-4)
        assert data["delta_bound"]["binding_term"] == 2
        assert data["rate_table"] == [{"qbar": 2.0, "rate": data["mu"]}]
        assert len(data["rate_curve"]) == 11
