"""
Built-in system presets.

``two_mode_cubic`` is the two-mode scalar benchmark: cubic drift with delayed
feedback, quadratic diffusion, a sawtooth delay between 0.1 and 0.2 and the
linear controls u = -8x and u = -9x. Its reference constants are kept in
REFERENCE_VALUES for the ``reproduce`` command.
"""

import copy
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from .certify import (
    c_constants,
    certificate_inputs,
    certified_rate,
    delta_bound,
    optimize_epsilon,
    solve_mode_weights,
    zeta_constants,
)
from .errors import ConfigurationError
from .parser import SystemParser

logger = logging.getLogger(__name__)

TWO_MODE_CUBIC: Dict[str, Any] = {
    "name": "two_mode_cubic",
    "generator": [[-2.0, 2.0], [1.0, -1.0]],
    "modes": [
        {
            "drift": {"1,0": 0.5, "3,0": -12.0, "0,1": 0.2, "0,3": 0.5},
            "diffusion": {"0,1": 0.4, "0,2": 0.5},
            "control_gain": -8.0,
        },
        {
            "drift": {"1,0": 0.8, "3,0": -15.0, "0,1": 0.4, "0,3": 0.8},
            "diffusion": {"0,1": 0.5, "0,2": 0.6},
            "control_gain": -9.0,
        },
    ],
    "delay": {
        "kind": "sawtooth",
        "base": 0.15,
        "amplitude": 0.05,
        "period": 1.0,
        "h_lower": 0.1,
        "h_upper": 0.2,
        "h_star": 20.0 / 19.0,
    },
    "growth": {
        "K": 1.85,
        "p": 4.0,
        "q": 7.0,
        "q1": 3.0,
        "q2": 3.0,
        "q3": 2.0,
        "q4": 2.0,
        "alpha1": 11.875,
        "alpha2": 2.58,
        "L": 9.0,
    },
    "history": {"r0": 1, "constant": [1.0]},
    "schedule": {"T": 1.0, "theta": 0.6, "delta": 1e-5, "phase_start": 0},
    "certificate": {
        "dissipation": {
            "k1": [-7.4, -8.0],
            "l1": [0.26, 0.45],
            "beta1": [11.875, 14.8],
            "g1": [0.625, 0.96],
            "k2": [-7.4, -8.0],
            "l2": [0.58, 0.95],
            "beta2": [11.875, 14.8],
            "g2": [1.125, 1.68],
        },
        "control_windows": {
            "gamma1": 1.0,
            "gamma2": 0.001,
            "gamma3": 0.002,
            "gamma4": 0.981294,
            "gamma5": 0.06143,
            "gamma6": 0.123112,
            "gamma7": 1.39289664,
            "gamma8": 2.86509864,
            "gamma4p": 0.13,
            "gamma5p": 0.05985,
            "gamma6p": 0.123160,
            "W": [
                {"power": 4.0, "coefficient": 1.472202},
                {"power": 6.0, "coefficient": 1.39289664},
            ],
        },
        "epsilon": 1.0,
        "delta": 1e-5,
    },
    "simulation": {
        "horizon": 15.0,
        "step": 1e-3,
        "delta": 0.01,
        "paths": 200,
        "seed": 0,
        "qbar": [2.0],
        "controlled": True,
    },
}

# Expected value and absolute tolerance of each reproduced quantity.
REFERENCE_VALUES: Dict[str, Tuple[float, float]] = {
    "theta_1": (0.067, 1e-3),
    "theta_2": (0.063, 1e-3),
    "theta_bar_1": (0.0336, 1e-3),
    "theta_bar_2": (0.0313, 1e-3),
    "h_star": (20.0 / 19.0, 1e-12),
    "stationary_1": (1.0 / 3.0, 1e-12),
    "stationary_2": (2.0 / 3.0, 1e-12),
    "gamma_bar_h_star": (0.273689, 1e-3),
    "delta_max": (1.2345679e-5, 1e-8),
    "C_min": (0.8017, 1e-3),
    "C4": (0.1583, 1e-3),
    "C5": (1.1251, 1e-3),
    "theta_threshold": (0.1112, 1e-4),
    "mu_theta_0.2": (0.0999, 1e-4),
    "mu_theta_0.6": (0.5500, 1e-4),
    "mu_theta_0.6_epsilon_1.415": (0.9550, 1e-3),
    "mu_optimal_theta_0.6": (0.9550, 5e-3),
}

# Epsilon at which the theta=0.6 reference rate of 0.9550 is attained.
REPORTED_EPSILON = 1.415

# Reference values that do not follow from the preset inputs.
KNOWN_DISCREPANCIES: Dict[str, str] = {
    "gamma_bar_h_star": (
        "2·max(gamma5, gamma6, gamma5', gamma6')·h* evaluates to 0.259284; the margin holds either way"
    ),
    "mu_optimal_theta_0.6": (
        "the optimal-epsilon rate at theta=0.6 is about 4.226; 0.9550 is the rate at epsilon=1.415, "
        "see mu_theta_0.6_epsilon_1.415"
    ),
}

# ``example5`` and ``two_mode_cubic`` name the same benchmark.
PRESETS: Dict[str, Dict[str, Any]] = {"example5": TWO_MODE_CUBIC, "two_mode_cubic": TWO_MODE_CUBIC}


def load_preset(name: str) -> SystemParser:
    """Return a parser over a fresh copy of a built-in preset."""
    if name not in PRESETS:
        raise ConfigurationError(f"Unknown preset '{name}'; available: {', '.join(sorted(PRESETS))}")
    return SystemParser(copy.deepcopy(PRESETS[name]))


@dataclass(frozen=True)
class ReproductionRow:
    quantity: str
    computed: float
    reference: float
    tolerance: float
    status: str
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "quantity": self.quantity,
            "computed": self.computed,
            "reference": self.reference,
            "tolerance": self.tolerance,
            "status": self.status,
            "note": self.note,
        }


def _row(quantity: str, computed: float, note: str = "") -> ReproductionRow:
    reference, tolerance = REFERENCE_VALUES[quantity]
    if quantity in KNOWN_DISCREPANCIES:
        return ReproductionRow(quantity, computed, reference, tolerance, "INFO",
                               f"{KNOWN_DISCREPANCIES[quantity]}{'; ' + note if note else ''}")
    status = "PASS" if abs(computed - reference) <= tolerance else "FAIL"
    return ReproductionRow(quantity, computed, reference, tolerance, status, note)


def _requirement(quantity: str, lhs: float, rhs: float) -> ReproductionRow:
    return ReproductionRow(quantity, lhs, rhs, 0.0, "PASS" if lhs > rhs else "FAIL", "requires computed > reference")


def reproduction_table(epsilon: float = 1.0, delta: float = 1e-5) -> List[ReproductionRow]:
    """
    Recompute the reference quantities of ``two_mode_cubic``.

    Weights, zeta inequalities, the gamma margin, the admissible observation
    gap, the constants at ``epsilon``, the rate threshold and the rates at
    theta = 0.2 and 0.6, the theta = 0.6 rate at REPORTED_EPSILON and at the
    optimal epsilon are compared with REFERENCE_VALUES.
    """
    parser = load_preset("two_mode_cubic")
    spec = parser.system()
    dissipation, windows = parser.dissipation(), parser.control_windows()
    growth = spec.growth
    generator = spec.generator
    h_star = spec.h_star
    logger.info(f"Reproducing two_mode_cubic at epsilon={epsilon}, delta={delta}")

    weights = solve_mode_weights(dissipation, generator, growth.q1)
    zeta = zeta_constants(dissipation, weights, growth.q1, growth.p, h_star)
    stationary = generator.stationary_distribution()
    rows = [
        _row("theta_1", weights.theta[0]),
        _row("theta_2", weights.theta[1]),
        _row("theta_bar_1", weights.theta_bar[0]),
        _row("theta_bar_2", weights.theta_bar[1]),
        _row("h_star", h_star),
        _row("stationary_1", stationary[0]),
        _row("stationary_2", stationary[1]),
    ]
    rows += [_requirement(item.expression, item.lhs, item.rhs) for item in zeta.inequalities]

    gamma_bar_h = windows.gamma_bar * h_star
    rows.append(_row("gamma_bar_h_star", gamma_bar_h))
    rows.append(_requirement("1 ∧ gamma4 > gamma_bar·h*", min(1.0, windows.gamma4), gamma_bar_h))

    bounds = delta_bound(growth.L, windows.gamma1, windows.gamma2, windows.gamma3,
                         generator.min_diagonal, windows.gamma4, windows.gamma_bar, h_star)
    rows.append(_row("delta_max", bounds.value, f"binding term {bounds.binding}"))

    inputs = certificate_inputs(weights, windows, growth.L, generator.min_diagonal, spec.delay.tau, h_star)
    constants = c_constants(inputs, epsilon, delta)
    rows += [
        _row("C_min", constants.c_min),
        _row("C4", constants.c4),
        _row("C5", constants.c5),
    ]
    low = certified_rate(epsilon, constants.c5, 1.0, 0.2)
    high = certified_rate(epsilon, constants.c5, 1.0, 0.6)
    rows += [
        _row("theta_threshold", low.theta_threshold),
        _row("mu_theta_0.2", math.nan if low.mu is None else low.mu),
        _row("mu_theta_0.6", math.nan if high.mu is None else high.mu),
    ]
    reported = c_constants(inputs, REPORTED_EPSILON, delta)
    reported_rate = certified_rate(REPORTED_EPSILON, reported.c5, 1.0, 0.6)
    rows.append(_row("mu_theta_0.6_epsilon_1.415", math.nan if reported_rate.mu is None else reported_rate.mu,
                     "" if reported.feasible else "epsilon infeasible: " + "; ".join(reported.failures)))
    optimum = optimize_epsilon(inputs, delta, 0.6, 1.0)
    rows.append(_row("mu_optimal_theta_0.6", optimum.mu, f"optimal epsilon {optimum.epsilon:.6g}"))
    return rows
