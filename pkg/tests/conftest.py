"""
Pytest configuration and shared fixtures for intermittent-sdde tests.
"""

import copy
from typing import Callable, Dict, Optional, Sequence
from unittest.mock import Mock

import numpy as np
import pytest

from intermittent_sdde.certify import CheckGrid, certificate_inputs, solve_mode_weights
from intermittent_sdde.model import (
    ControlSchedule,
    DelayFunction,
    GeneratorMatrix,
    GrowthParams,
    InitialHistory,
    PolynomialCoefficients,
    PolynomialMode,
    SystemSpec,
    monomial_table,
)
from intermittent_sdde.presets import TWO_MODE_CUBIC, load_preset


@pytest.fixture
def example_document():
    """Provide a fresh copy of the two_mode_cubic system document."""
    return copy.deepcopy(TWO_MODE_CUBIC)


@pytest.fixture
def example_parser():
    """Provide a parser over the two_mode_cubic preset."""
    return load_preset("two_mode_cubic")


@pytest.fixture
def example_spec(example_parser):
    """Provide the two_mode_cubic system."""
    return example_parser.system()


@pytest.fixture
def example_dissipation(example_parser):
    """Provide the two_mode_cubic dissipativity constants."""
    return example_parser.dissipation()


@pytest.fixture
def example_windows(example_parser):
    """Provide the two_mode_cubic intermittent-control constants."""
    return example_parser.control_windows()


@pytest.fixture
def example_weights(example_spec, example_dissipation):
    """Provide the two_mode_cubic mode weights."""
    return solve_mode_weights(example_dissipation, example_spec.generator, 3.0)


@pytest.fixture
def example_inputs(example_spec, example_weights, example_windows):
    """Provide the two_mode_cubic inputs of the C-constant chain."""
    return certificate_inputs(
        example_weights, example_windows, 9.0, example_spec.generator.min_diagonal, 0.2, example_spec.h_star
    )


@pytest.fixture
def coarse_grid():
    """Provide a grid coarse enough for fast condition checks."""
    return CheckGrid(radius=5.0, resolution=101, far_radius=1e4, directions=360, rtol=1e-9, atol=1e-9)


@pytest.fixture
def scalar_spec() -> Callable[..., SystemSpec]:
    """Provide a factory of scalar polynomial systems with a constant delay."""

    def build(
        drift: Sequence[Dict[str, float]],
        diffusion: Sequence[Dict[str, float]],
        gains: Optional[Sequence[float]] = None,
        rates: Sequence[Sequence[float]] = ((0.0,),),
        delay: float = 0.01,
        history: float = 1.0,
        growth: Optional[GrowthParams] = None,
    ) -> SystemSpec:
        gains = gains if gains is not None else [0.0] * len(drift)
        modes = tuple(
            PolynomialMode(monomial_table(f), monomial_table(g), k) for f, g, k in zip(drift, diffusion, gains)
        )
        return SystemSpec(
            generator=GeneratorMatrix(np.array(rates, dtype=float)),
            coeffs=PolynomialCoefficients(modes),
            delay=DelayFunction("constant", base=delay),
            history=InitialHistory(r0=1, constant=[history]),
            growth=growth,
        )

    return build


@pytest.fixture
def schedule():
    """Provide an always-on schedule observed every 0.01."""
    return ControlSchedule(period=1.0, width=1.0, obs_gap=0.01)


@pytest.fixture
def temp_results_dir(tmp_path):
    """Provide a temporary results directory for testing."""
    results_dir = tmp_path / "test_results"
    results_dir.mkdir()
    return results_dir


@pytest.fixture
def mock_config(temp_results_dir, tmp_path):
    """Provide a mock configuration for testing."""
    mock_config = Mock()
    mock_config.RESULTS_DIR = temp_results_dir
    mock_config.LOGS_DIR = tmp_path / "logs"
    mock_config.GRID_RADIUS = 5.0
    mock_config.GRID_RESOLUTION = 101
    mock_config.ASYMPTOTIC_RADIUS = 1e4
    mock_config.ASYMPTOTIC_DIRECTIONS = 360
    mock_config.CHECK_RTOL = 1e-9
    mock_config.CHECK_ATOL = 1e-9
    mock_config.EPSILON_GRID = 1000
    mock_config.MAX_OUTPUT_ROWS = 2000
    mock_config.BATCH_SIZE = 256
    mock_config.WORKERS = 1
    return mock_config
