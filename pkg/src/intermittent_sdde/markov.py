"""
Markov Switching Module

Exact (Gillespie-style) sampling of continuous-time Markov chain paths and
right-continuous mode lookups. Random streams come from numpy's counter-based
Philox generator keyed by (master seed, path index), so every Monte Carlo path
is reproducible independently of how paths are scheduled.
"""

import logging
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from .errors import ConfigurationError, PathRangeError, ValidationError
from .model import GeneratorMatrix, check_mode

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]

_MODE_STREAM = 0
_NOISE_STREAM = 1


@dataclass(frozen=True, eq=False)
class ModePath:
    """Piecewise-constant mode trajectory: modes[k] is active on [jump_times[k], jump_times[k+1])."""

    jump_times: np.ndarray
    modes: np.ndarray
    horizon: float

    def __post_init__(self) -> None:
        jump_times = np.asarray(self.jump_times, dtype=float)
        modes = np.asarray(self.modes, dtype=int)
        if jump_times.ndim != 1 or jump_times.shape != modes.shape or len(jump_times) == 0:
            raise ValidationError("jump_times and modes must be equal-length, non-empty sequences")
        if jump_times[0] != 0.0:
            raise ValidationError("A mode path starts at time 0")
        if np.any(np.diff(jump_times) <= 0):
            raise ValidationError("jump_times must be strictly increasing")
        if np.any(np.diff(modes) == 0):
            raise ValidationError("Consecutive modes must differ")
        if self.horizon < jump_times[-1]:
            raise ValidationError("horizon must not precede the last jump")
        jump_times.setflags(write=False)
        modes.setflags(write=False)
        object.__setattr__(self, "jump_times", jump_times)
        object.__setattr__(self, "modes", modes)

    @property
    def r0(self) -> int:
        return int(self.modes[0])

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times) - 1

    def modes_at(self, t: np.ndarray) -> np.ndarray:
        """Vectorized right-continuous lookup for times already known to lie in [0, horizon]."""
        index = np.searchsorted(self.jump_times, t, side="right") - 1
        return self.modes[index]

    def holding_times(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Completed holding times and the mode held during each.

        The final segment is censored by the horizon and is left out.
        """
        return np.diff(self.jump_times), self.modes[:-1]

    def occupation_fractions(self, n_modes: int) -> np.ndarray:
        """Fraction of [0, horizon] spent in each mode 1..n_modes."""
        edges = np.append(self.jump_times, self.horizon)
        durations = np.diff(edges)
        fractions = np.bincount(self.modes - 1, weights=durations, minlength=n_modes)
        return fractions / self.horizon


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Build a Philox-backed generator from an integer seed or a SeedSequence."""
    return np.random.Generator(np.random.Philox(seed))


def path_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Seed sequence of Monte Carlo path ``index`` under ``master_seed``."""
    if master_seed < 0 or index < 0:
        raise ConfigurationError("Seeds and path indices must be nonnegative")
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))


def split_streams(seed: SeedLike) -> Tuple[np.random.Generator, np.random.Generator]:
    """
    Derive the (mode, noise) generators of one path.

    The split is keyed on the spawn key rather than ``SeedSequence.spawn`` so
    it does not depend on how many children were spawned before.
    """
    if not isinstance(seed, np.random.SeedSequence):
        if int(seed) < 0:
            raise ConfigurationError(f"Seed must be nonnegative, got {seed}")
        seed = np.random.SeedSequence(entropy=int(seed))
    mode_seq = np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + (_MODE_STREAM,))
    noise_seq = np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + (_NOISE_STREAM,))
    return make_rng(mode_seq), make_rng(noise_seq)


def sample_path(
    generator: GeneratorMatrix,
    r0: int,
    horizon: float,
    rng_seed: Union[SeedLike, np.random.Generator],
) -> ModePath:
    """
    Sample a mode path on [0, horizon] by exact holding-time sampling.

    Holding times in mode i are exponential with rate -gamma_ii and the next
    mode j is drawn with probability gamma_ij / (-gamma_ii). A mode with zero
    exit rate is absorbing.

    Args:
        generator: Transition-rate matrix
        r0: Initial mode (1-based)
        horizon: Final time
        rng_seed: Integer seed, SeedSequence or ready-made Generator

    Returns:
        The sampled ModePath
    """
    if not horizon > 0:
        raise ConfigurationError(f"Mode path horizon must be positive, got {horizon}")
    check_mode(r0, generator.n_modes)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)

    rates = generator.rates
    exit_rates = -np.diag(rates)
    jump_probs = np.where(exit_rates[:, None] > 0, rates / np.where(exit_rates > 0, exit_rates, 1.0)[:, None], 0.0)
    np.fill_diagonal(jump_probs, 0.0)
    cumulative = np.cumsum(jump_probs, axis=1)

    times = [0.0]
    modes = [r0]
    t = 0.0
    state = r0 - 1
    while exit_rates[state] > 0:
        t += rng.exponential(1.0 / exit_rates[state])
        if t >= horizon:
            break
        u = rng.random() * cumulative[state, -1]
        state = int(min(np.searchsorted(cumulative[state], u, side="right"), generator.n_modes - 1))
        times.append(t)
        modes.append(state + 1)

    logger.debug(f"Sampled mode path with {len(times) - 1} jumps on [0, {horizon}]")
    return ModePath(np.array(times), np.array(modes), float(horizon))


def mode_at(path: ModePath, t: float) -> int:
    """Mode active at time t (right-continuous at jumps)."""
    if t < 0 or t > path.horizon:
        raise PathRangeError(f"t={t} outside mode path range [0, {path.horizon}]")
    return int(path.modes_at(np.asarray(t)))
