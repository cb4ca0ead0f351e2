"""
Simulation Module

Tamed Euler-Maruyama integration of the hybrid delay system with intermittent
control based on discrete-time observations. A batch of paths is advanced in
lockstep; the delayed state is read from a ring buffer by linear interpolation
and the controller only sees the state and mode of the last observation.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import get_config
from .errors import ConfigurationError
from .markov import ModePath, SeedLike, path_seed, sample_path, split_streams
from .model import ControlSchedule, SystemSpec, indicator_at

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One simulated path on a uniform grid, truncated at the first non-finite state."""

    step: float
    times: np.ndarray
    states: np.ndarray
    mode: np.ndarray
    obs_state: np.ndarray
    obs_mode: np.ndarray
    control_on: np.ndarray
    mode_path: ModePath
    exploded: bool = False
    explosion_time: Optional[float] = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Recorded states of a batch: ``states`` has shape (rows, paths, n)."""

    record_index: np.ndarray
    states: np.ndarray
    modes: np.ndarray
    explosion_step: np.ndarray


class TamedEulerIntegrator:
    """
    Explicit tamed Euler-Maruyama scheme for the controlled delay system.

    x_{k+1} = x_k + [f~ + I(t_k) u(x(v(t_k)), r(v(t_k)), t_k)] step + g sqrt(step) xi_k,
    with f~ = f / (1 + step |f|) evaluated at (x_k, x(t_k - h(t_k)), r(t_k), t_k).
    """

    def __init__(
        self,
        spec: SystemSpec,
        schedule: ControlSchedule,
        horizon: float,
        step: float,
        controlled: bool = True,
    ):
        """
        Initialize the integrator and precompute everything path independent.

        Args:
            spec: System to integrate
            schedule: Control period, width and observation gap
            horizon: Final time
            step: Integration step, with delta an integer multiple of it
            controlled: Apply the intermittent control when True

        Raises:
            ConfigurationError: If the step, horizon or observation gap are incompatible
        """
        if not step > 0:
            raise ConfigurationError(f"Step must be positive, got {step}")
        if not horizon > 0:
            raise ConfigurationError(f"Horizon must be positive, got {horizon}")
        if step > spec.delay.h_lower * (1 + 1e-12):
            raise ConfigurationError(
                f"Step {step} exceeds the minimum delay h'={spec.delay.h_lower}; "
                "the delayed state would read the future"
            )
        stride = int(round(schedule.obs_gap / step))
        if stride < 1 or abs(stride * step - schedule.obs_gap) > 1e-9 * schedule.obs_gap:
            raise ConfigurationError(
                f"Observation gap delta={schedule.obs_gap} is not an integer multiple of step {step}"
            )

        self.spec = spec
        self.schedule = schedule
        self.step = float(step)
        self.controlled = controlled
        self.obs_stride = stride
        self.n_steps = int(round(horizon / step))
        if self.n_steps < 1:
            raise ConfigurationError(f"Horizon {horizon} is shorter than one step {step}")
        self.horizon = self.n_steps * self.step
        self.times = np.arange(self.n_steps + 1) * self.step

        self.control_on = indicator_at(schedule, self.times).astype(bool) & controlled

        # Ring buffer layout: global index g holds time (g - n_history) * step.
        self.n_history = int(math.ceil(spec.delay.tau / self.step - 1e-9))
        self.ring_size = self.n_history + 3
        lag_times = self.times - spec.delay(self.times)
        position = lag_times / self.step + self.n_history
        self.lag_index = np.floor(position + 1e-9).astype(int)
        self.lag_weight = np.clip(position - self.lag_index, 0.0, 1.0)

    def _initial_buffer(self, batch: int) -> np.ndarray:
        tau = self.spec.delay.tau
        slot_times = (np.arange(self.n_history + 1) - self.n_history) * self.step
        values = self.spec.history.values_at(np.maximum(slot_times, -tau))
        if slot_times[0] < -tau:
            # Slot 0 lies before -tau; extend xi linearly with its slope on [-tau, -tau + step].
            edge = self.spec.history.values_at(np.array([-tau, -tau + self.step]))
            slope = (edge[1] - edge[0]) / self.step
            values[0] = edge[0] + (slot_times[0] + tau) * slope
        buffer = np.zeros((self.ring_size, batch, self.spec.dim))
        for g, value in enumerate(values):
            buffer[g % self.ring_size] = value
        return buffer

    def run(
        self,
        mode_paths: Sequence[ModePath],
        noise: np.ndarray,
        record_every: int = 1,
    ) -> BatchResult:
        """
        Integrate a batch of paths.

        Args:
            mode_paths: One mode path per batch member
            noise: Standard normal draws of shape (n_steps, batch, noise_dim)
            record_every: Record every k-th grid point; the final point is always recorded

        Returns:
            BatchResult with recorded states and modes
        """
        batch = len(mode_paths)
        if noise.shape != (self.n_steps, batch, self.spec.noise_dim):
            raise ConfigurationError(
                f"Noise must have shape {(self.n_steps, batch, self.spec.noise_dim)}, got {noise.shape}"
            )
        coeffs = self.spec.coeffs
        modes = np.stack([path.modes_at(self.times) for path in mode_paths], axis=1).astype(np.intp)
        record_index = np.arange(0, self.n_steps + 1, record_every)
        if record_index[-1] != self.n_steps:
            record_index = np.append(record_index, self.n_steps)
        recorded = np.empty((len(record_index), batch, self.spec.dim))
        explosion_step = np.full(batch, -1, dtype=int)

        buffer = self._initial_buffer(batch)
        sqrt_step = math.sqrt(self.step)
        x = buffer[self.n_history % self.ring_size].copy()
        obs_state = x.copy()
        obs_mode = modes[0]
        alive = np.ones(batch, dtype=bool)
        row = 0

        # Dead paths carry NaN forward; silence the resulting warnings.
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(self.n_steps + 1):
                if row < len(record_index) and record_index[row] == k:
                    recorded[row] = x
                    row += 1
                if k == self.n_steps:
                    break

                t = self.times[k]
                if k % self.obs_stride == 0:
                    obs_state = x.copy()
                    obs_mode = modes[k]

                g0 = self.lag_index[k]
                w = self.lag_weight[k]
                lagged = (1.0 - w) * buffer[g0 % self.ring_size] + w * buffer[(g0 + 1) % self.ring_size]

                current = modes[k]
                f = coeffs.drift(x, lagged, current, t)
                tamed = f / (1.0 + self.step * np.linalg.norm(f, axis=1, keepdims=True))
                if self.control_on[k]:
                    tamed = tamed + coeffs.control(obs_state, obs_mode, t)
                g = coeffs.diffusion(x, lagged, current, t)
                x = x + tamed * self.step + np.einsum("bnm,bm->bn", g, noise[k]) * sqrt_step

                finite = np.all(np.isfinite(x), axis=1)
                newly = alive & ~finite
                if np.any(newly):
                    explosion_step[newly] = k + 1
                    alive &= finite
                    x[newly] = np.nan
                buffer[(k + 1 + self.n_history) % self.ring_size] = x

        return BatchResult(record_index, recorded, modes[record_index], explosion_step)

    def trajectory(self, result: BatchResult, member: int, mode_path: ModePath) -> Trajectory:
        """Assemble the full Trajectory of one batch member recorded at every step."""
        if len(result.record_index) != self.n_steps + 1:
            raise ConfigurationError("Trajectories need a run recorded at every step")
        states = result.states[:, member, :]
        modes = result.modes[:, member]
        obs_index = (np.arange(self.n_steps + 1) // self.obs_stride) * self.obs_stride
        end = self.n_steps + 1
        exploded = bool(result.explosion_step[member] >= 0)
        explosion_time = None
        if exploded:
            end = int(result.explosion_step[member])
            explosion_time = float(self.times[end])
            logger.warning(f"Path exploded at t={explosion_time:.6g}; trajectory truncated")
        return Trajectory(
            step=self.step,
            times=self.times[:end],
            states=states[:end],
            mode=modes[:end],
            obs_state=states[obs_index][:end],
            obs_mode=modes[obs_index][:end],
            control_on=self.control_on[:end].astype(int),
            mode_path=mode_path,
            exploded=exploded,
            explosion_time=explosion_time,
        )


def _path_inputs(
    spec: SystemSpec, integrator: TamedEulerIntegrator, seed: SeedLike
) -> Tuple[ModePath, np.ndarray]:
    mode_rng, noise_rng = split_streams(seed)
    mode_path = sample_path(spec.generator, spec.history.r0, integrator.horizon, mode_rng)
    noise = noise_rng.standard_normal((integrator.n_steps, spec.noise_dim))
    return mode_path, noise


def integrate(
    spec: SystemSpec,
    schedule: ControlSchedule,
    horizon: float,
    step: float,
    rng_seed: SeedLike,
    controlled: bool = True,
    noise: Optional[np.ndarray] = None,
    mode_path: Optional[ModePath] = None,
) -> Trajectory:
    """
    Integrate one path of the (controlled) system.

    Args:
        spec: System to integrate
        schedule: Control schedule
        horizon: Final time
        step: Integration step
        rng_seed: Seed of the path; split into a mode stream and a noise stream
        controlled: Apply the intermittent control when True
        noise: Optional standard normal draws of shape (n_steps, noise_dim) replacing the noise stream
        mode_path: Optional mode path replacing the sampled one

    Returns:
        The simulated Trajectory
    """
    integrator = TamedEulerIntegrator(spec, schedule, horizon, step, controlled)
    sampled_path, sampled_noise = _path_inputs(spec, integrator, rng_seed)
    mode_path = mode_path if mode_path is not None else sampled_path
    if mode_path.horizon < integrator.horizon:
        raise ConfigurationError("Supplied mode path is shorter than the horizon")
    noise = sampled_noise if noise is None else np.asarray(noise, dtype=float)
    if noise.shape != (integrator.n_steps, spec.noise_dim):
        raise ConfigurationError(f"Noise must have shape {(integrator.n_steps, spec.noise_dim)}, got {noise.shape}")
    result = integrator.run([mode_path], noise.reshape(integrator.n_steps, 1, spec.noise_dim))
    trajectory = integrator.trajectory(result, 0, mode_path)
    logger.debug(f"Integrated one path: {integrator.n_steps} steps, exploded={trajectory.exploded}")
    return trajectory


def run_batches(
    integrator: TamedEulerIntegrator,
    master_seed: int,
    n_paths: int,
    record_every: int = 1,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> List[Tuple[List[ModePath], BatchResult]]:
    """
    Run ``n_paths`` paths in fixed batches, optionally on a thread pool.

    Path k always uses the stream (master_seed, k) and batches are returned in
    order, so results do not depend on the worker count.
    """
    if n_paths < 1:
        raise ConfigurationError(f"n_paths must be at least 1, got {n_paths}")
    config = get_config()
    workers = workers or config.WORKERS
    batch_size = batch_size or config.BATCH_SIZE
    spec = integrator.spec
    starts = list(range(0, n_paths, batch_size))

    def run_one(start: int) -> Tuple[List[ModePath], BatchResult]:
        indices = range(start, min(start + batch_size, n_paths))
        inputs = [_path_inputs(spec, integrator, path_seed(master_seed, k)) for k in indices]
        paths = [mode_path for mode_path, _ in inputs]
        noise = np.stack([draws for _, draws in inputs], axis=1)
        return paths, integrator.run(paths, noise, record_every)

    logger.info(f"Running {n_paths} paths in {len(starts)} batches on {workers} worker(s)")
    if workers == 1:
        return [run_one(start) for start in starts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_one, starts))


def integrate_ensemble(
    spec: SystemSpec,
    schedule: ControlSchedule,
    horizon: float,
    step: float,
    master_seed: int,
    n_paths: int,
    controlled: bool = True,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
) -> List[Trajectory]:
    """Integrate ``n_paths`` independent paths; path k uses stream (master_seed, k)."""
    integrator = TamedEulerIntegrator(spec, schedule, horizon, step, controlled)
    trajectories = []
    for paths, result in run_batches(integrator, master_seed, n_paths, 1, workers, batch_size):
        for member, mode_path in enumerate(paths):
            trajectories.append(integrator.trajectory(result, member, mode_path))
    exploded = sum(trajectory.exploded for trajectory in trajectories)
    if exploded:
        logger.warning(f"{exploded} of {n_paths} paths exploded")
    return trajectories
