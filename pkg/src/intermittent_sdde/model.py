"""
System Model Module

Immutable description of a hybrid stochastic delay system: the Markov generator,
per-mode drift/diffusion/control coefficients, the time-varying delay, growth
parameters, the initial history and the intermittent observation schedule.
All evaluation helpers are pure and vectorized over a leading batch axis.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, ValidationError

logger = logging.getLogger(__name__)

# Tolerance used when a time lands on a period or observation boundary.
_BOUNDARY_EPS = 1e-9

Monomial = Tuple[int, int]
BatchCallback = Callable[..., np.ndarray]


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """Transition-rate matrix of a continuous-time Markov chain on modes 1..N."""

    rates: np.ndarray

    def __post_init__(self) -> None:
        rates = np.array(self.rates, dtype=float)
        if rates.ndim != 2 or rates.shape[0] != rates.shape[1] or rates.shape[0] == 0:
            raise ValidationError(f"Generator must be a non-empty square matrix, got shape {rates.shape}")
        if not np.all(np.isfinite(rates)):
            raise ValidationError("Generator entries must be finite")

        off_diagonal = rates - np.diag(np.diag(rates))
        if np.any(off_diagonal < 0):
            raise ValidationError("Generator off-diagonal rates must be nonnegative")
        scale = 1.0 + float(np.max(np.abs(rates)))
        row_sums = rates.sum(axis=1)
        if np.any(np.abs(row_sums) > 1e-9 * scale):
            raise ValidationError(f"Generator rows must sum to zero, got {row_sums.tolist()}")

        # Rebuild the diagonal so rows sum to zero to rounding.
        rates = off_diagonal - np.diag(off_diagonal.sum(axis=1))
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @property
    def n_modes(self) -> int:
        return int(self.rates.shape[0])

    @property
    def min_diagonal(self) -> float:
        """Smallest diagonal entry, the ``min gamma_ii`` of the delta bound."""
        return float(np.min(np.diag(self.rates)))

    def exit_rate(self, mode: int) -> float:
        """Total rate of leaving ``mode`` (1-based)."""
        check_mode(mode, self.n_modes)
        return float(-self.rates[mode - 1, mode - 1])

    def stationary_distribution(self) -> np.ndarray:
        """
        Solve pi @ rates = 0 with sum(pi) = 1.

        Returns:
            Stationary probabilities, one per mode

        Raises:
            ValidationError: If the chain has no unique stationary distribution
        """
        n = self.n_modes
        system = np.vstack([self.rates.T, np.ones((1, n))])
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        pi, _, rank, _ = linalg.lstsq(system, rhs)
        if rank < n:
            raise ValidationError("Generator has no unique stationary distribution")
        return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


@dataclass(frozen=True)
class PolynomialMode:
    """Scalar coefficients of one mode as monomial tables in (x, y)."""

    drift: Mapping[Monomial, float]
    diffusion: Mapping[Monomial, float]
    control_gain: float

    def __post_init__(self) -> None:
        for name in ("drift", "diffusion"):
            table = {
                (int(a), int(b)): float(c) for (a, b), c in dict(getattr(self, name)).items()
            }
            if any(a < 0 or b < 0 for a, b in table):
                raise ValidationError(f"{name} powers must be nonnegative")
            if table.get((0, 0), 0.0) != 0.0:
                raise ValidationError(f"{name} must vanish at the origin (constant term found)")
            object.__setattr__(self, name, table)
        object.__setattr__(self, "control_gain", float(self.control_gain))


@dataclass(frozen=True, eq=False)
class PolynomialCoefficients:
    """Scalar per-mode polynomial coefficients, the form the certificate can bound."""

    modes: Tuple[PolynomialMode, ...]
    _drift_powers: np.ndarray = field(init=False, repr=False)
    _drift_table: np.ndarray = field(init=False, repr=False)
    _diffusion_powers: np.ndarray = field(init=False, repr=False)
    _diffusion_table: np.ndarray = field(init=False, repr=False)
    _gains: np.ndarray = field(init=False, repr=False)

    dim = 1
    noise_dim = 1

    def __post_init__(self) -> None:
        modes = tuple(self.modes)
        if not modes:
            raise ValidationError("At least one mode is required")
        object.__setattr__(self, "modes", modes)
        for name in ("drift", "diffusion"):
            powers = sorted({m for mode in modes for m in getattr(mode, name)})
            table = np.array(
                [[getattr(mode, name).get(m, 0.0) for m in powers] for mode in modes],
                dtype=float,
            ).reshape(len(modes), len(powers))
            object.__setattr__(self, f"_{name}_powers", np.array(powers, dtype=int).reshape(-1, 2))
            object.__setattr__(self, f"_{name}_table", table)
        object.__setattr__(self, "_gains", np.array([mode.control_gain for mode in modes]))

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    def mode(self, i: int) -> PolynomialMode:
        check_mode(i, self.n_modes)
        return self.modes[i - 1]

    @staticmethod
    def _evaluate(powers: np.ndarray, table: np.ndarray, x: np.ndarray, y: np.ndarray, modes: np.ndarray) -> np.ndarray:
        if powers.size == 0:
            return np.zeros_like(x)
        coefficients = table[modes - 1]
        terms = x[:, None] ** powers[:, 0] * y[:, None] ** powers[:, 1]
        return np.sum(coefficients * terms, axis=1)

    def drift(self, x: np.ndarray, y: np.ndarray, modes: np.ndarray, t: float) -> np.ndarray:
        value = self._evaluate(self._drift_powers, self._drift_table, x[:, 0], y[:, 0], modes)
        return value[:, None]

    def diffusion(self, x: np.ndarray, y: np.ndarray, modes: np.ndarray, t: float) -> np.ndarray:
        value = self._evaluate(self._diffusion_powers, self._diffusion_table, x[:, 0], y[:, 0], modes)
        return value[:, None, None]

    def control(self, z: np.ndarray, modes: np.ndarray, t: float) -> np.ndarray:
        return self._gains[modes - 1][:, None] * z

    def control_bound(self) -> float:
        """Smallest L with |u(x, i, t)| <= L|x| for every mode."""
        return float(np.max(np.abs(self._gains)))


@dataclass(frozen=True, eq=False)
class CallbackCoefficients:
    """
    Opaque n-dimensional coefficients for simulation only.

    Callbacks are batch functions: ``drift(x, y, modes, t)`` and
    ``control(z, modes, t)`` return arrays of shape (b, n) and
    ``diffusion(x, y, modes, t)`` returns shape (b, n, m), where x and y have
    shape (b, n) and modes holds 1-based mode indices of shape (b,).
    """

    drift_fn: BatchCallback
    diffusion_fn: BatchCallback
    n_modes: int = 1
    dim: int = 1
    noise_dim: int = 1
    control_fn: Optional[BatchCallback] = None

    def __post_init__(self) -> None:
        if self.n_modes < 1 or self.dim < 1 or self.noise_dim < 1:
            raise ValidationError("n_modes, dim and noise_dim must be positive")

    def drift(self, x: np.ndarray, y: np.ndarray, modes: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(self.drift_fn(x, y, modes, t), dtype=float).reshape(x.shape)

    def diffusion(self, x: np.ndarray, y: np.ndarray, modes: np.ndarray, t: float) -> np.ndarray:
        value = np.asarray(self.diffusion_fn(x, y, modes, t), dtype=float)
        return np.broadcast_to(value, (x.shape[0], self.dim, self.noise_dim))

    def control(self, z: np.ndarray, modes: np.ndarray, t: float) -> np.ndarray:
        if self.control_fn is None:
            return np.zeros_like(z)
        return np.asarray(self.control_fn(z, modes, t), dtype=float).reshape(z.shape)


ModeCoefficients = Union[PolynomialCoefficients, CallbackCoefficients]


@dataclass(frozen=True, eq=False)
class DelayFunction:
    """
    Time-varying delay h(t) with bounds h_lower <= h(t) <= h_upper.

    ``kind`` is one of ``constant`` (h = base), ``sawtooth``
    (h = base + amplitude * (-1)^k * (t - k*period) on the k-th period) or
    ``callback`` (h = func(t), vectorized).
    """

    kind: str
    base: float = 0.0
    amplitude: float = 0.0
    period: float = 1.0
    h_lower: Optional[float] = None
    h_upper: Optional[float] = None
    h_star: Optional[float] = None
    func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        if self.kind == "constant":
            lower = self.base if self.h_lower is None else self.h_lower
            upper = self.base if self.h_upper is None else self.h_upper
        elif self.kind == "sawtooth":
            if self.period <= 0:
                raise ValidationError(f"Sawtooth period must be positive, got {self.period}")
            swing = abs(self.amplitude) * self.period
            lower = self.base - swing if self.h_lower is None else self.h_lower
            upper = self.base + swing if self.h_upper is None else self.h_upper
        elif self.kind == "callback":
            if self.func is None or self.h_lower is None or self.h_upper is None:
                raise ValidationError("Callback delays need func, h_lower and h_upper")
            lower, upper = self.h_lower, self.h_upper
        else:
            raise ValidationError(f"Unknown delay kind: {self.kind}")

        if not 0 < lower <= upper:
            raise ValidationError(f"Delay bounds must satisfy 0 < h_lower <= h_upper, got ({lower}, {upper})")
        if self.h_star is not None and self.h_star < 1:
            raise ValidationError(f"h_star must be at least 1, got {self.h_star}")
        object.__setattr__(self, "h_lower", float(lower))
        object.__setattr__(self, "h_upper", float(upper))

    @property
    def tau(self) -> float:
        return float(self.h_upper)  # type: ignore[arg-type]

    def __call__(self, t: Union[float, np.ndarray]) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full_like(t, self.base)
        if self.kind == "sawtooth":
            k = np.floor(t / self.period)
            sign = np.where(np.mod(k, 2) == 0, 1.0, -1.0)
            return self.base + self.amplitude * sign * (t - k * self.period)
        return np.asarray(self.func(t), dtype=float)  # type: ignore[misc]


@dataclass(frozen=True)
class ControlSchedule:
    """Periodic control windows [nT, nT + theta) observed every delta time units."""

    period: float
    width: float
    obs_gap: float
    phase_start: int = 0

    def __post_init__(self) -> None:
        if not self.period > 0:
            raise ConfigurationError(f"Control period T must be positive, got {self.period}")
        if not 0 <= self.width <= self.period:
            raise ConfigurationError(f"Control width theta must lie in [0, T], got {self.width}")
        if not self.obs_gap > 0:
            raise ConfigurationError(f"Observation gap delta must be positive, got {self.obs_gap}")
        if self.width > 0 and self.obs_gap > self.width * (1 + _BOUNDARY_EPS):
            raise ConfigurationError(
                f"Observation gap delta={self.obs_gap} exceeds control width theta={self.width}"
            )
        if int(self.phase_start) != self.phase_start or self.phase_start < 0:
            raise ConfigurationError(f"phase_start must be a nonnegative integer, got {self.phase_start}")

    @property
    def duty_ratio(self) -> float:
        return self.width / self.period


@dataclass(frozen=True)
class GrowthParams:
    """Polynomial growth, Khasminskii and control-bound constants."""

    K: float
    p: float
    q: float
    q1: float
    q2: float
    q3: float
    q4: float
    alpha1: float
    alpha2: float
    L: float

    def check(self) -> List[str]:
        """
        Check the relations the growth constants must satisfy.

        Returns:
            Human-readable descriptions of every violated relation
        """
        problems = []
        for name in ("K", "p", "q", "q3", "q4", "alpha1", "L"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.alpha2 < 0:
            problems.append("alpha2 must be nonnegative")
        if self.q1 <= 1:
            problems.append("q1 must exceed 1")
        if self.q2 < 1:
            problems.append("q2 must be at least 1")
        q_max = max(self.q1, self.q2, self.q3, self.q4)
        q_floor = max(2 * q_max, self.p + self.q1 - 1)
        if not self.q > q_floor:
            problems.append(f"q={self.q} must exceed {q_floor}")
        p_floor = 2 * q_max - self.q1 + 1
        if self.p < p_floor:
            problems.append(f"p={self.p} must be at least {p_floor}")
        return problems


@dataclass(frozen=True, eq=False)
class InitialHistory:
    """Initial segment xi on [-tau, 0] plus the initial mode r0."""

    r0: int = 1
    constant: Optional[Sequence[float]] = None
    table_times: Optional[Sequence[float]] = None
    table_values: Optional[Sequence[Sequence[float]]] = None

    def __post_init__(self) -> None:
        if (self.constant is None) == (self.table_times is None):
            raise ValidationError("History needs exactly one of a constant or a table")
        if self.constant is not None:
            value = np.atleast_1d(np.asarray(self.constant, dtype=float))
            if not np.all(np.isfinite(value)):
                raise ValidationError("History values must be finite")
            object.__setattr__(self, "constant", value)
            return

        times = np.asarray(self.table_times, dtype=float)
        values = np.asarray(self.table_values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or len(times) < 2 or values.shape[0] != len(times):
            raise ValidationError("History table needs at least two (time, value) rows")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("History table times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValidationError("History values must be finite")
        object.__setattr__(self, "table_times", times)
        object.__setattr__(self, "table_values", values)

    @property
    def dim(self) -> int:
        if self.constant is not None:
            return int(len(self.constant))
        return int(self.table_values.shape[1])  # type: ignore[union-attr]

    def covers(self, tau: float) -> bool:
        if self.constant is not None:
            return True
        times = self.table_times
        return bool(times[0] <= -tau + _BOUNDARY_EPS and times[-1] >= -_BOUNDARY_EPS)  # type: ignore[index]

    def values_at(self, t: np.ndarray) -> np.ndarray:
        """History values of shape (len(t), dim) by linear interpolation."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if self.constant is not None:
            return np.tile(self.constant, (len(t), 1))
        columns = [
            np.interp(t, self.table_times, self.table_values[:, j])  # type: ignore[index]
            for j in range(self.dim)
        ]
        return np.stack(columns, axis=1)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Complete hybrid stochastic delay system."""

    generator: GeneratorMatrix
    coeffs: ModeCoefficients
    delay: DelayFunction
    history: InitialHistory
    growth: Optional[GrowthParams] = None
    name: str = "system"

    def __post_init__(self) -> None:
        if self.coeffs.n_modes != self.generator.n_modes:
            raise ValidationError(
                f"Coefficients define {self.coeffs.n_modes} modes but the generator has {self.generator.n_modes}"
            )
        check_mode(self.history.r0, self.n_modes)
        if self.history.dim != self.coeffs.dim:
            raise ValidationError(
                f"History dimension {self.history.dim} does not match state dimension {self.coeffs.dim}"
            )
        if not self.history.covers(self.delay.tau):
            raise ValidationError(f"History table must cover [-{self.delay.tau}, 0]")

    @property
    def n_modes(self) -> int:
        return self.generator.n_modes

    @property
    def dim(self) -> int:
        return self.coeffs.dim

    @property
    def noise_dim(self) -> int:
        return self.coeffs.noise_dim

    @property
    def is_polynomial(self) -> bool:
        return isinstance(self.coeffs, PolynomialCoefficients)

    @property
    def h_star(self) -> float:
        """Supplied delay-rate constant, or a numerical estimate when absent."""
        if self.delay.h_star is not None:
            return float(self.delay.h_star)
        horizon = 10 * max(self.delay.period, self.delay.tau)
        return h_star_estimate(self.delay, horizon=horizon)


def check_mode(mode: int, n_modes: int) -> None:
    """Raise ConfigurationError unless ``mode`` lies in 1..n_modes."""
    if int(mode) != mode or not 1 <= mode <= n_modes:
        raise ConfigurationError(f"Unknown mode {mode}; modes are 1..{n_modes}")


def _as_batch(value: Union[float, Sequence[float], np.ndarray], dim: int) -> np.ndarray:
    array = np.atleast_1d(np.asarray(value, dtype=float))
    if array.shape != (dim,):
        raise ConfigurationError(f"Expected a state of dimension {dim}, got shape {array.shape}")
    return array[None, :]


def eval_drift(
    spec: SystemSpec, x: Union[float, np.ndarray], y: Union[float, np.ndarray], i: int, t: float = 0.0
) -> np.ndarray:
    """Evaluate f(x, y, i, t) for a single state; returns shape (n,)."""
    check_mode(i, spec.n_modes)
    modes = np.array([i])
    return spec.coeffs.drift(_as_batch(x, spec.dim), _as_batch(y, spec.dim), modes, t)[0]


def eval_diffusion(
    spec: SystemSpec, x: Union[float, np.ndarray], y: Union[float, np.ndarray], i: int, t: float = 0.0
) -> np.ndarray:
    """Evaluate g(x, y, i, t) for a single state; returns shape (n, m)."""
    check_mode(i, spec.n_modes)
    modes = np.array([i])
    return spec.coeffs.diffusion(_as_batch(x, spec.dim), _as_batch(y, spec.dim), modes, t)[0]


def eval_control(spec: SystemSpec, z: Union[float, np.ndarray], j: int, t: float = 0.0) -> np.ndarray:
    """Evaluate u(z, j, t) for a single observed state; returns shape (n,)."""
    check_mode(j, spec.n_modes)
    return spec.coeffs.control(_as_batch(z, spec.dim), np.array([j]), t)[0]


def delay_at(spec: Union[SystemSpec, DelayFunction], t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Delay h(t); returns a float for scalar t."""
    delay = spec.delay if isinstance(spec, SystemSpec) else spec
    value = delay(t)
    return float(value) if np.ndim(value) == 0 else value


def indicator_at(schedule: ControlSchedule, t: Union[float, np.ndarray]) -> Union[int, np.ndarray]:
    """
    Intermittent control indicator I(t).

    I(t) = 1 iff t lies in [nT, nT + theta) for some period n >= phase_start.
    Returns an int for scalar t and an int array otherwise.
    """
    t_arr = np.asarray(t, dtype=float)
    n = np.floor(t_arr / schedule.period + _BOUNDARY_EPS)
    phase = t_arr - n * schedule.period
    on = (phase < schedule.width - _BOUNDARY_EPS * schedule.period) & (n >= schedule.phase_start)
    result = on.astype(int)
    return int(result) if result.ndim == 0 else result


def observation_time(schedule: ControlSchedule, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Last observation instant v(t) = floor(t / delta) * delta."""
    t_arr = np.asarray(t, dtype=float)
    value = np.floor(t_arr / schedule.obs_gap + _BOUNDARY_EPS) * schedule.obs_gap
    return float(value) if value.ndim == 0 else value


def h_star_estimate(
    delay: DelayFunction,
    horizon: float = 10.0,
    resolution: int = 200_000,
    method: str = "slope",
) -> float:
    """
    Estimate the delay-rate constant h* of t - h(t).

    The ``slope`` method returns the reciprocal of the smallest slope of
    t - h(t) over its continuous pieces, the closed form for piecewise-linear
    delays. The ``occupation`` method returns the largest occupation density
    of t - h(t) over windows a few grid steps wide, which also counts the
    back-folding caused by downward jumps.

    Args:
        delay: Delay function to inspect
        horizon: Length of the sampled time interval, several delay periods
        resolution: Number of grid intervals on [0, horizon]
        method: ``slope`` or ``occupation``

    Returns:
        Estimated h*

    Raises:
        ValidationError: If h(t) leaves [h_lower, h_upper] or t - h(t) is not increasing
    """
    if horizon <= 0 or resolution < 10:
        raise ConfigurationError("h* estimation needs a positive horizon and resolution >= 10")
    times = np.linspace(0.0, horizon, resolution + 1)
    values = delay(times)
    slack = 1e-9 * max(1.0, delay.tau)
    if np.any(values < delay.h_lower - slack) or np.any(values > delay.h_upper + slack):  # type: ignore[operator]
        raise ValidationError(f"Delay leaves [{delay.h_lower}, {delay.h_upper}] on [0, {horizon}]")
    if delay.kind == "constant":
        return 1.0

    lagged = times - values
    dt = times[1] - times[0]

    if method == "slope":
        slopes = np.diff(lagged) / dt
        # Intervals that straddle a jump disagree with both neighbours.
        agree = np.zeros(len(slopes), dtype=bool)
        tolerance = 1e-2 * np.maximum(1.0, np.abs(slopes))
        agree[1:] |= np.abs(np.diff(slopes)) <= tolerance[1:]
        agree[:-1] |= np.abs(np.diff(slopes)) <= tolerance[:-1]
        smooth = slopes[agree]
        if smooth.size == 0 or np.min(smooth) <= 0:
            raise ValidationError("t - h(t) must be increasing on its continuous pieces")
        estimate = float(1.0 / np.min(smooth))
    elif method == "occupation":
        width = 50 * dt
        edges = np.arange(lagged.min(), lagged.max() + width, width)
        counts, _ = np.histogram(lagged[:-1], bins=edges)
        # Drop the partially covered windows at both ends.
        density = counts[1:-1] * dt / width
        if density.size == 0:
            raise ConfigurationError("Horizon too short for an occupation estimate")
        estimate = float(np.max(density))
    else:
        raise ConfigurationError(f"Unknown h* estimation method: {method}")

    logger.debug(f"h* estimate ({method}) = {estimate:.6f} over horizon {horizon}")
    return max(estimate, 1.0)


def monomial_table(entries: Mapping[str, float]) -> Dict[Monomial, float]:
    """Convert ``{"a,b": c}`` keys into ``{(a, b): c}``."""
    table: Dict[Monomial, float] = {}
    for key, value in entries.items():
        try:
            a, b = (int(part) for part in str(key).split(","))
        except ValueError as exc:
            raise ConfigurationError(f"Monomial key must look like 'a,b', got {key!r}") from exc
        table[(a, b)] = float(value)
    return table
