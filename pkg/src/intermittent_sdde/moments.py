"""
Moments Module

Monte Carlo estimates of E|x(t)|^qbar, least-squares decay-rate fits on the
log scale and the comparison of fitted rates with a stability certificate.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .certify import StabilityCertificate
from .config import get_config
from .errors import EstimationError, FitError, ValidationError
from .model import ControlSchedule, SystemSpec
from .simulate import TamedEulerIntegrator, run_batches

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 10


@dataclass(frozen=True, eq=False)
class MomentSeries:
    """Ensemble moments on a decimated time grid; column j belongs to ``qbars[j]``."""

    times: np.ndarray
    qbars: Tuple[float, ...]
    moments: np.ndarray
    std_errors: np.ndarray
    n_paths: int
    exploded_fraction: np.ndarray

    def _column(self, qbar: float) -> int:
        for j, value in enumerate(self.qbars):
            if math.isclose(value, qbar):
                return j
        raise ValidationError(f"qbar={qbar} was not estimated; available: {list(self.qbars)}")

    def moment(self, qbar: float) -> np.ndarray:
        return self.moments[:, self._column(qbar)]

    def std_error(self, qbar: float) -> np.ndarray:
        return self.std_errors[:, self._column(qbar)]


@dataclass(frozen=True)
class RateFit:
    qbar: float
    t0: float
    t1: float
    slope: float
    intercept: float
    residual_rms: float
    n_points: int

    def to_dict(self) -> Dict:
        return {
            "qbar": self.qbar,
            "window": [self.t0, self.t1],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual_rms": self.residual_rms,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class RateComparison:
    """Fitted slope against the certified slope -((q - qbar)/(q - 2)) mu."""

    qbar: float
    empirical: float
    certified: Optional[float]
    status: str

    @property
    def flagged(self) -> bool:
        return self.status != "pass"

    def to_dict(self) -> Dict:
        return {"qbar": self.qbar, "slope": self.empirical, "certified": self.certified, "status": self.status}


def _check_qbars(spec: SystemSpec, qbars: Sequence[float]) -> Tuple[float, ...]:
    if not qbars:
        raise ValidationError("At least one moment order is required")
    upper = spec.growth.q if spec.growth is not None else math.inf
    for qbar in qbars:
        if not 2.0 <= qbar < upper:
            raise ValidationError(f"qbar={qbar} must lie in [2, {upper})")
    return tuple(float(qbar) for qbar in qbars)


def ensemble_moments(
    spec: SystemSpec,
    schedule: ControlSchedule,
    horizon: float,
    step: float,
    master_seed: int,
    n_paths: int,
    qbars: Sequence[float] = (2.0,),
    controlled: bool = True,
    workers: Optional[int] = None,
    batch_size: Optional[int] = None,
    max_rows: Optional[int] = None,
) -> MomentSeries:
    """
    Estimate E|x(t)|^qbar over ``n_paths`` independent paths.

    States are recorded on a decimated grid of at most ``max_rows`` rows. Each
    batch contributes partial sums that are merged in batch order, so the
    result does not depend on the worker count. Exploded paths are left out of
    the averages and counted in ``exploded_fraction``.

    Raises:
        ConfigurationError: If the run parameters are invalid
        EstimationError: If every path explodes before the horizon
    """
    qbars = _check_qbars(spec, qbars)
    max_rows = max_rows or get_config().MAX_OUTPUT_ROWS
    integrator = TamedEulerIntegrator(spec, schedule, horizon, step, controlled)
    record_every = max(1, math.ceil(integrator.n_steps / (max_rows - 1)))
    logger.info(
        f"Estimating moments {list(qbars)} from {n_paths} paths "
        f"({'controlled' if controlled else 'uncontrolled'}, recording every {record_every} steps)"
    )

    orders = np.array(qbars)
    sums = sums_sq = counts = None
    times = None
    for _, result in run_batches(integrator, master_seed, n_paths, record_every, workers, batch_size):
        norms = np.linalg.norm(result.states, axis=2)
        alive = np.isfinite(norms)
        powers = np.where(alive[..., None], np.where(alive, norms, 0.0)[..., None] ** orders, 0.0)
        batch_sums = powers.sum(axis=1)
        batch_sq = (powers ** 2).sum(axis=1)
        batch_counts = alive.sum(axis=1)
        if sums is None:
            sums, sums_sq, counts = batch_sums, batch_sq, batch_counts
            times = integrator.times[result.record_index]
        else:
            sums = sums + batch_sums
            sums_sq = sums_sq + batch_sq
            counts = counts + batch_counts

    if counts[-1] == 0:
        raise EstimationError(f"All {n_paths} paths exploded before t={integrator.horizon}")

    safe = np.maximum(counts, 1)[:, None]
    means = sums / safe
    variance = np.clip(sums_sq / safe - means ** 2, 0.0, None) * safe / np.maximum(safe - 1, 1)
    std_errors = np.sqrt(variance / safe)
    exploded_fraction = 1.0 - counts / n_paths
    if exploded_fraction[-1] > 0:
        logger.warning(f"{exploded_fraction[-1]:.2%} of paths exploded")
    return MomentSeries(times, qbars, means, std_errors, n_paths, exploded_fraction)


def fit_decay_rate(
    series: MomentSeries,
    qbar: float,
    window: Optional[Tuple[float, float]] = None,
) -> RateFit:
    """
    Least-squares slope of log E|x(t)|^qbar against t.

    Args:
        series: Moment series to fit
        qbar: Moment order
        window: Fit window (t0, t1); defaults to the last two-thirds of the series

    Raises:
        FitError: If the window is too short or holds a nonpositive moment
    """
    times = series.times
    if window is None:
        window = (times[0] + (times[-1] - times[0]) / 3.0, times[-1])
    t0, t1 = float(window[0]), float(window[1])
    if not t0 < t1:
        raise FitError(f"Fit window must satisfy t0 < t1, got ({t0}, {t1})")
    inside = (times >= t0 - 1e-12) & (times <= t1 + 1e-12)
    if inside.sum() < MIN_FIT_POINTS:
        raise FitError(f"Fit window [{t0}, {t1}] holds {int(inside.sum())} points, need {MIN_FIT_POINTS}")

    values = series.moment(qbar)[inside]
    if not np.all(np.isfinite(values) & (values > 0)):
        raise FitError(f"Moment of order {qbar} is not strictly positive on [{t0}, {t1}]")
    t = times[inside]
    log_values = np.log(values)
    fit = stats.linregress(t, log_values)
    residuals = log_values - (fit.intercept + fit.slope * t)
    rms = float(np.sqrt(np.mean(residuals ** 2)))
    logger.debug(f"Decay fit qbar={qbar} on [{t0}, {t1}]: slope={fit.slope:.6g}")
    return RateFit(float(qbar), t0, t1, float(fit.slope), float(fit.intercept), rms, int(inside.sum()))


def compare_to_certificate(
    fit: RateFit,
    certificate: StabilityCertificate,
    delta: Optional[float] = None,
    tolerance: float = 0.1,
) -> RateComparison:
    """
    Compare a fitted slope with the certified one.

    Decay faster than certified passes. Slower decay is flagged
    "outside certificate" when the run's observation gap ``delta`` exceeds
    the admissible one and "violation candidate" otherwise.
    """
    if not 2.0 <= fit.qbar < certificate.q:
        raise ValidationError(f"qbar={fit.qbar} must lie in [2, {certificate.q})")
    if certificate.mu is None:
        return RateComparison(fit.qbar, fit.slope, None, "not certified")
    certified = -(certificate.q - fit.qbar) / (certificate.q - 2.0) * certificate.mu
    if fit.slope <= certified * (1.0 - tolerance):
        status = "pass"
    elif not certificate.delta_bound.admits(certificate.delta if delta is None else delta):
        status = "outside certificate"
    else:
        status = "violation candidate"
    if status != "pass":
        logger.warning(f"Empirical slope {fit.slope:.6g} is slower than certified {certified:.6g}: {status}")
    return RateComparison(fit.qbar, fit.slope, certified, status)


def classify_decay(
    series: MomentSeries,
    qbar: float,
    floor: float = 0.05,
    window: Optional[Tuple[float, float]] = None,
) -> RateComparison:
    """Label a series "decay" when its fitted slope lies below -floor, else "no decay"."""
    fit = fit_decay_rate(series, qbar, window)
    status = "decay" if fit.slope < -floor else "no decay"
    return RateComparison(fit.qbar, fit.slope, None, status)
