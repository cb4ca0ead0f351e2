"""
Certificate Module

Computes and verifies the exponential-stability certificate of the controlled
system: M-matrix weights, the zeta constants, grid checks of the dissipativity
inequalities, the moment-boundedness constants, the admissible observation gap,
the C1..C5 constant chain and the certified decay rate, including the choice of
epsilon that maximizes it.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from .config import get_config
from .errors import CertificateError, ConfigurationError, UnsupportedModelError, ValidationError
from .model import (
    ControlSchedule,
    GeneratorMatrix,
    GrowthParams,
    PolynomialCoefficients,
    PolynomialMode,
    SystemSpec,
)

logger = logging.getLogger(__name__)

_PENALTY = 1e12

Residual = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class CheckGrid:
    """Box [-radius, radius]^2 sampled at ``resolution`` points per axis plus far-field rays."""

    radius: float
    resolution: int
    far_radius: float
    directions: int
    rtol: float
    atol: float

    @classmethod
    def from_config(cls, radius: Optional[float] = None, resolution: Optional[int] = None) -> "CheckGrid":
        config = get_config()
        return cls(
            radius=config.GRID_RADIUS if radius is None else float(radius),
            resolution=config.GRID_RESOLUTION if resolution is None else int(resolution),
            far_radius=config.ASYMPTOTIC_RADIUS,
            directions=config.ASYMPTOTIC_DIRECTIONS,
            rtol=config.CHECK_RTOL,
            atol=config.CHECK_ATOL,
        )


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one inequality LHS <= RHS checked on a grid."""

    name: str
    passed: bool
    worst_excess: float
    worst_point: Tuple[float, ...]
    asymptotic_passed: bool = True
    asymptotic_worst: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_excess": self.worst_excess,
            "worst_point": list(self.worst_point),
            "asymptotic_passed": self.asymptotic_passed,
            "asymptotic_worst": self.asymptotic_worst,
        }


@dataclass(frozen=True)
class ConditionReport:
    """A named group of grid checks."""

    name: str
    checks: Tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def worst_excess(self) -> float:
        return max((check.worst_excess for check in self.checks), default=0.0)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "worst_excess": self.worst_excess,
            "checks": [check.to_dict() for check in self.checks],
        }


@dataclass(frozen=True)
class DissipativityData:
    """
    Per-mode constants of the two dissipativity inequalities.

    Row 1 bounds x(f+u) + |g|^2/2 and row 2 bounds x(f+u) + q1|g|^2/2 by
    k|x|^2 + l|y|^2 - beta|x|^p + g|y|^p. ``g1``/``g2`` avoid clashing with the
    generator entries.
    """

    k1: Tuple[float, ...]
    l1: Tuple[float, ...]
    beta1: Tuple[float, ...]
    g1: Tuple[float, ...]
    k2: Tuple[float, ...]
    l2: Tuple[float, ...]
    beta2: Tuple[float, ...]
    g2: Tuple[float, ...]

    def __post_init__(self) -> None:
        lengths = set()
        for name in ("k1", "l1", "beta1", "g1", "k2", "l2", "beta2", "g2"):
            values = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, values)
            lengths.add(len(values))
            if name[0] != "k" and any(v < 0 for v in values):
                raise ValidationError(f"Condition constants {name} must be nonnegative")
        if len(lengths) != 1:
            raise ValidationError("Condition constants must have one entry per mode")

    @property
    def n_modes(self) -> int:
        return len(self.k1)

    def row(self, j: int, i: int) -> Tuple[float, float, float, float]:
        """(k, l, beta, g) of row j in {1, 2} for mode i (1-based)."""
        names = ("k1", "l1", "beta1", "g1") if j == 1 else ("k2", "l2", "beta2", "g2")
        return tuple(getattr(self, name)[i - 1] for name in names)  # type: ignore[return-value]

    def to_dict(self) -> Dict:
        return {name: list(getattr(self, name)) for name in ("k1", "l1", "beta1", "g1", "k2", "l2", "beta2", "g2")}


@dataclass(frozen=True)
class ControlWindowData:
    """Tuning constants gamma1..gamma8, gamma4'..gamma6' and W(x) = sum c|x|^k."""

    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: float
    gamma5: float
    gamma6: float
    gamma7: float
    gamma8: float
    gamma4p: float
    gamma5p: float
    gamma6p: float
    w_terms: Tuple[Tuple[float, float], ...]

    def __post_init__(self) -> None:
        for name in ("gamma1", "gamma2", "gamma3", "gamma4", "gamma5", "gamma6", "gamma7", "gamma8",
                     "gamma4p", "gamma5p", "gamma6p"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        terms = tuple((float(k), float(c)) for k, c in self.w_terms)
        if not terms or any(c < 0 for _, c in terms):
            raise ValidationError("W needs at least one term with nonnegative coefficients")
        object.__setattr__(self, "w_terms", terms)

    @property
    def gamma_bar(self) -> float:
        return 2.0 * max(self.gamma5, self.gamma6, self.gamma5p, self.gamma6p)

    def W(self, x: np.ndarray) -> np.ndarray:
        magnitude = np.abs(x)
        return sum(c * magnitude ** k for k, c in self.w_terms) + np.zeros_like(magnitude)

    def replace(self, **changes: float) -> "ControlWindowData":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return ControlWindowData(**values)

    def to_dict(self) -> Dict:
        values = {name: getattr(self, name) for name in self.__dataclass_fields__ if name != "w_terms"}
        values["W"] = [{"power": k, "coefficient": c} for k, c in self.w_terms]
        values["gamma_bar"] = self.gamma_bar
        return values


@dataclass(frozen=True, eq=False)
class ModeWeights:
    """Solutions of A1 theta = 1 and A2 theta_bar = 1 and their extremes."""

    a1_matrix: np.ndarray
    a2_matrix: np.ndarray
    theta: np.ndarray
    theta_bar: np.ndarray

    @property
    def a1(self) -> float:
        return float(np.min(self.theta))

    @property
    def a2(self) -> float:
        return float(np.max(self.theta))

    @property
    def a3(self) -> float:
        return float(np.max(self.theta_bar))

    def to_dict(self) -> Dict:
        return {
            "A1": self.a1_matrix.tolist(),
            "A2": self.a2_matrix.tolist(),
            "theta": self.theta.tolist(),
            "theta_bar": self.theta_bar.tolist(),
            "a1": self.a1,
            "a2": self.a2,
            "a3": self.a3,
        }


@dataclass(frozen=True)
class Inequality:
    """A scalar requirement lhs > rhs."""

    expression: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs > self.rhs

    def to_dict(self) -> Dict:
        return {"expression": self.expression, "lhs": self.lhs, "rhs": self.rhs, "passed": self.passed}


@dataclass(frozen=True)
class ZetaConstants:
    zeta: Tuple[float, float, float, float, float, float]
    inequalities: Tuple[Inequality, ...]

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.inequalities)

    def to_dict(self) -> Dict:
        values: Dict = {f"zeta{i + 1}": z for i, z in enumerate(self.zeta)}
        values["inequalities"] = [item.to_dict() for item in self.inequalities]
        values["passed"] = self.passed
        return values


@dataclass(frozen=True)
class BoundednessCertificate:
    """Moment-boundedness condition, its constants and the recursion contraction."""

    condition: bool
    margin: float
    alpha_bar1: float
    alpha_bar2: float
    lam: Optional[float] = None
    residual: Optional[float] = None
    contraction: Optional[float] = None

    @property
    def contraction_ok(self) -> Optional[bool]:
        return None if self.contraction is None else self.contraction < 1.0

    def to_dict(self) -> Dict:
        return {
            "condition": self.condition,
            "margin": self.margin,
            "alpha_bar1": self.alpha_bar1,
            "alpha_bar2": self.alpha_bar2,
            "lambda": self.lam,
            "residual": self.residual,
            "contraction": self.contraction,
            "contraction_ok": self.contraction_ok,
        }


@dataclass(frozen=True)
class DeltaBound:
    terms: Tuple[float, float, float]

    @property
    def value(self) -> float:
        return min(self.terms)

    @property
    def binding(self) -> int:
        """1-based index of the smallest term."""
        return int(np.argmin(self.terms)) + 1

    def admits(self, delta: float) -> bool:
        return 0 < delta < self.value

    def to_dict(self) -> Dict:
        return {"terms": list(self.terms), "delta_max": self.value, "binding_term": self.binding}


@dataclass(frozen=True)
class CertificateInputs:
    """Everything the C-constant chain depends on besides epsilon and delta."""

    a2: float
    a3: float
    gamma1: float
    gamma4: float
    gamma5: float
    gamma6: float
    gamma7: float
    gamma4p: float
    gamma5p: float
    gamma6p: float
    L: float
    min_diagonal: float
    tau: float
    h_star: float


@dataclass(frozen=True)
class CConstants:
    epsilon: float
    delta: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    epsilon_cap: float
    failures: Tuple[str, ...]

    @property
    def feasible(self) -> bool:
        return not self.failures

    @property
    def c_min(self) -> float:
        return min(self.c1, self.c2, self.c3)

    def to_dict(self) -> Dict:
        return {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "C1": self.c1,
            "C2": self.c2,
            "C3": self.c3,
            "C4": self.c4,
            "C5": self.c5,
            "C1_C2_C3_min": self.c_min,
            "epsilon_cap": self.epsilon_cap,
            "feasible": self.feasible,
            "failures": list(self.failures),
        }


@dataclass(frozen=True)
class RateResult:
    theta_threshold: float
    mu: Optional[float]

    @property
    def certified(self) -> bool:
        return self.mu is not None


@dataclass(frozen=True)
class EpsilonOptimum:
    epsilon: float
    mu: float
    constants: CConstants
    theta_threshold: float

    def to_dict(self) -> Dict:
        return {"epsilon": self.epsilon, "mu": self.mu, "theta_threshold": self.theta_threshold}


@dataclass(frozen=True, eq=False)
class GronwallResult:
    status: str
    bound: float
    max_ratio: float
    sequence: np.ndarray = field(repr=False)

    @property
    def holds(self) -> Optional[bool]:
        return None if self.status == "inconclusive" else self.status == "holds"


@dataclass(frozen=True)
class GrowthReport:
    """Smallest growth constants seen on the grid and whether every monomial is bounded."""

    k_drift: float
    k_diffusion: float
    unbounded_terms: Tuple[str, ...]

    @property
    def passed(self) -> bool:
        return not self.unbounded_terms

    def to_dict(self) -> Dict:
        return {
            "k_drift": self.k_drift,
            "k_diffusion": self.k_diffusion,
            "unbounded_terms": list(self.unbounded_terms),
            "passed": self.passed,
        }


@dataclass
class StabilityCertificate:
    """The complete certificate for one system, schedule and observation gap."""

    period: float
    theta: float
    delta: float
    h_star: float
    tau: float
    q: float
    grid: CheckGrid
    dissipation: DissipativityData
    control_windows: ControlWindowData
    weights: ModeWeights
    zeta: ZetaConstants
    growth_violations: List[str]
    growth_report: GrowthReport
    control_bound: CheckResult
    khasminskii: ConditionReport
    dissipativity: ConditionReport
    intermittent: ConditionReport
    gamma_margin: Inequality
    boundedness: BoundednessCertificate
    delta_bound: DeltaBound
    constants: CConstants
    rate: RateResult
    optimum: Optional[EpsilonOptimum]
    rate_table: Dict[float, float]
    rate_curve: List[Tuple[float, Optional[float]]]

    @property
    def epsilon(self) -> float:
        return self.constants.epsilon

    @property
    def mu(self) -> Optional[float]:
        return self.rate.mu

    @property
    def delta_max(self) -> float:
        return self.delta_bound.value

    @property
    def reasons(self) -> List[str]:
        """Every reason the certificate does not hold; empty when it does."""
        reasons = [f"growth parameters: {problem}" for problem in self.growth_violations]
        if not self.growth_report.passed:
            reasons.append(f"polynomial growth: unbounded terms {', '.join(self.growth_report.unbounded_terms)}")
        if not self.control_bound.passed:
            reasons.append(f"control gain exceeds L (excess {self.control_bound.worst_excess:.6g})")
        for report in (self.khasminskii, self.dissipativity, self.intermittent):
            for check in report.checks:
                if not check.passed:
                    reasons.append(f"{check.name} fails (worst excess {check.worst_excess:.6g})")
        for inequality in self.zeta.inequalities + (self.gamma_margin,):
            if not inequality.passed:
                reasons.append(f"{inequality.expression} fails ({inequality.lhs:.6g} <= {inequality.rhs:.6g})")
        if not self.boundedness.condition:
            reasons.append(f"moment boundedness condition fails (margin {self.boundedness.margin:.6g})")
        if not self.delta_bound.admits(self.delta):
            reasons.append(f"δ={self.delta:g} exceeds δ_max={self.delta_max:.6g}")
        reasons.extend(self.constants.failures)
        if self.constants.feasible and not self.rate.certified:
            reasons.append(f"θ={self.theta:g} ≤ θ_threshold {self.rate.theta_threshold:.4f}")
        return reasons

    @property
    def passed(self) -> bool:
        return not self.reasons

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "reasons": self.reasons,
            "schedule": {"T": self.period, "theta": self.theta, "delta": self.delta},
            "h_star": self.h_star,
            "tau": self.tau,
            "grid": {"radius": self.grid.radius, "resolution": self.grid.resolution,
                     "far_radius": self.grid.far_radius, "directions": self.grid.directions},
            "growth_violations": self.growth_violations,
            "growth": self.growth_report.to_dict(),
            "control_bound": self.control_bound.to_dict(),
            "dissipation": self.dissipation.to_dict(),
            "weights": self.weights.to_dict(),
            "zeta": self.zeta.to_dict(),
            "khasminskii": self.khasminskii.to_dict(),
            "dissipativity": self.dissipativity.to_dict(),
            "control_windows": self.control_windows.to_dict(),
            "intermittent": self.intermittent.to_dict(),
            "gamma_margin": self.gamma_margin.to_dict(),
            "boundedness": self.boundedness.to_dict(),
            "delta_bound": self.delta_bound.to_dict(),
            "delta_admissible": self.delta_bound.admits(self.delta),
            "constants": self.constants.to_dict(),
            "theta_threshold": self.rate.theta_threshold,
            "mu": self.rate.mu,
            "optimum": None if self.optimum is None else self.optimum.to_dict(),
            "rate_table": [{"qbar": qbar, "rate": rate} for qbar, rate in self.rate_table.items()],
            "rate_curve": [{"theta": theta, "mu": mu} for theta, mu in self.rate_curve],
        }


# --- M-matrix weights --------------------------------------------------------


def is_nonsingular_m_matrix(matrix: np.ndarray) -> bool:
    """
    Test whether a matrix is a nonsingular M-matrix.

    A Z-matrix (nonpositive off-diagonal entries) is a nonsingular M-matrix
    iff all its leading principal minors are positive.
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"M-matrix test needs a square matrix, got shape {matrix.shape}")
    off_diagonal = matrix - np.diag(np.diag(matrix))
    if np.any(off_diagonal > 0):
        return False
    return all(linalg.det(matrix[:k, :k]) > 0 for k in range(1, matrix.shape[0] + 1))


def solve_weights(matrix: np.ndarray) -> np.ndarray:
    """Solve A theta = (1, ..., 1) for a nonsingular M-matrix A."""
    matrix = np.asarray(matrix, dtype=float)
    if not is_nonsingular_m_matrix(matrix):
        raise CertificateError("Weight matrix is not a nonsingular M-matrix")
    weights = linalg.solve(matrix, np.ones(matrix.shape[0]))
    if np.any(weights <= 0):
        raise CertificateError(f"Weights are not positive: {weights.tolist()}")
    return weights


def solve_mode_weights(dissipation: DissipativityData, generator: GeneratorMatrix, q1: float) -> ModeWeights:
    """Build A1 = -2 diag(k1) - Gamma and A2 = -(q1+1) diag(k2) - Gamma and solve both."""
    if dissipation.n_modes != generator.n_modes:
        raise ValidationError("Condition constants and generator disagree on the number of modes")
    a1_matrix = -2.0 * np.diag(dissipation.k1) - generator.rates
    a2_matrix = -(q1 + 1.0) * np.diag(dissipation.k2) - generator.rates
    weights = ModeWeights(a1_matrix, a2_matrix, solve_weights(a1_matrix), solve_weights(a2_matrix))
    logger.info(f"Mode weights theta={weights.theta.round(6).tolist()} theta_bar={weights.theta_bar.round(6).tolist()}")
    return weights


def zeta_constants(
    dissipation: DissipativityData, weights: ModeWeights, q1: float, p: float, h_star: float
) -> ZetaConstants:
    """Compute zeta1..zeta6 and the four inequalities they must satisfy."""
    theta, theta_bar = weights.theta, weights.theta_bar
    zeta = (
        2.0 * float(np.max(theta * np.array(dissipation.l1))),
        2.0 * float(np.min(theta * np.array(dissipation.beta1))),
        2.0 * float(np.max(theta * np.array(dissipation.g1))),
        (q1 + 1.0) * float(np.max(theta_bar * np.array(dissipation.l2))),
        (q1 + 1.0) * float(np.min(theta_bar * np.array(dissipation.beta2))),
        (q1 + 1.0) * float(np.max(theta_bar * np.array(dissipation.g2))),
    )
    z1, z2, z3, z4, z5, z6 = zeta
    inequalities = (
        Inequality("1 > h*·zeta1", 1.0, h_star * z1),
        Inequality("zeta2 > h*·zeta3", z2, h_star * z3),
        Inequality("1 > zeta4·(q1-1+2h*)/(q1+1)", 1.0, z4 * (q1 - 1.0 + 2.0 * h_star) / (q1 + 1.0)),
        Inequality("zeta5 > zeta6·(q1+p·h*)/(p+q1-1)", z5, z6 * (q1 + p * h_star) / (p + q1 - 1.0)),
    )
    return ZetaConstants(zeta, inequalities)


# --- grid checks -------------------------------------------------------------


def _poly(table: Dict[Tuple[int, int], float], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return sum(c * x ** a * y ** b for (a, b), c in table.items()) + np.zeros_like(x)


def _mode_terms(mode: PolynomialMode, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _poly(mode.drift, x, y), _poly(mode.diffusion, x, y), mode.control_gain * x  # type: ignore[arg-type]


def _grid_check(name: str, residual: Residual, grid: CheckGrid, planar: bool = True) -> CheckResult:
    axis = np.linspace(-grid.radius, grid.radius, grid.resolution)
    if planar:
        x, y = np.meshgrid(axis, axis, indexing="ij")
        angles = np.linspace(0.0, 2.0 * np.pi, grid.directions, endpoint=False)
        far_x, far_y = grid.far_radius * np.cos(angles), grid.far_radius * np.sin(angles)
    else:
        x, y = axis, np.zeros_like(axis)
        far_x, far_y = np.array([-grid.far_radius, grid.far_radius]), np.zeros(2)

    lhs, rhs = residual(x, y)
    excess = lhs - rhs
    violated = excess > grid.atol + grid.rtol * (np.abs(lhs) + np.abs(rhs))
    worst = np.unravel_index(int(np.argmax(excess)), excess.shape)
    point = (float(x[worst]), float(y[worst])) if planar else (float(x[worst]),)

    # Far field: the sign of the leading homogeneous part decides.
    far_lhs, far_rhs = residual(far_x, far_y)
    normalized = (far_lhs - far_rhs) / (np.abs(far_lhs) + np.abs(far_rhs) + 1e-300)
    far_worst = float(np.max(normalized))
    asymptotic_passed = far_worst <= 1e-6

    result = CheckResult(
        name=name,
        passed=bool(not np.any(violated) and asymptotic_passed),
        worst_excess=float(excess[worst]),
        worst_point=point,
        asymptotic_passed=asymptotic_passed,
        asymptotic_worst=far_worst,
    )
    if not result.passed:
        logger.warning(f"Check {name} failed: worst excess {result.worst_excess:.6g} at {point}")
    else:
        logger.debug(f"Check {name} passed: worst excess {result.worst_excess:.6g}")
    return result


def _require_polynomial(spec: SystemSpec) -> PolynomialCoefficients:
    if not isinstance(spec.coeffs, PolynomialCoefficients):
        raise UnsupportedModelError("Certificate checks need a scalar polynomial coefficient model")
    return spec.coeffs


def _require_growth(spec: SystemSpec, growth: Optional[GrowthParams]) -> GrowthParams:
    growth = growth or spec.growth
    if growth is None:
        raise ConfigurationError("Growth parameters are required for certificate checks")
    return growth


def verify_dissipativity(
    spec: SystemSpec,
    dissipation: DissipativityData,
    grid: Optional[CheckGrid] = None,
    growth: Optional[GrowthParams] = None,
) -> ConditionReport:
    """
    Grid-check both dissipativity inequalities of every controlled mode.

    Row j of mode i requires
    x(f + u) + c_j |g|^2 <= k_ji|x|^2 + l_ji|y|^2 - beta_ji|x|^p + g_ji|y|^p
    with c_1 = 1/2 and c_2 = q1/2.
    """
    coeffs = _require_polynomial(spec)
    growth = _require_growth(spec, growth)
    grid = grid or CheckGrid.from_config()
    if dissipation.n_modes != coeffs.n_modes:
        raise ValidationError("Condition constants must have one entry per mode")

    checks = []
    for i, mode in enumerate(coeffs.modes, start=1):
        for j, factor in ((1, 0.5), (2, 0.5 * growth.q1)):
            k, l, beta, g_coef = dissipation.row(j, i)

            def residual(
                x: np.ndarray, y: np.ndarray, mode: PolynomialMode = mode, factor: float = factor,
                k: float = k, l: float = l, beta: float = beta, g_coef: float = g_coef,
            ) -> Tuple[np.ndarray, np.ndarray]:
                f, g, u = _mode_terms(mode, x, y)
                lhs = x * (f + u) + factor * g ** 2
                rhs = k * x ** 2 + l * y ** 2 - beta * np.abs(x) ** growth.p + g_coef * np.abs(y) ** growth.p
                return lhs, rhs

            checks.append(_grid_check(f"dissipativity row {j} mode {i}", residual, grid))
    return ConditionReport("dissipativity", tuple(checks))


def verify_khasminskii(
    spec: SystemSpec, grid: Optional[CheckGrid] = None, growth: Optional[GrowthParams] = None
) -> ConditionReport:
    """Grid-check x f + (q-1)/2 |g|^2 <= K(|x|^2 + |y|^2) - alpha1|x|^p + alpha2|y|^p per mode."""
    coeffs = _require_polynomial(spec)
    growth = _require_growth(spec, growth)
    grid = grid or CheckGrid.from_config()

    checks = []
    for i, mode in enumerate(coeffs.modes, start=1):

        def residual(x: np.ndarray, y: np.ndarray, mode: PolynomialMode = mode) -> Tuple[np.ndarray, np.ndarray]:
            f, g, _ = _mode_terms(mode, x, y)
            lhs = x * f + 0.5 * (growth.q - 1.0) * g ** 2
            rhs = (growth.K * (x ** 2 + y ** 2) - growth.alpha1 * np.abs(x) ** growth.p
                   + growth.alpha2 * np.abs(y) ** growth.p)
            return lhs, rhs

        checks.append(_grid_check(f"khasminskii mode {i}", residual, grid))
    return ConditionReport("khasminskii", tuple(checks))


def verify_control_windows(
    spec: SystemSpec,
    weights: ModeWeights,
    windows: ControlWindowData,
    grid: Optional[CheckGrid] = None,
    growth: Optional[GrowthParams] = None,
) -> ConditionReport:
    """
    Grid-check the intermittent-control inequalities and the W sandwich.

    On control windows:
        LU + gamma1 (2 theta_i|x| + (q1+1) theta_bar_i|x|^q1)^2 + gamma2|f|^2 + gamma3|g|^2
            <= -gamma4|x|^2 + gamma5|y|^2 - W(x) + gamma6 W(y)
    Off control windows:
        L'U <= gamma4'|x|^2 + gamma5'|y|^2 - W(x) + gamma6' W(y)
    and gamma7|x|^(q1+p-1) <= W(x) <= gamma8(|x|^2 + |x|^(q1+p-1)).
    """
    coeffs = _require_polynomial(spec)
    growth = _require_growth(spec, growth)
    grid = grid or CheckGrid.from_config()
    q1, p = growth.q1, growth.p
    rates = spec.generator.rates
    theta, theta_bar = weights.theta, weights.theta_bar

    checks = []
    for i, mode in enumerate(coeffs.modes, start=1):
        th, thb = theta[i - 1], theta_bar[i - 1]
        switching_quadratic = float(rates[i - 1] @ theta)
        switching_power = float(rates[i - 1] @ theta_bar)

        def generator_terms(x: np.ndarray, y: np.ndarray, controlled: bool, mode: PolynomialMode = mode,
                            th: float = th, thb: float = thb, sq: float = switching_quadratic,
                            sp: float = switching_power) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
            f, g, u = _mode_terms(mode, x, y)
            push = x * (f + u) if controlled else x * f
            ax = np.abs(x)
            value = (2.0 * th * (push + 0.5 * g ** 2)
                     + (q1 + 1.0) * thb * ax ** (q1 - 1.0) * (push + 0.5 * q1 * g ** 2)
                     + sq * x ** 2 + sp * ax ** (q1 + 1.0))
            return value, f, g

        def on_window(x: np.ndarray, y: np.ndarray, th: float = th, thb: float = thb,
                      terms: Callable = generator_terms) -> Tuple[np.ndarray, np.ndarray]:
            lu, f, g = terms(x, y, True)
            ax = np.abs(x)
            lhs = (lu + windows.gamma1 * (2.0 * th * ax + (q1 + 1.0) * thb * ax ** q1) ** 2
                   + windows.gamma2 * f ** 2 + windows.gamma3 * g ** 2)
            rhs = -windows.gamma4 * x ** 2 + windows.gamma5 * y ** 2 - windows.W(x) + windows.gamma6 * windows.W(y)
            return lhs, rhs

        def off_window(
            x: np.ndarray, y: np.ndarray, terms: Callable = generator_terms
        ) -> Tuple[np.ndarray, np.ndarray]:
            lhs, _, _ = terms(x, y, False)
            rhs = windows.gamma4p * x ** 2 + windows.gamma5p * y ** 2 - windows.W(x) + windows.gamma6p * windows.W(y)
            return lhs, rhs

        checks.append(_grid_check(f"controlled window mode {i}", on_window, grid))
        checks.append(_grid_check(f"uncontrolled window mode {i}", off_window, grid))

    exponent = q1 + p - 1.0

    def w_lower(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return windows.gamma7 * np.abs(x) ** exponent, windows.W(x)

    def w_upper(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return windows.W(x), windows.gamma8 * (x ** 2 + np.abs(x) ** exponent)

    checks.append(_grid_check("W lower bound", w_lower, grid, planar=False))
    checks.append(_grid_check("W upper bound", w_upper, grid, planar=False))
    return ConditionReport("intermittent", tuple(checks))


def verify_growth(
    spec: SystemSpec, growth: Optional[GrowthParams] = None, grid: Optional[CheckGrid] = None
) -> GrowthReport:
    """
    Check the polynomial growth of drift and diffusion.

    Every monomial |x|^a|y|^b must satisfy a/q1 + b/q2 <= 1 (drift, q3/q4 for
    diffusion) to be dominated at infinity. The smallest constants K with
    |f| <= K(|x| + |y| + |x|^q1 + |y|^q2) and the analogue for g on the grid
    are reported.
    """
    coeffs = _require_polynomial(spec)
    growth = _require_growth(spec, growth)
    grid = grid or CheckGrid.from_config()
    axis = np.linspace(-grid.radius, grid.radius, grid.resolution)
    x, y = np.meshgrid(axis, axis, indexing="ij")
    ax, ay = np.abs(x), np.abs(y)
    away = (ax + ay) > 0

    unbounded = []
    k_drift = k_diffusion = 0.0
    for i, mode in enumerate(coeffs.modes, start=1):
        for label, table, qa, qb in (("drift", mode.drift, growth.q1, growth.q2),
                                     ("diffusion", mode.diffusion, growth.q3, growth.q4)):
            for (a, b), c in table.items():
                if c != 0 and a / qa + b / qb > 1.0 + 1e-12:
                    unbounded.append(f"{label} mode {i} x^{a} y^{b}")
        f, g, _ = _mode_terms(mode, x, y)
        k_drift = max(k_drift, float(np.max(np.abs(f)[away] / (ax + ay + ax ** growth.q1 + ay ** growth.q2)[away])))
        scale = (ax + ay + ax ** growth.q3 + ay ** growth.q4)[away]
        k_diffusion = max(k_diffusion, float(np.max(np.abs(g)[away] / scale)))
    return GrowthReport(k_drift, k_diffusion, tuple(unbounded))


def verify_control_bound(spec: SystemSpec, L: float) -> CheckResult:
    """Exact check of |u(x, i, t)| <= L|x| for linear control gains."""
    coeffs = _require_polynomial(spec)
    gains = np.abs([mode.control_gain for mode in coeffs.modes])
    worst = int(np.argmax(gains))
    excess = float(gains[worst] - L)
    return CheckResult("control bound", excess <= 0, excess, (float(worst + 1),))


# --- scalar constants --------------------------------------------------------


def boundedness_certificate(
    growth: GrowthParams,
    h_star: float,
    tau: float,
    delta: Optional[float] = None,
) -> BoundednessCertificate:
    """
    Evaluate the moment-boundedness condition and solve for its rate lambda.

    The condition is alpha1 - alpha2 (q - 2 + p h*)/(p + q - 2) > 0. When it holds,
    lambda > 0 solves alpha_bar1 - lambda = h* e^(lambda tau)(alpha_bar2 + lambda)
    by bisection. With ``delta`` the contraction e^(-lambda delta)(1 + alpha),
    alpha = L delta (e^(lambda delta) - 1)/lambda, of the discrete recursion is reported.
    """
    p, q = growth.p, growth.q
    margin = growth.alpha1 - growth.alpha2 * (q - 2.0 + p * h_star) / (p + q - 2.0)
    alpha_bar1 = q * growth.alpha1 - growth.alpha2 * q * (q - 2.0) / (p + q - 2.0)
    alpha_bar2 = growth.alpha2 * p * q / (p + q - 2.0)
    if margin <= 0:
        logger.warning(f"Moment boundedness condition fails with margin {margin:.6g}")
        return BoundednessCertificate(False, margin, alpha_bar1, alpha_bar2)

    def equation(lam: float) -> float:
        return alpha_bar1 - lam - h_star * math.exp(lam * tau) * (alpha_bar2 + lam)

    lam = optimize.bisect(equation, 0.0, alpha_bar1, xtol=1e-14)
    residual = abs(equation(lam))
    contraction = None
    if delta is not None:
        alpha = growth.L * delta * math.expm1(lam * delta) / lam
        contraction = math.exp(-lam * delta) * (1.0 + alpha)
    logger.info(f"Moment boundedness: margin={margin:.6g}, lambda={lam:.8g}")
    return BoundednessCertificate(True, margin, alpha_bar1, alpha_bar2, lam, residual, contraction)


def delta_bound(
    L: float,
    gamma1: float,
    gamma2: float,
    gamma3: float,
    min_diagonal: float,
    gamma4: float,
    gamma_bar: float,
    h_star: float,
) -> DeltaBound:
    """
    Largest admissible observation gap.

    Returns the three terms sqrt(gamma1 gamma2)/(2L), gamma1 gamma3/(2L^2) and
    [m + sqrt(m^2 + 16L^4 (L^2 ∧ gamma1(gamma4 - gamma_bar h*)))]/(16L^4) with
    m = min gamma_ii; delta must lie strictly below their minimum.
    """
    if min(L, gamma1, gamma2, gamma3, h_star) <= 0:
        raise ValidationError("L, gamma1, gamma2, gamma3 and h* must be positive")
    if min_diagonal > 0:
        raise ValidationError("The smallest generator diagonal entry cannot be positive")
    margin = gamma4 - gamma_bar * h_star
    if margin <= 0:
        raise CertificateError(f"gamma4 - gamma_bar·h* = {margin:.6g} leaves no margin")
    L4 = L ** 4
    third = (min_diagonal + math.sqrt(min_diagonal ** 2 + 16.0 * L4 * min(L ** 2, gamma1 * margin))) / (16.0 * L4)
    return DeltaBound((math.sqrt(gamma1 * gamma2) / (2.0 * L), gamma1 * gamma3 / (2.0 * L ** 2), third))


def certificate_inputs(
    weights: ModeWeights,
    windows: ControlWindowData,
    L: float,
    min_diagonal: float,
    tau: float,
    h_star: float,
) -> CertificateInputs:
    return CertificateInputs(
        a2=weights.a2,
        a3=weights.a3,
        gamma1=windows.gamma1,
        gamma4=windows.gamma4,
        gamma5=windows.gamma5,
        gamma6=windows.gamma6,
        gamma7=windows.gamma7,
        gamma4p=windows.gamma4p,
        gamma5p=windows.gamma5p,
        gamma6p=windows.gamma6p,
        L=L,
        min_diagonal=min_diagonal,
        tau=tau,
        h_star=h_star,
    )


def epsilon_cap(inputs: CertificateInputs, delta: float) -> float:
    """Largest epsilon the observation gap allows."""
    L2 = inputs.L ** 2
    return (L2 + 2.0 * inputs.min_diagonal * delta - 16.0 * L2 ** 2 * delta ** 2) / (2.0 * L2 * delta)


def c_constants(inputs: CertificateInputs, epsilon: float, delta: float) -> CConstants:
    """Evaluate C1..C5 at (epsilon, delta) and list every violated requirement."""
    if not delta > 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    growth_factor = inputs.h_star * math.exp(epsilon * inputs.tau)
    drift_share = epsilon * (inputs.a2 + inputs.a3)
    power_share = epsilon * inputs.a3 / inputs.gamma7
    L4 = inputs.L ** 4

    c1 = (inputs.gamma4 - (8.0 * L4 * delta ** 2 - inputs.min_diagonal * delta) / inputs.gamma1
          - drift_share - inputs.gamma5 * growth_factor)
    c2 = 1.0 - inputs.gamma6 * growth_factor - power_share
    c3 = 1.0 - power_share - inputs.gamma6p * growth_factor
    c4 = max(inputs.gamma5, inputs.gamma6, inputs.gamma5p, inputs.gamma6p) * growth_factor
    c5 = (inputs.gamma4p + drift_share + (inputs.gamma5p - inputs.gamma6p) * growth_factor
          + 1.0 - power_share)
    cap = epsilon_cap(inputs, delta)

    failures = []
    if not epsilon > 0:
        failures.append(f"ε={epsilon:g} must be positive")
    if epsilon > cap:
        failures.append(f"ε={epsilon:g} exceeds the cap {cap:.6g}")
    for name, value in (("C1", c1), ("C2", c2), ("C3", c3), ("C5", c5)):
        if not value > 0:
            failures.append(f"{name}={value:.6g} is not positive")
    if c4 > min(c1, c2, c3):
        failures.append(f"C4={c4:.6g} exceeds min(C1, C2, C3)={min(c1, c2, c3):.6g}")
    return CConstants(epsilon, delta, c1, c2, c3, c4, c5, cap, tuple(failures))


def certified_rate(epsilon: float, c5: float, period: float, theta: float) -> RateResult:
    """
    Certified mean-square rate mu = epsilon - C5 (1 - theta/T).

    The rate exists only when theta exceeds the threshold (1 - epsilon/C5) T;
    otherwise ``mu`` is None.
    """
    if not c5 > 0 or not period > 0:
        raise ValidationError("C5 and T must be positive")
    threshold = (1.0 - epsilon / c5) * period
    if theta <= threshold:
        return RateResult(threshold, None)
    # Written relative to the threshold so mu vanishes exactly there.
    return RateResult(threshold, c5 * (theta - threshold) / period)


def _rate_at(
    inputs: CertificateInputs, epsilon: float, delta: float, theta: float, period: float
) -> Tuple[Optional[float], CConstants]:
    constants = c_constants(inputs, epsilon, delta)
    if not constants.feasible:
        return None, constants
    return certified_rate(epsilon, constants.c5, period, theta).mu, constants


def optimize_epsilon(
    inputs: CertificateInputs,
    delta: float,
    theta: float,
    period: float,
    grid_points: Optional[int] = None,
) -> EpsilonOptimum:
    """
    Maximize the certified rate over epsilon.

    A grid scan over (0, epsilon_max] locates the best feasible point and a
    golden-section search on the feasibility-penalized objective refines it.
    epsilon_max is the smallest of the epsilon cap, gamma4/(a2+a3) and
    gamma7/a3, beyond which C1 or C2 cannot stay positive.

    Raises:
        CertificateError: If no epsilon on the grid is feasible
    """
    grid_points = grid_points or get_config().EPSILON_GRID
    upper = epsilon_cap(inputs, delta)
    if inputs.a2 + inputs.a3 > 0:
        upper = min(upper, inputs.gamma4 / (inputs.a2 + inputs.a3))
    if inputs.a3 > 0:
        upper = min(upper, inputs.gamma7 / inputs.a3)
    if not upper > 0:
        raise CertificateError("No positive epsilon is admissible")

    candidates = np.linspace(upper / grid_points, upper, grid_points)
    rates = np.array([
        np.nan if (mu := _rate_at(inputs, float(eps), delta, theta, period)[0]) is None else mu
        for eps in candidates
    ])
    if np.all(np.isnan(rates)):
        raise CertificateError(f"No feasible epsilon certifies theta={theta} at delta={delta}")
    best = int(np.nanargmax(rates))
    best_eps, best_mu = float(candidates[best]), float(rates[best])

    def objective(eps: float) -> float:
        if eps <= 0:
            return _PENALTY
        mu, _ = _rate_at(inputs, eps, delta, theta, period)
        return _PENALTY if mu is None else -mu

    if best < grid_points - 1:
        left = float(candidates[best - 1]) if best > 0 else best_eps / 2.0
        right = float(candidates[best + 1])
        if objective(best_eps) < min(objective(left), objective(right)):
            try:
                refined = optimize.minimize_scalar(
                    objective, bracket=(left, best_eps, right), method="golden", options={"xtol": 1e-12}
                )
                if -refined.fun > best_mu:
                    best_eps, best_mu = float(refined.x), float(-refined.fun)
            except ValueError as exc:
                logger.debug(f"Golden-section refinement skipped: {exc}")

    constants = c_constants(inputs, best_eps, delta)
    rate = certified_rate(best_eps, constants.c5, period, theta)
    logger.info(f"Optimal epsilon={best_eps:.8g} gives mu={best_mu:.8g} at theta={theta}")
    return EpsilonOptimum(best_eps, best_mu, constants, rate.theta_threshold)


def rate_curve(
    inputs: CertificateInputs,
    epsilon: float,
    delta: float,
    period: float,
    thetas: Sequence[float],
) -> List[Tuple[float, Optional[float]]]:
    """Certified rate at fixed epsilon across control widths."""
    return [(float(theta), _rate_at(inputs, epsilon, delta, float(theta), period)[0]) for theta in thetas]


def moment_rate_table(mu: float, q: float, qbars: Sequence[float]) -> Dict[float, float]:
    """Transfer the mean-square rate to L^qbar: rate = (q - qbar)/(q - 2) mu for 2 <= qbar < q."""
    table = {}
    for qbar in qbars:
        if not 2.0 <= qbar < q:
            raise ValidationError(f"qbar={qbar} must lie in [2, {q})")
        table[float(qbar)] = (q - qbar) / (q - 2.0) * mu
    return table


def gronwall_oracle(c1: float, c2: float, c3: float, lam: float, delta: float, n_steps: int) -> GronwallResult:
    """
    Iterate the discrete Gronwall recursion and compare with its closed-form bound.

    b_k = C1 + (C2/lambda) e^(k lambda delta) + alpha S_k, S_(k+1) = S_k + b_k,
    a_k = e^(-k lambda delta) b_k, and the bound is
    C1 + (C2/lambda)(e^(lambda delta) - 1)/(e^(lambda delta) - 1 - alpha).
    """
    if not lam > 0 or not delta > 0 or n_steps < 1:
        raise ValidationError("lambda, delta and n_steps must be positive")
    growth = math.expm1(lam * delta)
    alpha = c3 * delta * growth / lam
    if not math.exp(-lam * delta) * (1.0 + alpha) < 1.0:
        return GronwallResult("inconclusive", math.inf, math.nan, np.empty(0))
    bound = c1 + (c2 / lam) * growth / (growth - alpha)

    sequence = np.empty(n_steps)
    partial = 0.0
    for k in range(n_steps):
        b_k = c1 + (c2 / lam) * math.exp(k * lam * delta) + alpha * partial
        sequence[k] = math.exp(-k * lam * delta) * b_k
        partial += b_k
    max_ratio = float(np.max(sequence) / bound)
    status = "holds" if np.all(sequence <= bound * (1.0 + 1e-12)) else "violated"
    return GronwallResult(status, bound, max_ratio, sequence)


# --- full pipeline -----------------------------------------------------------


def build_certificate(
    spec: SystemSpec,
    schedule: ControlSchedule,
    dissipation: DissipativityData,
    windows: ControlWindowData,
    epsilon: Optional[float] = None,
    qbars: Sequence[float] = (2.0,),
    grid: Optional[CheckGrid] = None,
) -> StabilityCertificate:
    """
    Run every certificate computation for a system and schedule.

    Args:
        spec: Polynomial system with growth parameters
        schedule: Control period, width and the observation gap to certify
        dissipation: Dissipativity constants
        windows: Intermittent-control constants and W
        epsilon: Fixed epsilon; the optimal one is used when omitted
        qbars: Moment orders for the rate table
        grid: Grid settings; configuration defaults when omitted

    Returns:
        The StabilityCertificate with every constant and check
    """
    _require_polynomial(spec)
    growth = _require_growth(spec, None)
    grid = grid or CheckGrid.from_config()
    h_star, tau = spec.h_star, spec.delay.tau
    delta, period, theta = schedule.obs_gap, schedule.period, schedule.width
    logger.info(f"Certifying {spec.name}: T={period}, theta={theta}, delta={delta}, h*={h_star:.6g}")

    weights = solve_mode_weights(dissipation, spec.generator, growth.q1)
    zeta = zeta_constants(dissipation, weights, growth.q1, growth.p, h_star)
    gamma_margin = Inequality("1 ∧ gamma4 > gamma_bar·h*", min(1.0, windows.gamma4), windows.gamma_bar * h_star)

    bounds = delta_bound(growth.L, windows.gamma1, windows.gamma2, windows.gamma3,
                         spec.generator.min_diagonal, windows.gamma4, windows.gamma_bar, h_star)
    if not bounds.admits(delta):
        logger.warning(f"delta={delta:g} is outside the admissible range (0, {bounds.value:.6g})")

    inputs = certificate_inputs(weights, windows, growth.L, spec.generator.min_diagonal, tau, h_star)
    try:
        optimum: Optional[EpsilonOptimum] = optimize_epsilon(inputs, delta, theta, period)
    except CertificateError as exc:
        logger.warning(f"Epsilon optimization failed: {exc}")
        optimum = None
    if epsilon is None:
        if optimum is None:
            raise CertificateError("No epsilon supplied and none is feasible")
        epsilon = optimum.epsilon

    constants = c_constants(inputs, epsilon, delta)
    if constants.c5 > 0:
        rate = certified_rate(epsilon, constants.c5, period, theta)
        if not constants.feasible:
            rate = RateResult(rate.theta_threshold, None)
    else:
        rate = RateResult(math.nan, None)
    table = moment_rate_table(rate.mu, growth.q, qbars) if rate.mu is not None else {}
    curve = rate_curve(inputs, epsilon, delta, period, np.linspace(0.0, period, 11))

    certificate = StabilityCertificate(
        period=period,
        theta=theta,
        delta=delta,
        h_star=h_star,
        tau=tau,
        q=growth.q,
        grid=grid,
        dissipation=dissipation,
        control_windows=windows,
        weights=weights,
        zeta=zeta,
        growth_violations=growth.check(),
        growth_report=verify_growth(spec, growth, grid),
        control_bound=verify_control_bound(spec, growth.L),
        khasminskii=verify_khasminskii(spec, grid, growth),
        dissipativity=verify_dissipativity(spec, dissipation, grid, growth),
        intermittent=verify_control_windows(spec, weights, windows, grid, growth),
        gamma_margin=gamma_margin,
        boundedness=boundedness_certificate(growth, h_star, tau, delta),
        delta_bound=bounds,
        constants=constants,
        rate=rate,
        optimum=optimum,
        rate_table=table,
        rate_curve=curve,
    )
    if certificate.passed:
        logger.info(f"Certificate holds: mu={certificate.mu:.6g} at epsilon={epsilon:.6g}")
    else:
        logger.warning(f"Certificate fails: {'; '.join(certificate.reasons)}")
    return certificate
