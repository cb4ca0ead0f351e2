"""
System Parser Module

This module contains the SystemParser class responsible for turning a JSON
system document into a SystemSpec, a ControlSchedule and the optional
certificate inputs.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from .certify import DissipativityData, ControlWindowData
from .errors import ConfigurationError
from .model import (
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

logger = logging.getLogger(__name__)

SIMULATION_DEFAULTS: Dict[str, Any] = {
    "horizon": 15.0,
    "step": 1e-3,
    "delta": 0.01,
    "paths": 200,
    "seed": 0,
    "qbar": [2.0],
    "controlled": True,
}

_GROWTH_KEYS = ("K", "p", "q", "q1", "q2", "q3", "q4", "alpha1", "alpha2", "L")
_CONDITION41_KEYS = ("k1", "l1", "beta1", "g1", "k2", "l2", "beta2", "g2")
_CONDITION42_KEYS = ("gamma1", "gamma2", "gamma3", "gamma4", "gamma5", "gamma6", "gamma7", "gamma8",
                     "gamma4p", "gamma5p", "gamma6p")


def _section(document: Dict[str, Any], key: str, where: str = "document") -> Dict[str, Any]:
    value = document.get(key)
    if not isinstance(value, dict):
        raise ConfigurationError(f"Missing or ill-typed section '{key}' in {where}")
    return value


def _number(section: Dict[str, Any], key: str, where: str, default: Optional[float] = None) -> float:
    if key not in section:
        if default is None:
            raise ConfigurationError(f"Missing key '{key}' in {where}")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"Key '{key}' in {where} must be a number, got {value!r}")
    return float(value)


def _numbers(section: Dict[str, Any], key: str, where: str) -> List[float]:
    value = section.get(key)
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigurationError(f"Key '{key}' in {where} must be a list of numbers")
    return [float(v) for v in value]


class SystemParser:
    """Parses and extracts the system, schedule and certificate data of a document."""

    def __init__(self, document: Dict[str, Any]):
        """
        Initialize the SystemParser with a system document.

        Args:
            document: The decoded JSON document
        """
        if not isinstance(document, dict):
            raise ConfigurationError("System document must be a JSON object")
        self.document = document
        self.name = str(document.get("name", "system"))
        self.certificate_section: Dict[str, Any] = document.get("certificate") or {}
        self.simulation_section: Dict[str, Any] = document.get("simulation") or {}

    def generator(self) -> GeneratorMatrix:
        rates = self.document.get("generator")
        if not isinstance(rates, list) or not rates:
            raise ConfigurationError("Missing or ill-typed key 'generator'")
        try:
            matrix = np.array(rates, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"Key 'generator' must be a numeric matrix: {exc}") from exc
        return GeneratorMatrix(matrix)

    def modes(self) -> PolynomialCoefficients:
        entries = self.document.get("modes")
        if not isinstance(entries, list) or not entries:
            raise ConfigurationError("Missing or ill-typed key 'modes'")
        modes = []
        for i, entry in enumerate(entries, start=1):
            where = f"modes[{i}]"
            if not isinstance(entry, dict):
                raise ConfigurationError(f"{where} must be an object")
            drift = _section(entry, "drift", where)
            diffusion = _section(entry, "diffusion", where)
            modes.append(
                PolynomialMode(
                    drift=monomial_table(drift),
                    diffusion=monomial_table(diffusion),
                    control_gain=_number(entry, "control_gain", where, default=0.0),
                )
            )
        return PolynomialCoefficients(tuple(modes))

    def delay(self) -> DelayFunction:
        section = _section(self.document, "delay")
        kind = section.get("kind")
        if kind not in ("constant", "sawtooth"):
            raise ConfigurationError(f"Key 'kind' in delay must be 'constant' or 'sawtooth', got {kind!r}")
        optional = {
            key: _number(section, key, "delay") for key in ("h_lower", "h_upper", "h_star") if key in section
        }
        return DelayFunction(
            kind=kind,
            base=_number(section, "base", "delay"),
            amplitude=_number(section, "amplitude", "delay", default=0.0),
            period=_number(section, "period", "delay", default=1.0),
            **optional,
        )

    def growth(self) -> Optional[GrowthParams]:
        if "growth" not in self.document:
            return None
        section = _section(self.document, "growth")
        return GrowthParams(**{key: _number(section, key, "growth") for key in _GROWTH_KEYS})

    def history(self) -> InitialHistory:
        section = _section(self.document, "history")
        r0 = int(_number(section, "r0", "history", default=1.0))
        if "constant" in section:
            return InitialHistory(r0=r0, constant=_numbers(section, "constant", "history"))
        table = section.get("table")
        if not isinstance(table, list) or not all(isinstance(row, list) and len(row) >= 2 for row in table):
            raise ConfigurationError("History needs 'constant' or a 'table' of [t, x1, ...] rows")
        try:
            rows = np.array(table, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"History table must be numeric: {exc}") from exc
        return InitialHistory(r0=r0, table_times=rows[:, 0], table_values=rows[:, 1:])

    def system(self) -> SystemSpec:
        """
        Build the SystemSpec described by the document.

        Returns:
            The validated SystemSpec
        """
        spec = SystemSpec(
            generator=self.generator(),
            coeffs=self.modes(),
            delay=self.delay(),
            history=self.history(),
            growth=self.growth(),
            name=self.name,
        )
        logger.info(f"Parsed system '{self.name}' with {spec.n_modes} modes")
        return spec

    def schedule(
        self,
        period: Optional[float] = None,
        theta: Optional[float] = None,
        delta: Optional[float] = None,
    ) -> ControlSchedule:
        """Build the control schedule, with any given value overriding the document."""
        section = _section(self.document, "schedule")
        return ControlSchedule(
            period=_number(section, "T", "schedule") if period is None else float(period),
            width=_number(section, "theta", "schedule") if theta is None else float(theta),
            obs_gap=_number(section, "delta", "schedule") if delta is None else float(delta),
            phase_start=int(_number(section, "phase_start", "schedule", default=0.0)),
        )

    def dissipation(self) -> Optional[DissipativityData]:
        section = self.certificate_section.get("dissipation")
        if section is None:
            return None
        if not isinstance(section, dict):
            raise ConfigurationError("Key 'dissipation' in certificate must be an object")
        where = "certificate.dissipation"
        return DissipativityData(**{key: tuple(_numbers(section, key, where)) for key in _CONDITION41_KEYS})

    def control_windows(self) -> Optional[ControlWindowData]:
        section = self.certificate_section.get("control_windows")
        if section is None:
            return None
        if not isinstance(section, dict):
            raise ConfigurationError("Key 'control_windows' in certificate must be an object")
        where = "certificate.control_windows"
        terms = section.get("W")
        if not isinstance(terms, list) or not all(isinstance(term, dict) for term in terms):
            raise ConfigurationError(f"Key 'W' in {where} must be a list of {{power, coefficient}} objects")
        w_terms = tuple(
            (_number(term, "power", f"{where}.W"), _number(term, "coefficient", f"{where}.W")) for term in terms
        )
        values = {key: _number(section, key, where) for key in _CONDITION42_KEYS}
        return ControlWindowData(w_terms=w_terms, **values)

    def certificate_settings(self) -> Dict[str, Optional[float]]:
        """Optional ``epsilon`` and ``delta`` of the certificate section."""
        where = "certificate"
        return {
            key: _number(self.certificate_section, key, where) if key in self.certificate_section else None
            for key in ("epsilon", "delta")
        }

    def simulation_defaults(self) -> Dict[str, Any]:
        """Run parameters of the document merged over the built-in defaults."""
        settings = dict(SIMULATION_DEFAULTS)
        for key, value in self.simulation_section.items():
            if key not in SIMULATION_DEFAULTS:
                raise ConfigurationError(f"Unknown key '{key}' in simulation")
            settings[key] = value
        where = "simulation"
        for key in ("horizon", "step", "delta"):
            settings[key] = _number(settings, key, where)
        for key in ("paths", "seed"):
            number = _number(settings, key, where)
            if number != int(number):
                raise ConfigurationError(f"Key '{key}' in {where} must be an integer")
            settings[key] = int(number)
        settings["qbar"] = _numbers(settings, "qbar", where)
        if not isinstance(settings["controlled"], bool):
            raise ConfigurationError(f"Key 'controlled' in {where} must be true or false")
        return settings


def load_system(path: Union[str, Path]) -> SystemParser:
    """
    Load a JSON system document.

    Raises:
        FileNotFoundError: If the file does not exist
        json.JSONDecodeError: If the file is not valid JSON
        ConfigurationError: If the document is not an object
    """
    path = Path(path)
    logger.info(f"Loading system document from {path}")
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)
    return SystemParser(document)
