#!/usr/bin/env python3
"""
Intermittent SDDE - Main Module
===============================

Command-line front end. Sub-commands:

    certify    compute and check the exponential-stability certificate
    simulate   integrate one path and write it as CSV (optionally SVG)
    moments    estimate moments over many paths and compare decay rates
    reproduce  recompute the reference constants of the example5 preset

Exit codes: 0 on success, 1 when a certificate or comparison fails, 2 on a
configuration error.
"""

import argparse
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from .certify import StabilityCertificate, build_certificate, delta_bound
from .config import get_config
from .errors import (
    CertificateError,
    ConfigurationError,
    EstimationError,
    UnsupportedModelError,
    ValidationError,
)
from .model import SystemSpec
from .moments import classify_decay, compare_to_certificate, ensemble_moments, fit_decay_rate
from .parser import SystemParser, load_system
from .presets import load_preset, reproduction_table
from .reporter import ReportGenerator
from .simulate import integrate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _qbar_list(text: str) -> List[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--qbar expects comma-separated numbers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("--qbar needs at least one value")
    return values


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with one sub-parser per command."""
    common = argparse.ArgumentParser(add_help=False)
    source = common.add_mutually_exclusive_group()
    source.add_argument("--config", type=Path, help="JSON system document")
    source.add_argument("--preset", default=None, help="Built-in system: example5 (default) or two_mode_cubic")
    common.add_argument("--period", type=float, help="Control period T")
    common.add_argument("--theta", type=float, help="Control width theta")
    common.add_argument("--delta", type=float, help="Observation gap delta")
    common.add_argument("--epsilon", type=float, help="Certify at a fixed epsilon instead of the document's")
    control = common.add_mutually_exclusive_group()
    control.add_argument("--controlled", dest="controlled", action="store_true", default=None)
    control.add_argument("--uncontrolled", dest="controlled", action="store_false")
    common.add_argument("--horizon", type=float, help="Final time")
    common.add_argument("--step", type=float, help="Integration step")
    common.add_argument("--paths", type=int, help="Number of Monte Carlo paths")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--qbar", type=_qbar_list, help="Moment orders, e.g. 2,4")
    common.add_argument("--workers", type=int, help="Worker threads for ensembles")
    common.add_argument("--out", type=Path, help="Output directory (default: results/)")
    common.add_argument("--svg", action="store_true", help="Also write SVG figures")
    common.add_argument("--log-level", default=None, help="Logging level, e.g. DEBUG")

    parser = argparse.ArgumentParser(
        prog="intermittent-sdde",
        description="Intermittent feedback control of hybrid stochastic delay systems",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("certify", parents=[common], help="Compute the stability certificate")
    commands.add_parser("simulate", parents=[common], help="Integrate one path")
    commands.add_parser("moments", parents=[common], help="Estimate moments and decay rates")
    commands.add_parser("reproduce", parents=[common], help="Recompute the example5 constants")
    return parser


def _source(args: argparse.Namespace) -> SystemParser:
    if args.config is not None:
        return load_system(args.config)
    return load_preset(args.preset or "example5")


def _first(*values: Any) -> Any:
    """First value that is not None."""
    return next((value for value in values if value is not None), None)


def _certificate(
    args: argparse.Namespace,
    source: SystemParser,
    spec: SystemSpec,
    qbars: Sequence[float],
    delta: Optional[float] = None,
) -> StabilityCertificate:
    dissipation, windows = source.dissipation(), source.control_windows()
    if dissipation is None or windows is None:
        raise ConfigurationError("The certificate section needs both dissipation and control_windows")
    settings = source.certificate_settings()
    schedule = source.schedule(args.period, args.theta, _first(delta, settings["delta"]))
    return build_certificate(
        spec, schedule, dissipation, windows, epsilon=_first(args.epsilon, settings["epsilon"]), qbars=qbars
    )


def _warn_delta(source: SystemParser, spec: SystemSpec, delta: float) -> Optional[float]:
    """Print a warning when ``delta`` is not admissible; returns the admissible bound if known."""
    windows = source.control_windows()
    if windows is None or spec.growth is None or not spec.is_polynomial:
        return None
    try:
        bound = delta_bound(spec.growth.L, windows.gamma1, windows.gamma2, windows.gamma3,
                            spec.generator.min_diagonal, windows.gamma4, windows.gamma_bar, spec.h_star)
    except CertificateError:
        return None
    if not bound.admits(delta):
        message = f"delta={delta:g} exceeds delta_max={bound.value:.6g}; the certificate does not cover this run"
        logger.warning(message)
        print(f"WARNING: {message}")
    return bound.value


def cmd_certify(args: argparse.Namespace) -> int:
    """Run the certificate pipeline and write certificate.json."""
    source = _source(args)
    spec = source.system()
    qbars = _first(args.qbar, source.simulation_defaults()["qbar"])
    certificate = _certificate(args, source, spec, qbars, delta=args.delta)
    reporter = ReportGenerator(args.out)
    path = reporter.write_certificate_json(certificate)

    if not certificate.delta_bound.admits(certificate.delta):
        print(f"WARNING: δ={certificate.delta:g} exceeds δ_max={certificate.delta_max:.6g}")
    _print_summary(
        "CERTIFICATE " + ("HOLDS" if certificate.passed else "FAILS"),
        {
            "System": spec.name,
            "Schedule": f"T={certificate.period:g}, theta={certificate.theta:g}, delta={certificate.delta:g}",
            "delta_max": f"{certificate.delta_max:.6g}",
            "epsilon": f"{certificate.epsilon:.6g}",
            "theta_threshold": f"{certificate.rate.theta_threshold:.6g}",
            "mu": "not certified" if certificate.mu is None else f"{certificate.mu:.6g}",
            "Optimal epsilon": "none" if certificate.optimum is None
            else f"{certificate.optimum.epsilon:.6g} (mu={certificate.optimum.mu:.6g})",
            "Report": path,
        },
        certificate.reasons,
    )
    return EXIT_OK if certificate.passed else EXIT_FAILED


def cmd_simulate(args: argparse.Namespace) -> int:
    """Integrate one path and write trajectory.csv and mode_path.csv."""
    source = _source(args)
    spec = source.system()
    settings = source.simulation_defaults()
    delta = _first(args.delta, settings["delta"])
    schedule = source.schedule(args.period, args.theta, delta)
    controlled = _first(args.controlled, settings["controlled"])
    _warn_delta(source, spec, schedule.obs_gap)

    trajectory = integrate(
        spec,
        schedule,
        horizon=_first(args.horizon, settings["horizon"]),
        step=_first(args.step, settings["step"]),
        rng_seed=_first(args.seed, settings["seed"]),
        controlled=controlled,
    )
    reporter = ReportGenerator(args.out)
    outputs = {
        "Trajectory": reporter.write_trajectory_csv(trajectory),
        "Mode path": reporter.write_mode_path_csv(trajectory.mode_path),
    }
    if args.svg:
        outputs["Figure"] = reporter.plot_trajectory_svg(trajectory)
    summary = {
        "System": spec.name,
        "Controlled": str(controlled),
        "Steps": str(len(trajectory.times) - 1),
        "Final |x|": f"{float(abs(trajectory.final_state).max()):.6g}",
    }
    summary.update(outputs)
    notes = [f"path exploded at t={trajectory.explosion_time:.6g}"] if trajectory.exploded else []
    _print_summary("SIMULATION COMPLETE", summary, notes)
    return EXIT_OK


def cmd_moments(args: argparse.Namespace) -> int:
    """Estimate moments, fit decay rates and compare them with the certificate."""
    source = _source(args)
    spec = source.system()
    settings = source.simulation_defaults()
    delta = _first(args.delta, settings["delta"])
    schedule = source.schedule(args.period, args.theta, delta)
    controlled = _first(args.controlled, settings["controlled"])
    qbars = _first(args.qbar, settings["qbar"])
    delta_max = _warn_delta(source, spec, schedule.obs_gap)

    series = ensemble_moments(
        spec,
        schedule,
        horizon=_first(args.horizon, settings["horizon"]),
        step=_first(args.step, settings["step"]),
        master_seed=_first(args.seed, settings["seed"]),
        n_paths=_first(args.paths, settings["paths"]),
        qbars=qbars,
        controlled=controlled,
        workers=args.workers,
    )

    certificate = None
    if controlled and spec.is_polynomial and source.dissipation() is not None:
        try:
            certificate = _certificate(args, source, spec, qbars)
        except CertificateError as exc:
            logger.warning(f"No certificate for comparison: {exc}")

    rates = []
    for qbar in series.qbars:
        fit = fit_decay_rate(series, qbar)
        if certificate is not None:
            comparison = compare_to_certificate(fit, certificate, delta=schedule.obs_gap)
        else:
            comparison = classify_decay(series, qbar)
        rates.append({**fit.to_dict(), **comparison.to_dict()})

    report = {
        "system": spec.name,
        "controlled": controlled,
        "schedule": {"T": schedule.period, "theta": schedule.width, "delta": schedule.obs_gap},
        "n_paths": series.n_paths,
        "exploded_fraction": float(series.exploded_fraction[-1]),
        "delta_max": delta_max,
        "certificate": None if certificate is None else {
            "delta": certificate.delta, "epsilon": certificate.epsilon, "mu": certificate.mu,
        },
        "rates": rates,
    }
    reporter = ReportGenerator(args.out)
    outputs = {
        "Moments": reporter.write_moments_csv(series),
        "Rate report": reporter.write_rate_report_json(report),
    }
    if args.svg:
        outputs["Figure"] = reporter.plot_moments_svg(series)
    summary = {f"qbar={rate['qbar']:g}": f"slope {rate['slope']:.6g}, {rate['status']}" for rate in rates}
    summary.update(outputs)
    _print_summary("MOMENT ESTIMATION COMPLETE", summary, [])
    flagged = any(rate["status"] == "violation candidate" for rate in rates)
    return EXIT_FAILED if flagged else EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    """Recompute the example5 constants and compare them with the stored references."""
    rows = reproduction_table()
    reporter = ReportGenerator(args.out)
    report_path = reporter.generate_reproduction_report(rows)
    json_path = reporter.write_json({"rows": [row.to_dict() for row in rows]}, "reproduction.json")

    print("\n" + "=" * 60)
    print("BENCHMARK REPRODUCTION")
    print("=" * 60)
    for row in rows:
        print(f"{row.status:<5} {row.quantity:<40} {row.computed:>12.6g}  ref {row.reference:.6g}")
    print("-" * 60)
    print(f"Report: {report_path}")
    print(f"Table: {json_path}")
    print("=" * 60)
    return EXIT_FAILED if any(row.status == "FAIL" for row in rows) else EXIT_OK


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "certify": cmd_certify,
    "simulate": cmd_simulate,
    "moments": cmd_moments,
    "reproduce": cmd_reproduce,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main execution function.

    Args:
        argv: Command-line arguments; ``sys.argv[1:]`` when omitted

    Returns:
        int: Exit code (0 success, 1 certificate or comparison failure, 2 configuration error)
    """
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG

    try:
        config = get_config()
        config.validate()
        config.setup_logging(args.log_level)
        logger.info(f"Running command '{args.command}'")
        return COMMANDS[args.command](args)

    except FileNotFoundError as e:
        logger.error(f"Required file not found: {e}")
        print(f"\nERROR: File not found: {e}")
        return EXIT_CONFIG

    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON document: {e}")
        print(f"\nERROR: Invalid JSON document: {e}")
        return EXIT_CONFIG

    except (ConfigurationError, ValidationError, UnsupportedModelError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"\nERROR: Configuration error: {e}")
        return EXIT_CONFIG

    except (CertificateError, EstimationError) as e:
        logger.error(f"Run failed: {e}")
        print(f"\nERROR: {e}")
        return EXIT_FAILED

    except Exception as e:
        logger.error(f"Run failed: {e}")
        print(f"\nERROR: Run failed: {e}")
        return EXIT_FAILED


def _print_summary(title: str, items: Dict[str, str], notes: Sequence[str]) -> None:
    """
    Print a formatted completion summary to the console.

    Args:
        title: Heading line
        items: Label/value pairs
        notes: Extra lines, such as failure reasons
    """
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    for label, value in items.items():
        print(f"{label}: {value}")
    if notes:
        print("-" * 60)
        for note in notes:
            print(f"  - {note}")
    print("=" * 60)


if __name__ == "__main__":
    exit(main())
