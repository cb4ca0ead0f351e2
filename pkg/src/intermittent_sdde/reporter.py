"""
Report Generation Module

This module contains the ReportGenerator class responsible for writing
trajectories, mode paths and moment series as CSV, certificates and rate
reports as JSON, the reproduction table as markdown and optional SVG figures.
Floats are written with ``repr`` and no timestamps are embedded, so identical
inputs give byte-identical files.
"""

import csv
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .certify import StabilityCertificate
from .config import get_config
from .markov import ModePath
from .moments import MomentSeries
from .simulate import Trajectory

logger = logging.getLogger(__name__)


def _number(value: float) -> str:
    return repr(float(value))


def _order_label(qbar: float) -> str:
    return str(int(qbar)) if float(qbar).is_integer() else repr(float(qbar))


def _jsonable(value: Any) -> Any:
    """Replace NaN and infinities by None and numpy scalars by Python numbers."""
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


class ReportGenerator:
    """Writes every run artifact into one output directory."""

    def __init__(self, output_dir: Optional[Path] = None):
        """
        Initialize the ReportGenerator.

        Args:
            output_dir: Optional output directory path. Uses config default if not provided.
        """
        config = get_config()
        self.output_dir = Path(output_dir) if output_dir is not None else config.RESULTS_DIR
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.config = config

    def _write_rows(self, filename: str, header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
        path = self.output_dir / filename
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        logger.info(f"Wrote {len(rows)} rows to {path}")
        return str(path)

    def write_trajectory_csv(self, trajectory: Trajectory, filename: str = "trajectory.csv") -> str:
        """
        Write one path as ``t,x,mode,obs_mode,control_on``.

        Multi-dimensional states get the columns ``x1..xn`` instead of ``x``.
        """
        dim = trajectory.states.shape[1]
        state_columns = ["x"] if dim == 1 else [f"x{j + 1}" for j in range(dim)]
        header = ["t"] + state_columns + ["mode", "obs_mode", "control_on"]
        rows = [
            [_number(t)] + [_number(v) for v in state] + [str(int(mode)), str(int(obs_mode)), str(int(on))]
            for t, state, mode, obs_mode, on in zip(
                trajectory.times, trajectory.states, trajectory.mode, trajectory.obs_mode, trajectory.control_on
            )
        ]
        return self._write_rows(filename, header, rows)

    def write_mode_path_csv(self, mode_path: ModePath, filename: str = "mode_path.csv") -> str:
        rows = [[_number(t), str(int(mode))] for t, mode in zip(mode_path.jump_times, mode_path.modes)]
        return self._write_rows(filename, ["jump_time", "mode"], rows)

    def write_moments_csv(self, series: MomentSeries, filename: str = "moments.csv") -> str:
        """Write ``t,m_<qbar>,se_<qbar>,...,exploded_fraction``."""
        header = ["t"]
        for qbar in series.qbars:
            label = _order_label(qbar)
            header += [f"m_{label}", f"se_{label}"]
        header.append("exploded_fraction")
        rows = []
        for k, t in enumerate(series.times):
            row = [_number(t)]
            for j in range(len(series.qbars)):
                row += [_number(series.moments[k, j]), _number(series.std_errors[k, j])]
            row.append(_number(series.exploded_fraction[k]))
            rows.append(row)
        return self._write_rows(filename, header, rows)

    def write_json(self, data: Dict[str, Any], filename: str) -> str:
        path = self.output_dir / filename
        with open(path, "w", encoding="utf-8") as f:
            json.dump(_jsonable(data), f, indent=2, allow_nan=False)
            f.write("\n")
        logger.info(f"Wrote {path}")
        return str(path)

    def write_certificate_json(self, certificate: StabilityCertificate, filename: str = "certificate.json") -> str:
        return self.write_json(certificate.to_dict(), filename)

    def write_rate_report_json(self, report: Dict[str, Any], filename: str = "rate_report.json") -> str:
        return self.write_json(report, filename)

    def generate_reproduction_report(self, rows: List[Any], filename: str = "reproduction_report.md") -> str:
        """
        Generate the markdown table of reproduced quantities.

        Args:
            rows: ReproductionRow entries

        Returns:
            Path to the generated report file
        """
        passed = sum(row.status == "PASS" for row in rows)
        failed = sum(row.status == "FAIL" for row in rows)
        table = "\n".join(
            f"| {row.quantity} | {row.computed:.6g} | {row.reference:.6g} | {row.tolerance:.1e} | {row.status} |"
            for row in rows
        )
        notes = "\n".join(f"- **{row.quantity}**: {row.note}" for row in rows if row.note)
        content = f"""# Benchmark Reproduction

**Rows:** {len(rows)} | **Passed:** {passed} | **Failed:** {failed}

| Quantity | Computed | Reference | Tolerance | Status |
|---|---|---|---|---|
{table}

## Notes

{notes or "None."}
"""
        path = self.output_dir / filename
        with open(path, "w", encoding="utf-8") as f:
            f.write(content)
        logger.info(f"Generated reproduction report: {path}")
        return str(path)

    def plot_trajectory_svg(self, trajectory: Trajectory, filename: str = "trajectory.svg") -> str:
        """Plot |x(t)| with the active mode as a shaded band underneath."""
        figure = Figure(figsize=(8, 4.5))
        axes, band = figure.subplots(2, 1, sharex=True, gridspec_kw={"height_ratios": [4, 1]})
        axes.plot(trajectory.times, np.linalg.norm(trajectory.states, axis=1), linewidth=0.8)
        axes.set_ylabel("|x(t)|")
        on = trajectory.control_on.astype(bool)
        axes.fill_between(trajectory.times, 0, 1, where=on, transform=axes.get_xaxis_transform(),
                          alpha=0.1, step="post", label="control on")
        axes.legend(loc="upper right")
        band.step(trajectory.times, trajectory.mode, where="post", linewidth=0.8)
        band.set_ylabel("mode")
        band.set_xlabel("t")
        return self._save_figure(figure, filename)

    def plot_moments_svg(self, series: MomentSeries, filename: str = "moments.svg") -> str:
        """Semilog plot of every estimated moment."""
        figure = Figure(figsize=(8, 4.5))
        axes = figure.subplots()
        for qbar in series.qbars:
            values = series.moment(qbar)
            positive = values > 0
            axes.semilogy(series.times[positive], values[positive], linewidth=0.8, label=f"E|x|^{_order_label(qbar)}")
        axes.set_xlabel("t")
        axes.set_ylabel("moment")
        axes.legend(loc="upper right")
        return self._save_figure(figure, filename)

    def _save_figure(self, figure: Figure, filename: str) -> str:
        path = self.output_dir / filename
        figure.tight_layout()
        # Pinned salt keeps SVG element ids stable across runs.
        with matplotlib.rc_context({"svg.hashsalt": "intermittent-sdde"}):
            figure.savefig(path, format="svg", metadata={"Date": None})
        logger.info(f"Wrote figure {path}")
        return str(path)
