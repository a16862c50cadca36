"""With/without-MPC comparison runs, CSV output and the THD comparison report."""

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .power_quality import DEFAULT_N_MAX, UndefinedThdError, analyze_signal, improvement_percent
from .powertrain import COLUMNS, TimeSeries, simulate_scenario

__all__ = [
    "ReportRow",
    "ComparisonReport",
    "RunError",
    "SIGNALS",
    "STEADY_STATE_FRACTION",
    "run",
    "build_report",
    "write_outputs",
    "write_timeseries_csv",
    "read_timeseries_csv",
    "analyze_timeseries",
    "analyze_csv",
]

logger = logging.getLogger(__name__)

# Analysis covers the final part of each run, after start-up transients.
STEADY_STATE_FRACTION = 0.4
SIGNALS = ("grid_voltage", "grid_current", "inverter_output_voltage", "inverter_output_current")
# Source column per signal for the runs without and with MPC. The load bus is
# resistive, so the bus current is v_g / R_L and shares the voltage's THD.
# Without MPC the comparison uses the raw bridge voltage.
_SOURCES = {
    "grid_voltage": ("v_g", "v_g"),
    "grid_current": ("v_g", "v_g"),
    "inverter_output_voltage": ("v_bridge", "v_i"),
    "inverter_output_current": ("i_i", "i_i"),
}
_ANALYZED = ("v_g", "v_i", "i_i", "v_bridge")
_FILES = {"without_mpc": "without_mpc.csv", "with_mpc": "with_mpc.csv"}


class RunError(Exception):
    """A run failed; ``phase`` says where and ``exit_code`` how the CLI reports it."""

    def __init__(self, phase, cause, exit_code):
        self.phase = phase
        self.cause = cause
        self.exit_code = exit_code
        super().__init__(f"{phase}: {cause}")


@dataclass(frozen=True)
class ReportRow:
    signal_name: str
    thd_without_mpc: float
    thd_with_mpc: float
    improvement_percent: float
    column_without: str
    column_with: str

    def as_dict(self):
        return {
            "signal_name": self.signal_name,
            "thd_without_mpc": self.thd_without_mpc,
            "thd_with_mpc": self.thd_with_mpc,
            "improvement_percent": self.improvement_percent,
            "column_without": self.column_without,
            "column_with": self.column_with,
        }


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple
    grid_frequency_without: float
    grid_frequency_with: float
    mode_transition_log: tuple
    mode_transition_log_without: tuple = field(default=())
    n_max: int = DEFAULT_N_MAX
    f0: float = 50.0
    window_fraction: float = STEADY_STATE_FRACTION
    output_paths: dict = field(default=None, compare=False)

    def __post_init__(self):
        names = tuple(r.signal_name for r in self.rows)
        if names != SIGNALS:
            raise ValueError(f"report rows must be exactly {SIGNALS}, got {names}")

    def row(self, name):
        for r in self.rows:
            if r.signal_name == name:
                return r
        raise KeyError(name)

    def as_dict(self):
        return {
            "rows": [r.as_dict() for r in self.rows],
            "grid_frequency_without": self.grid_frequency_without,
            "grid_frequency_with": self.grid_frequency_with,
            "mode_transition_log": [list(p) for p in self.mode_transition_log],
            "mode_transition_log_without": [list(p) for p in self.mode_transition_log_without],
            "n_max": self.n_max,
            "f0": self.f0,
            "window_fraction": self.window_fraction,
        }


def _steady_window(n, fraction):
    return slice(n - int(round(fraction * n)), n)


def _analyze_column(column, sample_rate, f0, n_max, name):
    """THD of each phase; ``None`` when the column is missing or THD is undefined."""
    if not np.all(np.isfinite(column)):
        return None
    try:
        reports = [analyze_signal(column[:, j], sample_rate, f0, n_max, name=f"{name}_{'abc'[j]}")
                   for j in range(3)]
    except UndefinedThdError:
        return None
    per_phase = [r.thd_percent for r in reports]
    return {
        "thd_percent": float(np.mean(per_phase)),
        "thd_per_phase": per_phase,
        "frequency": reports[0].fundamental_frequency,
        "fundamental": reports[0].fundamental_amplitude,
        "harmonics": [float(h) for h in reports[0].harmonic_amplitudes],
    }


def analyze_timeseries(ts, f0=50.0, n_max=DEFAULT_N_MAX, window_fraction=STEADY_STATE_FRACTION):
    """Harmonic analysis of each logged waveform over the steady-state window.

    Returns
    -------
    dict
        One entry per column group (``v_g``, ``v_i``, ``i_i``, ``v_bridge``):
        ``thd_percent`` (phase mean), ``thd_per_phase``, and for phase a the
        analysed ``frequency``, ``fundamental`` and ``harmonics`` (2..n_max).
        ``None`` for columns that are not available.
    """
    if len(ts) < 2:
        raise ValueError("time series is empty")
    if not 0 < window_fraction <= 1:
        raise ValueError("window_fraction must lie in (0, 1]")
    w = _steady_window(len(ts), window_fraction)
    fs = ts.sample_rate
    return {name: _analyze_column(getattr(ts, name)[w], fs, f0, n_max, name) for name in _ANALYZED}


def _thd_of(analysis, column):
    entry = analysis[column]
    return None if entry is None else entry["thd_percent"]


def _frequency_of(analysis):
    entry = analysis["v_g"]
    return None if entry is None else entry["frequency"]


def build_report(ts_without, ts_with, f0=50.0, n_max=DEFAULT_N_MAX, window_fraction=STEADY_STATE_FRACTION):
    a = analyze_timeseries(ts_without, f0, n_max, window_fraction)
    b = analyze_timeseries(ts_with, f0, n_max, window_fraction)
    rows = []
    for name in SIGNALS:
        col_without, col_with = _SOURCES[name]
        without, with_ = _thd_of(a, col_without), _thd_of(b, col_with)
        improvement = None
        if without is not None and with_ is not None and without > 0:
            improvement = improvement_percent(without, with_)
        rows.append(ReportRow(name, without, with_, improvement, col_without, col_with))
    return ComparisonReport(
        rows=tuple(rows),
        grid_frequency_without=_frequency_of(a),
        grid_frequency_with=_frequency_of(b),
        mode_transition_log=tuple((float(t), int(c)) for t, c in ts_with.transitions),
        mode_transition_log_without=tuple((float(t), int(c)) for t, c in ts_without.transitions),
        n_max=int(n_max),
        f0=float(f0),
        window_fraction=float(window_fraction),
    )


def write_timeseries_csv(ts, path):
    if len(ts) == 0:
        raise ValueError("refusing to write an empty time series")
    np.savetxt(path, ts.as_array(), fmt="%.12g", delimiter=",", header=",".join(COLUMNS), comments="")
    return Path(path)


def read_timeseries_csv(path):
    path = Path(path)
    with path.open(newline="") as fh:
        header = next(csv.reader(fh), None)
    if header is None or tuple(h.strip() for h in header) != COLUMNS:
        raise ValueError(f"{path}: header does not match the time-series schema")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise ValueError(f"{path}: no data rows")
    return TimeSeries.from_array(data)


def analyze_csv(path, f0=50.0, n_max=DEFAULT_N_MAX, window_fraction=STEADY_STATE_FRACTION):
    """:func:`analyze_timeseries` on a CSV written by :func:`write_timeseries_csv`."""
    return analyze_timeseries(read_timeseries_csv(path), f0, n_max, window_fraction)


def _json_value(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_outputs(runs, report, out_dir):
    """Write the time series, ``report.json`` and ``thd_table.csv``.

    Parameters
    ----------
    runs : mapping of str to TimeSeries, or a single TimeSeries
        ``{"without_mpc": ..., "with_mpc": ...}``; a lone series goes to
        ``timeseries.csv``.

    Returns
    -------
    dict of str to Path
    """
    if isinstance(runs, TimeSeries):
        runs = {"timeseries": runs}
    for name, ts in runs.items():
        if len(ts) == 0:
            raise ValueError(f"{name}: refusing to write an empty time series")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, ts in runs.items():
        paths[name] = write_timeseries_csv(ts, out / _FILES.get(name, f"{name}.csv"))

    doc = report.as_dict()
    for row in doc["rows"]:
        for key, value in row.items():
            row[key] = _json_value(value)
    paths["report"] = out / "report.json"
    paths["report"].write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    paths["table"] = out / "thd_table.csv"
    with paths["table"].open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["signal_name", "thd_without_mpc", "thd_with_mpc", "improvement_percent"])
        for r in report.rows:
            writer.writerow([r.signal_name] + ["" if v is None else f"{v:.6f}" for v in
                                                (r.thd_without_mpc, r.thd_with_mpc, r.improvement_percent)])
    return paths


def _write_mpc_log(mpc_log, path):
    header = ["k", "r_a", "r_b", "r_c", "y_a", "y_b", "y_c", "du_a", "du_b", "du_c",
              "mv_a", "mv_b", "mv_c", "J"]
    np.savetxt(path, mpc_log, fmt="%.12g", delimiter=",", header=",".join(header), comments="")


def run(sc, out_dir, n_max=DEFAULT_N_MAX, log_mpc=False):
    """Simulate ``sc`` without and with MPC, write both CSVs and the report.

    Returns
    -------
    ComparisonReport
        ``output_paths`` lists the files written.

    Raises
    ------
    RunError
        With ``phase`` ``without_mpc``, ``with_mpc``, ``analysis`` or ``write``.
    """
    runs = {}
    for phase, enabled in (("without_mpc", False), ("with_mpc", True)):
        logger.info("simulating %s", phase)
        try:
            runs[phase] = simulate_scenario(sc, mpc_enabled=enabled, log_mpc=log_mpc and enabled)
        except (ValueError, ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
            raise RunError(phase, exc, 3) from exc
    try:
        report = build_report(runs["without_mpc"], runs["with_mpc"], sc.grid.frequency, n_max)
    except ValueError as exc:
        raise RunError("analysis", exc, 3) from exc
    try:
        paths = write_outputs(runs, report, out_dir)
        if log_mpc and runs["with_mpc"].mpc_log is not None:
            paths["mpc_log"] = Path(out_dir) / "mpc_log.csv"
            _write_mpc_log(runs["with_mpc"].mpc_log, paths["mpc_log"])
    except OSError as exc:
        raise RunError("write", exc, 4) from exc
    return replace(report, output_paths=paths)
