"""
Report Module
Writes the metrics table, the per-algorithm summary and the objective curves
for a finished experiment.
"""

from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path
from typing import Dict, List
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd
import plotly.express as px
from openpyxl import Workbook

from core import ConfigError
from diagnostics import MIN_SEEDS, check_psi_descent, fit_linear_rate, summability_proxy, summarize_checks
from runner import RunMetrics
from src.config import Config

logger = logging.getLogger(__name__)

SVG_WIDTH = 640
SVG_HEIGHT = 400
SVG_MARGIN = 56
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def seed_averaged(records: pd.DataFrame, x: str) -> pd.DataFrame:
    """Mean of `x` and of the objective over seeds, per algorithm and iteration."""
    if records.empty:
        return pd.DataFrame(columns=["algorithm", "iter", x, "objective"])
    ok = records[np.isfinite(records["objective"].astype(float))]
    return (ok.groupby(["algorithm", "iter"], sort=True)[[x, "objective"]]
            .mean().reset_index())


def summarize(metrics: RunMetrics) -> Dict[str, Dict[str, float]]:
    """Per algorithm: mean and std (population) of the final objective over successful runs."""
    finals: Dict[str, List[float]] = {}
    for run in metrics.runs:
        if run.status == "ok" and run.final_objective is not None:
            finals.setdefault(run.algorithm, []).append(run.final_objective)
    summary = {}
    for algorithm in sorted(finals):
        values = pd.Series(finals[algorithm], dtype=float)
        summary[algorithm] = {
            "runs": int(values.size),
            "mean_final_objective": float(values.mean()),
            "std_final_objective": float(values.std(ddof=0)),
            "min_final_objective": float(values.min()),
        }
    return summary


def diagnostic_checks(metrics: RunMetrics) -> Dict[str, Dict[str, object]]:
    """
    Seed-level property checks per algorithm for a diagnostics run.

    Psi descent needs at least MIN_SEEDS successful seeds with Psi values; the
    summability proxy and the linear-rate fit use every seed. Series are cut to
    the shortest run, since stochastic runs spend their epoch budget in
    different iteration counts.
    """
    checks: Dict[str, Dict[str, object]] = {}
    by_algorithm: Dict[str, List] = {}
    for run in metrics.runs:
        if run.status == "ok" and run.sq_steps:
            by_algorithm.setdefault(run.algorithm, []).append(run)

    for algorithm in sorted(by_algorithm):
        runs = by_algorithm[algorithm]
        horizon = min(len(run.sq_steps) for run in runs)
        sq_steps = np.array([run.sq_steps[:horizon] for run in runs], dtype=float)
        summability = summability_proxy(sq_steps)

        descent = None
        notes = []
        records = metrics.records[metrics.records["algorithm"] == algorithm]
        psi = records.pivot(index="iter", columns="run_id", values="psi").astype(float).dropna()
        if psi.shape[1] < MIN_SEEDS or psi.shape[0] < 2:
            notes.append(f"psi descent needs {MIN_SEEDS} seeds and two Psi values, "
                         f"got {psi.shape[1]} seeds and {psi.shape[0]} values")
        else:
            descent = check_psi_descent(psi.to_numpy().T)

        entry: Dict[str, object] = dict(summarize_checks(None, descent, summability))
        try:
            entry["step_rate"] = fit_linear_rate(np.sqrt(sq_steps.mean(axis=0)))
        except ConfigError:
            entry["step_rate"] = None
        entry["seeds"] = len(runs)
        entry["steps"] = horizon
        if notes:
            entry["notes"] = notes
        checks[algorithm] = entry
    return checks


# ----- SVG -----

def render_svg(curves: pd.DataFrame, x: str, title: str, x_label: str, log_y: bool = False) -> str:
    """Minimal self-contained SVG: axes, one polyline per algorithm and a legend."""
    values = curves["objective"].astype(float).to_numpy()
    if log_y and (values.size == 0 or values.min() <= 0):
        log_y = False
    ys = np.log10(values) if log_y else values
    xs = curves[x].astype(float).to_numpy()
    x_lo, x_hi = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
    y_lo, y_hi = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
    plot_w = SVG_WIDTH - 2 * SVG_MARGIN
    plot_h = SVG_HEIGHT - 2 * SVG_MARGIN

    def sx(v: float) -> float:
        if x_hi == x_lo:
            return SVG_MARGIN + plot_w / 2
        return SVG_MARGIN + (v - x_lo) / (x_hi - x_lo) * plot_w

    def sy(v: float) -> float:
        # flat curves sit in the middle of the plot area
        if y_hi == y_lo:
            return SVG_MARGIN + plot_h / 2
        return SVG_MARGIN + (1.0 - (v - y_lo) / (y_hi - y_lo)) * plot_h

    y_label = "log10 objective" if log_y else "objective"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" '
        f'viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="11">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{SVG_WIDTH / 2}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{SVG_MARGIN}" y1="{SVG_HEIGHT - SVG_MARGIN}" x2="{SVG_WIDTH - SVG_MARGIN}" '
        f'y2="{SVG_HEIGHT - SVG_MARGIN}" stroke="black"/>',
        f'<line x1="{SVG_MARGIN}" y1="{SVG_MARGIN}" x2="{SVG_MARGIN}" y2="{SVG_HEIGHT - SVG_MARGIN}" stroke="black"/>',
        f'<text x="{SVG_WIDTH / 2}" y="{SVG_HEIGHT - 16}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="16" y="{SVG_HEIGHT / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {SVG_HEIGHT / 2})">{y_label}</text>',
        f'<text x="{SVG_MARGIN}" y="{SVG_HEIGHT - SVG_MARGIN + 14}" text-anchor="middle">{x_lo:.3g}</text>',
        f'<text x="{SVG_WIDTH - SVG_MARGIN}" y="{SVG_HEIGHT - SVG_MARGIN + 14}" text-anchor="middle">{x_hi:.3g}</text>',
        f'<text x="{SVG_MARGIN - 4}" y="{SVG_HEIGHT - SVG_MARGIN}" text-anchor="end">{y_lo:.4g}</text>',
        f'<text x="{SVG_MARGIN - 4}" y="{SVG_MARGIN + 4}" text-anchor="end">{y_hi:.4g}</text>',
    ]
    for idx, (algorithm, group) in enumerate(curves.groupby("algorithm", sort=True)):
        color = PALETTE[idx % len(PALETTE)]
        gx = group[x].astype(float).to_numpy()
        gy = group["objective"].astype(float).to_numpy()
        if log_y:
            gy = np.log10(gy)
        points = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(gx, gy))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        legend_y = SVG_MARGIN + 14 * idx
        parts.append(f'<text x="{SVG_WIDTH - SVG_MARGIN - 4}" y="{legend_y}" text-anchor="end" '
                     f'fill="{color}">{escape(str(algorithm))}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ----- Workbook -----

def _save_workbook(path: Path, summary: Dict[str, Dict[str, float]], metrics: RunMetrics) -> None:
    wb = Workbook()
    ws = wb.active
    ws.title = 'Summary'
    columns = ['algorithm', 'runs', 'mean_final_objective', 'std_final_objective', 'min_final_objective']
    ws.append(columns)
    for algorithm, stats in summary.items():
        ws.append([algorithm] + [stats[c] for c in columns[1:]])

    runs = wb.create_sheet('Runs')
    run_columns = ['run_id', 'algorithm', 'seed', 'status', 'iterations', 'initial_objective',
                   'final_objective', 'wall_time_s', 'stepsize', 'error']
    runs.append(run_columns)
    for run in metrics.runs:
        runs.append([getattr(run, c) for c in run_columns])

    temp_path = str(path) + ".tmp"
    last_err = None
    for attempt in range(3):
        try:
            wb.save(temp_path)
            os.replace(temp_path, path)
            last_err = None
            break
        except PermissionError as pe:
            last_err = pe
            time.sleep(0.5)
    if last_err is not None:
        raise last_err


def _flags(metrics: RunMetrics) -> List[Dict[str, object]]:
    flags = []
    for run in metrics.runs:
        if run.status == "failed":
            flags.append({"run_id": run.run_id, "reason": "failed", "detail": run.error})
        elif run.flagged:
            flags.append({"run_id": run.run_id, "reason": "stepsize", "detail": run.stepsize})
    return flags


def emit_report(metrics: RunMetrics, out_dir: str, log_y: bool = True,
                html: bool = True, excel: bool = True) -> Dict[str, str]:
    """
    Write metrics.csv, summary.json, flags.json and the objective curves to `out_dir`,
    plus diagnostics.json when the runs carry diagnostics.

    Args:
        metrics: result of run_experiment
        out_dir: output directory, created when missing
        log_y: log-scale objective axis (ignored when some objective is <= 0)
        html: also write plotly versions of the curves
        excel: also write summary.xlsx

    Returns:
        Mapping of artifact name to written path
    """
    if not metrics.runs:
        raise ConfigError("nothing to report: the metrics collection is empty")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        marker = out / ".write_test"
        marker.write_text("")
        marker.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc

    written = {}
    frame = metrics.records.reindex(columns=Config.CSV_COLUMNS)
    frame.to_csv(out / "metrics.csv", index=False, na_rep="", float_format="%.17g", lineterminator="\n")
    written["metrics"] = str(out / "metrics.csv")

    summary = summarize(metrics)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written["summary"] = str(out / "summary.json")

    (out / "flags.json").write_text(json.dumps(_flags(metrics), indent=2) + "\n")
    written["flags"] = str(out / "flags.json")

    if any(run.sq_steps for run in metrics.runs):
        checks = diagnostic_checks(metrics)
        (out / "diagnostics.json").write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
        written["diagnostics"] = str(out / "diagnostics.json")

    for x, name, label in (("epoch", "plot_epoch", "epochs"), ("wall_time_s", "plot_time", "wall time (s)")):
        curves = seed_averaged(metrics.records, x)
        (out / f"{name}.svg").write_text(render_svg(curves, x, f"Objective vs {label}", label, log_y))
        written[f"{name}.svg"] = str(out / f"{name}.svg")
        if html and not curves.empty:
            fig = px.line(curves, x=x, y="objective", color="algorithm",
                          title=f"Objective vs {label} (mean over seeds)", log_y=log_y and curves["objective"].min() > 0)
            fig.write_html(str(out / f"{name}.html"), include_plotlyjs="cdn")
            written[f"{name}.html"] = str(out / f"{name}.html")

    if excel:
        _save_workbook(out / "summary.xlsx", summary, metrics)
        written["summary.xlsx"] = str(out / "summary.xlsx")

    logger.info("report written to %s (%d files)", out, len(written))
    return written


def load_metrics(path: str) -> pd.DataFrame:
    """Read a metrics.csv back with the documented column order."""
    frame = pd.read_csv(path)
    missing = [c for c in Config.CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path}: missing columns {', '.join(missing)}")
    return frame[Config.CSV_COLUMNS]

