"""CSV output, plot scripts and figure rendering.

CSV files are UTF-8 with a header row and floats written to 17 significant
digits. Each CSV can be accompanied by a small generated script that
re-renders its figure; matplotlib is imported only when a figure is drawn.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

VALIDATE_FIELDS = ["role", "metric", "threshold_s", "ub", "stable", "count_exceed", "count_total",
                   "p_hat", "wilson_hi", "dominates", "seed"]
BOUND_FIELDS = ["role", "metric", "target_s", "value", "theta_star", "stable", "kernel_evals",
                "p_w", "p_s"]
OPT_FIELDS = ["scheme", "role", "target_kind", "target_s", "p_star_w", "status", "binding",
              "sdvp", "savp", "iters", "ps_bits", "arrival_rate_bps", "saving"]


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if value is None:
        return ""
    return str(value)


def csv_text(fields: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([fmt(r.get(f)) for f in fields])
    return buf.getvalue()


def write_csv(path, fields: Sequence[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(fields, rows), encoding="utf-8")
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def log_slope(x: Sequence[float], p: Sequence[float]) -> float:
    """Least-squares slope of log10(p) against x."""
    x = np.asarray(x, dtype=float)
    y = np.log10(np.asarray(p, dtype=float))
    if x.size < 2:
        return math.nan
    return float(np.polyfit(x, y, 1)[0])


def slope_points(rows: Sequence[dict], floor: float = 1e-4) -> tuple[list[float], list[float], list[float]]:
    """Thresholds where the bound is informative (< 1) and the empirical tail >= ``floor``."""
    xs, ub, sim = [], [], []
    for r in rows:
        if float(r["ub"]) < 1.0 and float(r["p_hat"]) >= floor:
            xs.append(float(r["threshold_s"]))
            ub.append(float(r["ub"]))
            sim.append(float(r["p_hat"]))
    return xs, ub, sim


# -- figures ------------------------------------------------------------------

_SCRIPT = '''\
"""Re-render {png} from {csv}."""
from pathlib import Path

from snc_noma.report import render

here = Path(__file__).resolve().parent
render(here / {csv!r}, {kind!r}, here / {png!r})
'''


def write_plot_script(csv_path, kind: str, png_path) -> Path:
    csv_path, png_path = Path(csv_path), Path(png_path)
    script = csv_path.with_name(csv_path.stem + "_plot.py")
    script.write_text(_SCRIPT.format(csv=csv_path.name, kind=kind, png=png_path.name),
                      encoding="utf-8")
    return script


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _plot_validate(rows, ax_pair):
    for ax, metric in zip(ax_pair, ("sdvp", "savp")):
        for role, color in (("WU", "tab:blue"), ("SU", "tab:red")):
            sel = [r for r in rows if r["metric"] == metric and r["role"] == role]
            if not sel:
                continue
            x = np.array([float(r["threshold_s"]) for r in sel]) * 1e3
            ub = np.array([float(r["ub"]) for r in sel])
            sim = np.array([float(r["p_hat"]) for r in sel])
            ax.semilogy(x, ub, "-", color=color, label=f"{role} bound")
            ax.semilogy(x, np.where(sim > 0, sim, np.nan), "o--", color=color, mfc="none",
                        label=f"{role} sim")
        ax.set_xlabel("delay threshold (ms)" if metric == "sdvp" else "AoI threshold (ms)")
        ax.set_ylabel("violation probability")
        ax.grid(True, which="both", alpha=0.3)
        if ax.lines:
            ax.legend(fontsize=8)


def _plot_sweep(rows, axes):
    kinds = [k for k in ("delay", "aoi", "qos") if any(r["target_kind"] == k for r in rows)]
    for i, kind in enumerate(kinds):
        for j, role in enumerate(("WU", "SU")):
            ax = axes[i, j]
            for ps in sorted({r["ps_bits"] for r in rows}, key=int):
                for scheme, style in (("noma", "-o"), ("oma", "--s")):
                    sel = [r for r in rows if r["role"] == role and r["scheme"] == scheme
                           and r["target_kind"] == kind and r["ps_bits"] == ps]
                    if sel:
                        ax.semilogy([float(r["target_s"]) * 1e3 for r in sel],
                                    [float(r["p_star_w"]) for r in sel], style, ms=3,
                                    label=f"{scheme.upper()} PS={ps}")
            ax.set_title(f"{role}, {kind} sweep")
            ax.set_xlabel("target delay (ms)" if kind != "aoi" else "target AoI (ms)")
            ax.set_ylabel("transmit power (W)")
            ax.grid(True, which="both", alpha=0.3)
            ax.legend(fontsize=7)


def _sweep_rows(rows):
    return max(1, len({r["target_kind"] for r in rows}))


def _plot_bound(rows, ax_pair):
    for ax, role in zip(ax_pair, ("WU", "SU")):
        sel = [r for r in rows if r["role"] == role]
        for metric in sorted({r["metric"] for r in sel}):
            s = [r for r in sel if r["metric"] == metric]
            ax.semilogy([float(r["target_s"]) * 1e3 for r in s], [float(r["value"]) for r in s],
                        "-o", ms=3, label=metric)
        ax.set_title(role)
        ax.set_xlabel("target (ms)")
        ax.set_ylabel("upper bound")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)


_PLOTTERS = {"validate": _plot_validate, "sweep": _plot_sweep, "optimize": _plot_sweep,
             "bound": _plot_bound}


def render(csv_path, kind: str, png_path) -> Path:
    """Draw the figure of a ``kind`` CSV into ``png_path``."""
    plt = _pyplot()
    rows = read_csv(csv_path)
    if kind in ("sweep", "optimize"):
        n = _sweep_rows(rows)
        fig, axes = plt.subplots(n, 2, figsize=(10, 4 * n), squeeze=False)
    else:
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    _PLOTTERS[kind](rows, axes)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return Path(png_path)
