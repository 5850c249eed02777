"""Delimited output and figures for a growth analysis.

Rendering goes through the Agg canvas directly, so reports work headless and
never touch global pyplot state.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .growth import SeriesAnalysis, fit_spline

_AREA_COLOR = "tab:blue"
_VOLUME_COLOR = "tab:red"
_IMPUTED_COLOR = "tab:green"
_NUM = "{:.9g}".format


def write_series_csv(analysis: SeriesAnalysis, path) -> None:
    """One row per session: time, phase, both measurements, imputation flags."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session", "time_hours", "phase", "surface_area_mm2",
                         "surface_area_imputed", "volume_mm3", "volume_imputed"])
        for i in range(analysis.times_hours.size):
            writer.writerow([
                i,
                _NUM(analysis.times_hours[i]),
                analysis.phases[i],
                _NUM(analysis.areas[i]),
                int(analysis.area_imputed[i]),
                _NUM(analysis.volumes[i]),
                int(analysis.volume_imputed[i]),
            ])


def write_curves_csv(analysis: SeriesAnalysis, path,
                     per_session: int = 8) -> None:
    """Fitted spline curves sampled densely, one row per sample time.

    `per_session` sets how many samples land between consecutive sessions,
    so plotting tools can redraw the curves without refitting.
    """
    t = analysis.times_hours
    if per_session < 1:
        raise ValueError("per_session must be at least 1")
    dense = np.linspace(t[0], t[-1], (t.size - 1) * per_session + 1)
    area_curve = fit_spline(t, analysis.areas)(dense)
    volume_curve = fit_spline(t, analysis.volumes)(dense)
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time_hours", "surface_area_mm2", "volume_mm3"])
        for row in zip(dense, area_curve, volume_curve):
            writer.writerow([_NUM(value) for value in row])


def _shade_nights(ax, analysis: SeriesAnalysis) -> None:
    t = analysis.times_hours
    off, on = analysis.lights_off, analysis.lights_on
    start = 24.0 * np.floor(t[0] / 24.0) - 24.0
    for day0 in np.arange(start, t[-1], 24.0):
        lo = max(day0 + off, t[0])
        hi = min(day0 + 24.0 + on, t[-1])
        if hi > lo:
            ax.axvspan(lo, hi, color="0.85", zorder=0, lw=0)


def growth_curves_figure(analysis: SeriesAnalysis) -> Figure:
    """Measured area and volume over time with spline curves.

    Imputed sessions are drawn in a third colour so gaps stay honest.
    Night periods are shaded.
    """
    fig = Figure(figsize=(9.0, 5.0))
    ax = fig.add_subplot(111)
    ax2 = ax.twinx()
    _shade_nights(ax, analysis)

    t = analysis.times_hours
    dense = np.linspace(t[0], t[-1], max(200, t.size * 10))
    if t.size >= 4:
        ax.plot(dense, fit_spline(t, analysis.areas)(dense),
                color=_AREA_COLOR, lw=1.2, alpha=0.7)
        ax2.plot(dense, fit_spline(t, analysis.volumes)(dense),
                 color=_VOLUME_COLOR, lw=1.2, alpha=0.7)

    for values, axis, color, label in (
            (analysis.areas, ax, _AREA_COLOR, "surface area"),
            (analysis.volumes, ax2, _VOLUME_COLOR, "volume")):
        imputed = (analysis.area_imputed if axis is ax
                   else analysis.volume_imputed)
        axis.scatter(t[~imputed], values[~imputed], s=18, color=color,
                     label=label, zorder=3)
        if imputed.any():
            axis.scatter(t[imputed], values[imputed], s=26, marker="D",
                         color=_IMPUTED_COLOR, zorder=4,
                         label=f"{label} (imputed)")

    ax.set_xlabel("time [h]")
    ax.set_ylabel("surface area [mm$^2$]", color=_AREA_COLOR)
    ax2.set_ylabel("volume [mm$^3$]", color=_VOLUME_COLOR)
    ax.tick_params(axis="y", labelcolor=_AREA_COLOR)
    ax2.tick_params(axis="y", labelcolor=_VOLUME_COLOR)
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, loc="upper left", fontsize=8)
    ax.set_title("growth over the scan series")
    fig.tight_layout()
    return fig


def growth_rate_figure(analysis: SeriesAnalysis) -> Figure:
    """Log-scale series with the fitted exponential trends and their rates."""
    fig = Figure(figsize=(9.0, 5.0))
    ax = fig.add_subplot(111)
    t = analysis.times_hours
    days = t / 24.0
    for values, fit, color, label in (
            (analysis.areas, analysis.area_fit, _AREA_COLOR, "surface area"),
            (analysis.volumes, analysis.volume_fit, _VOLUME_COLOR, "volume")):
        ax.semilogy(t, values, ".", color=color, ms=5,
                    label=f"{label}: {fit.rate_per_day:+.4f}/day")
        ax.semilogy(t, np.exp(fit.intercept + fit.rate_per_day * days), "-",
                    color=color, lw=1.0, alpha=0.7)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("size [mm$^2$, mm$^3$]")
    ax.legend(loc="upper left", fontsize=9)
    ax.set_title("relative growth rates")
    fig.tight_layout()
    return fig


def save_figure(fig: Figure, path, dpi: int = 150) -> None:
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=dpi)


def render_report(analysis: SeriesAnalysis, out_dir) -> list:
    """Write the CSV and both figures into a directory; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "series.csv", out / "curves.csv",
             out / "growth_curves.png", out / "growth_rates.png"]
    write_series_csv(analysis, paths[0])
    write_curves_csv(analysis, paths[1])
    save_figure(growth_curves_figure(analysis), paths[2])
    save_figure(growth_rate_figure(analysis), paths[3])
    return paths
