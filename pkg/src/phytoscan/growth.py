"""Time-series analysis of plant size measurements.

Sessions arrive every few hours around the clock; each one contributes a
surface area and a volume. This module fills occasional gaps, labels each
session with its photoperiod phase, fits smooth curves and relative growth
rates, and splits the total gain into its day and night parts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DataQualityError, PreconditionError

DEFAULT_LIGHTS_ON = 6.0    # hour of day
DEFAULT_LIGHTS_OFF = 18.0
DEFAULT_SESSION_INTERVAL = 4.0  # hours


def session_times(num_sessions: int, start_hour: float = DEFAULT_LIGHTS_ON,
                  interval_hours: float = DEFAULT_SESSION_INTERVAL) -> np.ndarray:
    """Evenly spaced session clock, in hours since midnight of day 0."""
    if num_sessions < 1 or interval_hours <= 0:
        raise PreconditionError("need at least one session and a positive interval")
    return start_hour + interval_hours * np.arange(num_sessions, dtype=float)


def _check_times(times: np.ndarray):
    if times.ndim != 1 or times.size < 2:
        raise PreconditionError("need at least two sessions")
    if not np.isfinite(times).all() or (np.diff(times) <= 0).any():
        raise PreconditionError("session times must be finite and strictly increasing")


def label_phase(times_hours, lights_on: float = DEFAULT_LIGHTS_ON,
                lights_off: float = DEFAULT_LIGHTS_OFF) -> np.ndarray:
    """Label each time 'day' or 'night' by its position in the light cycle.

    Day spans [lights_on, lights_off) on the 24 h clock; lights-off belongs
    to the night.
    """
    if not 0.0 <= lights_on < lights_off <= 24.0:
        raise PreconditionError("lights_on must precede lights_off within one day")
    clock = np.asarray(times_hours, float) % 24.0
    return np.where((clock >= lights_on) & (clock < lights_off), "day", "night")


def impute_missing(values) -> tuple:
    """Fill gaps (NaN) with the mean of the nearest real neighbours.

    Interior gaps take the average of the closest real value on each side;
    gaps at either end copy the single nearest real value. More than half
    missing is refused as unusable.

    Returns:
        (filled array, boolean mask of the positions that were imputed).
    """
    v = np.asarray(values, float).copy()
    if v.ndim != 1 or v.size == 0:
        raise PreconditionError("need a one-dimensional series")
    missing = np.isnan(v)
    if missing.sum() * 2 > v.size:
        raise DataQualityError(
            f"{missing.sum()} of {v.size} sessions missing; "
            "more than half the series is gone")
    if not missing.any():
        return v, missing
    idx = np.arange(v.size)
    real = idx[~missing]
    prev = real[np.searchsorted(real, idx, side="right") - 1]       # clamps low
    nxt_pos = np.searchsorted(real, idx, side="left")
    nxt = real[np.minimum(nxt_pos, real.size - 1)]
    before = idx < real[0]
    after = idx > real[-1]
    fill = 0.5 * (v[prev] + v[nxt])
    fill[before] = v[real[0]]
    fill[after] = v[real[-1]]
    v[missing] = fill[missing]
    return v, missing


def fit_spline(times_hours, values) -> CubicSpline:
    """Natural cubic spline through the sessions, for smooth curves."""
    t = np.asarray(times_hours, float)
    v = np.asarray(values, float)
    _check_times(t)
    if v.shape != t.shape or not np.isfinite(v).all():
        raise PreconditionError("values must be finite and match the times")
    if t.size < 4:
        raise PreconditionError("a cubic spline needs at least four sessions")
    return CubicSpline(t, v, bc_type="natural")


@dataclass(frozen=True)
class GrowthRateFit:
    """Log-linear fit v(t) ≈ exp(intercept + rate · t_days) over a window."""

    rate_per_day: float
    intercept: float
    residual_rms: float
    window: tuple


def growth_rate(times_hours, values, window=None) -> GrowthRateFit:
    """Relative growth rate per day from a log-linear least-squares fit.

    Fits ln(value) against time in days over `window`, a half-open
    (start, stop) index pair defaulting to the whole series. The slope is
    the exponential rate per day; intercept and residual RMS come along
    for reporting.
    """
    t = np.asarray(times_hours, float)
    v = np.asarray(values, float)
    _check_times(t)
    if v.shape != t.shape or not np.isfinite(v).all():
        raise PreconditionError("values must be finite and match the times")
    start, stop = (0, t.size) if window is None else (int(window[0]), int(window[1]))
    if not (0 <= start < stop <= t.size) or stop - start < 2:
        raise PreconditionError("fit window must cover at least two sessions")
    tw = t[start:stop]
    vw = v[start:stop]
    bad = np.flatnonzero(vw <= 0)
    if bad.size:
        listed = ", ".join(f"{start + i} ({vw[i]:g})" for i in bad[:5])
        raise PreconditionError(
            f"growth rate needs positive values; offending sessions: {listed}")
    days = tw / 24.0
    slope, intercept = np.polyfit(days, np.log(vw), 1)
    resid = np.log(vw) - (slope * days + intercept)
    return GrowthRateFit(float(slope), float(intercept),
                         float(np.sqrt(np.mean(resid ** 2))), (start, stop))


@dataclass(frozen=True)
class DiurnalStats:
    """Total gain split by phase; `ratio` is night over day, None when the
    day total is zero."""

    day_gain: float
    night_gain: float
    ratio: float | None


def diurnal_stats(times_hours, values, lights_on: float = DEFAULT_LIGHTS_ON,
                  lights_off: float = DEFAULT_LIGHTS_OFF) -> DiurnalStats:
    """Attribute each between-session increment to the phase it started in.

    The two totals telescope exactly to the overall change, whatever the
    session spacing.
    """
    t = np.asarray(times_hours, float)
    v = np.asarray(values, float)
    _check_times(t)
    if v.shape != t.shape or not np.isfinite(v).all():
        raise PreconditionError("values must be finite and match the times")
    labels = label_phase(t[:-1], lights_on, lights_off)
    inc = np.diff(v)
    day = float(inc[labels == "day"].sum())
    night = float(inc[labels == "night"].sum())
    ratio = None if day == 0.0 else night / day
    return DiurnalStats(day, night, ratio)


@dataclass(frozen=True)
class SeriesAnalysis:
    """Everything the reporting layer needs about one measured series."""

    times_hours: np.ndarray
    areas: np.ndarray
    volumes: np.ndarray
    area_imputed: np.ndarray
    volume_imputed: np.ndarray
    phases: np.ndarray
    area_fit: GrowthRateFit
    volume_fit: GrowthRateFit
    area_diurnal: DiurnalStats
    volume_diurnal: DiurnalStats
    lights_on: float = DEFAULT_LIGHTS_ON
    lights_off: float = DEFAULT_LIGHTS_OFF

    @property
    def area_rate(self) -> float:
        return self.area_fit.rate_per_day

    @property
    def volume_rate(self) -> float:
        return self.volume_fit.rate_per_day


def analyze_series(times_hours, areas, volumes,
                   lights_on: float = DEFAULT_LIGHTS_ON,
                   lights_off: float = DEFAULT_LIGHTS_OFF) -> SeriesAnalysis:
    """Run the full growth analysis on one plant's session series.

    Missing sessions (NaN) are imputed per quantity first; rates and the
    day/night split are computed on the filled series.
    """
    t = np.asarray(times_hours, float)
    _check_times(t)
    a = np.asarray(areas, float)
    v = np.asarray(volumes, float)
    if a.shape != t.shape or v.shape != t.shape:
        raise PreconditionError("areas and volumes must match the session times")
    a_fill, a_mask = impute_missing(a)
    v_fill, v_mask = impute_missing(v)
    return SeriesAnalysis(
        times_hours=t,
        areas=a_fill,
        volumes=v_fill,
        area_imputed=a_mask,
        volume_imputed=v_mask,
        phases=label_phase(t, lights_on, lights_off),
        area_fit=growth_rate(t, a_fill),
        volume_fit=growth_rate(t, v_fill),
        area_diurnal=diurnal_stats(t, a_fill, lights_on, lights_off),
        volume_diurnal=diurnal_stats(t, v_fill, lights_on, lights_off),
        lights_on=lights_on,
        lights_off=lights_off,
    )
