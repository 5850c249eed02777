"""Growth-series analysis: imputation, phase labels, splines, rates."""

import numpy as np
import pytest

from phytoscan.errors import DataQualityError, PreconditionError
from phytoscan.growth import (
    analyze_series,
    diurnal_stats,
    fit_spline,
    growth_rate,
    impute_missing,
    label_phase,
    session_times,
)


def piecewise_series(num_sessions, day_rate, night_rate, v0=100.0):
    """Piecewise-exponential series built by integrating the rate on a fine
    grid per interval, independent of any library closed form."""
    t = session_times(num_sessions)
    exponent = np.zeros(num_sessions)
    for i in range(1, num_sessions):
        grid = np.linspace(t[i - 1], t[i], 97)
        mids = 0.5 * (grid[:-1] + grid[1:])
        rate = np.where(label_phase(mids) == "day", day_rate, night_rate)
        exponent[i] = exponent[i - 1] + np.sum(rate * np.diff(grid)) / 24.0
    return t, v0 * np.exp(exponent)


# ---------------------------------------------------------------- schedule


def test_session_times_default_schedule():
    t = session_times(7)
    assert np.array_equal(t, 6.0 + 4.0 * np.arange(7))


def test_session_times_validation():
    with pytest.raises(PreconditionError):
        session_times(0)
    with pytest.raises(PreconditionError):
        session_times(5, interval_hours=0.0)


# ------------------------------------------------------------ phase labels


def test_label_phase_mid_morning_is_day():
    assert label_phase([10.0])[0] == "day"


def test_label_phase_lights_off_belongs_to_night():
    assert label_phase([18.0])[0] == "night"
    assert label_phase([6.0])[0] == "day"


def test_label_phase_six_sessions_split_three_three():
    labels = label_phase(session_times(6))
    assert list(labels) == ["day"] * 3 + ["night"] * 3


def test_label_phase_periodic_in_24_hours():
    t = np.linspace(0.0, 23.9, 50)
    base = label_phase(t)
    assert np.array_equal(label_phase(t + 24.0), base)
    assert np.array_equal(label_phase(t + 240.0), base)


def test_label_phase_rejects_bad_interval():
    with pytest.raises(PreconditionError):
        label_phase([10.0], lights_on=18.0, lights_off=6.0)
    with pytest.raises(PreconditionError):
        label_phase([10.0], lights_on=-1.0, lights_off=12.0)


# -------------------------------------------------------------- imputation


def test_impute_middle_gap_takes_neighbour_mean():
    filled, mask = impute_missing([4.0, np.nan, 10.0])
    assert np.array_equal(filled, [4.0, 7.0, 10.0])
    assert np.array_equal(mask, [False, True, False])


def test_impute_complete_series_unchanged():
    v = np.array([3.0, 5.0, 4.0, 6.0])
    filled, mask = impute_missing(v)
    assert np.array_equal(filled, v)
    assert not mask.any()


def test_impute_boundary_gap_copies_nearest():
    filled, _ = impute_missing([np.nan, 5.0, 9.0])
    assert filled[0] == 5.0
    filled, _ = impute_missing([2.0, 8.0, np.nan])
    assert filled[2] == 8.0


def test_impute_four_gaps_in_126_sessions():
    _, v = piecewise_series(126, 0.05, 0.10)
    holes = [20, 45, 80, 111]
    broken = v.copy()
    broken[holes] = np.nan
    filled, mask = impute_missing(broken)
    assert mask.sum() == 4
    assert sorted(np.flatnonzero(mask)) == holes
    for i in holes:
        assert filled[i] == 0.5 * (v[i - 1] + v[i + 1])


def test_impute_never_alters_real_samples():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.uniform(1.0, 9.0, size=40)
        holes = rng.choice(40, size=rng.integers(0, 19), replace=False)
        broken = v.copy()
        broken[holes] = np.nan
        filled, mask = impute_missing(broken)
        keep = ~mask
        assert np.array_equal(filled[keep], v[keep])


def test_impute_refuses_mostly_missing():
    with pytest.raises(DataQualityError, match="more than half"):
        impute_missing([1.0, np.nan, np.nan, np.nan, 2.0])


def test_impute_exactly_half_missing_still_fills():
    filled, mask = impute_missing([2.0, np.nan, 6.0, np.nan])
    assert mask.sum() == 2
    assert filled[1] == 4.0 and filled[3] == 6.0


def test_impute_validation():
    with pytest.raises(PreconditionError):
        impute_missing(np.ones((3, 2)))
    with pytest.raises(PreconditionError):
        impute_missing([])


# ----------------------------------------------------------------- splines


def test_spline_reproduces_straight_line():
    t = session_times(12)
    v = 3.5 + 0.25 * t
    sp = fit_spline(t, v)
    probe = np.concatenate([t, 0.5 * (t[:-1] + t[1:])])
    assert np.abs(sp(probe) - (3.5 + 0.25 * probe)).max() < 1e-9


def test_spline_tracks_sine_between_knots():
    t = np.linspace(0.0, 2 * np.pi, 20)
    sp = fit_spline(t, np.sin(t))
    mids = 0.5 * (t[:-1] + t[1:])
    # measured max error 3.2e-5 against unit amplitude
    assert np.abs(sp(mids) - np.sin(mids)).max() < 1e-3


def test_spline_preserves_monotone_envelope():
    t, v = piecewise_series(126, 0.05, 0.10)
    sp = fit_spline(t, v)
    for i in range(len(t) - 1):
        ys = sp(np.linspace(t[i], t[i + 1], 33))
        slack = 0.05 * (v[i + 1] - v[i])
        assert ys.max() <= v[i + 1] + slack
        assert ys.min() >= v[i] - slack


def test_spline_rejects_duplicate_timestamps():
    with pytest.raises(PreconditionError, match="strictly increasing"):
        fit_spline([0.0, 4.0, 4.0, 8.0], [1.0, 2.0, 3.0, 4.0])


def test_spline_needs_four_sessions():
    with pytest.raises(PreconditionError, match="four"):
        fit_spline([0.0, 4.0, 8.0], [1.0, 2.0, 3.0])


# ------------------------------------------------------------ growth rates


def test_growth_rate_recovers_exact_exponential():
    t = session_times(60)
    fit = growth_rate(t, 100.0 * np.exp(0.2 * t / 24.0))
    assert fit.rate_per_day == pytest.approx(0.2, abs=1e-6)
    assert fit.residual_rms < 1e-9
    assert fit.window == (0, 60)


def test_growth_rate_constant_series_is_flat():
    t = session_times(10)
    fit = growth_rate(t, np.full(10, 7.5))
    assert abs(fit.rate_per_day) < 1e-12


def test_growth_rate_mixed_day_night_averages():
    t, v = piecewise_series(126, 0.05, 0.15)
    fit = growth_rate(t, v)
    # measured 0.09997 against the 0.10/day phase average
    assert fit.rate_per_day == pytest.approx(0.10, abs=0.005)


def test_growth_rate_window_isolates_segments():
    t = session_times(40)
    exponent = np.zeros(40)
    for i in range(1, 40):
        rate = 0.05 if i <= 20 else 0.20
        exponent[i] = exponent[i - 1] + rate * (t[i] - t[i - 1]) / 24.0
    v = 50.0 * np.exp(exponent)
    early = growth_rate(t, v, window=(0, 21))
    late = growth_rate(t, v, window=(20, 40))
    assert early.rate_per_day == pytest.approx(0.05, abs=1e-9)
    assert late.rate_per_day == pytest.approx(0.20, abs=1e-9)
    assert late.window == (20, 40)


def test_growth_rate_names_non_positive_sample():
    t = session_times(10)
    v = np.full(10, 2.0)
    v[7] = 0.0
    with pytest.raises(PreconditionError, match="offending sessions") as err:
        growth_rate(t, v)
    assert "7" in str(err.value)


def test_growth_rate_window_validation():
    t = session_times(10)
    v = np.ones(10)
    for window in [(5, 5), (-1, 3), (0, 11), (8, 7)]:
        with pytest.raises(PreconditionError):
            growth_rate(t, v, window=window)


def test_growth_rate_slope_invariant_under_scaling():
    t = session_times(30)
    v = 100.0 * np.exp(0.07 * t / 24.0) * (1.0 + 0.01 * np.sin(t))
    plain = growth_rate(t, v)
    scaled = growth_rate(t, 7.0 * v)
    assert abs(plain.rate_per_day - scaled.rate_per_day) < 1e-12
    assert scaled.intercept != pytest.approx(plain.intercept)


# ----------------------------------------------------------- diurnal split


def test_diurnal_double_night_rate_lands_near_two():
    t, v = piecewise_series(126, 0.05, 0.10)
    st = diurnal_stats(t, v)
    assert st.ratio is not None
    assert 1.8 <= st.ratio <= 2.2
    # measured 2.0125: compounding pushes it just past the rate ratio
    assert st.ratio == pytest.approx(2.0125, abs=0.01)


def test_diurnal_constant_series_has_undefined_ratio():
    t = session_times(12)
    st = diurnal_stats(t, np.full(12, 4.0))
    assert st.day_gain == 0.0
    assert st.night_gain == 0.0
    assert st.ratio is None


def test_diurnal_inverted_control_flips_ratio():
    t, v = piecewise_series(126, 0.10, 0.05)
    st = diurnal_stats(t, v)
    assert st.ratio is not None and st.ratio < 1.0


def test_diurnal_increments_telescope_exactly():
    rng = np.random.default_rng(11)
    v = np.cumsum(rng.integers(-3, 9, size=30)).astype(float) + 50.0
    t = session_times(30)
    st = diurnal_stats(t, v)
    assert st.day_gain + st.night_gain == v[-1] - v[0]


def test_diurnal_telescoping_on_measured_series():
    t, v = piecewise_series(126, 0.05, 0.10)
    st = diurnal_stats(t, v)
    total = v[-1] - v[0]
    assert st.day_gain + st.night_gain == pytest.approx(total, rel=1e-12)


def test_diurnal_interval_takes_phase_of_its_start():
    st = diurnal_stats([6.0, 18.0, 30.0], [1.0, 3.0, 4.0])
    assert st.day_gain == 2.0
    assert st.night_gain == 1.0
    assert st.ratio == 0.5


def test_diurnal_validation():
    with pytest.raises(PreconditionError):
        diurnal_stats([6.0], [1.0])
    with pytest.raises(PreconditionError):
        diurnal_stats([6.0, 10.0], [1.0, 2.0, 3.0])


# ------------------------------------------------------------- full series


def test_analyze_series_wires_everything_together():
    t, v = piecewise_series(126, 0.05, 0.10)
    areas = v.copy()
    volumes = (v / 10.0) ** 1.5
    areas[[30, 90]] = np.nan
    volumes[60] = np.nan
    out = analyze_series(t, areas, volumes)
    assert out.area_imputed.sum() == 2
    assert out.volume_imputed.sum() == 1
    assert np.isfinite(out.areas).all() and np.isfinite(out.volumes).all()
    assert out.phases.shape == t.shape
    assert out.area_rate == out.area_fit.rate_per_day
    assert out.volume_rate == out.volume_fit.rate_per_day
    assert 1.8 <= out.area_diurnal.ratio <= 2.2
    assert out.lights_on == 6.0 and out.lights_off == 18.0


def test_analyze_series_four_gaps_barely_move_the_rate():
    t, v = piecewise_series(126, 0.05, 0.10)
    clean = analyze_series(t, v, v)
    broken = v.copy()
    broken[[20, 45, 80, 111]] = np.nan
    patched = analyze_series(t, broken, v)
    rel = abs(patched.area_rate - clean.area_rate) / abs(clean.area_rate)
    assert rel < 0.01


def test_analyze_series_shape_validation():
    t = session_times(6)
    with pytest.raises(PreconditionError):
        analyze_series(t, np.ones(6), np.ones(5))
