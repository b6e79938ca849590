import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import frame_count_bruteforce, scan_runs
from stylecast.errors import SignalError
from stylecast.media import (
    FrameSchedule,
    HighlightParams,
    HighlightWindow,
    SignalSeries,
    build_frame_schedule,
    detect_highlights,
    highlight_score,
    normalize,
    parse_percentile,
    smooth,
)

HZ = 20.0


def series(values, kind="audio_amplitude", hz=HZ, start=0.0):
    return SignalSeries.uniform(values, hz, kind, start)


def score_series(values, hz=HZ):
    return SignalSeries.uniform(values, hz, "highlight_score")


unit_signal = st.lists(st.floats(0.0, 1.0), min_size=8, max_size=120)


# --- SignalSeries / params -------------------------------------------------


def test_series_rejects_unsorted_times():
    with pytest.raises(SignalError):
        SignalSeries(np.array([0.0, 0.1, 0.1]), np.zeros(3), "audio_amplitude", 10.0)


def test_series_rejects_out_of_range_values():
    with pytest.raises(SignalError):
        series([0.2, 1.5])


def test_highlight_score_kind_is_unbounded():
    SignalSeries.uniform([0.0, 7.5], 10.0, "highlight_score")


def test_normalize_constant_series_is_zero():
    assert normalize([3.0, 3.0, 3.0]).tolist() == [0.0, 0.0, 0.0]
    assert normalize([1.0, 3.0, 2.0]).tolist() == [0.0, 1.0, 0.5]


@pytest.mark.parametrize("bad", [dict(omega_a=0.7, omega_l=0.7), dict(omega_a=-0.1, omega_l=1.1),
                                 dict(min_window_s=-1.0), dict(theta_h="p200"), dict(theta_h="top")])
def test_highlight_params_validation(bad):
    with pytest.raises(ValueError):
        HighlightParams(**bad)


def test_percentile_directives():
    assert parse_percentile("p90") == 90.0
    assert parse_percentile("75%") == 75.0
    params = HighlightParams(theta_h="p50")
    assert params.resolve_threshold(np.arange(11.0)) == pytest.approx(5.0)
    assert HighlightParams(theta_h=0.3).resolve_threshold(np.arange(11.0)) == 0.3


def test_smoothing_preserves_constants_and_ramps():
    assert np.allclose(smooth(np.full(50, 0.4), 0.25, HZ), 0.4)
    ramp = np.arange(60) * 0.01
    inner = smooth(ramp, 0.25, HZ)[10:-10]
    assert np.allclose(inner, ramp[10:-10])


# --- highlight_score -------------------------------------------------------


def test_constant_inputs_give_zero_score():
    h = highlight_score(series([0.5] * 100), series([0.5] * 100, "light_intensity"))
    assert np.all(h.values == 0.0)


def test_unit_step_peaks_at_step():
    # Heaviside convention A(5) = 1/2 makes the smoothed step symmetric about t = 5.
    t = np.arange(200) / HZ
    a = np.where(t < 5.0, 0.0, 1.0)
    a[t == 5.0] = 0.5
    h = highlight_score(series(a), series(np.zeros(200), "light_intensity"),
                        HighlightParams(omega_a=1.0, omega_l=0.0))
    peak = int(np.argmax(h.values))
    assert h.times[peak] == pytest.approx(5.0)
    assert np.sum(h.values == h.values.max()) == 1


def test_plain_step_peaks_within_one_grid_step():
    t = np.arange(200) / HZ
    a = (t >= 5.0).astype(float)
    h = highlight_score(series(a), series(np.zeros(200), "light_intensity"),
                        HighlightParams(omega_a=1.0, omega_l=0.0))
    assert abs(h.times[int(np.argmax(h.values))] - 5.0) <= 1.0 / HZ + 1e-9


def test_ramp_interior_score():
    # A rises at 0.2/s for 5 s, L is flat: H = 0.5 * 0.2 = 0.1 away from the ends.
    t = np.arange(101) / HZ
    h = highlight_score(series(0.2 * t), series(np.full(101, 0.3), "light_intensity"))
    interior = h.values[10:-10]
    assert np.allclose(interior, 0.1, atol=1e-12)


def test_empty_signal_rejected():
    with pytest.raises(SignalError, match="empty signal"):
        highlight_score(series([]), series([0.1], "light_intensity"))


def test_span_mismatch_rejected():
    with pytest.raises(SignalError, match="span mismatch"):
        highlight_score(series([0.1] * 100), series([0.1] * 60, "light_intensity"))


def test_span_within_one_period_is_accepted():
    h = highlight_score(series([0.1] * 100), series([0.1] * 99, "light_intensity"))
    assert len(h) == 99


def test_different_input_rates_are_resampled():
    audio = series(np.linspace(0, 1, 201), hz=40.0)
    light = series(np.zeros(51), "light_intensity", hz=10.0)
    h = highlight_score(audio, light)
    assert h.sample_rate_hz == HZ
    assert h.times[-1] == pytest.approx(5.0)


@given(unit_signal, unit_signal, st.floats(0.0, 1.0))
def test_score_is_linear_in_weights(a_vals, l_vals, w):
    n = min(len(a_vals), len(l_vals))
    a, li = series(a_vals[:n]), series(l_vals[:n], "light_intensity")
    mixed = highlight_score(a, li, HighlightParams(omega_a=w, omega_l=1.0 - w)).values
    only_a = highlight_score(a, li, HighlightParams(omega_a=1.0, omega_l=0.0)).values
    only_l = highlight_score(a, li, HighlightParams(omega_a=0.0, omega_l=1.0)).values
    assert np.allclose(mixed, w * only_a + (1.0 - w) * only_l, atol=1e-9, rtol=0)


@given(unit_signal, st.floats(-30.0, 30.0))
def test_score_is_shift_equivariant(vals, dt):
    a, li = series(vals), series(vals[::-1], "light_intensity")
    base = highlight_score(a, li)
    moved = highlight_score(a.shifted(dt), li.shifted(dt))
    assert np.allclose(moved.times, base.times + dt, atol=1e-9)
    assert np.allclose(moved.values, base.values, atol=1e-9)


# --- detect_highlights -----------------------------------------------------


def test_zero_score_has_no_highlights():
    assert detect_highlights(score_series(np.zeros(100)), HighlightParams(theta_h=0.1)) == []
    assert detect_highlights(score_series(np.zeros(100)), HighlightParams()) == []


def test_single_run_becomes_one_window():
    t = np.arange(200) / HZ
    h = np.where((t >= 4.8 - 1e-9) & (t < 5.6 - 1e-9), 1.0, 0.0)
    windows = detect_highlights(score_series(h), HighlightParams(theta_h=0.5, min_window_s=0.5))
    assert len(windows) == 1
    assert windows[0].start_s == pytest.approx(4.8)
    assert windows[0].end_s == pytest.approx(5.6)
    assert windows[0].peak_score == 1.0


def test_close_runs_merge():
    t = np.arange(200) / HZ
    h = np.where(((t >= 2.0) & (t < 3.0)) | ((t >= 3.4) & (t < 4.0)), 0.9, 0.0)
    windows = detect_highlights(score_series(h), HighlightParams(theta_h=0.5, merge_gap_s=1.0))
    assert [(round(w.start_s, 6), round(w.end_s, 6)) for w in windows] == [(2.0, 4.0)]


def test_short_run_dropped():
    t = np.arange(200) / HZ
    h = np.where((t >= 2.0) & (t < 2.3), 0.9, 0.0)
    assert detect_highlights(score_series(h), HighlightParams(theta_h=0.5, min_window_s=0.5)) == []


def test_run_reaching_the_end_is_closed():
    h = np.r_[np.zeros(50), np.ones(30)]
    (w,) = detect_highlights(score_series(h), HighlightParams(theta_h=0.5))
    assert w.end_s == pytest.approx(80 / HZ)


@given(st.lists(st.floats(0.0, 5.0), min_size=2, max_size=200), st.floats(0.0, 5.0),
       st.floats(0.0, 1.5), st.floats(0.0, 1.5))
def test_detected_windows_are_well_formed(vals, theta, min_len, gap):
    s = score_series(vals)
    params = HighlightParams(theta_h=theta, min_window_s=min_len, merge_gap_s=gap)
    windows = detect_highlights(s, params)
    for a, b in zip(windows, windows[1:]):
        assert a.end_s <= b.start_s
    for w in windows:
        assert w.end_s - w.start_s >= min_len - 1e-9
        inside = (s.times >= w.start_s - 1e-9) & (s.times < w.end_s - 1e-9)
        assert np.any(s.values[inside] > theta)


@given(st.lists(st.floats(0.0, 5.0), min_size=2, max_size=200), st.floats(0.0, 5.0))
def test_unmerged_windows_match_scan_oracle(vals, theta):
    s = score_series(vals)
    windows = detect_highlights(s, HighlightParams(theta_h=theta, min_window_s=0.0, merge_gap_s=0.0))
    expected = scan_runs(list(s.times), vals, theta, 1.0 / HZ)
    assert len(windows) == len(expected)
    for w, (a, b) in zip(windows, expected):
        assert w.start_s == pytest.approx(a) and w.end_s == pytest.approx(b)


# --- build_frame_schedule --------------------------------------------------


def test_no_highlights_ten_seconds():
    sched = build_frame_schedule(10.0, [])
    assert [(s.start_s, s.end_s, s.rate_fps) for s in sched.segments] == [(0.0, 10.0, 0.5)]
    assert sched.frame_count == 5
    assert sched.timestamps() == [0.0, 2.0, 4.0, 6.0, 8.0]


def test_highlight_two_to_four():
    sched = build_frame_schedule(10.0, [HighlightWindow(2.0, 4.0, 1.0)])
    assert [(s.start_s, s.end_s, s.rate_fps) for s in sched.segments] == [
        (0.0, 2.0, 0.5), (2.0, 4.0, 10.0), (4.0, 10.0, 0.5)]
    assert [s.frame_count for s in sched.segments] == [1, 20, 3]
    assert sched.frame_count == 24


def test_full_cover_is_one_dense_segment():
    sched = build_frame_schedule(6.0, [HighlightWindow(0.0, 6.0, 1.0)])
    assert [(s.start_s, s.end_s, s.rate_fps) for s in sched.segments] == [(0.0, 6.0, 10.0)]


def test_nonpositive_duration_rejected():
    with pytest.raises(ValueError):
        build_frame_schedule(0.0, [])


def test_windows_are_clipped_and_joined():
    sched = build_frame_schedule(10.0, [HighlightWindow(-1.0, 1.0, 1.0), HighlightWindow(0.5, 2.0, 1.0),
                                        HighlightWindow(9.0, 12.0, 1.0)])
    assert [(s.start_s, s.end_s, s.rate_fps) for s in sched.segments] == [
        (0.0, 2.0, 10.0), (2.0, 9.0, 0.5), (9.0, 10.0, 10.0)]


def test_schedule_roundtrip():
    sched = build_frame_schedule(10.0, [HighlightWindow(2.0, 4.0, 1.0)])
    again = FrameSchedule.from_dict(sched.to_dict())
    assert again == sched
    assert len(sched.to_dict()["frame_timestamps"]) == 24


@st.composite
def schedules(draw):
    duration = draw(st.integers(1, 600)) / 10.0
    cuts = sorted(draw(st.lists(st.integers(0, int(duration * 10)), max_size=8)))
    windows = [(cuts[i] / 10.0, cuts[i + 1] / 10.0) for i in range(0, len(cuts) - 1, 2) if cuts[i] < cuts[i + 1]]
    return duration, windows


@given(schedules())
def test_schedule_tiles_duration(case):
    duration, windows = case
    sched = build_frame_schedule(duration, [HighlightWindow(s, e, 1.0) for s, e in windows])
    assert sched.segments[0].start_s == 0.0
    assert sched.segments[-1].end_s == duration
    for a, b in zip(sched.segments, sched.segments[1:]):
        assert a.end_s == b.start_s
    assert {s.rate_fps for s in sched.segments} <= {10.0, 0.5}


@given(schedules())
def test_frame_count_matches_oracle(case):
    duration, windows = case
    sched = build_frame_schedule(duration, [HighlightWindow(s, e, 1.0) for s, e in windows])
    assert sched.frame_count == frame_count_bruteforce(duration, windows)
    assert len(sched.timestamps()) == sched.frame_count


@given(st.integers(1, 30), st.integers(0, 30), st.integers(1, 30), st.integers(0, 4), st.integers(0, 4))
def test_grid_aligned_enlargement_never_loses_frames(dur2, start2, len2, grow_left, grow_right):
    # Frame counts floor each segment, so enlargement is only monotone when
    # window edges sit on the 2 s sparse grid (see the decisions ledger).
    duration = 2.0 * (dur2 + start2 + len2 + 4)
    start, end = 2.0 * start2 + 8.0, 2.0 * (start2 + len2) + 8.0
    small = build_frame_schedule(duration, [HighlightWindow(start, end, 1.0)])
    big = build_frame_schedule(duration, [HighlightWindow(start - 2.0 * grow_left, end + 2.0 * grow_right, 1.0)])
    assert big.frame_count >= small.frame_count


def test_enlargement_counterexample_off_grid():
    # Off-grid edges can lose a sparse frame to flooring: [4, 10) holds 3
    # sparse frames but [4.01, 10) only 2, while the dense side gains none.
    small = build_frame_schedule(10.0, [HighlightWindow(0.0, 4.0, 1.0)])
    big = build_frame_schedule(10.0, [HighlightWindow(0.0, 4.01, 1.0)])
    assert (small.frame_count, big.frame_count) == (43, 42)
