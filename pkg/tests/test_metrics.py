import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hacgrid import metrics as mt
from hacgrid.errors import UsageError

W0 = 2 * math.pi * 50
TWO_PI = 2 * math.pi
t = np.linspace(0.0, 2 * math.pi, 20001)


def test_nadir_constant():
    assert mt.max_frequency_deviation(t, np.full_like(t, W0), W0) == 0.0


def test_nadir_sinusoid():
    w = W0 - TWO_PI * 0.3 * np.sin(t)
    assert mt.max_frequency_deviation(t, w, W0) / TWO_PI == pytest.approx(0.3, rel=1e-8)


def test_nadir_one_sided():
    assert mt.max_frequency_deviation(t, W0 + 1.0 + np.sin(t) ** 2, W0) == 0.0


def test_nadir_ignores_samples_before_start():
    w = np.where(t < 1.0, W0 - 5.0, W0 - 1.0)
    assert mt.max_frequency_deviation(t, w, W0, t_from=1.0) == pytest.approx(1.0)


def test_nadir_errors():
    with pytest.raises(UsageError):
        mt.max_frequency_deviation([], [], W0)
    with pytest.raises(UsageError):
        mt.max_frequency_deviation(t, np.full_like(t, W0), W0, t_from=100.0)


@given(st.floats(-100.0, 100.0), st.floats(0.0, 3.0))
def test_nadir_time_shift_invariant(shift, amp):
    w = W0 - amp * np.sin(t) ** 3
    assert mt.max_frequency_deviation(t + shift, w, W0) == mt.max_frequency_deviation(t, w, W0)


def test_rocof_ramp():
    tt = np.linspace(0.0, 2.0, 2001)
    w = W0 - TWO_PI * 0.5 * tt
    for t0, dt in [(0.0, 0.15), (0.3, 0.5), (1.2, 0.8)]:
        assert mt.rocof(tt, w, t0, dt) / TWO_PI == pytest.approx(0.5, rel=1e-12)


def test_rocof_constant():
    assert mt.rocof(t, np.full_like(t, W0), 0.5, 0.15) == 0.0


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=10), st.floats(0.0, 0.5), st.floats(0.01, 0.4))
def test_rocof_exact_for_piecewise_linear(knots, t0, dt):
    tk = np.linspace(0.0, 1.0, len(knots))
    ts = np.unique(np.concatenate([tk, [t0, t0 + dt]]))
    w = np.interp(ts, tk, knots)
    expected = abs(np.interp(t0 + dt, tk, knots) - np.interp(t0, tk, knots)) / dt
    assert mt.rocof(ts, w, t0, dt) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_rocof_window_errors():
    with pytest.raises(UsageError):
        mt.rocof(t, np.full_like(t, W0), 6.2, 0.15)
    with pytest.raises(UsageError):
        mt.rocof(t, np.full_like(t, W0), 0.0, 0.0)


def test_sharing_error_cases():
    p = 0.5 + 0.1 * np.sin(t)
    assert mt.sharing_error(t, {"a": p, "b": p, "c": p}) == 0.0
    assert mt.sharing_error(t, {"a": p, "b": p + 0.05}) == pytest.approx(0.05, rel=1e-12)
    with pytest.raises(UsageError):
        mt.sharing_error(t, {"a": p})


def test_sharing_error_normalises_ratings():
    p = np.full_like(t, 1.0)
    assert mt.sharing_error(t, {"a": 50e6 * p, "b": 100e6 * p}, {"a": 100e6, "b": 200e6}) == 0.0


def test_settling_time_first_order():
    tt = np.linspace(0.0, 10.0, 100001)
    y = np.where(tt < 1.0, 0.0, 1.0 - np.exp(-(tt - 1.0)))
    st_ = mt.settling_time(tt, [y], 1.0, band_rel=0.02, final_fraction=0.01)
    final = np.mean(y[-1000:])
    # leaves the band centred on the tail mean when exp(-s) drops below 1 - final + 0.02 final
    assert st_ == pytest.approx(-math.log(1.0 - final + 0.02 * final), abs=2e-4)


def test_settling_time_never():
    tt = np.linspace(0.0, 1.0, 101)
    y = np.where(np.arange(101) % 2 == 0, 1.0, -1.0)
    assert mt.settling_time(tt, [y], 0.0) == math.inf


def _classify(w, v=None, **th):
    tt = np.linspace(0.0, 5.0, 5001)
    v = np.full_like(tt, 2440.0) if v is None else v
    return mt.classify_stability(tt, {"g": w(tt)}, {"g": v}, 2440.0, W0, mt.StabilityThresholds(**th))


def test_classify_flatline_settled():
    assert _classify(lambda tt: np.full_like(tt, W0)) == "settled"


def test_classify_bounded_oscillation():
    assert _classify(lambda tt: W0 + TWO_PI * 0.5 * np.sin(10 * tt)) == "oscillatory"


def test_classify_dc_collapse():
    tt = np.linspace(0.0, 5.0, 5001)
    v = 2440.0 * np.exp(-tt)
    assert _classify(lambda tt: np.full_like(tt, W0), v) == "diverged"


def test_classify_sustained_frequency_excursion():
    assert _classify(lambda tt: np.where(tt > 2.0, W0 - TWO_PI * 6.0, W0)) == "diverged"
    # a short spike is not enough
    assert _classify(lambda tt: np.where((tt > 2.0) & (tt < 2.01), W0 - TWO_PI * 6.0, W0)) == "settled"


def test_classify_non_finite():
    assert _classify(lambda tt: np.where(tt > 4.0, np.nan, W0)) == "diverged"
    tt = np.linspace(0.0, 5.0, 5001)
    assert mt.classify_stability(tt, {}, {}, 2440.0, W0, finite=False) == "diverged"


RANK = {"settled": 0, "oscillatory": 1, "diverged": 2}


@given(st.floats(0.0, 8.0), st.floats(0.0, 20.0), st.floats(0.3, 1.0), st.floats(1.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_classification_threshold_monotone(amp, freq, frac, loosen):
    tt = np.linspace(0.0, 5.0, 2001)
    w = W0 - TWO_PI * amp * np.sin(freq * tt) * np.exp(-0.2 * tt)
    v = 2440.0 * (1.0 - (1.0 - frac) * tt / 5.0)
    tight = mt.StabilityThresholds()
    loose = mt.StabilityThresholds(v_dc_min_fraction=tight.v_dc_min_fraction / loosen,
                                   max_freq_dev_hz=tight.max_freq_dev_hz * loosen,
                                   sustain_s=tight.sustain_s * loosen, band_hz=tight.band_hz * loosen,
                                   v_dc_band_fraction=tight.v_dc_band_fraction * loosen)
    a = mt.classify_stability(tt, {"g": w}, {"g": v}, 2440.0, W0, tight)
    b = mt.classify_stability(tt, {"g": w}, {"g": v}, 2440.0, W0, loose)
    assert RANK[b] <= RANK[a]
    assert a == mt.classify_stability(tt, {"g": w}, {"g": v}, 2440.0, W0, tight)


def test_report_units():
    r = mt.MetricsReport(TWO_PI * 0.2, TWO_PI * 0.5, 0.15, 1.0, 0.3, 0.0, "settled")
    d = r.as_dict()
    assert d["max_freq_deviation_hz"] == pytest.approx(0.2)
    assert d["rocof_hz_s"] == pytest.approx(0.5)
