import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hacgrid.converter import (POWER_SCALE, REFERENCE_AGGREGATE, REFERENCE_MODULE, ConverterParams, ConverterState,
                               aggregate, converter_rhs, stage_powers, switch_current)
from hacgrid.numerics import IntegratorConfig, integrate

M = REFERENCE_MODULE


def test_aggregate_identity():
    assert aggregate(M, 1) == M


def test_aggregate_rating():
    assert REFERENCE_AGGREGATE.S_rated == pytest.approx(100e6)


def test_aggregate_composes():
    a = aggregate(aggregate(M, 2), 100)
    b = aggregate(M, 200)
    for f in ("G_dc", "C_dc", "R", "L", "C", "S_rated", "tau_dc", "v_dc_r", "i_dc_max", "n_modules"):
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=1e-15)


def test_aggregate_keeps_pu_quantities():
    a = aggregate(M, 7)
    assert (a.tau_dc, a.v_dc_r, a.i_dc_max) == (M.tau_dc, M.v_dc_r, M.i_dc_max)
    assert a.z_base == pytest.approx(M.z_base / 7)
    assert a.R / a.z_base == pytest.approx(M.R / M.z_base)


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_aggregate_rejects_bad_count(n):
    with pytest.raises(ValueError):
        aggregate(M, n)


def test_params_validation():
    with pytest.raises(ValueError):
        ConverterParams(i_dc_max=0.9)
    with pytest.raises(ValueError):
        ConverterParams(C_dc=0.0)


def test_dc_equilibrium_at_zero_modulation():
    s = ConverterState(M.G_dc * M.v_dc_r, M.v_dc_r, np.zeros(2), np.zeros(2))
    d = converter_rhs(s, np.zeros(2), np.zeros(2), M.G_dc * M.v_dc_r, M)
    assert d.i_dc == 0.0 and d.v_dc == 0.0
    assert np.all(d.i_s_ab == 0.0) and np.all(d.v_ab == 0.0)


finite = st.floats(-1e4, 1e4, allow_nan=False)


@given(st.floats(0.0, 1.5), st.floats(-10, 10), st.floats(100.0, 4000.0), finite, finite)
def test_stage_power_is_lossless(mu, th, v_dc, ia, ib):
    m = mu * np.array([math.cos(th), math.sin(th)])
    s = ConverterState(0.0, v_dc, np.array([ia, ib]), np.zeros(2))
    p_dc, p_ac = stage_powers(s, m)
    assert abs(p_dc - p_ac) < 1e-12 * (abs(p_dc) + 1.0)


def _dc_only(i_ref, p, t_end):
    def f(t, x):
        s = ConverterState(x[0], x[1], np.zeros(2), np.zeros(2))
        d = converter_rhs(s, np.zeros(2), np.zeros(2), i_ref, p)
        return np.array([d.i_dc, d.v_dc])
    return integrate(f, np.array([0.0, p.v_dc_r]), IntegratorConfig(1e-4, t_end))


@pytest.mark.parametrize("ref_pu", [2.0, 50.0])
def test_source_current_saturates_with_source_lag(ref_pu):
    p = M
    tr = _dc_only(ref_pu * p.i_dc_base, p, 5 * p.tau_dc)
    lim = p.i_dc_max * p.i_dc_base
    expected = lim * (1 - math.exp(-5.0))
    assert tr.final[0] == pytest.approx(expected, rel=1e-9)
    assert tr.final[0] / p.i_dc_base < 1.2


def test_negative_reference_saturates_symmetrically():
    tr = _dc_only(-3.0 * M.i_dc_base, M, 10 * M.tau_dc)
    assert tr.final[0] / M.i_dc_base == pytest.approx(-1.2, rel=1e-4)


def test_non_finite_input_rejected():
    s = ConverterState(0.0, M.v_dc_r, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        converter_rhs(s, np.array([np.nan, 0.0]), np.zeros(2), 0.0, M)


@given(st.integers(1, 400), st.floats(0.0, 1.0), st.floats(-3, 3), st.floats(-2, 2), st.floats(-2, 2),
       st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=50)
def test_aggregated_unit_is_per_unit_identical(n, mu, th, ia, ib, va, vb):
    agg = aggregate(M, n)
    m = mu * np.array([math.cos(th), math.sin(th)])

    def state(p):
        return ConverterState(0.7 * p.i_dc_base, 0.99 * p.v_dc_r, np.array([ia, ib]) * p.i_base,
                              np.array([va, vb]) * p.v_base)

    def pu(d, p):
        return np.array([d.i_dc / p.i_dc_base, d.v_dc / p.v_dc_r, *(d.i_s_ab / p.i_base), *(d.v_ab / p.v_base)])

    i_grid = np.array([0.3, -0.2])
    d1 = converter_rhs(state(M), m, i_grid * M.i_base, 0.5 * M.i_dc_base, M)
    dn = converter_rhs(state(agg), m, i_grid * agg.i_base, 0.5 * agg.i_dc_base, agg)
    assert np.allclose(pu(d1, M), pu(dn, agg), rtol=1e-10, atol=1e-9)


def test_switch_current_scale():
    assert switch_current([1.0, 0.0], [2.0, 5.0]) == pytest.approx(POWER_SCALE * 2.0)
