import math

import numpy as np
import pytest

from hacgrid.machine import (OMEGA_B, MachineParams, MachineState, PSSParams, d_axis_current, emf_vector,
                             governor_sharing_gain, machine_rhs, pss_output)
from hacgrid.numerics import IntegratorConfig, integrate

P = MachineParams()


def _equilibrium(theta=0.4, e_qp=1.1, i_ab=(0.5, 0.2), v_t=1.0):
    i = np.array(i_ab)
    s = MachineState(theta, OMEGA_B, 0.0, e_qp, 0.0)
    p_e = float(emf_vector(s) @ i)
    s.p_m = p_e
    s.e_f = e_qp + (P.x_d - P.x_dp) * d_axis_current(theta, i)
    v_ref = v_t + s.e_f / P.k_a
    return s, np.array([v_t, 0.0]), i, p_e, v_ref


def test_synchronous_equilibrium():
    s, v, i, p_e, v_ref = _equilibrium()
    d = machine_rhs(s, v, i, p_e, P, v_ref=v_ref)
    assert d.theta == OMEGA_B
    assert np.allclose(d.as_array()[1:], 0.0, atol=1e-12)


def test_swing_initial_slope():
    s, v, i, p_e, v_ref = _equilibrium()
    s.p_m = p_e - 0.1
    d = machine_rhs(s, v, i, s.p_m, P, v_ref=v_ref)
    assert d.omega / OMEGA_B == pytest.approx(-0.1 / (2 * 3.7), rel=1e-12)


def test_pss_silent_without_speed_deviation():
    s = MachineState(0.0, OMEGA_B, 0.5, 1.0, 1.0)
    assert pss_output(s, P) == (0.0, 0.0, 0.0)


def test_pss_only_changes_field_path():
    s, v, i, p_e, v_ref = _equilibrium()
    s.omega = 1.01 * OMEGA_B
    on = machine_rhs(s, v, i, p_e, P, v_ref=v_ref).as_array()
    off = machine_rhs(s, v, i, p_e, MachineParams(pss=PSSParams(enabled=False)), v_ref=v_ref).as_array()
    diff = np.flatnonzero(on != off)
    assert set(diff) <= {4, 5, 6}
    assert 4 in diff


def test_kinetic_energy_matches_accelerating_power():
    # governor frozen by a huge lag, D = 0, fixed terminal current
    p = MachineParams(tau_g=1e12)
    s, v, i, p_e, v_ref = _equilibrium()
    s.p_m = p_e + 0.05
    x0 = s.as_array()

    def f(t, x):
        st = MachineState.from_array(x)
        return machine_rhs(st, v, i, p_e, p, v_ref=v_ref).as_array()

    tr = integrate(f, x0, IntegratorConfig(1e-5, 0.05, record_every=1))
    w = tr.samples[:, 1] / OMEGA_B
    ke = p.H * w**2
    # d(H w^2)/dt = w (p_m - p_e); integrate the accelerating power by the trapezoid rule
    pe = np.array([emf_vector(MachineState.from_array(x)) @ i for x in tr.samples])
    acc = w * (tr.samples[:, 2] - pe)
    work = np.concatenate([[0.0], np.cumsum(0.5 * (acc[1:] + acc[:-1]) * np.diff(tr.times))])
    assert abs(ke[-1] - ke[0]) > 1e-4
    assert np.allclose(ke - ke[0], work, rtol=0, atol=1e-8)


def test_sharing_gains():
    assert np.allclose(governor_sharing_gain([(100e6, 0.01), (100e6, 0.01)]), [0.5, 0.5])
    assert np.allclose(governor_sharing_gain([(100e6, 0.01)] * 3), [1 / 3] * 3)
    assert np.allclose(governor_sharing_gain([(100e6, 0.01), (100e6, 0.02)]), [2 / 3, 1 / 3])


def test_sharing_gains_empty():
    with pytest.raises(ValueError):
        governor_sharing_gain([])


def test_params_validation():
    with pytest.raises(ValueError):
        MachineParams(x_d=0.2, x_dp=0.3)
    with pytest.raises(ValueError):
        MachineParams(H=0.0)


def test_non_finite_input_rejected():
    s, v, i, p_e, v_ref = _equilibrium()
    with pytest.raises(ValueError):
        machine_rhs(s, np.array([np.inf, 0.0]), i, p_e, P)
