"""Reduced-order synchronous machine with governor, turbine, AVR and PSS.

Mechanics: swing equation in power form. Electrics: one-axis flux decay on
e_q' behind an isotropic transient reactance x_d'. All quantities are per
unit on the machine base except the rotor angle (rad) and speed (rad/s).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

OMEGA_B = 2.0 * np.pi * 50.0


@dataclass(frozen=True)
class PSSParams:
    enabled: bool = True
    T_w: float = 10.0
    T1: float = 0.5
    T2: float = 0.05
    k_pss: float = 10.0


@dataclass(frozen=True)
class MachineParams:
    H: float = 3.7
    D: float = 0.0
    d_p: float = 0.01
    tau_g: float = 5.0
    S_rated: float = 100e6
    v_rated: float = 13.8e3
    x_d: float = 1.8
    x_dp: float = 0.3
    x_q: float = 1.7
    T_d0p: float = 8.0
    r_s: float = 0.0
    k_a: float = 20.0
    T_a: float = 0.05
    pss: PSSParams = field(default_factory=PSSParams)

    def __post_init__(self):
        if not (self.H > 0 and self.tau_g > 0 and self.d_p > 0):
            raise ValueError("H, tau_g and d_p must be positive")
        if not (self.x_d > 0 and self.x_dp > 0 and self.x_q > 0 and self.x_d >= self.x_dp):
            raise ValueError("reactances must be positive with x_d >= x_d'")
        if not (self.T_d0p > 0 and self.T_a > 0):
            raise ValueError("time constants must be positive")


@dataclass
class MachineState:
    theta: float
    omega: float
    p_m: float
    e_qp: float
    e_f: float
    pss_washout: float = 0.0
    pss_leadlag: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.theta, self.omega, self.p_m, self.e_qp, self.e_f, self.pss_washout, self.pss_leadlag]
        )

    @classmethod
    def from_array(cls, x) -> "MachineState":
        return cls(*[float(v) for v in x[:7]])


def emf_vector(state: MachineState):
    """Internal EMF in alpha-beta (pu), aligned with the rotor q-axis."""
    return state.e_qp * np.array([np.cos(state.theta), np.sin(state.theta)])


def d_axis_current(theta, i_ab):
    return i_ab[0] * np.sin(theta) - i_ab[1] * np.cos(theta)


def pss_output(state: MachineState, params: MachineParams, omega_b=OMEGA_B):
    """(stabilising signal, washout derivative, lead-lag derivative)."""
    pss = params.pss
    if not pss.enabled:
        return 0.0, 0.0, 0.0
    u = pss.k_pss * (state.omega / omega_b - 1.0)
    y_w = u - state.pss_washout
    out = state.pss_leadlag + (pss.T1 / pss.T2) * (y_w - state.pss_leadlag)
    return out, y_w / pss.T_w, (y_w - state.pss_leadlag) / pss.T2


def machine_rhs(
    state: MachineState,
    terminal_v_ab,
    terminal_i_ab,
    p_ref: float,
    params: MachineParams,
    v_ref: float = 1.0,
    omega_b: float = OMEGA_B,
) -> MachineState:
    """Derivative of the machine states.

    ``terminal_v_ab``/``terminal_i_ab`` are per-unit alpha-beta vectors
    (current leaving the machine).
    """
    vals = [*state.as_array(), *terminal_v_ab, *terminal_i_ab, p_ref, v_ref]
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite machine input")
    e = emf_vector(state)
    i = np.asarray(terminal_i_ab, dtype=float)
    p_e = float(e @ i)
    w = state.omega / omega_b
    d_omega = omega_b * (state.p_m - p_e - params.D * (w - 1.0)) / (2.0 * params.H)
    d_pm = (p_ref + (1.0 - w) / params.d_p - state.p_m) / params.tau_g
    i_d = d_axis_current(state.theta, i)
    d_eq = (state.e_f - state.e_qp - (params.x_d - params.x_dp) * i_d) / params.T_d0p
    v_pss, d_w, d_l = pss_output(state, params, omega_b)
    v_t = float(np.hypot(terminal_v_ab[0], terminal_v_ab[1]))
    d_ef = (params.k_a * (v_ref - v_t + v_pss) - state.e_f) / params.T_a
    return MachineState(state.omega, d_omega, d_pm, d_eq, d_ef, d_w, d_l)


def governor_sharing_gain(units: Sequence) -> np.ndarray:
    """Steady-state share of a load step for units given as (S_rated, droop) pairs."""
    units = list(units)
    if not units:
        raise ValueError("at least one unit is required")
    gains = np.array([s / d for s, d in units], dtype=float)
    if np.any(gains <= 0):
        raise ValueError("ratings and droops must be positive")
    return gains / gains.sum()
