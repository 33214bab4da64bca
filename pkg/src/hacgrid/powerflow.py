"""Phasor steady state at nominal frequency and back-solved device states.

Port buses carry the device voltages (converter filter capacitor or machine
EMF, referred to the network side). Dynamic buses are eliminated through the
nodal admittance matrix, leaving one complex current per port. Converters
regulate their capacitor voltage magnitude; machines regulate the terminal
voltage behind the stator reactance. All units take the same active power in
pu of their rating.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict

import numpy as np
from scipy.optimize import root

from .controls import HAC, Droop, Matching
from .converter import POWER_SCALE
from .errors import ConfigurationError
from .network import admittance_matrix
from .system import GFC_STATES, SM_STATES, AssembledSystem, GFCUnit, SMUnit


@dataclass
class PowerFlow:
    port_voltage: Dict[int, complex]  # peak phasors, network side
    port_current: Dict[int, complex]  # leaving the device
    bus_voltage: Dict[int, complex]  # dynamic buses
    p_pu: float  # common power per unit of rating
    converged: bool
    residual: float


def reduce_network(system: AssembledSystem, omega, G=None):
    """(Y_red, V_D transfer) with V_D = T @ V_P and I_P = Y_red @ V_P."""
    net = system.network
    Y = admittance_matrix(net, omega, G)
    nb = net.n_bus
    Ydd, Ydp = Y[:nb, :nb], Y[:nb, nb:]
    Ypd, Ypp = Y[nb:, :nb], Y[nb:, nb:]
    T = -np.linalg.solve(Ydd, Ydp)
    return Ypp + Ypd @ T, T


def solve_power_flow(system: AssembledSystem, v_sm: float = 1.0, omega=None, G=None) -> PowerFlow:
    net = system.network
    omega = system.omega_b if omega is None else omega
    Yr, T = reduce_network(system, omega, G)
    ports = net.port_ids
    unit_at = {u.bus: u for u in system.units}
    n = len(ports)
    vb = system.v_base
    S = np.array([unit_at[b].params.S_rated for b in ports])
    sm_idx = [k for k, b in enumerate(ports) if isinstance(unit_at[b], SMUnit)]
    zs = {}
    for k in sm_idx:
        p = unit_at[ports[k]].params
        zb = system.v_nom**2 / p.S_rated
        zs[k] = p.r_s * zb + 1j * omega * p.x_dp * zb / system.omega_b

    def unpack(z):
        ang = np.concatenate([[0.0], z[: n - 1]])
        mag = np.ones(n)
        for j, k in enumerate(sm_idx):
            mag[k] = z[n - 1 + j]
        return mag * vb * np.exp(1j * ang), z[-1]

    def residual(z):
        V, p = unpack(z)
        I = Yr @ V
        P = POWER_SCALE * np.real(V * np.conj(I)) / S
        res = list(P - p)
        for k in sm_idx:
            res.append(abs(V[k] - zs[k] * I[k]) / vb - v_sm)
        return np.array(res)

    # the node order of ports (and hence the angle reference) is the dataset order
    z0 = np.concatenate([np.zeros(n - 1), np.full(len(sm_idx), 1.05), [0.5]])
    sol = root(residual, z0, method="hybr", options={"xtol": 1e-13})
    r = float(np.max(np.abs(residual(sol.x))))
    V, p = unpack(sol.x)
    I = Yr @ V
    VD = T @ V
    return PowerFlow(
        {b: V[k] for k, b in enumerate(ports)},
        {b: I[k] for k, b in enumerate(ports)},
        {b: VD[k] for k, b in enumerate(net.dynamic_ids)},
        float(p),
        bool(sol.success) and r < 1e-8,
        r,
    )


def _ab(z: complex) -> np.ndarray:
    return np.array([z.real, z.imag])


def initial_state(system: AssembledSystem, pf: PowerFlow, omega=None, hac_delta_r_from_flow: bool = True):
    """State vector at the power-flow solution; also writes set-points into the units.

    Converter power references, machine governor/AVR references and (when
    requested) the HAC angle references are chosen so that the solution is
    an equilibrium. The packed arrays are refreshed afterwards.
    """
    omega = system.omega_b if omega is None else omega
    net = system.network
    x = np.zeros(system.layout.size)
    for u in system.units:
        V = pf.port_voltage[u.bus]
        I = pf.port_current[u.bus]
        off = system.layout[(u.name, GFC_STATES[0] if isinstance(u, GFCUnit) else SM_STATES[0])].offset
        if isinstance(u, GFCUnit):
            _init_gfc(system, u, V, I, omega, x, off, pf, hac_delta_r_from_flow)
        else:
            _init_sm(system, u, V, I, omega, x, off, pf)
    # line currents from the dynamic bus voltages
    nodes = np.zeros(net.n_bus + net.n_port, dtype=complex)
    for bid, v in pf.bus_voltage.items():
        nodes[net.node_of[bid]] = v
    for bid, v in pf.port_voltage.items():
        nodes[net.node_of[bid]] = v
    for k in range(net.n_branch):
        i = (nodes[net.branch_from[k]] - nodes[net.branch_to[k]]) / (net.R[k] + 1j * omega * net.L[k])
        x[system.net_offset + 2 * k: system.net_offset + 2 * k + 2] = _ab(i)
    for j, bid in enumerate(net.dynamic_ids):
        x[system.bus_offset + 2 * j: system.bus_offset + 2 * j + 2] = _ab(pf.bus_voltage[bid])
    system.refresh()
    return x


def _init_gfc(system, u: GFCUnit, V, I, omega, x, off, pf, hac_delta_r_from_flow):
    p, c = u.params, u.control
    ratio = system.ratio[u.bus]
    v = V / ratio
    ig = I * ratio
    i_s = ig + 1j * omega * p.C * v
    v_x = v + (p.R + 1j * omega * p.L) * i_s
    v_dc = c.v_dc_r
    mu = abs(v_x) / v_dc
    if mu > 1.0:
        raise ConfigurationError(f"{u.name}: required modulation {mu:.3f} exceeds 1")
    theta = float(np.angle(v_x))
    m = mu * np.exp(1j * theta)
    i_x = POWER_SCALE * float(np.real(m * np.conj(i_s)))
    p_pu = POWER_SCALE * float(np.real(v * np.conj(ig))) / p.S_rated
    delta = theta - float(np.angle(v))
    s = c.strategy
    f1 = f2 = 0.0
    dr = getattr(s, "delta_r", 0.0)
    if isinstance(s, Droop):
        f1 = p_pu
    elif isinstance(s, Matching):
        f1 = v_dc
    elif isinstance(s, HAC):
        if hac_delta_r_from_flow:
            dr = delta
            s = replace(s, delta_r=delta)
        if s.filter_abc:
            f1, f2 = v.real / c.v_r, v.imag / c.v_r
        else:
            f1, f2 = np.cos(delta), -np.sin(delta)
    aug = c.augmentation
    if aug is not None:
        aug = replace(aug, p_star=p_pu)
    if c.fixed_mu is None:
        u.control = replace(c, strategy=s, p_r=p_pu, augmentation=aug)
    else:
        # open-loop modulation: hold the solved magnitude and normalise to it
        u.control = replace(c, strategy=s, p_r=p_pu, augmentation=aug, fixed_mu=mu, v_r=abs(v))
    z = mu / c.kappa_i if c.kappa_i > 0 else 0.0
    x[off: off + 11] = [p.G_dc * v_dc + i_x, v_dc, i_s.real, i_s.imag, v.real, v.imag,
                        theta, f1, f2, z, dr]


def _init_sm(system, u: SMUnit, V, I, omega, x, off, pf):
    p = u.params
    vb = system.v_base
    i_base = p.S_rated / (POWER_SCALE * vb)
    zb = system.v_nom**2 / p.S_rated
    zs = p.r_s * zb + 1j * omega * p.x_dp * zb / system.omega_b
    Vt = (V - zs * I) / vb
    e_q = abs(V) / vb
    theta = float(np.angle(V))
    i = I / i_base
    i_d = i.real * np.sin(theta) - i.imag * np.cos(theta)
    e_f = e_q + (p.x_d - p.x_dp) * i_d
    p_e = float(np.real(V / vb * np.conj(i)))
    u.p_ref = p_e
    u.v_ref = abs(Vt) + e_f / p.k_a
    x[off: off + 7] = [theta, system.omega_b, p_e, e_q, e_f, 0.0, 0.0]
