"""Assembly of converters, machines and the network into one flat ODE.

The pure-Python right-hand side here is the reference semantics; the
compiled kernel in ``_kernel.pyx`` mirrors it on the packed arrays built by
:class:`AssembledSystem` and is checked against it in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from . import controls as ctl
from .controls import ControlConfig, Droop, HAC, Matching
from .converter import POWER_SCALE, ConverterParams, ConverterState, converter_rhs, switch_current
from .errors import ConfigurationError
from .machine import MachineParams, MachineState, machine_rhs
from .network import LoadStep, Network, NetworkData, NetworkState, network_rhs
from .numerics import StateLayout, rotate

# packed converter parameters
(CP_G_DC, CP_C_DC, CP_R, CP_L, CP_C, CP_TAU_DC, CP_I_LIM, CP_V_DC_R, CP_S, CP_RATIO,
 CP_OMEGA_0, CP_P_R, CP_V_R, CP_KAPPA_DC, CP_KAPPA_P, CP_KAPPA_I, CP_FIXED_MU,
 CP_D_P_OMEGA, CP_ETA, CP_GAMMA_DC, CP_GAMMA_AC, CP_OMEGA_F, CP_KAPPA_PD, CP_D_OMEGA_P,
 CP_P_STAR) = range(25)
NCP = 25
(CI_STRATEGY, CI_MEASURED, CI_FILTER_ABC, CI_DC_FF, CI_AUG, CI_BRANCH, CI_OFFSET, CI_PORT,
 CI_SIGN) = range(9)
NCI = 9
(MP_H, MP_D, MP_D_P, MP_TAU_G, MP_OMEGA_B, MP_P_REF, MP_X_D, MP_X_DP, MP_T_D0P, MP_K_A,
 MP_T_A, MP_V_REF, MP_PSS, MP_T_W, MP_T1, MP_T2, MP_K_PSS, MP_S_B, MP_V_B, MP_R_S,
 MP_L_S) = range(21)
NMP = 21
MI_BRANCH, MI_OFFSET, MI_PORT, MI_SIGN = range(4)
NMI = 4

STRATEGY_CODE = {"droop": 0, "matching": 1, "hac": 2}

GFC_STATES = ["i_dc", "v_dc", "i_s_a", "i_s_b", "v_a", "v_b", "theta_c", "lpf_1", "lpf_2",
              "ac_pi_integral", "delta_r"]
SM_STATES = ["theta", "omega", "p_m", "e_qp", "e_f", "pss_washout", "pss_leadlag"]
GFC_OUTPUTS = ["omega", "p", "mu", "i_x", "p_dc_stage", "p_ac_stage", "i_dc_ref", "v_mag", "p_r"]
SM_OUTPUTS = ["omega", "p", "v_t", "e_f", "p_m"]
N_OUT = 9


@dataclass
class GFCUnit:
    bus: int
    params: ConverterParams
    control: ControlConfig

    kind = "gfc"

    @property
    def name(self) -> str:
        return f"gfc{self.bus}"


@dataclass
class SMUnit:
    bus: int
    params: MachineParams
    p_ref: float = 0.5
    v_ref: float = 1.0

    kind = "sm"

    @property
    def name(self) -> str:
        return f"sm{self.bus}"


Unit = Union[GFCUnit, SMUnit]


def _omega_f(strategy) -> float:
    wf = getattr(strategy, "omega_f", None)
    return 0.0 if wf is None else float(wf)


class AssembledSystem:
    """Flat ODE for a set of devices attached to port buses of a network."""

    def __init__(self, network_data: NetworkData, units: Sequence[Unit], omega_b: float = ctl.OMEGA_0):
        self.units = list(units)
        self.omega_b = omega_b
        data = network_data
        ports = {b.id for b in data.buses if b.kind == "port"}
        seen = set()
        for u in self.units:
            if u.bus not in ports:
                raise ConfigurationError(f"{u.name}: bus {u.bus} is not a generation (port) bus")
            if u.bus in seen:
                raise ConfigurationError(f"bus {u.bus} assigned twice")
            seen.add(u.bus)
        missing = ports - seen
        if missing:
            raise ConfigurationError(f"port buses without a device: {sorted(missing)}")
        self.v_nom = data.v_nom
        self.v_base = data.v_nom * np.sqrt(2.0 / 3.0)  # network peak phase
        # machine stator reactance merges into its transformer branch
        extra_series = {}
        for u in self.units:
            if isinstance(u, SMUnit):
                zb = data.v_nom**2 / u.params.S_rated
                extra_series[u.bus] = (u.params.r_s * zb, u.params.x_dp * zb / omega_b)
        self.network = Network(data, extra_series=extra_series)
        net = self.network
        self.ratio = {}
        for u in self.units:
            v_dev = u.params.v_ll_rated if isinstance(u, GFCUnit) else u.params.v_rated
            self.ratio[u.bus] = data.v_nom / v_dev

        layout = StateLayout()
        for u in self.units:
            for s in (GFC_STATES if isinstance(u, GFCUnit) else SM_STATES):
                layout.add(u.name, s)
        self.branch_names = [f"L{ln.from_bus}{ln.to_bus}" for ln in data.lines]
        self.branch_names += [f"T{t.from_bus}{t.to_bus}" for t in data.transformers]
        for name in self.branch_names:
            layout.add("network", f"i_{name}", 2)
        for bid in net.dynamic_ids:
            layout.add("network", f"v_bus{bid}", 2)
        self.layout = layout
        self.net_offset = layout[("network", f"i_{self.branch_names[0]}")].offset if self.branch_names else layout.size
        self.bus_offset = self.net_offset + 2 * net.n_branch
        self._pack()

    # --- packing --------------------------------------------------------------
    def _pack(self):
        net = self.network
        gfcs = [u for u in self.units if isinstance(u, GFCUnit)]
        sms = [u for u in self.units if isinstance(u, SMUnit)]
        self.gfcs, self.sms = gfcs, sms
        self.conv_p = np.zeros((len(gfcs), NCP))
        self.conv_i = np.zeros((len(gfcs), NCI), dtype=np.int64)
        for k, u in enumerate(gfcs):
            p, c, s = u.params, u.control, u.control.strategy
            row = self.conv_p[k]
            row[CP_G_DC], row[CP_C_DC], row[CP_R], row[CP_L], row[CP_C] = p.G_dc, p.C_dc, p.R, p.L, p.C
            row[CP_TAU_DC], row[CP_I_LIM], row[CP_V_DC_R], row[CP_S] = p.tau_dc, p.i_dc_limit, c.v_dc_r, p.S_rated
            row[CP_RATIO] = self.ratio[u.bus]
            row[CP_OMEGA_0], row[CP_P_R], row[CP_V_R] = c.omega_0, c.p_r, c.v_r
            row[CP_KAPPA_DC], row[CP_KAPPA_P], row[CP_KAPPA_I] = c.kappa_dc, c.kappa_p, c.kappa_i
            row[CP_FIXED_MU] = -1.0 if c.fixed_mu is None else c.fixed_mu
            row[CP_OMEGA_F] = _omega_f(s)
            if isinstance(s, Droop):
                row[CP_D_P_OMEGA] = s.d_p_omega
            elif isinstance(s, Matching):
                row[CP_ETA] = s.eta
            else:
                row[CP_GAMMA_DC], row[CP_GAMMA_AC] = s.gamma_dc, s.gamma_ac
            if c.augmentation is not None:
                a = c.augmentation
                row[CP_KAPPA_PD], row[CP_D_OMEGA_P], row[CP_P_STAR] = a.kappa_p_delta, a.d_omega_p, a.p_star
            ci = self.conv_i[k]
            ci[CI_STRATEGY] = STRATEGY_CODE[s.name]
            ci[CI_MEASURED] = int(isinstance(s, HAC) and s.use_measured_implementation)
            ci[CI_FILTER_ABC] = int(isinstance(s, HAC) and s.filter_abc)
            ci[CI_DC_FF] = int(c.dc_feedforward)
            ci[CI_AUG] = int(c.augmentation is not None)
            ci[CI_BRANCH], ci[CI_SIGN] = self._port_branch(u.bus)
            ci[CI_OFFSET] = self.layout[(u.name, "i_dc")].offset
            ci[CI_PORT] = net.node_of[u.bus] - net.n_bus
        self.mach_p = np.zeros((len(sms), NMP))
        self.mach_i = np.zeros((len(sms), NMI), dtype=np.int64)
        for k, u in enumerate(sms):
            p = u.params
            row = self.mach_p[k]
            zb = self.v_nom**2 / p.S_rated
            row[MP_H], row[MP_D], row[MP_D_P], row[MP_TAU_G] = p.H, p.D, p.d_p, p.tau_g
            row[MP_OMEGA_B], row[MP_P_REF] = self.omega_b, u.p_ref
            row[MP_X_D], row[MP_X_DP], row[MP_T_D0P] = p.x_d, p.x_dp, p.T_d0p
            row[MP_K_A], row[MP_T_A], row[MP_V_REF] = p.k_a, p.T_a, u.v_ref
            row[MP_PSS] = 1.0 if p.pss.enabled else 0.0
            row[MP_T_W], row[MP_T1], row[MP_T2], row[MP_K_PSS] = p.pss.T_w, p.pss.T1, p.pss.T2, p.pss.k_pss
            row[MP_S_B], row[MP_V_B] = p.S_rated, self.v_base
            row[MP_R_S], row[MP_L_S] = p.r_s * zb, p.x_dp * zb / self.omega_b
            mi = self.mach_i[k]
            mi[MI_BRANCH], mi[MI_SIGN] = self._port_branch(u.bus)
            mi[MI_OFFSET] = self.layout[(u.name, "theta")].offset
            mi[MI_PORT] = net.node_of[u.bus] - net.n_bus

    def _port_branch(self, bus):
        net = self.network
        node = net.node_of[bus]
        hits = [k for k in range(net.n_branch) if node in (net.branch_from[k], net.branch_to[k])]
        if len(hits) != 1:
            raise ConfigurationError(f"port bus {bus} must have exactly one branch")
        k = hits[0]
        return k, (1 if net.branch_from[k] == node else -1)

    def refresh(self):
        """Re-pack after unit parameters (set-points) changed."""
        self._pack()

    # --- reference right-hand side ------------------------------------------------
    def unit(self, name: str) -> Unit:
        for u in self.units:
            if u.name == name:
                return u
        raise KeyError(name)

    def block(self, x, u: Unit):
        off = self.layout[(u.name, "i_dc" if isinstance(u, GFCUnit) else "theta")].offset
        n = len(GFC_STATES) if isinstance(u, GFCUnit) else len(SM_STATES)
        return x[..., off:off + n]

    def network_state(self, x) -> NetworkState:
        return self.network.unpack(x[self.net_offset:])

    def port_voltages(self, x):
        pv = np.zeros((self.network.n_port, 2))
        net = self.network
        for u in self.units:
            xb = self.block(x, u)
            n = net.node_of[u.bus] - net.n_bus
            if isinstance(u, GFCUnit):
                pv[n] = self.ratio[u.bus] * xb[4:6]
            else:
                pv[n] = self.v_base * xb[3] * np.array([np.cos(xb[0]), np.sin(xb[0])])
        return pv

    def rhs(self, t, x, G=None):
        """Pure-Python derivative; ``G`` overrides the bus conductances."""
        dx, _ = self.evaluate(x, G)
        return dx

    def evaluate(self, x, G=None):
        """(derivative, {device: outputs}) at state ``x``."""
        x = np.asarray(x, dtype=float)
        net = self.network
        ns = self.network_state(x)
        pv = self.port_voltages(x)
        dnet = network_rhs(ns, None, net, pv, G)
        dx = np.zeros_like(x)
        dx[self.net_offset:] = dnet.as_array()
        outs = {}
        for u in self.units:
            k, sign = self._port_branch(u.bus)
            i_br = sign * ns.i_branch[k]
            di_br = sign * dnet.i_branch[k]
            off = self.layout[(u.name, "i_dc" if isinstance(u, GFCUnit) else "theta")].offset
            xb = self.block(x, u)
            if isinstance(u, GFCUnit):
                d, o = gfc_rhs(xb, self.ratio[u.bus] * i_br, u.control, u.params)
            else:
                d, o = sm_rhs(xb, i_br, di_br, u, self.v_base, self.v_nom, self.omega_b)
            dx[off:off + len(d)] = d
            outs[u.name] = o
        return dx, outs


def gfc_rhs(xc, i_grid, cfg: ControlConfig, p: ConverterParams):
    """Derivative of one controlled converter block plus its output signals."""
    i_dc, v_dc, isa, isb, va, vb, th, f1, f2, z, dr = [float(v) for v in xc]
    K = POWER_SCALE
    p_w = K * (va * i_grid[0] + vb * i_grid[1])
    p_pu = p_w / p.S_rated
    v_mag = float(np.hypot(va, vb))
    mu, _, dz = ctl.ac_pi_output(v_mag, z, cfg)
    m = np.array([mu * np.cos(th), mu * np.sin(th)])
    i_x = switch_current(m, (isa, isb))
    s = cfg.strategy
    wf = getattr(s, "omega_f", None)
    df1 = df2 = ddr = 0.0
    p_r = cfg.p_r
    if isinstance(s, Droop):
        pf = p_pu if wf is None else f1
        omega = ctl.droop_frequency(pf, p_r, cfg)
        if wf is not None:
            df1 = wf * (p_pu - f1)
    elif isinstance(s, Matching):
        vf = v_dc if wf is None else f1
        omega = ctl.matching_frequency(vf, cfg)
        if wf is not None:
            df1 = wf * (v_dc - f1)
    else:
        if s.use_measured_implementation:
            u_ab = np.array([va, vb]) / cfg.v_r
            if s.filter_abc:
                if wf is not None:
                    df1, df2 = wf * (u_ab[0] - f1), wf * (u_ab[1] - f2)
                    u_ab = np.array([f1, f2])
                vdq = rotate(u_ab, th)
            else:
                vdq = rotate(u_ab, th)
                if wf is not None:
                    df1, df2 = wf * (vdq[0] - f1), wf * (vdq[1] - f2)
                    vdq = np.array([f1, f2])
            ac = ctl.half_angle_term(vdq[0], -vdq[1], dr)
        else:
            delta = th - np.arctan2(vb, va)
            ac = ctl.hac_angle_term_ideal(delta, dr)
        omega = cfg.omega_0 + s.gamma_dc * (v_dc - cfg.v_dc_r) + s.gamma_ac * ac
        if cfg.augmentation is not None:
            a = cfg.augmentation
            p_r = a.p_star + a.d_omega_p * (omega - cfg.omega_0)
            ddr = a.kappa_p_delta * (p_r - p_pu)
    i_ref = ctl.dc_current_reference(v_dc, p_w, i_x, p_r * p.S_rated, cfg, p.G_dc)
    st = ConverterState(i_dc, v_dc, np.array([isa, isb]), np.array([va, vb]))
    dp = converter_rhs(st, m, i_grid, i_ref, p)
    d = np.array([dp.i_dc, dp.v_dc, dp.i_s_ab[0], dp.i_s_ab[1], dp.v_ab[0], dp.v_ab[1],
                  omega, df1, df2, dz, ddr])
    p_ac = K * (m[0] * v_dc * isa + m[1] * v_dc * isb)
    out = np.array([omega, p_pu, mu, i_x, v_dc * i_x, p_ac, i_ref, v_mag, p_r])
    return d, out


def sm_rhs(xm, i_hv, di_hv, u: SMUnit, v_base, v_nom, omega_b):
    """Machine block derivative; ``i_hv`` is the network-side current leaving the EMF."""
    p = u.params
    st = MachineState.from_array(xm)
    i_base = p.S_rated / (POWER_SCALE * v_base)
    zb = v_nom**2 / p.S_rated
    R_s, L_s = p.r_s * zb, p.x_dp * zb / omega_b
    e_hv = v_base * st.e_qp * np.array([np.cos(st.theta), np.sin(st.theta)])
    v_t = (e_hv - R_s * i_hv - L_s * di_hv) / v_base
    i_pu = i_hv / i_base
    d = machine_rhs(st, v_t, i_pu, u.p_ref, p, u.v_ref, omega_b)
    p_e = float(e_hv @ i_hv) * POWER_SCALE / p.S_rated
    out = np.zeros(N_OUT)
    out[:5] = [st.omega, p_e, float(np.hypot(*v_t)), st.e_f, st.p_m]
    return d.as_array(), out
