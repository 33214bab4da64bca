"""Grid-forming frequency laws and the shared dc/ac voltage loops.

Three strategies define the modulation angle (droop, matching, hybrid angle
control); all of them share the dc-source current reference and the PI ac
voltage magnitude loop.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .numerics import clarke, rotate, wrap_angle

OMEGA_0 = 2.0 * np.pi * 50.0
V_DC_R = 2440.0
ETA_REF = OMEGA_0 / V_DC_R
RADICAND_FLOOR = 1e-9


@dataclass(frozen=True)
class Droop:
    d_p_omega: float = 0.01 * OMEGA_0  # (rad/s) per pu
    omega_f: Optional[float] = 2.0 * np.pi * 5.0

    name = "droop"


@dataclass(frozen=True)
class Matching:
    eta: float = ETA_REF
    omega_f: Optional[float] = None

    name = "matching"


@dataclass(frozen=True)
class HAC:
    gamma_dc: float = 0.01 * ETA_REF
    gamma_ac: float = 205.0
    delta_r: float = 0.0238
    omega_f: Optional[float] = 2.0 * np.pi * 5.0
    use_measured_implementation: bool = True
    filter_abc: bool = False

    name = "hac"

    def __post_init__(self):
        if not self.gamma_ac > 0:
            raise ValueError("gamma_ac must be positive")


@dataclass(frozen=True)
class InverseDroop:
    kappa_p_delta: float = 0.05  # rad / (s pu)
    d_omega_p: float = 1.0 / (0.01 * OMEGA_0)  # pu / (rad/s)
    p_star: float = 0.5


Strategy = Union[Droop, Matching, HAC]


@dataclass(frozen=True)
class ControlConfig:
    strategy: Strategy = field(default_factory=HAC)
    omega_0: float = OMEGA_0
    p_r: float = 0.5  # pu of converter rating
    v_r: float = 1000.0 * np.sqrt(2.0 / 3.0)  # V, ac amplitude reference
    v_dc_r: float = V_DC_R
    kappa_dc: float = 1.6e3
    kappa_p: float = 0.001  # per pu voltage error
    kappa_i: float = 0.5  # per (pu voltage error * s)
    dc_feedforward: bool = True
    fixed_mu: Optional[float] = None  # bypasses the ac voltage loop when set
    augmentation: Optional[InverseDroop] = None

    def __post_init__(self):
        if not self.kappa_dc > 0:
            raise ValueError("kappa_dc must be positive")
        wf = getattr(self.strategy, "omega_f", None)
        if wf is not None and not wf > 0:
            raise ValueError("omega_f must be positive when the low-pass filter is enabled")
        if self.augmentation is not None and not isinstance(self.strategy, HAC):
            raise ValueError("inverse-droop augmentation requires HAC")

    def with_strategy(self, **changes) -> "ControlConfig":
        return replace(self, strategy=replace(self.strategy, **changes))


def lpf_step(state, u, omega_f, dt):
    """Explicit-Euler step of a first-order low-pass; ``omega_f=None`` passes ``u`` through."""
    if omega_f is None:
        return u
    return state + dt * omega_f * (u - state)


def droop_frequency(p_filtered, p_r, cfg: ControlConfig):
    return cfg.omega_0 + cfg.strategy.d_p_omega * (p_r - p_filtered)


def matching_frequency(v_dc_filtered, cfg: ControlConfig):
    return cfg.strategy.eta * v_dc_filtered


def hac_angle_term_ideal(delta, delta_r):
    """-sin((delta - delta_r)/2) with the angle difference taken in (-pi, pi]."""
    return -np.sin(0.5 * wrap_angle(np.asarray(delta) - np.asarray(delta_r)))


def hac_frequency_ideal(v_dc, delta, cfg: ControlConfig, delta_r=None):
    s = cfg.strategy
    dr = s.delta_r if delta_r is None else delta_r
    return cfg.omega_0 + s.gamma_dc * (v_dc - cfg.v_dc_r) + s.gamma_ac * hac_angle_term_ideal(delta, dr)


def half_angle_term(c, s, delta_r):
    """Approximation of -sin((delta - delta_r)/2) from (cos delta, sin delta) estimates."""
    cr = np.cos(delta_r)
    sr = np.sin(delta_r)
    radicand = 2.0 * (1.0 + c * cr + s * sr)
    radicand = np.maximum(radicand, RADICAND_FLOOR)
    return (sr * c - s * cr) / np.sqrt(radicand)


def measured_dq(v_abc, v_r, theta_c):
    """Normalised output voltage in the frame of the modulation angle: ~(cos delta, -sin delta)."""
    if not v_r > 0:
        raise ValueError("v_r must be positive")
    return rotate(clarke(np.asarray(v_abc, dtype=float) / v_r), theta_c)


def hac_angle_term_measured(v_abc, v_r, theta_c, delta_r, lpf_state=None, cfg: ControlConfig | None = None, dt=None):
    """Measured-signal implementation of the HAC angle term.

    Returns ``(term, new_lpf_state)``. ``lpf_state`` holds the filtered
    (cos delta, -sin delta) pair; with no filter configured (or ``dt`` left
    out) the instantaneous values are used.
    """
    vdq = measured_dq(v_abc, v_r, theta_c)
    omega_f = None if cfg is None else cfg.strategy.omega_f
    if omega_f is None or lpf_state is None or dt is None:
        filt = vdq
    else:
        filt = lpf_step(np.asarray(lpf_state, dtype=float), vdq, omega_f, dt)
    return half_angle_term(filt[..., 0], -filt[..., 1], delta_r), filt


def dc_current_reference(v_dc, p, i_x, p_r, cfg: ControlConfig, G_dc):
    """dc source current command: proportional dc voltage control plus feedforward.

    ``p`` and ``p_r`` are in W.
    """
    i_ref = cfg.kappa_dc * (cfg.v_dc_r - v_dc)
    if cfg.dc_feedforward:
        i_ref = i_ref + p_r / cfg.v_dc_r + (G_dc * v_dc + (v_dc * i_x - p) / cfg.v_dc_r)
    return i_ref


def ac_pi_output(v_mag, integral, cfg: ControlConfig):
    """(mu, error, integrator derivative) of the clamped PI with freeze anti-windup.

    The error is normalised by ``v_r`` so the gains are dimensionless.
    """
    if cfg.fixed_mu is not None:
        return cfg.fixed_mu, 0.0, 0.0
    err = (cfg.v_r - v_mag) / cfg.v_r
    u = cfg.kappa_p * err + cfg.kappa_i * integral
    mu = min(max(u, 0.0), 1.0)
    frozen = (u >= 1.0 and err > 0.0) or (u <= 0.0 and err < 0.0)
    return mu, err, 0.0 if frozen else err


def ac_voltage_magnitude(v_ab, v_r, pi_state, cfg: ControlConfig, dt):
    """One controller step; returns ``(mu, new_integral)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    cfg = replace(cfg, v_r=v_r)
    mu, _, dz = ac_pi_output(float(np.hypot(v_ab[0], v_ab[1])), pi_state, cfg)
    return mu, pi_state + dt * dz


def inverse_droop_reference(omega_c, cfg: ControlConfig, state, p, dt):
    """Power reference from the inverse droop and the advanced delta_r integrator.

    ``state`` is the current delta_r, ``p`` the measured power in pu.
    """
    aug = cfg.augmentation
    if aug is None:
        raise ValueError("augmentation not enabled")
    p_r = aug.p_star + aug.d_omega_p * (omega_c - cfg.omega_0)
    return p_r, state + dt * aug.kappa_p_delta * (p_r - p)


def modulation_vector(mu, theta_c):
    if mu < 0:
        raise ValueError("modulation magnitude must be non-negative")
    return np.array([mu * np.cos(theta_c), mu * np.sin(theta_c)])


def reference_frequency(cfg: ControlConfig) -> float:
    """Commanded frequency at the strategy's own reference point."""
    s = cfg.strategy
    if isinstance(s, Droop):
        return droop_frequency(cfg.p_r, cfg.p_r, cfg)
    if isinstance(s, Matching):
        return matching_frequency(cfg.v_dc_r, cfg)
    return hac_frequency_ideal(cfg.v_dc_r, s.delta_r, cfg)
