"""Averaged dc-ac converter plant: dc source with current limit, dc link, LC filter."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Instantaneous three-phase power of amplitude-invariant alpha-beta quantities.
POWER_SCALE = 1.5


@dataclass(frozen=True)
class ConverterParams:
    """Plant parameters in SI (except ``i_dc_max`` which is pu of S_rated / v_dc_r)."""

    G_dc: float = 0.83e-3
    C_dc: float = 0.008
    R: float = 0.001
    L: float = 200e-6
    C: float = 300e-6
    tau_dc: float = 0.05
    i_dc_max: float = 1.2
    v_dc_r: float = 2440.0
    S_rated: float = 500e3
    n_modules: int = 1
    v_ll_rated: float = 1000.0

    def __post_init__(self):
        for name in ("G_dc", "C_dc", "R", "L", "C", "tau_dc", "v_dc_r", "S_rated", "v_ll_rated"):
            if not getattr(self, name) > 0:
                raise ValueError(f"converter parameter {name} must be positive")
        if self.i_dc_max < 1.0:
            raise ValueError("i_dc_max must be at least 1 pu")
        if self.n_modules < 1:
            raise ValueError("n_modules must be >= 1")

    @property
    def i_dc_base(self) -> float:
        return self.S_rated / self.v_dc_r

    @property
    def i_dc_limit(self) -> float:
        """Source current limit in A."""
        return self.i_dc_max * self.i_dc_base

    @property
    def v_base(self) -> float:
        """Peak phase voltage at rated line-to-line rms voltage."""
        return self.v_ll_rated * np.sqrt(2.0 / 3.0)

    @property
    def i_base(self) -> float:
        return self.S_rated / (POWER_SCALE * self.v_base)

    @property
    def z_base(self) -> float:
        return self.v_base / self.i_base


REFERENCE_MODULE = ConverterParams()


def aggregate(module: ConverterParams, n: int) -> ConverterParams:
    """Parallel connection of ``n`` identical modules as one equivalent unit."""
    if int(n) != n or n <= 0:
        raise ValueError("aggregation count must be a positive integer")
    n = int(n)
    return replace(
        module,
        G_dc=module.G_dc * n,
        C_dc=module.C_dc * n,
        R=module.R / n,
        L=module.L / n,
        C=module.C * n,
        S_rated=module.S_rated * n,
        n_modules=module.n_modules * n,
    )


REFERENCE_AGGREGATE = aggregate(REFERENCE_MODULE, 200)


@dataclass
class ConverterState:
    i_dc: float
    v_dc: float
    i_s_ab: np.ndarray
    v_ab: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.array([self.i_dc, self.v_dc, *self.i_s_ab, *self.v_ab], dtype=float)

    @classmethod
    def from_array(cls, x) -> "ConverterState":
        x = np.asarray(x, dtype=float)
        return cls(x[0], x[1], x[2:4].copy(), x[4:6].copy())


def switch_current(m_ab, i_s_ab) -> float:
    """dc-side current drawn by the conversion stage."""
    return POWER_SCALE * (m_ab[0] * i_s_ab[0] + m_ab[1] * i_s_ab[1])


def stage_powers(state: ConverterState, m_ab):
    """(dc-side power, ac-side power) of the lossless conversion stage."""
    i_x = switch_current(m_ab, state.i_s_ab)
    v_x = np.asarray(m_ab) * state.v_dc
    return state.v_dc * i_x, POWER_SCALE * float(v_x @ state.i_s_ab)


def converter_rhs(state: ConverterState, m_ab, i_grid_ab, i_dc_ref, p: ConverterParams) -> ConverterState:
    """Time derivative of the plant; over-modulation is not prevented."""
    vals = [state.i_dc, state.v_dc, *state.i_s_ab, *state.v_ab, *m_ab, *i_grid_ab, i_dc_ref]
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite converter input")
    lim = p.i_dc_limit
    i_cmd = min(max(i_dc_ref, -lim), lim)
    i_x = switch_current(m_ab, state.i_s_ab)
    v_x = np.asarray(m_ab, dtype=float) * state.v_dc
    i_s = np.asarray(state.i_s_ab, dtype=float)
    v = np.asarray(state.v_ab, dtype=float)
    return ConverterState(
        i_dc=(i_cmd - state.i_dc) / p.tau_dc,
        v_dc=(state.i_dc - p.G_dc * state.v_dc - i_x) / p.C_dc,
        i_s_ab=(v_x - p.R * i_s - v) / p.L,
        v_ab=(i_s - np.asarray(i_grid_ab, dtype=float)) / p.C,
    )
