"""Frequency performance metrics and stability classification of recorded runs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import UsageError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class StabilityThresholds:
    v_dc_min_fraction: float = 0.5  # of v_dc_r
    max_freq_dev_hz: float = 5.0
    sustain_s: float = 0.05  # how long the frequency limit must be exceeded
    band_hz: float = 0.02  # half-width of the settled band around the trailing mean
    v_dc_band_fraction: float = 0.01
    trailing_fraction: float = 0.2


@dataclass
class MetricsReport:
    max_freq_deviation: float  # rad/s
    rocof: float  # rad/s^2
    rocof_window: float
    rocof_anchor: float
    settling_time: float  # s after the event, inf if never
    sharing_error: float  # pu
    stability_flag: str
    observed: str = ""

    @property
    def max_freq_deviation_hz(self) -> float:
        return self.max_freq_deviation / TWO_PI

    @property
    def rocof_hz_s(self) -> float:
        return self.rocof / TWO_PI

    def as_dict(self) -> Dict[str, object]:
        d = asdict(self)
        d["max_freq_deviation_hz"] = self.max_freq_deviation_hz
        d["rocof_hz_s"] = self.rocof_hz_s
        return d


def _window(t, t_from=None, t_to=None):
    t = np.asarray(t, dtype=float)
    mask = np.ones(t.shape, dtype=bool)
    if t_from is not None:
        mask &= t >= t_from
    if t_to is not None:
        mask &= t <= t_to
    return mask


def max_frequency_deviation(t, omega, omega_0, t_from=None) -> float:
    """Largest under-frequency excursion max(omega_0 - omega, 0) at or after ``t_from``."""
    omega = np.asarray(omega, dtype=float)
    if omega.size == 0:
        raise UsageError("empty frequency trace")
    sel = omega[_window(t, t_from)]
    if sel.size == 0:
        raise UsageError("no samples after t_from")
    return float(max(0.0, np.max(omega_0 - sel)))


def rocof(t, omega, t0: float, dt: float = 0.15) -> float:
    """|omega(t0 + dt) - omega(t0)| / dt with linear interpolation between samples."""
    t = np.asarray(t, dtype=float)
    if not dt > 0:
        raise UsageError("RoCoF window must be positive")
    if t0 < t[0] or t0 + dt > t[-1] + 1e-12:
        raise UsageError(f"RoCoF window [{t0}, {t0 + dt}] exceeds the recorded horizon")
    w0, w1 = np.interp([t0, min(t0 + dt, t[-1])], t, omega)
    return float(abs(w1 - w0) / dt)


def settling_time(t, channels: Sequence, t_event: float, band_rel: float = 0.02,
                  final_fraction: float = 0.05) -> float:
    """Time after ``t_event`` from which every channel stays within ``band_rel`` of its step.

    Each channel's band is centred on its final value (mean of the last
    ``final_fraction`` of samples) with half-width ``band_rel`` times the
    change from its value at ``t_event``.
    """
    t = np.asarray(t, dtype=float)
    post = t >= t_event
    if not np.any(post):
        raise UsageError("no samples after the event")
    n_tail = max(1, int(round(final_fraction * post.sum())))
    last_out = t_event
    for ch in channels:
        ch = np.asarray(ch, dtype=float)
        final = float(np.mean(ch[-n_tail:]))
        pre = float(np.interp(t_event, t, ch))
        band = max(band_rel * abs(final - pre), 1e-12 * max(1.0, abs(final)))
        outside = post & (np.abs(ch - final) > band)
        if np.any(outside):
            idx = int(np.flatnonzero(outside)[-1])
            if idx == len(t) - 1:
                return math.inf
            last_out = max(last_out, t[idx + 1])
    return float(last_out - t_event)


def sharing_error(t, powers: Mapping[str, Sequence], ratings: Optional[Mapping[str, float]] = None,
                  trailing_fraction: float = 0.2) -> float:
    """Largest pairwise difference of unit powers averaged over the trailing window.

    ``powers`` are in pu of each unit's rating unless ``ratings`` (W) are
    given, in which case they are in W and get normalised.
    """
    t = np.asarray(t, dtype=float)
    if len(powers) < 2:
        raise UsageError("sharing error needs at least two power channels")
    start = t[-1] - trailing_fraction * (t[-1] - t[0])
    sel = t >= start
    means = {}
    for k, p in powers.items():
        p = np.asarray(p, dtype=float)[sel]
        means[k] = float(np.mean(p)) / (ratings[k] if ratings else 1.0)
    return float(max(abs(means[a] - means[b]) for a, b in combinations(means, 2)))


def classify_stability(t, omegas: Mapping[str, Sequence], v_dcs: Mapping[str, Sequence],
                       v_dc_r: float, omega_0: float,
                       thresholds: StabilityThresholds = StabilityThresholds(),
                       finite: bool = True) -> str:
    """'diverged', 'settled' or 'oscillatory'."""
    th = thresholds
    t = np.asarray(t, dtype=float)
    if not finite:
        return "diverged"
    for v in v_dcs.values():
        v = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(v)) or np.any(v < th.v_dc_min_fraction * v_dc_r):
            return "diverged"
    lim = th.max_freq_dev_hz * TWO_PI
    for w in omegas.values():
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            return "diverged"
        if _longest_run(t, np.abs(w - omega_0) > lim) >= th.sustain_s:
            return "diverged"
    start = t[-1] - th.trailing_fraction * (t[-1] - t[0])
    sel = t >= start
    for w in omegas.values():
        w = np.asarray(w, dtype=float)[sel]
        if np.max(np.abs(w - np.mean(w))) > th.band_hz * TWO_PI:
            return "oscillatory"
    for v in v_dcs.values():
        v = np.asarray(v, dtype=float)[sel]
        if np.max(np.abs(v - np.mean(v))) > th.v_dc_band_fraction * v_dc_r:
            return "oscillatory"
    return "settled"


def _longest_run(t, flags) -> float:
    """Longest contiguous duration over which ``flags`` holds (0 if never)."""
    flags = np.asarray(flags, dtype=bool)
    if not flags.any():
        return 0.0
    best = 0.0
    start = None
    for k, f in enumerate(flags):
        if f and start is None:
            start = k
        if start is not None and (not f or k == len(flags) - 1):
            end = k if f else k - 1
            # an isolated sample still counts as a (short) excursion
            best = max(best, t[end] - t[start] if end > start else 1e-12)
            start = None
    return float(best)
