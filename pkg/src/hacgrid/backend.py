"""Selects the compiled kernel when it is importable, else the pure-Python model.

Set ``HACGRID_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import os

import numpy as np

from .numerics import SimulationError, record_indices, rk4_step

try:
    from . import _kernel
except ImportError:  # extension not built
    _kernel = None


class PythonModel:
    """Same interface as the compiled ``Model``, evaluated through :class:`AssembledSystem`."""

    def __init__(self, system):
        self.system = system
        self.G = system.network.G.copy()
        self.n_units = len(system.gfcs) + len(system.sms)

    def set_conductance(self, G):
        self.G = np.array(G, dtype=float)

    def rhs(self, x):
        return self.system.rhs(0.0, x, self.G)

    def outputs(self, samples):
        samples = np.atleast_2d(samples)
        order = [u.name for u in self.system.gfcs + self.system.sms]
        res = np.zeros((len(samples), len(order), 9))
        for j, x in enumerate(samples):
            _, outs = self.system.evaluate(x, self.G)
            for k, name in enumerate(order):
                res[j, k] = outs[name]
        return res

    def integrate(self, x0, t0, h, n_steps, record_every):
        keep = record_indices(n_steps, record_every)
        samples = np.empty((len(keep), len(x0)))
        x = np.array(x0, dtype=float)
        j = 0
        f = lambda t, y: self.rhs(y)
        for n in range(n_steps + 1):
            if n == keep[j]:
                samples[j] = x
                j += 1
                if j == len(keep):
                    break
            try:
                with np.errstate(all="ignore"):  # non-finite values are caught by rk4_step
                    x = rk4_step(f, t0 + n * h, x, h)
            except (SimulationError, ValueError, FloatingPointError, ZeroDivisionError):
                bad = _first_bad(f, t0 + n * h, x, h)
                return t0 + keep[:j] * h, samples[:j], t0 + n * h, bad
        return t0 + keep * h, samples, 0.0, -1


def _first_bad(f, t, x, h):
    with np.errstate(all="ignore"):
        try:
            dx = f(t, x)
        except ValueError:
            return 0
    bad = np.flatnonzero(~np.isfinite(dx))
    return int(bad[0]) if bad.size else 0


def compiled_available() -> bool:
    return _kernel is not None


def default_backend() -> str:
    want = os.environ.get("HACGRID_BACKEND", "").lower()
    if want == "python" or _kernel is None:
        return "python"
    return "compiled"


def make_model(system, backend: str | None = None):
    backend = backend or default_backend()
    if backend == "compiled":
        if _kernel is None:
            raise RuntimeError("compiled kernel not available")
        return _kernel.Model(system)
    if backend == "python":
        return PythonModel(system)
    raise ValueError(f"unknown backend {backend!r}")
