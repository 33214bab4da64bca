"""Fixed-step RK4 integration, state bookkeeping and reference-frame transforms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Tuple

import numpy as np

SQRT3 = np.sqrt(3.0)


class SimulationError(RuntimeError):
    """Raised when the right-hand side produces a non-finite derivative."""

    def __init__(self, time, device, slice_name, index=None):
        self.time = time
        self.device = device
        self.slice_name = slice_name
        self.index = index
        super().__init__(
            f"non-finite derivative at t={time:.9g} s in {device}/{slice_name}"
            + (f" (state index {index})" if index is not None else "")
        )


@dataclass(frozen=True)
class SliceInfo:
    device: str
    name: str
    offset: int
    length: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.length)


class StateLayout:
    """Ordered registry of named slices inside a flat state vector."""

    def __init__(self):
        self._entries: List[SliceInfo] = []
        self._index: Dict[Tuple[str, str], SliceInfo] = {}
        self.size = 0

    def add(self, device: str, name: str, length: int = 1) -> SliceInfo:
        key = (device, name)
        if key in self._index:
            raise ValueError(f"duplicate slice {device}/{name}")
        if length < 1:
            raise ValueError("slice length must be >= 1")
        info = SliceInfo(device, name, self.size, length)
        self._entries.append(info)
        self._index[key] = info
        self.size += length
        return info

    def __getitem__(self, key: Tuple[str, str]) -> SliceInfo:
        return self._index[key]

    def __contains__(self, key) -> bool:
        return key in self._index

    def __iter__(self) -> Iterator[SliceInfo]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def locate(self, index: int) -> SliceInfo:
        for info in self._entries:
            if info.offset <= index < info.offset + info.length:
                return info
        raise IndexError(index)

    def devices(self) -> List[str]:
        seen = []
        for info in self._entries:
            if info.device not in seen:
                seen.append(info.device)
        return seen


@dataclass
class StateVector:
    values: np.ndarray
    layout: StateLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.layout.size,):
            raise ValueError(
                f"state length {self.values.shape} does not match layout size {self.layout.size}"
            )

    def __getitem__(self, key):
        info = self.layout[key]
        out = self.values[info.slice]
        return out[0] if info.length == 1 else out

    def __setitem__(self, key, value):
        self.values[self.layout[key].slice] = value

    def copy(self) -> "StateVector":
        return StateVector(self.values.copy(), self.layout)


@dataclass(frozen=True)
class IntegratorConfig:
    step_h: float = 20e-6
    t_end: float = 1.0
    record_every: int = 1

    def __post_init__(self):
        if not self.step_h > 0:
            raise ValueError("step_h must be positive")
        if not self.t_end >= self.step_h:
            raise ValueError("t_end must be at least one step")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.step_h))


def record_indices(n_steps: int, record_every: int) -> np.ndarray:
    """Step indices that get stored: every `record_every`-th step plus the last one."""
    idx = np.arange(0, n_steps + 1, record_every)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


@dataclass
class Trajectory:
    times: np.ndarray
    samples: np.ndarray
    layout: StateLayout | None = None
    channels: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.samples):
            raise ValueError("times and samples differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def state(self, key) -> np.ndarray:
        """Recorded history of one named slice, shape (n_samples,) or (n_samples, length)."""
        info = self.layout[key]
        out = self.samples[:, info.slice]
        return out[:, 0] if info.length == 1 else out

    @property
    def final(self) -> np.ndarray:
        return self.samples[-1]


def _check_finite(dx, t, layout):
    if not np.all(np.isfinite(dx)):
        i = int(np.flatnonzero(~np.isfinite(dx))[0])
        if layout is not None:
            info = layout.locate(i)
            raise SimulationError(t, info.device, info.name, i)
        raise SimulationError(t, "state", f"[{i}]", i)


def rk4_step(rhs, t, x, h, layout=None):
    k1 = rhs(t, x)
    _check_finite(k1, t, layout)
    k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
    _check_finite(k2, t + 0.5 * h, layout)
    k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
    _check_finite(k3, t + 0.5 * h, layout)
    k4 = rhs(t + h, x + h * k3)
    _check_finite(k4, t + h, layout)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    x0,
    cfg: IntegratorConfig,
    t0: float = 0.0,
) -> Trajectory:
    """Classical fixed-step RK4.

    `x0` may be a :class:`StateVector` (its layout is used to name the
    offending slice if the derivative turns non-finite) or a plain array.
    Times are computed as ``t0 + n*h`` so repeated runs are bit-identical.
    """
    layout = x0.layout if isinstance(x0, StateVector) else None
    x = np.array(x0.values if isinstance(x0, StateVector) else x0, dtype=float)
    h = float(cfg.step_h)
    n_steps = cfg.n_steps
    keep = record_indices(n_steps, int(cfg.record_every))
    samples = np.empty((len(keep), x.size))
    times = t0 + keep * h
    j = 0
    for n in range(n_steps + 1):
        if n == keep[j]:
            samples[j] = x
            j += 1
            if j == len(keep):
                break
        x = rk4_step(rhs, t0 + n * h, x, h, layout)
    return Trajectory(times, samples, layout)


# --- reference frames -------------------------------------------------------

_CLARKE = (2.0 / 3.0) * np.array(
    [[1.0, -0.5, -0.5], [0.0, SQRT3 / 2.0, -SQRT3 / 2.0]]
)
_INV_CLARKE = np.array([[1.0, 0.0], [-0.5, SQRT3 / 2.0], [-0.5, -SQRT3 / 2.0]])


def clarke(v_abc):
    """Amplitude-invariant Clarke transform; accepts (..., 3) arrays."""
    v = np.asarray(v_abc, dtype=float)
    return v @ _CLARKE.T


def inverse_clarke(v_ab):
    v = np.asarray(v_ab, dtype=float)
    return v @ _INV_CLARKE.T


def rotate(v_ab, theta):
    """Rotate a stationary-frame vector into a frame turned by ``theta`` (i.e. by -theta)."""
    v = np.asarray(v_ab, dtype=float)
    c = np.cos(theta)
    s = np.sin(theta)
    d = c * v[..., 0] + s * v[..., 1]
    q = -s * v[..., 0] + c * v[..., 1]
    return np.stack([d, q], axis=-1)


def wrap_angle(x):
    """Wrap to (-pi, pi]."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    y = np.where(y == -np.pi, np.pi, y)
    return y if y.ndim else float(y)
