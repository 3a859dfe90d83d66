"""Discrete-time SISO benchmark plants, NARX state estimation, excitation signals.

Plants are black boxes: each step consumes one control sample (plus an
additive output disturbance) and emits the next output. The two builtin
plants were chosen so downstream schemes have oracles to converge against:
the linear plant is exactly invertible and the nonlinear one keeps its
control gain bounded away from zero, so sign-based online training never
stalls.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass

import numpy as np

from .nn import TappedDelayLine


class Plant(abc.ABC):
    """One-step dynamic system observable only through its scalar output."""

    @property
    @abc.abstractmethod
    def y(self) -> float:
        """Current (most recently produced) output."""

    @abc.abstractmethod
    def step(self, u: float, d: float = 0.0) -> float:
        """Advance exactly one tick and return the new output."""

    @abc.abstractmethod
    def jacobian_du(self, u: float | None = None) -> float:
        """Sensitivity of the next output to the control, at the given control
        value (defaults to the most recently applied one)."""

    @abc.abstractmethod
    def reset(self, y0: float = 0.0) -> None:
        """Return the plant to rest at output y0."""


class LinearPlant(Plant):
    """y(k+1) = a*y(k) + b*u(k) + d(k).

    Exactly invertible: u = (r - a*y) / b reaches any target in one tick.
    """

    def __init__(self, a: float, b: float):
        if b == 0.0:
            raise ValueError("b must be nonzero, the plant is uncontrollable otherwise")
        self.a = float(a)
        self.b = float(b)
        self._y = 0.0
        self._u_last = 0.0

    @property
    def y(self) -> float:
        return self._y

    def step(self, u: float, d: float = 0.0) -> float:
        self._y = self.a * self._y + self.b * float(u) + float(d)
        self._u_last = float(u)
        return self._y

    def jacobian_du(self, u: float | None = None) -> float:
        return self.b

    def reset(self, y0: float = 0.0) -> None:
        self._y = float(y0)
        self._u_last = 0.0

    def exact_inverse(self, r_next: float, y_now: float) -> float:
        """Closed-form one-step inverse controller."""
        return (r_next - self.a * y_now) / self.b


class NonlinearPlant(Plant):
    """y(k+1) = y/(1+y^2) + 0.5*u + 0.1*u^3 + d.

    The control gain 0.5 + 0.3*u^2 >= 0.5 never changes sign, so schemes that
    only use the sign of the plant Jacobian always get a usable direction.
    """

    def __init__(self):
        self._y = 0.0
        self._u_last = 0.0

    @property
    def y(self) -> float:
        return self._y

    def step(self, u: float, d: float = 0.0) -> float:
        u = float(u)
        self._y = self._y / (1.0 + self._y * self._y) + 0.5 * u + 0.1 * u ** 3 + float(d)
        self._u_last = u
        return self._y

    def jacobian_du(self, u: float | None = None) -> float:
        uu = self._u_last if u is None else float(u)
        return 0.5 + 0.3 * uu * uu

    def reset(self, y0: float = 0.0) -> None:
        self._y = float(y0)
        self._u_last = 0.0


class NarxEstimator:
    """State estimate from delayed outputs and, optionally, delayed controls.

    state() returns [y(k), y(k-1), ..., y(k-N), u(k-1), ..., u(k-Q)], newest
    first, zero-padded before the history fills. Q=0 drops the control part.
    """

    def __init__(self, n: int = 1, q: int = 0):
        if n < 0 or q < 0:
            raise ValueError("history orders must be >= 0")
        self.n = int(n)
        self.q = int(q)
        self.y_line = TappedDelayLine(self.n + 1)
        self.u_line = TappedDelayLine(self.q) if self.q > 0 else None

    @property
    def state_dim(self) -> int:
        return (self.n + 1) + self.q

    def observe_y(self, y: float) -> None:
        self.y_line.push(y)

    def observe_u(self, u: float) -> None:
        if self.u_line is not None:
            self.u_line.push(u)

    def observe(self, y: float, u: float | None = None) -> None:
        """Record one tick: the new output and the control that produced it."""
        if self.u_line is not None and u is None:
            raise ValueError("estimator with Q > 0 needs the control each tick")
        self.observe_y(y)
        if u is not None:
            self.observe_u(u)

    def state(self) -> np.ndarray:
        if self.u_line is None:
            return self.y_line.vector()
        return np.concatenate([self.y_line.vector(), self.u_line.vector()])

    def reset(self) -> None:
        self.y_line = TappedDelayLine(self.n + 1)
        self.u_line = TappedDelayLine(self.q) if self.q > 0 else None


def phase_state(y_line: TappedDelayLine, order: int) -> np.ndarray:
    """State as [y, y', ..., y^(order)] via backward differences, one tick apart."""
    if order < 0:
        raise ValueError("order must be >= 0")
    if y_line.depth < order + 1:
        raise ValueError(f"delay line of depth {y_line.depth} cannot support order {order}")
    if y_line.count < order + 1:
        raise ValueError(f"need at least {order + 1} observations, have {y_line.count}")
    v = y_line.vector()
    out = np.zeros(order + 1)
    for j in range(order + 1):
        out[j] = sum((-1) ** i * math.comb(j, i) * v[i] for i in range(j + 1))
    return out


@dataclass(frozen=True)
class ExcitationSpec:
    """Identification signal: white noise or randomly held step levels."""

    kind: str  # "uniform_white" | "random_steps"
    amplitude: float
    length: int
    seed: int
    hold_ticks: int = 1

    def __post_init__(self):
        if self.kind not in ("uniform_white", "random_steps"):
            raise ValueError(f"unknown excitation kind {self.kind!r}")
        if self.amplitude < 0.0:
            raise ValueError("amplitude must be >= 0")
        if self.length < 0:
            raise ValueError("length must be >= 0")
        if self.hold_ticks < 1:
            raise ValueError("hold_ticks must be >= 1")


def excitation(spec: ExcitationSpec) -> np.ndarray:
    """Deterministic sample path in [-amplitude, +amplitude] for the given spec."""
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform_white":
        return rng.uniform(-spec.amplitude, spec.amplitude, size=spec.length)
    n_seg = -(-spec.length // spec.hold_ticks)  # ceil division
    levels = rng.uniform(-spec.amplitude, spec.amplitude, size=n_seg)
    return np.repeat(levels, spec.hold_ticks)[: spec.length]
