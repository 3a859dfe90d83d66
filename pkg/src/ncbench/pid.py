"""Discrete velocity-form PID, its gain sensitivity, and a first-order reference model."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PidGains:
    """Weights of the proportional, integral and derivative terms."""

    k1: float
    k2: float
    k3: float

    def __post_init__(self):
        if not all(math.isfinite(g) for g in (self.k1, self.k2, self.k3)):
            raise ValueError("gains must be finite")


@dataclass(frozen=True)
class PidState:
    """Error/control history carried between ticks; zeros at episode start."""

    e_prev: float = 0.0
    e_prev2: float = 0.0
    u_prev: float = 0.0


def pid_step(gains: PidGains, state: PidState, e: float) -> tuple[float, PidState]:
    """One tick of the incremental PID law.

    u = u_prev + K1*(e - e_prev) + K2*e + K3*(e - 2*e_prev + e_prev2)

    With a constant error only the K2 term accumulates, which is the
    discrete counterpart of pure integral action.
    """
    if not math.isfinite(e):
        raise ValueError(f"non-finite error {e!r}")
    u = (state.u_prev
         + gains.k1 * (e - state.e_prev)
         + gains.k2 * e
         + gains.k3 * (e - 2.0 * state.e_prev + state.e_prev2))
    return u, PidState(e_prev=e, e_prev2=state.e_prev, u_prev=u)


def pid_gain_gradient(e: float, e_prev: float, e_prev2: float) -> np.ndarray:
    """du/dK for the law above: [e - e_prev, e, e - 2*e_prev + e_prev2].

    The law is linear in the gains, so this is exact, not a linearization.
    """
    return np.array([e - e_prev, e, e - 2.0 * e_prev + e_prev2])


class PidController:
    """Stateful wrapper driving the velocity-form law from output feedback.

    Implements the generic controller interface used by the episode runner:
    act(r_next) -> u using the error r_next - y_latest, observe(y, u) feeds
    the measurement back.
    """

    def __init__(self, gains: PidGains):
        self.gains = gains
        self.state = PidState()
        self._y_last = 0.0

    def act(self, r_next: float) -> float:
        u, self.state = pid_step(self.gains, self.state, r_next - self._y_last)
        return u

    def observe(self, y_new: float, u: float) -> None:
        self._y_last = y_new

    def reset(self, y0: float = 0.0) -> None:
        self.state = PidState()
        self._y_last = float(y0)


class ReferenceModel:
    """First-order lag between the raw setpoint and the controller.

    r'(k+1) = (1 - tau)*r'(k) + tau*r(k), stable for tau in (0, 1]; tau = 1
    passes the setpoint through unchanged.
    """

    def __init__(self, tau: float, r0: float = 0.0):
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        self.tau = float(tau)
        self.r_current = float(r0)

    def step(self, r: float) -> float:
        self.r_current = (1.0 - self.tau) * self.r_current + self.tau * float(r)
        return self.r_current

    def reset(self, r0: float = 0.0) -> None:
        self.r_current = float(r0)


def reference_series(tau: float, setpoints: np.ndarray, r0: float = 0.0) -> np.ndarray:
    """Run the lag over a whole setpoint series (used by the episode runner)."""
    model = ReferenceModel(tau, r0)
    return np.array([model.step(r) for r in setpoints])
