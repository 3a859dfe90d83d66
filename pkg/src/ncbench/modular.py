"""Multi-module control with responsibility weighting, neuro-tuned PID,
parallel hybrid wiring, disturbance filtering, and reference-model wrapping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, EmulatorNotReadyError
from .inverse import EMULATOR_READY_MSE, ForwardEmulator
from .nn import Mlp
from .pid import PidGains, PidState, ReferenceModel, pid_gain_gradient, pid_step
from .plants import NarxEstimator, Plant

WEIGHTED = "weighted"
WINNER_TAKE_ALL = "winner_take_all"

HYBRID_SUM_NN_SECOND = "sum_after_nn_trained_on_closed_loop"
HYBRID_SUM_PID_SECOND = "sum_after_pid_tuned_on_closed_loop"
HYBRID_REGION_SWITCH = "region_switch"
HYBRID_MODES = (HYBRID_SUM_NN_SECOND, HYBRID_SUM_PID_SECOND, HYBRID_REGION_SWITCH)


@dataclass
class PairedModule:
    """A forward predictor and an inverse controller trained on one regime."""

    forward: ForwardEmulator
    inverse: Mlp
    id: str = ""


def module_errors(modules, u_prev: float, s_prev, y_actual: float) -> np.ndarray:
    """Prediction error of every module's forward emulator for the last tick."""
    s_prev = np.asarray(s_prev, dtype=float)
    return np.array([float(y_actual) - m.forward.predict(u_prev, s_prev) for m in modules])


@dataclass
class ResponsibilityWeights:
    """Softmax weights over modules; small prediction error means high weight."""

    lam: np.ndarray
    sigma: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if self.sigma <= 0.0:
            raise ValueError("sigma must be > 0")
        if self.lam.size == 0 or (self.lam < -1e-12).any() or (self.lam > 1.0 + 1e-12).any():
            raise ValueError("weights must lie in [0, 1]")
        if abs(self.lam.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


def responsibilities(errors, sigma: float) -> ResponsibilityWeights:
    """lam_l = exp(-e_l^2/sigma^2) normalized over modules.

    Computed with the usual max-shift, so the weights are invariant under
    adding a common constant to all exponents and always sum to one.
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be > 0")
    errors = np.asarray(errors, dtype=float)
    expo = -(errors / sigma) ** 2
    expo -= expo.max()
    lam = np.exp(expo)
    lam /= lam.sum()
    return ResponsibilityWeights(lam, sigma)


def blend(weights: ResponsibilityWeights, controls, mode: str = WEIGHTED) -> float:
    """Combine per-module controls: responsibility-weighted sum, or the single
    control of the most responsible module (ties go to the lowest index)."""
    controls = np.asarray(controls, dtype=float)
    if controls.shape != weights.lam.shape:
        raise ValueError(f"{len(controls)} controls for {len(weights.lam)} weights")
    if mode == WEIGHTED:
        return float(weights.lam @ controls)
    if mode == WINNER_TAKE_ALL:
        return float(controls[int(np.argmax(weights.lam))])
    raise ValueError(f"unknown blend mode {mode!r}")


def multimodule_step(modules, prev, r_next: float, plant: Plant, est: NarxEstimator,
                     sigma: float = 0.5, mode: str = WEIGHTED):
    """One two-phase tick: re-score module responsibilities from the previous
    tick's data, then blend the inverse controllers' proposals and act.

    ``prev`` is (u_prev, state_prev) from the last call, or None on the first
    tick (uniform weights then). Returns (u, y_next, weights, next_prev).
    """
    modules = list(modules)
    s_now = est.state()
    if prev is None:
        lam = ResponsibilityWeights(np.full(len(modules), 1.0 / len(modules)), sigma)
    else:
        u_prev, s_prev = prev
        errs = module_errors(modules, u_prev, s_prev, s_now[0])
        lam = responsibilities(errs, sigma)
    controls = [float(m.inverse.predict(np.concatenate([[float(r_next)], s_now]))[0])
                for m in modules]
    u = blend(lam, controls, mode)
    y_next = plant.step(u)
    est.observe(y_next, u)
    return u, y_next, lam, (u, s_now)


class MultiModuleController:
    """Episode-runner adapter around multimodule_step's two-phase tick."""

    def __init__(self, modules, est: NarxEstimator, sigma: float = 0.5,
                 mode: str = WEIGHTED):
        if not modules:
            raise ValueError("need at least one module")
        self.modules = list(modules)
        self.est = est
        self.sigma = float(sigma)
        self.mode = mode
        self._prev: tuple[float, np.ndarray] | None = None
        self._s_now: np.ndarray | None = None
        self.last_lambda = np.full(len(self.modules), 1.0 / len(self.modules))

    def act(self, r_next: float) -> float:
        s_now = self.est.state()
        if self._prev is None:
            lam = ResponsibilityWeights(self.last_lambda.copy(), self.sigma)
        else:
            u_prev, s_prev = self._prev
            lam = responsibilities(module_errors(self.modules, u_prev, s_prev, s_now[0]),
                                   self.sigma)
        controls = [float(m.inverse.predict(np.concatenate([[float(r_next)], s_now]))[0])
                    for m in self.modules]
        self.last_lambda = lam.lam
        self._s_now = s_now
        return blend(lam, controls, self.mode)

    def observe(self, y_new: float, u: float) -> None:
        self.est.observe(y_new, u)
        self._prev = (u, self._s_now)


@dataclass
class Region:
    """Axis-aligned open box in state space; membership is strict."""

    center: np.ndarray
    half_width: np.ndarray

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        self.half_width = np.asarray(self.half_width, dtype=float)
        if self.center.shape != self.half_width.shape:
            raise ValueError("center and half_width must have the same shape")
        if (self.half_width <= 0.0).any():
            raise ValueError("half widths must be > 0")

    def contains(self, state) -> bool:
        state = np.asarray(state, dtype=float)
        if state.shape != self.center.shape:
            raise ValueError(f"state of dim {state.shape} vs region of dim {self.center.shape}")
        return bool(np.all(np.abs(state - self.center) < self.half_width))


def hybrid_step(mode: str, u_pid: float, u_nn: float, region: Region | None = None,
                state=None) -> float:
    """Combine the two controllers' outputs per the chosen wiring.

    Both sum modes add the signals (they differ only in which controller was
    trained against the loop closed by the other); the switch mode hands the
    plant to the network inside the region and to the PID outside.
    """
    if mode not in HYBRID_MODES:
        raise ValueError(f"unknown hybrid mode {mode!r}")
    if mode == HYBRID_REGION_SWITCH:
        if region is None:
            raise ValueError("region_switch mode needs a region")
        return u_nn if region.contains(state) else u_pid
    return u_pid + u_nn


@dataclass
class NeuroPidAssembly:
    """Network that emits PID gains each tick, trained online through the law."""

    net: Mlp
    rate: float
    include_state: bool = True
    pid_state: PidState = field(default_factory=PidState)

    def __post_init__(self):
        if self.net.output_dim != 3:
            raise ValueError("gain network must output exactly [K1, K2, K3]")


def neuro_pid_step(asm: NeuroPidAssembly, plant: Plant, est: NarxEstimator,
                   r_next: float, jac_mode: str = "analytic", d: float = 0.0):
    """One auto-tuning tick: emit gains, run the PID law, step, descend.

    The update chains the post-step tracking error through the plant
    sensitivity, then through du/dK of the PID law (evaluated at the error
    history that actually produced u), and finally through the gain network.
    Returns (gains, u, y_next, e).
    """
    if jac_mode not in ("analytic", "sign_only"):
        raise ValueError(f"unknown jac_mode {jac_mode!r}")
    x = [float(r_next)]
    if asm.include_state:
        x = np.concatenate([x, est.state()])
    k_vec, cache = asm.net.forward(x)
    gains = PidGains(float(k_vec[0]), float(k_vec[1]), float(k_vec[2]))
    e_fb = float(r_next) - plant.y
    prev = asm.pid_state
    u, asm.pid_state = pid_step(gains, prev, e_fb)
    y_next = plant.step(u, d)
    est.observe(y_next, u)
    e = float(r_next) - y_next
    if not all(math.isfinite(v) for v in (u, y_next, e)):
        raise DivergenceError(None, "neuro-PID loop became non-finite")
    jac = plant.jacobian_du()
    if jac_mode == "sign_only":
        jac = 1.0 if jac >= 0.0 else -1.0
    du_dk = pid_gain_gradient(e_fb, prev.e_prev, prev.e_prev2)
    grads = asm.net.backward_weights(cache, -e * jac * du_dk)
    asm.net.sgd_step(grads, asm.rate)
    return k_vec, u, y_next, e


@dataclass
class FilterAssembly:
    """Disturbance filter built from a pre-trained forward/inverse pair.

    ``u_corr`` is the correction computed last tick and applied this tick;
    it starts at zero so the very first tick passes the control through
    unchanged.
    """

    forward: ForwardEmulator
    inverse: Mlp
    inverse_val_mse: float | None = None
    u_corr: float = 0.0
    threshold: float = EMULATOR_READY_MSE

    @property
    def is_ready(self) -> bool:
        inv_ok = self.inverse_val_mse is not None and self.inverse_val_mse < self.threshold
        return self.forward.is_ready and inv_ok

    def require_ready(self) -> None:
        if not self.is_ready:
            raise EmulatorNotReadyError(
                f"filter emulators not ready (forward MSE {self.forward.val_mse}, "
                f"inverse MSE {self.inverse_val_mse}, threshold {self.threshold})")


def filter_step(asm: FilterAssembly, u_ctl: float, plant: Plant, est: NarxEstimator,
                d: float = 0.0):
    """Apply the carried correction, detect the disturbance, plan the next one.

    The forward emulator predicts what the (corrected) control should have
    produced; the gap to the real output is the disturbance estimate. Its
    control-side equivalent comes from differencing the inverse model at the
    predicted and the actual output, so a bit-exact emulator with no
    disturbance yields an exactly zero correction. Returns
    (u_fin, y_next, e_dist).
    """
    asm.require_ready()
    s_now = est.state()
    u_fin = float(u_ctl) + asm.u_corr
    y_next = plant.step(u_fin, d)
    y_hat = asm.forward.predict(u_fin, s_now)
    e_dist = y_next - y_hat
    u_for_actual = float(asm.inverse.predict(np.concatenate([[y_next], s_now]))[0])
    u_for_predicted = float(asm.inverse.predict(np.concatenate([[y_hat], s_now]))[0])
    asm.u_corr = -(u_for_actual - u_for_predicted)
    est.observe(y_next, u_fin)
    return u_fin, y_next, e_dist


class ReferenceWrappedController:
    """Controller whose setpoint passes through a reference model first."""

    def __init__(self, model: ReferenceModel, inner):
        self.model = model
        self.inner = inner
        self.last_r_prime = model.r_current

    def act(self, r_next: float) -> float:
        self.last_r_prime = self.model.step(r_next)
        return self.inner.act(self.last_r_prime)

    def observe(self, y_new: float, u: float) -> None:
        self.inner.observe(y_new, u)


def wrap_with_reference(model: ReferenceModel, inner) -> ReferenceWrappedController:
    """Interpose the reference model between setpoint and controller.

    The wrapper only filters the setpoint stream; it never touches the inner
    controller's parameters, in training or in control.
    """
    return ReferenceWrappedController(model, inner)
