"""Inverse-flavoured control schemes: mimic, generalized inverse (closed and
open loop), specialized inverse online training, and error backpropagation
through a frozen forward emulator.

Dataset index convention: each recorded pair relates the achieved output and
the state the plant was in just before, to the control that caused the
transition. That is the standard one-step inverse dataset; for the exactly
invertible linear plant every pair satisfies the plant's algebraic inverse
to machine precision, which the tests lean on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, EmulatorNotReadyError
from .nn import ForwardCache, Mlp, TappedDelayLine, mlp_new
from .pid import PidGains, PidState, pid_step
from .plants import ExcitationSpec, NarxEstimator, Plant, excitation

log = logging.getLogger(__name__)

# Held-out MSE an emulator must reach before BPTE / planning / filtering may
# trust it.
EMULATOR_READY_MSE = 1e-3

CLOSED_LOOP = "closed_loop"
OPEN_LOOP = "open_loop"


@dataclass
class TrainingSet:
    """Ordered input/target pairs for the supervised schemes."""

    inputs: np.ndarray   # (M, p)
    targets: np.ndarray  # (M, t)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have the same number of rows")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path) -> None:
        """One row per pair, P fields first then T fields, with a header."""
        p = self.inputs.shape[1]
        t = self.targets.shape[1]
        header = ",".join([f"P{i}" for i in range(p)] + [f"T{i}" for i in range(t)])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(header + "\n")
            for row_p, row_t in zip(self.inputs, self.targets):
                vals = [format(v, ".17g") for v in row_p] + [format(v, ".17g") for v in row_t]
                fh.write(",".join(vals) + "\n")


def collect_mimic(plant: Plant, gains: PidGains, setpoints, est: NarxEstimator) -> TrainingSet:
    """Record a PID driving the plant; pairs are ([r_next, state], pid control).

    The caller is responsible for gains that stabilize the plant on the given
    schedule; a non-finite trajectory aborts with the offending tick.
    """
    pid_state = PidState()
    y = plant.y
    ps, ts = [], []
    for k, r in enumerate(np.asarray(setpoints, dtype=float)):
        s = est.state()
        u, pid_state = pid_step(gains, pid_state, r - y)
        y = plant.step(u)
        if not (math.isfinite(u) and math.isfinite(y)):
            raise DivergenceError(k + 1, "PID trajectory became non-finite")
        est.observe(y, u)
        ps.append(np.concatenate([[r], s]))
        ts.append([u])
    return TrainingSet(np.array(ps), np.array(ts))


def _drive(plant: Plant, controls, est: NarxEstimator):
    """Feed a control sequence to the plant, yielding (u, prior state, new y)."""
    for u in controls:
        s_prev = est.state()
        y = plant.step(u)
        est.observe(y, u)
        yield float(u), s_prev, y


def collect_inverse(plant: Plant, exc, est: NarxEstimator) -> TrainingSet:
    """Excite the plant and record ([achieved y, prior state], control) pairs."""
    controls = excitation(exc) if isinstance(exc, ExcitationSpec) else np.asarray(exc, dtype=float)
    ps, ts = [], []
    for u, s_prev, y in _drive(plant, controls, est):
        ps.append(np.concatenate([[y], s_prev]))
        ts.append([u])
    return TrainingSet(np.array(ps), np.array(ts))


def collect_forward(plant: Plant, exc, est: NarxEstimator) -> TrainingSet:
    """Excite the plant and record ([control, prior state], achieved y) pairs."""
    controls = excitation(exc) if isinstance(exc, ExcitationSpec) else np.asarray(exc, dtype=float)
    ps, ts = [], []
    for u, s_prev, y in _drive(plant, controls, est):
        ps.append(np.concatenate([[u], s_prev]))
        ts.append([y])
    return TrainingSet(np.array(ps), np.array(ts))


def evaluate_mse(net: Mlp, data: TrainingSet) -> float:
    """Mean squared prediction error over the whole set."""
    if len(data) == 0:
        return 0.0
    err = 0.0
    for p, t in zip(data.inputs, data.targets):
        diff = net.predict(p) - t
        err += float(diff @ diff)
    return err / len(data)


def train_supervised(net: Mlp, data: TrainingSet, epochs: int, rate: float,
                     seed: int) -> list[float]:
    """Per-sample steepest descent on 0.5*||T - net(P)||^2, reshuffled each epoch.

    Mutates the network in place and returns the full-set MSE measured after
    each epoch. Zero epochs leave the network untouched and the curve empty.
    """
    if len(data) == 0:
        raise ValueError("training set is empty")
    if data.inputs.shape[1] != net.input_dim or data.targets.shape[1] != net.output_dim:
        raise ValueError(
            f"data shapes {data.inputs.shape[1]}->{data.targets.shape[1]} do not match "
            f"network {net.input_dim}->{net.output_dim}")
    rng = np.random.default_rng(seed)
    curve = []
    for _ in range(int(epochs)):
        for i in rng.permutation(len(data)):
            y, cache = net.forward(data.inputs[i])
            grads = net.backward_weights(cache, y - data.targets[i])
            net.sgd_step(grads, rate)
        curve.append(evaluate_mse(net, data))
    return curve


@dataclass
class ForwardEmulator:
    """One-step plant predictor: [u(k), S(k)] -> y(k+1) estimate.

    ``n``/``q`` record the NARX orders of the state layout so planners can
    shift the state themselves when rolling predictions forward. ``val_mse``
    is the held-out error from fitting; the emulator refuses duty until it is
    known and below ``threshold``.
    """

    net: Mlp
    n: int
    q: int
    val_mse: float | None = None
    threshold: float = EMULATOR_READY_MSE

    @property
    def is_ready(self) -> bool:
        return self.val_mse is not None and self.val_mse < self.threshold

    def require_ready(self) -> None:
        if not self.is_ready:
            raise EmulatorNotReadyError(
                f"forward emulator not ready (held-out MSE {self.val_mse}, "
                f"threshold {self.threshold})")

    def forward(self, u: float, state) -> tuple[np.ndarray, ForwardCache]:
        return self.net.forward(np.concatenate([[float(u)], np.asarray(state, dtype=float)]))

    def predict(self, u: float, state) -> float:
        y, _ = self.forward(u, state)
        return float(y[0])


def fit_forward_emulator(plant: Plant, n: int, q: int, train_spec: ExcitationSpec,
                         val_spec: ExcitationSpec, hidden: int = 8, epochs: int = 40,
                         rate: float = 0.1, seed: int = 0) -> ForwardEmulator:
    """Offline identification run: excite, fit, and score on held-out excitation."""
    est = NarxEstimator(n, q)
    plant.reset()
    data = collect_forward(plant, train_spec, est)
    net = mlp_new([1 + est.state_dim, hidden, 1], ["tanh", "linear"], seed=seed)
    train_supervised(net, data, epochs=epochs, rate=rate, seed=seed + 1)
    est_val = NarxEstimator(n, q)
    plant.reset()
    val = collect_forward(plant, val_spec, est_val)
    return ForwardEmulator(net, n=n, q=q, val_mse=evaluate_mse(net, val))


def fit_inverse_model(plant: Plant, n: int, q: int, train_spec: ExcitationSpec,
                      val_spec: ExcitationSpec | None = None, hidden: int = 8,
                      epochs: int = 40, rate: float = 0.1,
                      seed: int = 0) -> tuple[Mlp, float | None]:
    """Fit the one-step inverse map; returns the net and its held-out MSE."""
    est = NarxEstimator(n, q)
    plant.reset()
    data = collect_inverse(plant, train_spec, est)
    net = mlp_new([1 + est.state_dim, hidden, 1], ["tanh", "linear"], seed=seed)
    train_supervised(net, data, epochs=epochs, rate=rate, seed=seed + 1)
    val_mse = None
    if val_spec is not None:
        est_val = NarxEstimator(n, q)
        plant.reset()
        val_mse = evaluate_mse(net, collect_inverse(plant, val_spec, est_val))
    return net, val_mse


class InverseController:
    """Trained inverse model wired as a controller.

    Closed loop feeds [r_next, current state estimate]; open loop feeds the
    setpoint plus its own history of past setpoints and never looks at the
    plant. The two wirings need different input widths, so a net trained for
    one cannot silently be used for the other: construction fails instead.
    """

    def __init__(self, net: Mlp, mode: str, est: NarxEstimator | None = None,
                 setpoint_depth: int | None = None):
        if mode not in (CLOSED_LOOP, OPEN_LOOP):
            raise ValueError(f"unknown mode {mode!r}")
        self.net = net
        self.mode = mode
        self.est = est
        self.r_line: TappedDelayLine | None = None
        if mode == CLOSED_LOOP:
            if est is None:
                raise ValueError("closed-loop controller needs a state estimator")
            expected = 1 + est.state_dim
        else:
            if setpoint_depth is None or setpoint_depth < 1:
                raise ValueError("open-loop controller needs setpoint_depth >= 1")
            self.r_line = TappedDelayLine(setpoint_depth)
            expected = 1 + setpoint_depth
        if net.input_dim != expected:
            raise ValueError(
                f"net expects {net.input_dim} inputs but {mode} wiring supplies {expected}")

    def act(self, r_next: float) -> float:
        if self.mode == CLOSED_LOOP:
            x = np.concatenate([[float(r_next)], self.est.state()])
        else:
            x = np.concatenate([[float(r_next)], self.r_line.vector()])
            self.r_line.push(r_next)
        return float(self.net.predict(x)[0])

    def observe(self, y_new: float, u: float) -> None:
        if self.mode == CLOSED_LOOP:
            self.est.observe(y_new, u)


def specialized_step(ctl_net: Mlp, plant: Plant, est: NarxEstimator, r_next: float,
                     rate: float, jac_mode: str = "analytic",
                     d: float = 0.0) -> tuple[float, float, float]:
    """One online tick: act on [r_next, state], step the plant, descend on 0.5*e^2.

    The update chains the tracking error through the plant's control
    sensitivity into the network; ``sign_only`` replaces the sensitivity by
    +/-1, which is enough whenever its sign is trustworthy. A zero Jacobian
    in analytic mode skips the update (there is no usable direction) and
    logs a warning.
    """
    if jac_mode not in ("analytic", "sign_only"):
        raise ValueError(f"unknown jac_mode {jac_mode!r}")
    x = np.concatenate([[float(r_next)], est.state()])
    u_vec, cache = ctl_net.forward(x)
    u = float(u_vec[0])
    y_next = plant.step(u, d)
    est.observe(y_next, u)
    e = float(r_next) - y_next
    jac = plant.jacobian_du()
    if jac_mode == "sign_only":
        jac = 1.0 if jac >= 0.0 else -1.0
    if jac == 0.0:
        log.warning("zero plant Jacobian, skipping weight update")
        return u, y_next, e
    grads = ctl_net.backward_weights(cache, np.array([-e * jac]))
    ctl_net.sgd_step(grads, rate)
    return u, y_next, e


def bpte_train_step(ctl_net: Mlp, emu: ForwardEmulator, plant: Plant, est: NarxEstimator,
                    r_next: float, rate: float, d: float = 0.0) -> tuple[float, float, float]:
    """One online tick of training through the frozen forward emulator.

    The tracking error is passed backward through the emulator to its control
    input, turning the emulator into a local inverse model; the resulting
    gradient then flows through the controller, whose weights are the only
    ones updated. The emulator's input sensitivity plays exactly the role
    the plant Jacobian plays in specialized_step.
    """
    emu.require_ready()
    s = est.state()
    x = np.concatenate([[float(r_next)], s])
    u_vec, ctl_cache = ctl_net.forward(x)
    u = float(u_vec[0])
    y_next = plant.step(u, d)
    est.observe(y_next, u)
    e = float(r_next) - y_next
    _, emu_cache = emu.forward(u, s)
    dl_du = emu.net.backward_inputs(emu_cache, np.array([-e]))[0]  # u sits in slot 0
    grads = ctl_net.backward_weights(ctl_cache, np.array([dl_du]))
    ctl_net.sgd_step(grads, rate)
    return u, y_next, e
