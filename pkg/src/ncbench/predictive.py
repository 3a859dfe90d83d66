"""Receding-horizon predictive control over a forward emulator, and the
heuristic-dynamic-programming actor/critic trained by temporal differences.

The plan search is deliberately derivative-free and deterministic: coordinate
sweeps over a uniform candidate grid, each sweep halving the grid span around
the incumbent. On instances small enough to enumerate it never does worse
than brute force over the initial grid, which is what the tests check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .inverse import ForwardEmulator
from .nn import Mlp
from .plants import NarxEstimator, Plant

# Position of the control inside the critic input z = [r_next, u, state...].
U_SLOT = 1

# Online loops abort once any parameter magnitude passes this.
WEIGHT_GUARD = 1e6

# Cap on coordinate passes per sweep; convergence is typically 2-3 passes.
_MAX_PASSES = 32


@dataclass(frozen=True)
class MpcConfig:
    """Horizon bounds, move penalty and search-grid geometry for the planner."""

    l2: int
    l1: int = 1
    rho: float = 0.0
    candidates_per_step: int = 9
    u_min: float = -2.0
    u_max: float = 2.0
    refine_iters: int = 4

    def __post_init__(self):
        if self.l2 < 1 or not 0 <= self.l1 <= self.l2:
            raise ValueError(f"need 0 <= l1 <= l2 and l2 >= 1, got l1={self.l1} l2={self.l2}")
        if self.rho < 0.0:
            raise ValueError("rho must be >= 0")
        if self.candidates_per_step < 2:
            raise ValueError("candidates_per_step must be >= 2")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")
        if self.refine_iters < 1:
            raise ValueError("refine_iters must be >= 1")

    @property
    def final_cell(self) -> float:
        """Width of one cell of the last refinement grid."""
        span = (self.u_max - self.u_min) / 2 ** (self.refine_iters - 1)
        return span / (self.candidates_per_step - 1)


def mpc_cost(r_traj, y_pred, u_seq, u_prev: float, cfg: MpcConfig) -> float:
    """Predicted cost of a control sequence.

    Q = sum of squared tracking errors over horizon steps l1..l2 plus
    rho * sum of squared control moves, the first move measured against
    ``u_prev``. Entry j of each array refers to horizon step j+1, so the
    (plan-independent) current-tick error never enters even when l1 = 0.
    """
    r_traj = np.asarray(r_traj, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    u_seq = np.asarray(u_seq, dtype=float)
    if not (len(r_traj) == len(y_pred) == len(u_seq) == cfg.l2):
        raise ValueError(f"arrays must all have length l2={cfg.l2}")
    lo = max(cfg.l1, 1)
    err = r_traj[lo - 1:] - y_pred[lo - 1:]
    q = float(err @ err)
    if cfg.rho > 0.0:
        moves = np.diff(u_seq, prepend=u_prev)
        q += cfg.rho * float(moves @ moves)
    return q


def _shift_state(state: np.ndarray, y_new: float, u_new: float, n: int, q: int) -> np.ndarray:
    """Advance a NARX state vector one predicted tick."""
    out = np.empty_like(state)
    out[0] = y_new
    out[1: n + 1] = state[: n]
    if q > 0:
        out[n + 1] = u_new
        out[n + 2:] = state[n + 1: n + q]
    return out


def rollout(emu: ForwardEmulator, state, u_seq) -> np.ndarray:
    """Predicted outputs for a control sequence, starting from the given state."""
    s = np.asarray(state, dtype=float).copy()
    ys = np.empty(len(u_seq))
    for t, u in enumerate(u_seq):
        y_hat = emu.predict(u, s)
        ys[t] = y_hat
        s = _shift_state(s, y_hat, float(u), emu.n, emu.q)
    return ys


def mpc_plan(emu: ForwardEmulator, state, r_traj, u_prev: float,
             cfg: MpcConfig) -> tuple[float, np.ndarray, float]:
    """Search for the cost-minimizing control sequence; only its head gets applied.

    Starts from the hold-current-control sequence and runs coordinate sweeps:
    sweep 0 scans the full [u_min, u_max] grid per position, later sweeps use
    half the previous span centred on the incumbent. Within a sweep, passes
    repeat until no single-position change improves the cost, so on small
    grids the result is never worse than full enumeration of the initial grid.
    """
    emu.require_ready()
    r_traj = np.asarray(r_traj, dtype=float)
    if len(r_traj) != cfg.l2:
        raise ValueError(f"r_traj must have length l2={cfg.l2}")
    state = np.asarray(state, dtype=float)

    def cost_of(seq: np.ndarray) -> float:
        return mpc_cost(r_traj, rollout(emu, state, seq), seq, u_prev, cfg)

    seq = np.full(cfg.l2, min(max(u_prev, cfg.u_min), cfg.u_max))
    q_best = cost_of(seq)
    full_span = cfg.u_max - cfg.u_min
    for sweep in range(cfg.refine_iters):
        span = full_span / 2 ** sweep
        for _ in range(_MAX_PASSES):
            improved = False
            for t in range(cfg.l2):
                if sweep == 0:
                    lo, hi = cfg.u_min, cfg.u_max
                else:
                    lo = max(cfg.u_min, seq[t] - span / 2.0)
                    hi = min(cfg.u_max, seq[t] + span / 2.0)
                for cand in np.linspace(lo, hi, cfg.candidates_per_step):
                    if cand == seq[t]:
                        continue
                    trial = seq.copy()
                    trial[t] = cand
                    q = cost_of(trial)
                    if q < q_best:
                        q_best = q
                        seq = trial
                        improved = True
            if not improved:
                break
    return float(seq[0]), seq, q_best


@dataclass
class CriticNet:
    """Scalar cost-to-go approximator over z = [r_next, u, state...].

    gamma is the discount of the infinite-horizon squared-error sum the
    critic estimates; rate_critic and rate_actor are the two descent rates
    of the alternating value/policy updates.
    """

    net: Mlp
    gamma: float
    rate_critic: float
    rate_actor: float

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.net.output_dim != 1:
            raise ValueError("critic output must be scalar")

    def value(self, z) -> float:
        return float(self.net.predict(z)[0])


def td_error(cost: float, j_hat_next: float, j_hat: float, gamma: float) -> float:
    """Temporal-difference residual: cost + gamma * J(k+1) - J(k).

    ``cost`` is the instantaneous term of the discounted sum; the episode
    loop passes the squared tracking error so the recursion matches the
    functional the critic is meant to approximate.
    """
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must be in (0, 1]")
    return cost + gamma * j_hat_next - j_hat


def critic_update(critic: CriticNet, z, delta: float) -> None:
    """Semi-gradient value step: w <- w - rate * delta * dJ/dw."""
    _, cache = critic.net.forward(z)
    grads = critic.net.backward_weights(cache, np.array([delta]))
    critic.net.sgd_step(grads, critic.rate_critic)


def actor_update(actor: Mlp, critic: CriticNet, x, z, rate: float) -> None:
    """Policy step: descend the critic's estimate along dJ/du through the actor.

    dJ/du is read off a backward-inputs pass over the critic at the control
    slot of z; the critic's own parameters are never modified here.
    """
    z = np.asarray(z, dtype=float)
    if len(z) <= U_SLOT:
        raise ValueError(f"z has no control slot at index {U_SLOT}")
    _, c_cache = critic.net.forward(z)
    dj_du = critic.net.backward_inputs(c_cache, np.array([1.0]))[U_SLOT]
    _, a_cache = actor.forward(x)
    grads = actor.backward_weights(a_cache, np.array([dj_du]))
    actor.sgd_step(grads, rate)


def _params_bounded(net: Mlp) -> bool:
    return all(np.isfinite(w).all() and np.abs(w).max(initial=0.0) <= WEIGHT_GUARD
               for w in net.weights + net.biases)


def hdp_episode(actor: Mlp, critic: CriticNet, plant: Plant, est: NarxEstimator,
                setpoints, ticks: int, disturbance=None) -> list[dict]:
    """One online actor/critic episode; both networks learn in place.

    Per tick: act, step the plant, score the tracking error, bootstrap the
    next-tick value with the current policy, form the TD residual, update the
    critic and then the actor through it. Any non-finite quantity or runaway
    weight aborts with the tick index, carrying the rows logged so far.
    """
    setpoints = np.asarray(setpoints, dtype=float)
    d = np.zeros(ticks) if disturbance is None else np.asarray(disturbance, dtype=float)
    rows: list[dict] = []
    for k in range(int(ticks)):
        r = float(setpoints[k])
        s = est.state()
        x = np.concatenate([[r], s])
        u = float(actor.predict(x)[0])
        z = np.concatenate([[r, u], s])
        j_now = critic.value(z)
        y = plant.step(u, d[k])
        est.observe(y, u)
        e = r - y
        r2 = float(setpoints[k + 1]) if k + 1 < len(setpoints) else r
        s2 = est.state()
        u2 = float(actor.predict(np.concatenate([[r2], s2]))[0])
        j_next = critic.value(np.concatenate([[r2, u2], s2]))
        delta = td_error(e * e, j_next, j_now, critic.gamma)
        critic_update(critic, z, delta)
        actor_update(actor, critic, x, z, critic.rate_actor)
        finite = all(math.isfinite(v) for v in (u, y, e, j_now, j_next, delta))
        if not finite or not (_params_bounded(actor) and _params_bounded(critic.net)):
            raise DivergenceError(k + 1, "actor/critic episode diverged", rows=rows)
        rows.append({"k": k + 1, "r": r, "u": u, "y": y, "e": e,
                     "j_hat": j_now, "delta": delta})
    return rows
