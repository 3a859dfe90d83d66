"""Experiment configuration, episode orchestration, metrics and file export.

Config files are JSON with a strict schema; unknown keys anywhere are
rejected before anything runs. Top-level keys:

    plant              {"kind": "linear1", "a": .., "b": ..} or {"kind": "nonlinear1"}
    scheme             one of the ten scheme names (see SCHEMES)
    scheme_params      per-scheme knobs, validated against that scheme's defaults
    setpoint_schedule  [[tick, value], ...], tick 0 first, strictly increasing
    ticks              episode length
    seed               master seed; every derived seed is an offset from it
    estimator          {"n": .., "q": ..} NARX orders (optional, default n=1 q=0)
    disturbance        {"kind": "constant"|"impulse", "magnitude": .., "start_tick": ..}
    reference_tau      optional (0, 1]: lag the setpoint series through a
                       first-order reference model (adds an r_prime column)
    scheme_overrides   {scheme_name: {param: value}}, used by `compare`

Every byte of output is a pure function of (config, seed): runs never read
the clock and never use unseeded randomness.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError
from .inverse import (
    CLOSED_LOOP,
    OPEN_LOOP,
    ForwardEmulator,
    InverseController,
    TrainingSet,
    bpte_train_step,
    collect_inverse,
    collect_mimic,
    fit_forward_emulator,
    fit_inverse_model,
    specialized_step,
    train_supervised,
)
from .modular import (
    HYBRID_MODES,
    HYBRID_REGION_SWITCH,
    HYBRID_SUM_NN_SECOND,
    MultiModuleController,
    PairedModule,
    Region,
    hybrid_step,
    neuro_pid_step,
    NeuroPidAssembly,
)
from .nn import Mlp, mlp_new
from .pid import PidController, PidGains, reference_series
from .plants import ExcitationSpec, LinearPlant, NarxEstimator, NonlinearPlant, Plant
from .predictive import CriticNet, MpcConfig, hdp_episode, mpc_plan

BASE_COLUMNS = ("k", "r", "u", "y", "e")


class EpisodeLog:
    """Per-tick record of an episode: k, r, u, y, e plus scheme diagnostics."""

    def __init__(self, extra_columns=()):
        self.extra_columns = tuple(extra_columns)
        self.rows: list[dict] = []

    @property
    def columns(self) -> tuple:
        return BASE_COLUMNS + self.extra_columns

    def append(self, k: int, r: float, u: float, y: float, e: float, **extras) -> None:
        if set(extras) != set(self.extra_columns):
            raise ValueError(f"expected extras {self.extra_columns}, got {tuple(extras)}")
        expected = 1 if not self.rows else self.rows[-1]["k"] + 1
        if k != expected:
            raise ValueError(f"tick {k} out of order, expected {expected}")
        row = {"k": int(k), "r": float(r), "u": float(u), "y": float(y), "e": float(e)}
        row.update({name: float(extras[name]) for name in self.extra_columns})
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def __len__(self) -> int:
        return len(self.rows)


def iae(log: EpisodeLog) -> float:
    """Integral tracking metric: sum of squared per-tick errors."""
    if not log.rows:
        return 0.0
    e = log.column("e")
    return float(e @ e)


@dataclass
class MetricsReport:
    iae: float
    final_window_mean_abs_e: float
    max_abs_u: float
    diverged: bool


def compute_metrics(log: EpisodeLog, diverged: bool = False) -> MetricsReport:
    """Summarize an episode; the final window is the last tenth of the rows."""
    if not log.rows:
        return MetricsReport(0.0, 0.0, 0.0, diverged)
    e = log.column("e")
    u = log.column("u")
    window = max(1, len(log) // 10)
    return MetricsReport(
        iae=float(e @ e),
        final_window_mean_abs_e=float(np.mean(np.abs(e[-window:]))),
        max_abs_u=float(np.max(np.abs(u))),
        diverged=diverged,
    )


# ---------------------------------------------------------------------------
# Configuration

_PLANT_KEYS = {"linear1": {"kind", "a", "b"}, "nonlinear1": {"kind"}}


def build_plant(spec: dict) -> Plant:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"plant must be an object with a 'kind', got {spec!r}")
    kind = spec["kind"]
    if kind not in _PLANT_KEYS:
        raise ConfigError(f"unknown plant kind {kind!r}")
    unknown = set(spec) - _PLANT_KEYS[kind]
    if unknown:
        raise ConfigError(f"unknown plant keys {sorted(unknown)}")
    if kind == "linear1":
        try:
            return LinearPlant(float(spec.get("a", 0.5)), float(spec.get("b", 1.0)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return NonlinearPlant()


@dataclass
class ExperimentConfig:
    plant: dict
    scheme: str
    ticks: int
    seed: int = 0
    scheme_params: dict = field(default_factory=dict)
    setpoint_schedule: list = field(default_factory=lambda: [[0, 0.5]])
    estimator: dict = field(default_factory=lambda: {"n": 1, "q": 0})
    disturbance: dict | None = None
    reference_tau: float | None = None
    scheme_overrides: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


_TOP_KEYS = {"plant", "scheme", "ticks", "seed", "scheme_params", "setpoint_schedule",
             "estimator", "disturbance", "reference_tau", "scheme_overrides"}
_DISTURBANCE_KINDS = ("constant", "impulse")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a raw mapping into a config; any unknown key is an error."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("plant", "scheme", "ticks"):
        if key not in raw:
            raise ConfigError(f"missing required config key '{key}'")
    scheme = raw["scheme"]
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; see `ncbench list-schemes`")
    ticks = raw["ticks"]
    if not isinstance(ticks, int) or ticks < 0:
        raise ConfigError(f"ticks must be a non-negative integer, got {ticks!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    schedule = raw.get("setpoint_schedule", [[0, 0.5]])
    if (not isinstance(schedule, list) or not schedule
            or any(not isinstance(p, (list, tuple)) or len(p) != 2 for p in schedule)):
        raise ConfigError("setpoint_schedule must be a non-empty list of [tick, value] pairs")
    ticks_seen = [p[0] for p in schedule]
    if ticks_seen[0] != 0 or any(b <= a for a, b in zip(ticks_seen, ticks_seen[1:])):
        raise ConfigError("setpoint_schedule ticks must start at 0 and strictly increase")

    est = raw.get("estimator", {"n": 1, "q": 0})
    if not isinstance(est, dict) or set(est) - {"n", "q"}:
        raise ConfigError(f"estimator accepts only n and q, got {est!r}")
    est = {"n": int(est.get("n", 1)), "q": int(est.get("q", 0))}
    if est["n"] < 0 or est["q"] < 0:
        raise ConfigError("estimator orders must be >= 0")

    dist = raw.get("disturbance")
    if dist is not None:
        if not isinstance(dist, dict) or set(dist) - {"kind", "magnitude", "start_tick"}:
            raise ConfigError(f"disturbance accepts kind/magnitude/start_tick, got {dist!r}")
        if dist.get("kind") not in _DISTURBANCE_KINDS:
            raise ConfigError(f"disturbance kind must be one of {_DISTURBANCE_KINDS}")
        dist = {"kind": dist["kind"], "magnitude": float(dist.get("magnitude", 0.0)),
                "start_tick": int(dist.get("start_tick", 0))}

    tau = raw.get("reference_tau")
    if tau is not None:
        tau = float(tau)
        if not 0.0 < tau <= 1.0:
            raise ConfigError("reference_tau must be in (0, 1]")

    params = raw.get("scheme_params", {})
    if not isinstance(params, dict):
        raise ConfigError("scheme_params must be an object")
    overrides = raw.get("scheme_overrides", {})
    if not isinstance(overrides, dict) or any(s not in SCHEMES for s in overrides):
        raise ConfigError("scheme_overrides must map known scheme names to objects")

    cfg = ExperimentConfig(
        plant=dict(raw["plant"]), scheme=scheme, ticks=ticks, seed=seed,
        scheme_params=dict(params), setpoint_schedule=[list(p) for p in schedule],
        estimator=est, disturbance=dist, reference_tau=tau,
        scheme_overrides={k: dict(v) for k, v in overrides.items()},
    )
    build_plant(cfg.plant)  # validate eagerly
    resolve_params(scheme, cfg.scheme_params)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def resolve_params(scheme: str, user_params: dict) -> dict:
    """Merge user parameters over the scheme defaults, rejecting unknown names."""
    defaults = SCHEMES[scheme].defaults
    unknown = set(user_params) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {scheme} parameters {sorted(unknown)}; "
                          f"known: {sorted(defaults)}")
    merged = dict(defaults)
    merged.update(user_params)
    return merged


def schedule_to_series(schedule, ticks: int) -> np.ndarray:
    """Expand [tick, value] pairs into one value per tick (last pair holds)."""
    series = np.zeros(ticks)
    for start, value in schedule:
        series[int(start):] = float(value)
    return series


def disturbance_series(dist: dict | None, ticks: int) -> np.ndarray:
    d = np.zeros(ticks)
    if dist is None or ticks == 0:
        return d
    start = min(max(dist["start_tick"], 0), ticks)
    if dist["kind"] == "constant":
        d[start:] = dist["magnitude"]
    elif dist["kind"] == "impulse" and start < ticks:
        d[start] = dist["magnitude"]
    return d


# ---------------------------------------------------------------------------
# Scheme runners. Each returns (rows, extra_columns, artifacts) and raises
# DivergenceError (carrying partial rows) when the loop blows up.


def _guard(k: int, u: float, y: float, rows: list) -> None:
    if not (math.isfinite(u) and math.isfinite(y)):
        raise DivergenceError(k, "control loop became non-finite", rows=rows)


def _run_controller(controller, plant: Plant, r_series, d_series, extras_fn=None):
    """Generic pure-control loop over an act/observe controller."""
    rows: list[dict] = []
    for k in range(len(r_series)):
        r = float(r_series[k])
        u = controller.act(r)
        y = plant.step(u, d_series[k])
        controller.observe(y, u)
        _guard(k + 1, u, y, rows)
        row = {"k": k + 1, "r": r, "u": u, "y": y, "e": r - y}
        if extras_fn is not None:
            row.update(extras_fn(controller))
        rows.append(row)
    return rows


def _default_excitation(params: dict, seed: int, offset: int = 0) -> ExcitationSpec:
    return ExcitationSpec(kind="uniform_white", amplitude=params["exc_amplitude"],
                          length=params["exc_length"], seed=seed + 1 + offset)


def _run_mimic(cfg, params, r_series, d_series):
    plant = build_plant(cfg.plant)
    gains = PidGains(params["k1"], params["k2"], params["k3"])
    est = NarxEstimator(**cfg.estimator)
    data = collect_mimic(plant, gains, r_series, est)
    net = mlp_new([1 + est.state_dim, params["hidden"], 1], ["tanh", "linear"], seed=cfg.seed)
    train_supervised(net, data, epochs=params["epochs"], rate=params["rate"],
                     seed=cfg.seed + 2)
    plant.reset()
    ctl = InverseController(net, CLOSED_LOOP, est=NarxEstimator(**cfg.estimator))
    rows = _run_controller(ctl, plant, r_series, d_series)
    return rows, (), {"controller": net}


def _run_gen_inverse(cfg, params, r_series, d_series, mode: str):
    plant = build_plant(cfg.plant)
    if mode == CLOSED_LOOP:
        est = NarxEstimator(**cfg.estimator)
        data_est = NarxEstimator(**cfg.estimator)
        width = 1 + est.state_dim
    else:
        depth = cfg.estimator["n"]
        if depth < 1:
            raise ConfigError("open-loop scheme needs estimator n >= 1")
        # Data pairs use one less output lag so widths match the setpoint wiring.
        data_est = NarxEstimator(depth - 1, 0)
        width = 1 + depth
    data = collect_inverse(plant, _default_excitation(params, cfg.seed), data_est)
    dims = [width, params["hidden"], 1] if params["hidden"] > 0 else [width, 1]
    acts = ["tanh", "linear"] if params["hidden"] > 0 else ["linear"]
    net = mlp_new(dims, acts, seed=cfg.seed)
    train_supervised(net, data, epochs=params["epochs"], rate=params["rate"],
                     seed=cfg.seed + 2)
    plant.reset()
    if mode == CLOSED_LOOP:
        ctl = InverseController(net, CLOSED_LOOP, est=NarxEstimator(**cfg.estimator))
    else:
        ctl = InverseController(net, OPEN_LOOP, setpoint_depth=cfg.estimator["n"])
    rows = _run_controller(ctl, plant, r_series, d_series)
    return rows, (), {"controller": net}


def _run_specialized(cfg, params, r_series, d_series):
    plant = build_plant(cfg.plant)
    est = NarxEstimator(**cfg.estimator)
    net = mlp_new([1 + est.state_dim, params["hidden"], 1], ["tanh", "linear"], seed=cfg.seed)
    rows: list[dict] = []
    for k in range(len(r_series)):
        r = float(r_series[k])
        u, y, e = specialized_step(net, plant, est, r, params["rate"], params["jac_mode"],
                                   d=d_series[k])
        _guard(k + 1, u, y, rows)
        rows.append({"k": k + 1, "r": r, "u": u, "y": y, "e": e})
    return rows, (), {"controller": net}


def _fit_emulator_for(cfg, params) -> ForwardEmulator:
    plant = build_plant(cfg.plant)
    n, q = cfg.estimator["n"], cfg.estimator["q"]
    train_spec = _default_excitation(params, cfg.seed, offset=0)
    val_spec = ExcitationSpec(kind="uniform_white", amplitude=params["exc_amplitude"],
                              length=max(1, params["exc_length"] // 4), seed=cfg.seed + 11)
    return fit_forward_emulator(plant, n, q, train_spec, val_spec,
                                hidden=params["emu_hidden"], epochs=params["emu_epochs"],
                                rate=params["emu_rate"], seed=cfg.seed + 5)


def _run_bpte(cfg, params, r_series, d_series):
    emu = _fit_emulator_for(cfg, params)
    plant = build_plant(cfg.plant)
    est = NarxEstimator(**cfg.estimator)
    net = mlp_new([1 + est.state_dim, params["hidden"], 1], ["tanh", "linear"], seed=cfg.seed)
    rows: list[dict] = []
    for k in range(len(r_series)):
        r = float(r_series[k])
        u, y, e = bpte_train_step(net, emu, plant, est, r, params["rate"], d=d_series[k])
        _guard(k + 1, u, y, rows)
        rows.append({"k": k + 1, "r": r, "u": u, "y": y, "e": e})
    return rows, (), {"controller": net, "emulator": emu.net}


def _run_mpc(cfg, params, r_series, d_series):
    emu = _fit_emulator_for(cfg, params)
    plant = build_plant(cfg.plant)
    est = NarxEstimator(**cfg.estimator)
    mpc_cfg = MpcConfig(l2=params["l2"], l1=params["l1"], rho=params["rho"],
                        candidates_per_step=params["candidates_per_step"],
                        u_min=params["u_min"], u_max=params["u_max"],
                        refine_iters=params["refine_iters"])
    u_prev = 0.0
    rows: list[dict] = []
    for k in range(len(r_series)):
        r = float(r_series[k])
        # No target trajectory from the schedule: duplicate the current setpoint.
        r_traj = np.full(mpc_cfg.l2, r)
        u, _, q_best = mpc_plan(emu, est.state(), r_traj, u_prev, mpc_cfg)
        y = plant.step(u, d_series[k])
        est.observe(y, u)
        _guard(k + 1, u, y, rows)
        rows.append({"k": k + 1, "r": r, "u": u, "y": y, "e": r - y, "q_mpc": q_best})
        u_prev = u
    return rows, ("q_mpc",), {"emulator": emu.net}


def _run_hdp(cfg, params, r_series, d_series):
    plant = build_plant(cfg.plant)
    est = NarxEstimator(**cfg.estimator)
    actor = mlp_new([1 + est.state_dim, params["actor_hidden"], 1], ["tanh", "linear"],
                    seed=cfg.seed)
    critic_net = mlp_new([2 + est.state_dim, params["critic_hidden"], 1], ["tanh", "linear"],
                         seed=cfg.seed + 1)
    critic = CriticNet(critic_net, gamma=params["gamma"],
                       rate_critic=params["rate_critic"], rate_actor=params["rate_actor"])
    rows = hdp_episode(actor, critic, plant, est, r_series, len(r_series),
                       disturbance=d_series)
    return rows, ("j_hat", "delta"), {"actor": actor, "critic": critic_net}


def _run_multi_module(cfg, params, r_series, d_series):
    module_specs = params["modules"]
    if not isinstance(module_specs, list) or not module_specs:
        raise ConfigError("multi_module needs a non-empty 'modules' list")
    n, q = cfg.estimator["n"], cfg.estimator["q"]
    modules = []
    for i, mspec in enumerate(module_specs):
        unknown = set(mspec) - {"plant", "exc_amplitude", "exc_length"}
        if unknown:
            raise ConfigError(f"unknown module keys {sorted(unknown)}")
        mplant = build_plant(mspec.get("plant") or cfg.plant)
        amp = mspec.get("exc_amplitude", params["exc_amplitude"])
        length = mspec.get("exc_length", params["exc_length"])
        seed = cfg.seed + 100 * (i + 1)
        train_spec = ExcitationSpec("uniform_white", amp, length, seed)
        val_spec = ExcitationSpec("uniform_white", amp, max(1, length // 4), seed + 1)
        fwd = fit_forward_emulator(mplant, n, q, train_spec, val_spec,
                                   hidden=params["hidden"], epochs=params["epochs"],
                                   rate=params["rate"], seed=seed + 2)
        mplant.reset()
        inv, _ = fit_inverse_model(mplant, n, q, train_spec, hidden=params["hidden"],
                                   epochs=params["epochs"], rate=params["rate"],
                                   seed=seed + 3)
        modules.append(PairedModule(fwd, inv, id=f"module_{i}"))
    plant = build_plant(cfg.plant)
    ctl = MultiModuleController(modules, NarxEstimator(n, q),
                                sigma=params["sigma"], mode=params["mode"])
    lam_names = tuple(f"lambda_{i}" for i in range(len(modules)))

    def extras(c):
        return {name: c.last_lambda[i] for i, name in enumerate(lam_names)}

    rows = _run_controller(ctl, plant, r_series, d_series, extras_fn=extras,
                           extra_names=lam_names)
    artifacts = {}
    for m in modules:
        artifacts[f"{m.id}_forward"] = m.forward.net
        artifacts[f"{m.id}_inverse"] = m.inverse
    return rows, lam_names, artifacts


def _run_neuro_pid(cfg, params, r_series, d_series):
    plant = build_plant(cfg.plant)
    est = NarxEstimator(**cfg.estimator)
    width = 1 + (est.state_dim if params["include_state"] else 0)
    net = mlp_new([width, params["hidden"], 3], ["tanh", "linear"], seed=cfg.seed)
    asm = NeuroPidAssembly(net, rate=params["rate"], include_state=params["include_state"])
    rows: list[dict] = []
    for k in range(len(r_series)):
        r = float(r_series[k])
        try:
            k_vec, u, y, e = neuro_pid_step(asm, plant, est, r, params["jac_mode"],
                                            d=d_series[k])
        except DivergenceError as exc:
            raise DivergenceError(k + 1, str(exc), rows=rows) from exc
        _guard(k + 1, u, y, rows)
        rows.append({"k": k + 1, "r": r, "u": u, "y": y, "e": e,
                     "k1": k_vec[0], "k2": k_vec[1], "k3": k_vec[2]})
    return rows, ("k1", "k2", "k3"), {"gain_net": net}


def _run_hybrid(cfg, params, r_series, d_series):
    variant = params["variant"]
    if variant not in HYBRID_MODES:
        raise ConfigError(f"hybrid variant must be one of {HYBRID_MODES}")
    plant = build_plant(cfg.plant)
    est = NarxEstimator(**cfg.estimator)
    gains = PidGains(params["k1"], params["k2"], params["k3"])
    net = mlp_new([1 + est.state_dim, params["hidden"], 1], ["tanh", "linear"], seed=cfg.seed)

    # Online pre-training of the network controller; in the "nn second"
    # wiring it learns against the loop the PID already closes, otherwise
    # it learns to control the bare plant.
    pretrain = schedule_to_series(cfg.setpoint_schedule, params["pretrain_ticks"])
    pid = PidController(gains)
    for r in pretrain:
        r = float(r)
        s = est.state()
        x = np.concatenate([[r], s])
        u_vec, cache = net.forward(x)
        u_nn = float(u_vec[0])
        u_pid = pid.act(r) if variant == HYBRID_SUM_NN_SECOND else 0.0
        y = plant.step(u_pid + u_nn)
        pid.observe(y, u_pid)
        est.observe(y, u_pid + u_nn)
        if not (math.isfinite(u_nn) and math.isfinite(y)):
            raise DivergenceError(None, "hybrid pre-training diverged", rows=[])
        grads = net.backward_weights(cache, np.array([-(r - y) * plant.jacobian_du()]))
        net.sgd_step(grads, params["rate"])

    region = None
    if variant == HYBRID_REGION_SWITCH:
        region = Region(np.asarray(params["region_center"], dtype=float),
                        np.asarray(params["region_half_width"], dtype=float))
        if region.center.shape[0] != est.state_dim:
            raise ConfigError("region dimensions must match the estimator state")

    plant.reset()
    est = NarxEstimator(**cfg.estimator)
    pid = PidController(gains)
    rows: list[dict] = []
    for k in range(len(r_series)):
        r = float(r_series[k])
        s = est.state()
        u_nn = float(net.predict(np.concatenate([[r], s]))[0])
        u_pid = pid.act(r)
        u = hybrid_step(variant, u_pid, u_nn, region=region, state=s)
        y = plant.step(u, d_series[k])
        pid.observe(y, u_pid)
        est.observe(y, u)
        _guard(k + 1, u, y, rows)
        rows.append({"k": k + 1, "r": r, "u": u, "y": y, "e": r - y,
                     "u_pid": u_pid, "u_nn": u_nn})
    return rows, ("u_pid", "u_nn"), {"controller": net}


@dataclass(frozen=True)
class SchemeInfo:
    description: str
    defaults: dict
    runner: object


_SUPERVISED_DEFAULTS = {"hidden": 8, "epochs": 30, "rate": 0.1,
                        "exc_amplitude": 1.0, "exc_length": 500}
_EMULATOR_DEFAULTS = {"emu_hidden": 8, "emu_epochs": 60, "emu_rate": 0.1,
                      "exc_amplitude": 1.0, "exc_length": 800}

SCHEMES: dict[str, SchemeInfo] = {
    "mimic": SchemeInfo(
        "clone a working PID from its recorded input/output behaviour",
        {"k1": 0.4, "k2": 0.3, "k3": 0.05, **_SUPERVISED_DEFAULTS},
        _run_mimic),
    "gen_inverse_closed": SchemeInfo(
        "offline-trained inverse model fed the setpoint and the state feedback",
        dict(_SUPERVISED_DEFAULTS),
        lambda cfg, p, r, d: _run_gen_inverse(cfg, p, r, d, CLOSED_LOOP)),
    "gen_inverse_open": SchemeInfo(
        "offline-trained inverse model fed only the setpoint history, no feedback",
        dict(_SUPERVISED_DEFAULTS),
        lambda cfg, p, r, d: _run_gen_inverse(cfg, p, r, d, OPEN_LOOP)),
    "specialized_inverse": SchemeInfo(
        "online inverse training through the plant Jacobian (or just its sign)",
        {"hidden": 8, "rate": 0.05, "jac_mode": "analytic"},
        _run_specialized),
    "bpte": SchemeInfo(
        "online controller training by error backpropagation through a frozen "
        "forward emulator",
        {"hidden": 8, "rate": 0.05, **_EMULATOR_DEFAULTS},
        _run_bpte),
    "predictive_mpc": SchemeInfo(
        "receding-horizon optimizer over a learned forward emulator, no trained "
        "controller",
        {"l1": 1, "l2": 5, "rho": 0.01, "candidates_per_step": 9, "u_min": -2.0,
         "u_max": 2.0, "refine_iters": 4, **_EMULATOR_DEFAULTS},
        _run_mpc),
    "adaptive_critic": SchemeInfo(
        "actor/critic pair trained online by temporal differences of the tracking "
        "cost",
        {"actor_hidden": 8, "critic_hidden": 12, "gamma": 0.9,
         "rate_critic": 0.05, "rate_actor": 0.01},
        _run_hdp),
    "multi_module": SchemeInfo(
        "paired forward/inverse modules blended by prediction-error "
        "responsibilities",
        {"modules": [{"plant": {"kind": "linear1", "a": 0.5, "b": 1.0}},
                     {"plant": {"kind": "nonlinear1"}}],
         "sigma": 0.5, "mode": "weighted", "hidden": 8, "epochs": 30, "rate": 0.1,
         "exc_amplitude": 1.0, "exc_length": 500},
        _run_multi_module),
    "neuro_pid": SchemeInfo(
        "network emits the three PID gains each tick, tuned online through the "
        "control law",
        {"hidden": 8, "rate": 0.02, "include_state": True, "jac_mode": "analytic"},
        _run_neuro_pid),
    "hybrid_parallel": SchemeInfo(
        "PID and network controller in parallel: summed signals or a state-region "
        "switch",
        {"variant": HYBRID_SUM_NN_SECOND, "k1": 0.4, "k2": 0.3, "k3": 0.05,
         "hidden": 8, "rate": 0.05, "pretrain_ticks": 1000,
         "region_center": [0.0, 0.0], "region_half_width": [0.5, 0.5]},
        _run_hybrid),
}


def run_episode(cfg: ExperimentConfig):
    """Run one experiment end to end: pre-training phases, then the episode.

    Divergence is an outcome, not a crash: the log is truncated at the failing
    tick and the metrics carry diverged=True. Returns (log, metrics, artifacts)
    where artifacts maps names to the trained networks.
    """
    params = resolve_params(cfg.scheme, cfg.scheme_params)
    r_series = schedule_to_series(cfg.setpoint_schedule, cfg.ticks)
    extra_names: tuple = ()
    r_raw = None
    if cfg.reference_tau is not None:
        r_raw = r_series
        r_series = reference_series(cfg.reference_tau, r_series)
    d_series = disturbance_series(cfg.disturbance, cfg.ticks)
    runner = SCHEMES[cfg.scheme].runner
    diverged = False
    try:
        rows, extra_names, artifacts = runner(cfg, params, r_series, d_series)
    except DivergenceError as exc:
        rows, artifacts = exc.rows, {}
        extra_names = tuple(c for c in rows[0] if c not in BASE_COLUMNS) if rows else ()
        diverged = True
    if r_raw is not None:
        extra_names = ("r_prime",) + tuple(extra_names)
        for row, raw_value in zip(rows, r_raw):
            # The controller saw the lagged setpoint; expose both.
            row["r_prime"] = row["r"]
            row["r"] = float(raw_value)
    log = EpisodeLog(extra_columns=extra_names)
    for row in rows:
        base = {k: row[k] for k in BASE_COLUMNS}
        extras = {k: row[k] for k in extra_names}
        log.append(**base, **extras)
    return log, compute_metrics(log, diverged=diverged), artifacts


# ---------------------------------------------------------------------------
# Export

def _fmt(value: float) -> str:
    return format(value, ".17g")


def export(log: EpisodeLog, metrics: MetricsReport, path_prefix: str,
           config: ExperimentConfig | None = None, artifacts: dict | None = None):
    """Write <prefix>.csv and <prefix>.meta.json; returns both paths.

    Files contain no timestamps, so identical runs produce identical bytes.
    """
    csv_path = f"{path_prefix}.csv"
    meta_path = f"{path_prefix}.meta.json"
    try:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(log.columns) + "\n")
            for row in log.rows:
                cells = [str(row["k"])] + [_fmt(row[c]) for c in log.columns[1:]]
                fh.write(",".join(cells) + "\n")
        meta = {
            "config": config.to_dict() if config is not None else None,
            "seed": config.seed if config is not None else None,
            "columns": list(log.columns),
            "ticks_logged": len(log),
            "metrics": asdict(metrics),
            "artifact_sha256": {name: net.param_hash()
                                for name, net in (artifacts or {}).items()},
        }
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"failed writing export to prefix {path_prefix!r}: {exc}") from exc
    return csv_path, meta_path


def read_log_csv(path) -> EpisodeLog:
    """Parse an exported CSV back into a log (numeric roundtrip is exact)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[:5]) != BASE_COLUMNS:
            raise ValueError(f"unexpected CSV header {header!r}")
        log = EpisodeLog(extra_columns=tuple(header[5:]))
        for cells in reader:
            values = dict(zip(header, cells))
            log.append(k=int(values["k"]),
                       **{c: float(values[c]) for c in header[1:5]},
                       **{c: float(values[c]) for c in header[5:]})
    return log


def run_and_export(cfg: ExperimentConfig, path_prefix: str):
    log, metrics, artifacts = run_episode(cfg)
    paths = export(log, metrics, path_prefix, config=cfg, artifacts=artifacts)
    return log, metrics, paths
