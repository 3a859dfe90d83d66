"""Central finite-difference verification of the network backward passes.

The oracle here touches raw parameters and inputs directly and only ever
calls forward(), so it stays independent of the reverse-mode code it checks.
Losses are formed as dot(seed, output), which makes the analytic gradient of
the loss exactly the backward pass seeded with ``seed``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ActivationKind, Mlp, mlp_new

FD_FLOOR = 1e-8  # entries whose finite difference is below this are skipped


def _loss(net: Mlp, x: np.ndarray, seed_vec: np.ndarray) -> float:
    return float(np.dot(seed_vec, net.predict(x)))


def fd_weight_gradients(net: Mlp, x, seed_vec, h: float = 1e-5):
    """Central differences of dot(seed, net(x)) over every weight and bias."""
    x = np.asarray(x, dtype=float)
    seed_vec = np.asarray(seed_vec, dtype=float)
    dws, dbs = [], []
    for w in net.weights:
        dw = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + h
            hi = _loss(net, x, seed_vec)
            w[idx] = orig - h
            lo = _loss(net, x, seed_vec)
            w[idx] = orig
            dw[idx] = (hi - lo) / (2.0 * h)
        dws.append(dw)
    for b in net.biases:
        db = np.zeros_like(b)
        for idx in np.ndindex(b.shape):
            orig = b[idx]
            b[idx] = orig + h
            hi = _loss(net, x, seed_vec)
            b[idx] = orig - h
            lo = _loss(net, x, seed_vec)
            b[idx] = orig
            db[idx] = (hi - lo) / (2.0 * h)
        dbs.append(db)
    return dws, dbs


def fd_input_gradient(net: Mlp, x, seed_vec, h: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    seed_vec = np.asarray(seed_vec, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.shape[0]):
        orig = x[i]
        x[i] = orig + h
        hi = _loss(net, x, seed_vec)
        x[i] = orig - h
        lo = _loss(net, x, seed_vec)
        x[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def max_relative_error(analytic, numeric, floor: float = FD_FLOOR) -> float:
    """Worst relative error over entries whose finite difference exceeds ``floor``."""
    a = np.concatenate([np.asarray(g).ravel() for g in analytic])
    n = np.concatenate([np.asarray(g).ravel() for g in numeric])
    mask = np.abs(n) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(a[mask] - n[mask]) / np.abs(n[mask])))


@dataclass
class GradCheckCase:
    description: str
    weight_error: float
    input_error: float
    passed: bool


def run_gradcheck(cases: int = 24, seed: int = 0, h: float = 1e-5,
                  tol: float = 1e-6) -> list[GradCheckCase]:
    """Compare both backward passes against finite differences on random shapes."""
    rng = np.random.default_rng(seed)
    results = []
    for c in range(cases):
        n_hidden = int(rng.integers(0, 3))
        dims = [int(rng.integers(1, 6))]
        dims += [int(rng.integers(1, 7)) for _ in range(n_hidden)]
        dims += [int(rng.integers(1, 4))]
        acts = [ActivationKind.TANH if rng.random() < 0.6 else ActivationKind.LINEAR
                for _ in range(len(dims) - 1)]
        net = mlp_new(dims, acts, seed=int(rng.integers(0, 2**31)))
        x = rng.standard_normal(dims[0])
        seed_vec = rng.standard_normal(dims[-1])

        _, cache = net.forward(x)
        grads = net.backward_weights(cache, seed_vec)
        din = net.backward_inputs(cache, seed_vec)

        fd_w, fd_b = fd_weight_gradients(net, x, seed_vec, h=h)
        fd_x = fd_input_gradient(net, x, seed_vec, h=h)

        werr = max_relative_error(grads.weights + grads.biases, fd_w + fd_b)
        xerr = max_relative_error([din], [fd_x])
        desc = "x".join(str(d) for d in dims) + " [" + ",".join(a.value for a in acts) + "]"
        results.append(GradCheckCase(desc, werr, xerr, werr < tol and xerr < tol))
    return results


def gradcheck_passed(results: list[GradCheckCase]) -> bool:
    return all(r.passed for r in results)
