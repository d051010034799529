"""Action-value estimators updated by Monte-Carlo regression on terminal rewards.

Two backends share one interface: a tabular map keyed by discretized states and
a ReLU multi-layer perceptron with per-action outputs trained from a replay
buffer with Adam.
"""

from __future__ import annotations

import json
from collections import deque
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metafeatures import STATE_DIM, state_key
from .operators import ACTIONS, N_ACTIONS

CHECKPOINT_VERSION = 1
HIDDEN = (256, 128, 64)
BUFFER_CAPACITY = 5000
BATCH_SIZE = 200
NETWORK_LR = 1e-4


class TabularQ:
    backend = "tabular"

    def __init__(self, default: float = 0.0):
        self.default = default
        self.table: dict[tuple[int, int], float] = {}

    def predict(self, s: np.ndarray, a: int) -> float:
        return self.table.get((state_key(s), int(a)), self.default)

    def predict_all(self, s: np.ndarray, actions: Sequence[int] = ACTIONS) -> np.ndarray:
        k = state_key(s)
        return np.array([self.table.get((k, int(a)), self.default) for a in actions])

    def mc_update(self, traj: Iterable[tuple[np.ndarray, int]], R: float, eta: float) -> None:
        for s, a in traj:
            key = (state_key(s), int(a))
            q = self.table.get(key, self.default)
            self.table[key] = q + eta * (R - q)

    def to_dict(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "backend": self.backend, "default": self.default,
                "entries": [[str(k), a, v] for (k, a), v in sorted(self.table.items())]}

    @classmethod
    def from_dict(cls, d: dict) -> "TabularQ":
        q = cls(d.get("default", 0.0))
        q.table = {(int(k), int(a)): float(v) for k, a, v in d["entries"]}
        return q


class ReplayBuffer:
    """FIFO ring buffer of (state, action, target) triples."""

    def __init__(self, capacity: int = BUFFER_CAPACITY):
        self.capacity = capacity
        self._items: deque = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def push(self, s: np.ndarray, a: int, target: float) -> None:
        self._items.append((np.asarray(s, dtype=np.float64), int(a), float(target)))

    def sample(self, n: int, rng: np.random.Generator):
        n = min(n, len(self._items))
        idx = rng.choice(len(self._items), n, replace=False)
        batch = [self._items[i] for i in idx]
        S = np.stack([b[0] for b in batch])
        A = np.array([b[1] for b in batch])
        R = np.array([b[2] for b in batch])
        return S, A, R

    def items(self):
        return list(self._items)


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> list[np.ndarray]:
    params = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        params.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        params.append(np.zeros(fan_out))
    return params


def forward(params: Sequence[np.ndarray], S: np.ndarray):
    """Per-action outputs and cached activations for backprop."""
    acts = [S]
    h = S
    n_layers = len(params) // 2
    for layer in range(n_layers):
        W, b = params[2 * layer], params[2 * layer + 1]
        z = h @ W + b
        h = np.maximum(z, 0.0) if layer < n_layers - 1 else z
        acts.append(h)
    return h, acts


def loss_and_grads(params: Sequence[np.ndarray], S: np.ndarray, A: np.ndarray,
                   R: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean of ``0.5 * (Q(s, a) - R)^2`` over the batch, and its gradients."""
    out, acts = forward(params, S)
    n = len(S)
    rows = np.arange(n)
    resid = out[rows, A] - R
    loss = 0.5 * float(np.mean(resid ** 2))
    delta = np.zeros_like(out)
    delta[rows, A] = resid / n
    grads = [None] * len(params)
    n_layers = len(params) // 2
    for layer in reversed(range(n_layers)):
        h_in = acts[layer]
        grads[2 * layer] = h_in.T @ delta
        grads[2 * layer + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params[2 * layer].T) * (acts[layer] > 0)
    return loss, grads


class NetworkQ:
    backend = "network"

    def __init__(self, seed: int = 0, lr: float = NETWORK_LR, hidden: Sequence[int] = HIDDEN,
                 capacity: int = BUFFER_CAPACITY, batch_size: int = BATCH_SIZE):
        self.rng = np.random.default_rng(seed)
        self.sizes = (STATE_DIM, *hidden, N_ACTIONS)
        self.params = init_params(self.sizes, self.rng)
        self.lr = lr
        self.batch_size = batch_size
        self.buffer = ReplayBuffer(capacity)
        self._m = [np.zeros_like(p) for p in self.params]
        self._v = [np.zeros_like(p) for p in self.params]
        self._t = 0

    def predict_all(self, s: np.ndarray, actions: Sequence[int] = ACTIONS) -> np.ndarray:
        out, _ = forward(self.params, np.asarray(s, dtype=np.float64)[None, :])
        return out[0, list(actions)]

    def predict(self, s: np.ndarray, a: int) -> float:
        return float(self.predict_all(s, [a])[0])

    def adam_step(self, grads: Sequence[np.ndarray], b1=0.9, b2=0.999, eps=1e-8) -> None:
        self._t += 1
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mh = m / (1 - b1 ** self._t)
            vh = v / (1 - b2 ** self._t)
            p -= self.lr * mh / (np.sqrt(vh) + eps)

    def mc_update(self, traj: Iterable[tuple[np.ndarray, int]], R: float, eta: float | None = None) -> None:
        """Push each pair with target ``R``, then one replay step per pair.

        ``eta`` overrides the Adam step size when given.
        """
        if eta is not None:
            self.lr = eta
        pairs = list(traj)
        for s, a in pairs:
            self.buffer.push(s, a, R)
        for _ in pairs:
            S, A, Rb = self.buffer.sample(self.batch_size, self.rng)
            _, grads = loss_and_grads(self.params, S, A, Rb)
            self.adam_step(grads)

    def to_dict(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "backend": self.backend, "sizes": list(self.sizes),
                "lr": self.lr, "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkQ":
        q = cls(lr=d["lr"], hidden=d["sizes"][1:-1])
        q.params = [np.asarray(p, dtype=np.float64) for p in d["params"]]
        return q


def make_q(backend: str = "tabular", **kwargs):
    if backend == "tabular":
        return TabularQ(**kwargs)
    if backend == "network":
        return NetworkQ(**kwargs)
    raise ValueError(f"unknown Q backend {backend!r}")


def q_predict(q, s: np.ndarray, a: int) -> float:
    return q.predict(s, a)


def mc_update(q, traj: Sequence[tuple[np.ndarray, int]], R: float, eta: float):
    if not traj:
        return q
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    q.mc_update(traj, R, eta)
    return q


def net_gradient_check(q: NetworkQ, batch: int = 8, seed: int = 0, n_checks: int = 40,
                       eps: float = 1e-6) -> float:
    """Max relative error between backprop and central differences.

    Checks ``n_checks`` random coordinates of every parameter array on a random
    batch of states, actions and targets.
    """
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((batch, q.sizes[0]))
    A = rng.integers(0, q.sizes[-1], batch)
    R = rng.random(batch)
    params = [p.copy() for p in q.params]
    _, grads = loss_and_grads(params, S, A, R)
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        picks = rng.choice(flat.size, min(n_checks, flat.size), replace=False)
        for i in picks:
            old = flat[i]
            flat[i] = old + eps
            lp, _ = loss_and_grads(params, S, A, R)
            flat[i] = old - eps
            lm, _ = loss_and_grads(params, S, A, R)
            flat[i] = old
            num = (lp - lm) / (2 * eps)
            ana = gflat[i]
            scale = max(abs(num), abs(ana))
            err = abs(num - ana) / scale if scale > 1e-7 else abs(num - ana)
            worst = max(worst, err)
    return worst


def save_checkpoint(q, path) -> None:
    Path(path).write_text(json.dumps(q.to_dict()))


def load_checkpoint(path):
    d = json.loads(Path(path).read_text())
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    return TabularQ.from_dict(d) if d["backend"] == "tabular" else NetworkQ.from_dict(d)
