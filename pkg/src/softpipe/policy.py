"""Fusion policy over actions: softmax of value, ranker score and log-prior.

Also holds the tools used to check the policy against its KL-regularized
objective and the constraint-gap lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FusionWeights:
    alpha: float = 1.0  # Q-value weight
    beta: float = 2.0   # prior strength
    gamma: float = 2.0  # ranker weight

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ValueError("alpha and gamma must be non-negative")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def fusion_logits(q, r, prior, w: FusionWeights) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    if not (q.shape == r.shape == prior.shape):
        raise ValueError("q, r and prior must have equal lengths")
    if np.any(prior <= 0):
        raise ValueError("prior must be strictly positive")
    return w.alpha * q + w.gamma * r + w.beta * np.log(prior)


def softmax_policy(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def constrained_policy(q, r, prior, w: FusionWeights, allowed_mask) -> np.ndarray:
    """Fusion policy with disallowed actions removed from the prior.

    This is the hard-constraint path used by baselines: masked entries get
    probability exactly zero and the prior is renormalized over the rest.
    """
    mask = np.asarray(allowed_mask, dtype=bool)
    if not mask.any():
        raise ValueError("at least one action must be allowed")
    prior = np.asarray(prior, dtype=np.float64)
    p = np.where(mask, prior, 0.0)
    p = p / p.sum()
    out = np.zeros(len(p))
    out[mask] = softmax_policy(fusion_logits(np.asarray(q)[mask], np.asarray(r)[mask], p[mask], w))
    return out


def sample_action(d, rng: np.random.Generator, actions: Sequence[int] | None = None) -> int:
    """Inverse-CDF draw; returns an index into ``d`` or the matching entry of ``actions``."""
    d = np.asarray(d, dtype=np.float64)
    cdf = np.cumsum(d)
    u = rng.random() * cdf[-1]
    i = int(np.searchsorted(cdf, u, side="right"))
    i = min(i, len(d) - 1)
    while d[i] <= 0:  # never land on a zero-probability entry
        i -= 1
    return int(actions[i]) if actions is not None else i


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


def kl_objective(d, q, r, prior, w: FusionWeights) -> float:
    d = np.asarray(d, dtype=np.float64)
    reward = w.alpha * np.asarray(q) + w.gamma * np.asarray(r)
    return float(np.dot(d, reward)) - w.beta * kl_divergence(d, prior)


def kl_optimal_policy(q, r, prior, w: FusionWeights) -> np.ndarray:
    """Exact maximizer of :func:`kl_objective`: ``prior * exp((alpha q + gamma r) / beta)``.

    It coincides with ``softmax_policy(fusion_logits(...))`` only when beta == 1;
    otherwise the fusion policy sharpens the prior to the power beta.
    """
    if w.beta <= 0:
        raise ValueError("beta must be positive")
    reward = w.alpha * np.asarray(q, dtype=np.float64) + w.gamma * np.asarray(r, dtype=np.float64)
    return softmax_policy(reward / w.beta + np.log(np.asarray(prior, dtype=np.float64)))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based, row-wise for 2-D input)."""
    v = np.asarray(v, dtype=np.float64)
    V = np.atleast_2d(v)
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, V.shape[1] + 1)
    rho = np.sum(U * k > css, axis=1) - 1
    theta = css[np.arange(len(V)), rho] / (rho + 1.0)
    out = np.maximum(V - theta[:, None], 0.0)
    return out if v.ndim == 2 else out[0]


def projected_gradient_ascent(q, r, prior, w: FusionWeights, rng: np.random.Generator,
                              restarts: int = 10, iters: int = 3000,
                              floor: float = 1e-12) -> tuple[np.ndarray, float]:
    """Maximize the KL-regularized objective over the simplex by projected gradient.

    Independent of any closed form: all restarts begin at random points of the
    simplex and run side by side, each with its own backtracking step size.
    """
    reward = w.alpha * np.asarray(q, dtype=np.float64) + w.gamma * np.asarray(r, dtype=np.float64)
    logp = np.log(np.asarray(prior, dtype=np.float64))
    n = len(reward)

    def obj(X):
        logx = np.log(np.where(X > 0, X, 1.0))
        return X @ reward - w.beta * np.sum(X * (logx - logp), axis=1)

    X = rng.dirichlet(np.ones(n), size=restarts)
    F = obj(X)
    step = np.ones(restarts)
    active = np.ones(restarts, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        x = X[idx]
        grad = reward - w.beta * (np.log(np.maximum(x, floor)) + 1.0 - logp)
        st = step[idx]
        y = project_simplex(x + st[:, None] * grad)
        fy = obj(y)
        bad = (fy < F[idx]) & (st >= 1e-14)
        while bad.any():
            st[bad] *= 0.5
            y[bad] = project_simplex(x[bad] + st[bad, None] * grad[bad])
            fy[bad] = obj(y[bad])
            bad = (fy < F[idx]) & (st >= 1e-14)
        moved = np.max(np.abs(y - x), axis=1)
        ok = fy >= F[idx]
        X[idx[ok]] = y[ok]
        F[idx[ok]] = fy[ok]
        step[idx] = np.minimum(st * 1.2, 1e3)
        active[idx[(moved < 1e-10) | (st < 1e-14)]] = False
    best = int(np.argmax(F))
    return X[best], float(F[best])


def gap_lower_bound(delta: float, c: float, alpha: float, beta: float) -> float:
    """``c / (1 + exp(-alpha * delta / beta)) * delta``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return float(c / (1.0 + np.exp(-alpha * delta / beta)) * delta)


def prior_constant(prior, optimal: int) -> float:
    """``P(o*) / (|O| * max P)`` for a per-action prior."""
    prior = np.asarray(prior, dtype=np.float64)
    return float(prior[optimal] / (len(prior) * prior.max()))


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))
