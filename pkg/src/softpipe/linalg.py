"""Small dense linear-algebra helpers used by the decomposition operators."""

from __future__ import annotations

import numpy as np


def fix_signs(components: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude entry is positive."""
    if components.size == 0:
        return components
    idx = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(len(components)), idx])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def power_truncated_svd(X: np.ndarray, k: int, n_iter: int = 200, tol: float = 1e-10,
                        seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` right singular vectors of ``X`` by block power iteration.

    Returns ``(singular_values, components)`` with components of shape (k, d).
    """
    n, d = X.shape
    k = min(k, n, d)
    rng = np.random.default_rng(seed)
    V = np.linalg.qr(rng.standard_normal((d, k)))[0]
    prev = None
    for _ in range(n_iter):
        W = X.T @ (X @ V)
        V, _ = np.linalg.qr(W)
        # Rayleigh-Ritz rotation makes convergence checks meaningful
        B = X @ V
        _, s, vt = np.linalg.svd(B, full_matrices=False)
        V = V @ vt.T
        if prev is not None and np.all(np.abs(s - prev) <= tol * max(s[0], 1.0)):
            break
        prev = s
    s = np.linalg.norm(X @ V, axis=0)
    order = np.argsort(-s, kind="stable")
    return s[order], fix_signs(V[:, order].T)


def running_covariance(X: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population covariance accumulated over row minibatches."""
    n, d = X.shape
    count = 0
    mean = np.zeros(d)
    scatter = np.zeros((d, d))
    for start in range(0, n, batch_size):
        B = X[start:start + batch_size]
        m = len(B)
        b_mean = B.mean(axis=0)
        Bc = B - b_mean
        b_scatter = Bc.T @ Bc
        delta = b_mean - mean
        total = count + m
        scatter += b_scatter + np.outer(delta, delta) * count * m / total
        mean += delta * m / total
        count = total
    return mean, scatter / max(count, 1)
