"""Terminal reward: validation accuracy of softmax regression on a prepared table."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import SplitSpec, Table, class_labels, split_indices
from .operators import PipelineError, fit_pipeline, operator_steps

logger = logging.getLogger(__name__)

LR_RATE = 0.1
LR_EPOCHS = 200
LR_BATCH = 128
LR_L2 = 1e-4
PREFIX_CACHE_SIZE = 256


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    train_seconds: float
    n_features_final: int
    test_accuracy: float = 0.0
    failed: bool = False
    error: str = ""


@dataclass
class LogisticModel:
    W: np.ndarray  # (d, k)
    b: np.ndarray  # (k,)
    classes: np.ndarray

    def decision(self, X: np.ndarray) -> np.ndarray:
        return X @ self.W + self.b

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.classes[np.argmax(self.decision(X), axis=1)]


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, Y: np.ndarray,
                  l2: float = LR_L2) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` and its gradient.

    ``Y`` is one-hot with shape (n, k).
    """
    n = len(X)
    P = _softmax(X @ W + b)
    logp = np.log(np.clip(P, 1e-300, None))
    loss = -float(np.sum(Y * logp)) / n + 0.5 * l2 * float(np.sum(W * W))
    G = (P - Y) / n
    return loss, X.T @ G + l2 * W, G.sum(axis=0)


def logistic_train(X: np.ndarray, y: np.ndarray, *, lr: float = LR_RATE, epochs: int = LR_EPOCHS,
                   batch_size: int = LR_BATCH, l2: float = LR_L2, seed: int = 0) -> LogisticModel:
    X = np.asarray(X, dtype=np.float64)
    classes, yi = np.unique(np.asarray(y), return_inverse=True)
    if len(classes) < 2:
        raise ValueError("logistic regression needs at least two classes")
    n, d = X.shape
    k = len(classes)
    Y = np.eye(k)[yi]
    W = np.zeros((d, k))
    b = np.zeros(k)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            Xb = X[idx]
            G = (_softmax(Xb @ W + b) - Y[idx]) / len(idx)
            W -= lr * (Xb.T @ G + l2 * W)
            b -= lr * G.sum(axis=0)
    return LogisticModel(W, b, classes)


def design_matrices(train: Table, *others: Table) -> list[np.ndarray]:
    """Numeric design matrices; fill, encoding and scaling come from ``train``.

    Remaining missing numeric cells take the train mean, categorical remnants
    are label-encoded (unseen or missing -> -1), then every column is
    standardized with train statistics.
    """
    tables = (train,) + others
    blocks = [[] for _ in tables]
    for c in train.features:
        if c.is_numeric:
            obs = c.observed().astype(np.float64)
            obs = obs[np.isfinite(obs)]
            fill = float(obs.mean()) if len(obs) else 0.0
            for out, t in zip(blocks, tables):
                v = np.asarray(t.column(c.name).values, dtype=np.float64)
                out.append(np.where(np.isfinite(v), v, fill))
        else:
            index = {v: i for i, v in enumerate(sorted(set(c.observed().tolist())))}
            for out, t in zip(blocks, tables):
                tc = t.column(c.name)
                out.append(np.array([-1.0 if m else float(index.get(v, -1))
                                     for v, m in zip(tc.values, tc.missing)]))
    mats = []
    for t, cols in zip(tables, blocks):
        mats.append(np.column_stack(cols) if cols else np.zeros((t.n_rows, 1)))
    mu = mats[0].mean(axis=0)
    sd = mats[0].std(axis=0)
    sd[~(sd > 0)] = 1.0
    return [(M - mu) / sd for M in mats]


def pipeline_seed(global_seed: int, pipeline: Sequence[int]) -> int:
    h = hashlib.blake2b(json.dumps([int(global_seed), [int(a) for a in pipeline]]).encode(),
                        digest_size=8)
    return int.from_bytes(h.digest(), "little")


class PipelineEvaluator:
    """Evaluates pipelines on one dataset and split, memoizing results.

    Operators are fit on the training rows only; the model is trained on the
    transformed training rows and scored on validation (reward) and test rows.
    """

    def __init__(self, raw: Table, split: SplitSpec = SplitSpec(), seed: int = 0,
                 log_path=None):
        self.raw = raw
        self.split = split
        self.seed = seed
        self.train_idx, self.val_idx, self.test_idx = split_indices(raw, split)
        self.labels = class_labels(raw)
        self._cache: dict[tuple[int, ...], EvalResult] = {}
        self._prefix: OrderedDict[tuple[int, ...], Table] = OrderedDict()
        self.log_path = Path(log_path) if log_path else None
        if self.log_path and not self.log_path.exists():
            with self.log_path.open("w", newline="") as fh:
                csv.writer(fh).writerow(["pipeline", "accuracy", "n_features", "seconds"])

    @property
    def n_evaluations(self) -> int:
        return len(self._cache)

    def prefix_table(self, partial: Sequence[int]) -> Table:
        """Full table after the given steps, each fit on the training rows."""
        key = tuple(operator_steps(partial))
        if not key:
            return self.raw
        if key in self._prefix:
            self._prefix.move_to_end(key)
            return self._prefix[key]
        prev = self.prefix_table(key[:-1])
        _, out = fit_pipeline(key[-1:], prev, self.train_idx, seed=self.seed)
        self._prefix[key] = out
        if len(self._prefix) > PREFIX_CACHE_SIZE:
            self._prefix.popitem(last=False)
        return out

    def train_view(self, partial: Sequence[int]) -> Table:
        return self.prefix_table(partial).take(self.train_idx)

    def evaluate(self, pipeline: Sequence[int]) -> EvalResult:
        key = tuple(operator_steps(pipeline))
        if key in self._cache:
            return self._cache[key]
        start = time.perf_counter()
        try:
            full = self.prefix_table(key)
            res = self._score(full, key, start)
        except (PipelineError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("pipeline %s failed: %s", list(key), exc)
            res = EvalResult(0.0, time.perf_counter() - start, 1, 0.0, True, str(exc))
        self._cache[key] = res
        if self.log_path:
            with self.log_path.open("a", newline="") as fh:
                csv.writer(fh).writerow([json.dumps(list(key)), repr(res.accuracy),
                                         res.n_features_final, f"{res.train_seconds:.6f}"])
        return res

    def _score(self, full: Table, key, start: float) -> EvalResult:
        tr, va, te = full.take(self.train_idx), full.take(self.val_idx), full.take(self.test_idx)
        Xtr, Xva, Xte = design_matrices(tr, va, te)
        model = logistic_train(Xtr, self.labels[self.train_idx], seed=pipeline_seed(self.seed, key))
        acc = float(np.mean(model.predict(Xva) == self.labels[self.val_idx]))
        test_acc = float(np.mean(model.predict(Xte) == self.labels[self.test_idx]))
        return EvalResult(acc, time.perf_counter() - start, Xtr.shape[1], test_acc)


def evaluate_pipeline(pipeline: Sequence[int], raw: Table, split: SplitSpec = SplitSpec(),
                      seed: int = 0) -> EvalResult:
    return PipelineEvaluator(raw, split, seed).evaluate(pipeline)


def fitted_on_train(pipeline: Sequence[int], raw: Table, split: SplitSpec = SplitSpec(),
                    seed: int = 0):
    """Fitted steps exactly as the evaluator produces them (for leakage checks)."""
    tr, _, _ = split_indices(raw, split)
    fitted, _ = fit_pipeline(pipeline, raw, tr, seed=seed)
    return fitted

