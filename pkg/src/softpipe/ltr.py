"""Immediate-quality ranker trained offline on logged experiences.

The ranker is a gradient-boosted ensemble of shallow regression trees fit to a
pairwise logistic loss. Items are (state, action) pairs; items whose states fall
in the same discretized state group are compared against each other.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metafeatures import STATE_DIM, state_key
from .operators import ACTIONS, N_ACTIONS

MODEL_VERSION = 1
MAX_DEPTH = 3
MAX_TREES = 200
LEARNING_RATE = 0.1
L2_REG = 1.0
MIN_CHILD_HESSIAN = 1e-3


class InsufficientPairsError(ValueError):
    pass


@dataclass(frozen=True)
class Experience:
    state: np.ndarray
    action: int
    performance: float
    dataset_tag: str = ""

    def __post_init__(self):
        s = np.asarray(self.state, dtype=np.float64)
        if s.shape != (STATE_DIM,):
            raise ValueError(f"state must have {STATE_DIM} entries")
        if int(self.action) not in ACTIONS:
            raise ValueError(f"invalid action {self.action}")
        if not 0.0 <= float(self.performance) <= 1.0:
            raise ValueError(f"performance must lie in [0, 1], got {self.performance}")
        object.__setattr__(self, "state", s)

    def __eq__(self, other):
        return (isinstance(other, Experience) and np.array_equal(self.state, other.state)
                and self.action == other.action and self.performance == other.performance
                and self.dataset_tag == other.dataset_tag)


class ExperienceStore:
    """Append-only experience log, in memory and optionally mirrored to CSV."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._items: list[Experience] = []
        if self.path and self.path.exists():
            self._items = list(read_experiences(self.path))

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def append(self, e: Experience) -> None:
        if not isinstance(e, Experience):
            raise TypeError("expected an Experience")
        if self.path:
            new = not self.path.exists()
            with self.path.open("a", newline="") as fh:
                w = csv.writer(fh)
                if new:
                    w.writerow([f"s{k}" for k in range(STATE_DIM)] + ["action", "performance", "dataset_tag"])
                w.writerow(_experience_row(e))
        self._items.append(e)


def _experience_row(e: Experience) -> list[str]:
    return [format(float(v), ".17g") for v in e.state] + [str(int(e.action)),
                                                          format(float(e.performance), ".17g"),
                                                          e.dataset_tag]


def read_experiences(path) -> Iterable[Experience]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            yield Experience(np.array([float(x) for x in row[:STATE_DIM]]), int(row[STATE_DIM]),
                             float(row[STATE_DIM + 1]), row[STATE_DIM + 2] if len(row) > STATE_DIM + 2 else "")


def record_experience(store: ExperienceStore, e: Experience) -> None:
    store.append(e)


def encode(s: np.ndarray, a: int) -> np.ndarray:
    x = np.zeros(STATE_DIM + N_ACTIONS)
    x[:STATE_DIM] = s
    x[STATE_DIM + ACTIONS.index(int(a))] = 1.0
    return x


# ------------------------------------------------------------------ trees


@dataclass
class Tree:
    feature: list[int] = field(default_factory=list)    # -1 for leaves
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def _add(self, feature=-1, threshold=0.0, value=0.0) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left, right = np.asarray(self.left), np.asarray(self.right)
        node = np.zeros(len(X), dtype=int)
        active = feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            n = node[idx]
            go_left = X[idx, feature[n]] <= threshold[n]
            node[idx] = np.where(go_left, left[n], right[n])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}


def _leaf_value(g: float, h: float) -> float:
    return -g / (h + L2_REG)


def _gain(g: float, h: float) -> float:
    return g * g / (h + L2_REG)


def fit_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, max_depth: int = MAX_DEPTH) -> Tree:
    """Second-order regression tree, exact greedy splits."""
    tree = Tree()

    def build(rows: np.ndarray, depth: int) -> int:
        G, H = float(g[rows].sum()), float(h[rows].sum())
        node = tree._add(value=_leaf_value(G, H))
        if depth >= max_depth or len(rows) < 2:
            return node
        best = (1e-12, None, None)
        parent = _gain(G, H)
        for f in range(X.shape[1]):
            x = X[rows, f]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            cg = np.cumsum(g[rows][order])
            ch = np.cumsum(h[rows][order])
            valid = np.flatnonzero(xs[:-1] < xs[1:])
            if len(valid) == 0:
                continue
            gl, hl = cg[valid], ch[valid]
            gr, hr = G - gl, H - hl
            ok = (hl >= MIN_CHILD_HESSIAN) & (hr >= MIN_CHILD_HESSIAN)
            if not ok.any():
                continue
            gains = np.where(ok, gl ** 2 / (hl + L2_REG) + gr ** 2 / (hr + L2_REG) - parent, -np.inf)
            k = int(np.argmax(gains))
            if gains[k] > best[0]:
                best = (float(gains[k]), f, 0.5 * (xs[valid[k]] + xs[valid[k] + 1]))
        _, f, thr = best
        if f is None:
            return node
        tree.feature[node] = f
        tree.threshold[node] = float(thr)
        mask = X[rows, f] <= thr
        tree.left[node] = build(rows[mask], depth + 1)
        tree.right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(len(X)), 0)
    return tree


# ------------------------------------------------------------------ ranker


@dataclass
class LTRModel:
    trees: list[Tree] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    loss_history: list[float] = field(default_factory=list)

    @property
    def trained(self) -> bool:
        return bool(self.trees)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        for t, w in zip(self.trees, self.weights):
            out += w * t.predict(X)
        return out

    def to_dict(self) -> dict:
        return {"version": MODEL_VERSION, "trees": [t.to_dict() for t in self.trees],
                "weights": self.weights, "loss_history": self.loss_history}

    @classmethod
    def from_dict(cls, d: dict) -> "LTRModel":
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported ranker version {d.get('version')}")
        return cls([Tree(**t) for t in d["trees"]], list(d["weights"]), list(d.get("loss_history", [])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LTRModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _ranking_items(experiences: Sequence[Experience]):
    """Collapse experiences to one item per (state group, action).

    The item's state is the mean state of the group and its label the mean
    performance; the input is sorted first so that input order is irrelevant.
    """
    rows = sorted(experiences, key=lambda e: (state_key(e.state), e.action, e.performance,
                                              tuple(e.state.tolist()), e.dataset_tag))
    groups: dict[int, dict[int, list[Experience]]] = {}
    for e in rows:
        groups.setdefault(state_key(e.state), {}).setdefault(int(e.action), []).append(e)
    X, y, gid = [], [], []
    for k, (key, by_action) in enumerate(sorted(groups.items())):
        if len(by_action) < 2:
            continue
        group_state = np.mean([e.state for es in by_action.values() for e in es], axis=0)
        for a, es in sorted(by_action.items()):
            X.append(encode(group_state, a))
            y.append(float(np.mean([e.performance for e in es])))
            gid.append(k)
    return np.array(X).reshape(-1, STATE_DIM + N_ACTIONS), np.array(y), np.array(gid)


def _pairs(y: np.ndarray, gid: np.ndarray) -> np.ndarray:
    out = []
    for k in np.unique(gid):
        idx = np.flatnonzero(gid == k)
        yi = y[idx]
        better, worse = np.nonzero(yi[:, None] > yi[None, :])
        out.append(np.column_stack([idx[better], idx[worse]]))
    return np.vstack(out) if out else np.zeros((0, 2), dtype=int)


def pairwise_loss(scores: np.ndarray, pairs: np.ndarray) -> float:
    d = scores[pairs[:, 0]] - scores[pairs[:, 1]]
    return float(np.mean(np.logaddexp(0.0, -d)))


def _pairwise_grad(scores: np.ndarray, pairs: np.ndarray):
    d = scores[pairs[:, 0]] - scores[pairs[:, 1]]
    rho = 1.0 / (1.0 + np.exp(d))  # sigmoid(-d)
    n = len(pairs)
    g = np.zeros(len(scores))
    h = np.zeros(len(scores))
    np.add.at(g, pairs[:, 0], -rho / n)
    np.add.at(g, pairs[:, 1], rho / n)
    w = rho * (1 - rho) / n
    np.add.at(h, pairs[:, 0], w)
    np.add.at(h, pairs[:, 1], w)
    return g, h


def train_ranker(experiences: Sequence[Experience], n_trees: int = MAX_TREES,
                 learning_rate: float = LEARNING_RATE, max_depth: int = MAX_DEPTH) -> LTRModel:
    X, y, gid = _ranking_items(list(experiences))
    pairs = _pairs(y, gid) if len(y) else np.zeros((0, 2), dtype=int)
    if len(pairs) == 0:
        raise InsufficientPairsError("need two actions with different performance in one state group")
    model = LTRModel()
    scores = np.zeros(len(y))
    loss = pairwise_loss(scores, pairs)
    model.loss_history.append(loss)
    for _ in range(n_trees):
        g, h = _pairwise_grad(scores, pairs)
        tree = fit_tree(X, g, h, max_depth)
        if tree.feature[0] < 0:
            break
        step = tree.predict(X)
        w = learning_rate
        # backtrack so the training loss never goes up
        for _ in range(20):
            new_loss = pairwise_loss(scores + w * step, pairs)
            if new_loss <= loss:
                break
            w *= 0.5
        else:
            break
        scores = scores + w * step
        model.trees.append(tree)
        model.weights.append(w)
        if loss - new_loss < 1e-12:
            loss = new_loss
            model.loss_history.append(loss)
            break
        loss = new_loss
        model.loss_history.append(loss)
    return model


def raw_action_scores(m: LTRModel, s: np.ndarray, actions: Sequence[int] = ACTIONS) -> np.ndarray:
    X = np.stack([encode(s, a) for a in actions])
    return m.raw_scores(X)


def ltr_scores(m: LTRModel | None, s: np.ndarray, actions: Sequence[int] = ACTIONS) -> np.ndarray:
    """Per-state z-scored ranker scores over ``actions`` (zeros when untrained)."""
    if m is None or not m.trained:
        return np.zeros(len(actions))
    raw = raw_action_scores(m, s, actions)
    sd = raw.std()
    if not sd > 1e-12:
        return np.zeros(len(actions))
    return (raw - raw.mean()) / sd


def ltr_score(m: LTRModel | None, s: np.ndarray, a: int) -> float:
    return float(ltr_scores(m, s)[ACTIONS.index(int(a))])
