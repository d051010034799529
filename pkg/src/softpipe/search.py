"""Episode loop for pipeline search and the baseline selection rules.

Every mode builds pipelines one operator at a time, evaluates the finished
pipeline once and regresses the Q-values of all visited (state, action) pairs
toward the terminal reward. Modes differ only in how the next action is picked:

``softpipe``         sample from the fusion policy over every action
``hard_constraint``  same policy, but operator types already used are masked out
``eps_greedy_ql``    greedy in Q with probability 1 - epsilon, else uniform
``hrl_option``       commit to an operator type (the option), then pick inside it
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Table, profile
from .evaluator import PipelineEvaluator
from .ltr import Experience, ExperienceStore, LTRModel, ltr_scores
from .metafeatures import extract_state
from .operators import ACTIONS, END, TYPES, OperatorType, operator_steps, type_of
from .policy import FusionWeights, constrained_policy, fusion_logits, sample_action, softmax_policy
from .prior import Exemplar, Planner, marginalize_prior
from .qvalue import TabularQ, mc_update

logger = logging.getLogger(__name__)

MODES = ("softpipe", "eps_greedy_ql", "hard_constraint", "hrl_option")


@dataclass(frozen=True)
class SearchConfig:
    T: int = 8
    episodes: int = 100
    weights: FusionWeights = FusionWeights()
    mode: str = "softpipe"
    epsilon: float = 0.1
    seed: int = 0
    eta: float = 0.1
    actions: tuple[int, ...] = ACTIONS

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.episodes < 1:
            raise ValueError("episodes must be at least 1")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        acts = tuple(int(a) for a in self.actions)
        if END not in acts:
            acts = (END,) + acts
        object.__setattr__(self, "actions", acts)


@dataclass
class EpisodeRecord:
    pipeline: list[int]
    reward: float
    trajectory: list[tuple[np.ndarray, int]]
    episode_index: int
    test_reward: float = 0.0
    failed: bool = False

    @property
    def length(self) -> int:
        return len(operator_steps(self.pipeline))


@dataclass
class SearchResult:
    best_pipeline: list[int]
    best_reward: float
    records: list[EpisodeRecord]

    @property
    def best_so_far(self) -> list[float]:
        return list(np.maximum.accumulate([r.reward for r in self.records]))

    @property
    def best_test_reward(self) -> float:
        best = max(range(len(self.records)), key=lambda i: (self.records[i].reward, -i))
        return self.records[best].test_reward


@dataclass
class Components:
    """Everything an episode needs besides the configuration."""

    evaluator: PipelineEvaluator
    planner: Planner = field(default_factory=Planner)
    q: object = field(default_factory=TabularQ)
    ltr: LTRModel | None = None
    store: ExperienceStore | None = None
    exemplars: Sequence[Exemplar] = ()
    tag: str = ""
    _states: dict = field(default_factory=dict, repr=False)
    _ranks: dict = field(default_factory=dict, repr=False)

    def state(self, partial: Sequence[int], T: int) -> np.ndarray:
        key = (tuple(partial), T)
        if key not in self._states:
            self._states[key] = extract_state(self.evaluator.train_view(partial), partial, T)
        return self._states[key]

    def ranks(self, s: np.ndarray, actions: Sequence[int]) -> np.ndarray:
        key = (s.tobytes(), tuple(actions))
        if key not in self._ranks:
            self._ranks[key] = ltr_scores(self.ltr, s, actions)
        return self._ranks[key]


def allowed_actions(mode: str, partial: Sequence[int], T: int = 8,
                    actions: Sequence[int] = ACTIONS,
                    active_option: OperatorType | None = None) -> list[int]:
    steps = operator_steps(partial)
    if len(steps) >= T:
        return [END]
    if mode == "hard_constraint":
        used = {type_of(a) for a in steps}
        return [a for a in actions if a == END or type_of(a) not in used]
    if mode == "hrl_option" and active_option is not None:
        inside = [a for a in actions if type_of(a) == active_option]
        return inside or [END]
    return list(actions)


def _greedy(values: np.ndarray, rng: np.random.Generator) -> int:
    best = np.flatnonzero(values >= values.max() - 1e-12)
    return int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0])


def _eps_greedy(q_values: np.ndarray, candidates: Sequence[int], epsilon: float,
                rng: np.random.Generator) -> int:
    if rng.random() < epsilon:
        return int(candidates[rng.integers(len(candidates))])
    return int(candidates[_greedy(q_values, rng)])


def fusion_distribution(cfg: SearchConfig, comp: Components, s: np.ndarray,
                        partial: Sequence[int], allowed: Sequence[int]) -> np.ndarray:
    """Policy over ``cfg.actions``; masked to ``allowed`` when it is smaller."""
    acts = cfg.actions
    profiles = () if comp.planner.cfg.mode == "heuristic" else profile(comp.evaluator.train_view(partial))
    types = comp.planner.type_distribution(s, profiles, partial, comp.exemplars)
    prior = marginalize_prior(types, acts)
    q = np.asarray(comp.q.predict_all(s, acts), dtype=np.float64)
    r = comp.ranks(s, acts)
    if len(allowed) == len(acts):
        return softmax_policy(fusion_logits(q, r, prior, cfg.weights))
    mask = np.isin(acts, allowed)
    return constrained_policy(q, r, prior, cfg.weights, mask)


def select_action(cfg: SearchConfig, comp: Components, partial: Sequence[int],
                  rng: np.random.Generator) -> tuple[np.ndarray, int]:
    s = comp.state(partial, cfg.T)
    acts = cfg.actions
    if cfg.mode == "eps_greedy_ql":
        allowed = allowed_actions(cfg.mode, partial, cfg.T, acts)
        q = np.asarray(comp.q.predict_all(s, allowed), dtype=np.float64)
        return s, _eps_greedy(q, allowed, cfg.epsilon, rng)
    if cfg.mode == "hrl_option":
        allowed = allowed_actions(cfg.mode, partial, cfg.T, acts)
        q = np.asarray(comp.q.predict_all(s, allowed), dtype=np.float64)
        options = [t for t in TYPES if any(type_of(a) == t for a in allowed)]
        option_values = np.array([max(v for a, v in zip(allowed, q) if type_of(a) == t)
                                  for t in options])
        option = options[_eps_greedy(option_values, list(range(len(options))), cfg.epsilon, rng)]
        inside = allowed_actions(cfg.mode, partial, cfg.T, acts, active_option=option)
        q_in = np.asarray(comp.q.predict_all(s, inside), dtype=np.float64)
        return s, _eps_greedy(q_in, inside, cfg.epsilon, rng)
    allowed = allowed_actions(cfg.mode, partial, cfg.T, acts)
    d = fusion_distribution(cfg, comp, s, partial, allowed)
    return s, sample_action(d, rng, acts)


def run_episode(cfg: SearchConfig, comp: Components, rng: np.random.Generator,
                episode_index: int = 0) -> EpisodeRecord:
    partial: list[int] = []
    traj: list[tuple[np.ndarray, int]] = []
    for _ in range(cfg.T):
        s, a = select_action(cfg, comp, partial, rng)
        traj.append((s, a))
        partial.append(a)
        if a == END:
            break
    res = comp.evaluator.evaluate(partial)
    return EpisodeRecord(partial, res.accuracy, traj, episode_index, res.test_accuracy, res.failed)


def run_search(cfg: SearchConfig, comp: Components) -> SearchResult:
    rng = np.random.default_rng(cfg.seed)
    records: list[EpisodeRecord] = []
    best_pipeline: list[int] = []
    best = -np.inf
    for ep in range(cfg.episodes):
        rec = run_episode(cfg, comp, rng, ep)
        records.append(rec)
        if rec.reward > best:
            best, best_pipeline = rec.reward, list(rec.pipeline)
        mc_update(comp.q, rec.trajectory, rec.reward, cfg.eta)
        if comp.store is not None:
            for s, a in rec.trajectory:
                comp.store.append(Experience(s, a, rec.reward, comp.tag))
    return SearchResult(best_pipeline, float(best), records)


def search(raw: Table, cfg: SearchConfig = SearchConfig(), **components) -> SearchResult:
    """Convenience wrapper: build an evaluator for ``raw`` and run one search."""
    evaluator = components.pop("evaluator", None) or PipelineEvaluator(raw)
    return run_search(cfg, Components(evaluator=evaluator, **components))


def with_mode(cfg: SearchConfig, mode: str, **changes) -> SearchConfig:
    return replace(cfg, mode=mode, **changes)
