from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softpipe.evaluator import PipelineEvaluator
from softpipe.ltr import ExperienceStore
from softpipe.operators import ACTIONS, END, OperatorType, TYPES, type_of
from softpipe.policy import FusionWeights
from softpipe.prior import Planner, PlannerConfig, TypeDistribution
from softpipe.qvalue import TabularQ
from softpipe.search import (MODES, Components, SearchConfig, allowed_actions, fusion_distribution,
                             run_search, select_action)


@pytest.fixture(scope="module")
def evaluator(wine):
    return PipelineEvaluator(wine)


class TerminalPlanner:
    """Planner stand-in that puts all unfloored type mass on Terminal."""

    cfg = PlannerConfig()

    def type_distribution(self, s, profiles=(), partial=(), exemplars=()):
        w = np.zeros(len(TYPES))
        w[TYPES.index(OperatorType.TERMINAL)] = 1.0
        return TypeDistribution.from_weights(w)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(MODES), st.lists(st.sampled_from(ACTIONS[1:]), max_size=6), st.integers(1, 8))
def test_allowed_is_subset(mode, partial, T):
    allowed = allowed_actions(mode, partial, T)
    assert allowed and set(allowed) <= set(ACTIONS)
    if len(partial) >= T:
        assert allowed == [END]
    if mode == "hard_constraint" and len(partial) < T:
        used = {type_of(a) for a in partial}
        assert all(a == END or type_of(a) not in used for a in allowed)


def test_hard_constraint_masks_used_type():
    allowed = allowed_actions("hard_constraint", [10], T=8)
    assert not set(range(6, 15)) & set(allowed)
    assert END in allowed and 1 in allowed and 24 in allowed
    assert 9 in allowed_actions("softpipe", [10], T=8)
    assert allowed_actions("softpipe", [1, 2, 3], T=3) == [END]


def test_hard_constraint_distribution_zeroes_masked(evaluator):
    cfg = SearchConfig(mode="hard_constraint", T=4)
    comp = Components(evaluator=evaluator)
    s = comp.state([10], cfg.T)
    d = fusion_distribution(cfg, comp, s, [10], allowed_actions(cfg.mode, [10], cfg.T))
    assert np.all(d[6:15] == 0) and d.sum() == pytest.approx(1.0)


def test_terminal_prior_gives_empty_pipeline(evaluator):
    cfg = SearchConfig(T=3, episodes=5, weights=FusionWeights(0.0, 20.0, 0.0))
    comp = Components(evaluator=evaluator, planner=TerminalPlanner())
    res = run_search(cfg, comp)
    assert all(r.pipeline == [END] for r in res.records)
    assert res.best_reward == pytest.approx(evaluator.evaluate([]).accuracy)


def test_single_step_horizon(evaluator):
    res = run_search(SearchConfig(T=1, episodes=6, seed=1), Components(evaluator=evaluator))
    assert all(r.length <= 1 and len(r.pipeline) == 1 for r in res.records)


@pytest.mark.parametrize("mode", MODES)
def test_episode_structure(evaluator, mode):
    cfg = SearchConfig(mode=mode, T=3, episodes=8, seed=2)
    store = ExperienceStore()
    res = run_search(cfg, Components(evaluator=evaluator, store=store, tag="wine"))
    assert len(res.records) == 8
    for rec in res.records:
        assert 1 <= len(rec.trajectory) <= cfg.T
        assert [a for _, a in rec.trajectory] == rec.pipeline
        assert END not in rec.pipeline[:-1]
        assert 0.0 <= rec.reward <= 1.0
    best = res.best_so_far
    assert all(b >= a for a, b in zip(best, best[1:]))
    assert best[-1] == res.best_reward
    assert len(store) == sum(len(r.trajectory) for r in res.records)
    assert all(e.dataset_tag == "wine" for e in store)


@pytest.mark.parametrize("mode", MODES)
def test_deterministic(evaluator, mode):
    cfg = SearchConfig(mode=mode, T=3, episodes=6, seed=5)
    a = run_search(cfg, Components(evaluator=evaluator))
    b = run_search(cfg, Components(evaluator=evaluator))
    assert [r.pipeline for r in a.records] == [r.pipeline for r in b.records]
    assert [r.reward for r in a.records] == [r.reward for r in b.records]


def test_single_episode(evaluator):
    res = run_search(SearchConfig(T=2, episodes=1), Components(evaluator=evaluator))
    assert len(res.records) == 1 and res.best_pipeline == res.records[0].pipeline


def test_replay_planner_reproducible(evaluator, tmp_path):
    cfg = SearchConfig(T=2, episodes=4, seed=3)
    planner_cfg = PlannerConfig(mode="replay", cache_dir=str(tmp_path))
    runs = [run_search(cfg, Components(evaluator=evaluator, planner=Planner(planner_cfg)))
            for _ in range(2)]
    assert [r.pipeline for r in runs[0].records] == [r.pipeline for r in runs[1].records]


def test_hrl_picks_best_option_then_best_action(evaluator):
    cfg = SearchConfig(mode="hrl_option", T=4, epsilon=0.0)
    q = TabularQ()
    comp = Components(evaluator=evaluator, q=q)
    s = comp.state([], cfg.T)
    q.mc_update([(s, 12)], 0.9, 1.0)
    q.mc_update([(s, 22)], 0.5, 1.0)
    picks = {select_action(cfg, comp, [], np.random.default_rng(k))[1] for k in range(10)}
    assert picks == {12}


def test_hrl_explores_within_option(evaluator):
    cfg = SearchConfig(mode="hrl_option", T=4, epsilon=1.0)
    comp = Components(evaluator=evaluator)
    picks = {select_action(cfg, comp, [], np.random.default_rng(k))[1] for k in range(300)}
    assert {type_of(a) for a in picks} == set(TYPES)


def test_eps_greedy_follows_q(evaluator):
    cfg = SearchConfig(mode="eps_greedy_ql", T=3, epsilon=0.0)
    q = TabularQ()
    comp = Components(evaluator=evaluator, q=q)
    s = comp.state([], cfg.T)
    q.mc_update([(s, 17)], 1.0, 1.0)
    picks = {select_action(cfg, comp, [], np.random.default_rng(k))[1] for k in range(10)}
    assert picks == {17}


def test_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(T=0)
    with pytest.raises(ValueError):
        SearchConfig(mode="nope")
    with pytest.raises(ValueError):
        SearchConfig(epsilon=2.0)
    assert SearchConfig(actions=(1, 2)).actions[0] == END
