"""Acceptance criteria, one test each, at their stated tolerances.

Each test reports a PASS/FAIL/SKIP line that is also collected into the
"acceptance criteria" section of the pytest summary.
"""

from __future__ import annotations

import itertools
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from softpipe.bench import (TOY_LIBRARY, BenchmarkConfig, DatasetEntry, check_closed_form,
                            check_gap_bound, run_benchmark, toy_constrained_table)
from softpipe.cli import DATA_DIR_ENV, data_dir
from softpipe.dataset import load_csv
from softpipe.evaluator import PipelineEvaluator
from softpipe.operators import OperatorType, type_of
from softpipe.search import Components, SearchConfig, run_search

pytestmark = pytest.mark.slow

TESTS = Path(__file__).parent


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def test_criterion_1_closed_form(acceptance_report):
    start = time.perf_counter()
    r = check_closed_form(100, seed=0, tol=1e-6)
    secs = time.perf_counter() - start
    ok = r["passes"] == 100 and secs < 10
    acceptance_report(
        f"[{_status(ok)}] 1 closed-form optimality: fusion policy within 1e-6 of search optimum on "
        f"{r['passes']}/100 (worst excess {r['worst_search_excess']:.3g}); exact KL maximizer "
        f"{r['exact_passes']}/100 (worst {r['worst_exact_excess']:.2g}); {secs:.1f}s")
    assert secs < 10
    assert r["passes"] == 100


def test_criterion_2_gap_bound(acceptance_report):
    start = time.perf_counter()
    r = check_gap_bound(50, seed=0, delta_range=(0.1, 0.5), alpha=1.0, beta=2.0)
    secs = time.perf_counter() - start
    ok = r["passes"] == 50 and secs < 10
    acceptance_report(
        f"[{_status(ok)}] 2 gap bound: {r['passes']}/50 bandits satisfy "
        f"V_soft - V_hard >= bound (worst margin {r['worst_margin']:.3g}); {secs:.2f}s")
    assert ok


def _toy_oracle(evaluator: PipelineEvaluator):
    scores = {(): evaluator.evaluate([]).accuracy}
    for n in (1, 2, 3):
        for p in itertools.product(TOY_LIBRARY, repeat=n):
            scores[p] = evaluator.evaluate(list(p)).accuracy
    best = max(scores.values())
    constrained = max(v for p, v in scores.items()
                      if len({type_of(a) for a in p}) == len(p))
    return scores, best, constrained


def test_criterion_3_constraint_escape(acceptance_report):
    start = time.perf_counter()
    evaluator = PipelineEvaluator(toy_constrained_table())
    scores, best, constrained = _toy_oracle(evaluator)
    optimal = [p for p, v in scores.items() if v >= best - 1e-12]
    needs_two = all(sum(type_of(a) == OperatorType.FEATURE_PREPROCESSING for a in p) >= 2
                    for p in optimal)
    reached, hard_max = 0, -np.inf
    for seed in range(10):
        cfg = SearchConfig(T=3, episodes=100, seed=seed, actions=TOY_LIBRARY)
        reached += run_search(cfg, Components(evaluator=evaluator)).best_reward >= best - 1e-12
        hard = SearchConfig(T=3, episodes=100, seed=seed, actions=TOY_LIBRARY, mode="hard_constraint")
        hard_max = max(hard_max, run_search(hard, Components(evaluator=evaluator)).best_reward)
    secs = time.perf_counter() - start
    ok = needs_two and best > constrained and reached >= 8 and hard_max <= constrained + 1e-12 \
        and secs < 300
    acceptance_report(
        f"[{_status(ok)}] 3 constraint escape: optimum {best:.4f} vs constrained {constrained:.4f} "
        f"(optimal pipelines {[list(p) for p in optimal]}); softpipe reached optimum in {reached}/10 "
        f"seeds; hard_constraint max {hard_max:.4f}; {secs:.0f}s")
    assert needs_two and best > constrained
    assert reached >= 8
    assert hard_max <= constrained + 1e-12
    assert secs < 300


def test_criterion_4_wall_robot_spot_check(acceptance_report):
    path = data_dir() / "wall-robot-nav.csv"
    if not path.exists():
        acceptance_report(f"[SKIP] 4 wall-robot-nav spot check: {path} absent "
                          f"(run `softpipe fetch-datasets` or set {DATA_DIR_ENV})")
        pytest.skip("wall-robot-nav dataset not fetched")
    evaluator = PipelineEvaluator(load_csv(path, "Class"))
    a = evaluator.evaluate([10, 9, 15]).accuracy
    b = evaluator.evaluate([6, 23]).accuracy
    ok = a >= b and abs(a - 0.962) <= 0.02
    acceptance_report(f"[{_status(ok)}] 4 wall-robot-nav: [10,9,15] -> {a:.4f}, [6,23] -> {b:.4f}")
    assert a >= b
    assert abs(a - 0.962) <= 0.02


ABLATION_MODES = ["softpipe", "softpipe[beta=0]", "softpipe[gamma=0]", "eps_greedy_ql"]
DATASETS = [DatasetEntry("wine", "bundled:wine", "class"),
            DatasetEntry("breast_cancer", "bundled:breast_cancer", "diagnosis"),
            DatasetEntry("anes96", "bundled:anes96", "vote")]


@pytest.fixture(scope="module")
def bundled_runs():
    cfg = BenchmarkConfig(datasets=DATASETS, modes=ABLATION_MODES, seeds=[0, 1, 2, 3, 4],
                          search=SearchConfig(T=8, episodes=100), ltr_oracle_prefixes=6)
    start = time.perf_counter()
    rows, _ = run_benchmark(cfg, write=False)
    return rows, time.perf_counter() - start


def _median(rows, dataset, mode, field):
    return float(np.median([getattr(r, field) for r in rows if r.dataset == dataset and r.mode == mode]))


def test_criterion_5_learning_efficiency(bundled_runs, acceptance_report):
    rows, secs = bundled_runs
    assert not any(r.failed for r in rows)
    wins, detail = 0, []
    for d in DATASETS:
        sp = _median(rows, d.name, "softpipe", "episodes_to_95")
        ql = _median(rows, d.name, "eps_greedy_ql", "episodes_to_95")
        wins += sp <= ql
        detail.append(f"{d.name} {sp:g} vs {ql:g}")
    ok = wins >= 2 and secs < 900
    acceptance_report(f"[{_status(ok)}] 5 learning efficiency: softpipe <= eps_greedy_ql on {wins}/3 "
                      f"(median episodes to 95%: {'; '.join(detail)}); {secs:.0f}s")
    assert wins >= 2
    assert secs < 900


def test_criterion_6_ablation_order(bundled_runs, acceptance_report):
    rows, _ = bundled_runs
    mean = {m: float(np.mean([_median(rows, d.name, m, "best_accuracy") for d in DATASETS]))
            for m in ABLATION_MODES}
    full, no_prior, no_ltr, ql = (mean[m] for m in ABLATION_MODES)
    ok = full >= no_prior >= ql and full >= no_ltr >= ql
    acceptance_report(f"[{_status(ok)}] 6 ablation order: full {full:.4f}, w/o prior {no_prior:.4f}, "
                      f"w/o ranker {no_ltr:.4f}, Q-learning {ql:.4f}")
    assert full >= no_prior >= ql
    assert full >= no_ltr >= ql


INVARIANT_TESTS = [
    "test_policy.py::test_softmax_normalized_and_shift_invariant",
    "test_policy.py::test_positivity",
    "test_prior.py::test_conservation",
    "test_prior.py::test_floor_idempotent",
    "test_search.py::test_allowed_is_subset",
    "test_qvalue.py::test_contraction",
    "test_evaluator.py::test_gradient_matches_finite_differences",
    "test_qvalue.py::test_network_gradient_check",
    "test_operators.py::test_rows_preserved_and_finite",
    "test_operators.py::test_idempotent_operators",
    "test_ltr.py::test_kendall_tau_on_planted_order",
    "test_bench.py::test_results_are_reproducible",
    "test_search.py::test_replay_planner_reproducible",
]


def test_criterion_7_invariant_suites(acceptance_report):
    ids = [str(TESTS / t) for t in INVARIANT_TESTS]
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *ids],
                          capture_output=True, text=True, env=env, cwd=TESTS.parent)
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0
    acceptance_report(f"[{_status(ok)}] 7 invariant suites ({len(ids)} tests): {summary}")
    assert ok, proc.stdout[-3000:]
