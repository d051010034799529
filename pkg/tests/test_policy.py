from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from softpipe.policy import (FusionWeights, constrained_policy, fusion_logits, gap_lower_bound,
                             kl_divergence, kl_objective, kl_optimal_policy, prior_constant,
                             project_simplex, projected_gradient_ascent, sample_action,
                             softmax_policy, total_variation)

finite = st.floats(-50, 50, allow_nan=False)


def test_logit_example():
    w = FusionWeights(1.0, 2.0, 2.0)
    z = fusion_logits([0.5], [0.2], [0.25], w)
    assert z[0] == pytest.approx(0.5 + 0.4 + 2 * math.log(0.25))
    assert z[0] == pytest.approx(-1.87258872, abs=1e-8)


def test_logit_degenerate_and_affine():
    p = np.array([0.1, 0.2, 0.7])
    q = np.array([0.3, 0.1, 0.9])
    r = np.array([1.0, -1.0, 0.0])
    assert np.allclose(fusion_logits(q, r, p, FusionWeights(0, 2, 0)), 2 * np.log(p))
    w = FusionWeights(1.5, 2.0, 2.0)
    assert np.allclose(fusion_logits(q + 3.0, r, p, w) - fusion_logits(q, r, p, w), 1.5 * 3.0)


def test_logit_errors():
    w = FusionWeights()
    with pytest.raises(ValueError):
        fusion_logits([0, 0], [0, 0], [1.0, 0.0], w)
    with pytest.raises(ValueError):
        fusion_logits([0], [0, 0], [0.5, 0.5], w)
    with pytest.raises(ValueError):
        FusionWeights(alpha=-1)


def test_softmax_examples():
    assert np.allclose(softmax_policy([0.0, 0.0]), [0.5, 0.5])
    d = softmax_policy([1000.0, 0.0, -1000.0])
    assert np.isfinite(d).all() and d[0] == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=finite), finite)
def test_softmax_normalized_and_shift_invariant(z, c):
    d = softmax_policy(z)
    assert abs(d.sum() - 1) < 1e-9 and np.all(d >= 0)
    assert np.allclose(softmax_policy(z + c), d, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=25), st.floats(0.1, 5.0))
def test_prior_only_policy(raw, beta):
    p = np.array(raw) / np.sum(raw)
    zeros = np.zeros(len(p))
    d = softmax_policy(fusion_logits(zeros, zeros, p, FusionWeights(0, beta, 0)))
    expect = p ** beta / np.sum(p ** beta)
    assert np.allclose(d, expect, atol=1e-9)
    d1 = softmax_policy(fusion_logits(zeros, zeros, p, FusionWeights(0, 1.0, 0)))
    assert np.allclose(d1, p, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_positivity(seed):
    rng = np.random.default_rng(seed)
    q, r = rng.random(25), rng.normal(size=25)
    p = rng.dirichlet(np.ones(25)) + 1e-3
    p /= p.sum()
    assert np.all(softmax_policy(fusion_logits(q, r, p, FusionWeights())) > 0)


def test_sampling():
    rng = np.random.default_rng(0)
    point = np.zeros(25)
    point[9] = 1.0
    assert all(sample_action(point, rng) == 9 for _ in range(100))
    u = np.full(25, 1 / 25)
    draws = np.array([sample_action(u, rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=25) / len(draws)
    assert np.all(np.abs(freq - 0.04) < 0.005)
    a = [sample_action(u, np.random.default_rng(7)) for _ in range(3)]
    b = [sample_action(u, np.random.default_rng(7)) for _ in range(3)]
    assert a == b
    assert sample_action(point, rng, actions=list(range(100, 125))) == 109


def test_sampling_never_hits_zero_mass():
    rng = np.random.default_rng(1)
    d = np.array([0.0, 0.5, 0.0, 0.5, 0.0])
    assert {sample_action(d, rng) for _ in range(2000)} == {1, 3}


def test_constrained_policy_masks():
    rng = np.random.default_rng(2)
    q, r, p = rng.random(6), rng.random(6), np.full(6, 1 / 6)
    mask = np.array([True, False, True, True, False, True])
    d = constrained_policy(q, r, p, FusionWeights(), mask)
    assert np.all(d[~mask] == 0) and d.sum() == pytest.approx(1.0)
    full = softmax_policy(fusion_logits(q, r, p, FusionWeights()))
    assert np.allclose(d[mask], full[mask] / full[mask].sum())


def test_kl_objective_at_prior():
    rng = np.random.default_rng(3)
    q, r = rng.random(8), rng.random(8)
    p = rng.dirichlet(np.ones(8))
    w = FusionWeights()
    assert kl_objective(p, q, r, p, w) == pytest.approx(np.dot(p, q + 2 * r))
    assert kl_divergence(p, p) == 0.0


def test_exact_maximizer_beats_random_points():
    rng = np.random.default_rng(4)
    w = FusionWeights()
    for _ in range(5):
        q, r = rng.random(25), rng.random(25)
        p = rng.dirichlet(np.ones(25)) + 1e-3
        p /= p.sum()
        best = kl_objective(kl_optimal_policy(q, r, p, w), q, r, p, w)
        others = [kl_objective(rng.dirichlet(np.ones(25)), q, r, p, w) for _ in range(1000)]
        assert best >= max(others)


def test_fusion_policy_matches_maximizer_only_at_unit_beta():
    rng = np.random.default_rng(5)
    q, r = rng.random(25), rng.random(25)
    p = rng.dirichlet(np.ones(25))
    w1 = FusionWeights(1.0, 1.0, 2.0)
    assert np.allclose(softmax_policy(fusion_logits(q, r, p, w1)), kl_optimal_policy(q, r, p, w1))
    w2 = FusionWeights(1.0, 2.0, 2.0)
    assert total_variation(softmax_policy(fusion_logits(q, r, p, w2)), kl_optimal_policy(q, r, p, w2)) > 1e-3


def test_projected_gradient_recovers_maximizer():
    rng = np.random.default_rng(6)
    w = FusionWeights()
    q, r = rng.random(25), rng.random(25)
    p = rng.dirichlet(np.ones(25)) + 1e-3
    p /= p.sum()
    x, f = projected_gradient_ascent(q, r, p, w, rng)
    exact = kl_optimal_policy(q, r, p, w)
    assert abs(f - kl_objective(exact, q, r, p, w)) < 1e-9
    assert total_variation(x, exact) < 1e-4


def test_beta_sweep_approaches_prior():
    rng = np.random.default_rng(7)
    q, r = rng.random(25), rng.random(25)
    p = rng.dirichlet(np.ones(25))
    tv = [total_variation(kl_optimal_policy(q, r, p, FusionWeights(1.0, b, 2.0)), p) for b in (2, 20, 200)]
    assert tv[0] > tv[1] > tv[2]


def test_greedy_limit():
    q = np.array([0.1, 0.9, 0.5])
    r = np.zeros(3)
    p = np.full(3, 1 / 3)
    mass = [kl_optimal_policy(q, r, p, FusionWeights(1.0, b, 0.0))[1] for b in (1.0, 0.1, 1e-3)]
    assert mass[0] < mass[1] < mass[2] and mass[2] > 1 - 1e-9


def test_project_simplex():
    v = np.array([0.2, 1.5, -0.3])
    x = project_simplex(v)
    assert x.sum() == pytest.approx(1.0) and np.all(x >= 0)
    # brute-force check of the Euclidean projection over a fine grid
    grid = np.linspace(0, 1, 201)
    best = min(((a, b, 1 - a - b) for a in grid for b in grid if a + b <= 1 + 1e-12),
               key=lambda y: np.sum((np.array(y) - v) ** 2))
    assert np.allclose(x, best, atol=5e-3)
    X = project_simplex(np.vstack([v, v[::-1]]))
    assert np.allclose(X[0], x) and np.allclose(X[1], x[::-1])


def test_gap_bound_examples():
    assert gap_lower_bound(0.0, 0.5, 1.0, 2.0) == 0.0
    val = gap_lower_bound(0.962 - 0.946, 1 / 24, 1.0, 2.0)
    assert val == pytest.approx((1 / 24) / (1 + math.exp(-0.008)) * 0.016, rel=1e-12)
    assert val == pytest.approx(3.34e-4, rel=5e-3)
    grid = np.linspace(0, 2, 50)
    vals = [gap_lower_bound(d, 0.3, 1.0, 2.0) for d in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        gap_lower_bound(0.1, 0.5, 1.0, 0.0)


def test_prior_constant():
    assert prior_constant(np.full(24, 1 / 24), 3) == pytest.approx(1 / 24)
    assert prior_constant(np.array([0.1, 0.2, 0.7]), 0) == pytest.approx(0.1 / (3 * 0.7))
