from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from softpipe.metafeatures import STATE_DIM
from softpipe.qvalue import (NetworkQ, ReplayBuffer, TabularQ, forward, load_checkpoint,
                             loss_and_grads, make_q, mc_update, net_gradient_check, q_predict,
                             save_checkpoint)


def state(v: float) -> np.ndarray:
    s = np.zeros(STATE_DIM)
    s[0] = v
    return s


def test_fresh_tabular_is_zero():
    assert q_predict(TabularQ(), state(3.0), 9) == 0.0


def test_one_step_updates():
    q = TabularQ()
    mc_update(q, [(state(1.0), 9)], 1.0, 0.5)
    assert q_predict(q, state(1.0), 9) == 0.5
    q = TabularQ()
    mc_update(q, [(state(1.0), 4)], 0.4, 1.0)  # eta = 1 sets Q to 0.4
    mc_update(q, [(state(1.0), 4)], 0.8, 0.25)
    assert q_predict(q, state(1.0), 4) == pytest.approx(0.5)


def test_locality():
    q = TabularQ()
    mc_update(q, [(state(1.0), 3), (state(9.0), 3)], 1.0, 0.5)
    assert q_predict(q, state(1.0), 3) == 0.5 and q_predict(q, state(9.0), 3) == 0.5
    assert q_predict(q, state(1.0), 4) == 0.0


def test_empty_trajectory_noop_and_eta_range():
    q = TabularQ()
    assert mc_update(q, [], 1.0, 0.5) is q and not q.table
    with pytest.raises(ValueError):
        mc_update(q, [(state(1.0), 3)], 1.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(q0=st.floats(0, 1), R=st.floats(0, 1), eta=st.floats(0.01, 1.0))
def test_contraction(q0, R, eta):
    q = TabularQ()
    s = state(2.0)
    mc_update(q, [(s, 1)], q0, 1.0)
    mc_update(q, [(s, 1)], R, eta)
    assert abs(q_predict(q, s, 1) - R) == pytest.approx((1 - eta) * abs(q0 - R), abs=1e-12)


@pytest.mark.parametrize("eta", [0.05, 0.1, 0.3])
def test_geometric_convergence(eta):
    q = TabularQ()
    s = state(4.0)
    n = math.ceil(math.log(0.01) / math.log(1 - eta))
    for _ in range(n):
        mc_update(q, [(s, 2)], 1.0, eta)
    assert abs(q_predict(q, s, 2) - 1.0) <= 1e-2
    # one step fewer is not enough
    q2 = TabularQ()
    for _ in range(n - 1):
        mc_update(q2, [(s, 2)], 1.0, eta)
    assert abs(q_predict(q2, s, 2) - 1.0) > 1e-2 - 1e-12


@settings(max_examples=30, deadline=None)
@given(rewards=st.lists(st.floats(0.2, 0.9), min_size=1, max_size=30), eta=st.floats(0.01, 1.0))
def test_values_stay_bounded(rewards, eta):
    q = TabularQ()
    s = state(1.0)
    for R in rewards:
        mc_update(q, [(s, 0)], R, eta)
        assert min(0.0, min(rewards)) <= q_predict(q, s, 0) <= max(rewards)


def test_replay_buffer_fifo():
    b = ReplayBuffer(3)
    for k in range(5):
        b.push(state(k), k, 0.1 * k)
    assert len(b) == 3
    assert [a for _, a, _ in b.items()] == [2, 3, 4]
    S, A, R = b.sample(3, np.random.default_rng(0))
    assert sorted(A.tolist()) == [2, 3, 4]


def test_network_gradient_check():
    assert net_gradient_check(NetworkQ(seed=0), batch=8) < 1e-4


def test_network_shapes_and_purity():
    q = NetworkQ(seed=1)
    assert q.sizes == (22, 256, 128, 64, 25)
    s = np.random.default_rng(0).normal(size=STATE_DIM)
    assert np.array_equal(q.predict_all(s), q.predict_all(s))


def test_zero_network_zero_gradient():
    q = NetworkQ(seed=0)
    params = [np.zeros_like(p) for p in q.params]
    S = np.random.default_rng(0).normal(size=(4, STATE_DIM))
    _, grads = loss_and_grads(params, S, np.array([0, 1, 2, 3]), np.zeros(4))
    assert all(np.all(g == 0) for g in grads)


def test_output_head_gradient_linear_in_targets():
    q = NetworkQ(seed=2)
    rng = np.random.default_rng(3)
    S = rng.normal(size=(6, STATE_DIM))
    A = rng.integers(0, 25, 6)
    out, _ = forward(q.params, S)
    pred = out[np.arange(6), A]
    R = rng.random(6)
    # the residual is pred - R; doubling the residual doubles the final-layer gradient
    _, g1 = loss_and_grads(q.params, S, A, R)
    _, g2 = loss_and_grads(q.params, S, A, 2 * R - pred)
    assert np.allclose(g2[-2], 2 * g1[-2]) and np.allclose(g2[-1], 2 * g1[-1])


def test_network_learns_constant_target():
    q = make_q("network", seed=0, lr=1e-3, batch_size=8)
    s = state(1.0)
    before = abs(q.predict(s, 5) - 0.8)
    for _ in range(200):
        mc_update(q, [(s, 5)], 0.8, 1e-3)
    assert abs(q.predict(s, 5) - 0.8) < 0.1 * before


def test_checkpoints(tmp_path):
    t = TabularQ()
    mc_update(t, [(state(1.0), 3)], 0.7, 0.5)
    save_checkpoint(t, tmp_path / "t.json")
    t2 = load_checkpoint(tmp_path / "t.json")
    assert t2.predict(state(1.0), 3) == 0.35
    n = NetworkQ(seed=4)
    save_checkpoint(n, tmp_path / "n.json")
    n2 = load_checkpoint(tmp_path / "n.json")
    s = state(2.0)
    assert np.allclose(n.predict_all(s), n2.predict_all(s))
