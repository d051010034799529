from __future__ import annotations

import numpy as np
import pytest

from softpipe.dataset import Column, SplitSpec, Table, split_indices
from softpipe.evaluator import (PipelineEvaluator, design_matrices, evaluate_pipeline,
                                fitted_on_train, logistic_train, loss_and_grad, pipeline_seed)

from conftest import numeric_table


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 3))
    Y = np.eye(3)[[0, 2, 1, 1, 0]]
    W = rng.normal(size=(3, 3))
    b = rng.normal(size=3)
    _, gW, gb = loss_and_grad(W, b, X, Y, l2=1e-2)
    eps = 1e-6
    num_W = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += eps
        Wm[idx] -= eps
        num_W[idx] = (loss_and_grad(Wp, b, X, Y, 1e-2)[0] - loss_and_grad(Wm, b, X, Y, 1e-2)[0]) / (2 * eps)
    num_b = np.zeros_like(b)
    for k in range(3):
        bp, bm = b.copy(), b.copy()
        bp[k] += eps
        bm[k] -= eps
        num_b[k] = (loss_and_grad(W, bp, X, Y, 1e-2)[0] - loss_and_grad(W, bm, X, Y, 1e-2)[0]) / (2 * eps)
    rel = max(np.max(np.abs(gW - num_W) / np.maximum(np.abs(num_W), 1e-8)),
              np.max(np.abs(gb - num_b) / np.maximum(np.abs(num_b), 1e-8)))
    assert rel < 1e-4


def test_separable_fits_perfectly():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(-3, 0.5, (30, 2)), rng.normal(3, 0.5, (30, 2))])
    y = np.array(["a"] * 30 + ["b"] * 30)
    m = logistic_train(X, y, seed=0)
    assert np.mean(m.predict(X) == y) == 1.0
    assert np.all(np.isfinite(m.W))


def test_single_class_rejected():
    with pytest.raises(ValueError):
        logistic_train(np.zeros((4, 2)), np.array(["a"] * 4))


def test_column_permutation_symmetry():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(40, 3))
    y = np.where(X[:, 0] - X[:, 2] > 0, "p", "q")
    m = logistic_train(X, y, seed=5)
    perm = [2, 0, 1]
    from softpipe.evaluator import LogisticModel
    m2 = LogisticModel(m.W[perm], m.b, m.classes)
    assert np.array_equal(m.predict(X), m2.predict(X[:, perm]))


def test_deterministic(anes):
    a = evaluate_pipeline([5, 9], anes)
    b = evaluate_pipeline([5, 9], anes)
    assert a.accuracy == b.accuracy and a.test_accuracy == b.test_accuracy


def test_result_ranges(cancer):
    ev = PipelineEvaluator(cancer)
    for p in ([], [9], [10, 9, 15], [23]):
        r = ev.evaluate(p)
        assert 0.0 <= r.accuracy <= 1.0 and r.n_features_final >= 1 and not r.failed
    assert ev.evaluate([]).accuracy > 0.9


def test_memoized_and_end_ignored(cancer):
    ev = PipelineEvaluator(cancer)
    first = ev.evaluate([9, 0])
    assert ev.evaluate([9]) is first
    assert ev.n_evaluations == 1


def test_no_leakage(mixed_table):
    tr, va, te = split_indices(mixed_table, SplitSpec())
    # corrupt every non-train row; fitted parameters must not move
    a = mixed_table.column("a").values.copy()
    a[np.concatenate([va, te])] = 1e6
    cols = [Column.numeric("a", a)] + list(mixed_table.columns[1:])
    mutated = Table(tuple(cols), "y")
    for p in ([1, 4, 9], [3, 5, 10], [1, 4, 17]):
        f1 = fitted_on_train(p, mixed_table)
        f2 = fitted_on_train(p, mutated)
        assert repr(f1) == repr(f2)


def test_failure_penalty(monkeypatch, wine):
    import softpipe.evaluator as E

    def boom(*args, **kwargs):
        raise E.PipelineError(0, 9, RuntimeError("boom"))

    ev = PipelineEvaluator(wine)
    monkeypatch.setattr(E, "fit_pipeline", boom)
    r = ev.evaluate([9])
    assert r.failed and r.accuracy == 0.0


def test_design_matrix_uses_train_stats():
    tr = numeric_table(np.array([[0.0], [2.0]]), ["a", "b"])
    va = numeric_table(np.array([[4.0]]), ["a"])
    Xtr, Xva = design_matrices(tr, va)
    assert Xtr.ravel().tolist() == [-1.0, 1.0] and Xva.ravel().tolist() == [3.0]


def test_seed_depends_on_pipeline():
    assert pipeline_seed(0, [9]) != pipeline_seed(0, [10])
    assert pipeline_seed(0, [9]) == pipeline_seed(0, [9])


def test_log_file(tmp_path, wine):
    p = tmp_path / "eval.csv"
    ev = PipelineEvaluator(wine, log_path=p)
    ev.evaluate([9])
    ev.evaluate([9])
    lines = p.read_text().splitlines()
    assert lines[0] == "pipeline,accuracy,n_features,seconds" and len(lines) == 2
    assert lines[1].startswith('[9],')
