"""Numba and numpy kernel backends must agree on every operation."""

import numpy as np
import pytest

from mmcbm.kernels import active_backend, jit, reference


def _svm_instance(seed, n=60, d=12):
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    y = np.where(rng.random(n) < 0.5, 1.0, -1.0)
    X = rng.standard_normal((n, d)) * 0.6 + np.outer(y, direction)
    return np.ascontiguousarray(X), y


def _pool_instance(seed, n_records=5, d=9):
    rng = np.random.default_rng(seed)
    counts = rng.integers(1, 6, size=n_records)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    tokens = np.ascontiguousarray(rng.standard_normal((offsets[-1], d)))
    labels = rng.integers(0, 3, size=n_records).astype(np.int64)
    query = rng.standard_normal(d)
    proj = rng.standard_normal((d, d))
    dense_w = rng.standard_normal((3, d))
    dense_b = rng.standard_normal(3)
    return tokens, offsets, labels, query, proj, dense_w, dense_b


def test_backend_selected():
    assert active_backend() in ("numba", "numpy")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_svm_train_backends_agree(seed):
    X, y = _svm_instance(seed)
    w_ref, b_ref, _, conv_ref = reference.svm_train(X, y, 1.0, 400, 1e-4)
    w_jit, b_jit, _, conv_jit = jit.svm_train(X, y, 1.0, 400, 1e-4)
    # identical schedule; tiny drift from different summation order only
    np.testing.assert_allclose(w_jit, w_ref, rtol=1e-7, atol=1e-9)
    assert abs(b_jit - b_ref) < 1e-7
    assert conv_ref == conv_jit
    signs_ref = np.sign(X @ w_ref + b_ref)
    signs_jit = np.sign(X @ w_jit + b_jit)
    assert np.array_equal(signs_ref, signs_jit)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_attention_pool_backends_agree(seed):
    tokens, offsets, _, query, proj, _, _ = _pool_instance(seed)
    ref = reference.attention_pool(tokens, offsets, query, proj)
    acc = jit.attention_pool(tokens, offsets, query, proj)
    np.testing.assert_allclose(acc, ref, rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("weighted", [False, True])
def test_baseline_grads_backends_agree(seed, weighted):
    tokens, offsets, labels, query, proj, dense_w, dense_b = _pool_instance(seed)
    cw = np.array([1.0, 2.0, 0.5]) if weighted else np.ones(3)
    ref = reference.baseline_loss_grads(
        tokens, offsets, labels, query, proj, dense_w, dense_b, cw
    )
    acc = jit.baseline_loss_grads(
        tokens, offsets, labels, query, proj, dense_w, dense_b, cw
    )
    for a, b in zip(acc, ref):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
@pytest.mark.parametrize("weighted", [False, True])
def test_predictor_grads_backends_agree(seed, weighted):
    rng = np.random.default_rng(seed)
    scores = np.ascontiguousarray(rng.uniform(-1, 1, size=(10, 14)))
    labels = rng.integers(0, 3, 10).astype(np.int64)
    W = rng.standard_normal((14, 3))
    cw = np.array([0.5, 1.5, 1.0]) if weighted else np.ones(3)
    loss_ref, grad_ref = reference.predictor_loss_grad(scores, labels, W, cw)
    loss_jit, grad_jit = jit.predictor_loss_grad(scores, labels, W, cw)
    assert abs(loss_ref - loss_jit) < 1e-12
    np.testing.assert_allclose(grad_jit, grad_ref, rtol=1e-10, atol=1e-13)


def test_svm_train_is_deterministic():
    X, y = _svm_instance(5)
    runs = [reference.svm_train(X, y, 1.0, 300, 1e-4) for _ in range(2)]
    np.testing.assert_array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]
