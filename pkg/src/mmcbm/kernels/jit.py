"""Numba-compiled twins of the reference kernels.

Same contracts as ``reference.py``; bodies are written loop-style so nopython
mode compiles them.  First call per process pays the JIT cost (cached on
disk afterwards).
"""

from __future__ import annotations

import numpy as np
from numba import njit

SVM_CONVERGE_STREAK = 5


@njit(cache=True)
def svm_train(X, y, C, max_epochs, tol):
    n, d = X.shape
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)
    w = np.zeros(d)
    b = 0.0
    best_w = w.copy()
    best_b = b
    best_obj = np.inf
    prev_obj = np.inf
    streak = 0
    converged = False
    epochs = 0
    for t in range(1, max_epochs + 1):
        epochs = t
        eta = 1.0 / (lam * t)
        g = np.zeros(d)
        g_b = 0.0
        margins = y * (np.dot(X, w) + b)
        for i in range(n):
            if margins[i] < 1.0:
                g_b += y[i]
                for j in range(d):
                    g[j] += y[i] * X[i, j]
        for j in range(d):
            w[j] = w[j] - eta * (lam * w[j] - g[j] / n)
        b = b + eta * (g_b / n)
        norm = np.sqrt(np.dot(w, w))
        if norm > radius:
            w *= radius / norm
        hinge_sum = 0.0
        margins = y * (np.dot(X, w) + b)
        for i in range(n):
            h = 1.0 - margins[i]
            if h > 0.0:
                hinge_sum += h
        obj = 0.5 * lam * np.dot(w, w) + hinge_sum / n
        if obj < best_obj:
            best_obj = obj
            best_w = w.copy()
            best_b = b
        if abs(obj - prev_obj) <= tol * max(1.0, abs(prev_obj)):
            streak += 1
            if streak >= SVM_CONVERGE_STREAK:
                converged = True
                break
        else:
            streak = 0
        prev_obj = obj
    return best_w, best_b, epochs, converged


@njit(cache=True)
def _softmax_inplace(v):
    m = v[0]
    for i in range(1, v.shape[0]):
        if v[i] > m:
            m = v[i]
    total = 0.0
    for i in range(v.shape[0]):
        v[i] = np.exp(v[i] - m)
        total += v[i]
    for i in range(v.shape[0]):
        v[i] /= total


@njit(cache=True)
def attention_pool(tokens, offsets, query, proj):
    d = tokens.shape[1]
    n_records = offsets.shape[0] - 1
    scale = np.sqrt(d)
    projected = np.dot(tokens, proj.T)
    raw = np.dot(projected, query) / scale
    pooled = np.zeros((n_records, d))
    for rec in range(n_records):
        lo, hi = offsets[rec], offsets[rec + 1]
        alpha = raw[lo:hi].copy()
        _softmax_inplace(alpha)
        for i in range(hi - lo):
            for j in range(d):
                pooled[rec, j] += alpha[i] * tokens[lo + i, j]
    return pooled


@njit(cache=True)
def baseline_loss_grads(tokens, offsets, labels, query, proj, dense_w, dense_b, class_weights):
    d = tokens.shape[1]
    n_classes = dense_b.shape[0]
    n_records = offsets.shape[0] - 1
    scale = np.sqrt(d)
    g_query = np.zeros(d)
    g_proj = np.zeros((d, d))
    g_dense_w = np.zeros((n_classes, d))
    g_dense_b = np.zeros(n_classes)
    loss_sum = 0.0
    weight_sum = 0.0
    for rec in range(n_records):
        lo, hi = offsets[rec], offsets[rec + 1]
        m = hi - lo
        x = tokens[lo:hi]
        y = labels[rec]
        p = np.dot(x, proj.T)
        s = np.dot(p, query) / scale
        alpha = s.copy()
        _softmax_inplace(alpha)
        z = np.zeros(d)
        for i in range(m):
            for j in range(d):
                z[j] += alpha[i] * x[i, j]
        logits = np.dot(dense_w, z) + dense_b
        probs = logits.copy()
        _softmax_inplace(probs)
        w_y = class_weights[y]
        loss_sum += -w_y * np.log(probs[y])
        weight_sum += w_y

        d_logits = w_y * probs
        d_logits[y] -= w_y
        for c in range(n_classes):
            g_dense_b[c] += d_logits[c]
            for j in range(d):
                g_dense_w[c, j] += d_logits[c] * z[j]
        d_z = np.dot(dense_w.T, d_logits)
        g_alpha = np.dot(x, d_z)
        dot = 0.0
        for i in range(m):
            dot += alpha[i] * g_alpha[i]
        d_s = alpha * (g_alpha - dot)
        for i in range(m):
            for j in range(d):
                g_query[j] += d_s[i] * p[i, j] / scale
        ds_x = np.dot(d_s, x)
        for a in range(d):
            for j in range(d):
                g_proj[a, j] += query[a] * ds_x[j] / scale
    loss = loss_sum / weight_sum
    return (
        loss,
        g_query / weight_sum,
        g_proj / weight_sum,
        g_dense_w / weight_sum,
        g_dense_b / weight_sum,
    )


@njit(cache=True)
def predictor_loss_grad(scores, labels, W, class_weights):
    n_records, n_concepts = scores.shape
    n_classes = W.shape[1]
    sig = 1.0 / (1.0 + np.exp(-W))
    logits = np.dot(scores, sig)
    d_logits = np.zeros((n_records, n_classes))
    loss_sum = 0.0
    weight_sum = 0.0
    for rec in range(n_records):
        row = logits[rec].copy()
        _softmax_inplace(row)
        y = labels[rec]
        w_y = class_weights[y]
        loss_sum += -w_y * np.log(row[y])
        weight_sum += w_y
        for c in range(n_classes):
            d_logits[rec, c] = w_y * row[c]
        d_logits[rec, y] -= w_y
    d_sig = np.dot(scores.T, d_logits)
    dW = d_sig * sig * (1.0 - sig) / weight_sum
    return loss_sum / weight_sum, dW
