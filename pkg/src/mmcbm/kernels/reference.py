"""Pure-numpy implementations of the numeric hot loops.

These are the fallback backend (``MMCBM_KERNELS=numpy``) and the ground truth
the numba twins in ``jit.py`` are tested against.  Shapes:

    X        (n, d)    SVM training samples
    tokens   (T, d)    embedding tokens of a batch, concatenated
    offsets  (B + 1,)  record b owns tokens[offsets[b]:offsets[b+1]]
    scores   (B, N)    concept score rows
    W        (N, 3)    interpretable predictor weights

All floats are float64, labels are int64 class indices.
"""

from __future__ import annotations

import numpy as np

# Consecutive epochs whose objective change stays under tol before the SVM
# solver declares convergence; guards against a single flat step.
SVM_CONVERGE_STREAK = 5


def svm_train(X, y, C, max_epochs, tol):
    """Full-batch subgradient descent on the primal L2-hinge objective.

        (1/2)||w||^2 + C * sum_i max(0, 1 - y_i (w.x_i + b))

    internally rescaled to (lam/2)||w||^2 + mean hinge with lam = 1/(C n),
    step size 1/(lam t), and iterates projected onto the ball of radius
    1/sqrt(lam) that contains the optimum.  The bias is updated by its
    subgradient but not regularized.  Returns the best iterate seen.

    Returns (w, b, epochs_run, converged).
    """
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
        margins = y * (X @ w + b)
        active = (margins < 1.0).astype(np.float64) * y
        eta = 1.0 / (lam * t)
        w = w - eta * (lam * w - (active @ X) / n)
        b = b + eta * (np.sum(active) / n)
        norm = np.sqrt(w @ w)
        if norm > radius:
            w *= radius / norm
        hinge = np.maximum(0.0, 1.0 - y * (X @ w + b))
        obj = 0.5 * lam * (w @ w) + np.mean(hinge)
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


def _softmax(v):
    e = np.exp(v - np.max(v))
    return e / np.sum(e)


def attention_pool(tokens, offsets, query, proj):
    """Scaled single-query attention pooling per record.

    score_i = query . (proj @ x_i) / sqrt(d); output_b is the softmax-weighted
    convex combination of record b's tokens.  Returns (B, d).
    """
    d = tokens.shape[1]
    n_records = offsets.shape[0] - 1
    projected = tokens @ proj.T
    raw = (projected @ query) / np.sqrt(d)
    pooled = np.empty((n_records, d))
    for rec in range(n_records):
        lo, hi = offsets[rec], offsets[rec + 1]
        alpha = _softmax(raw[lo:hi])
        pooled[rec] = alpha @ tokens[lo:hi]
    return pooled


def baseline_loss_grads(tokens, offsets, labels, query, proj, dense_w, dense_b, class_weights):
    """Weighted cross-entropy of the attention-pool + dense head, with analytic
    gradients for every parameter.

    Returns (loss, d_query, d_proj, d_dense_w, d_dense_b); the loss is the
    class-weighted mean over the batch (sum of w_y * CE divided by sum of w_y).
    """
    d = tokens.shape[1]
    n_records = offsets.shape[0] - 1
    scale = np.sqrt(d)
    g_query = np.zeros_like(query)
    g_proj = np.zeros_like(proj)
    g_dense_w = np.zeros_like(dense_w)
    g_dense_b = np.zeros_like(dense_b)
    loss_sum = 0.0
    weight_sum = 0.0
    for rec in range(n_records):
        lo, hi = offsets[rec], offsets[rec + 1]
        x = tokens[lo:hi]
        y = labels[rec]
        p = x @ proj.T
        s = (p @ query) / scale
        alpha = _softmax(s)
        z = alpha @ x
        logits = dense_w @ z + dense_b
        probs = _softmax(logits)
        w_y = class_weights[y]
        loss_sum += -w_y * np.log(probs[y])
        weight_sum += w_y

        d_logits = w_y * probs
        d_logits[y] -= w_y
        g_dense_w += np.outer(d_logits, z)
        g_dense_b += d_logits
        d_z = dense_w.T @ d_logits
        g_alpha = x @ d_z
        d_s = alpha * (g_alpha - np.dot(alpha, g_alpha))
        g_query += (p.T @ d_s) / scale
        g_proj += np.outer(query, d_s @ x) / scale
    loss = loss_sum / weight_sum
    return (
        loss,
        g_query / weight_sum,
        g_proj / weight_sum,
        g_dense_w / weight_sum,
        g_dense_b / weight_sum,
    )


def predictor_loss_grad(scores, labels, W, class_weights):
    """Weighted cross-entropy of the concept-score predictor and its gradient.

    logits_b = scores_b @ sigmoid(W).  Returns (loss, dW).
    """
    n_records = scores.shape[0]
    sig = 1.0 / (1.0 + np.exp(-W))
    logits = scores @ sig
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    probs = e / e.sum(axis=1, keepdims=True)
    sample_w = class_weights[labels]
    weight_sum = np.sum(sample_w)
    picked = probs[np.arange(n_records), labels]
    loss = float(np.sum(-sample_w * np.log(picked)) / weight_sum)
    d_logits = probs * sample_w[:, None]
    d_logits[np.arange(n_records), labels] -= sample_w
    d_sig = scores.T @ d_logits
    dW = d_sig * sig * (1.0 - sig) / weight_sum
    return loss, dW
