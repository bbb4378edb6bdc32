"""Attention pooling, baseline head, gradient correctness, training loop."""

import numpy as np
import pytest

from mmcbm import kernels
from mmcbm.baseline import (
    BaselineParams,
    attention_pool,
    baseline_predict,
    baseline_train,
    default_config,
    init_params,
)
from mmcbm.core import (
    DiseaseLabel,
    EmbeddingToken,
    LABEL_ORDER,
    Modality,
    PatientRecord,
    Period,
)
from mmcbm.evalmetrics import classification_metrics
from mmcbm.ingest import SyntheticSpec, generate_synthetic_cohort
from mmcbm.optim import EarlyStopper
from oracles import central_difference_grad


@pytest.fixture()
def pool_params():
    rng = np.random.default_rng(0)
    return rng.standard_normal(6), rng.standard_normal((6, 6))


class TestAttentionPool:
    def test_single_token_identity(self, pool_params):
        query, proj = pool_params
        x = np.random.default_rng(1).standard_normal((1, 6))
        np.testing.assert_array_equal(attention_pool(x, query, proj), x[0])

    def test_identical_tokens_identity(self, pool_params):
        query, proj = pool_params
        x = np.random.default_rng(2).standard_normal(6)
        stacked = np.tile(x, (5, 1))
        np.testing.assert_allclose(attention_pool(stacked, query, proj), x, rtol=1e-14)

    def test_two_tokens_convex_combination(self, pool_params):
        query, proj = pool_params
        rng = np.random.default_rng(3)
        a, b = rng.standard_normal(6), rng.standard_normal(6)
        pooled = attention_pool(np.stack([a, b]), query, proj)
        # pooled = t*a + (1-t)*b for some t in [0, 1]
        denom = a - b
        ts = (pooled - b)[np.abs(denom) > 1e-12] / denom[np.abs(denom) > 1e-12]
        assert np.allclose(ts, ts[0], atol=1e-10)
        assert -1e-12 <= ts[0] <= 1 + 1e-12

    def test_permutation_invariance_exact(self, pool_params):
        query, proj = pool_params
        rng = np.random.default_rng(4)
        tokens = rng.standard_normal((7, 6))
        base = attention_pool(tokens, query, proj)
        for _ in range(5):
            perm = rng.permutation(7)
            np.testing.assert_array_equal(
                attention_pool(tokens[perm], query, proj), base
            )

    def test_empty_rejected(self, pool_params):
        query, proj = pool_params
        with pytest.raises(ValueError):
            attention_pool(np.zeros((0, 6)), query, proj)


def _record(rng, dim=6, label=DiseaseLabel.MELANOMA, modalities=(Modality.FA, Modality.US)):
    tokens = tuple(
        EmbeddingToken(m, rng.standard_normal(dim),
                       Period.EARLY if m is not Modality.US else None)
        for m in modalities
    )
    return PatientRecord("p", label, tokens)


class TestBaselinePredict:
    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(5)
        params = BaselineParams.from_dict(init_params(6, rng))
        record = _record(rng)
        probs = baseline_predict(record, params)
        assert abs(probs.sum() - 1.0) < 1e-6
        assert np.all(probs >= 0)

    def test_zero_head_gives_uniform(self):
        rng = np.random.default_rng(6)
        params = BaselineParams(
            query=rng.standard_normal(6),
            projection=rng.standard_normal((6, 6)),
            dense_w=np.zeros((3, 6)),
            dense_b=np.zeros(3),
        )
        probs = baseline_predict(_record(rng), params)
        np.testing.assert_allclose(probs, np.ones(3) / 3, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(7)
        params = BaselineParams.from_dict(init_params(8, rng))
        with pytest.raises(ValueError):
            baseline_predict(_record(rng, dim=6), params)


class TestGradients:
    def test_matches_central_differences_at_random_points(self):
        """Relative error < 1e-4 at 10 random parameter points."""
        rng = np.random.default_rng(8)
        d = 5
        tokens = np.ascontiguousarray(rng.standard_normal((9, d)))
        offsets = np.array([0, 2, 6, 9], dtype=np.int64)
        labels = np.array([0, 1, 2], dtype=np.int64)
        cw = np.ones(3)
        for _ in range(10):
            params = {
                "query": rng.standard_normal(d),
                "projection": rng.standard_normal((d, d)),
                "dense_w": rng.standard_normal((3, d)),
                "dense_b": rng.standard_normal(3),
            }

            def loss():
                return kernels.baseline_loss_grads(
                    tokens, offsets, labels,
                    params["query"], params["projection"],
                    params["dense_w"], params["dense_b"], cw,
                )[0]

            _, g_q, g_p, g_w, g_b = kernels.baseline_loss_grads(
                tokens, offsets, labels,
                params["query"], params["projection"],
                params["dense_w"], params["dense_b"], cw,
            )
            for name, grad in (
                ("query", g_q), ("projection", g_p), ("dense_w", g_w), ("dense_b", g_b)
            ):
                numeric = central_difference_grad(loss, params[name])
                denom = np.maximum(np.abs(numeric), 1e-6)
                rel = np.max(np.abs(grad - numeric) / denom)
                assert rel < 1e-4, f"{name}: rel err {rel}"


class TestBaselineTrain:
    def test_zero_lr_leaves_parameters_at_init(self, manifest):
        config = default_config(lr=0.0, max_epochs=3, val_fold=1, seed=9)
        trained = baseline_train(manifest, config)
        init = init_params(manifest.embedding_dim, np.random.default_rng(9))
        np.testing.assert_array_equal(trained.query, init["query"])
        np.testing.assert_array_equal(trained.projection, init["projection"])
        np.testing.assert_array_equal(trained.dense_w, init["dense_w"])
        np.testing.assert_array_equal(trained.dense_b, init["dense_b"])

    def test_same_seed_identical_weights(self, manifest):
        config = default_config(max_epochs=5, val_fold=1, seed=3)
        a = baseline_train(manifest, config)
        b = baseline_train(manifest, config)
        np.testing.assert_array_equal(a.query, b.query)
        np.testing.assert_array_equal(a.projection, b.projection)
        np.testing.assert_array_equal(a.dense_w, b.dense_w)
        np.testing.assert_array_equal(a.dense_b, b.dense_b)

    def test_zero_noise_cohort_perfect_validation_f1(self):
        spec = SyntheticSpec(noise_sigma=0.0, missing_modality_rate=0.0)
        cohort, _ = generate_synthetic_cohort(spec)
        params = baseline_train(cohort, default_config(val_fold=1, seed=0, max_epochs=100))
        val = cohort.fold_records(1)
        preds = [
            LABEL_ORDER[int(np.argmax(baseline_predict(rec, params)))] for rec in val
        ]
        metrics = classification_metrics(preds, [r.label for r in val])
        assert metrics.macro_f1 == 1.0


class TestEarlyStopper:
    def test_never_selects_above_minimum(self):
        rng = np.random.default_rng(10)
        stopper = EarlyStopper(patience=5, min_delta=1e-3)
        losses = list(rng.uniform(0.1, 2.0, size=40))
        for loss in losses:
            if stopper.update(loss, {"w": np.array([loss])}):
                break
        assert stopper.best_loss == min(losses[: len(losses)])
        assert stopper.best_params["w"][0] == stopper.best_loss

    def test_stops_after_patience_without_improvement(self):
        stopper = EarlyStopper(patience=3, min_delta=1e-4)
        assert not stopper.update(1.0, {"w": np.zeros(1)})
        stopped_at = None
        for i in range(10):
            if stopper.update(1.0, {"w": np.zeros(1)}):
                stopped_at = i
                break
        assert stopped_at == 2  # three stagnant epochs after the first
