"""Black-box comparator: attention pooling over all tokens + dense softmax head.

Tokens from every present modality enter one shared pool; a single learnable
query scores each projected token and the softmax-weighted combination feeds a
3-class dense layer.  Trained on embeddings with Adam, early stopping on the
validation fold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .core import (
    DatasetManifest,
    LABEL_ORDER,
    Modality,
    N_CLASSES,
    PatientRecord,
)
from .model import TrainConfig, class_weight_vector, softmax
from .optim import Adam, EarlyStopper


@dataclass(frozen=True)
class BaselineParams:
    """Attention pool (query, projection) and dense head (weights, bias)."""

    query: np.ndarray      # (d,)
    projection: np.ndarray  # (d, d)
    dense_w: np.ndarray    # (3, d)
    dense_b: np.ndarray    # (3,)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "query": self.query,
            "projection": self.projection,
            "dense_w": self.dense_w,
            "dense_b": self.dense_b,
        }

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "BaselineParams":
        return cls(
            query=np.asarray(d["query"], dtype=np.float64),
            projection=np.asarray(d["projection"], dtype=np.float64),
            dense_w=np.asarray(d["dense_w"], dtype=np.float64),
            dense_b=np.asarray(d["dense_b"], dtype=np.float64),
        )

    @property
    def dim(self) -> int:
        return int(self.query.shape[0])


def init_params(dim: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    scale = 1.0 / np.sqrt(dim)
    return {
        "query": rng.standard_normal(dim) * scale,
        "projection": rng.standard_normal((dim, dim)) * scale,
        "dense_w": rng.standard_normal((N_CLASSES, dim)) * scale,
        "dense_b": np.zeros(N_CLASSES),
    }


def _token_matrix(
    record: PatientRecord, modalities: Optional[Iterable[Modality]]
) -> np.ndarray:
    allowed = frozenset(modalities) if modalities is not None else None
    vecs = [
        tok.vector
        for tok in record.tokens
        if allowed is None or tok.modality in allowed
    ]
    if not vecs:
        raise ValueError(f"record {record.patient_id!r} has no tokens to pool")
    return np.ascontiguousarray(np.stack(vecs))


def attention_pool(tokens: np.ndarray, query: np.ndarray, projection: np.ndarray) -> np.ndarray:
    """Pool a (m, d) token matrix into one length-d vector.

    The output is a convex combination of the inputs, so a single token (or
    m identical tokens) comes back unchanged.  Rows are summed in a canonical
    (lexicographic) order so permuting the input leaves the result bit-equal.
    """
    tokens = np.ascontiguousarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[0] == 0:
        raise ValueError("attention_pool needs a non-empty (m, d) token matrix")
    order = np.lexsort(tokens.T[::-1])
    tokens = np.ascontiguousarray(tokens[order])
    offsets = np.array([0, tokens.shape[0]], dtype=np.int64)
    return kernels.attention_pool(tokens, offsets, query, projection)[0]


def baseline_predict(
    record: PatientRecord,
    params: BaselineParams,
    modalities: Optional[Iterable[Modality]] = None,
) -> np.ndarray:
    """Class probabilities for one record (softmax over the dense head)."""
    tokens = _token_matrix(record, modalities)
    if tokens.shape[1] != params.dim:
        raise ValueError(
            f"token dimension {tokens.shape[1]} != model dimension {params.dim}"
        )
    pooled = attention_pool(tokens, params.query, params.projection)
    return softmax(params.dense_w @ pooled + params.dense_b)


def _concat_tokens(records: Sequence[PatientRecord]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    offsets = [0]
    chunks = []
    labels = np.zeros(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        mat = _token_matrix(rec, None)
        chunks.append(mat)
        offsets.append(offsets[-1] + mat.shape[0])
        labels[i] = LABEL_ORDER.index(rec.label)
    return (
        np.ascontiguousarray(np.vstack(chunks)),
        np.asarray(offsets, dtype=np.int64),
        labels,
    )


def default_config(**overrides) -> TrainConfig:
    params = dict(lr=1e-4, weight_decay=1e-2)
    params.update(overrides)
    return TrainConfig(**params)


def baseline_train(
    manifest: DatasetManifest,
    config: Optional[TrainConfig] = None,
) -> BaselineParams:
    """Train the head on the training folds; deterministic for a given seed."""
    config = config if config is not None else default_config()
    train = manifest.train_records(exclude_fold=config.val_fold)
    if not train:
        raise ValueError("no training records")
    tokens, offsets, labels = _concat_tokens(train)
    val_records = (
        manifest.fold_records(config.val_fold) if config.val_fold is not None else ()
    )
    if val_records:
        val_tokens, val_offsets, val_labels = _concat_tokens(val_records)
    else:
        val_tokens, val_offsets, val_labels = tokens, offsets, labels
    weights = class_weight_vector(labels, config.class_weighted)

    rng = np.random.default_rng(config.seed)
    params = init_params(manifest.embedding_dim, rng)
    opt = Adam(lr=config.lr, weight_decay=config.weight_decay)
    stopper = EarlyStopper(patience=config.patience, min_delta=config.min_delta)
    n = len(train)
    per_record = [
        (tokens[offsets[i] : offsets[i + 1]], labels[i]) for i in range(n)
    ]
    for _ in range(config.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            batch_tokens = np.ascontiguousarray(
                np.vstack([per_record[i][0] for i in idx])
            )
            batch_offsets = np.cumsum(
                [0] + [per_record[i][0].shape[0] for i in idx]
            ).astype(np.int64)
            batch_labels = np.asarray([per_record[i][1] for i in idx], dtype=np.int64)
            _, g_q, g_p, g_w, g_b = kernels.baseline_loss_grads(
                batch_tokens,
                batch_offsets,
                batch_labels,
                params["query"],
                params["projection"],
                params["dense_w"],
                params["dense_b"],
                weights,
            )
            opt.step(
                params,
                {"query": g_q, "projection": g_p, "dense_w": g_w, "dense_b": g_b},
            )
        val_loss, *_ = kernels.baseline_loss_grads(
            val_tokens,
            val_offsets,
            val_labels,
            params["query"],
            params["projection"],
            params["dense_w"],
            params["dense_b"],
            weights,
        )
        if stopper.update(val_loss, params):
            break
    best = stopper.best_params if stopper.best_params is not None else params
    return BaselineParams.from_dict(best)
