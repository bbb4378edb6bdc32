"""The concept bottleneck: scoring, interpretable prediction, and training.

An input record is reduced per modality to the L2-normalized mean of its
tokens; cosine similarity against the bank rows gives the concept score
vector.  The predictor applies a sigmoid to its weight matrix, multiplies
element-wise by the scores, and sums each class column:

    attention[i, c] = score[i] * sigmoid(W[i, c])
    logit[c]        = sum_i attention[i, c]

so every logit decomposes exactly into per-concept contributions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from . import kernels
from .cav import ConceptBank
from .core import (
    DatasetManifest,
    DiseaseLabel,
    LABEL_ORDER,
    MODALITY_ORDER,
    Modality,
    N_CLASSES,
    PatientRecord,
)
from .optim import Adam, EarlyStopper


class ZeroFeatureError(ValueError):
    """A modality's mean token vector has zero norm and cannot be scored."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / np.sum(e)


@dataclass(frozen=True)
class ConceptScoreVector:
    """Cosine scores against the bank; masked-out entries are exactly zero."""

    scores: np.ndarray
    modality_mask: np.ndarray

    def __post_init__(self) -> None:
        s = np.ascontiguousarray(self.scores, dtype=np.float64)
        m = np.ascontiguousarray(self.modality_mask, dtype=bool)
        s.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "modality_mask", m)

    def replace(self, index: int, value: float) -> "ConceptScoreVector":
        scores = self.scores.copy()
        scores[index] = value
        return ConceptScoreVector(scores=scores, modality_mask=self.modality_mask)


def modality_feature(record: PatientRecord, modality: Modality) -> Optional[np.ndarray]:
    """L2-normalized mean of the record's tokens for one modality; None when
    the modality is absent."""
    toks = record.tokens_of(modality)
    if not toks:
        return None
    mean = np.mean([t.vector for t in toks], axis=0)
    norm = np.linalg.norm(mean)
    if norm == 0.0:
        raise ZeroFeatureError(
            f"patient {record.patient_id!r}: {modality.value} feature has zero norm"
        )
    return mean / norm


def concept_scores(
    record: PatientRecord,
    bank: ConceptBank,
    modalities: Optional[Iterable[Modality]] = None,
) -> ConceptScoreVector:
    """Score a record against every bank concept.

    `modalities` restricts which of the record's modalities participate
    (used for unimodal evaluation); absent or excluded modalities leave their
    concepts at score 0 with mask False.
    """
    allowed = frozenset(modalities) if modalities is not None else frozenset(MODALITY_ORDER)
    scores = np.zeros(bank.n_concepts)
    mask = np.zeros(bank.n_concepts, dtype=bool)
    for modality in MODALITY_ORDER:
        if modality not in allowed:
            continue
        feature = modality_feature(record, modality)
        if feature is None:
            continue
        rows = bank.rows_of(modality)
        if rows.size == 0:
            continue
        scores[rows] = np.clip(bank.matrix[rows] @ feature, -1.0, 1.0)
        mask[rows] = True
    return ConceptScoreVector(scores=scores, modality_mask=mask)


@dataclass(frozen=True)
class InterpretablePredictor:
    """The learnable N x 3 weight matrix; columns follow LABEL_ORDER."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, n_concepts: int) -> "InterpretablePredictor":
        return cls(weights=np.zeros((n_concepts, N_CLASSES)))

    @property
    def n_concepts(self) -> int:
        return int(self.weights.shape[0])


@dataclass(frozen=True)
class RankedConcept:
    concept_id: str
    modality: Modality
    attention: float
    rank: int
    score: float


@dataclass(frozen=True)
class Explanation:
    """Prediction plus everything needed to explain and intervene on it."""

    label: DiseaseLabel
    logits: np.ndarray
    probabilities: np.ndarray
    top_k: tuple[RankedConcept, ...]
    attention: np.ndarray  # (N, 3) per-concept, per-class contributions
    scores: ConceptScoreVector
    concept_ids: tuple[str, ...]
    concept_modalities: tuple[Modality, ...]


def _ranked_concepts(
    attention_col: np.ndarray,
    scores: ConceptScoreVector,
    concept_ids: Sequence[str],
    concept_modalities: Sequence[Modality],
    k: int,
) -> tuple[RankedConcept, ...]:
    masked = np.flatnonzero(scores.modality_mask)
    # stable sort keeps canonical order among ties
    order = masked[np.argsort(-attention_col[masked], kind="stable")]
    return tuple(
        RankedConcept(
            concept_id=concept_ids[idx],
            modality=concept_modalities[idx],
            attention=float(attention_col[idx]),
            rank=rank,
            score=float(scores.scores[idx]),
        )
        for rank, idx in enumerate(order[:k], start=1)
    )


def predict(
    scores: ConceptScoreVector,
    predictor: InterpretablePredictor,
    bank: ConceptBank,
    k: int = 10,
) -> Explanation:
    """Run the interpretable head on a score vector.

    Ties at the top logit resolve to the lowest class index.  The top-k list
    ranks masked-in concepts by their attention for the predicted class.
    """
    if scores.scores.shape[0] != predictor.n_concepts:
        raise ValueError(
            f"score length {scores.scores.shape[0]} != predictor rows {predictor.n_concepts}"
        )
    attention = scores.scores[:, None] * sigmoid(predictor.weights)
    logits = attention.sum(axis=0)
    label_idx = int(np.argmax(logits))
    ids = bank.ids()
    mods = tuple(c.modality for c in bank.concepts)
    return Explanation(
        label=LABEL_ORDER[label_idx],
        logits=logits,
        probabilities=softmax(logits),
        top_k=_ranked_concepts(attention[:, label_idx], scores, ids, mods, k),
        attention=attention,
        scores=scores,
        concept_ids=ids,
        concept_modalities=mods,
    )


def top_k(explanation: Explanation, k: int) -> tuple[RankedConcept, ...]:
    """Re-rank the explanation's masked-in concepts at a different k."""
    n = len(explanation.concept_ids)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    col = explanation.attention[:, LABEL_ORDER.index(explanation.label)]
    return _ranked_concepts(
        col,
        explanation.scores,
        explanation.concept_ids,
        explanation.concept_modalities,
        k,
    )


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 20
    min_delta: float = 1e-4
    seed: int = 0
    class_weighted: bool = False
    val_fold: Optional[int] = None


def class_weight_vector(labels: np.ndarray, enabled: bool) -> np.ndarray:
    """Inverse-frequency weights normalized to mean 1; ones when disabled."""
    if not enabled:
        return np.ones(N_CLASSES)
    counts = np.bincount(labels, minlength=N_CLASSES).astype(np.float64)
    counts[counts == 0] = 1.0
    w = 1.0 / counts
    return w * (N_CLASSES / w.sum())


def score_matrix(
    records: Sequence[PatientRecord], bank: ConceptBank
) -> tuple[np.ndarray, np.ndarray]:
    """Stack concept scores and integer labels for a list of records."""
    rows = np.zeros((len(records), bank.n_concepts))
    labels = np.zeros(len(records), dtype=np.int64)
    for i, rec in enumerate(records):
        rows[i] = concept_scores(rec, bank).scores
        labels[i] = LABEL_ORDER.index(rec.label)
    return rows, labels


def train_predictor(
    manifest: DatasetManifest,
    bank: ConceptBank,
    config: TrainConfig = TrainConfig(),
) -> InterpretablePredictor:
    """Minimize cross-entropy of the interpretable head over the training
    folds with Adam (batch 8), early-stopping on the validation fold when one
    is held out (training loss otherwise).  Deterministic for a given seed.
    """
    train = manifest.train_records(exclude_fold=config.val_fold)
    if not train:
        raise ValueError("no training records")
    X_train, y_train = score_matrix(train, bank)
    val = manifest.fold_records(config.val_fold) if config.val_fold is not None else ()
    if val:
        X_val, y_val = score_matrix(val, bank)
    else:
        X_val, y_val = X_train, y_train
    weights = class_weight_vector(y_train, config.class_weighted)

    rng = np.random.default_rng(config.seed)
    params = {"W": np.zeros((bank.n_concepts, N_CLASSES))}
    opt = Adam(lr=config.lr, weight_decay=config.weight_decay)
    stopper = EarlyStopper(patience=config.patience, min_delta=config.min_delta)
    n = X_train.shape[0]
    for _ in range(config.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, grad = kernels.predictor_loss_grad(
                np.ascontiguousarray(X_train[idx]), y_train[idx], params["W"], weights
            )
            opt.step(params, {"W": grad})
        val_loss, _ = kernels.predictor_loss_grad(X_val, y_val, params["W"], weights)
        if stopper.update(val_loss, params):
            break
    best = stopper.best_params["W"] if stopper.best_params is not None else params["W"]
    return InterpretablePredictor(weights=best)


def predict_record(
    record: PatientRecord,
    bank: ConceptBank,
    predictor: InterpretablePredictor,
    k: int = 10,
    modalities: Optional[Iterable[Modality]] = None,
) -> Explanation:
    return predict(concept_scores(record, bank, modalities), predictor, bank, k=k)
