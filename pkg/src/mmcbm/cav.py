"""Concept grounding: per-concept linear SVMs and the concept bank matrix.

Each active concept is grounded by training a binary linear SVM that separates
same-modality tokens of annotated patients (positives) from all other
same-modality tokens (negatives).  The hyperplane normal is the concept's
activation vector; unit-normalized rows are stacked, FA block first, then
ICGA, then US, alphabetical by id inside each block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import (
    Concept,
    DatasetManifest,
    Modality,
    PatientRecord,
    canonical_concept_order,
)

BANK_FORMAT = "mmcbm/concept-bank"
BANK_VERSION = 1


class ConceptDataError(ValueError):
    """Positive or negative sample set is empty for a concept."""


@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    max_epochs: int = 1000
    tol: float = 1e-4
    # The solver is full-batch and deterministic; the seed is carried for
    # interface stability only.
    seed: int = 0


@dataclass(frozen=True)
class CAV:
    """Trained hyperplane for one concept, plus its quality measures."""

    concept_id: str
    weight: np.ndarray
    bias: float
    train_accuracy: float
    test_accuracy: Optional[float]
    converged: bool

    def __post_init__(self) -> None:
        w = np.ascontiguousarray(self.weight, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)

    @property
    def separated(self) -> bool:
        return self.train_accuracy == 1.0


def decision_values(X: np.ndarray, w: np.ndarray, b: float) -> np.ndarray:
    return X @ w + b


def _accuracy(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    # sign(0) counts as +1
    pred = np.where(decision_values(X, w, b) >= 0.0, 1.0, -1.0)
    return float(np.mean(pred == y))


def concept_sample_arrays(
    concept: Concept, records: Sequence[PatientRecord]
) -> tuple[np.ndarray, np.ndarray]:
    """Split same-modality tokens into (positives, negatives) by annotation.

    Either side may be empty; callers that require both use
    build_concept_dataset.
    """
    pos, neg = [], []
    for rec in records:
        target = pos if concept.id in rec.concept_annotations else neg
        for tok in rec.tokens_of(concept.modality):
            target.append(tok.vector)
    dim = pos[0].shape[0] if pos else (neg[0].shape[0] if neg else 0)
    pos_arr = np.asarray(pos, dtype=np.float64).reshape(len(pos), dim)
    neg_arr = np.asarray(neg, dtype=np.float64).reshape(len(neg), dim)
    return pos_arr, neg_arr


def build_concept_dataset(
    concept: Concept, records: Sequence[PatientRecord]
) -> tuple[np.ndarray, np.ndarray]:
    positives, negatives = concept_sample_arrays(concept, records)
    if positives.shape[0] == 0:
        raise ConceptDataError(f"concept {concept.id!r}: no positive samples")
    if negatives.shape[0] == 0:
        raise ConceptDataError(f"concept {concept.id!r}: no negative samples")
    return positives, negatives


def train_cav(
    positives: np.ndarray,
    negatives: np.ndarray,
    config: SvmConfig = SvmConfig(),
    holdout: Optional[tuple[np.ndarray, np.ndarray]] = None,
    concept_id: str = "",
) -> CAV:
    """Fit the primal hinge-loss SVM; optionally score a held-out (pos, neg)
    pair for test accuracy."""
    if positives.shape[0] == 0 or negatives.shape[0] == 0:
        raise ConceptDataError("both sample sets must be non-empty")
    if positives.shape[1] != negatives.shape[1]:
        raise ValueError("positive/negative dimension mismatch")
    X = np.ascontiguousarray(np.vstack([positives, negatives]))
    y = np.concatenate([
        np.ones(positives.shape[0]),
        -np.ones(negatives.shape[0]),
    ])
    w, b, _, converged = kernels.svm_train(X, y, config.C, config.max_epochs, config.tol)
    test_acc = None
    if holdout is not None:
        ho_pos, ho_neg = holdout
        if ho_pos.shape[0] and ho_neg.shape[0]:
            ho_X = np.vstack([ho_pos, ho_neg])
            ho_y = np.concatenate([np.ones(ho_pos.shape[0]), -np.ones(ho_neg.shape[0])])
            test_acc = _accuracy(ho_X, ho_y, w, b)
    return CAV(
        concept_id=concept_id,
        weight=w,
        bias=float(b),
        train_accuracy=_accuracy(X, y, w, b),
        test_accuracy=test_acc,
        converged=bool(converged),
    )


@dataclass(frozen=True)
class ConceptBank:
    """Active concepts in canonical order plus the unit-row CAV matrix."""

    concepts: tuple[Concept, ...]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.ascontiguousarray(self.matrix, dtype=np.float64)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(
            self, "_index", {c.id: i for i, c in enumerate(self.concepts)}
        )

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.concepts)

    def index_of(self, concept_id: str) -> int:
        return self._index[concept_id]

    def modality_of(self, concept_id: str) -> Modality:
        return self.concepts[self.index_of(concept_id)].modality

    def rows_of(self, modality: Modality) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.concepts) if c.modality == modality],
            dtype=np.int64,
        )


def assemble_bank(concepts: Sequence[Concept], cavs: Sequence[CAV]) -> ConceptBank:
    """Stack unit-normalized CAV directions in canonical concept order.

    Input order is irrelevant; the bank always comes out FA/ICGA/US,
    alphabetical by id within each modality.
    """
    active = [c for c in concepts if c.active]
    by_id = {cav.concept_id: cav for cav in cavs}
    if len(by_id) != len(cavs):
        raise ValueError("duplicate CAV concept ids")
    missing = [c.id for c in active if c.id not in by_id]
    if missing:
        raise ValueError(f"no CAV for concepts {missing}")
    ordered = canonical_concept_order(active)
    dim = by_id[ordered[0].id].weight.shape[0] if ordered else 0
    matrix = np.empty((len(ordered), dim))
    for i, concept in enumerate(ordered):
        w = by_id[concept.id].weight
        if w.shape[0] != dim:
            raise ValueError(
                f"CAV for {concept.id!r} has dimension {w.shape[0]}, expected {dim}"
            )
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ValueError(f"CAV for {concept.id!r} is the zero vector")
        matrix[i] = w / norm
    return ConceptBank(concepts=tuple(ordered), matrix=matrix)


def train_concept_bank(
    manifest: DatasetManifest,
    config: SvmConfig = SvmConfig(),
    concepts: Optional[Sequence[Concept]] = None,
    train_records: Optional[Sequence[PatientRecord]] = None,
) -> tuple[ConceptBank, list[CAV]]:
    """Train one CAV per active concept on the training split and score each
    against the multimodal test split.

    Concepts that have no positives or no negatives in the training records
    are skipped (they cannot be grounded); the returned bank holds only the
    grounded ones.
    """
    pool = canonical_concept_order(
        [c for c in (concepts if concepts is not None else manifest.concepts) if c.active]
    )
    train = tuple(train_records) if train_records is not None else manifest.train_records()
    test = manifest.test_records()
    cavs: list[CAV] = []
    grounded: list[Concept] = []
    for concept in pool:
        try:
            pos, neg = build_concept_dataset(concept, train)
        except ConceptDataError:
            continue
        holdout = concept_sample_arrays(concept, test) if test else None
        cavs.append(train_cav(pos, neg, config, holdout=holdout, concept_id=concept.id))
        grounded.append(concept)
    if not grounded:
        return ConceptBank(concepts=(), matrix=np.zeros((0, manifest.embedding_dim))), []
    bank = assemble_bank(grounded, cavs)
    return bank, cavs


def save_bank(path: Path, bank: ConceptBank, cavs: Sequence[CAV]) -> None:
    by_id = {cav.concept_id: cav for cav in cavs}
    doc = {
        "format": BANK_FORMAT,
        "format_version": BANK_VERSION,
        "embedding_dim": bank.dim,
        "concepts": [
            {
                "id": c.id,
                "modality": c.modality.value,
                "text": c.text,
                "provenance": c.provenance,
                "status": c.status,
            }
            for c in bank.concepts
        ],
        "cavs": [
            {
                "concept_id": cid,
                "weight": list(by_id[cid].weight) if cid in by_id else None,
                "bias": by_id[cid].bias if cid in by_id else None,
                "train_accuracy": by_id[cid].train_accuracy if cid in by_id else None,
                "test_accuracy": by_id[cid].test_accuracy if cid in by_id else None,
                "converged": by_id[cid].converged if cid in by_id else None,
            }
            for cid in bank.ids()
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")


def load_bank(path: Path) -> tuple[ConceptBank, list[CAV]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != BANK_FORMAT:
        raise ValueError(f"{path}: not a concept bank file")
    concepts = [
        Concept(
            id=c["id"],
            modality=Modality(c["modality"]),
            text=c["text"],
            provenance=c.get("provenance", "report_extracted"),
            status=c.get("status", "active"),
        )
        for c in doc["concepts"]
    ]
    cavs = [
        CAV(
            concept_id=c["concept_id"],
            weight=np.asarray(c["weight"], dtype=np.float64),
            bias=float(c["bias"]),
            train_accuracy=float(c["train_accuracy"]),
            test_accuracy=None if c["test_accuracy"] is None else float(c["test_accuracy"]),
            converged=bool(c["converged"]),
        )
        for c in doc["cavs"]
    ]
    return assemble_bank(concepts, cavs), cavs
