"""Test-time intervention: edit concept scores, re-predict, attribute.

A session wraps one base score vector plus a model snapshot.  Edits replace
individual concept scores (cosine range, masked-in concepts only); the
prediction is re-derived from scratch on every edit, and the per-class effect
of an edit is exactly sigmoid(W[j, c]) * (new - old) because logits are sums
of per-concept contributions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .cav import ConceptBank
from .core import DiseaseLabel, LABEL_ORDER
from .model import (
    ConceptScoreVector,
    Explanation,
    InterpretablePredictor,
    predict,
)


class InterventionError(ValueError):
    pass


class MaskedOutConceptError(InterventionError):
    """The concept's modality is absent from the input; it cannot be edited."""


@dataclass(frozen=True)
class AuditEntry:
    timestamp: float
    concept_id: str
    old: float
    new: float


@dataclass
class InterventionSession:
    """Single-writer editing session over one prediction."""

    base: ConceptScoreVector
    bank: ConceptBank
    predictor: InterpretablePredictor
    k: int = 10
    edits: dict[str, float] = field(default_factory=dict)
    log: list[AuditEntry] = field(default_factory=list)

    def current_scores(self) -> ConceptScoreVector:
        scores = self.base.scores.copy()
        for cid, value in self.edits.items():
            scores[self.bank.index_of(cid)] = value
        return ConceptScoreVector(scores=scores, modality_mask=self.base.modality_mask)

    def explain(self) -> Explanation:
        return predict(self.current_scores(), self.predictor, self.bank, k=self.k)


def start_session(
    base: ConceptScoreVector,
    bank: ConceptBank,
    predictor: InterpretablePredictor,
    k: int = 10,
) -> InterventionSession:
    return InterventionSession(base=base, bank=bank, predictor=predictor, k=k)


def intervene(session: InterventionSession, concept_id: str, value: float) -> Explanation:
    """Replace one concept's score and return the updated prediction."""
    try:
        idx = session.bank.index_of(concept_id)
    except KeyError:
        raise InterventionError(f"unknown concept {concept_id!r}") from None
    if not session.base.modality_mask[idx]:
        raise MaskedOutConceptError(
            f"concept {concept_id!r} is masked out (modality absent from input)"
        )
    if not -1.0 <= value <= 1.0:
        raise InterventionError(f"score must be in [-1, 1], got {value}")
    old = float(session.current_scores().scores[idx])
    session.edits[concept_id] = float(value)
    session.log.append(
        AuditEntry(timestamp=time.time(), concept_id=concept_id, old=old, new=float(value))
    )
    return session.explain()


def contribution(explanation: Explanation, concept_id: str, label: DiseaseLabel) -> float:
    """The exact additive share of one concept in one class logit."""
    try:
        idx = explanation.concept_ids.index(concept_id)
    except ValueError:
        raise InterventionError(f"unknown concept {concept_id!r}") from None
    return float(explanation.attention[idx, LABEL_ORDER.index(label)])


def reset(session: InterventionSession) -> Explanation:
    """Drop all edits (the audit log survives) and re-predict on base scores."""
    session.edits.clear()
    return session.explain()
