"""Shared domain types for the multimodal concept bottleneck toolkit.

Everything downstream (ingest, CAV grounding, prediction, serving) speaks in
terms of these value objects.  All of them are immutable: token vectors are
frozen numpy arrays, records and manifests are frozen dataclasses, so they can
be shared freely between threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class Modality(str, Enum):
    """Imaging modality of a token or concept."""

    FA = "FA"
    ICGA = "ICGA"
    US = "US"


class DiseaseLabel(str, Enum):
    """The three target classes, in canonical column order."""

    HEMANGIOMA = "hemangioma"
    METASTATIC_CARCINOMA = "metastatic_carcinoma"
    MELANOMA = "melanoma"


class Period(str, Enum):
    """Acquisition phase of a time-series modality (FA/ICGA only)."""

    EARLY = "early"
    MIDDLE = "middle"
    LATE = "late"


#: Canonical orderings used for matrix columns / concept blocks everywhere.
MODALITY_ORDER: tuple[Modality, ...] = (Modality.FA, Modality.ICGA, Modality.US)
LABEL_ORDER: tuple[DiseaseLabel, ...] = tuple(DiseaseLabel)
N_CLASSES = len(LABEL_ORDER)

#: Default embedding width when a manifest does not override it.
DEFAULT_EMBEDDING_DIM = 1280

# Period boundaries in minutes: (early/middle threshold, middle/late threshold).
# Lower bounds are inclusive: t in [5, 10) is FA middle, t >= 10 is FA late.
_PERIOD_BOUNDS = {
    Modality.FA: (5.0, 10.0),
    Modality.ICGA: (5.0, 20.0),
}


def class_index(label: DiseaseLabel) -> int:
    return LABEL_ORDER.index(label)


def period_of(modality: Modality, minutes: float) -> Period:
    """Bin an acquisition time into early/middle/late for FA or ICGA.

    Raises ValueError for US (no period axis) and for negative times.
    """
    if modality not in _PERIOD_BOUNDS:
        raise ValueError(f"{modality.value} images have no acquisition period")
    if minutes < 0:
        raise ValueError(f"acquisition time must be non-negative, got {minutes}")
    early_end, middle_end = _PERIOD_BOUNDS[modality]
    if minutes < early_end:
        return Period.EARLY
    if minutes < middle_end:
        return Period.MIDDLE
    return Period.LATE


@dataclass(frozen=True)
class EmbeddingToken:
    """One encoded image: a dense feature vector tagged with its modality.

    FA/ICGA tokens may carry a period; US tokens never do.  The vector is
    stored read-only so tokens can be shared without defensive copies.
    """

    modality: Modality
    vector: np.ndarray
    period: Optional[Period] = None

    def __post_init__(self) -> None:
        vec = np.ascontiguousarray(self.vector, dtype=np.float64)
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


_PROVENANCES = ("report_extracted", "expert_added")
_STATUSES = ("active", "expert_removed")


@dataclass(frozen=True)
class Concept:
    """A named clinical finding tied to one modality."""

    id: str
    modality: Modality
    text: str
    provenance: str = "report_extracted"
    status: str = "active"

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"concept {self.id!r} has empty text")
        if self.provenance not in _PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.status not in _STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def active(self) -> bool:
        return self.status == "active"


@dataclass(frozen=True)
class PatientRecord:
    """All model-facing data for one patient."""

    patient_id: str
    label: DiseaseLabel
    tokens: tuple[EmbeddingToken, ...]
    concept_annotations: frozenset[str] = frozenset()
    report_text: Optional[Mapping[Modality, str]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(
            self, "concept_annotations", frozenset(self.concept_annotations)
        )

    def modalities(self) -> frozenset[Modality]:
        return frozenset(tok.modality for tok in self.tokens)

    def tokens_of(self, modality: Modality) -> tuple[EmbeddingToken, ...]:
        return tuple(tok for tok in self.tokens if tok.modality == modality)

    @property
    def is_multimodal(self) -> bool:
        return self.modalities() == frozenset(MODALITY_ORDER)


TEST_SPLIT = "test"
_FOLD_RE = re.compile(r"^fold_([1-9]\d*)$")


def fold_name(i: int) -> str:
    return f"fold_{i}"


def parse_fold(split: str) -> Optional[int]:
    """fold_3 -> 3; None for anything else (including 'test')."""
    m = _FOLD_RE.match(split)
    return int(m.group(1)) if m else None


@dataclass(frozen=True)
class DatasetManifest:
    """A cohort: records, their split assignments, and the concept vocabulary.

    `split_assignments` maps every patient_id to 'test' or 'fold_1'..'fold_k'.
    The concept vocabulary travels with the data so annotations can be
    validated without an external bank.
    """

    records: tuple[PatientRecord, ...]
    embedding_dim: int = DEFAULT_EMBEDDING_DIM
    split_assignments: Mapping[str, str] = field(default_factory=dict)
    concepts: tuple[Concept, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "split_assignments", dict(self.split_assignments))
        object.__setattr__(self, "concepts", tuple(self.concepts))

    def record(self, patient_id: str) -> PatientRecord:
        for rec in self.records:
            if rec.patient_id == patient_id:
                return rec
        raise KeyError(patient_id)

    def concept_by_id(self, concept_id: str) -> Concept:
        for c in self.concepts:
            if c.id == concept_id:
                return c
        raise KeyError(concept_id)

    @property
    def n_folds(self) -> int:
        folds = [parse_fold(s) for s in self.split_assignments.values()]
        return max((f for f in folds if f is not None), default=0)

    def split_records(self, split: str) -> tuple[PatientRecord, ...]:
        return tuple(
            r
            for r in self.records
            if self.split_assignments.get(r.patient_id) == split
        )

    def test_records(self) -> tuple[PatientRecord, ...]:
        return self.split_records(TEST_SPLIT)

    def fold_records(self, fold: int) -> tuple[PatientRecord, ...]:
        return self.split_records(fold_name(fold))

    def train_records(self, exclude_fold: Optional[int] = None) -> tuple[PatientRecord, ...]:
        """All non-test records, optionally holding out one fold."""
        held_out = fold_name(exclude_fold) if exclude_fold is not None else None
        out = []
        for r in self.records:
            split = self.split_assignments.get(r.patient_id)
            if split == TEST_SPLIT or split is None:
                continue
            if split == held_out:
                continue
            out.append(r)
        return tuple(out)


@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    patient_id: Optional[str] = None

    def __str__(self) -> str:
        where = f" [{self.patient_id}]" if self.patient_id else ""
        return f"{self.code}{where}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def valid(self) -> bool:
        return not self.violations

    def __iter__(self):
        return iter(self.violations)

    def __len__(self) -> int:
        return len(self.violations)


def _check_record(rec: PatientRecord, dim: int, vocab: Mapping[str, Concept]) -> Iterable[Violation]:
    if not rec.tokens:
        yield Violation("empty_record", "record has no embedding tokens", rec.patient_id)
    present = rec.modalities()
    for tok in rec.tokens:
        if tok.dim != dim:
            yield Violation(
                "dimension_mismatch",
                f"token vector has length {tok.dim}, manifest declares {dim}",
                rec.patient_id,
            )
        if not np.all(np.isfinite(tok.vector)):
            yield Violation("nonfinite_vector", "token vector has non-finite entries", rec.patient_id)
        if tok.modality == Modality.US and tok.period is not None:
            yield Violation("us_period", "US token carries a period", rec.patient_id)
    for cid in sorted(rec.concept_annotations):
        concept = vocab.get(cid)
        if concept is None:
            yield Violation("orphan_annotation", f"annotated concept {cid!r} is not in the bank", rec.patient_id)
        elif concept.modality not in present:
            yield Violation(
                "annotation_modality_absent",
                f"concept {cid!r} is {concept.modality.value} but record has no {concept.modality.value} tokens",
                rec.patient_id,
            )


def validate_manifest(manifest: DatasetManifest) -> ValidationReport:
    """Check every structural invariant; violations are data, not exceptions."""
    violations: list[Violation] = []
    vocab: dict[str, Concept] = {}
    seen_keys: set[tuple[str, Modality]] = set()
    for c in manifest.concepts:
        if (c.id, c.modality) in seen_keys:
            violations.append(Violation("duplicate_concept", f"({c.id!r}, {c.modality.value}) appears twice"))
        seen_keys.add((c.id, c.modality))
        vocab[c.id] = c

    if manifest.embedding_dim <= 0:
        violations.append(Violation("bad_dimension", f"embedding_dim = {manifest.embedding_dim}"))

    seen_pids: set[str] = set()
    for rec in manifest.records:
        if rec.patient_id in seen_pids:
            violations.append(Violation("duplicate_patient", "patient_id appears twice", rec.patient_id))
        seen_pids.add(rec.patient_id)
        violations.extend(_check_record(rec, manifest.embedding_dim, vocab))

    assigned = manifest.split_assignments
    n_folds = manifest.n_folds
    valid_splits = {TEST_SPLIT} | {fold_name(i) for i in range(1, n_folds + 1)}
    for pid, split in sorted(assigned.items()):
        if pid not in seen_pids:
            violations.append(Violation("unknown_patient_in_split", f"split assigns unknown patient", pid))
        if split not in valid_splits:
            violations.append(Violation("bad_split_name", f"unrecognized split {split!r}", pid))
    fold_ids = sorted({parse_fold(s) for s in assigned.values() if parse_fold(s) is not None})
    if fold_ids and fold_ids != list(range(1, n_folds + 1)):
        violations.append(Violation("fold_gap", f"fold numbering is not contiguous: {fold_ids}"))
    for rec in manifest.records:
        split = assigned.get(rec.patient_id)
        if split is None:
            violations.append(Violation("unassigned_patient", "patient missing from split assignment", rec.patient_id))
        elif split == TEST_SPLIT and not rec.is_multimodal:
            violations.append(
                Violation("non_mm_test_patient", "test patient lacks all 3 modalities", rec.patient_id)
            )
    return ValidationReport(tuple(violations))


def canonical_concept_order(concepts: Sequence[Concept]) -> tuple[Concept, ...]:
    """FA block, then ICGA, then US, each alphabetical by concept id.

    This is the row order of the concept bank matrix and the index space of
    every score vector, weight matrix, and report.
    """
    return tuple(
        sorted(concepts, key=lambda c: (MODALITY_ORDER.index(c.modality), c.id))
    )
