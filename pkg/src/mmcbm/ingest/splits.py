"""Patient-level split generation: fixed multimodal test set + stratified folds."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..core import (
    Concept,
    DatasetManifest,
    DiseaseLabel,
    LABEL_ORDER,
    MODALITY_ORDER,
    PatientRecord,
    TEST_SPLIT,
    fold_name,
)


class SplitError(ValueError):
    pass


def _modality_key(rec: PatientRecord) -> tuple[int, ...]:
    present = rec.modalities()
    return tuple(i for i, m in enumerate(MODALITY_ORDER) if m in present)


def generate_splits(
    records: Sequence[PatientRecord],
    test_fraction: float,
    n_folds: int,
    seed: int,
    embedding_dim: Optional[int] = None,
    concepts: Sequence[Concept] = (),
) -> DatasetManifest:
    """Assign every patient to 'test' or one of n_folds folds.

    Only patients with all three modalities are eligible for test; per class,
    floor(test_fraction * n_multimodal) of them are sampled.  The rest are
    dealt into folds stratified by (class, set of present modalities), so
    per-class fold sizes are balanced within one patient.  Deterministic for
    a given seed.
    """
    if not 0.0 < test_fraction < 1.0:
        raise SplitError(f"test_fraction must be in (0,1), got {test_fraction}")
    if n_folds < 2:
        raise SplitError(f"n_folds must be >= 2, got {n_folds}")
    rng = np.random.default_rng(seed)
    by_class: dict[DiseaseLabel, list[PatientRecord]] = {lbl: [] for lbl in LABEL_ORDER}
    for rec in records:
        by_class[rec.label].append(rec)

    assignments: dict[str, str] = {}
    for label in LABEL_ORDER:
        mm = sorted(
            (r.patient_id for r in by_class[label] if r.is_multimodal)
        )
        if not mm:
            raise SplitError(f"class {label.value} has no multimodal patients")
        order = rng.permutation(len(mm))
        n_test = int(np.floor(test_fraction * len(mm)))
        for idx in order[:n_test]:
            assignments[mm[idx]] = TEST_SPLIT

    for class_idx, label in enumerate(LABEL_ORDER):
        remaining = [
            r for r in by_class[label] if r.patient_id not in assignments
        ]
        strata: dict[tuple[int, ...], list[str]] = {}
        for rec in remaining:
            strata.setdefault(_modality_key(rec), []).append(rec.patient_id)
        cursor = class_idx % n_folds
        for key in sorted(strata):
            pids = sorted(strata[key])
            order = rng.permutation(len(pids))
            for idx in order:
                assignments[pids[idx]] = fold_name(cursor % n_folds + 1)
                cursor += 1

    dim = embedding_dim
    if dim is None:
        dim = records[0].tokens[0].dim if records and records[0].tokens else 0
    return DatasetManifest(
        records=tuple(records),
        embedding_dim=dim,
        split_assignments=assignments,
        concepts=tuple(concepts),
    )
