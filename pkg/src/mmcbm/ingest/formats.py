"""On-disk formats: JSON manifests and the binary embedding file.

Manifests are human-readable JSON (records, splits, concept vocabulary) that
reference a sibling embedding file.  Embeddings are stored as a magic-tagged
binary: a JSON header describing each row followed by one dense block of
little-endian float32 values.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from ..core import (
    Concept,
    DatasetManifest,
    EmbeddingToken,
    DiseaseLabel,
    Modality,
    PatientRecord,
    Period,
)

EMBEDDING_MAGIC = b"MMCBMEMB"
EMBEDDING_VERSION = 1
MANIFEST_FORMAT = "mmcbm/manifest"
MANIFEST_VERSION = 1


class FormatError(ValueError):
    """Raised when a file does not match its declared format."""


def write_embeddings(path: Path, rows: Sequence[tuple[str, EmbeddingToken]]) -> None:
    """Write (patient_id, token) rows: JSON header + packed float32 matrix."""
    meta = []
    for pid, tok in rows:
        meta.append(
            {
                "patient_id": pid,
                "modality": tok.modality.value,
                "period": tok.period.value if tok.period else None,
            }
        )
    dim = rows[0][1].dim if rows else 0
    header = json.dumps(
        {
            "format_version": EMBEDDING_VERSION,
            "embedding_dim": dim,
            "count": len(rows),
            "rows": meta,
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    matrix = np.empty((len(rows), dim), dtype="<f4")
    for i, (_, tok) in enumerate(rows):
        matrix[i] = tok.vector.astype("<f4")
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(matrix.tobytes(order="C"))


def read_embeddings(path: Path) -> list[tuple[str, EmbeddingToken]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(EMBEDDING_MAGIC))
        if magic != EMBEDDING_MAGIC:
            raise FormatError(f"{path}: not an embedding file (bad magic)")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format_version") != EMBEDDING_VERSION:
            raise FormatError(
                f"{path}: unsupported embedding format version {header.get('format_version')}"
            )
        dim = int(header["embedding_dim"])
        count = int(header["count"])
        payload = fh.read(count * dim * 4)
    if len(payload) != count * dim * 4:
        raise FormatError(f"{path}: truncated payload")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    rows = []
    for i, meta in enumerate(header["rows"]):
        period = Period(meta["period"]) if meta.get("period") else None
        tok = EmbeddingToken(
            modality=Modality(meta["modality"]),
            vector=matrix[i].astype(np.float64),
            period=period,
        )
        rows.append((meta["patient_id"], tok))
    return rows


def _record_to_json(rec: PatientRecord) -> dict:
    return {
        "patient_id": rec.patient_id,
        "label": rec.label.value,
        "concept_annotations": sorted(rec.concept_annotations),
        "report_text": (
            {m.value: t for m, t in rec.report_text.items()} if rec.report_text else None
        ),
    }


def _concept_to_json(c: Concept) -> dict:
    return {
        "id": c.id,
        "modality": c.modality.value,
        "text": c.text,
        "provenance": c.provenance,
        "status": c.status,
    }


def concept_from_json(obj: dict) -> Concept:
    return Concept(
        id=obj["id"],
        modality=Modality(obj["modality"]),
        text=obj["text"],
        provenance=obj.get("provenance", "report_extracted"),
        status=obj.get("status", "active"),
    )


def manifest_to_json(manifest: DatasetManifest, embeddings_file: str) -> str:
    doc = {
        "format": MANIFEST_FORMAT,
        "format_version": MANIFEST_VERSION,
        "embedding_dim": manifest.embedding_dim,
        "embeddings_file": embeddings_file,
        "records": [_record_to_json(r) for r in manifest.records],
        "split_assignments": dict(sorted(manifest.split_assignments.items())),
        "concepts": [_concept_to_json(c) for c in manifest.concepts],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def save_dataset(manifest: DatasetManifest, directory: Path,
                 manifest_name: str = "manifest.json",
                 embeddings_name: str = "embeddings.f32") -> Path:
    """Write manifest + embedding file into `directory`; returns manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = [(rec.patient_id, tok) for rec in manifest.records for tok in rec.tokens]
    write_embeddings(directory / embeddings_name, rows)
    manifest_path = directory / manifest_name
    manifest_path.write_text(manifest_to_json(manifest, embeddings_name), encoding="utf-8")
    return manifest_path


def load_dataset(manifest_path: Path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    if doc.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{manifest_path}: not a manifest (format={doc.get('format')!r})")
    if doc.get("format_version") != MANIFEST_VERSION:
        raise FormatError(f"{manifest_path}: unsupported manifest version")
    rows = read_embeddings(manifest_path.parent / doc["embeddings_file"])
    tokens_by_pid: dict[str, list[EmbeddingToken]] = {}
    for pid, tok in rows:
        tokens_by_pid.setdefault(pid, []).append(tok)
    records = []
    for rec in doc["records"]:
        report = rec.get("report_text")
        records.append(
            PatientRecord(
                patient_id=rec["patient_id"],
                label=DiseaseLabel(rec["label"]),
                tokens=tuple(tokens_by_pid.get(rec["patient_id"], ())),
                concept_annotations=frozenset(rec.get("concept_annotations", ())),
                report_text=(
                    {Modality(m): t for m, t in report.items()} if report else None
                ),
            )
        )
    return DatasetManifest(
        records=tuple(records),
        embedding_dim=int(doc["embedding_dim"]),
        split_assignments=doc.get("split_assignments", {}),
        concepts=tuple(concept_from_json(c) for c in doc.get("concepts", ())),
    )
