"""Single-file model bundles: concept bank + predictor + baseline + config.

The bundle is JSON with raw little-endian array payloads in base64, so every
floating-point value round-trips bit-exactly.  A sha256 over the canonical
payload detects corruption on load.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..baseline import BaselineParams
from ..cav import CAV, ConceptBank
from ..model import InterpretablePredictor
from .formats import concept_from_json

BUNDLE_FORMAT = "mmcbm/bundle"
BUNDLE_VERSION = 1


class BundleError(ValueError):
    pass


class BundleChecksumError(BundleError):
    pass


class BundleDimensionError(BundleError):
    pass


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr)
    le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    return {
        "dtype": str(arr.dtype),
        "shape": list(arr.shape),
        "data": base64.b64encode(le.tobytes(order="C")).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    dt = np.dtype(obj["dtype"]).newbyteorder("<")
    arr = np.frombuffer(raw, dtype=dt).reshape(obj["shape"])
    return arr.astype(np.dtype(obj["dtype"]), copy=True)


@dataclass(frozen=True)
class ModelBundle:
    bank: ConceptBank
    cavs: tuple[CAV, ...]
    predictor: Optional[InterpretablePredictor]
    baseline: Optional[BaselineParams]
    config: dict


def _payload(bundle: ModelBundle) -> dict:
    return {
        "embedding_dim": bundle.bank.dim,
        "concepts": [
            {
                "id": c.id,
                "modality": c.modality.value,
                "text": c.text,
                "provenance": c.provenance,
                "status": c.status,
            }
            for c in bundle.bank.concepts
        ],
        "bank_matrix": _encode_array(bundle.bank.matrix),
        "cavs": [
            {
                "concept_id": cav.concept_id,
                "weight": _encode_array(cav.weight),
                "bias": cav.bias,
                "train_accuracy": cav.train_accuracy,
                "test_accuracy": cav.test_accuracy,
                "converged": cav.converged,
            }
            for cav in bundle.cavs
        ],
        "predictor": (
            _encode_array(bundle.predictor.weights) if bundle.predictor else None
        ),
        "baseline": (
            {k: _encode_array(v) for k, v in bundle.baseline.as_dict().items()}
            if bundle.baseline
            else None
        ),
        "config": bundle.config,
    }


def _checksum(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_bundle(bundle: ModelBundle, path: Path) -> None:
    payload = _payload(bundle)
    doc = {
        "format": BUNDLE_FORMAT,
        "format_version": BUNDLE_VERSION,
        "checksum": _checksum(payload),
        "payload": payload,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_bundle(path: Path) -> ModelBundle:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != BUNDLE_FORMAT:
        raise BundleError(f"{path}: not a model bundle")
    if doc.get("format_version") != BUNDLE_VERSION:
        raise BundleError(
            f"{path}: bundle version {doc.get('format_version')} not supported"
        )
    payload = doc["payload"]
    if _checksum(payload) != doc.get("checksum"):
        raise BundleChecksumError(f"{path}: checksum mismatch, file corrupted")

    concepts = tuple(concept_from_json(c) for c in payload["concepts"])
    matrix = _decode_array(payload["bank_matrix"])
    declared = int(payload["embedding_dim"])
    if matrix.ndim != 2 or (matrix.shape[0] > 0 and matrix.shape[1] != declared):
        raise BundleDimensionError(
            f"{path}: bank matrix is {matrix.shape}, embedding_dim says {declared}"
        )
    if matrix.shape[0] != len(concepts):
        raise BundleDimensionError(
            f"{path}: {matrix.shape[0]} bank rows for {len(concepts)} concepts"
        )
    bank = ConceptBank(concepts=concepts, matrix=matrix)
    cavs = tuple(
        CAV(
            concept_id=c["concept_id"],
            weight=_decode_array(c["weight"]),
            bias=float(c["bias"]),
            train_accuracy=float(c["train_accuracy"]),
            test_accuracy=(
                None if c["test_accuracy"] is None else float(c["test_accuracy"])
            ),
            converged=bool(c["converged"]),
        )
        for c in payload["cavs"]
    )
    predictor = None
    if payload.get("predictor") is not None:
        weights = _decode_array(payload["predictor"])
        if weights.shape[0] != len(concepts):
            raise BundleDimensionError(
                f"{path}: predictor has {weights.shape[0]} rows for {len(concepts)} concepts"
            )
        predictor = InterpretablePredictor(weights=weights)
    baseline = None
    if payload.get("baseline") is not None:
        baseline = BaselineParams.from_dict(
            {k: _decode_array(v) for k, v in payload["baseline"].items()}
        )
        if baseline.dim != declared:
            raise BundleDimensionError(
                f"{path}: baseline dimension {baseline.dim} != embedding_dim {declared}"
            )
    return ModelBundle(
        bank=bank,
        cavs=cavs,
        predictor=predictor,
        baseline=baseline,
        config=payload.get("config", {}),
    )
