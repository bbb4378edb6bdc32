"""HTTP API over the trained model: predict, intervene, verify, report.

The model snapshot (bank + predictor) is immutable and shared across requests;
intervention sessions live in an in-memory TTL store with one lock each, so
edits on distinct sessions never interfere.  Responses follow the JSON schemas
shipped in mmcbm/schemas/.
"""

from __future__ import annotations

import json
import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from fastapi import Body, FastAPI, Header, HTTPException, Request

from .cav import CAV, ConceptBank
from .concepts_llm import (
    ConceptEdit,
    EditError,
    LLMProvider,
    append_edit,
    apply_edits,
    edit_from_json,
    generate_report,
)
from .core import (
    DatasetManifest,
    EmbeddingToken,
    LABEL_ORDER,
    Modality,
    PatientRecord,
    Period,
)
from .intervention import (
    InterventionError,
    InterventionSession,
    MaskedOutConceptError,
    intervene,
    start_session,
)
from .model import (
    Explanation,
    InterpretablePredictor,
    concept_scores,
    predict,
)

DEFAULT_SESSION_TTL = 30 * 60.0


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status_code=status, detail={"error": code, "message": message})


class SessionExpired(KeyError):
    pass


@dataclass
class _Entry:
    session: InterventionSession
    last_explanation: Explanation
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_used: float = 0.0


class SessionStore:
    """TTL-evicting map of session_id -> intervention session.

    Expired ids are remembered so the API can distinguish "expired" from
    "never existed" instead of serving stale predictions.
    """

    def __init__(self, ttl_seconds: float = DEFAULT_SESSION_TTL,
                 clock: Callable[[], float] = time.monotonic):
        self.ttl = ttl_seconds
        self.clock = clock
        self._entries: dict[str, _Entry] = {}
        self._expired: set[str] = set()
        self._lock = threading.Lock()

    def create(self, session: InterventionSession, explanation: Explanation) -> str:
        session_id = secrets.token_urlsafe(16)
        entry = _Entry(session=session, last_explanation=explanation,
                       last_used=self.clock())
        with self._lock:
            self._entries[session_id] = entry
        return session_id

    def get(self, session_id: str) -> _Entry:
        with self._lock:
            entry = self._entries.get(session_id)
            if entry is None:
                if session_id in self._expired:
                    raise SessionExpired(session_id)
                raise KeyError(session_id)
            if self.clock() - entry.last_used > self.ttl:
                del self._entries[session_id]
                self._expired.add(session_id)
                raise SessionExpired(session_id)
            entry.last_used = self.clock()
            return entry


@dataclass
class ServiceState:
    """Everything the endpoints need; the model snapshot is read-only."""

    bank: Optional[ConceptBank]
    predictor: Optional[InterpretablePredictor]
    cavs: tuple[CAV, ...] = ()
    embedding_dim: int = 0
    k: int = 10
    manifest: Optional[DatasetManifest] = None
    provider: Optional[LLMProvider] = None
    sessions: SessionStore = field(default_factory=SessionStore)
    edit_token: Optional[str] = None
    edit_log_path: Optional[Path] = None
    edit_log: list[ConceptEdit] = field(default_factory=list)
    concepts_state: list = field(default_factory=list)
    _edit_lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self) -> None:
        if self.bank is not None and not self.concepts_state:
            self.concepts_state = list(self.bank.concepts)
        if self.bank is not None and not self.embedding_dim:
            self.embedding_dim = self.bank.dim


def _explanation_payload(session_id: str, explanation: Explanation, k: int) -> dict:
    return {
        "session_id": session_id,
        "label": explanation.label.value,
        "labels": [lbl.value for lbl in LABEL_ORDER],
        "logits": [float(v) for v in explanation.logits],
        "probabilities": [float(v) for v in explanation.probabilities],
        "k": k,
        "top_k": [
            {
                "concept_id": rc.concept_id,
                "modality": rc.modality.value,
                "attention": rc.attention,
                "rank": rc.rank,
                "score": rc.score,
            }
            for rc in explanation.top_k
        ],
        "masked_in": [
            cid
            for cid, masked in zip(
                explanation.concept_ids, explanation.scores.modality_mask
            )
            if masked
        ],
    }


def _tokens_from_payload(payload: list, embedding_dim: int) -> tuple[EmbeddingToken, ...]:
    tokens = []
    for item in payload:
        if not isinstance(item, dict) or "modality" not in item or "vector" not in item:
            raise _error(400, "malformed_payload", "each token needs modality and vector")
        try:
            modality = Modality(item["modality"])
        except ValueError:
            raise _error(400, "malformed_payload", f"unknown modality {item['modality']!r}")
        period = None
        if item.get("period"):
            try:
                period = Period(item["period"])
            except ValueError:
                raise _error(400, "malformed_payload", f"unknown period {item['period']!r}")
        vector = item["vector"]
        if not isinstance(vector, list) or not all(
            isinstance(v, (int, float)) for v in vector
        ):
            raise _error(400, "malformed_payload", "vector must be a list of numbers")
        if len(vector) != embedding_dim:
            raise _error(
                422,
                "dimension_mismatch",
                f"vector has length {len(vector)}, model expects {embedding_dim}",
            )
        tokens.append(
            EmbeddingToken(modality=modality, vector=np.asarray(vector, dtype=np.float64),
                           period=period)
        )
    if not tokens:
        raise _error(400, "malformed_payload", "token list is empty")
    return tuple(tokens)


_request_log = logging.getLogger("mmcbm.requests")


def create_app(state: ServiceState, static_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="concept bottleneck service")
    app.state.service = state

    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        _request_log.info(
            json.dumps(
                {
                    "method": request.method,
                    "path": request.url.path,
                    "status": response.status_code,
                    "ms": round((time.perf_counter() - start) * 1000, 2),
                }
            )
        )
        return response

    def _require_model() -> tuple[ConceptBank, InterpretablePredictor]:
        if state.bank is None or state.predictor is None:
            raise _error(503, "no_model", "no model snapshot loaded")
        return state.bank, state.predictor

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": state.bank is not None}

    @app.post("/predict")
    def predict_endpoint(payload: dict = Body(...)):
        bank, predictor = _require_model()
        if not isinstance(payload, dict):
            raise _error(400, "malformed_payload", "body must be a JSON object")
        if ("patient_id" in payload) == ("tokens" in payload):
            raise _error(
                400, "malformed_payload", "provide exactly one of patient_id or tokens"
            )
        if "patient_id" in payload:
            if state.manifest is None:
                raise _error(400, "malformed_payload", "no patient manifest loaded")
            try:
                record = state.manifest.record(str(payload["patient_id"]))
            except KeyError:
                raise _error(404, "unknown_patient", f"no patient {payload['patient_id']!r}")
        else:
            tokens = _tokens_from_payload(payload["tokens"], state.embedding_dim)
            record = PatientRecord(
                patient_id="adhoc", label=LABEL_ORDER[0], tokens=tokens
            )
        scores = concept_scores(record, bank)
        explanation = predict(scores, predictor, bank, k=state.k)
        session = start_session(scores, bank, predictor, k=state.k)
        session_id = state.sessions.create(session, explanation)
        return _explanation_payload(session_id, explanation, state.k)

    @app.post("/sessions/{session_id}/intervene")
    def intervene_endpoint(session_id: str, payload: dict = Body(...)):
        _require_model()
        concept_id = payload.get("concept_id")
        value = payload.get("value")
        if not isinstance(concept_id, str) or not isinstance(value, (int, float)):
            raise _error(400, "malformed_payload", "need concept_id (str) and value (number)")
        try:
            entry = state.sessions.get(session_id)
        except SessionExpired:
            raise _error(404, "session_expired", "session expired")
        except KeyError:
            raise _error(404, "unknown_session", f"no session {session_id!r}")
        with entry.lock:
            before = entry.last_explanation
            try:
                explanation = intervene(entry.session, concept_id, float(value))
            except MaskedOutConceptError as exc:
                raise _error(409, "masked_out_concept", str(exc))
            except InterventionError as exc:
                raise _error(400, "invalid_intervention", str(exc))
            entry.last_explanation = explanation
            edit = entry.session.log[-1]
            body = _explanation_payload(session_id, explanation, state.k)
            body["logit_deltas"] = [
                float(after - prior)
                for after, prior in zip(explanation.logits, before.logits)
            ]
            body["edited"] = {
                "concept_id": edit.concept_id,
                "old": edit.old,
                "new": edit.new,
            }
            return body

    @app.get("/concepts")
    def concepts_endpoint():
        if state.bank is None:
            raise _error(503, "no_model", "no model snapshot loaded")
        accuracy = {cav.concept_id: cav for cav in state.cavs}
        concepts = []
        for concept in state.concepts_state:
            cav = accuracy.get(concept.id)
            concepts.append(
                {
                    "id": concept.id,
                    "modality": concept.modality.value,
                    "text": concept.text,
                    "provenance": concept.provenance,
                    "status": concept.status,
                    "train_accuracy": cav.train_accuracy if cav else None,
                    "test_accuracy": cav.test_accuracy if cav else None,
                }
            )
        return {"concepts": concepts, "count": len(concepts)}

    @app.post("/concepts/edits")
    def edits_endpoint(payload: dict = Body(...), authorization: Optional[str] = Header(None)):
        if state.edit_token:
            if authorization != f"Bearer {state.edit_token}":
                raise _error(401, "unauthorized", "edit endpoints require the bearer token")
        if not payload.get("editor"):
            raise _error(400, "malformed_payload", "edits require an editor id")
        try:
            edit = edit_from_json({**payload, "timestamp": time.time()})
        except (KeyError, ValueError) as exc:
            raise _error(400, "malformed_payload", f"bad edit: {exc}")
        with state._edit_lock:
            try:
                new_concepts, _ = apply_edits(state.concepts_state, [edit])
            except EditError as exc:
                raise _error(409, "edit_conflict", str(exc))
            state.concepts_state = list(new_concepts)
            state.edit_log.append(edit)
            if state.edit_log_path is not None:
                append_edit(state.edit_log_path, edit)
            return {"applied": True, "log_length": len(state.edit_log)}

    @app.get("/patients/{patient_id}")
    def patient_endpoint(patient_id: str):
        if state.manifest is None:
            raise _error(404, "unknown_patient", "no patient manifest loaded")
        try:
            record = state.manifest.record(patient_id)
        except KeyError:
            raise _error(404, "unknown_patient", f"no patient {patient_id!r}")
        return {
            "patient_id": record.patient_id,
            "label": record.label.value,
            "modalities": sorted(m.value for m in record.modalities()),
            "n_tokens": len(record.tokens),
            "annotations": sorted(record.concept_annotations),
            "split": state.manifest.split_assignments.get(record.patient_id),
        }

    @app.post("/report")
    def report_endpoint(payload: dict = Body(...)):
        bank, _ = _require_model()
        session_id = payload.get("session_id")
        if not isinstance(session_id, str):
            raise _error(400, "malformed_payload", "need session_id")
        if state.provider is None:
            raise _error(503, "provider_unavailable", "no language-model provider configured")
        try:
            entry = state.sessions.get(session_id)
        except SessionExpired:
            raise _error(404, "session_expired", "session expired")
        except KeyError:
            raise _error(404, "unknown_session", f"no session {session_id!r}")
        with entry.lock:
            explanation = entry.last_explanation
        texts = {c.id: c.text for c in bank.concepts}
        result = generate_report(
            explanation,
            str(payload.get("context", "")),
            state.provider,
            concept_texts=texts,
        )
        if not result.available:
            raise _error(503, "provider_unavailable", "report provider failed")
        return {
            "report": result.text,
            "available": True,
            "inputs": dict(result.inputs),
        }

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app
