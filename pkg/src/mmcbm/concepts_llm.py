"""External-LLM concept pipeline: extraction, aggregation, report generation,
and expert edits to the concept bank.

Providers sit behind one interface.  The deterministic mock is the default
everywhere (tests never touch the network); the remote client reads its
endpoint and token from the environment.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

from .core import Concept, Modality
from .model import Explanation

PROMPT_VERSION = 1


class ProviderError(RuntimeError):
    """Provider failure or unusable response; carries the raw payload."""

    def __init__(self, message: str, raw: Optional[str] = None):
        super().__init__(message)
        self.raw = raw


class LLMProvider(Protocol):
    def complete(self, prompt: str, temperature: float = 0.0,
                 seed: Optional[int] = None) -> str: ...


class MockProvider:
    """Offline provider with a canned prompt -> response map.

    Unmatched prompts either echo the prompt back (handy for report tests) or
    raise, depending on `echo_unmatched`.
    """

    def __init__(self, responses: Optional[Mapping[str, str]] = None,
                 echo_unmatched: bool = False):
        self.responses = dict(responses or {})
        self.echo_unmatched = echo_unmatched
        self.calls: list[str] = []

    def complete(self, prompt, temperature=0.0, seed=None):
        self.calls.append(prompt)
        if prompt in self.responses:
            return self.responses[prompt]
        if self.echo_unmatched:
            return prompt
        raise ProviderError("mock provider has no canned response", raw=prompt)


class FailingProvider:
    """Always raises; simulates an unreachable remote provider."""

    def complete(self, prompt, temperature=0.0, seed=None):
        raise ProviderError("provider unavailable")


class HeuristicMockProvider:
    """Fully offline stand-in with just enough behavior to demo the pipeline:
    extraction prompts get one title-case finding per report sentence,
    aggregation prompts get singleton groups, everything else echoes.
    """

    def complete(self, prompt, temperature=0.0, seed=None):
        if prompt.startswith("You are an ophthalmology assistant"):
            report = prompt.split("Report:\n", 1)[1].rsplit("\nList every", 1)[0]
            sentences = [s.strip() for s in re.split(r"[.;]\s*", report) if s.strip()]
            return "".join(f"- {s.title()}\n" for s in sentences)
        if prompt.startswith("You are curating a concept bank"):
            body = prompt.split("one per line:\n", 1)[1].rsplit("\n\nMerge", 1)[0]
            phrases = [p for p in body.splitlines() if p.strip()]
            return "".join(f"{p} <= {p}\n" for p in phrases)
        return prompt


class RemoteProvider:
    """Minimal JSON-over-HTTP client.

    Endpoint and credentials come from MMCBM_PROVIDER_URL and
    MMCBM_PROVIDER_TOKEN; never used in the default test profile.
    """

    def __init__(self, url: Optional[str] = None, token: Optional[str] = None,
                 timeout: Optional[float] = None, retries: int = 2):
        import os

        self.url = url or os.environ.get("MMCBM_PROVIDER_URL", "")
        self.token = token or os.environ.get("MMCBM_PROVIDER_TOKEN", "")
        self.timeout = timeout if timeout is not None else float(
            os.environ.get("MMCBM_PROVIDER_TIMEOUT", "30")
        )
        self.retries = retries
        if not self.url:
            raise ProviderError("MMCBM_PROVIDER_URL is not set")

    def complete(self, prompt, temperature=0.0, seed=None):
        import httpx

        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        payload = {"prompt": prompt, "temperature": temperature, "seed": seed}
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = httpx.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                return str(resp.json()["text"])
            except Exception as exc:  # noqa: BLE001 - surfaced with payload below
                last = exc
                if attempt < self.retries:
                    time.sleep(0.5 * 2**attempt)
        raise ProviderError(f"remote provider failed: {last}", raw=str(last))


def _template(name: str) -> str:
    return resources.files("mmcbm.prompts").joinpath(f"{name}.txt").read_text(
        encoding="utf-8"
    )


def extraction_prompt(report_text: str, modality: Modality) -> str:
    return _template("extraction").format(modality=modality.value, report=report_text)


def aggregation_prompt(phrases: Sequence[str]) -> str:
    return _template("aggregation").format(phrases="\n".join(phrases))


def report_prompt(label: str, concept_lines: Sequence[str], context: str) -> str:
    return _template("report").format(
        label=label, concepts="\n".join(concept_lines), context=context
    )


def extract_concepts(
    report_text: str,
    modality: Modality,
    provider: LLMProvider,
    redact: Sequence[str] = (),
) -> list[str]:
    """Pull finding phrases out of one report via the extraction prompt.

    Lines prefixed "- " in the response become phrases; anything listed in
    `redact` (patient identifiers) is filtered out of the result.
    """
    if not report_text.strip():
        raise ValueError("report text is empty")
    raw = provider.complete(extraction_prompt(report_text, modality))
    phrases = [
        line[2:].strip()
        for line in raw.splitlines()
        if line.startswith("- ") and line[2:].strip()
    ]
    if not phrases:
        raise ProviderError("no findings parsed from provider response", raw=raw)
    blocked = [b for b in redact if b]
    return [p for p in phrases if not any(b in p for b in blocked)]


def slugify(phrase: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", phrase.lower()).strip("-")
    return slug or "concept"


@dataclass(frozen=True)
class AggregatedConcept:
    id: str
    canonical: str
    members: tuple[str, ...]


def _parse_groups(raw: str) -> list[tuple[str, list[str]]]:
    groups = []
    for line in raw.splitlines():
        if "<=" not in line:
            continue
        canonical, members = line.split("<=", 1)
        groups.append(
            (canonical.strip(), [m.strip() for m in members.split("|") if m.strip()])
        )
    return groups


def aggregate_concepts(
    phrases: Sequence[str], provider: LLMProvider
) -> list[AggregatedConcept]:
    """Merge semantically equivalent phrases into unique concepts.

    Verbatim duplicates are collapsed before prompting.  The provider's merge
    proposal must be a true partition of the inputs; an invalid proposal is
    retried once and then rejected.
    """
    if not phrases:
        raise ValueError("nothing to aggregate")
    unique = list(dict.fromkeys(phrases))
    if len(unique) == 1:
        return [
            AggregatedConcept(id=slugify(unique[0]), canonical=unique[0], members=(unique[0],))
        ]
    prompt = aggregation_prompt(unique)
    expected = set(unique)
    last_raw = ""
    for _ in range(2):
        last_raw = provider.complete(prompt)
        groups = _parse_groups(last_raw)
        seen: list[str] = []
        for _, members in groups:
            seen.extend(members)
        if len(seen) == len(set(seen)) and set(seen) == expected:
            return [
                AggregatedConcept(
                    id=slugify(canonical), canonical=canonical, members=tuple(members)
                )
                for canonical, members in groups
            ]
    raise ProviderError(
        "aggregation response is not a partition of the input phrases", raw=last_raw
    )


@dataclass(frozen=True)
class ConceptEdit:
    """One expert modification to the concept bank (append-only log)."""

    kind: str  # add | remove | remap
    concept_id: str
    modality: Modality
    text: Optional[str] = None
    remap_patients: Optional[tuple[str, ...]] = None
    editor: str = ""
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("add", "remove", "remap"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if self.kind == "add" and not self.text:
            raise ValueError("add edits need concept text")


class EditError(ValueError):
    pass


def apply_edits(
    concepts: Sequence[Concept], edits: Sequence[ConceptEdit]
) -> tuple[tuple[Concept, ...], dict[str, frozenset[str]]]:
    """Replay an edit log over a concept list.

    Removals flip status to expert_removed (CAV retraining then skips them);
    additions append expert_added concepts and, like remaps, carry the patient
    annotation sets to apply before retraining.  Replay is deterministic;
    duplicate adds fail, so replaying a log twice errors by design.
    """
    by_id = {c.id: c for c in concepts}
    out = list(concepts)
    annotation_updates: dict[str, frozenset[str]] = {}
    for edit in edits:
        if edit.kind == "add":
            if edit.concept_id in by_id:
                raise EditError(f"add: concept {edit.concept_id!r} already exists")
            concept = Concept(
                id=edit.concept_id,
                modality=edit.modality,
                text=edit.text or edit.concept_id,
                provenance="expert_added",
            )
            by_id[concept.id] = concept
            out.append(concept)
            if edit.remap_patients is not None:
                annotation_updates[concept.id] = frozenset(edit.remap_patients)
        elif edit.kind == "remove":
            current = by_id.get(edit.concept_id)
            if current is None:
                raise EditError(f"remove: unknown concept {edit.concept_id!r}")
            if not current.active:
                raise EditError(f"remove: concept {edit.concept_id!r} already removed")
            replacement = Concept(
                id=current.id,
                modality=current.modality,
                text=current.text,
                provenance=current.provenance,
                status="expert_removed",
            )
            by_id[current.id] = replacement
            out[out.index(current)] = replacement
        else:  # remap
            if edit.concept_id not in by_id:
                raise EditError(f"remap: unknown concept {edit.concept_id!r}")
            annotation_updates[edit.concept_id] = frozenset(edit.remap_patients or ())
    return tuple(out), annotation_updates


def edit_to_json(edit: ConceptEdit) -> dict:
    return {
        "kind": edit.kind,
        "concept_id": edit.concept_id,
        "modality": edit.modality.value,
        "text": edit.text,
        "remap_patients": list(edit.remap_patients) if edit.remap_patients else None,
        "editor": edit.editor,
        "timestamp": edit.timestamp,
    }


def edit_from_json(obj: Mapping) -> ConceptEdit:
    return ConceptEdit(
        kind=obj["kind"],
        concept_id=obj["concept_id"],
        modality=Modality(obj["modality"]),
        text=obj.get("text"),
        remap_patients=tuple(obj["remap_patients"]) if obj.get("remap_patients") else None,
        editor=obj.get("editor", ""),
        timestamp=float(obj.get("timestamp", 0.0)),
    )


def append_edit(path: Path, edit: ConceptEdit) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(edit_to_json(edit), sort_keys=True) + "\n")


def load_edit_log(path: Path) -> list[ConceptEdit]:
    path = Path(path)
    if not path.exists():
        return []
    return [
        edit_from_json(json.loads(line))
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


@dataclass(frozen=True)
class ReportResult:
    """Generated report plus the structured inputs that produced it."""

    text: Optional[str]
    available: bool
    inputs: Mapping[str, object]


def generate_report(
    explanation: Explanation,
    patient_context: str,
    provider: LLMProvider,
    concept_texts: Optional[Mapping[str, str]] = None,
) -> ReportResult:
    """Fill the report prompt with the prediction and its top-k concepts.

    Provider failure degrades gracefully: the report comes back unavailable
    and the caller's prediction is untouched.
    """
    texts = concept_texts or {}
    concept_lines = [
        f"- {texts.get(rc.concept_id, rc.concept_id)}" for rc in explanation.top_k
    ]
    inputs = {
        "label": explanation.label.value,
        "concepts": [rc.concept_id for rc in explanation.top_k],
        "context": patient_context,
        "prompt_version": PROMPT_VERSION,
    }
    prompt = report_prompt(explanation.label.value, concept_lines, patient_context)
    try:
        text = provider.complete(prompt)
    except ProviderError:
        return ReportResult(text=None, available=False, inputs=inputs)
    return ReportResult(text=text, available=True, inputs=inputs)
