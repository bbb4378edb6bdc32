"""Multimodal concept bottleneck toolkit.

Concepts are grounded to embedding-space directions with per-concept linear
SVMs; inputs are scored against those directions, an interpretable linear
head turns scores into class logits that decompose into per-concept
contributions, and everything is exposed through a CLI, an HTTP service, and
an intervention console.
"""

from .core import (
    Concept,
    DatasetManifest,
    DiseaseLabel,
    EmbeddingToken,
    Modality,
    PatientRecord,
    Period,
    period_of,
    validate_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "Concept",
    "DatasetManifest",
    "DiseaseLabel",
    "EmbeddingToken",
    "Modality",
    "PatientRecord",
    "Period",
    "period_of",
    "validate_manifest",
    "__version__",
]
