"""Dataset I/O, split generation, synthetic cohorts, and model bundles."""

from .bundle import (
    BundleChecksumError,
    BundleDimensionError,
    BundleError,
    ModelBundle,
    load_bundle,
    save_bundle,
)
from .formats import (
    FormatError,
    load_dataset,
    manifest_to_json,
    read_embeddings,
    save_dataset,
    write_embeddings,
)
from .splits import SplitError, generate_splits
from .synthetic import (
    SyntheticSpec,
    SyntheticTruth,
    generate_synthetic_cohort,
    us_analog_spec,
)

__all__ = [
    "BundleChecksumError",
    "BundleDimensionError",
    "BundleError",
    "FormatError",
    "ModelBundle",
    "SplitError",
    "SyntheticSpec",
    "SyntheticTruth",
    "generate_splits",
    "generate_synthetic_cohort",
    "load_bundle",
    "load_dataset",
    "manifest_to_json",
    "read_embeddings",
    "save_bundle",
    "save_dataset",
    "us_analog_spec",
    "write_embeddings",
]
