"""Command-line interface.

Subcommand map:
    ingest validate|split|synth      dataset plumbing
    cav train                        ground concepts, write bank + accuracy CSV
    baseline train|eval              black-box comparator head
    train / predict / intervene      the bottleneck model itself
    eval cv|retrieval|ablate         evaluation harnesses
    concepts extract|aggregate|edit  LLM concept pipeline (mock by default)
    report generate                  diagnostic report for one patient
    serve                            HTTP API
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import baseline as baseline_mod
from . import evalmetrics
from .cav import SvmConfig, load_bank, save_bank, train_concept_bank
from .concepts_llm import (
    FailingProvider,
    HeuristicMockProvider,
    RemoteProvider,
    aggregate_concepts,
    apply_edits,
    extract_concepts,
    generate_report,
    load_edit_log,
)
from .core import DiseaseLabel, Modality, validate_manifest
from .ingest import (
    ModelBundle,
    SyntheticSpec,
    generate_splits,
    generate_synthetic_cohort,
    load_bundle,
    load_dataset,
    save_bundle,
    save_dataset,
)
from .intervention import intervene as apply_intervention
from .intervention import start_session
from .model import TrainConfig, concept_scores, predict_record, train_predictor
from .service import ServiceState, create_app


def _provider(name: str):
    if name == "mock":
        return HeuristicMockProvider()
    if name == "remote":
        return RemoteProvider()
    if name == "none":
        return FailingProvider()
    raise click.BadParameter(f"unknown provider {name!r}")


def _load_spec(path: Path) -> SyntheticSpec:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "noise_sigma_by_modality" in doc:
        doc["noise_sigma_by_modality"] = {
            Modality(k): float(v) for k, v in doc["noise_sigma_by_modality"].items()
        }
    if doc.get("class_concept_map"):
        doc["class_concept_map"] = {
            DiseaseLabel(k): frozenset(v) for k, v in doc["class_concept_map"].items()
        }
    return SyntheticSpec(**doc)


@click.group()
def main():
    """Concept bottleneck toolkit."""


# --------------------------------------------------------------------------
# ingest


@main.group()
def ingest():
    """Dataset validation, splitting, and synthesis."""


@ingest.command("validate")
@click.argument("manifest", type=click.Path(exists=True, path_type=Path))
def ingest_validate(manifest: Path):
    report = validate_manifest(load_dataset(manifest))
    if report.valid:
        click.echo("manifest valid")
        return
    for violation in report:
        click.echo(str(violation))
    sys.exit(1)


@ingest.command("split")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--test-frac", type=float, default=0.2, show_default=True)
@click.option("--folds", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def ingest_split(manifest_path: Path, test_frac: float, folds: int, seed: int, out: Path):
    manifest = load_dataset(manifest_path)
    new = generate_splits(
        manifest.records,
        test_fraction=test_frac,
        n_folds=folds,
        seed=seed,
        embedding_dim=manifest.embedding_dim,
        concepts=manifest.concepts,
    )
    path = save_dataset(new, out)
    click.echo(f"wrote {path}")


@ingest.command("synth")
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--seed", type=int, default=None, help="override the spec seed")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def ingest_synth(spec_path: Path | None, seed: int | None, out: Path):
    spec = _load_spec(spec_path) if spec_path else SyntheticSpec()
    if seed is not None:
        spec = replace(spec, rng_seed=seed)
    manifest, truth = generate_synthetic_cohort(spec)
    path = save_dataset(manifest, out)
    truth_doc = {
        "class_concept_map": {
            lbl.value: sorted(ids) for lbl, ids in truth.class_concept_map.items()
        },
        "directions": {cid: list(vec) for cid, vec in truth.directions.items()},
    }
    (Path(out) / "truth.json").write_text(json.dumps(truth_doc, sort_keys=True), encoding="utf-8")
    click.echo(f"wrote {path} ({len(manifest.records)} patients)")


# --------------------------------------------------------------------------
# cav


@main.group()
def cav():
    """Concept grounding via per-concept SVMs."""


@cav.command("train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--bank-out", type=click.Path(path_type=Path), required=True)
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None)
@click.option("--svm-c", type=float, default=1.0, show_default=True)
@click.option("--max-epochs", type=int, default=1000, show_default=True)
def cav_train(manifest_path: Path, bank_out: Path, report_path: Path | None,
              svm_c: float, max_epochs: int):
    manifest = load_dataset(manifest_path)
    bank, cavs = train_concept_bank(manifest, SvmConfig(C=svm_c, max_epochs=max_epochs))
    save_bank(bank_out, bank, cavs)
    click.echo(f"trained {bank.n_concepts} CAVs -> {bank_out}")
    if report_path:
        with open(report_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["concept_id", "modality", "train_acc", "test_acc"])
            for concept, cav_ in zip(bank.concepts, cavs):
                writer.writerow(
                    [
                        concept.id,
                        concept.modality.value,
                        f"{cav_.train_accuracy:.4f}",
                        "" if cav_.test_accuracy is None else f"{cav_.test_accuracy:.4f}",
                    ]
                )
        click.echo(f"accuracy report -> {report_path}")


# --------------------------------------------------------------------------
# baseline


@main.group()
def baseline():
    """Black-box attention-pool classifier."""


@baseline.command("train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--val-fold", type=int, default=1, show_default=True)
@click.option("--max-epochs", type=int, default=200, show_default=True)
def baseline_train_cmd(manifest_path: Path, out: Path, seed: int, val_fold: int, max_epochs: int):
    manifest = load_dataset(manifest_path)
    params = baseline_mod.baseline_train(
        manifest,
        baseline_mod.default_config(seed=seed, val_fold=val_fold, max_epochs=max_epochs),
    )
    bank, cavs = train_concept_bank(manifest)
    bundle = ModelBundle(
        bank=bank,
        cavs=tuple(cavs),
        predictor=None,
        baseline=params,
        config={"embedding_dim": manifest.embedding_dim, "seed": seed},
    )
    save_bundle(bundle, out)
    click.echo(f"baseline weights -> {out}")


@baseline.command("eval")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
def baseline_eval_cmd(manifest_path: Path, bundle_path: Path):
    manifest = load_dataset(manifest_path)
    bundle = load_bundle(bundle_path)
    if bundle.baseline is None:
        raise click.ClickException("bundle has no baseline weights")

    def predict_fn(record, modalities=None):
        return baseline_mod.baseline_predict(record, bundle.baseline, modalities)

    metrics = evalmetrics.evaluate_on_test(manifest, predict_fn)
    click.echo(json.dumps(metrics.as_dict(), indent=1, sort_keys=True))


# --------------------------------------------------------------------------
# the bottleneck model


@main.command("train")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--val-fold", type=int, default=1, show_default=True)
@click.option("--max-epochs", type=int, default=200, show_default=True)
@click.option("--class-weighted", is_flag=True, help="inverse-frequency loss weights")
def train_cmd(manifest_path: Path, out: Path, seed: int, val_fold: int,
              max_epochs: int, class_weighted: bool):
    """Train CAV bank + interpretable predictor, write one bundle."""
    manifest = load_dataset(manifest_path)
    bank, cavs = train_concept_bank(manifest)
    predictor = train_predictor(
        manifest,
        bank,
        TrainConfig(seed=seed, val_fold=val_fold, max_epochs=max_epochs,
                    class_weighted=class_weighted),
    )
    bundle = ModelBundle(
        bank=bank,
        cavs=tuple(cavs),
        predictor=predictor,
        baseline=None,
        config={"embedding_dim": manifest.embedding_dim, "seed": seed},
    )
    save_bundle(bundle, out)
    click.echo(f"model bundle -> {out}")


def _load_model(bundle_path: Path):
    bundle = load_bundle(bundle_path)
    if bundle.predictor is None:
        raise click.ClickException("bundle has no trained predictor")
    return bundle


@main.command("predict")
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--patient", required=True)
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def predict_cmd(bundle_path: Path, manifest_path: Path, patient: str, k: int, as_json: bool):
    bundle = _load_model(bundle_path)
    manifest = load_dataset(manifest_path)
    record = manifest.record(patient)
    explanation = predict_record(record, bundle.bank, bundle.predictor, k=k)
    if as_json:
        doc = {
            "patient_id": patient,
            "label": explanation.label.value,
            "logits": [float(v) for v in explanation.logits],
            "probabilities": [float(v) for v in explanation.probabilities],
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
        }
        click.echo(json.dumps(doc, indent=1, sort_keys=True))
        return
    click.echo(f"{patient}: {explanation.label.value}")
    for rc in explanation.top_k:
        click.echo(f"  {rc.rank:>2}. {rc.concept_id} ({rc.modality.value})  {rc.attention:.4f}")


@main.command("intervene")
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--patient", required=True)
@click.option("--set", "edits", multiple=True, help="concept=value, repeatable")
@click.option("--k", type=int, default=10, show_default=True)
def intervene_cmd(bundle_path: Path, manifest_path: Path, patient: str,
                  edits: tuple[str, ...], k: int):
    bundle = _load_model(bundle_path)
    manifest = load_dataset(manifest_path)
    record = manifest.record(patient)
    scores = concept_scores(record, bundle.bank)
    session = start_session(scores, bundle.bank, bundle.predictor, k=k)
    explanation = session.explain()
    click.echo(f"before: {explanation.label.value}  logits={np.round(explanation.logits, 4)}")
    for item in edits:
        concept_id, _, raw = item.partition("=")
        explanation = apply_intervention(session, concept_id, float(raw))
        click.echo(
            f"set {concept_id}={float(raw):+.3f} -> {explanation.label.value}  "
            f"logits={np.round(explanation.logits, 4)}"
        )


# --------------------------------------------------------------------------
# eval


@main.group("eval")
def eval_group():
    """Cross-validation, retrieval metrics, ablations."""


@eval_group.command("cv")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model", "which", type=click.Choice(["mmcbm", "baseline"]), default="mmcbm", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None, help="CSV per-fold output")
def eval_cv(manifest_path: Path, which: str, seed: int, out: Path | None):
    manifest = load_dataset(manifest_path)
    bank = None
    if which == "mmcbm":
        bank, _ = train_concept_bank(manifest)
        trainer = evalmetrics.make_predictor_trainer(bank, TrainConfig(seed=seed))
    else:
        trainer = evalmetrics.make_baseline_trainer(baseline_mod.default_config(seed=seed))
    report = evalmetrics.run_cv(manifest, trainer, seed=seed)
    for fold in report.folds:
        click.echo(f"fold {fold.fold}: macro-F1 {fold.metrics.macro_f1:.4f}")
    for name, value in report.aggregate.items():
        lo, hi = report.ci[name]
        click.echo(f"{name}: {value:.4f} (95% CI {lo:.4f}-{hi:.4f})")
    if bank is not None:
        predictor = trainer(manifest, 1).predictor
        block = evalmetrics.evaluate_retrieval(manifest, bank, predictor, k=10)
        click.echo(
            f"retrieval@10: P {block.precision_at_k:.4f}  R {block.recall_at_k:.4f}  "
            f"F1 {block.f1_at_k:.4f}  MRR {block.mrr:.4f}"
        )
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fold", "accuracy", "macro_precision", "macro_recall", "macro_f1"])
            for fold in report.folds:
                m = fold.metrics
                writer.writerow([fold.fold, m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1])


@eval_group.command("retrieval")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--k", type=int, default=10, show_default=True)
def eval_retrieval(manifest_path: Path, bundle_path: Path, k: int):
    manifest = load_dataset(manifest_path)
    bundle = _load_model(bundle_path)
    block = evalmetrics.evaluate_retrieval(manifest, bundle.bank, bundle.predictor, k=k)
    click.echo(json.dumps(
        {
            "precision_at_k": block.precision_at_k,
            "recall_at_k": block.recall_at_k,
            "f1_at_k": block.f1_at_k,
            "mean_rank": block.mean_rank,
            "median_rank": block.median_rank,
            "mrr": block.mrr,
            "k": block.k,
            "n_patients": block.n_patients,
            "excluded_truths": block.n_excluded_truths,
        },
        indent=1, sort_keys=True,
    ))


@eval_group.command("ablate")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--axis", type=click.Choice(["n_concepts", "n_reports"]), required=True)
@click.option("--grid", required=True, help="comma-separated integers")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
def eval_ablate(manifest_path: Path, bundle_path: Path, axis: str, grid: str,
                seed: int, out: Path | None):
    manifest = load_dataset(manifest_path)
    bundle = _load_model(bundle_path)
    values = [int(v) for v in grid.split(",") if v.strip()]
    points = evalmetrics.ablate(
        manifest, axis, values, bundle.bank, bundle.cavs,
        TrainConfig(seed=seed, val_fold=1), seed=seed,
    )
    rows = [
        (p.value, p.modality_subset, p.n_concepts_used, p.accuracy, p.macro_f1)
        for p in points
    ]
    click.echo(f"{axis:>12}  subset  concepts  accuracy  macro_f1")
    for value, subset, n_used, acc, f1 in rows:
        click.echo(f"{value:>12}  {subset:>6}  {n_used:>8}  {acc:8.4f}  {f1:8.4f}")
    if out:
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([axis, "modality_subset", "n_concepts_used", "accuracy", "macro_f1"])
            writer.writerows(rows)


# --------------------------------------------------------------------------
# concept pipeline


@main.group()
def concepts():
    """LLM-backed concept extraction, aggregation, and expert edits."""


@concepts.command("extract")
@click.option("--report", "report_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--modality", type=click.Choice([m.value for m in Modality]), required=True)
@click.option("--provider", default="mock", show_default=True)
def concepts_extract(report_path: Path, modality: str, provider: str):
    text = Path(report_path).read_text(encoding="utf-8")
    phrases = extract_concepts(text, Modality(modality), _provider(provider))
    for phrase in phrases:
        click.echo(phrase)


@concepts.command("aggregate")
@click.option("--phrases", "phrases_path", type=click.Path(exists=True, path_type=Path), required=True,
              help="one phrase per line")
@click.option("--provider", default="mock", show_default=True)
def concepts_aggregate(phrases_path: Path, provider: str):
    phrases = [
        line.strip()
        for line in Path(phrases_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    for group in aggregate_concepts(phrases, _provider(provider)):
        click.echo(f"{group.id}: {group.canonical} <= {' | '.join(group.members)}")


@concepts.command("edit")
@click.option("--log", "log_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--bank", "bank_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
def concepts_edit(log_path: Path, bank_path: Path, out: Path | None):
    """Replay an edit log over a concept bank's vocabulary."""
    bank, cavs = load_bank(bank_path)
    edits = load_edit_log(log_path)
    new_concepts, remaps = apply_edits(bank.concepts, edits)
    active = sum(1 for c in new_concepts if c.active)
    click.echo(f"{len(edits)} edits -> {active} active concepts "
               f"({len(remaps)} annotation remaps pending CAV retraining)")
    if out:
        doc = [
            {"id": c.id, "modality": c.modality.value, "text": c.text,
             "provenance": c.provenance, "status": c.status}
            for c in new_concepts
        ]
        Path(out).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
        click.echo(f"edited vocabulary -> {out}")


# --------------------------------------------------------------------------
# report


@main.group("report")
def report_group():
    """Diagnostic report generation."""


@report_group.command("generate")
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--patient", required=True)
@click.option("--context", default="", help="free-text patient context")
@click.option("--k", type=int, default=10, show_default=True)
@click.option("--provider", default="mock", show_default=True)
def report_generate(bundle_path: Path, manifest_path: Path, patient: str,
                    context: str, k: int, provider: str):
    bundle = _load_model(bundle_path)
    manifest = load_dataset(manifest_path)
    record = manifest.record(patient)
    explanation = predict_record(record, bundle.bank, bundle.predictor, k=k)
    texts = {c.id: c.text for c in bundle.bank.concepts}
    result = generate_report(explanation, context, _provider(provider), concept_texts=texts)
    if not result.available:
        raise click.ClickException("report provider unavailable; prediction unaffected")
    click.echo(result.text)


# --------------------------------------------------------------------------
# serve


@main.command("serve")
@click.option("--model", "bundle_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--provider", default="mock", show_default=True)
@click.option("--edit-token", default=None, help="bearer token guarding edit endpoints")
@click.option("--edit-log", type=click.Path(path_type=Path), default=None)
@click.option("--static", "static_dir", type=click.Path(path_type=Path), default=None,
              help="directory of console assets to serve at /")
def serve_cmd(bundle_path: Path, manifest_path: Path | None, port: int, host: str,
              provider: str, edit_token: str | None, edit_log: Path | None,
              static_dir: Path | None):
    import uvicorn

    bundle = _load_model(bundle_path)
    manifest = load_dataset(manifest_path) if manifest_path else None
    state = ServiceState(
        bank=bundle.bank,
        predictor=bundle.predictor,
        cavs=bundle.cavs,
        manifest=manifest,
        provider=_provider(provider),
        edit_token=edit_token,
        edit_log_path=edit_log,
    )
    uvicorn.run(create_app(state, static_dir=static_dir), host=host, port=port)


if __name__ == "__main__":
    main()
