"""Evaluation: macro classification metrics, @k concept retrieval, bootstrap
confidence intervals, the cross-validation driver, and ablation harnesses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .baseline import baseline_predict, baseline_train
from .cav import CAV, ConceptBank, SvmConfig, train_concept_bank
from .core import (
    DatasetManifest,
    DiseaseLabel,
    LABEL_ORDER,
    Modality,
    N_CLASSES,
    PatientRecord,
)
from .model import (
    TrainConfig,
    predict_record,
    train_predictor,
)

#: predict_fn(record, modalities) -> class probabilities, LABEL_ORDER columns
PredictFn = Callable[[PatientRecord, Optional[frozenset]], np.ndarray]
#: trainer(manifest, val_fold) -> PredictFn
TrainerFn = Callable[[DatasetManifest, Optional[int]], PredictFn]

MODALITY_SUBSETS: dict[str, Optional[tuple[Modality, ...]]] = {
    "FA": (Modality.FA,),
    "ICGA": (Modality.ICGA,),
    "US": (Modality.US,),
    "MM": None,  # no restriction: every present modality participates
}


@dataclass(frozen=True)
class ClassificationMetrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray  # (3, 3), confusion[true, pred]
    per_class: Mapping[DiseaseLabel, tuple[float, float, float, int]]
    absent_classes: tuple[DiseaseLabel, ...]

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def classification_metrics(
    predictions: Sequence[DiseaseLabel], labels: Sequence[DiseaseLabel]
) -> ClassificationMetrics:
    """Macro-averaged over the three classes; a class with no true examples
    contributes zeros and is flagged in absent_classes."""
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("cannot score an empty prediction set")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for pred, true in zip(predictions, labels):
        confusion[LABEL_ORDER.index(true), LABEL_ORDER.index(pred)] += 1
    per_class = {}
    precisions, recalls, f1s = [], [], []
    absent = []
    for c, label in enumerate(LABEL_ORDER):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        support = int(confusion[c, :].sum())
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        if support == 0:
            absent.append(label)
        per_class[label] = (float(precision), float(recall), float(f1), support)
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
    return ClassificationMetrics(
        accuracy=float(np.trace(confusion) / confusion.sum()),
        macro_precision=float(np.mean(precisions)),
        macro_recall=float(np.mean(recalls)),
        macro_f1=float(np.mean(f1s)),
        confusion=confusion,
        per_class=per_class,
        absent_classes=tuple(absent),
    )


@dataclass(frozen=True)
class RetrievalMetrics:
    precision_at_k: float
    recall_at_k: float
    f1_at_k: float
    mean_rank: float
    median_rank: float
    mrr: float
    k: int
    n_patients: int
    n_excluded_truths: int  # annotated concepts that never made the top-k


def retrieval_at_k(
    ranked: Sequence[Sequence[str]],
    truths: Sequence[Iterable[str]],
    k: int,
) -> RetrievalMetrics:
    """Compare per-patient ranked concept lists against annotation sets.

    Precision/recall/F1 and MRR are averaged over patients; rank statistics
    are pooled over the 1-based positions of true concepts found inside the
    top-k (true concepts outside it are excluded and counted).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(ranked) != len(truths):
        raise ValueError("ranked lists and truth sets differ in length")
    if not ranked:
        raise ValueError("nothing to evaluate")
    precisions, recalls, f1s, rrs = [], [], [], []
    hit_ranks: list[int] = []
    n_excluded = 0
    for ranked_list, truth in zip(ranked, truths):
        truth = set(truth)
        if not truth:
            raise ValueError("patient has an empty annotation set")
        top = list(ranked_list)[:k]
        ranks = [i for i, cid in enumerate(top, start=1) if cid in truth]
        hits = len(ranks)
        n_excluded += len(truth) - hits
        precisions.append(hits / k)
        recalls.append(hits / len(truth))
        p, r = precisions[-1], recalls[-1]
        f1s.append(2 * p * r / (p + r) if p + r else 0.0)
        rrs.append(1.0 / ranks[0] if ranks else 0.0)
        hit_ranks.extend(ranks)
    return RetrievalMetrics(
        precision_at_k=float(np.mean(precisions)),
        recall_at_k=float(np.mean(recalls)),
        f1_at_k=float(np.mean(f1s)),
        mean_rank=float(np.mean(hit_ranks)) if hit_ranks else float("nan"),
        median_rank=float(np.median(hit_ranks)) if hit_ranks else float("nan"),
        mrr=float(np.mean(rrs)),
        k=k,
        n_patients=len(ranked),
        n_excluded_truths=n_excluded,
    )


def bootstrap_ci(
    samples: Sequence[float],
    level: float = 0.95,
    n_resamples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean of per-patient samples."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < 2:
        raise ValueError("bootstrap needs at least 2 samples")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, samples.shape[0], size=(n_resamples, samples.shape[0]))
    means = samples[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def evaluate_on_test(
    manifest: DatasetManifest,
    predict_fn: PredictFn,
    modalities: Optional[Iterable[Modality]] = None,
) -> ClassificationMetrics:
    test = manifest.test_records()
    mods = frozenset(modalities) if modalities is not None else None
    preds = [LABEL_ORDER[int(np.argmax(predict_fn(rec, mods)))] for rec in test]
    return classification_metrics(preds, [rec.label for rec in test])


def make_predictor_trainer(bank: ConceptBank, config: TrainConfig) -> TrainerFn:
    def trainer(manifest: DatasetManifest, val_fold: Optional[int]) -> PredictFn:
        predictor = train_predictor(manifest, bank, replace(config, val_fold=val_fold))

        def predict_fn(record, modalities=None):
            return predict_record(
                record, bank, predictor, modalities=modalities
            ).probabilities

        predict_fn.predictor = predictor
        return predict_fn

    return trainer


def make_baseline_trainer(config: TrainConfig) -> TrainerFn:
    def trainer(manifest: DatasetManifest, val_fold: Optional[int]) -> PredictFn:
        params = baseline_train(manifest, replace(config, val_fold=val_fold))

        def predict_fn(record, modalities=None):
            return baseline_predict(record, params, modalities=modalities)

        predict_fn.params = params
        return predict_fn

    return trainer


@dataclass(frozen=True)
class FoldEval:
    fold: int
    metrics: ClassificationMetrics


@dataclass(frozen=True)
class EvalReport:
    folds: tuple[FoldEval, ...]
    aggregate: Mapping[str, float]        # mean over folds
    ci: Mapping[str, tuple[float, float]]  # patient-level bootstrap, 95%
    confusion: np.ndarray                  # summed over folds
    n_test_patients: int
    retrieval: Optional[RetrievalMetrics] = None


def run_cv(
    manifest: DatasetManifest,
    trainer: TrainerFn,
    k_folds: Optional[int] = None,
    modalities: Optional[Iterable[Modality]] = None,
    ci_level: float = 0.95,
    n_resamples: int = 1000,
    seed: int = 0,
) -> EvalReport:
    """Train once per fold (the fold is that run's validation set), evaluate
    every fold's best checkpoint on the fixed multimodal test split, and
    aggregate mean metrics with patient-level bootstrap intervals.
    """
    n_folds = k_folds if k_folds is not None else manifest.n_folds
    if n_folds < 2:
        raise ValueError(f"manifest defines {n_folds} folds; need at least 2")
    test = manifest.test_records()
    if not test:
        raise ValueError("manifest has no test split")
    mods = frozenset(modalities) if modalities is not None else None

    fold_evals = []
    fold_preds = np.zeros((n_folds, len(test)), dtype=np.int64)
    true_idx = np.array([LABEL_ORDER.index(r.label) for r in test], dtype=np.int64)
    for fold in range(1, n_folds + 1):
        predict_fn = trainer(manifest, fold)
        preds = [LABEL_ORDER[int(np.argmax(predict_fn(rec, mods)))] for rec in test]
        fold_preds[fold - 1] = [LABEL_ORDER.index(p) for p in preds]
        fold_evals.append(
            FoldEval(fold=fold, metrics=classification_metrics(preds, [r.label for r in test]))
        )

    metric_names = ("accuracy", "macro_precision", "macro_recall", "macro_f1")
    aggregate = {
        name: float(np.mean([getattr(fe.metrics, name) for fe in fold_evals]))
        for name in metric_names
    }

    rng = np.random.default_rng(seed)
    boot = {name: [] for name in metric_names}
    n_test = len(test)
    for _ in range(n_resamples):
        sample = rng.integers(0, n_test, size=n_test)
        per_fold = {name: [] for name in metric_names}
        for fold in range(n_folds):
            preds = [LABEL_ORDER[i] for i in fold_preds[fold][sample]]
            labels = [LABEL_ORDER[i] for i in true_idx[sample]]
            m = classification_metrics(preds, labels)
            for name in metric_names:
                per_fold[name].append(getattr(m, name))
        for name in metric_names:
            boot[name].append(np.mean(per_fold[name]))
    alpha = (1.0 - ci_level) / 2.0
    ci = {
        name: tuple(float(q) for q in np.quantile(boot[name], [alpha, 1.0 - alpha]))
        for name in metric_names
    }
    confusion = np.sum([fe.metrics.confusion for fe in fold_evals], axis=0)
    return EvalReport(
        folds=tuple(fold_evals),
        aggregate=aggregate,
        ci=ci,
        confusion=confusion,
        n_test_patients=n_test,
    )


def ranked_concepts_for(
    record: PatientRecord,
    bank: ConceptBank,
    predictor,
    modalities: Optional[Iterable[Modality]] = None,
) -> list[str]:
    """Full masked-in concept ranking for one record (most activated first)."""
    explanation = predict_record(
        record, bank, predictor, k=bank.n_concepts, modalities=modalities
    )
    return [rc.concept_id for rc in explanation.top_k]


def evaluate_retrieval(
    manifest: DatasetManifest,
    bank: ConceptBank,
    predictor,
    k: int = 10,
    modalities: Optional[Iterable[Modality]] = None,
) -> RetrievalMetrics:
    """Retrieval metrics of the predictor's concept ranking against the test
    split's annotations (patients without annotations are skipped)."""
    ranked, truths = [], []
    bank_ids = set(bank.ids())
    for rec in manifest.test_records():
        truth = rec.concept_annotations & bank_ids
        if not truth:
            continue
        ranked.append(ranked_concepts_for(rec, bank, predictor, modalities))
        truths.append(truth)
    return retrieval_at_k(ranked, truths, k)


@dataclass(frozen=True)
class AblationPoint:
    axis: str
    value: int
    modality_subset: str
    accuracy: float
    macro_f1: float
    n_concepts_used: int


def _concept_quality_order(bank: ConceptBank, cavs: Sequence[CAV]) -> list[str]:
    by_id = {cav.concept_id: cav for cav in cavs}

    def quality(i_c):
        i, c = i_c
        cav = by_id[c.id]
        acc = cav.test_accuracy if cav.test_accuracy is not None else cav.train_accuracy
        return (-acc, i)

    ordered = sorted(enumerate(bank.concepts), key=quality)
    return [c.id for _, c in ordered]


def _sub_bank(bank: ConceptBank, keep_ids: set[str]) -> ConceptBank:
    idx = [i for i, c in enumerate(bank.concepts) if c.id in keep_ids]
    return ConceptBank(
        concepts=tuple(bank.concepts[i] for i in idx),
        matrix=bank.matrix[idx],
    )


def _eval_subsets(
    manifest: DatasetManifest,
    bank: ConceptBank,
    config: TrainConfig,
    axis: str,
    value: int,
) -> list[AblationPoint]:
    predictor = train_predictor(manifest, bank, config)

    def predict_fn(record, modalities):
        return predict_record(
            record, bank, predictor, modalities=modalities
        ).probabilities

    points = []
    for subset_name, mods in MODALITY_SUBSETS.items():
        metrics = evaluate_on_test(manifest, predict_fn, modalities=mods)
        points.append(
            AblationPoint(
                axis=axis,
                value=value,
                modality_subset=subset_name,
                accuracy=metrics.accuracy,
                macro_f1=metrics.macro_f1,
                n_concepts_used=bank.n_concepts,
            )
        )
    return points


def _stratified_patient_subset(
    records: Sequence[PatientRecord], size: int, seed: int
) -> list[PatientRecord]:
    """Seeded class-proportional subset of exactly `size` patients (largest
    remainder apportionment, so shares always sum to size)."""
    rng = np.random.default_rng(seed)
    pools = {
        lbl: sorted((r for r in records if r.label == lbl), key=lambda r: r.patient_id)
        for lbl in LABEL_ORDER
    }
    total = len(records)
    exact = {lbl: size * len(pool) / total for lbl, pool in pools.items()}
    shares = {lbl: min(int(exact[lbl]), len(pools[lbl])) for lbl in LABEL_ORDER}
    leftover = size - sum(shares.values())
    by_remainder = sorted(
        LABEL_ORDER, key=lambda lbl: exact[lbl] - int(exact[lbl]), reverse=True
    )
    for lbl in by_remainder * 2:  # second pass absorbs pool-capped classes
        if leftover == 0:
            break
        if shares[lbl] < len(pools[lbl]):
            shares[lbl] += 1
            leftover -= 1
    chosen: list[PatientRecord] = []
    for lbl in LABEL_ORDER:
        order = rng.permutation(len(pools[lbl]))
        chosen.extend(pools[lbl][i] for i in order[: shares[lbl]])
    return chosen


def ablate(
    manifest: DatasetManifest,
    axis: str,
    grid: Sequence[int],
    bank: ConceptBank,
    cavs: Sequence[CAV],
    train_config: TrainConfig,
    svm_config: SvmConfig = SvmConfig(),
    seed: int = 0,
) -> list[AblationPoint]:
    """Sweep one axis and report test metrics per modality subset.

    n_concepts keeps the top-n concepts by SVM test accuracy (bank rows stay
    in canonical order, so n = N reproduces the unablated run exactly);
    n_reports rebuilds the CAV bank from a seeded stratified subset of
    annotated training patients before retraining the predictor.
    """
    points: list[AblationPoint] = []
    if axis == "n_concepts":
        quality = _concept_quality_order(bank, cavs)
        for n in grid:
            if not 1 <= n <= bank.n_concepts:
                raise ValueError(f"n_concepts grid value {n} outside [1, {bank.n_concepts}]")
            sub = _sub_bank(bank, set(quality[:n]))
            points.extend(_eval_subsets(manifest, sub, train_config, axis, n))
    elif axis == "n_reports":
        annotated = [r for r in manifest.train_records() if r.concept_annotations]
        for m in grid:
            if not 1 <= m <= len(annotated):
                raise ValueError(f"n_reports grid value {m} outside [1, {len(annotated)}]")
            subset = _stratified_patient_subset(annotated, m, seed)
            sub_bank, _ = train_concept_bank(
                manifest, svm_config, concepts=bank.concepts, train_records=subset
            )
            points.extend(_eval_subsets(manifest, sub_bank, train_config, axis, m))
    else:
        raise ValueError(f"unknown ablation axis {axis!r}")
    return points
