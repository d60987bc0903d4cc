"""Evaluation: confusion matrices, per-class metrics, repeated
cross-validation, and manual-audit sampling.

Convention notes, fixed across the package:

* Confusion matrices are oriented rows = predicted, columns = true.
* Per-class accuracy is defined as that class's recall (diagonal over
  column sum); overall accuracy is the trace over the total.
* Macro scores are unweighted means over the three classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import clone
from sklearn.model_selection import KFold, StratifiedKFold

from .annotation import largest_remainder_quotas
from .categories import CATEGORIES, CATEGORY_INDEX, validate_category
from .classify import Prediction


# ---------------------------------------------------------------------------
# confusion matrix


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 count grid, rows = predicted category, columns = true
    category, both in canonical order."""

    counts: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        if len(self.counts) != len(CATEGORIES) or any(
            len(row) != len(CATEGORIES) for row in self.counts
        ):
            raise ValueError("confusion matrix must be 3x3")
        if any(c < 0 for row in self.counts for c in row):
            raise ValueError("confusion matrix counts must be non-negative")

    @property
    def array(self) -> np.ndarray:
        return np.array(self.counts, dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.array.sum())

    def cell(self, predicted: str, true: str) -> int:
        return self.counts[CATEGORY_INDEX[predicted]][CATEGORY_INDEX[true]]

    def cell_shares(self) -> np.ndarray:
        """Each cell as a percentage of the grand total."""
        if self.total == 0:
            raise ValueError("empty confusion matrix has no shares")
        return 100.0 * self.array / self.total

    def error_share(self, predicted: str, true: str) -> float:
        """One off-diagonal cell as a percentage of its predicted row.

        Reads as "of everything predicted X, this share was truly Y"."""
        if predicted == true:
            raise ValueError("error_share is defined for off-diagonal cells")
        row = self.counts[CATEGORY_INDEX[predicted]]
        row_total = sum(row)
        if row_total == 0:
            raise ValueError(f"no items predicted {predicted!r}")
        return 100.0 * row[CATEGORY_INDEX[true]] / row_total

    def row_offdiagonal_share(self, predicted: str) -> float:
        """Share of a predicted row that was truly any other class."""
        i = CATEGORY_INDEX[predicted]
        row = self.counts[i]
        row_total = sum(row)
        if row_total == 0:
            raise ValueError(f"no items predicted {predicted!r}")
        return 100.0 * (row_total - row[i]) / row_total


def confusion_matrix(
    predicted: Mapping[str, str], gold: Mapping[str, str]
) -> ConfusionMatrix:
    """Confusion matrix from two post_id-keyed label maps.

    Every prediction must have a gold label and vice versa; orphans on
    either side are an error that names them.
    """
    missing_gold = sorted(set(predicted) - set(gold))
    missing_pred = sorted(set(gold) - set(predicted))
    if missing_gold or missing_pred:
        parts = []
        if missing_gold:
            parts.append(f"predictions without gold labels: {missing_gold[:10]}")
        if missing_pred:
            parts.append(f"gold labels without predictions: {missing_pred[:10]}")
        raise ValueError("post_id mismatch; " + "; ".join(parts))
    grid = [[0] * len(CATEGORIES) for _ in CATEGORIES]
    for post_id, predicted_label in predicted.items():
        validate_category(predicted_label)
        true_label = validate_category(gold[post_id])
        grid[CATEGORY_INDEX[predicted_label]][CATEGORY_INDEX[true_label]] += 1
    return ConfusionMatrix(tuple(tuple(row) for row in grid))


def confusion_from_labels(
    predicted: Sequence[str], gold: Sequence[str]
) -> ConfusionMatrix:
    """Confusion matrix from two aligned label sequences."""
    if len(predicted) != len(gold):
        raise ValueError("label sequences differ in length")
    grid = [[0] * len(CATEGORIES) for _ in CATEGORIES]
    for p, g in zip(predicted, gold):
        grid[CATEGORY_INDEX[validate_category(p)]][
            CATEGORY_INDEX[validate_category(g)]
        ] += 1
    return ConfusionMatrix(tuple(tuple(row) for row in grid))


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float

    @property
    def accuracy(self) -> float:
        # per-class accuracy is reported as class recall
        return self.recall


@dataclass(frozen=True)
class ClassMetrics:
    per_class: dict[str, ClassScores]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    overall_accuracy: float
    zero_denominator_flags: tuple[str, ...] = ()


def metrics_from_confusion(cm: ConfusionMatrix) -> ClassMetrics:
    """Precision, recall, F1 per class plus unweighted macro scores.

    Zero denominators (a class never predicted, or absent from the
    gold labels) contribute 0.0 and are flagged rather than raising.
    """
    array = cm.array.astype(np.float64)
    total = array.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    flags: list[str] = []
    per_class: dict[str, ClassScores] = {}
    for i, category in enumerate(CATEGORIES):
        predicted_total = array[i, :].sum()
        true_total = array[:, i].sum()
        if predicted_total > 0:
            precision = array[i, i] / predicted_total
        else:
            precision = 0.0
            flags.append(f"precision:{category}")
        if true_total > 0:
            recall = array[i, i] / true_total
        else:
            recall = 0.0
            flags.append(f"recall:{category}")
        if precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
            flags.append(f"f1:{category}")
        per_class[category] = ClassScores(precision, recall, f1)
    return ClassMetrics(
        per_class=per_class,
        macro_precision=float(np.mean([per_class[c].precision for c in CATEGORIES])),
        macro_recall=float(np.mean([per_class[c].recall for c in CATEGORIES])),
        macro_f1=float(np.mean([per_class[c].f1 for c in CATEGORIES])),
        overall_accuracy=float(np.trace(cm.array) / total),
        zero_denominator_flags=tuple(flags),
    )


# ---------------------------------------------------------------------------
# repeated k-fold cross-validation


@dataclass(frozen=True)
class FoldOutcome:
    repeat: int
    fold: int
    n_test: int
    metrics: ClassMetrics


@dataclass
class CVReport:
    folds: list[FoldOutcome]
    aggregate: ClassMetrics
    k: int
    repeats: int
    seed: int
    stratified: bool
    notes: list[str] = field(default_factory=list)


def _mean_metrics(fold_metrics: Sequence[ClassMetrics]) -> ClassMetrics:
    """Element-wise mean over folds. Because means commute with the
    macro average, the aggregate macro-F1 still equals the mean of the
    aggregate per-class F1s."""
    per_class = {
        c: ClassScores(
            precision=float(np.mean([m.per_class[c].precision for m in fold_metrics])),
            recall=float(np.mean([m.per_class[c].recall for m in fold_metrics])),
            f1=float(np.mean([m.per_class[c].f1 for m in fold_metrics])),
        )
        for c in CATEGORIES
    }
    flags = sorted({f for m in fold_metrics for f in m.zero_denominator_flags})
    return ClassMetrics(
        per_class=per_class,
        macro_precision=float(np.mean([m.macro_precision for m in fold_metrics])),
        macro_recall=float(np.mean([m.macro_recall for m in fold_metrics])),
        macro_f1=float(np.mean([m.macro_f1 for m in fold_metrics])),
        overall_accuracy=float(np.mean([m.overall_accuracy for m in fold_metrics])),
        zero_denominator_flags=tuple(flags),
    )


def repeated_kfold(
    texts: Sequence[str],
    labels: Sequence[str],
    estimator,
    k: int = 10,
    repeats: int = 10,
    seed: int = 0,
) -> CVReport:
    """Repeated stratified k-fold cross-validation.

    Each repeat reshuffles with its own derived seed; within a repeat
    the k test folds are disjoint and exhaustive. Folds are stratified
    by label; when the rarest class has fewer members than k,
    stratification is impossible and the split falls back to a plain
    shuffled k-fold (recorded in the report notes). A fresh clone of
    the estimator is fitted per fold, so no state leaks across folds.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    if len(texts) != len(labels):
        raise ValueError("texts and labels differ in length")
    if len(texts) < k:
        raise ValueError(f"cannot split {len(texts)} items into {k} folds")
    for label in labels:
        validate_category(label)

    texts = list(texts)
    y = np.array(labels)
    class_counts = {c: int((y == c).sum()) for c in CATEGORIES if (y == c).any()}
    stratified = min(class_counts.values()) >= k
    notes: list[str] = []
    if not stratified:
        rare = min(class_counts, key=class_counts.get)
        notes.append(
            f"class {rare!r} has {class_counts[rare]} members < k={k}; "
            "falling back to unstratified folds"
        )

    folds: list[FoldOutcome] = []
    indices = np.arange(len(texts))
    for repeat in range(repeats):
        fold_seed = seed + repeat
        splitter = (
            StratifiedKFold(n_splits=k, shuffle=True, random_state=fold_seed)
            if stratified
            else KFold(n_splits=k, shuffle=True, random_state=fold_seed)
        )
        for fold_i, (train_idx, test_idx) in enumerate(splitter.split(indices, y)):
            model = clone(estimator)
            model.fit([texts[i] for i in train_idx], list(y[train_idx]))
            predicted = model.predict([texts[i] for i in test_idx])
            cm = confusion_from_labels(list(predicted), list(y[test_idx]))
            folds.append(
                FoldOutcome(
                    repeat=repeat,
                    fold=fold_i,
                    n_test=len(test_idx),
                    metrics=metrics_from_confusion(cm),
                )
            )
    return CVReport(
        folds=folds,
        aggregate=_mean_metrics([f.metrics for f in folds]),
        k=k,
        repeats=repeats,
        seed=seed,
        stratified=stratified,
        notes=notes,
    )


# ---------------------------------------------------------------------------
# audit sampling


@dataclass(frozen=True)
class AuditItem:
    post_id: str
    predicted_label: str


@dataclass
class AuditSample:
    items: list[AuditItem]
    seed: int

    @property
    def post_ids(self) -> list[str]:
        return [item.post_id for item in self.items]

    def predicted_by_id(self) -> dict[str, str]:
        return {item.post_id: item.predicted_label for item in self.items}


def sample_for_audit(
    predictions: Sequence[Prediction], n: int, seed: int
) -> AuditSample:
    """Draw a manual-audit sample stratified by predicted label.

    Per-category quotas follow the predicted label distribution
    (largest-remainder); a category with fewer predictions than its
    quota contributes everything it has and the difference moves to
    the remaining categories. Deterministic by seed.
    """
    if n <= 0:
        raise ValueError("audit sample size must be positive")
    if n > len(predictions):
        raise ValueError(
            f"audit sample size {n} exceeds {len(predictions)} predictions"
        )
    by_label: dict[str, list[str]] = {c: [] for c in CATEGORIES}
    for pred in predictions:
        by_label[pred.label].append(pred.post_id)
    counts = [len(by_label[c]) for c in CATEGORIES]
    quotas = largest_remainder_quotas(n, [c / len(predictions) for c in counts])

    # shift overflow from under-populated strata into ones with room
    for _ in range(len(CATEGORIES)):
        for i, category in enumerate(CATEGORIES):
            overflow = quotas[i] - counts[i]
            if overflow > 0:
                quotas[i] = counts[i]
                for j in range(len(CATEGORIES)):
                    room = counts[j] - quotas[j]
                    if room > 0:
                        shift = min(room, overflow)
                        quotas[j] += shift
                        overflow -= shift
                        if overflow == 0:
                            break

    rng = np.random.default_rng(seed)
    items: list[AuditItem] = []
    predicted_label = {p.post_id: p.label for p in predictions}
    for category, quota in zip(CATEGORIES, quotas):
        pool = sorted(by_label[category])
        picked = rng.choice(len(pool), size=quota, replace=False) if quota else []
        items.extend(AuditItem(pool[i], category) for i in sorted(picked))
    assert len(items) == n
    return AuditSample(items=items, seed=seed)


AUDIT_CSV_FIELDS = ("post_id", "text", "human_label")


def write_audit_csv(
    sample: AuditSample, texts_by_id: Mapping[str, str], path: str | Path
) -> None:
    """Blind audit sheet: the predicted label stays out of the file so
    auditors label fresh."""
    import csv as _csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(AUDIT_CSV_FIELDS)
        for item in sample.items:
            writer.writerow([item.post_id, texts_by_id[item.post_id], ""])


def read_audit_csv(path: str | Path) -> dict[str, str]:
    """Filled-in audit sheet back to {post_id: human label}; unlabeled
    rows are skipped."""
    import csv as _csv

    labels: dict[str, str] = {}
    with Path(path).open("r", encoding="utf-8", newline="") as handle:
        reader = _csv.DictReader(handle)
        for row in reader:
            label = (row.get("human_label") or "").strip()
            if label:
                labels[row["post_id"]] = validate_category(label)
    return labels


def audit_confusion(
    sample: AuditSample, human_labels: Mapping[str, str]
) -> ConfusionMatrix:
    """Predicted (rows) vs human audit labels (columns) for the posts
    the auditors actually labeled."""
    predicted = sample.predicted_by_id()
    shared = {pid: predicted[pid] for pid in human_labels if pid in predicted}
    unknown = sorted(set(human_labels) - set(predicted))
    if unknown:
        raise ValueError(f"audit labels for posts outside the sample: {unknown[:10]}")
    if not shared:
        raise ValueError("no audited posts overlap the sample")
    return confusion_matrix(shared, dict(human_labels))
