"""Evaluation arithmetic: edit distance, word error rate, classification
reports, and opinion-score aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, RangeError


def levenshtein(a: list, b: list) -> int:
    """Minimum insertions + deletions + substitutions turning a into b."""
    a, b = list(a), list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = np.arange(len(b) + 1)
    curr = np.zeros(len(b) + 1, dtype=np.int64)
    for i, x in enumerate(a, start=1):
        curr[0] = i
        for j, y in enumerate(b, start=1):
            curr[j] = min(prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + (x != y))
        prev, curr = curr, prev
    return int(prev[len(b)])


@dataclass(frozen=True)
class WerUtterance:
    """One hypothesis with one or more reference token lists."""

    hypothesis: list
    references: list

    def __post_init__(self):
        if not self.references:
            raise DataError("each utterance needs at least one reference")


def tokenize(text: str) -> list[str]:
    """Lowercase then split on whitespace; punctuation is the caller's job."""
    return text.lower().split()


def wer(corpus: list[WerUtterance]) -> float:
    """Pooled word error rate over a corpus with multi-reference support.

    Per utterance the closest reference (ties going to the shorter one)
    contributes its edit distance to the numerator and its token count to
    the denominator, so a perfect system scores exactly 0.
    """
    if not corpus:
        raise DataError("empty corpus")
    total_edits = 0
    total_ref = 0
    for utt in corpus:
        best = min(
            ((levenshtein(ref, utt.hypothesis), len(ref)) for ref in utt.references),
            key=lambda pair: pair,
        )
        total_edits += best[0]
        total_ref += best[1]
    if total_ref == 0:
        return 0.0 if total_edits == 0 else float("inf")
    return total_edits / total_ref


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix; rows are true classes, columns predictions."""

    counts: np.ndarray
    classes: list[str]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {counts.shape}")
        if counts.shape[0] != len(self.classes):
            raise DataError("class list length must match matrix size")
        if np.any(counts < 0):
            raise DataError("counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_pairs(cls, true_labels, predicted_labels, classes) -> "ConfusionMatrix":
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(true_labels, predicted_labels, strict=True):
            counts[index[t], index[p]] += 1
        return cls(counts=counts, classes=list(classes))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def f1_report(cm: ConfusionMatrix) -> dict:
    """Per-class precision/recall/F1/support plus macro, weighted, accuracy.

    Zero denominators yield 0 by convention so the report is total.
    """
    counts = cm.counts
    tp = np.diag(counts).astype(np.float64)
    predicted = counts.sum(axis=0).astype(np.float64)
    actual = counts.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros_like(tp), where=pr > 0)
    support = actual.astype(np.int64)
    total = cm.total
    accuracy = float(tp.sum() / total) if total else 0.0
    weights = support / total if total else np.zeros_like(tp)
    per_class = {
        cls: {
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(support[i]),
        }
        for i, cls in enumerate(cm.classes)
    }
    return {
        "per_class": per_class,
        "accuracy": accuracy,
        "macro": {
            "precision": float(precision.mean()),
            "recall": float(recall.mean()),
            "f1": float(f1.mean()),
        },
        "weighted": {
            "precision": float(precision @ weights),
            "recall": float(recall @ weights),
            "f1": float(f1 @ weights),
        },
        "total": total,
    }


def format_f1_table(report: dict) -> str:
    """Aligned text table in Precision / Recall / F1-Score / Support order."""
    rows = [("", "Precision", "Recall", "F1-Score", "Support")]
    for cls, m in report["per_class"].items():
        rows.append((cls, f"{m['precision']:.2f}", f"{m['recall']:.2f}", f"{m['f1']:.2f}", str(m["support"])))
    rows.append(("Accuracy", "", "", f"{report['accuracy']:.2f}", str(report["total"])))
    rows.append(
        ("Macro avg",
         f"{report['macro']['precision']:.2f}",
         f"{report['macro']['recall']:.2f}",
         f"{report['macro']['f1']:.2f}",
         str(report["total"]))
    )
    rows.append(
        ("Weighted avg",
         f"{report['weighted']['precision']:.2f}",
         f"{report['weighted']['recall']:.2f}",
         f"{report['weighted']['f1']:.2f}",
         str(report["total"]))
    )
    widths = [max(len(r[i]) for r in rows) for i in range(5)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    return "\n".join(lines)


def mos(ratings: list[float]) -> float:
    """Arithmetic mean of 1-5 opinion ratings."""
    if not ratings:
        raise DataError("need at least one rating")
    for r in ratings:
        if not 1.0 <= r <= 5.0:
            raise RangeError(f"rating {r} outside [1, 5]")
    return float(sum(ratings) / len(ratings))
