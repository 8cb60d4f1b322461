"""Visit-averaged multi-label metrics: Jaccard, precision, recall, F1, PR-AUC."""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError

METRIC_NAMES = ("jaccard", "f1", "prauc")


@dataclass(frozen=True)
class EvalRecord:
    truth: frozenset
    predicted: frozenset
    scores: np.ndarray

    @classmethod
    def from_scores(cls, truth, scores, threshold=0.5):
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        predicted = frozenset(int(j) for j in np.flatnonzero(scores > threshold))
        return cls(frozenset(int(t) for t in truth), predicted, scores)


def visit_jaccard(truth, predicted):
    union = len(truth | predicted)
    return 1.0 if union == 0 else len(truth & predicted) / union


def visit_precision(truth, predicted):
    if not predicted:
        return 1.0 if not truth else 0.0
    return len(truth & predicted) / len(predicted)


def visit_recall(truth, predicted):
    if not truth:
        return 1.0 if not predicted else 0.0
    return len(truth & predicted) / len(truth)


def visit_f1(truth, predicted):
    p = visit_precision(truth, predicted)
    r = visit_recall(truth, predicted)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def average_precision(scores, labels):
    """Step-sum AP: mean precision at the rank of each positive.

    Ties are broken by label index (stable sort). Returns ``None`` when
    there is no positive label.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.shape != labels.shape:
        raise DimensionError("average_precision", scores.shape, labels.shape)
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def _mean(values):
    values = list(values)
    return float(np.mean(values)) if values else 0.0


def jaccard(records):
    return _mean(visit_jaccard(r.truth, r.predicted) for r in records)


def precision(records):
    return _mean(visit_precision(r.truth, r.predicted) for r in records)


def recall(records):
    return _mean(visit_recall(r.truth, r.predicted) for r in records)


def f1(records):
    return _mean(visit_f1(r.truth, r.predicted) for r in records)


def _labels(record):
    labels = np.zeros(record.scores.shape[0], dtype=bool)
    labels[list(record.truth)] = True
    return labels


def pr_auc(records, pooled=False):
    """Average precision per visit, then averaged; ``pooled`` ranks all pairs together.

    Visits with an empty truth set have no precision-recall curve and are
    skipped with a warning.
    """
    records = list(records)
    if pooled:
        if not records:
            return 0.0
        ap = average_precision(np.concatenate([r.scores for r in records]), np.concatenate([_labels(r) for r in records]))
        return 0.0 if ap is None else ap
    values, skipped = [], 0
    for r in records:
        ap = average_precision(r.scores, _labels(r))
        if ap is None:
            skipped += 1
        else:
            values.append(ap)
    if skipped:
        warnings.warn(f"PR-AUC skipped {skipped} visit(s) with no true medication", RuntimeWarning, stacklevel=2)
    return _mean(values)


def evaluate(records, pooled_prauc=False):
    records = list(records)
    return {
        "jaccard": jaccard(records),
        "precision": precision(records),
        "recall": recall(records),
        "f1": f1(records),
        "prauc": pr_auc(records, pooled=pooled_prauc),
        "n_visits": len(records),
    }


def format_table(rows, columns=("jaccard", "f1", "prauc"), label="model"):
    """Aligned text table of ``(name, metrics_dict)`` rows."""
    header = [label] + list(columns)
    body = [[str(name)] + [f"{m[c]:.4f}" for c in columns] for name, m in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in [header] + body]
    return "\n".join(lines) + "\n"


def format_csv(rows, columns=("jaccard", "f1", "prauc"), label="model"):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([label] + list(columns))
    for name, m in rows:
        writer.writerow([name] + [repr(float(m[c])) for c in columns])
    return buf.getvalue()
