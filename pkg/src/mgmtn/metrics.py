"""Evaluation metrics: per-attribute accuracy and class-balanced mean accuracy.

Counting is associative, so partial counts from parallel shards merge by
addition. Mean accuracy (mA) averages the true-positive and true-negative
rates per attribute; a split with no positives (or no negatives) for some
attribute contributes only its defined side, and such attributes are flagged
in the report.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grouping import AttributeGrouping


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    tn: np.ndarray
    fn: np.ndarray

    def __post_init__(self):
        self.tp, self.fp, self.tn, self.fn = (
            np.asarray(a, dtype=np.int64) for a in (self.tp, self.fp, self.tn, self.fn)
        )
        totals = self.tp + self.fp + self.tn + self.fn
        if totals.size and not np.all(totals == totals.flat[0]):
            raise ValueError("sample count differs across attributes")

    @property
    def num_samples(self) -> int:
        return int((self.tp + self.fp + self.tn + self.fn).flat[0]) if self.tp.size else 0

    @property
    def num_attributes(self) -> int:
        return self.tp.shape[0]

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp,
            self.tn + other.tn, self.fn + other.fn,
        )


def count_predictions(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Confusion counts per attribute from (N, A) scores and binary labels.

    Scores at or above the threshold predict positive; pass 0/1 predictions
    with the default threshold to count hard decisions directly.
    """
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"shape mismatch: {scores.shape} vs {labels.shape}")
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(
        tp=np.logical_and(pred, pos).sum(axis=0),
        fp=np.logical_and(pred, ~pos).sum(axis=0),
        tn=np.logical_and(~pred, ~pos).sum(axis=0),
        fn=np.logical_and(~pred, pos).sum(axis=0),
    )


def accuracy(counts: ConfusionCounts, attr_subset=None) -> float:
    """Mean over attributes of (TP + TN) / N."""
    if counts.num_samples == 0:
        raise ValueError("empty counts")
    per_attr = (counts.tp + counts.tn) / counts.num_samples
    if attr_subset is not None:
        per_attr = per_attr[list(attr_subset)]
    return float(per_attr.mean())


def _rates(counts: ConfusionCounts):
    pos = counts.tp + counts.fn
    neg = counts.tn + counts.fp
    with np.errstate(invalid="ignore", divide="ignore"):
        tpr = np.where(pos > 0, counts.tp / np.maximum(pos, 1), np.nan)
        tnr = np.where(neg > 0, counts.tn / np.maximum(neg, 1), np.nan)
    return tpr, tnr


def mean_accuracy(counts: ConfusionCounts, attr_subset=None) -> float:
    """Mean over attributes of (TPR + TNR) / 2, skipping undefined sides."""
    tpr, tnr = _rates(counts)
    per_attr = np.nanmean(np.stack([tpr, tnr]), axis=0)
    if attr_subset is not None:
        per_attr = per_attr[list(attr_subset)]
    return float(per_attr.mean())


def degenerate_attributes(counts: ConfusionCounts) -> np.ndarray:
    """Indices of attributes with no positives or no negatives in the split."""
    tpr, tnr = _rates(counts)
    return np.nonzero(np.isnan(tpr) | np.isnan(tnr))[0]


def metrics_report(counts: ConfusionCounts, grouping: AttributeGrouping,
                   threshold: float = 0.5, attr_subset=None) -> dict:
    """JSON-ready summary with overall, per-attribute and per-group metrics."""
    tpr, tnr = _rates(counts)
    acc = (counts.tp + counts.tn) / counts.num_samples
    per_attr = []
    for i, name in enumerate(grouping.attribute_names):
        per_attr.append({
            "name": name,
            "acc": float(acc[i]),
            "tpr": None if np.isnan(tpr[i]) else float(tpr[i]),
            "tnr": None if np.isnan(tnr[i]) else float(tnr[i]),
        })
    per_group = []
    for group in grouping.groups:
        idx = list(group.attribute_indices)
        per_group.append({
            "name": group.name,
            "acc": accuracy(counts, idx),
            "mA": mean_accuracy(counts, idx),
        })
    report = {
        "num_samples": counts.num_samples,
        "threshold": threshold,
        "accuracy": accuracy(counts, attr_subset),
        "mA": mean_accuracy(counts, attr_subset),
        "per_attribute": per_attr,
        "per_group": per_group,
        "degenerate_attributes": [
            grouping.attribute_names[i] for i in degenerate_attributes(counts)
        ],
    }
    if attr_subset is not None:
        report["attr_subset"] = [grouping.attribute_names[i] for i in attr_subset]
    return report
