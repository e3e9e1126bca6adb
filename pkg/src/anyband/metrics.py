"""Confusion counting and the five mask-quality metrics.

All metrics reduce to TP/TN/FP/FN pixel counts, with cloud (1) as the
positive class and 255 marking pixels excluded from scoring. Counts are
integers and merge exactly, so streaming accumulation over chunks equals a
single pass. A metric with an undefined denominator is reported as None,
never silently as 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

NODATA = 255
METRIC_NAMES = ("OA", "BA", "Precision", "Recall", "F1")


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn,
            self.fp + other.fp, self.fn + other.fn,
        )

    __add__ = merge


def accumulate_confusion(pred_mask, truth_mask,
                         counts: ConfusionCounts | None = None) -> ConfusionCounts:
    pred = np.asarray(pred_mask)
    truth = np.asarray(truth_mask)
    if pred.shape != truth.shape:
        raise ValueError(f"extent mismatch: pred {pred.shape} vs truth {truth.shape}")
    valid = truth != NODATA
    p = pred[valid].astype(bool)
    t = truth[valid].astype(bool)
    update = ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
    )
    return update if counts is None else counts.merge(update)


def _ratio(num, den):
    return 100.0 * num / den if den > 0 else None


def compute_metrics(c: ConfusionCounts) -> dict[str, float | None]:
    """OA, BA, Precision, Recall, F1 in percent; None where undefined."""
    if c.total == 0:
        raise ValueError("compute_metrics needs at least one evaluated pixel")
    recall = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    neg_recall = _ratio(c.tn, c.tn + c.fp)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    ba = None if recall is None or neg_recall is None else 0.5 * (recall + neg_recall)
    return {
        "OA": 100.0 * (c.tp + c.tn) / c.total,
        "BA": ba,
        "Precision": precision,
        "Recall": recall,
        "F1": f1,
    }


def tagged_aggregate(per_scene, vocabulary=None):
    """Pool confusion counts per tag and compute metrics over the pools.

    per_scene: iterable of (tags, ConfusionCounts). Tags outside the
    declared vocabulary are pooled under "untagged" with a warning. A
    "total" row pools every scene.
    """
    pools: dict[str, ConfusionCounts] = {"total": ConfusionCounts()}
    for tags, counts in per_scene:
        pools["total"] = pools["total"].merge(counts)
        for tag in tags:
            if vocabulary is not None and tag not in vocabulary:
                warnings.warn(f"unknown tag {tag!r}; pooled under 'untagged'")
                tag = "untagged"
            pools.setdefault(tag, ConfusionCounts())
            pools[tag] = pools[tag].merge(counts)
    return {tag: compute_metrics(c) for tag, c in pools.items() if c.total > 0}


def format_report(table: dict[str, dict[str, float | None]]) -> str:
    """Delimiter-separated report: one `metric,tag,value` line per cell."""
    lines = ["metric,tag,value"]
    for tag in sorted(table, key=lambda t: (t != "total", t)):
        for name in METRIC_NAMES:
            v = table[tag][name]
            lines.append(f"{name},{tag},{'NA' if v is None else f'{v:.4f}'}")
    return "\n".join(lines) + "\n"


def format_summary(metrics: dict[str, float | None]) -> str:
    parts = [
        f"{name}={'NA' if metrics[name] is None else f'{metrics[name]:.2f}'}"
        for name in METRIC_NAMES
    ]
    return "  ".join(parts)
