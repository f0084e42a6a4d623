"""Confusion counting and metric aggregation for detection pipelines."""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ConfusionCounts",
    "MetricSet",
    "MetricsSummary",
    "SummaryStat",
    "aggregate",
    "compute_metrics",
    "score_detection",
]

METRIC_NAMES = ("precision", "sensitivity", "specificity", "f1")

_POLICIES = ("skip", "one")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def score_detection(verdicts, truth_labels) -> ConfusionCounts:
    """Tally evaluated verdicts against per-batch ground-truth labels.

    Unevaluated verdicts are excluded entirely: a window without enough
    observations is evidence of nothing. Verdicts must map one-to-one
    onto label indices.
    """
    truth_labels = list(truth_labels)
    seen: set[int] = set()
    tp = fp = tn = fn = 0
    for verdict in verdicts:
        if not verdict.evaluated:
            continue
        index = verdict.batch_index
        if index < 0 or index >= len(truth_labels):
            raise ValueError(
                f"batch-misalignment: verdict batch {index} outside 0..{len(truth_labels) - 1}"
            )
        if index in seen:
            raise ValueError(f"batch-misalignment: duplicate verdict for batch {index}")
        seen.add(index)
        truth = bool(truth_labels[index])
        if verdict.drift:
            if truth:
                tp += 1
            else:
                fp += 1
        else:
            if truth:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass(frozen=True)
class MetricSet:
    """Per-pool metrics; None marks a value undefined under 'skip'."""

    precision: float | None
    sensitivity: float | None
    specificity: float | None
    f1: float | None


def compute_metrics(counts: ConfusionCounts, empty_class_policy: str = "skip") -> MetricSet:
    """Precision, sensitivity, specificity and F1 from one confusion table.

    Zero-denominator conventions: with actual positives present but no
    positive predictions, precision is 0 (not undefined). Pools with no
    positives anywhere have no defined positive-class metrics; the
    default "skip" policy marks them None so aggregation can drop and
    flag them, while "one" scores them 1.0.
    """
    if empty_class_policy not in _POLICIES:
        raise ValueError(
            f"invalid-empty-class-policy: {empty_class_policy!r}, expected one of {_POLICIES}"
        )
    undefined = 1.0 if empty_class_policy == "one" else None
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn

    if tp + fp > 0:
        precision = tp / (tp + fp)
    elif fn > 0:
        precision = 0.0
    else:
        precision = undefined

    sensitivity = tp / (tp + fn) if tp + fn > 0 else undefined
    specificity = tn / (tn + fp) if tn + fp > 0 else undefined

    if precision is None or sensitivity is None:
        f1 = undefined
    elif precision + sensitivity > 0:
        f1 = 2 * precision * sensitivity / (precision + sensitivity)
    else:
        f1 = 0.0
    return MetricSet(precision=precision, sensitivity=sensitivity, specificity=specificity, f1=f1)


@dataclass(frozen=True)
class SummaryStat:
    """Mean and population standard deviation over the defined pool."""

    mean: float | None
    std: float | None
    n: int
    skipped: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "n": self.n, "skipped": self.skipped}


@dataclass(frozen=True)
class MetricsSummary:
    precision: SummaryStat
    sensitivity: SummaryStat
    specificity: SummaryStat
    f1: SummaryStat

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in METRIC_NAMES}


def _summarise(values: list[float], skipped: int) -> SummaryStat:
    if not values:
        return SummaryStat(mean=None, std=None, n=0, skipped=skipped)
    n = len(values)
    mean = math.fsum(values) / n
    variance = math.fsum((v - mean) ** 2 for v in values) / n
    return SummaryStat(mean=mean, std=math.sqrt(variance), n=n, skipped=skipped)


def aggregate(pool: list[MetricSet]) -> MetricsSummary:
    """Mean and std per metric over a pool of MetricSet entries.

    Entries whose metric is None (undefined under the skip policy) are
    excluded from that metric and counted in `skipped`.
    """
    pool = list(pool)
    if not pool:
        raise ValueError("empty-pool: nothing to aggregate")
    stats = {}
    for name in METRIC_NAMES:
        values = [getattr(entry, name) for entry in pool]
        defined = [v for v in values if v is not None]
        stats[name] = _summarise(defined, skipped=len(values) - len(defined))
    return MetricsSummary(**stats)
