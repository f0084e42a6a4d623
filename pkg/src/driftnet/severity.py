"""Cross-agent drift severity: per-batch agreement scoring.

Severity for a batch is the fraction of monitoring agents flagging
drift at that batch index. Classification compares the count of
flagging agents against the count of sites whose ground truth says the
batch drifted, with multisite (>= 2 sites) events as the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass

from .metrics import ConfusionCounts

__all__ = [
    "SeverityOutcome",
    "SeverityRecord",
    "build_severity",
    "classify_severity",
    "severity_score",
]

_RULES = ("exact", "threshold")


def severity_score(detections) -> float:
    """Mean of binary per-agent drift flags for one batch."""
    detections = list(detections)
    if not detections:
        raise ValueError("no-agents: severity needs at least one detection flag")
    for flag in detections:
        if flag not in (0, 1, False, True):
            raise ValueError(f"invalid-detection: {flag!r} is not a binary flag")
    return sum(bool(flag) for flag in detections) / len(detections)


def classify_severity(c_true: int, c_pred: int, rule: str = "exact") -> str:
    """Categorise one batch given true and predicted drifted-site counts.

    Batches where fewer than 2 sites truly drift are negatives; they are
    TN unless 2 or more agents fire. For positives the default "exact"
    rule demands the predicted count match exactly (overshoot is FP,
    undershoot FN); the "threshold" rule only asks for >= 2 agents.
    """
    if rule not in _RULES:
        raise ValueError(f"invalid-severity-rule: {rule!r}, expected one of {_RULES}")
    c_true = int(c_true)
    c_pred = int(c_pred)
    if c_true < 0 or c_pred < 0:
        raise ValueError("invalid-count: drifted-site counts cannot be negative")
    if c_true >= 2:
        if rule == "threshold":
            return "TP" if c_pred >= 2 else "FN"
        if c_pred == c_true:
            return "TP"
        return "FP" if c_pred > c_true else "FN"
    return "TN" if c_pred < 2 else "FP"


@dataclass(frozen=True)
class SeverityRecord:
    """Observed per-batch agreement across agents."""

    batch_index: int
    n_agents: int
    detections: tuple[int, ...]
    score: float


@dataclass(frozen=True)
class SeverityOutcome:
    """Severity classification of one batch against ground truth."""

    batch_index: int
    c_true: int
    c_pred: int
    category: str


def build_severity(
    per_agent_flags: list[list[int]],
    per_agent_truth: list[list[int]],
    rule: str = "exact",
) -> tuple[list[SeverityRecord], list[SeverityOutcome], ConfusionCounts]:
    """Score every shared batch index across a scheme's agents.

    `per_agent_flags[i][t]` is 1 when agent i flagged drift at batch t
    (agents that could not evaluate a window contribute 0), and
    `per_agent_truth[i][t]` is that site's ground-truth batch label. All
    agents must cover the same number of batches.
    """
    if not per_agent_flags:
        raise ValueError("no-agents: severity needs at least one agent")
    if len(per_agent_flags) != len(per_agent_truth):
        raise ValueError("batch-misalignment: flags and truth cover different agents")
    n_batches = len(per_agent_flags[0])
    for flags, truth in zip(per_agent_flags, per_agent_truth):
        if len(flags) != n_batches or len(truth) != n_batches:
            raise ValueError("batch-misalignment: agents cover different batch counts")

    records: list[SeverityRecord] = []
    outcomes: list[SeverityOutcome] = []
    counts = {"TP": 0, "FP": 0, "TN": 0, "FN": 0}
    for t in range(n_batches):
        detections = tuple(int(bool(flags[t])) for flags in per_agent_flags)
        c_pred = sum(detections)
        c_true = sum(int(bool(truth[t])) for truth in per_agent_truth)
        category = classify_severity(c_true, c_pred, rule)
        counts[category] += 1
        records.append(
            SeverityRecord(
                batch_index=t,
                n_agents=len(detections),
                detections=detections,
                score=severity_score(detections),
            )
        )
        outcomes.append(
            SeverityOutcome(batch_index=t, c_true=c_true, c_pred=c_pred, category=category)
        )
    confusion = ConfusionCounts(
        tp=counts["TP"], fp=counts["FP"], tn=counts["TN"], fn=counts["FN"]
    )
    return records, outcomes, confusion
