"""In-silico drift simulation: synthetic sites, injection, grid runs.

The pipeline mirrors a multisite production deployment. Per replicate:
draw (or load) per-site output series, grow each test series by a
bootstrap fraction, overwrite one contiguous segment per site with
drifted values, equalise series lengths by scattering nulls, then run
one monitoring agent per site (or one over the interleaved union) and
score its verdicts against the injected ground truth.

Every random draw flows from a seed derived from (master seed, grid
cell, replicate index, purpose), so results are independent of
execution order and thread count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .agent import AgentConfig, AgentId, DriftAgent, DriftVerdict, logging_hook, webhook_hook
from .metrics import (
    ConfusionCounts,
    MetricSet,
    MetricsSummary,
    aggregate,
    compute_metrics,
    score_detection,
)
from .schemes import ReferenceSpec, SchemeKind
from .severity import SeverityOutcome, SeverityRecord, build_severity

__all__ = [
    "DEFAULT_SITES",
    "GridCell",
    "GridResult",
    "ReplicateResult",
    "SimConfig",
    "SiteSeries",
    "SiteSpec",
    "augment",
    "cell_label",
    "derive_seed",
    "enumerate_cells",
    "generate_synthetic_sites",
    "inject_drift",
    "interleave_sites",
    "pad_sparsity",
    "run_grid",
    "run_replicate",
    "summary_dict",
    "window_truth_labels",
]

logger = logging.getLogger(__name__)

CENTRALIZED_STREAM_ID = "ALL"


@dataclass(frozen=True)
class SiteSpec:
    """One site's data source: Beta parameters or a pair of CSV files."""

    site_id: str
    reference_size: int | None = None
    test_size: int | None = None
    alpha: float = 2.0
    beta: float = 5.0
    reference_csv: str | None = None
    test_csv: str | None = None

    def __post_init__(self) -> None:
        if not self.site_id:
            raise ValueError("invalid-site: site_id must be a nonempty string")
        if (self.reference_csv is None) != (self.test_csv is None):
            raise ValueError(
                f"invalid-site: {self.site_id} must set both reference_csv and test_csv or neither"
            )
        if self.reference_csv is None:
            if self.reference_size is None or self.test_size is None:
                raise ValueError(
                    f"invalid-site: {self.site_id} needs reference_size and test_size"
                )
            if self.reference_size < 4 or self.test_size < 4:
                raise ValueError(f"invalid-site: {self.site_id} sizes must be >= 4")
            if self.alpha <= 0 or self.beta <= 0:
                raise ValueError(f"invalid-site: {self.site_id} Beta parameters must be positive")


# Default 4-site cohort. Sizes mirror a realistic multisite deployment with
# strongly unbalanced reference and production volumes. The Beta parameters
# keep per-site output distributions concentrated (probability outputs of one
# shared model) with modestly different site means, so site-level references
# stay informative while the pooled mixture remains a fair global baseline.
DEFAULT_SITES: tuple[SiteSpec, ...] = (
    SiteSpec("DS-0", reference_size=39, test_size=92, alpha=9.0, beta=21.0),
    SiteSpec("DS-1", reference_size=171, test_size=128, alpha=10.0, beta=20.0),
    SiteSpec("DS-2", reference_size=11, test_size=64, alpha=14.0, beta=21.0),
    SiteSpec("DS-3", reference_size=14, test_size=18, alpha=9.0, beta=23.0),
)

_UPDATE_CONDITIONS = ("lower", "always-when-clean")
_RESAMPLE_MODES = ("permutation", "bootstrap")
_SEVERITY_RULES = ("exact", "threshold")
_POLICIES = ("skip", "one")


@dataclass
class SimConfig:
    """Complete, validated description of one simulation campaign."""

    master_seed: int = 20260816
    replicates: int = 500
    drift_strength_grid: tuple[float, ...] = (0.2, 0.3, 0.5)
    drift_duration_grid: tuple[float, ...] = (0.2, 0.3, 0.5)
    window_fraction_grid: tuple[float, ...] = (0.05, 0.10, 0.15)
    augmentation: float = 0.10
    threshold: float = 0.05
    permutations: int = 1000
    bins: int = 100
    global_weight: float = 1.0
    weight_decay: float = 0.1
    min_global_weight: float = 0.1
    center_window: int | None = None
    adaptive_update_condition: str = "lower"
    resample: str = "permutation"
    severity_tp_rule: str = "exact"
    batch_label_rho: float = 0.5
    min_valid_fraction: float = 0.5
    empty_class_policy: str = "skip"
    schemes: tuple[SchemeKind, ...] = tuple(SchemeKind)
    sites: tuple[SiteSpec, ...] = DEFAULT_SITES
    model_id: str = "model-0"
    webhook_url: str | None = None

    def __post_init__(self) -> None:
        self.schemes = tuple(SchemeKind(s) for s in self.schemes)
        if not self.schemes:
            raise ValueError("no-agents: at least one monitoring scheme is required")
        self.sites = tuple(
            s if isinstance(s, SiteSpec) else SiteSpec(**s) for s in self.sites
        )
        if not self.sites:
            raise ValueError("no-agents: at least one site is required")
        ids = [s.site_id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ValueError("invalid-site: duplicate site_id")
        self.drift_strength_grid = tuple(float(v) for v in self.drift_strength_grid)
        self.drift_duration_grid = tuple(float(v) for v in self.drift_duration_grid)
        self.window_fraction_grid = tuple(float(v) for v in self.window_fraction_grid)
        if not self.drift_strength_grid or any(v < 0 for v in self.drift_strength_grid):
            raise ValueError("invalid-grid: drift strengths must be >= 0")
        if not self.drift_duration_grid or any(
            not 0.0 < v < 1.0 for v in self.drift_duration_grid
        ):
            raise ValueError("invalid-grid: drift durations must lie in (0, 1)")
        if not self.window_fraction_grid or any(
            not 0.0 < v <= 1.0 for v in self.window_fraction_grid
        ):
            raise ValueError("invalid-grid: window fractions must lie in (0, 1]")
        if self.replicates < 1:
            raise ValueError("invalid-replicates: need at least 1")
        if self.permutations < 100:
            raise ValueError("insufficient-permutations: need at least 100 resamples")
        if self.bins < 2:
            raise ValueError("invalid-bin-count: need at least 2 bins")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("invalid-threshold: must lie in (0, 1)")
        if self.augmentation < 0:
            raise ValueError("invalid-augmentation: must be >= 0")
        if not 0.0 <= self.batch_label_rho < 1.0:
            raise ValueError("invalid-batch-label-rho: must lie in [0, 1)")
        if not 0.0 <= self.min_valid_fraction <= 1.0:
            raise ValueError("invalid-min-valid-fraction: must lie in [0, 1]")
        if self.adaptive_update_condition not in _UPDATE_CONDITIONS:
            raise ValueError(
                f"invalid-update-condition: {self.adaptive_update_condition!r}"
            )
        if self.resample not in _RESAMPLE_MODES:
            raise ValueError(f"unknown-resample: {self.resample!r}")
        if self.severity_tp_rule not in _SEVERITY_RULES:
            raise ValueError(f"invalid-severity-rule: {self.severity_tp_rule!r}")
        if self.empty_class_policy not in _POLICIES:
            raise ValueError(f"invalid-empty-class-policy: {self.empty_class_policy!r}")
        if self.center_window is not None and self.center_window < 1:
            raise ValueError("invalid-center-window: must be a positive batch count")

    def to_dict(self) -> dict:
        sites = []
        for s in self.sites:
            entry = {"site_id": s.site_id}
            if s.reference_csv is not None:
                entry["reference_csv"] = s.reference_csv
                entry["test_csv"] = s.test_csv
            else:
                entry.update(
                    reference_size=s.reference_size,
                    test_size=s.test_size,
                    alpha=s.alpha,
                    beta=s.beta,
                )
            sites.append(entry)
        return {
            "master_seed": self.master_seed,
            "replicates": self.replicates,
            "grid": {
                "drift_strength": list(self.drift_strength_grid),
                "drift_duration": list(self.drift_duration_grid),
                "window_fraction": list(self.window_fraction_grid),
            },
            "augmentation": self.augmentation,
            "threshold": self.threshold,
            "permutations": self.permutations,
            "bins": self.bins,
            "adaptive": {
                "global_weight": self.global_weight,
                "weight_decay": self.weight_decay,
                "min_global_weight": self.min_global_weight,
                "center_window": self.center_window,
                "update_condition": self.adaptive_update_condition,
            },
            "resample": self.resample,
            "severity_tp_rule": self.severity_tp_rule,
            "batch_label_rho": self.batch_label_rho,
            "min_valid_fraction": self.min_valid_fraction,
            "empty_class_policy": self.empty_class_policy,
            "schemes": [s.value for s in self.schemes],
            "sites": sites,
            "model_id": self.model_id,
            "webhook_url": self.webhook_url,
        }


class GridCell(NamedTuple):
    drift_strength: float
    drift_duration: float
    window_fraction: float


def cell_label(cell: GridCell) -> str:
    return (
        f"strength{cell.drift_strength}"
        f"_duration{cell.drift_duration}"
        f"_window{cell.window_fraction}"
    )


def enumerate_cells(config: SimConfig) -> list[GridCell]:
    return [
        GridCell(s, d, w)
        for s in config.drift_strength_grid
        for d in config.drift_duration_grid
        for w in config.window_fraction_grid
    ]


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 64-bit seed from the master seed and a label path."""
    payload = json.dumps(
        [int(master_seed), [str(p) for p in parts]], separators=(",", ":")
    )
    return int.from_bytes(hashlib.sha256(payload.encode()).digest()[:8], "little")


def _rng(config: SimConfig, cell: GridCell, replicate_index: int, *parts) -> np.random.Generator:
    seed = derive_seed(
        config.master_seed,
        cell.drift_strength,
        cell.drift_duration,
        cell.window_fraction,
        replicate_index,
        *parts,
    )
    return np.random.default_rng(seed)


@dataclass
class SiteSeries:
    """Ordered output series for one site; NaN marks a missing slot."""

    site_id: str
    values: np.ndarray
    drift_mask: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        self.drift_mask = np.asarray(self.drift_mask, dtype=np.int8).ravel()
        if self.values.size != self.drift_mask.size:
            raise ValueError("batch-misalignment: values and drift_mask lengths differ")
        if not np.isin(self.drift_mask, (0, 1)).all():
            raise ValueError("invalid-mask: drift_mask entries must be 0 or 1")
        if (self.drift_mask[np.isnan(self.values)] != 0).any():
            raise ValueError("invalid-mask: null slots cannot be marked as drifted")

    def __len__(self) -> int:
        return int(self.values.size)


def generate_synthetic_sites(
    sites, rng=None
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Draw per-site reference and test series from each site's Beta law."""
    gen = np.random.default_rng(rng)
    refs: dict[str, np.ndarray] = {}
    tests: dict[str, np.ndarray] = {}
    for spec in sites:
        if spec.reference_csv is not None:
            raise ValueError(f"invalid-site: {spec.site_id} is file-backed, not synthetic")
        refs[spec.site_id] = gen.beta(spec.alpha, spec.beta, size=spec.reference_size)
        tests[spec.site_id] = gen.beta(spec.alpha, spec.beta, size=spec.test_size)
    return refs, tests


def augment(series: SiteSeries, amount: float, rng=None) -> SiteSeries:
    """Grow a dense series by ceil(amount * n) resampled values.

    Each inserted value is drawn with replacement from the original
    series and spliced in at a uniformly random position, preserving the
    relative order of everything already present.
    """
    if amount < 0:
        raise ValueError("invalid-augmentation: amount must be >= 0")
    values = series.values
    if np.isnan(values).any():
        raise ValueError("null-in-series: augmentation requires a dense series")
    if series.drift_mask.any():
        raise ValueError("drift-already-present: augment must run before injection")
    gen = np.random.default_rng(rng)
    extra = math.ceil(amount * values.size)
    out = list(values)
    if extra > 0:
        picks = values[gen.integers(0, values.size, size=extra)]
        for value in picks:
            position = int(gen.integers(0, len(out) + 1))
            out.insert(position, value)
    out = np.asarray(out, dtype=np.float64)
    return SiteSeries(series.site_id, out, np.zeros(out.size, dtype=np.int8))


def inject_drift(series: SiteSeries, strength: float, duration: float, rng=None) -> SiteSeries:
    """Overwrite one contiguous segment with shifted uniform noise.

    The segment covers ceil(duration * n) consecutive slots starting at a
    uniformly random position. Replacement values are iid uniform on
    [c - sigma, c + sigma] clipped to [0, 1], where c is the series mean
    scaled by (1 + strength) and sigma its population std.
    """
    if strength <= 0:
        raise ValueError("invalid-strength: drift strength must be > 0")
    if not 0.0 < duration < 1.0:
        raise ValueError("invalid-duration: drift duration must lie in (0, 1)")
    values = series.values
    if np.isnan(values).any():
        raise ValueError("null-in-series: injection requires a dense series")
    n = values.size
    length = math.ceil(duration * n)
    if length >= n:
        raise ValueError(
            f"drift-exceeds-series: segment of {length} does not fit a series of {n}"
        )
    gen = np.random.default_rng(rng)
    start = int(gen.integers(0, n - length + 1))
    center = float(values.mean()) * (1.0 + strength)
    sigma = float(values.std())
    drifted = np.clip(
        gen.uniform(center - sigma, center + sigma, size=length), 0.0, 1.0
    )
    out = values.copy()
    mask = series.drift_mask.copy()
    out[start : start + length] = drifted
    mask[start : start + length] = 1
    return SiteSeries(series.site_id, out, mask)


def pad_sparsity(all_series: list[SiteSeries], rng=None) -> list[SiteSeries]:
    """Equalise series lengths by inserting nulls at random positions.

    Every series is stretched to the longest length; original values keep
    their relative order and the drift mask follows them (null slots are
    never drifted).
    """
    if not all_series:
        raise ValueError("no-agents: nothing to pad")
    gen = np.random.default_rng(rng)
    target = max(len(s) for s in all_series)
    out: list[SiteSeries] = []
    for series in all_series:
        n = len(series)
        if n == target:
            out.append(series)
            continue
        keep = np.sort(gen.choice(target, size=n, replace=False))
        values = np.full(target, np.nan)
        values[keep] = series.values
        mask = np.zeros(target, dtype=np.int8)
        mask[keep] = series.drift_mask
        out.append(SiteSeries(series.site_id, values, mask))
    return out


def interleave_sites(all_series: list[SiteSeries]) -> SiteSeries:
    """Round-robin merge by slot index, dropping null slots."""
    if not all_series:
        raise ValueError("no-agents: nothing to interleave")
    lengths = {len(s) for s in all_series}
    if len(lengths) != 1:
        raise ValueError("batch-misalignment: interleaving requires equal series lengths")
    values = np.stack([s.values for s in all_series], axis=1).ravel()
    masks = np.stack([s.drift_mask for s in all_series], axis=1).ravel()
    dense = ~np.isnan(values)
    return SiteSeries(CENTRALIZED_STREAM_ID, values[dense], masks[dense])


def window_truth_labels(values, drift_mask, window_size: int, rho: float = 0.5) -> list[int]:
    """Per-window ground truth: 1 when drifted values outnumber rho of valid ones."""
    if window_size < 2:
        raise ValueError(f"window-too-small: window_size={window_size}, need >= 2")
    values = np.asarray(values, dtype=np.float64)
    drift_mask = np.asarray(drift_mask)
    labels: list[int] = []
    for t in range(values.size // window_size):
        chunk = slice(t * window_size, (t + 1) * window_size)
        valid = ~np.isnan(values[chunk])
        n_valid = int(valid.sum())
        drifted = int(drift_mask[chunk][valid].sum())
        labels.append(1 if n_valid > 0 and drifted > rho * n_valid else 0)
    return labels


_SERIES_CACHE: dict[str, np.ndarray] = {}


def load_series_csv(path) -> np.ndarray:
    """Read an 'index,probability' CSV written by datagen (cached)."""
    resolved = str(Path(path).resolve())
    cached = _SERIES_CACHE.get(resolved)
    if cached is not None:
        return cached
    values: list[float] = []
    with open(resolved, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header[:2]] != ["index", "probability"]:
            raise ValueError(f"invalid-series-file: {path} must start with 'index,probability'")
        for row_number, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise ValueError(f"invalid-series-file: {path} row {row_number} is incomplete")
            try:
                value = float(row[1])
            except ValueError as exc:
                raise ValueError(
                    f"invalid-probability: {path} row {row_number}: {row[1]!r}"
                ) from exc
            if not 0.0 <= value <= 1.0 or math.isnan(value):
                raise ValueError(
                    f"invalid-probability: {path} row {row_number}: {value!r} outside [0, 1]"
                )
            values.append(value)
    if len(values) < 4:
        raise ValueError(f"invalid-series-file: {path} holds fewer than 4 observations")
    arr = np.asarray(values, dtype=np.float64)
    arr.setflags(write=False)
    _SERIES_CACHE[resolved] = arr
    return arr


def _site_data(
    config: SimConfig, cell: GridCell, replicate_index: int
) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    data_rng = _rng(config, cell, replicate_index, "data")
    refs: dict[str, np.ndarray] = {}
    tests: dict[str, np.ndarray] = {}
    for spec in config.sites:
        if spec.reference_csv is not None:
            refs[spec.site_id] = load_series_csv(spec.reference_csv)
            tests[spec.site_id] = load_series_csv(spec.test_csv)
        else:
            refs[spec.site_id] = data_rng.beta(spec.alpha, spec.beta, size=spec.reference_size)
            tests[spec.site_id] = data_rng.beta(spec.alpha, spec.beta, size=spec.test_size)
    return refs, tests


@dataclass
class AgentRunRecord:
    center: str
    scheme: str
    window_size: int
    min_valid: int
    verdicts: list[DriftVerdict]
    truth: list[int]
    detection: ConfusionCounts
    consumed_batch: int | None
    adaptive_trace: list[dict]
    hook_failures: list


@dataclass
class SchemeRunRecord:
    scheme: str
    agents: list[AgentRunRecord]
    severity_records: list[SeverityRecord]
    severity_outcomes: list[SeverityOutcome]
    severity_counts: ConfusionCounts | None


@dataclass
class ReplicateResult:
    cell: GridCell
    replicate_index: int
    schemes: dict[str, SchemeRunRecord]


def _run_scheme(
    config: SimConfig,
    cell: GridCell,
    replicate_index: int,
    scheme: SchemeKind,
    site_series: list[SiteSeries],
    refs: dict[str, np.ndarray],
    global_eval: np.ndarray,
) -> SchemeRunRecord:
    if scheme is SchemeKind.CENTRALIZED:
        streams = [interleave_sites(site_series)]
    else:
        streams = site_series

    hooks: list = [logging_hook]
    if config.webhook_url:
        hooks.append(webhook_hook(config.webhook_url))

    agent_records: list[AgentRunRecord] = []
    for stream in streams:
        window_size = max(2, math.ceil(cell.window_fraction * len(stream)))
        truth = window_truth_labels(
            stream.values, stream.drift_mask, window_size, config.batch_label_rho
        )
        spec = ReferenceSpec(
            kind=scheme,
            global_eval=global_eval,
            site_eval=refs[stream.site_id] if scheme is SchemeKind.SITE_REF else None,
            bins=config.bins,
            global_weight=config.global_weight,
            weight_decay=config.weight_decay,
            min_global_weight=config.min_global_weight,
            center_window=config.center_window,
            update_condition=config.adaptive_update_condition,
        )
        agent_config = AgentConfig(
            agent_id=AgentId(stream.site_id, config.model_id),
            scheme=spec,
            window_size=window_size,
            threshold=config.threshold,
            permutations=config.permutations,
            min_valid=max(2, int(window_size * config.min_valid_fraction)),
            resample=config.resample,
        )
        agent = DriftAgent(
            agent_config,
            rng=_rng(config, cell, replicate_index, "agent", scheme.value, stream.site_id),
            hooks=hooks,
        )
        for observation in stream.values:
            verdict = agent.ingest(observation)
            if verdict is not None:
                agent.act(verdict)
        detection = score_detection(agent.evaluated_verdicts, truth)
        agent_records.append(
            AgentRunRecord(
                center=stream.site_id,
                scheme=scheme.value,
                window_size=window_size,
                min_valid=agent.min_valid,
                verdicts=list(agent.verdicts),
                truth=truth,
                detection=detection,
                consumed_batch=agent.consumed_batch,
                adaptive_trace=list(agent.adaptive_trace),
                hook_failures=list(agent.hook_failures),
            )
        )

    if scheme is SchemeKind.CENTRALIZED:
        severity_records: list[SeverityRecord] = []
        severity_outcomes: list[SeverityOutcome] = []
        severity_counts = None
    else:
        n_batches = min(len(record.truth) for record in agent_records)
        flags: list[list[int]] = []
        truths: list[list[int]] = []
        for record in agent_records:
            agent_flags = [0] * n_batches
            for verdict in record.verdicts:
                if verdict.evaluated and verdict.drift and verdict.batch_index < n_batches:
                    agent_flags[verdict.batch_index] = 1
            flags.append(agent_flags)
            truths.append(list(record.truth[:n_batches]))
        severity_records, severity_outcomes, severity_counts = build_severity(
            flags, truths, config.severity_tp_rule
        )
    return SchemeRunRecord(
        scheme=scheme.value,
        agents=agent_records,
        severity_records=severity_records,
        severity_outcomes=severity_outcomes,
        severity_counts=severity_counts,
    )


def run_replicate(config: SimConfig, cell: GridCell, replicate_index: int) -> ReplicateResult:
    """Run the full pipeline once for one grid cell."""
    refs, tests = _site_data(config, cell, replicate_index)
    pipeline_rng = _rng(config, cell, replicate_index, "pipeline")
    series = [
        SiteSeries(spec.site_id, tests[spec.site_id], np.zeros(tests[spec.site_id].size, np.int8))
        for spec in config.sites
    ]
    series = [augment(s, config.augmentation, pipeline_rng) for s in series]
    if cell.drift_strength > 0:
        series = [
            inject_drift(s, cell.drift_strength, cell.drift_duration, pipeline_rng)
            for s in series
        ]
    series = pad_sparsity(series, pipeline_rng)
    global_eval = np.concatenate([refs[spec.site_id] for spec in config.sites])

    scheme_records = {
        scheme.value: _run_scheme(config, cell, replicate_index, scheme, series, refs, global_eval)
        for scheme in config.schemes
    }
    return ReplicateResult(cell=cell, replicate_index=replicate_index, schemes=scheme_records)


@dataclass
class SchemeSummary:
    detection: MetricsSummary | None
    severity: MetricsSummary | None

    def to_dict(self) -> dict:
        return {
            "detection": self.detection.to_dict() if self.detection else None,
            "severity": self.severity.to_dict() if self.severity else None,
        }


@dataclass
class CellResult:
    cell: GridCell
    schemes: dict[str, SchemeSummary]
    completed: int


@dataclass
class GridResult:
    config: SimConfig
    cells: list[CellResult]
    overall: dict[str, SchemeSummary]
    failures: list[dict]


def _summarise_pools(pools: dict[str, dict[str, list[MetricSet]]]) -> dict[str, SchemeSummary]:
    out: dict[str, SchemeSummary] = {}
    for scheme_name, pool in pools.items():
        detection = aggregate(pool["detection"]) if pool["detection"] else None
        severity = aggregate(pool["severity"]) if pool["severity"] else None
        out[scheme_name] = SchemeSummary(detection=detection, severity=severity)
    return out


def run_grid(
    config: SimConfig,
    threads: int = 1,
    replicate_sink: Callable[[ReplicateResult], None] | None = None,
) -> GridResult:
    """Run every (cell, replicate) combination and aggregate metrics.

    Replicates are pure functions of (config, cell, replicate index), so
    thread count only affects wall time, never results. Per-replicate
    failures are recorded and skipped, never fatal. The optional sink
    receives completed replicates in deterministic order.
    """
    if threads < 1:
        raise ValueError("invalid-threads: need at least 1")
    cells = enumerate_cells(config)
    failures: list[dict] = []
    cell_results: list[CellResult] = []
    overall_pools = {
        scheme.value: {"detection": [], "severity": []} for scheme in config.schemes
    }

    def one(cell: GridCell, replicate_index: int):
        try:
            return replicate_index, run_replicate(config, cell, replicate_index), None
        except Exception as exc:
            logger.warning(
                "replicate failed cell=%s replicate=%d: %r", cell_label(cell), replicate_index, exc
            )
            return replicate_index, None, f"{type(exc).__name__}: {exc}"

    for cell in cells:
        indices = range(config.replicates)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(lambda r: one(cell, r), indices))
        else:
            outcomes = [one(cell, r) for r in indices]
        outcomes.sort(key=lambda item: item[0])

        cell_pools = {
            scheme.value: {"detection": [], "severity": []} for scheme in config.schemes
        }
        completed = 0
        for replicate_index, result, error in outcomes:
            if error is not None:
                failures.append(
                    {"cell": cell_label(cell), "replicate": replicate_index, "error": error}
                )
                continue
            completed += 1
            if replicate_sink is not None:
                replicate_sink(result)
            for scheme in config.schemes:
                record = result.schemes[scheme.value]
                detection_pool = cell_pools[scheme.value]["detection"]
                for agent_record in record.agents:
                    detection_pool.append(
                        compute_metrics(agent_record.detection, config.empty_class_policy)
                    )
                if record.severity_counts is not None:
                    cell_pools[scheme.value]["severity"].append(
                        compute_metrics(record.severity_counts, config.empty_class_policy)
                    )
        for scheme_name, pool in cell_pools.items():
            overall_pools[scheme_name]["detection"].extend(pool["detection"])
            overall_pools[scheme_name]["severity"].extend(pool["severity"])
        cell_results.append(
            CellResult(cell=cell, schemes=_summarise_pools(cell_pools), completed=completed)
        )

    return GridResult(
        config=config,
        cells=cell_results,
        overall=_summarise_pools(overall_pools),
        failures=failures,
    )


def summary_dict(result: GridResult) -> dict:
    """JSON-ready summary; contains no timestamps so reruns are byte-stable."""
    cells = {}
    for cell_result in result.cells:
        cells[cell_label(cell_result.cell)] = {
            "drift_strength": cell_result.cell.drift_strength,
            "drift_duration": cell_result.cell.drift_duration,
            "window_fraction": cell_result.cell.window_fraction,
            "completed": cell_result.completed,
            "schemes": {
                name: summary.to_dict() for name, summary in cell_result.schemes.items()
            },
        }
    return {
        "schema": "driftnet-summary/1",
        "master_seed": result.config.master_seed,
        "replicates": result.config.replicates,
        "grid": {
            "drift_strength": list(result.config.drift_strength_grid),
            "drift_duration": list(result.config.drift_duration_grid),
            "window_fraction": list(result.config.window_fraction_grid),
        },
        "schemes": [s.value for s in result.config.schemes],
        "cells": cells,
        "overall": {name: summary.to_dict() for name, summary in result.overall.items()},
        "failures": result.failures,
    }
