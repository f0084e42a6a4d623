"""Drift monitoring agent: buffer windows, test, record, act.

One agent watches one output stream for one (center, model) pair. It
consumes observations one at a time, cuts them into fixed,
non-overlapping windows, tests each window against its scheme's
reference, and reacts to drift verdicts through registered hooks.
"""

from __future__ import annotations

import json
import logging
import math
import time
import urllib.request
from dataclasses import dataclass

import numpy as np

from .schemes import (
    AdaptiveReference,
    ReferenceSpec,
    SchemeKind,
    make_reference,
)
from .stats import Histogram, ks_vs_histogram, permutation_pvalue

__all__ = [
    "AgentConfig",
    "AgentId",
    "DriftAgent",
    "DriftVerdict",
    "logging_hook",
    "webhook_hook",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AgentId:
    center: str
    model: str

    def __str__(self) -> str:
        return f"{self.center}/{self.model}"


@dataclass
class AgentConfig:
    agent_id: AgentId
    scheme: ReferenceSpec
    window_size: int
    threshold: float = 0.05
    permutations: int = 1000
    min_valid: int | None = None
    regime: str = "batch"
    resample: str = "permutation"


@dataclass(frozen=True)
class DriftVerdict:
    """One completed window's outcome. Unevaluated windows carry no test."""

    agent_id: AgentId
    batch_index: int
    statistic: float | None
    p_value: float | None
    drift: bool
    n_valid: int
    evaluated: bool


def logging_hook(record: dict) -> None:
    logger.info(
        "drift detected agent=%s batch=%s p=%s",
        record.get("agent_id"),
        record.get("batch_index"),
        record.get("p_value"),
    )


def webhook_hook(url: str, timeout: float = 2.0):
    """Fire-and-forget JSON POST of drift records to an HTTP endpoint."""

    def hook(record: dict) -> None:
        payload = json.dumps(record).encode("utf-8")
        request = urllib.request.Request(
            url, data=payload, headers={"Content-Type": "application/json"}
        )
        urllib.request.urlopen(request, timeout=timeout).close()

    return hook


def _is_null(observation) -> bool:
    if observation is None:
        return True
    try:
        return math.isnan(float(observation))
    except (TypeError, ValueError):
        return False


class DriftAgent:
    """Windowed drift monitor for a single output stream.

    Lifecycle: construct with a validated config, feed observations
    through ingest() (a verdict appears when a window completes), then
    pass each verdict to act() to log it and fire drift hooks. For
    AdaptiveRef, act() also applies the controlled reference update, so
    the reference only ever changes after the verdict that sanctioned it.
    """

    def __init__(self, config: AgentConfig, rng=None, hooks=()) -> None:
        if config.regime != "batch":
            raise ValueError(f"unsupported-regime: {config.regime!r} (only 'batch' is implemented)")
        if config.window_size < 2:
            raise ValueError(f"window-too-small: window_size={config.window_size}, need >= 2")
        if not 0.0 < config.threshold < 1.0:
            raise ValueError(f"invalid-threshold: {config.threshold!r} outside (0, 1)")
        min_valid = config.min_valid
        if min_valid is None:
            min_valid = max(2, config.window_size // 2)
        if min_valid < 2:
            raise ValueError(f"invalid-min-valid: {min_valid}, need >= 2")
        self.config = config
        self.min_valid = int(min_valid)
        self.rng = np.random.default_rng(rng)
        self.hooks = list(hooks)
        self.batch_index = 0
        self.verdicts: list[DriftVerdict] = []
        self.hook_failures: list[tuple[int, str]] = []
        self.adaptive_trace: list[dict] = []
        self.consumed_batch: int | None = None
        self._buffer: list[float] = []
        self._pending: tuple[int, np.ndarray] | None = None
        # ProdRef waits for its first usable window; everything else gets
        # its reference up front.
        if config.scheme.kind is SchemeKind.PROD_REF:
            self.provider = None
        else:
            self.provider = make_reference(config.scheme)

    @property
    def evaluated_verdicts(self) -> list[DriftVerdict]:
        return [v for v in self.verdicts if v.evaluated]

    def ingest(self, observation) -> DriftVerdict | None:
        """Add one observation; return a verdict when a window completes.

        Nulls (None or NaN) occupy a window slot but are excluded from
        the tested sample. Returns None while the window is still filling
        and for the window a ProdRef agent consumes as its reference.
        """
        if _is_null(observation):
            self._buffer.append(math.nan)
        else:
            value = float(observation)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"invalid-probability: {observation!r} outside [0, 1]")
            self._buffer.append(value)
        if len(self._buffer) < self.config.window_size:
            return None
        window = np.asarray(self._buffer, dtype=np.float64)
        self._buffer = []
        index = self.batch_index
        self.batch_index += 1
        return self._evaluate_window(index, window)

    def _evaluate_window(self, index: int, window: np.ndarray) -> DriftVerdict | None:
        valid = window[~np.isnan(window)]
        if self.provider is None:
            # ProdRef seeding: the first window with enough signal becomes
            # the frozen reference and is never itself evaluated.
            if valid.size >= 2:
                self.provider = make_reference(self.config.scheme, first_prod_batch=valid)
                self.consumed_batch = index
                return None
            return self._unevaluated(index, valid.size)
        if valid.size < self.min_valid:
            return self._unevaluated(index, valid.size)
        reference = self.provider.reference
        if isinstance(reference, Histogram):
            result = ks_vs_histogram(valid, reference, self.config.permutations, self.rng)
        else:
            result = permutation_pvalue(
                valid,
                reference,
                self.config.permutations,
                self.rng,
                resample=self.config.resample,
            )
        self._pending = (index, valid)
        return DriftVerdict(
            agent_id=self.config.agent_id,
            batch_index=index,
            statistic=result.statistic,
            p_value=result.p_value,
            drift=result.p_value < self.config.threshold,
            n_valid=int(valid.size),
            evaluated=True,
        )

    def _unevaluated(self, index: int, n_valid: int) -> DriftVerdict:
        return DriftVerdict(
            agent_id=self.config.agent_id,
            batch_index=index,
            statistic=None,
            p_value=None,
            drift=False,
            n_valid=int(n_valid),
            evaluated=False,
        )

    def act(self, verdict: DriftVerdict) -> None:
        """Record a verdict, fire drift hooks, and run reference updates.

        Hook failures are recorded and logged, never raised: monitoring
        must outlive a broken sink.
        """
        if verdict.agent_id != self.config.agent_id:
            raise ValueError(
                f"foreign-verdict: {verdict.agent_id} does not belong to {self.config.agent_id}"
            )
        self.verdicts.append(verdict)
        if verdict.drift:
            record = {
                "agent_id": str(verdict.agent_id),
                "batch_index": verdict.batch_index,
                "p_value": verdict.p_value,
                "drift": True,
                "timestamp": time.time(),
            }
            for hook in self.hooks:
                try:
                    hook(record)
                except Exception as exc:
                    self.hook_failures.append((verdict.batch_index, repr(exc)))
                    logger.warning(
                        "action hook failed for agent=%s batch=%d: %r",
                        verdict.agent_id,
                        verdict.batch_index,
                        exc,
                    )
        if (
            isinstance(self.provider, AdaptiveReference)
            and verdict.evaluated
            and self._pending is not None
            and self._pending[0] == verdict.batch_index
        ):
            batch = self._pending[1]
            self._pending = None
            updated = self.provider.observe(batch, verdict, self.config.threshold)
            self.adaptive_trace.append(
                {
                    "batch_index": verdict.batch_index,
                    "p_value": verdict.p_value,
                    "drift": verdict.drift,
                    "updated": updated,
                    "global_weight": self.provider.state.global_weight,
                }
            )
