"""Reference providers for the five monitoring schemes.

A provider owns the comparison target an agent tests its production
windows against: a raw evaluation sample (Centralized, GlobalRef,
SiteRef), a frozen first production window (ProdRef), or a histogram
blended between the global reference and accumulated clean production
batches (AdaptiveRef).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .stats import Histogram, blend, build_histogram, _as_sample

__all__ = [
    "AdaptiveReference",
    "AdaptiveState",
    "MULTI_CENTER_SCHEMES",
    "ReferenceSpec",
    "SampleReference",
    "SchemeKind",
    "adaptive_observe",
    "initial_adaptive_state",
    "make_reference",
]


class SchemeKind(str, enum.Enum):
    CENTRALIZED = "Centralized"
    GLOBAL_REF = "GlobalRef"
    SITE_REF = "SiteRef"
    PROD_REF = "ProdRef"
    ADAPTIVE_REF = "AdaptiveRef"


MULTI_CENTER_SCHEMES = (
    SchemeKind.GLOBAL_REF,
    SchemeKind.SITE_REF,
    SchemeKind.PROD_REF,
    SchemeKind.ADAPTIVE_REF,
)

_UPDATE_CONDITIONS = ("lower", "always-when-clean")


@dataclass
class ReferenceSpec:
    """Everything needed to construct a reference provider for one agent."""

    kind: SchemeKind
    global_eval: np.ndarray | None = None
    site_eval: np.ndarray | None = None
    bins: int = 100
    global_weight: float = 1.0
    weight_decay: float = 0.1
    min_global_weight: float = 0.1
    center_window: int | None = None
    update_condition: str = "lower"

    def __post_init__(self) -> None:
        self.kind = SchemeKind(self.kind)
        if self.bins < 2:
            raise ValueError("invalid-bin-count: a histogram reference needs >= 2 bins")
        for name in ("global_weight", "weight_decay", "min_global_weight"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"invalid-weight: {name} must lie in [0, 1]")
        if self.min_global_weight > self.global_weight:
            raise ValueError("invalid-weight: min_global_weight exceeds global_weight")
        if self.center_window is not None and self.center_window < 1:
            raise ValueError("invalid-center-window: must be a positive batch count")
        if self.update_condition not in _UPDATE_CONDITIONS:
            raise ValueError(
                f"invalid-update-condition: {self.update_condition!r}, "
                f"expected one of {_UPDATE_CONDITIONS}"
            )


@dataclass(frozen=True, eq=False)
class AdaptiveState:
    """State machine for the adaptive blended reference.

    `reference` is always the blend of `base` with the normalised
    accumulated center counts at the current `global_weight`, except
    before the first accepted batch, when it is `base` itself.
    """

    base: Histogram
    center_counts: np.ndarray
    global_weight: float
    reference: Histogram
    last_p_value: float
    weight_decay: float
    min_global_weight: float
    center_window: int | None = None
    update_condition: str = "lower"
    recent_counts: tuple = ()


def initial_adaptive_state(global_eval, spec: ReferenceSpec) -> AdaptiveState:
    base = build_histogram(global_eval, spec.bins)
    return AdaptiveState(
        base=base,
        center_counts=np.zeros(spec.bins, dtype=np.int64),
        global_weight=float(spec.global_weight),
        reference=base,
        last_p_value=1.0,
        weight_decay=float(spec.weight_decay),
        min_global_weight=float(spec.min_global_weight),
        center_window=spec.center_window,
        update_condition=spec.update_condition,
    )


def adaptive_observe(state: AdaptiveState, batch, verdict, threshold: float) -> AdaptiveState:
    """Controlled reference update after a verdict has been acted on.

    The reference absorbs a batch only when the batch looked clean
    (p >= threshold) and, under the default "lower" condition, the
    p-value also dropped below the last accepted one. Drift-positive
    batches never update the reference, and the global weight never
    increases. Returns the input state unchanged when no update applies.
    """
    p_value = getattr(verdict, "p_value", verdict)
    if p_value is None:
        return state
    p_value = float(p_value)
    if p_value < threshold:
        return state
    if state.update_condition == "lower" and not p_value < state.last_p_value:
        return state

    batch = _as_sample(batch, "batch")
    counts, _ = np.histogram(batch, bins=state.base.bin_count, range=(0.0, 1.0))
    if state.center_window is not None:
        recent = (state.recent_counts + (counts,))[-state.center_window:]
        center = np.sum(recent, axis=0, dtype=np.int64)
    else:
        recent = ()
        center = state.center_counts + counts
    weight = max(state.min_global_weight, state.global_weight - state.weight_decay)
    reference = blend(state.base, Histogram(center.astype(np.float64)), weight)
    return replace(
        state,
        center_counts=center,
        global_weight=weight,
        reference=reference,
        last_p_value=p_value,
        recent_counts=recent,
    )


class SampleReference:
    """Fixed raw-sample reference; also the frozen ProdRef window."""

    def __init__(self, kind: SchemeKind, sample) -> None:
        self.kind = kind
        sample = _as_sample(sample, "reference")
        sample = np.array(sample, copy=True)
        sample.setflags(write=False)
        self.sample = sample

    @property
    def reference(self) -> np.ndarray:
        return self.sample


class AdaptiveReference:
    """Mutable holder for the adaptive blended histogram reference."""

    def __init__(self, state: AdaptiveState) -> None:
        self.kind = SchemeKind.ADAPTIVE_REF
        self.state = state

    @property
    def reference(self) -> Histogram:
        return self.state.reference

    def observe(self, batch, verdict, threshold: float) -> bool:
        """Apply the controlled update; True when the reference changed."""
        new_state = adaptive_observe(self.state, batch, verdict, threshold)
        updated = new_state is not self.state
        self.state = new_state
        return updated


def make_reference(spec: ReferenceSpec, first_prod_batch=None):
    """Construct the provider for a scheme, validating its inputs."""
    kind = spec.kind
    if kind in (SchemeKind.CENTRALIZED, SchemeKind.GLOBAL_REF):
        if spec.global_eval is None or np.size(spec.global_eval) < 2:
            raise ValueError(
                "scheme-inputs-missing: a global evaluation sample with >= 2 "
                f"observations is required for {kind.value}"
            )
        return SampleReference(kind, spec.global_eval)
    if kind is SchemeKind.SITE_REF:
        if spec.site_eval is None or np.size(spec.site_eval) == 0:
            raise ValueError("scheme-inputs-missing: SiteRef needs a site evaluation sample")
        if np.size(spec.site_eval) < 2:
            raise ValueError("scheme-inputs-missing: SiteRef sample needs >= 2 observations")
        return SampleReference(kind, spec.site_eval)
    if kind is SchemeKind.PROD_REF:
        if first_prod_batch is None or np.size(first_prod_batch) < 2:
            raise ValueError(
                "scheme-inputs-missing: ProdRef needs the first production "
                "window with >= 2 observations"
            )
        return SampleReference(kind, first_prod_batch)
    if kind is SchemeKind.ADAPTIVE_REF:
        if spec.global_eval is None or np.size(spec.global_eval) == 0:
            raise ValueError("scheme-inputs-missing: AdaptiveRef needs a global evaluation sample")
        return AdaptiveReference(initial_adaptive_state(spec.global_eval, spec))
    raise ValueError(f"unknown-scheme: {kind!r}")
