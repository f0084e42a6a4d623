"""Statistical kernel for output drift monitoring.

Pure routines over 1-D samples of model output probabilities in [0, 1]:
the two-sample Kolmogorov-Smirnov statistic, resampling p-values for it,
fixed-range histograms, convex histogram blending, and sampling from a
histogram. Randomness enters only through an explicitly passed numpy
Generator (or seed), so every result is reproducible and all functions
are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Histogram",
    "KsResult",
    "blend",
    "build_histogram",
    "ks_statistic",
    "ks_vs_histogram",
    "permutation_pvalue",
    "sample_from_histogram",
]

# Cap on matrix cells materialised at once while building a null
# distribution; bounds peak memory regardless of the resample count.
_MAX_CHUNK_CELLS = 4_000_000


@dataclass(frozen=True)
class KsResult:
    """Outcome of one drift test: KS statistic and resampling p-value."""

    statistic: float
    p_value: float


@dataclass(frozen=True, eq=False)
class Histogram:
    """Probability mass over K uniform bins spanning [0, 1].

    The mass vector is normalised on construction unless it already sums
    to 1; that exception lets blending endpoints return their input mass
    bit-for-bit. A value of exactly 1.0 belongs to the last bin.
    """

    mass: np.ndarray

    def __post_init__(self) -> None:
        mass = np.array(self.mass, dtype=np.float64, copy=True).ravel()
        if mass.size < 2:
            raise ValueError("invalid-bin-count: a histogram needs at least 2 bins")
        if not np.isfinite(mass).all() or (mass < 0.0).any():
            raise ValueError("invalid-mass: bin mass must be finite and nonnegative")
        total = float(mass.sum())
        if total <= 0.0:
            raise ValueError("invalid-mass: total bin mass is zero")
        if abs(total - 1.0) > 1e-12:
            mass = mass / total
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @property
    def bin_count(self) -> int:
        return int(self.mass.size)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.bin_count + 1)

    @property
    def cdf(self) -> np.ndarray:
        """Cumulative mass at every bin edge, length K + 1, cdf[0] == 0."""
        out = np.zeros(self.bin_count + 1)
        np.cumsum(self.mass, out=out[1:])
        return out


def _as_sample(values, name: str = "sample") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"empty-sample: {name} has no observations")
    if not np.isfinite(arr).all():
        raise ValueError(f"invalid-probability: {name} contains non-finite values")
    if float(arr.min()) < 0.0 or float(arr.max()) > 1.0:
        raise ValueError(f"invalid-probability: {name} has values outside [0, 1]")
    return arr


def _ks_numerator(a_sorted: np.ndarray, b_sorted: np.ndarray) -> int:
    """Largest ECDF gap in exact integer units of 1 / (len(a) * len(b))."""
    pooled = np.concatenate([a_sorted, b_sorted])
    count_a = np.searchsorted(a_sorted, pooled, side="right")
    count_b = np.searchsorted(b_sorted, pooled, side="right")
    return int(np.abs(count_a * b_sorted.size - count_b * a_sorted.size).max())


def ks_statistic(a, b) -> float:
    """Two-sample KS statistic: the supremum distance between ECDFs.

    Both ECDFs are right-continuous, ties are shared between samples, and
    the supremum is attained at one of the pooled values, so the result is
    exact. Symmetric in its arguments; runs in O(n log n).
    """
    a = np.sort(_as_sample(a, "a"))
    b = np.sort(_as_sample(b, "b"))
    return _ks_numerator(a, b) / (a.size * b.size)


def _bootstrap_cumulative(gen: np.random.Generator, rows: int, n: int, size: int) -> np.ndarray:
    # Per-row occurrence counts over pooled sort positions, via one flat bincount.
    idx = gen.integers(0, n, size=(rows, size))
    offsets = (np.arange(rows, dtype=np.int64) * n)[:, None]
    counts = np.bincount((idx + offsets).ravel(), minlength=rows * n).reshape(rows, n)
    return counts.cumsum(axis=1)


def permutation_pvalue(a, b, permutations: int = 1000, rng=None, *, resample: str = "permutation") -> KsResult:
    """Two-sample KS test with a resampling null distribution.

    The pooled sample is re-split `permutations` times into the original
    sizes, without replacement by default (`resample="bootstrap"` draws
    with replacement instead). The p-value is the add-one fraction of null
    statistics at least as large as the observed one, so it always lies in
    (0, 1] and equals 1.0 when the samples are identical.

    The pooled array is sorted once; each re-split only permutes integer
    membership marks over the sorted positions, which keeps the whole null
    distribution exact and O(permutations * n) after the initial sort.
    """
    a = _as_sample(a, "a")
    b = _as_sample(b, "b")
    if a.size < 2 or b.size < 2:
        raise ValueError("insufficient-observations: both samples need >= 2 values")
    if permutations < 100:
        raise ValueError("insufficient-permutations: need at least 100 resamples")
    if resample not in ("permutation", "bootstrap"):
        raise ValueError(f"unknown-resample: {resample!r}")
    gen = np.random.default_rng(rng)

    n1, n2 = a.size, b.size
    n = n1 + n2
    pooled = np.sort(np.concatenate([a, b]))
    # Both ECDFs jump at tied values together, so the supremum over x is
    # attained at the last sort position of a tie group.
    ends = np.empty(n, dtype=bool)
    ends[:-1] = pooled[:-1] != pooled[1:]
    ends[-1] = True
    d_obs_num = _ks_numerator(np.sort(a), np.sort(b))
    positions = np.arange(1, n + 1, dtype=np.int64)

    exceed = 0
    remaining = int(permutations)
    chunk_rows = max(1, _MAX_CHUNK_CELLS // n)
    while remaining > 0:
        rows = min(chunk_rows, remaining)
        if resample == "permutation":
            # The positions of the n1 smallest iid uniforms form a uniform
            # random n1-subset of the pooled sort positions.
            u = gen.random((rows, n))
            take = np.argpartition(u, n1 - 1, axis=1)[:, :n1]
            marks = np.zeros((rows, n), dtype=np.int8)
            np.put_along_axis(marks, take, 1, axis=1)
            cum_a = np.cumsum(marks, axis=1, dtype=np.int64)
            nums = np.abs(cum_a * n - positions * n1)
        else:
            cum_a = _bootstrap_cumulative(gen, rows, n, n1)
            cum_b = _bootstrap_cumulative(gen, rows, n, n2)
            nums = np.abs(cum_a * n2 - cum_b * n1)
        d_perm = nums[:, ends].max(axis=1)
        exceed += int((d_perm >= d_obs_num).sum())
        remaining -= rows

    p_value = (1 + exceed) / (permutations + 1)
    return KsResult(statistic=d_obs_num / (n1 * n2), p_value=p_value)


def build_histogram(sample, bins: int = 100) -> Histogram:
    """Bin a sample into `bins` uniform bins over [0, 1] and normalise."""
    sample = _as_sample(sample)
    if bins < 2:
        raise ValueError("invalid-bin-count: a histogram needs at least 2 bins")
    counts, _ = np.histogram(sample, bins=bins, range=(0.0, 1.0))
    return Histogram(counts.astype(np.float64))


def blend(global_hist: Histogram, center_hist: Histogram, weight: float) -> Histogram:
    """Convex combination weight * global + (1 - weight) * center.

    Bin counts must match and the weight must lie in [0, 1]. At weight 0
    or 1 the returned mass equals the respective input exactly.
    """
    if not isinstance(global_hist, Histogram) or not isinstance(center_hist, Histogram):
        raise TypeError("blend expects Histogram operands")
    if global_hist.bin_count != center_hist.bin_count:
        raise ValueError(
            f"bin-mismatch: {global_hist.bin_count} vs {center_hist.bin_count} bins"
        )
    w = float(weight)
    if not 0.0 <= w <= 1.0 or not np.isfinite(w):
        raise ValueError(f"invalid-weight: blend weight {weight!r} outside [0, 1]")
    return Histogram(w * global_hist.mass + (1.0 - w) * center_hist.mass)


def ks_vs_histogram(batch, ref: Histogram, permutations: int = 1000, rng=None) -> KsResult:
    """KS test of a raw sample against a histogram reference.

    The statistic is the largest gap between the batch ECDF and the
    reference CDF over all bin edges. The null distribution comes from
    `permutations` synthetic batches of the same size drawn from the
    reference (bin by mass, uniform within the bin), scored the same way.
    """
    batch = _as_sample(batch, "batch")
    if batch.size < 2:
        raise ValueError("insufficient-observations: batch needs >= 2 values")
    if permutations < 1:
        raise ValueError("insufficient-permutations: need at least 1 resample")
    gen = np.random.default_rng(rng)

    n = batch.size
    ref_cdf = ref.cdf
    batch_cdf = np.searchsorted(np.sort(batch), ref.edges, side="right") / n
    d_obs = float(np.abs(batch_cdf - ref_cdf).max())

    mass = ref.mass / ref.mass.sum()
    exceed = 0
    remaining = int(permutations)
    chunk_rows = max(1, _MAX_CHUNK_CELLS // ref.bin_count)
    while remaining > 0:
        rows = min(chunk_rows, remaining)
        counts = gen.multinomial(n, mass, size=rows)
        # A within-bin draw never crosses an edge, so bin counts alone fix
        # the synthetic ECDF at every edge.
        synth_cdf = counts.cumsum(axis=1) / n
        d_null = np.abs(synth_cdf - ref_cdf[1:]).max(axis=1)
        exceed += int((d_null >= d_obs - 1e-12).sum())
        remaining -= rows
    return KsResult(statistic=d_obs, p_value=(1 + exceed) / (permutations + 1))


def sample_from_histogram(ref: Histogram, n: int, rng=None) -> np.ndarray:
    """Draw n values from a histogram: bin by mass, uniform within the bin."""
    if n < 1:
        raise ValueError("empty-sample: cannot draw fewer than 1 value")
    gen = np.random.default_rng(rng)
    cdf = np.cumsum(ref.mass / ref.mass.sum())
    bins = np.searchsorted(cdf, gen.random(n), side="right")
    bins = np.minimum(bins, ref.bin_count - 1)
    width = 1.0 / ref.bin_count
    return (bins + gen.random(n)) * width
