"""Closed-form signal/noise estimators and per-label decompositions.

A layer's filters collectively place each label inside some diagonal
clusters. The signal is the expected per-label count of those diagonal
appearances. Internal noise counts the other labels sharing a cluster with
a given label; external noise spreads the per-filter out-of-cluster count
uniformly over the off-diagonal cells. The external signal-to-noise ratio
grows as the per-filter noise falls, which is what improves with depth.

Estimators:

    signal         = cluster_size * clusters_per_filter * filter_count / label_count
    noise_internal = (cluster_size - 1) / (label_count - 1) * signal
    noise_external = noise_per_filter * filter_count / label_count**2
    snr_external   = cluster_size * clusters_per_filter * label_count / noise_per_filter

so snr_external always equals signal / noise_external algebraically.

Unbounded ratios (zero noise) are reported as None rather than a sentinel
number. Sub-threshold elements are excluded from field-mode sums; the
boolean and field modes share identical index sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np

from .clusters import FilterAnalysis, cluster_block_mask

BREAKDOWN_MODES = ("boolean", "field")

# diagnostic-only variant of field mode that keeps sub-threshold cells
FIELD_ALL_MODE = "field-all"

BREAKDOWN_CSV_HEADER = "label,signal,noise_I,noise_E"


@dataclass(frozen=True)
class SnrEstimate:
    """All four estimators for one layer, with the inputs echoed back.

    snr_internal / snr_external are None when the corresponding noise term
    is zero (unbounded ratio).
    """

    signal: float
    noise_internal: float
    noise_external: float
    snr_internal: float | None
    snr_external: float | None
    cluster_size: float
    clusters_per_filter: float
    filter_count: int
    label_count: int
    noise_per_filter: float


@dataclass(frozen=True)
class ErrorPoint:
    """Test error (1 - accuracy) measured at a given label count."""

    label_count: int
    error: float

    def __post_init__(self):
        if self.label_count < 1:
            raise ValueError(f"label count must be >= 1, got {self.label_count}")
        if not 0.0 <= self.error <= 1.0:
            raise ValueError(f"error must lie in [0, 1], got {self.error}")


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


@dataclass
class LabelBreakdown:
    """Per-label signal and noise sums over a layer's filters.

    Arrays have one entry per label. Boolean mode counts above-threshold
    cells; field mode sums the normalized field values over the same cells.
    """

    mode: str
    signal: np.ndarray
    noise_internal: np.ndarray
    noise_external: np.ndarray

    @property
    def mean_signal(self) -> float:
        return float(self.signal.mean())

    @property
    def mean_noise_internal(self) -> float:
        return float(self.noise_internal.mean())

    @property
    def mean_noise_external(self) -> float:
        return float(self.noise_external.mean())


def signal_estimate(
    cluster_size: float, clusters_per_filter: float, filter_count: int, label_count: int
) -> float:
    """Average appearance count of each label in the layer's clusters."""
    if label_count < 1:
        raise ValueError("label count must be >= 1")
    return cluster_size * clusters_per_filter * filter_count / label_count


def internal_noise_estimate(cluster_size: float, signal: float, label_count: int) -> float:
    """Average appearances of other labels inside the clusters of a label.

    Vanishes for singleton clusters; linear in the signal.
    """
    if label_count < 2:
        raise ValueError("label count must be >= 2 for internal noise")
    return (cluster_size - 1.0) / (label_count - 1.0) * signal


def external_noise_estimate(
    noise_per_filter: float, filter_count: int, label_count: int
) -> float:
    """Per-cell average of the out-of-cluster noise, assumed uniform."""
    if label_count < 1:
        raise ValueError("label count must be >= 1")
    return noise_per_filter * filter_count / label_count**2


def snr_external(
    cluster_size: float,
    clusters_per_filter: float,
    label_count: int,
    noise_per_filter: float,
) -> float:
    """Signal over external noise; algebraically their exact ratio."""
    if noise_per_filter <= 0:
        raise ValueError("per-filter noise must be positive; zero noise is unbounded")
    return cluster_size * clusters_per_filter * label_count / noise_per_filter


def estimate_snr(
    cluster_size: float,
    clusters_per_filter: float,
    filter_count: int,
    label_count: int,
    noise_per_filter: float,
) -> SnrEstimate:
    """Evaluate all four estimators; zero-noise ratios become None."""
    signal = signal_estimate(cluster_size, clusters_per_filter, filter_count, label_count)
    noise_i = internal_noise_estimate(cluster_size, signal, label_count)
    noise_e = external_noise_estimate(noise_per_filter, filter_count, label_count)
    return SnrEstimate(
        signal=signal,
        noise_internal=noise_i,
        noise_external=noise_e,
        snr_internal=signal / noise_i if noise_i > 0 else None,
        snr_external=signal / noise_e if noise_e > 0 else None,
        cluster_size=cluster_size,
        clusters_per_filter=clusters_per_filter,
        filter_count=filter_count,
        label_count=label_count,
        noise_per_filter=noise_per_filter,
    )


def per_label_breakdown(
    analyses: Sequence[FilterAnalysis], mode: str = "boolean"
) -> LabelBreakdown:
    """Sum signal, internal and external noise per label over all filters.

    Per label i: the signal accumulates diagonal cell (i, i); internal
    noise accumulates the off-diagonal cells of row i lying inside a
    cluster block; external noise accumulates the above-threshold cells of
    row i outside every block. Field mode uses the same cells but sums the
    normalized field values. The diagnostic "field-all" mode keeps the
    sub-threshold cells too (they are typically orders of magnitude
    smaller and often negative). Accumulation is float64.
    """
    if mode not in BREAKDOWN_MODES and mode != FIELD_ALL_MODE:
        raise ValueError(
            f"mode must be one of {BREAKDOWN_MODES + (FIELD_ALL_MODE,)}, got {mode!r}"
        )
    if not analyses:
        raise ValueError("need at least one filter analysis")
    side = analyses[0].clipped.shape[0]
    signal = np.zeros(side, dtype=np.float64)
    noise_i = np.zeros(side, dtype=np.float64)
    noise_e = np.zeros(side, dtype=np.float64)
    off_diagonal = ~np.eye(side, dtype=bool)
    for a in analyses:
        if a.clipped.shape[0] != side:
            raise ValueError(
                f"filter {a.filter_index} has side {a.clipped.shape[0]}, expected {side}"
            )
        if mode == "boolean":
            weights = a.clipped.astype(np.float64)
        elif mode == FIELD_ALL_MODE:
            weights = np.asarray(a.normalized, dtype=np.float64)
        else:
            weights = np.where(a.clipped, a.normalized, 0.0).astype(np.float64)
        blocks = cluster_block_mask(a)
        signal += np.diagonal(weights)
        noise_i += (weights * (blocks & off_diagonal)).sum(axis=1)
        noise_e += (weights * (~blocks & off_diagonal)).sum(axis=1)
    return LabelBreakdown(mode=mode, signal=signal, noise_internal=noise_i, noise_external=noise_e)


def write_breakdown_csv(breakdown: LabelBreakdown, sink: TextIO) -> None:
    """Emit the plot-ready per-label rows: label,signal,noise_I,noise_E."""
    sink.write(BREAKDOWN_CSV_HEADER + "\n")
    for label in range(breakdown.signal.shape[0]):
        sink.write(
            f"{label},{breakdown.signal[label]:.10g},"
            f"{breakdown.noise_internal[label]:.10g},"
            f"{breakdown.noise_external[label]:.10g}\n"
        )


def fit_error_vs_k(points: Sequence[ErrorPoint]) -> LinearFit:
    """Ordinary least squares of test error on label count.

    Invariant under permutation of the points; requires at least two
    distinct label counts.
    """
    if len({p.label_count for p in points}) < 2:
        raise ValueError("need at least two distinct label counts to fit a line")
    x = [float(p.label_count) for p in points]
    y = [p.error for p in points]
    # exact accumulation keeps the fit independent of the point order
    x_mean = math.fsum(x) / len(x)
    y_mean = math.fsum(y) / len(y)
    slope = math.fsum(
        (xi - x_mean) * (yi - y_mean) for xi, yi in zip(x, y)
    ) / math.fsum((xi - x_mean) ** 2 for xi in x)
    intercept = y_mean - slope * x_mean
    residual_sq = math.fsum((yi - (intercept + slope * xi)) ** 2 for xi, yi in zip(x, y))
    total = math.fsum((yi - y_mean) ** 2 for yi in y)
    if total == 0.0:
        r_squared = 1.0
    else:
        r_squared = min(1.0, max(0.0, 1.0 - residual_sq / total))
    return LinearFit(slope=slope, intercept=intercept, r_squared=r_squared)


def fit_block(fit: LinearFit) -> dict:
    """The small structured block the CLI prints for a fit."""
    return {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r_squared}


def snr_block(est: SnrEstimate) -> dict:
    """JSON-friendly view of an estimate; unbounded ratios become "unbounded"."""

    def ratio(value: float | None):
        if value is None or math.isinf(value):
            return "unbounded"
        return value

    return {
        "signal": est.signal,
        "noise_I": est.noise_internal,
        "noise_E": est.noise_external,
        "SNR_I": ratio(est.snr_internal),
        "SNR_E": ratio(est.snr_external),
    }
