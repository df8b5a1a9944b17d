"""Diagonal cluster detection and per-layer statistics for field matrices.

The analysis chain per filter: divide the matrix by its maximal element,
clip strictly above a threshold into a Boolean matrix, group diagonal 1s
into clusters by a greedy scan, and count the leftover above-threshold
elements as that filter's noise. A cluster is a set of labels whose full
pairwise block in the Boolean matrix is 1; off-diagonal 1s never form
clusters on their own.

The greedy scan walks the diagonal in a fixed direction. Each diagonal 1
joins the earliest-created cluster it completes (the candidate must be 1
against every current member in both orientations) or starts a new
singleton. The outcome can depend on the scan direction in rare tie cases,
so a reverse order is provided for sensitivity runs.

All analysis functions are pure; filters of a layer may be analyzed
concurrently and collected in filter-index order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bundle import FieldBundle

DEFAULT_THRESHOLD = 0.3

SCAN_ORDERS = ("forward", "reverse")


class ClusterIntegrityError(ValueError):
    """Clusters are inconsistent with the Boolean matrix they claim to cover."""


@dataclass(frozen=True)
class Cluster:
    """Labels whose full pairwise block is above threshold.

    labels keeps the order in which the scan added them. size counts labels
    (the linear cluster size used in layer statistics); element_count is
    the block area size**2.
    """

    labels: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def element_count(self) -> int:
        return len(self.labels) ** 2

    @property
    def label_set(self) -> frozenset[int]:
        return frozenset(self.labels)


@dataclass
class FilterAnalysis:
    """One filter's normalized matrix, clipped matrix, clusters and noise.

    noise counts above-threshold elements outside every cluster block;
    ones_total counts all above-threshold elements, so
    noise == ones_total - sum of cluster element counts always holds.
    Degenerate filters (maximal raw entry <= 0) carry no clusters and zero
    noise.
    """

    filter_index: int
    normalized: np.ndarray
    clipped: np.ndarray
    clusters: list[Cluster]
    noise: int
    ones_total: int
    degenerate: bool
    threshold: float
    order: str

    @property
    def cluster_label_union(self) -> frozenset[int]:
        out: frozenset[int] = frozenset()
        for c in self.clusters:
            out |= c.label_set
        return out


@dataclass
class LayerStats:
    """Per-layer filter statistics: average noise, cluster count and size.

    mean_cluster_size pools every cluster of every filter; it is None when
    the layer has no clusters at all (filters without clusters contribute
    to mean_clusters_per_filter as zero but add nothing to the pool).
    """

    filter_count: int
    label_count: int
    mean_noise: float
    mean_clusters_per_filter: float
    mean_cluster_size: float | None
    threshold: float


def normalize(matrix: np.ndarray) -> tuple[np.ndarray, bool]:
    """Divide a field matrix by its maximal element.

    Returns (normalized, degenerate). For a positive maximum the result has
    maximal entry exactly 1 and is invariant under positive scaling of the
    input. A non-positive maximum cannot anchor the threshold, so the
    matrix is flagged degenerate and replaced by zeros.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    peak = float(matrix.max())
    if peak <= 0.0:
        return np.zeros_like(matrix), True
    return matrix / peak, False


def clip(matrix: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Boolean matrix of entries strictly above the threshold.

    The comparison is strict: an entry equal to the threshold maps to 0.
    """
    return np.asarray(matrix) > threshold


def find_clusters(bits: np.ndarray, order: str = "forward") -> list[Cluster]:
    """Group diagonal 1s of a Boolean matrix into full-block clusters.

    Scans diagonal indices in the given direction ("forward" or "reverse").
    Every diagonal 1 ends up in exactly one cluster; every returned block
    is fully 1; clusters are pairwise disjoint. When several existing
    clusters could absorb an element, the earliest-created one wins.
    """
    bits = np.asarray(bits, dtype=bool)
    side = bits.shape[0]
    if bits.ndim != 2 or bits.shape[1] != side:
        raise ValueError(f"expected a square Boolean matrix, got shape {bits.shape}")
    if order not in SCAN_ORDERS:
        raise ValueError(f"order must be one of {SCAN_ORDERS}, got {order!r}")
    indices = range(side) if order == "forward" else range(side - 1, -1, -1)
    members: list[list[int]] = []
    for j in indices:
        if not bits[j, j]:
            continue
        for current in members:
            if bits[current, j].all() and bits[j, current].all():
                current.append(j)
                break
        else:
            members.append([j])
    return [Cluster(labels=tuple(c)) for c in members]


def external_noise(bits: np.ndarray, clusters: Sequence[Cluster]) -> int:
    """Above-threshold elements outside every cluster block.

    Validates the clusters against the matrix first: each block must be
    fully 1 and blocks must not share labels.
    """
    bits = np.asarray(bits, dtype=bool)
    seen: set[int] = set()
    block_elements = 0
    for cluster in clusters:
        labels = list(cluster.labels)
        if not labels:
            raise ClusterIntegrityError("empty cluster")
        if seen.intersection(labels):
            raise ClusterIntegrityError(f"clusters overlap on labels {sorted(seen.intersection(labels))}")
        seen.update(labels)
        if not bits[np.ix_(labels, labels)].all():
            raise ClusterIntegrityError(f"cluster block {sorted(labels)} is not fully above threshold")
        block_elements += cluster.element_count
    return int(bits.sum()) - block_elements


def analyze_filter(
    matrix: np.ndarray,
    threshold: float = DEFAULT_THRESHOLD,
    order: str = "forward",
    filter_index: int = 0,
) -> FilterAnalysis:
    """Run the full per-filter chain: normalize, clip, cluster, count noise.

    The result is invariant under positive scaling of the input matrix.
    """
    normalized, degenerate = normalize(matrix)
    clipped = clip(normalized, threshold)
    clusters = find_clusters(clipped, order)
    noise = external_noise(clipped, clusters)
    return FilterAnalysis(
        filter_index=filter_index,
        normalized=normalized,
        clipped=clipped,
        clusters=clusters,
        noise=noise,
        ones_total=int(clipped.sum()),
        degenerate=degenerate,
        threshold=threshold,
        order=order,
    )


def analyze_bundle(
    bundle: FieldBundle,
    threshold: float = DEFAULT_THRESHOLD,
    order: str = "forward",
) -> list[FilterAnalysis]:
    """Analyze every filter of a bundle, in filter-index order."""
    return [
        analyze_filter(bundle.matrices[i], threshold, order, filter_index=i)
        for i in range(bundle.matrices.shape[0])
    ]


def aggregate_layer(analyses: Sequence[FilterAnalysis], label_count: int) -> LayerStats:
    """Average per-filter noise, cluster counts and pooled cluster sizes.

    Duplicating every filter leaves the result unchanged. Raises on an
    empty list or when analyses disagree on matrix side or threshold.
    """
    if not analyses:
        raise ValueError("cannot aggregate an empty list of analyses")
    thresholds = {a.threshold for a in analyses}
    if len(thresholds) != 1:
        raise ValueError(f"analyses mix thresholds {sorted(thresholds)}")
    for a in analyses:
        if a.clipped.shape[0] != label_count:
            raise ValueError(
                f"filter {a.filter_index} has side {a.clipped.shape[0]}, "
                f"expected {label_count}"
            )
    sizes = [c.size for a in analyses for c in a.clusters]
    return LayerStats(
        filter_count=len(analyses),
        label_count=label_count,
        mean_noise=float(np.mean([a.noise for a in analyses])),
        mean_clusters_per_filter=float(np.mean([len(a.clusters) for a in analyses])),
        mean_cluster_size=float(np.mean(sizes)) if sizes else None,
        threshold=thresholds.pop(),
    )


REPORT_FORMAT = "filterscope-analysis"
REPORT_VERSION = 1


def analysis_report(
    analyses: Sequence[FilterAnalysis],
    stats: LayerStats,
    layer_name: str = "",
) -> dict:
    """Assemble the JSON-serializable analysis report for a layer.

    Stable key names; the filters array is ordered by filter index.
    """
    order = analyses[0].order if analyses else "forward"
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "layer_name": layer_name,
        "threshold": stats.threshold,
        "order": order,
        "filters": [
            {
                "index": a.filter_index,
                "clusters": [list(c.labels) for c in a.clusters],
                "noise": a.noise,
                "ones_total": a.ones_total,
                "degenerate": a.degenerate,
            }
            for a in analyses
        ],
        "layer_stats": {
            "filter_count": stats.filter_count,
            "label_count": stats.label_count,
            "mean_noise": stats.mean_noise,
            "mean_clusters_per_filter": stats.mean_clusters_per_filter,
            "mean_cluster_size": stats.mean_cluster_size,
        },
    }


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def read_report(path) -> dict:
    """Load an analysis report and check its identifying keys."""
    with open(path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    if not isinstance(report, dict) or report.get("format") != REPORT_FORMAT:
        raise ValueError(f"{path}: not a {REPORT_FORMAT} report")
    if report.get("version") != REPORT_VERSION:
        raise ValueError(f"{path}: unsupported report version {report.get('version')}")
    for key in ("filters", "layer_stats", "threshold", "order"):
        if key not in report:
            raise ValueError(f"{path}: report missing key {key!r}")
    return report


def report_label_sets(report: dict) -> list[frozenset[int]]:
    """Per-filter unions of cluster labels, in filter-index order."""
    out: list[frozenset[int]] = []
    for entry in report["filters"]:
        labels: set[int] = set()
        for cluster in entry["clusters"]:
            labels.update(int(x) for x in cluster)
        out.append(frozenset(labels))
    return out


def stats_from_report(report: dict) -> LayerStats:
    block = report["layer_stats"]
    size = block["mean_cluster_size"]
    return LayerStats(
        filter_count=int(block["filter_count"]),
        label_count=int(block["label_count"]),
        mean_noise=float(block["mean_noise"]),
        mean_clusters_per_filter=float(block["mean_clusters_per_filter"]),
        mean_cluster_size=None if size is None else float(size),
        threshold=float(report["threshold"]),
    )


def layer_summary_line(stats: LayerStats) -> str:
    """One-line human-readable layer statistics row."""
    size = "undefined" if stats.mean_cluster_size is None else f"{stats.mean_cluster_size:.4g}"
    return (
        f"filters={stats.filter_count} labels={stats.label_count} "
        f"noise={stats.mean_noise:.4g} clusters_per_filter="
        f"{stats.mean_clusters_per_filter:.4g} cluster_size={size} "
        f"threshold={stats.threshold:g}"
    )


def cluster_block_mask(analysis: FilterAnalysis) -> np.ndarray:
    """Boolean mask of cells covered by the filter's cluster blocks."""
    side = analysis.clipped.shape[0]
    mask = np.zeros((side, side), dtype=bool)
    for cluster in analysis.clusters:
        idx = list(cluster.labels)
        mask[np.ix_(idx, idx)] = True
    return mask
