"""Cluster-connection pruning masks for the fully connected probe head.

Each filter feeds the head through its output units; each output unit of
the head corresponds to a label. Keeping only the weights that connect a
filter to the labels of its own clusters dilutes the head heavily while
preserving the signal paths, after which a short retraining restores
accuracy. The keep decision depends only on (filter, label), so it is
identical across the units of one filter.

On-disk format AFM1 (integers little-endian):

    bytes 0-3   ASCII magic "AFM1"
    u32         version (currently 1)
    u32         filter count
    u32         units per filter
    u32         label count
    payload     filter_count * units * label_count bytes of 0/1,
                ordered filter-major, then unit, then label
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .bundle import BadMagicError, FormatError, HeaderError, _read_exact
from .clusters import FilterAnalysis, LayerStats

MASK_MAGIC = b"AFM1"
MASK_VERSION = 1

_MASK_HEADER = struct.Struct("<4sIIII")
MASK_HEADER_SIZE = _MASK_HEADER.size  # 20 bytes


class MaskIntegrityError(FormatError):
    """Mask payload breaks the format contract (bad byte or non-uniform units)."""


@dataclass(frozen=True)
class FcTopology:
    """Shape of the probe head: filters x units-per-filter inputs, label outputs."""

    filter_count: int
    units_per_filter: int
    label_count: int

    def __post_init__(self):
        for name in ("filter_count", "units_per_filter", "label_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def total_weights(self) -> int:
        return self.filter_count * self.units_per_filter * self.label_count


@dataclass
class AfccMask:
    """Boolean keep decision per (filter, unit, label) head weight.

    keep has shape (filter_count, units_per_filter, label_count) and is
    identical across the unit axis for any fixed filter.
    """

    topology: FcTopology
    keep: np.ndarray

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        expected = (
            self.topology.filter_count,
            self.topology.units_per_filter,
            self.topology.label_count,
        )
        if self.keep.shape != expected:
            raise ValueError(f"keep shape {self.keep.shape} does not match topology {expected}")

    def as_weight_mask(self) -> np.ndarray:
        """keep reshaped to the head-weight layout (filters*units, labels)."""
        return self.keep.reshape(-1, self.topology.label_count)


@dataclass(frozen=True)
class MaskStats:
    """Exact kept/zeroed counts plus the closed-form size estimator.

    The estimator filter_count * units * mean_cluster_size *
    mean_clusters_per_filter approximates the kept count; it can differ
    from the exact value because a filter's distinct-label union is not
    exactly size times count.
    """

    kept: int
    zeroed: int
    reduction_fraction: float
    estimator: float


def mask_from_label_sets(label_sets: Sequence[Iterable[int]], topology: FcTopology) -> AfccMask:
    """Build a mask keeping, per filter, only the labels in its set."""
    if len(label_sets) != topology.filter_count:
        raise ValueError(
            f"expected {topology.filter_count} label sets, got {len(label_sets)}"
        )
    keep = np.zeros(
        (topology.filter_count, topology.units_per_filter, topology.label_count),
        dtype=bool,
    )
    for f, labels in enumerate(label_sets):
        for label in labels:
            if not 0 <= label < topology.label_count:
                raise ValueError(
                    f"filter {f}: label {label} out of range [0, {topology.label_count})"
                )
            keep[f, :, label] = True
    return AfccMask(topology=topology, keep=keep)


def build_mask(analyses: Sequence[FilterAnalysis], topology: FcTopology) -> AfccMask:
    """Keep the weights whose label belongs to the filter's cluster union."""
    return mask_from_label_sets([a.cluster_label_union for a in analyses], topology)


def mask_stats(mask: AfccMask, layer_stats: LayerStats | None = None) -> MaskStats:
    """Exact reduction counts plus the cluster-statistics estimator.

    Without layer statistics (or when the layer has no clusters) the
    estimator is 0.
    """
    total = mask.topology.total_weights
    kept = int(mask.keep.sum())
    estimator = 0.0
    if layer_stats is not None and layer_stats.mean_cluster_size is not None:
        estimator = (
            mask.topology.filter_count
            * mask.topology.units_per_filter
            * layer_stats.mean_cluster_size
            * layer_stats.mean_clusters_per_filter
        )
    return MaskStats(
        kept=kept,
        zeroed=total - kept,
        reduction_fraction=(total - kept) / total,
        estimator=estimator,
    )


def apply_mask(weights: np.ndarray, mask: AfccMask) -> np.ndarray:
    """Zero the dropped weights; keep the rest bit-identical. Idempotent.

    weights must have the head layout (filter_count * units, label_count).
    """
    weights = np.asarray(weights)
    flat_keep = mask.as_weight_mask()
    if weights.shape != flat_keep.shape:
        raise ValueError(
            f"weights shape {weights.shape} does not match mask shape {flat_keep.shape}"
        )
    return np.where(flat_keep, weights, np.zeros((), dtype=weights.dtype))


def write_mask(mask: AfccMask, sink: BinaryIO) -> int:
    """Serialize in AFM1 form; returns the byte count written."""
    header = _MASK_HEADER.pack(
        MASK_MAGIC,
        MASK_VERSION,
        mask.topology.filter_count,
        mask.topology.units_per_filter,
        mask.topology.label_count,
    )
    payload = mask.keep.astype(np.uint8).tobytes()
    written = 0
    for chunk in (header, payload):
        try:
            sink.write(chunk)
        except OSError as exc:
            raise OSError(f"write failed at byte {written}: {exc}") from exc
        written += len(chunk)
    return written


def read_mask(source: BinaryIO) -> AfccMask:
    """Parse an AFM1 stream; enforces 0/1 bytes and unit-uniform filters."""
    raw = _read_exact(source, MASK_HEADER_SIZE, 0, "mask header")
    magic, version, filter_count, units, label_count = _MASK_HEADER.unpack(raw)
    if magic != MASK_MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MASK_MAGIC!r}", 0)
    if version != MASK_VERSION:
        raise HeaderError(f"unsupported mask version {version}", 4)
    if filter_count < 1 or units < 1 or label_count < 1:
        raise HeaderError("mask dimensions must be positive", 8)
    payload_len = filter_count * units * label_count
    payload = _read_exact(source, payload_len, MASK_HEADER_SIZE, "mask payload")
    flat = np.frombuffer(payload, dtype=np.uint8)
    bad = np.flatnonzero(flat > 1)
    if bad.size:
        raise MaskIntegrityError(
            f"mask byte must be 0 or 1, got {int(flat[bad[0]])}",
            MASK_HEADER_SIZE + int(bad[0]),
        )
    keep = flat.reshape(filter_count, units, label_count).astype(bool)
    if not (keep == keep[:, :1, :]).all():
        raise MaskIntegrityError(
            "mask is not unit-uniform: keep bits differ across units of one filter",
            MASK_HEADER_SIZE,
        )
    topology = FcTopology(
        filter_count=filter_count, units_per_filter=units, label_count=label_count
    )
    return AfccMask(topology=topology, keep=keep)


def save_mask(mask: AfccMask, path) -> int:
    with open(path, "wb") as fh:
        return write_mask(mask, fh)


def load_mask(path) -> AfccMask:
    with open(path, "rb") as fh:
        return read_mask(fh)


def mask_summary(stats: MaskStats) -> dict:
    """The structured mask summary printed alongside a written mask."""
    return {
        "kept": stats.kept,
        "zeroed": stats.zeroed,
        "reduction_fraction": stats.reduction_fraction,
        "estimator": stats.estimator,
    }
