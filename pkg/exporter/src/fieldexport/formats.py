"""Wire formats shared with the analysis engine.

Implemented against the published format contracts so this package stays
independent of the engine's code; the files are the interface.

FFB1 (field bundles), little-endian: magic "FFB1", u32 version=1, u32
label count, u32 filter count, u32 units per filter, u16 name length,
UTF-8 name, then per filter a label_count x label_count float32 block,
row-major with row = input label.

AFM1 (keep masks): magic "AFM1", u32 version=1, u32 filter count, u32
units per filter, u32 label count, then one 0/1 byte per (filter, unit,
label), filter-major; keep bits are identical across the units of one
filter.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BUNDLE_MAGIC = b"FFB1"
MASK_MAGIC = b"AFM1"
VERSION = 1

_BUNDLE_HEADER = struct.Struct("<4sIIIIH")
_MASK_HEADER = struct.Struct("<4sIIII")


@dataclass
class FieldBundle:
    layer_name: str
    label_count: int
    filter_count: int
    units_per_filter: int
    matrices: np.ndarray  # (filter_count, label_count, label_count) float32


@dataclass
class KeepMask:
    filter_count: int
    units_per_filter: int
    label_count: int
    keep: np.ndarray  # (filter_count, units_per_filter, label_count) bool

    def as_weight_mask(self) -> np.ndarray:
        """Keep bits in the head-weight layout (filters * units, labels)."""
        return self.keep.reshape(-1, self.label_count)


def write_bundle(bundle: FieldBundle, path) -> int:
    name = bundle.layer_name.encode("utf-8")
    header = _BUNDLE_HEADER.pack(
        BUNDLE_MAGIC,
        VERSION,
        bundle.label_count,
        bundle.filter_count,
        bundle.units_per_filter,
        len(name),
    )
    payload = np.ascontiguousarray(bundle.matrices, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(name)
        fh.write(payload)
    return len(header) + len(name) + len(payload)


def read_bundle(path) -> FieldBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, label_count, filter_count, units, name_len = _BUNDLE_HEADER.unpack(
        raw[: _BUNDLE_HEADER.size]
    )
    if magic != BUNDLE_MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a v{VERSION} field bundle")
    offset = _BUNDLE_HEADER.size
    name = raw[offset : offset + name_len].decode("utf-8")
    offset += name_len
    expected = filter_count * label_count * label_count * 4
    payload = raw[offset : offset + expected]
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated payload")
    matrices = (
        np.frombuffer(payload, dtype="<f4")
        .reshape(filter_count, label_count, label_count)
        .copy()
    )
    return FieldBundle(name, label_count, filter_count, units, matrices)


def read_mask(path) -> KeepMask:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, filter_count, units, label_count = _MASK_HEADER.unpack(
        raw[: _MASK_HEADER.size]
    )
    if magic != MASK_MAGIC or version != VERSION:
        raise ValueError(f"{path}: not a v{VERSION} keep mask")
    expected = filter_count * units * label_count
    payload = raw[_MASK_HEADER.size : _MASK_HEADER.size + expected]
    if len(payload) != expected:
        raise ValueError(f"{path}: truncated payload")
    flat = np.frombuffer(payload, dtype=np.uint8)
    if (flat > 1).any():
        raise ValueError(f"{path}: mask bytes must be 0 or 1")
    keep = flat.reshape(filter_count, units, label_count).astype(bool)
    return KeepMask(filter_count, units, label_count, keep)


def write_mask(mask: KeepMask, path) -> int:
    header = _MASK_HEADER.pack(
        MASK_MAGIC, VERSION, mask.filter_count, mask.units_per_filter, mask.label_count
    )
    payload = mask.keep.astype(np.uint8).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)
