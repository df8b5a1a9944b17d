"""Per-filter field-matrix bundles and their on-disk formats.

A field matrix summarizes one convolutional filter's effect on the output
layer: entry (i, j) is the average output field on label unit j over inputs
of true label i. A bundle collects the matrices of every filter in a layer
together with the layer geometry (label count, filter count, units per
filter).

On-disk format FFB1 (all integers little-endian):

    bytes 0-3   ASCII magic "FFB1"
    u32         version (currently 1)
    u32         label count per matrix side (rows = input label)
    u32         filter count
    u32         output units per filter
    u16         byte length L of the layer name
    L bytes     UTF-8 layer name
    payload     filter-count blocks of side*side float32, row-major

Entries are stored as float32; downstream statistics accumulate in float64.
Bundles are treated as immutable after construction and are safe to share
across concurrent readers.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, TextIO

import numpy as np

MAGIC = b"FFB1"
VERSION = 1

_HEADER = struct.Struct("<4sIIIIH")
HEADER_BASE_SIZE = _HEADER.size  # 22 bytes before the layer name


class FormatError(ValueError):
    """A byte stream does not conform to the FFB1 format."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class NonFiniteError(FormatError):
    pass


class HeaderError(FormatError):
    """Header fields violate bundle invariants (e.g. zero filters)."""


class CsvError(ValueError):
    """A CSV triplet stream is malformed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


@dataclass
class FieldBundle:
    """All field matrices of one layer.

    matrices has shape (filter_count, label_count, label_count); row index
    is the input label, column index the output unit. Entries may be
    negative (pre-clipping fields are signed).
    """

    layer_name: str
    label_count: int
    filter_count: int
    units_per_filter: int
    matrices: np.ndarray

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=np.float32)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FieldBundle):
            return NotImplemented
        return (
            self.layer_name == other.layer_name
            and self.label_count == other.label_count
            and self.filter_count == other.filter_count
            and self.units_per_filter == other.units_per_filter
            and self.matrices.shape == other.matrices.shape
            and self.matrices.tobytes() == other.matrices.tobytes()
        )


@dataclass
class BundleValidationReport:
    """Outcome of :func:`validate`; ok iff issues is empty.

    Issues are (filter index, message) pairs; bundle-level problems use
    filter index -1.
    """

    ok: bool
    issues: list[tuple[int, str]] = field(default_factory=list)


def header_size(layer_name: str) -> int:
    """Exact byte length of the FFB1 header for a given layer name."""
    return HEADER_BASE_SIZE + len(layer_name.encode("utf-8"))


def validate(bundle: FieldBundle) -> BundleValidationReport:
    """Check every bundle invariant and list each violation.

    Never raises; a clean report guarantees the cluster engine accepts the
    bundle without error.
    """
    issues: list[tuple[int, str]] = []
    if bundle.label_count < 2:
        issues.append((-1, f"label count must be >= 2, got {bundle.label_count}"))
    if bundle.filter_count < 1:
        issues.append((-1, f"filter count must be >= 1, got {bundle.filter_count}"))
    if bundle.units_per_filter < 1:
        issues.append(
            (-1, f"units per filter must be >= 1, got {bundle.units_per_filter}")
        )
    m = bundle.matrices
    if m.ndim != 3:
        issues.append((-1, f"matrices must be a 3-d array, got ndim={m.ndim}"))
        return BundleValidationReport(ok=False, issues=issues)
    if m.shape[0] != bundle.filter_count:
        issues.append(
            (-1, f"expected {bundle.filter_count} matrices, found {m.shape[0]}")
        )
    if m.shape[1] != m.shape[2]:
        issues.append((-1, f"matrices are not square: shape {m.shape[1:]}"))
    elif bundle.label_count >= 2 and m.shape[1] != bundle.label_count:
        issues.append(
            (-1, f"matrix side {m.shape[1]} does not match label count "
                 f"{bundle.label_count}")
        )
    for idx in range(m.shape[0]):
        if not np.isfinite(m[idx]).all():
            issues.append((idx, "matrix contains non-finite entries"))
    return BundleValidationReport(ok=not issues, issues=issues)


def write_bundle(bundle: FieldBundle, sink: BinaryIO) -> int:
    """Serialize a bundle in FFB1 form; returns the byte count written.

    The caller is responsible for bundle validity (see :func:`validate`).
    Sink failures surface as OSError annotated with the write position.
    """
    name = bundle.layer_name.encode("utf-8")
    if len(name) > 0xFFFF:
        raise ValueError(f"layer name too long for format: {len(name)} bytes")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        bundle.label_count,
        bundle.filter_count,
        bundle.units_per_filter,
        len(name),
    )
    payload = np.ascontiguousarray(bundle.matrices, dtype="<f4").tobytes()
    written = 0
    for chunk in (header, name, payload):
        try:
            sink.write(chunk)
        except OSError as exc:
            raise OSError(f"write failed at byte {written}: {exc}") from exc
        written += len(chunk)
    return written


def read_bundle(source: BinaryIO) -> FieldBundle:
    """Parse an FFB1 stream back into a bundle.

    Raises BadMagicError, HeaderError, TruncatedError or NonFiniteError,
    each naming the offending byte offset; a successful parse satisfies all
    bundle invariants and reproduces the written payload bit for bit.
    """
    raw = _read_exact(source, HEADER_BASE_SIZE, 0, "header")
    magic, version, label_count, filter_count, units, name_len = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise HeaderError(f"unsupported version {version}", 4)
    if label_count < 2:
        raise HeaderError(f"label count must be >= 2, got {label_count}", 8)
    if filter_count < 1:
        raise HeaderError("filter count must be >= 1", 12)
    if units < 1:
        raise HeaderError("units per filter must be >= 1", 16)
    name_bytes = _read_exact(source, name_len, HEADER_BASE_SIZE, "layer name")
    payload_start = HEADER_BASE_SIZE + name_len
    payload_len = filter_count * label_count * label_count * 4
    payload = _read_exact(source, payload_len, payload_start, "matrix payload")
    flat = np.frombuffer(payload, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise NonFiniteError(
            "payload contains a non-finite value", payload_start + int(bad[0]) * 4
        )
    matrices = flat.reshape(filter_count, label_count, label_count).copy()
    return FieldBundle(
        layer_name=name_bytes.decode("utf-8"),
        label_count=label_count,
        filter_count=filter_count,
        units_per_filter=units,
        matrices=matrices,
    )


def save_bundle(bundle: FieldBundle, path) -> int:
    with open(path, "wb") as fh:
        return write_bundle(bundle, fh)


def load_bundle(path) -> FieldBundle:
    with open(path, "rb") as fh:
        return read_bundle(fh)


CSV_HEADER = ("filter", "row", "col", "value")


def read_csv_matrices(
    source: TextIO | Iterable[str],
    label_count: int,
    filter_count: int,
    units_per_filter: int,
    layer_name: str,
) -> FieldBundle:
    """Build a bundle from sparse CSV triplets "filter,row,col,value".

    Cells not mentioned default to zero; mentioning a cell twice is an
    error. An empty stream yields an all-zero bundle.
    """
    matrices = np.zeros((filter_count, label_count, label_count), dtype=np.float32)
    seen: set[tuple[int, int, int]] = set()
    reader = csv.reader(source)
    header_checked = False
    for line_no, row in enumerate(reader, start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if not header_checked:
            if tuple(cell.strip() for cell in row) != CSV_HEADER:
                raise CsvError(
                    f"expected header {','.join(CSV_HEADER)!r}, got {row!r}", line_no
                )
            header_checked = True
            continue
        if len(row) != 4:
            raise CsvError(f"expected 4 fields, got {len(row)}", line_no)
        try:
            f, r, c = (int(cell) for cell in row[:3])
        except ValueError as exc:
            raise CsvError(f"unparsable index: {exc}", line_no) from exc
        try:
            value = float(row[3])
        except ValueError as exc:
            raise CsvError(f"unparsable value {row[3]!r}", line_no) from exc
        if not 0 <= f < filter_count:
            raise CsvError(f"filter index {f} out of range [0, {filter_count})", line_no)
        if not 0 <= r < label_count or not 0 <= c < label_count:
            raise CsvError(
                f"cell ({r}, {c}) out of range [0, {label_count})^2", line_no
            )
        if (f, r, c) in seen:
            raise CsvError(f"duplicate cell ({f}, {r}, {c})", line_no)
        seen.add((f, r, c))
        matrices[f, r, c] = value
    return FieldBundle(
        layer_name=layer_name,
        label_count=label_count,
        filter_count=filter_count,
        units_per_filter=units_per_filter,
        matrices=matrices,
    )


def _read_exact(source: BinaryIO, count: int, offset: int, what: str) -> bytes:
    data = source.read(count)
    if data is None:
        data = b""
    if len(data) < count:
        raise TruncatedError(
            f"truncated {what}: wanted {count} bytes, got {len(data)}",
            offset + len(data),
        )
    return data
