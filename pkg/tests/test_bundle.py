import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from filterscope.bundle import (
    BadMagicError,
    CsvError,
    FieldBundle,
    HeaderError,
    NonFiniteError,
    TruncatedError,
    header_size,
    read_bundle,
    read_csv_matrices,
    validate,
    write_bundle,
)


def small_bundle(name="layer", label_count=2, filter_count=1, units=1, fill=None):
    matrices = np.zeros((filter_count, label_count, label_count), dtype=np.float32)
    if fill is not None:
        matrices[:] = fill
    return FieldBundle(name, label_count, filter_count, units, matrices)


finite_f32 = st.floats(
    allow_nan=False, allow_infinity=False, width=32, min_value=-1e6, max_value=1e6
)


@st.composite
def bundles(draw):
    label_count = draw(st.integers(2, 6))
    filter_count = draw(st.integers(1, 4))
    units = draw(st.integers(1, 4))
    name = draw(st.text(max_size=10))
    matrices = draw(
        arrays(np.float32, (filter_count, label_count, label_count), elements=finite_f32)
    )
    return FieldBundle(name, label_count, filter_count, units, matrices)


class TestRoundTrip:
    def test_simple_round_trip(self):
        bundle = small_bundle(fill=1.5)
        sink = io.BytesIO()
        write_bundle(bundle, sink)
        sink.seek(0)
        assert read_bundle(sink) == bundle

    @settings(max_examples=60, deadline=None)
    @given(bundles())
    def test_round_trip_bit_exact(self, bundle):
        sink = io.BytesIO()
        count = write_bundle(bundle, sink)
        assert count == len(sink.getvalue())
        sink.seek(0)
        back = read_bundle(sink)
        assert back == bundle
        assert back.matrices.tobytes() == bundle.matrices.tobytes()

    def test_written_size_is_header_plus_payload(self):
        bundle = small_bundle(name="conv1")
        count = write_bundle(bundle, io.BytesIO())
        assert count == header_size("conv1") + 2 * 2 * 4
        assert header_size("conv1") == 4 + 4 + 4 + 4 + 4 + 2 + len(b"conv1")

    def test_layer10_shape_payload_size(self):
        # 512 filters of 100x100 float32, the largest tabulated layer shape
        bundle = FieldBundle(
            "L10", 100, 512, 4, np.zeros((512, 100, 100), dtype=np.float32)
        )
        count = write_bundle(bundle, io.BytesIO())
        assert count == header_size("L10") + 512 * 100 * 100 * 4

    def test_sink_failure_reports_position(self):
        class FailingSink:
            def __init__(self):
                self.written = 0

            def write(self, chunk):
                if self.written > 0:
                    raise OSError("disk full")
                self.written += len(chunk)

        with pytest.raises(OSError, match="byte 22"):
            write_bundle(small_bundle(name=""), FailingSink())


class TestReadErrors:
    def _bytes(self, bundle):
        sink = io.BytesIO()
        write_bundle(bundle, sink)
        return bytearray(sink.getvalue())

    def test_bad_magic(self):
        raw = self._bytes(small_bundle())
        raw[0:4] = b"XXXX"
        with pytest.raises(BadMagicError) as err:
            read_bundle(io.BytesIO(bytes(raw)))
        assert err.value.offset == 0

    def test_bad_version(self):
        raw = self._bytes(small_bundle())
        raw[4] = 9
        with pytest.raises(HeaderError) as err:
            read_bundle(io.BytesIO(bytes(raw)))
        assert err.value.offset == 4

    def test_truncated_payload(self):
        raw = self._bytes(small_bundle())
        with pytest.raises(TruncatedError):
            read_bundle(io.BytesIO(bytes(raw[:-3])))

    def test_truncated_header(self):
        with pytest.raises(TruncatedError):
            read_bundle(io.BytesIO(b"FFB1\x01"))

    def test_nan_payload_names_offset(self):
        bundle = small_bundle(fill=1.0)
        bundle.matrices[0, 1, 0] = np.nan  # flat payload index 2
        raw = self._bytes(bundle)
        with pytest.raises(NonFiniteError) as err:
            read_bundle(io.BytesIO(bytes(raw)))
        assert err.value.offset == header_size("layer") + 2 * 4

    def test_header_invariants_checked(self):
        raw = self._bytes(small_bundle())
        raw[8:12] = (1).to_bytes(4, "little")  # label count 1
        with pytest.raises(HeaderError) as err:
            read_bundle(io.BytesIO(bytes(raw)))
        assert err.value.offset == 8


class TestCsv:
    def test_direct_placement(self):
        bundle = read_csv_matrices(
            io.StringIO("filter,row,col,value\n0,0,0,1.5\n"), 2, 1, 1, "L"
        )
        assert bundle.matrices.tolist() == [[[1.5, 0.0], [0.0, 0.0]]]

    def test_duplicate_cell_rejected(self):
        stream = io.StringIO("filter,row,col,value\n0,1,1,2.0\n0,1,1,3.0\n")
        with pytest.raises(CsvError, match="duplicate"):
            read_csv_matrices(stream, 2, 1, 1, "L")

    def test_empty_stream_gives_zero_bundle(self):
        bundle = read_csv_matrices(io.StringIO(""), 3, 2, 1, "L")
        assert not bundle.matrices.any()
        assert validate(bundle).ok

    def test_header_only_gives_zero_bundle(self):
        bundle = read_csv_matrices(io.StringIO("filter,row,col,value\n"), 2, 1, 1, "L")
        assert not bundle.matrices.any()

    def test_out_of_range_index(self):
        stream = io.StringIO("filter,row,col,value\n0,2,0,1.0\n")
        with pytest.raises(CsvError, match="out of range"):
            read_csv_matrices(stream, 2, 1, 1, "L")

    def test_unparsable_value(self):
        stream = io.StringIO("filter,row,col,value\n0,0,0,abc\n")
        with pytest.raises(CsvError, match="unparsable value"):
            read_csv_matrices(stream, 2, 1, 1, "L")

    def test_wrong_header_rejected(self):
        stream = io.StringIO("a,b,c,d\n0,0,0,1.0\n")
        with pytest.raises(CsvError, match="header"):
            read_csv_matrices(stream, 2, 1, 1, "L")


class TestValidate:
    def test_well_formed(self):
        assert validate(small_bundle()).ok

    def test_infinite_entry_reported_with_filter_index(self):
        bundle = small_bundle(filter_count=3)
        bundle.matrices[1, 0, 0] = np.inf
        report = validate(bundle)
        assert not report.ok
        assert report.issues == [(1, "matrix contains non-finite entries")]

    def test_filter_count_mismatch(self):
        bundle = small_bundle()
        bundle.filter_count = 5
        report = validate(bundle)
        assert not report.ok
        assert any(idx == -1 for idx, _ in report.issues)

    def test_label_count_too_small(self):
        bundle = FieldBundle("L", 1, 1, 1, np.zeros((1, 1, 1), dtype=np.float32))
        assert not validate(bundle).ok

    def test_side_mismatch(self):
        bundle = FieldBundle("L", 4, 1, 1, np.zeros((1, 3, 3), dtype=np.float32))
        report = validate(bundle)
        assert not report.ok

    @settings(max_examples=40, deadline=None)
    @given(bundles())
    def test_valid_bundles_are_analyzable(self, bundle):
        from filterscope.clusters import aggregate_layer, analyze_bundle

        assert validate(bundle).ok
        analyses = analyze_bundle(bundle)
        stats = aggregate_layer(analyses, bundle.label_count)
        assert stats.filter_count == bundle.filter_count
