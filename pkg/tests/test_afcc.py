import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from filterscope.afcc import (
    AfccMask,
    FcTopology,
    MaskIntegrityError,
    apply_mask,
    build_mask,
    load_mask,
    mask_from_label_sets,
    mask_stats,
    read_mask,
    save_mask,
    write_mask,
)
from filterscope.bundle import BadMagicError, TruncatedError
from filterscope.clusters import LayerStats, analyze_filter
from planted import planted_matrix


def stats_for(filter_count, label_count, size, count, threshold=0.3):
    return LayerStats(
        filter_count=filter_count,
        label_count=label_count,
        mean_noise=0.0,
        mean_clusters_per_filter=count,
        mean_cluster_size=size,
        threshold=threshold,
    )


class TestBuildMask:
    def test_one_filter_cluster_01(self):
        topology = FcTopology(filter_count=1, units_per_filter=4, label_count=100)
        analysis = analyze_filter(planted_matrix(100, [[0, 1]], 0))
        mask = build_mask([analysis], topology)
        assert int(mask.keep.sum()) == 8  # 4 units x 2 labels
        assert mask.keep[0, :, 0].all() and mask.keep[0, :, 1].all()
        assert not mask.keep[0, :, 2:].any()

    def test_filter_without_clusters_fully_dropped(self):
        topology = FcTopology(filter_count=1, units_per_filter=4, label_count=10)
        analysis = analyze_filter(np.zeros((10, 10)))
        mask = build_mask([analysis], topology)
        assert not mask.keep.any()

    def test_paper_scale_reduction(self):
        # 512 filters, unions summing to 2700 labels, 4 units, 100 labels
        label_sets = []
        for f in range(512):
            size = 6 if f < 140 else 5
            label_sets.append(range(size))
        assert sum(len(s) for s in label_sets) == 2700
        topology = FcTopology(filter_count=512, units_per_filter=4, label_count=100)
        mask = mask_from_label_sets(label_sets, topology)
        stats = mask_stats(mask, stats_for(512, 100, 2.0, 2.6))
        assert stats.kept == 10_800
        assert stats.zeroed == 194_000
        assert stats.reduction_fraction == 194_000 / 204_800
        assert stats.estimator == pytest.approx(512 * 4 * 2.0 * 2.6, abs=1e-9)

    def test_kept_equals_sum_of_unions(self):
        rng = np.random.default_rng(0)
        label_sets = [
            set(rng.choice(20, size=rng.integers(0, 6), replace=False).tolist())
            for _ in range(15)
        ]
        topology = FcTopology(filter_count=15, units_per_filter=3, label_count=20)
        mask = mask_from_label_sets(label_sets, topology)
        assert int(mask.keep.sum()) == 3 * sum(len(s) for s in label_sets)

    def test_label_out_of_range(self):
        topology = FcTopology(filter_count=1, units_per_filter=1, label_count=4)
        with pytest.raises(ValueError, match="out of range"):
            mask_from_label_sets([{5}], topology)

    def test_filter_count_mismatch(self):
        topology = FcTopology(filter_count=2, units_per_filter=1, label_count=4)
        with pytest.raises(ValueError, match="label sets"):
            mask_from_label_sets([{0}], topology)


class TestMaskStats:
    def test_single_unit_head_estimator(self):
        topology = FcTopology(filter_count=1280, units_per_filter=1, label_count=100)
        mask = mask_from_label_sets([{0, 1, 2}] * 1280, topology)
        stats = mask_stats(mask, stats_for(1280, 100, 3.0, 1.2))
        assert stats.estimator == pytest.approx(4608.0, abs=1e-9)

    def test_all_empty_unions(self):
        topology = FcTopology(filter_count=4, units_per_filter=2, label_count=5)
        mask = mask_from_label_sets([set()] * 4, topology)
        stats = mask_stats(mask, None)
        assert stats.kept == 0
        assert stats.reduction_fraction == 1.0
        assert stats.estimator == 0.0

    def test_undefined_cluster_size_gives_zero_estimator(self):
        topology = FcTopology(filter_count=4, units_per_filter=2, label_count=5)
        mask = mask_from_label_sets([set()] * 4, topology)
        stats = mask_stats(mask, stats_for(4, 5, None, 0.0))
        assert stats.estimator == 0.0


class TestApplyMask:
    def _mask(self):
        topology = FcTopology(filter_count=2, units_per_filter=3, label_count=4)
        return mask_from_label_sets([{0, 2}, {1}], topology)

    def test_all_keep_is_identity(self):
        topology = FcTopology(filter_count=2, units_per_filter=3, label_count=4)
        mask = mask_from_label_sets([set(range(4))] * 2, topology)
        weights = np.random.default_rng(1).normal(size=(6, 4)).astype(np.float32)
        assert np.array_equal(apply_mask(weights, mask), weights)

    def test_all_drop_zeroes_everything(self):
        topology = FcTopology(filter_count=2, units_per_filter=3, label_count=4)
        mask = mask_from_label_sets([set(), set()], topology)
        weights = np.ones((6, 4), dtype=np.float32)
        assert not apply_mask(weights, mask).any()

    def test_idempotent_and_preserves_kept_bits(self):
        mask = self._mask()
        weights = np.random.default_rng(2).normal(size=(6, 4))
        once = apply_mask(weights, mask)
        twice = apply_mask(once, mask)
        assert np.array_equal(once, twice)
        keep = mask.as_weight_mask()
        assert np.array_equal(once[keep], weights[keep])
        assert not once[~keep].any()

    def test_masked_positions_survive_masked_updates(self):
        mask = self._mask()
        keep = mask.as_weight_mask()
        weights = apply_mask(np.ones((6, 4)), mask)
        update = np.random.default_rng(3).normal(size=(6, 4)) * keep
        weights = weights - 0.1 * update
        assert not weights[~keep].any()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            apply_mask(np.ones((5, 4)), self._mask())


class TestMaskFormat:
    def test_round_trip(self, tmp_path):
        topology = FcTopology(filter_count=3, units_per_filter=2, label_count=5)
        mask = mask_from_label_sets([{0}, {1, 4}, set()], topology)
        path = tmp_path / "mask.afm"
        written = save_mask(mask, path)
        assert written == 20 + 3 * 2 * 5
        back = load_mask(path)
        assert back.topology == topology
        assert np.array_equal(back.keep, mask.keep)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 4), st.integers(2, 8), st.integers(0, 2**32 - 1))
    def test_round_trip_randomized(self, filters, units, labels, seed):
        rng = np.random.default_rng(seed)
        per_filter = rng.random((filters, 1, labels)) < 0.4
        keep = np.repeat(per_filter, units, axis=1)
        mask = AfccMask(FcTopology(filters, units, labels), keep)
        sink = io.BytesIO()
        write_mask(mask, sink)
        sink.seek(0)
        back = read_mask(sink)
        assert np.array_equal(back.keep, mask.keep)

    def _mask_bytes(self):
        topology = FcTopology(filter_count=1, units_per_filter=2, label_count=3)
        mask = mask_from_label_sets([{0, 2}], topology)
        sink = io.BytesIO()
        write_mask(mask, sink)
        return bytearray(sink.getvalue())

    def test_bad_magic(self):
        raw = self._mask_bytes()
        raw[:4] = b"NOPE"
        with pytest.raises(BadMagicError):
            read_mask(io.BytesIO(bytes(raw)))

    def test_truncation(self):
        raw = self._mask_bytes()
        with pytest.raises(TruncatedError):
            read_mask(io.BytesIO(bytes(raw[:-1])))

    def test_bad_byte_value(self):
        raw = self._mask_bytes()
        raw[20] = 7
        with pytest.raises(MaskIntegrityError, match="0 or 1"):
            read_mask(io.BytesIO(bytes(raw)))

    def test_non_uniform_units_rejected(self):
        raw = self._mask_bytes()
        # keep bits: unit 0 = [1,0,1], unit 1 = [1,0,1]; flip one unit-1 bit
        raw[23] = 0
        with pytest.raises(MaskIntegrityError, match="unit-uniform"):
            read_mask(io.BytesIO(bytes(raw)))

    def test_unit_uniformity_enforced_at_construction(self):
        keep = np.zeros((1, 2, 3), dtype=bool)
        keep[0, 0, 0] = True
        # construction accepts any keep array; the format layer rejects it
        mask = AfccMask(FcTopology(1, 2, 3), keep)
        sink = io.BytesIO()
        write_mask(mask, sink)
        sink.seek(0)
        with pytest.raises(MaskIntegrityError):
            read_mask(sink)
