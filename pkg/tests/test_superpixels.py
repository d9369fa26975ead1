"""SLIC segmentation: grid regularity, purity, partition and IO invariants."""

import struct

import numpy as np
import pytest
from scipy import ndimage

from terralabel.superpixels import (
    SegmentMap,
    SuperpixelError,
    _enforce_connectivity,
    pca_working_space,
    read_segm,
    segment_map_from_labels,
    segment_means,
    slic,
    write_segm,
)

from oracles import segment_means_naive

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def _assert_partition(seg: SegmentMap):
    h, w = seg.labels.shape
    assert seg.labels.min() == 0
    assert seg.labels.max() == seg.n_segments - 1
    areas = np.bincount(seg.labels.ravel(), minlength=seg.n_segments)
    assert areas.sum() == h * w
    assert np.all(areas > 0)
    assert areas.tolist() == [s.pixel_count for s in seg.segments]


def _assert_connected(seg: SegmentMap):
    for info in seg.segments:
        r0, c0, r1, c1 = info.bbox
        mask = seg.labels[r0:r1 + 1, c0:c1 + 1] == info.id
        _, n = ndimage.label(mask, structure=_CROSS)
        assert n == 1, f"segment {info.id} has {n} components"


def _partitions_equal(a: np.ndarray, b: np.ndarray) -> bool:
    """True when two label images induce the same pixel partition."""
    pair = a.astype(np.int64) * (b.max() + 1) + b
    return (len(np.unique(pair)) == len(np.unique(a)) == len(np.unique(b)))


class TestWorkingSpace:
    def test_shape_and_leading_unit_variance(self, rng):
        chip = rng.normal(size=(12, 32, 32)).astype(np.float32)
        feat = pca_working_space(chip)
        assert feat.shape == (32, 32, 3)
        flat = feat.reshape(-1, 3)
        stds = flat.std(axis=0)
        assert stds[0] == pytest.approx(1.0, abs=1e-6)
        assert stds[0] >= stds[1] >= stds[2] > 0  # shared scale keeps ordering
        np.testing.assert_allclose(flat.mean(axis=0), 0.0, atol=1e-9)

    def test_deterministic_sign(self, rng):
        chip = rng.normal(size=(5, 16, 16)).astype(np.float32)
        a = pca_working_space(chip)
        b = pca_working_space(chip.copy())
        np.testing.assert_array_equal(a, b)

    def test_degenerate_bands_zero_fill(self):
        chip = np.zeros((2, 8, 8), dtype=np.float32)
        chip[0] = np.linspace(0, 1, 64).reshape(8, 8)
        feat = pca_working_space(chip)
        # one informative direction; the rest project to ~0
        assert np.abs(feat[:, :, 1]).max() < 1e-3
        assert np.abs(feat[:, :, 2]).max() < 1e-3

    def test_uniform_chip_all_zero(self):
        feat = pca_working_space(np.full((3, 8, 8), 2.5, np.float32))
        np.testing.assert_allclose(feat, 0.0, atol=1e-12)


class TestSlic:
    def test_uniform_chip_regular_grid(self):
        chip = np.full((3, 256, 256), 1.0, np.float32)
        seg = slic(chip, n_segments=500)
        _assert_partition(seg)
        assert 400 <= seg.n_segments <= 600  # within ±20% of N=500
        mean_area = 256 * 256 / seg.n_segments
        assert abs(mean_area - 131.0) < 26.0  # ~131 px nominal cell
        _assert_connected(seg)

    def test_two_tone_purity(self, rng):
        chip = rng.normal(0.0, 0.02, size=(3, 128, 128)).astype(np.float32)
        chip[:, :, 64:] += 4.0
        seg = slic(chip, n_segments=120)
        tone = (np.arange(128) >= 64)[None, :] * np.ones((128, 1), bool)
        pure = 0
        for info in seg.segments:
            frac = tone[seg.labels == info.id].mean()
            pure += frac in (0.0, 1.0)
        assert pure / seg.n_segments >= 0.95

    def test_partition_and_connectivity_random_chip(self, rng):
        chip = rng.normal(size=(4, 64, 64)).astype(np.float32)
        seg = slic(chip, n_segments=40)
        _assert_partition(seg)
        _assert_connected(seg)

    def test_determinism(self, rng):
        chip = rng.normal(size=(3, 64, 64)).astype(np.float32)
        a = slic(chip, n_segments=50)
        b = slic(chip, n_segments=50)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_rotation_symmetry(self, rng):
        chip = rng.normal(size=(3, 64, 64)).astype(np.float32)
        seg = slic(chip, n_segments=40)
        rot = np.rot90(chip, 1, axes=(1, 2)).copy()
        seg_rot = slic(rot, n_segments=40)
        unrotated = np.rot90(seg_rot.labels, -1)
        assert _partitions_equal(seg.labels, unrotated)

    def test_bad_n_rejected(self, rng):
        chip = rng.normal(size=(3, 16, 16)).astype(np.float32)
        with pytest.raises(SuperpixelError):
            slic(chip, n_segments=1)
        with pytest.raises(SuperpixelError):
            slic(chip, n_segments=257 * 257)


class TestConnectivityEnforcement:
    def test_orphan_absorbed_into_largest_neighbour(self):
        labels = np.zeros((8, 8), dtype=np.int64)
        labels[:, 4:] = 1
        labels[2, 2] = 7  # single-pixel island inside segment 0
        dense = _enforce_connectivity(labels, min_size=4)
        assert dense.max() == 1
        assert (dense == dense[0, 0]).sum() == 32

    def test_disconnected_label_split(self):
        labels = np.zeros((6, 6), dtype=np.int64)
        labels[:, :2] = 1
        labels[:, 4:] = 1  # same id, two far-apart stripes
        dense = _enforce_connectivity(labels, min_size=2)
        assert len(np.unique(dense)) == 3

    def test_large_components_untouched(self):
        labels = np.repeat(np.arange(4), 16).reshape(8, 8)
        dense = _enforce_connectivity(labels.astype(np.int64), min_size=4)
        assert _partitions_equal(labels, dense)


class TestSegmentMeans:
    def test_constant_map(self, rng):
        chip = rng.normal(size=(3, 32, 32)).astype(np.float32)
        seg = slic(chip, n_segments=10)
        maps = np.full((5, 32, 32), 3.25, np.float32)
        means = segment_means(seg, maps)
        np.testing.assert_allclose(means, 3.25, atol=1e-6)

    def test_single_pixel_segment(self):
        labels = np.zeros((4, 4), dtype=np.int32)
        labels[3, 3] = 1
        seg = segment_map_from_labels(labels)
        maps = np.arange(2 * 16, dtype=np.float32).reshape(2, 4, 4)
        means = segment_means(seg, maps)
        np.testing.assert_allclose(means[1], [maps[0, 3, 3], maps[1, 3, 3]])

    def test_matches_naive_oracle(self, rng):
        labels = rng.integers(0, 6, size=(12, 12))
        labels.flat[:6] = np.arange(6)  # keep ids dense
        seg = segment_map_from_labels(labels.astype(np.int32))
        maps = rng.normal(size=(7, 12, 12)).astype(np.float32)
        np.testing.assert_allclose(segment_means(seg, maps),
                                   segment_means_naive(seg.labels, maps),
                                   rtol=1e-5)

    def test_dim_mismatch(self, rng):
        seg = segment_map_from_labels(np.zeros((4, 4), dtype=np.int32))
        with pytest.raises(SuperpixelError):
            segment_means(seg, np.zeros((2, 5, 5), np.float32))


class TestSegmIO:
    def test_round_trip(self, rng, tmp_path):
        chip = rng.normal(size=(3, 64, 64)).astype(np.float32)
        seg = slic(chip, n_segments=30)
        write_segm(seg, tmp_path / "c.segm")
        back = read_segm(tmp_path / "c.segm")
        np.testing.assert_array_equal(back.labels, seg.labels)
        assert [s.__dict__ for s in back.segments] == [s.__dict__ for s in seg.segments]

    def test_header_layout(self, tmp_path):
        labels = np.zeros((3, 5), dtype=np.int32)
        labels[2, 4] = 1
        write_segm(segment_map_from_labels(labels), tmp_path / "x.segm")
        blob = (tmp_path / "x.segm").read_bytes()
        assert blob[:4] == b"SEGM"
        assert struct.unpack_from("<HHHI", blob, 4) == (1, 3, 5, 2)
        assert len(blob) == 14 + 15 * 4

    def test_missing_sidecar_recomputes(self, tmp_path):
        labels = np.zeros((4, 4), dtype=np.int32)
        labels[2:, :] = 1
        seg = segment_map_from_labels(labels)
        write_segm(seg, tmp_path / "y.segm")
        (tmp_path / "y.json").unlink()
        back = read_segm(tmp_path / "y.segm")
        assert back.n_segments == 2
        assert back.segments[1].pixel_count == 8

    def test_bad_magic(self, tmp_path):
        (tmp_path / "z.segm").write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(SuperpixelError):
            read_segm(tmp_path / "z.segm")
