"""Similarity measures, evaluation protocols, sweeps and report IO."""

import logging

import numpy as np
import pytest

from terralabel.evaluation import (
    LAYER_STAGES,
    EvalError,
    MetricReport,
    SegmentSample,
    build_samples,
    eval_context_aware,
    eval_feature_based,
    format_reports,
    glcm_dissimilarity,
    glcm_matrix,
    lbp_histogram,
    lbp_similarity,
    measure_pair,
    nearest_in_feature_space,
    neighbourhood_pairs,
    quantize_pair,
    read_reports,
    sam,
    spatial_neighbour_lists,
    ssim,
    sweep,
    write_reports,
)

from oracles import (
    assignment_brute_force_pairs,
    glcm_counts_naive,
    lbp_codes_naive,
    uniform_lbp_bin_naive,
)


class TestGlcm:
    def test_identical_patches(self, rng):
        patch = rng.uniform(size=(8, 8))
        assert glcm_dissimilarity(patch, patch) == 0.0

    def test_constant_vs_checkerboard(self):
        const = np.zeros((6, 6))
        checker = np.indices((6, 6)).sum(axis=0) % 2 * 1.0
        assert glcm_dissimilarity(const, checker) > 0.0

    def test_matrix_matches_counting_oracle(self, rng):
        q = rng.integers(0, 32, size=(7, 9))
        np.testing.assert_allclose(glcm_matrix(q, 32),
                                   glcm_counts_naive(q, 32), rtol=1e-12)

    def test_dissimilarity_matches_oracle_stats(self, rng):
        a = rng.uniform(0.0, 1.0, size=(6, 6))
        b = rng.uniform(0.0, 1.0, size=(6, 6))
        qa, qb = quantize_pair(a, b, 16)

        def stats(mat):
            g = mat.shape[0]
            contrast = homog = energy = 0.0
            for i in range(g):
                for j in range(g):
                    contrast += mat[i, j] * (i - j) ** 2
                    homog += mat[i, j] / (1 + abs(i - j))
                    energy += mat[i, j] ** 2
            return contrast / (g - 1) ** 2, homog, energy

        sa = stats(glcm_counts_naive(qa, 16))
        sb = stats(glcm_counts_naive(qb, 16))
        expected = sum(abs(x - y) for x, y in zip(sa, sb))
        assert glcm_dissimilarity(a, b, 16) == pytest.approx(expected, rel=1e-12)

    def test_symmetric(self, rng):
        a = rng.uniform(size=(5, 7))
        b = rng.uniform(size=(5, 7))
        assert glcm_dissimilarity(a, b) == pytest.approx(
            glcm_dissimilarity(b, a), rel=1e-12)

    def test_single_pixel_rejected(self):
        with pytest.raises(EvalError):
            glcm_dissimilarity(np.ones((1, 1)), np.ones((1, 1)))

    def test_row_patch_supported(self, rng):
        a = rng.uniform(size=(1, 6))
        assert glcm_dissimilarity(a, a) == 0.0

    def test_joint_quantization(self):
        # different constants land on different grey levels
        qa, qb = quantize_pair(np.zeros((3, 3)), np.ones((3, 3)), 32)
        assert qa.max() == 0
        assert qb.min() == 31


class TestLbp:
    def test_identical_patches(self, rng):
        patch = rng.uniform(size=(9, 9))
        assert lbp_similarity(patch, patch) == pytest.approx(1.0)

    def test_disjoint_histograms(self):
        # constant -> every code 255 (bin 8); x-gradient -> bin 5 everywhere
        const = np.zeros((8, 8))
        gradient = np.tile(np.arange(8.0), (8, 1))
        assert lbp_similarity(const, gradient) == 0.0

    def test_histogram_matches_pixel_oracle(self, rng):
        img = rng.uniform(size=(10, 12))
        codes = lbp_codes_naive(img)
        expected = np.zeros(10)
        for code in codes.ravel():
            expected[uniform_lbp_bin_naive(int(code))] += 1
        expected /= expected.sum()
        np.testing.assert_allclose(lbp_histogram(img), expected, rtol=1e-12)

    def test_similarity_matches_oracle(self, rng):
        a = rng.uniform(size=(8, 8))
        b = rng.uniform(size=(8, 8))

        def hist(img):
            h = np.zeros(10)
            for code in lbp_codes_naive(img).ravel():
                h[uniform_lbp_bin_naive(int(code))] += 1
            return h / h.sum()

        expected = np.minimum(hist(a), hist(b)).sum()
        assert lbp_similarity(a, b) == pytest.approx(expected, rel=1e-12)

    def test_histogram_normalized(self, rng):
        assert lbp_histogram(rng.uniform(size=(6, 6))).sum() == pytest.approx(1.0)

    def test_bounded_and_symmetric(self, rng):
        for _ in range(10):
            a = rng.uniform(size=(6, 6))
            b = rng.uniform(size=(6, 6))
            s = lbp_similarity(a, b)
            assert 0.0 <= s <= 1.0
            assert s == pytest.approx(lbp_similarity(b, a))

    def test_too_small_rejected(self):
        with pytest.raises(EvalError):
            lbp_histogram(np.ones((2, 2)))


class TestSsim:
    def test_identical_patches(self, rng):
        patch = rng.uniform(size=(7, 7))
        assert ssim(patch, patch) == pytest.approx(1.0)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(10):
            a = rng.uniform(0.0, 2.0, size=(6, 6))
            b = rng.uniform(0.0, 2.0, size=(6, 6))
            L = max(a.max(), b.max()) - min(a.min(), b.min())
            c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
            ma, mb = a.mean(), b.mean()
            va, vb = a.var(), b.var()
            cov = ((a - ma) * (b - mb)).mean()
            expected = ((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
            assert ssim(a, b) == pytest.approx(expected, rel=1e-12)

    def test_symmetric(self, rng):
        a = rng.uniform(size=(5, 5))
        b = rng.uniform(size=(5, 5))
        assert ssim(a, b) == pytest.approx(ssim(b, a), rel=1e-12)

    def test_equal_constants(self):
        patch = np.full((4, 4), 3.7)
        assert ssim(patch, patch.copy()) == pytest.approx(1.0)

    def test_different_constants_below_one(self):
        assert ssim(np.zeros((4, 4)), np.ones((4, 4))) < 1.0

    def test_unequal_shapes_use_common_crop(self, rng):
        a = rng.uniform(size=(5, 6))
        b = rng.uniform(size=(8, 7))
        assert ssim(a, b) == pytest.approx(ssim(a, b[:5, :6]), rel=1e-12)

    def test_bounded(self, rng):
        for _ in range(20):
            v = ssim(rng.uniform(size=(5, 5)), rng.uniform(size=(5, 5)))
            assert -1.0 <= v <= 1.0


class TestSam:
    def test_identical_spectra(self, rng):
        s = rng.uniform(0.1, 1.0, size=12)
        assert sam(s, s) == pytest.approx(0.0, abs=1e-6)

    def test_orthogonal_spectra(self):
        assert sam([1.0, 0.0], [0.0, 2.0]) == pytest.approx(np.pi / 2)

    def test_opposite_spectra(self):
        assert sam([1.0, 1.0], [-1.0, -1.0]) == pytest.approx(np.pi)

    def test_matches_formula_oracle(self, rng):
        for _ in range(20):
            a = rng.normal(size=8)
            b = rng.normal(size=8)
            expected = np.arccos(
                np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
            assert sam(a, b) == pytest.approx(expected, rel=1e-9)

    def test_zero_norm_logs_and_returns_pi(self, caplog):
        with caplog.at_level(logging.WARNING, logger="terralabel.evaluation"):
            assert sam(np.zeros(4), np.ones(4)) == pytest.approx(np.pi)
        assert any("zero-norm" in rec.message for rec in caplog.records)

    def test_bounded_and_symmetric(self, rng):
        for _ in range(10):
            a = rng.normal(size=6)
            b = rng.normal(size=6)
            v = sam(a, b)
            assert 0.0 <= v <= np.pi
            assert v == pytest.approx(sam(b, a))


class TestMetricReport:
    def _metrics(self, **over):
        base = {"glcm": 0.2, "lbp": 0.8, "ssim": 0.9, "sam": 0.3}
        base.update(over)
        return base

    def test_valid_report(self):
        r = MetricReport("gcn8", "feature", self._metrics(), {"K": 8})
        assert r.metrics["lbp"] == 0.8

    def test_bad_protocol_rejected(self):
        with pytest.raises(EvalError):
            MetricReport("m", "pixel", self._metrics())

    def test_missing_metric_rejected(self):
        with pytest.raises(EvalError):
            MetricReport("m", "feature", {"glcm": 0.0, "lbp": 1.0})

    @pytest.mark.parametrize("bad", [
        {"glcm": -0.5}, {"lbp": 1.5}, {"ssim": -0.2}, {"sam": 4.0},
    ])
    def test_out_of_range_rejected(self, bad):
        with pytest.raises(EvalError):
            MetricReport("m", "feature", self._metrics(**bad))

    def test_io_roundtrip(self, tmp_path):
        reports = [
            MetricReport("gat8", "context", self._metrics(), {"K": 8}, 1.5),
            MetricReport("gcn8", "feature", self._metrics(glcm=0.0)),
        ]
        path = tmp_path / "reports.json"
        write_reports(reports, path)
        back = read_reports(path)
        assert back[0].tag == "gat8"
        assert back[0].elapsed_s == 1.5
        assert back[1].metrics == reports[1].metrics

    def test_text_table(self):
        table = format_reports([
            MetricReport("gcn8", "feature", self._metrics()),
            MetricReport("gat8", "feature", self._metrics(lbp=0.5)),
        ])
        lines = table.splitlines()
        assert len(lines) == 3
        assert "GLCM" in lines[0] and "SAM" in lines[0]
        assert lines[1].startswith("gcn8")
        assert "0.5000" in lines[2]


def _mk_sample(sid, chip_id, embedding, patch, spectrum, centroid):
    return SegmentSample(sid, chip_id, np.asarray(embedding, float),
                         np.asarray(patch, float), np.asarray(patch, float),
                         np.asarray(spectrum, float), centroid)


def _toy_samples(rng, n=10, chip="c0"):
    samples = []
    for i in range(n):
        patch = rng.uniform(size=(6, 6)) + i * 0.3
        samples.append(_mk_sample(
            f"{chip}#{i}", chip, rng.normal(size=8),
            patch, rng.uniform(0.1, 1.0, size=12),
            (float(rng.uniform(0, 32)), float(rng.uniform(0, 32)))))
    return samples


def _duplicate_chip(samples, chip):
    return [_mk_sample(s.id.replace("#", "d#"), chip, s.embedding, s.patch,
                       s.spectrum, s.centroid) for s in samples]


class TestFeatureProtocol:
    def test_duplicate_chips_score_ideal(self, rng):
        a = _toy_samples(rng, n=6, chip="a")
        samples = a + _duplicate_chip(a, "b")
        report = eval_feature_based(samples, tag="dup")
        assert report.metrics["glcm"] == pytest.approx(0.0, abs=1e-12)
        assert report.metrics["lbp"] == pytest.approx(1.0, abs=1e-12)
        assert report.metrics["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert report.metrics["sam"] == pytest.approx(0.0, abs=1e-6)

    def test_matches_direct_oracle_composition(self, rng):
        samples = _toy_samples(rng, n=10)
        report = eval_feature_based(samples, tag="toy", workers=1)

        X = np.stack([s.embedding for s in samples])
        acc = {"glcm": [], "lbp": [], "ssim": [], "sam": []}
        for i in range(10):
            best, bj = np.inf, -1
            for j in range(10):
                if j == i:
                    continue
                d = float(((X[i] - X[j]) ** 2).sum())
                if d < best:
                    best, bj = d, j
            acc["glcm"].append(glcm_dissimilarity(samples[i].patch,
                                                  samples[bj].patch))
            acc["lbp"].append(lbp_similarity(samples[i].patch,
                                             samples[bj].patch))
            acc["ssim"].append(max(ssim(samples[i].ssim_patch,
                                        samples[bj].ssim_patch), 0.0))
            acc["sam"].append(sam(samples[i].spectrum, samples[bj].spectrum))
        for key in acc:
            assert report.metrics[key] == pytest.approx(
                float(np.mean(acc[key])), rel=1e-12)

    def test_deterministic_and_pool_agnostic(self, rng):
        samples = _toy_samples(rng, n=8)
        a = eval_feature_based(samples, workers=1)
        b = eval_feature_based(samples, workers=4)
        assert a.metrics == b.metrics

    def test_too_few_segments_rejected(self, rng):
        with pytest.raises(EvalError):
            eval_feature_based(_toy_samples(rng, n=1))

    def test_protocol_field(self, rng):
        assert eval_feature_based(_toy_samples(rng)).protocol == "feature"


def _grid_chip_samples(rng, chip, offset=0.0):
    """9 segments on a 3x3 centroid grid with distinctive embeddings."""
    samples = []
    for i in range(9):
        r, c = divmod(i, 3)
        emb = np.zeros(6)
        emb[i % 6] = 1.0 + i * 0.1 + offset
        patch = rng.uniform(size=(5, 5)) + i
        samples.append(_mk_sample(f"{chip}#{i}", chip, emb, patch,
                                  rng.uniform(0.1, 1.0, size=4),
                                  (r * 10.0, c * 10.0)))
    return samples


class TestContextProtocol:
    def test_identical_chips_score_ideal_and_match_feature_protocol(self, rng):
        a = _toy_samples(rng, n=9, chip="a")
        samples = a + _duplicate_chip(a, "b")
        ctx = eval_context_aware(samples, tag="dup")
        feat = eval_feature_based(samples, tag="dup")
        assert ctx.protocol == "context"
        assert ctx.metrics["ssim"] == pytest.approx(1.0, abs=1e-9)
        assert ctx.metrics["sam"] == pytest.approx(0.0, abs=1e-6)
        for key in ctx.metrics:
            assert ctx.metrics[key] == pytest.approx(feat.metrics[key],
                                                     abs=1e-9)

    def test_neighbourhood_matching_equals_factorial_oracle(self, rng):
        samples = (_grid_chip_samples(rng, "a")
                   + _grid_chip_samples(rng, "b", offset=0.01))
        neighbours = spatial_neighbour_lists(samples)
        xi, yi = 4, 13  # both chip centres: all 8 others are neighbours
        assert len(neighbours[xi]) == 8
        pairs = neighbourhood_pairs(xi, yi, samples, neighbours)
        assert pairs[0] == (4, 13)
        assert len(pairs) == 9

        ex = np.stack([samples[i].embedding for i in neighbours[xi]])
        ey = np.stack([samples[j].embedding for j in neighbours[yi]])
        cost = np.sqrt(((ex[:, None, :] - ey[None, :, :]) ** 2).sum(axis=2))
        _, oracle_pairs = assignment_brute_force_pairs(cost)
        expected = {(neighbours[xi][i], neighbours[yi][j])
                    for i, j in oracle_pairs}
        assert set(pairs[1:]) == expected

    def test_border_segments_use_available_neighbours(self, rng):
        # 2x2 grids: every segment has only 3 spatial neighbours
        samples = []
        for chip in ("a", "b"):
            for i in range(4):
                r, c = divmod(i, 2)
                samples.append(_mk_sample(
                    f"{chip}#{i}", chip, rng.normal(size=5),
                    rng.uniform(size=(4, 4)), rng.uniform(0.1, 1, size=3),
                    (r * 8.0, c * 8.0)))
        neighbours = spatial_neighbour_lists(samples)
        assert all(len(n) == 3 for n in neighbours)
        report = eval_context_aware(samples)
        assert set(report.metrics) == {"glcm", "lbp", "ssim", "sam"}

    def test_deterministic(self, rng):
        samples = _toy_samples(rng, n=7)
        a = eval_context_aware(samples, workers=1)
        b = eval_context_aware(samples, workers=3)
        assert a.metrics == b.metrics


class TestSpatialNeighbours:
    def test_within_chip_only(self, rng):
        samples = (_grid_chip_samples(rng, "a")
                   + _grid_chip_samples(rng, "b"))
        neighbours = spatial_neighbour_lists(samples)
        for i, ns in enumerate(neighbours):
            for j in ns:
                assert samples[j].chip_id == samples[i].chip_id
                assert j != i

    def test_nearest_by_centroid(self, rng):
        samples = _grid_chip_samples(rng, "a")
        neighbours = spatial_neighbour_lists(samples, k=2)
        # corner segment 0 at (0,0): nearest two are 1 (0,10) and 3 (10,0)
        assert set(neighbours[0]) == {1, 3}


class TestNearestInFeatureSpace:
    def test_excludes_self_and_breaks_ties_low(self):
        samples = [
            _mk_sample("a#0", "a", [0.0, 0.0], np.zeros((3, 3)), [1.0], (0, 0)),
            _mk_sample("a#1", "a", [1.0, 0.0], np.zeros((3, 3)), [1.0], (0, 1)),
            _mk_sample("a#2", "a", [-1.0, 0.0], np.zeros((3, 3)), [1.0], (0, 2)),
        ]
        nearest = nearest_in_feature_space(samples)
        assert nearest[0] == 1  # distance tie between 1 and 2 -> lower index


class TestSweep:
    def _runner(self, log_list):
        def run(axis, value):
            log_list.append((axis, value))
            return MetricReport(f"m-{value}", "feature",
                                {"glcm": 0.1, "lbp": 0.9, "ssim": 0.8,
                                 "sam": 0.2})
        return run

    def test_layer_axis_emits_three_reports(self):
        calls = []
        reports = sweep("layer", None, self._runner(calls))
        assert len(reports) == 3
        assert [r.params["layer"] for r in reports] == list(LAYER_STAGES)
        assert all(r.elapsed_s is not None and r.elapsed_s >= 0.0
                   for r in reports)

    def test_single_value_degenerates_to_one_run(self):
        calls = []
        reports = sweep("K", [8], self._runner(calls))
        assert len(reports) == 1
        assert calls == [("K", 8)]
        assert reports[0].params["K"] == 8

    def test_value_list_respected(self):
        calls = []
        reports = sweep("N", [200, 500, 800], self._runner(calls))
        assert [r.params["N"] for r in reports] == [200, 500, 800]

    def test_unknown_axis_rejected(self):
        with pytest.raises(EvalError):
            sweep("M", [1], self._runner([]))

    def test_missing_values_rejected(self):
        with pytest.raises(EvalError):
            sweep("K", None, self._runner([]))


class TestBuildSamples:
    def test_from_slic_segmentation(self, rng):
        from terralabel.superpixels import slic

        chip = rng.normal(0.0, 1.0, size=(4, 24, 24)).astype(np.float32)
        chip[:, 12:, :] += 2.5
        seg = slic(chip, n_segments=8)
        emb = rng.normal(size=(len(seg.segments), 16))
        samples = build_samples("t1_r000c000", chip, seg, emb)
        assert len(samples) == len(seg.segments)
        ids = [s.id for s in samples]
        assert len(set(ids)) == len(ids)
        for s, info in zip(samples, seg.segments):
            assert s.patch.shape[0] >= 3 and s.patch.shape[1] >= 3
            assert s.ssim_patch.shape == s.patch.shape
            assert s.spectrum.shape == (4,)
            assert s.centroid == info.centroid_rc
            np.testing.assert_array_equal(s.embedding, emb[info.id])

    def test_measure_pair_on_built_samples(self, rng):
        from terralabel.superpixels import slic

        chip = rng.normal(size=(3, 20, 20)).astype(np.float32)
        seg = slic(chip, n_segments=6)
        emb = rng.normal(size=(len(seg.segments), 8))
        samples = build_samples("c", chip, seg, emb)
        m = measure_pair(samples[0], samples[-1])
        assert set(m) == {"glcm", "lbp", "ssim", "sam"}
        assert all(np.isfinite(v) for v in m.values())
