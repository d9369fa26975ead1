"""KNN extraction, smooth-kNN calibration, UMAP layout and projection IO."""

import json

import numpy as np
import pytest

from terralabel.matching import SimilarityMatrix
from terralabel.projection import (
    FuzzyGraph,
    Projection2D,
    ProjectionError,
    fit_ab,
    fuzzy_graph,
    knn_from_distances,
    optimize_layout,
    project_similarity,
    project_vectors,
    read_projection,
    solve_sigma,
    write_projection,
)

from oracles import knn_lists_naive, neighbour_purity, trustworthiness


def _dist_from_points(pts):
    pts = np.asarray(pts, dtype=np.float64)
    return np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))


class TestKnn:
    def test_three_points_on_a_line(self):
        d = _dist_from_points([[0.0], [1.0], [3.0]])
        idx, nd = knn_from_distances(d, 1)
        assert idx[0, 0] == 1  # endpoint picks the middle
        assert idx[2, 0] == 1
        assert idx[1, 0] == 0  # middle picks its nearer endpoint
        assert nd[2, 0] == pytest.approx(2.0)

    def test_tie_breaks_to_lower_id(self):
        d = _dist_from_points([[0.0], [-1.0], [1.0]])
        idx, _ = knn_from_distances(d, 1)
        assert idx[0, 0] == 1  # both neighbours at distance 1

    def test_matches_full_sort_oracle(self, rng):
        d = rng.uniform(0.0, 1.0, size=(20, 20))
        d = (d + d.T) / 2.0
        np.fill_diagonal(d, 0.0)
        idx, nd = knn_from_distances(d, 6)
        assert idx.tolist() == knn_lists_naive(d, 6)
        assert (np.diff(nd, axis=1) >= 0.0).all()

    def test_self_excluded(self, rng):
        d = rng.uniform(0.1, 1.0, size=(8, 8))
        np.fill_diagonal(d, 0.0)
        idx, _ = knn_from_distances(d, 7)
        for i in range(8):
            assert i not in idx[i]

    def test_k_out_of_range_rejected(self, rng):
        d = np.zeros((4, 4))
        with pytest.raises(ProjectionError):
            knn_from_distances(d, 4)
        with pytest.raises(ProjectionError):
            knn_from_distances(d, 0)


class TestSolveSigma:
    def test_equidistant_closed_form(self):
        # k neighbours all at gap g: k exp(-g/sigma) = log2(k) gives
        # sigma = g / ln(k / log2 k)
        k, d, rho = 8, 1.5, 0.5
        target = np.log2(k)
        sigma, ok = solve_sigma(np.full(k, d), rho, target)
        closed = (d - rho) / np.log(k / target)
        assert ok
        assert sigma == pytest.approx(closed, abs=1e-4)

    def test_defining_equation_holds_on_random_rows(self, rng):
        for _ in range(50):
            k = int(rng.integers(3, 12))
            dists = np.sort(rng.uniform(0.1, 2.0, size=k))
            target = np.log2(k)
            sigma, ok = solve_sigma(dists, float(dists.min()), target)
            assert ok
            gaps = np.maximum(dists - dists.min(), 0.0)
            assert np.exp(-gaps / sigma).sum() == pytest.approx(target, abs=1e-3)

    def test_unreachable_target_flags_clamp(self):
        # every neighbour at rho: the sum is k for any sigma
        sigma, ok = solve_sigma(np.full(4, 0.7), 0.7, np.log2(4))
        assert not ok
        assert sigma > 0.0


class TestFuzzyGraph:
    def test_nearest_neighbour_weight_is_one(self, rng):
        pts = rng.normal(size=(30, 3))
        idx, nd = knn_from_distances(_dist_from_points(pts), 5)
        g = fuzzy_graph(idx, nd)
        # for each point, its nearest-neighbour edge survives with weight 1:
        # exp(0) = 1 before the union, and a+b-ab >= max(a, b)
        w = {(h, t): v for h, t, v in zip(g.heads, g.tails, g.weights)}
        for i in range(30):
            j = int(idx[i, 0])
            key = (min(i, j), max(i, j))
            assert w[key] == pytest.approx(1.0, abs=1e-9)

    def test_weights_in_unit_interval(self, rng):
        pts = rng.normal(size=(40, 4))
        idx, nd = knn_from_distances(_dist_from_points(pts), 6)
        g = fuzzy_graph(idx, nd)
        assert (g.weights > 0.0).all()
        assert (g.weights <= 1.0 + 1e-12).all()

    def test_union_formula(self):
        # weight pair (1, 0): j is i's nearest but i is not in N(j);
        # the probabilistic union 1 + 0 - 0 keeps the edge at 1
        assert 1.0 + 0.0 - 1.0 * 0.0 == 1.0
        pts = np.array([[0.0], [1.0], [1.6], [2.2]])
        idx, nd = knn_from_distances(_dist_from_points(pts), 1)
        g = fuzzy_graph(idx, nd)
        w = {(h, t): v for h, t, v in zip(g.heads, g.tails, g.weights)}
        assert (0, 1) in w  # 0 -> 1 one-sided (1's nearest is 2)
        assert w[(0, 1)] == pytest.approx(1.0)

    def test_sigma_positive_rho_is_nearest(self, rng):
        pts = rng.normal(size=(25, 3))
        d = _dist_from_points(pts)
        idx, nd = knn_from_distances(d, 4)
        g = fuzzy_graph(idx, nd)
        assert (g.sigma > 0.0).all()
        np.testing.assert_allclose(g.rho, nd[:, 0])


class TestFitAb:
    def test_standard_min_dist(self):
        a, b = fit_ab(0.1)
        assert a == pytest.approx(1.577, abs=0.02)
        assert b == pytest.approx(0.895, abs=0.02)

    def test_curve_matches_target_shape(self):
        a, b = fit_ab(0.25)
        xv = np.linspace(0.05, 3.0, 200)
        target = np.where(xv < 0.25, 1.0, np.exp(-(xv - 0.25)))
        fitted = 1.0 / (1.0 + a * xv ** (2 * b))
        assert np.abs(fitted - target).max() < 0.08


class TestOptimizeLayout:
    def test_two_points_attract(self):
        g = FuzzyGraph(2, np.array([0]), np.array([1]), np.array([1.0]),
                       np.zeros(2), np.ones(2))
        initial = np.array([[0.0, 0.0], [5.0, 0.0]])
        final = optimize_layout(g, epochs=50, seed=42, init=initial)
        d1 = np.linalg.norm(final[0] - final[1])
        assert d1 < 5.0

    def test_deterministic(self, rng):
        pts = rng.normal(size=(40, 5))
        idx, nd = knn_from_distances(_dist_from_points(pts), 8)
        g = fuzzy_graph(idx, nd)
        a = optimize_layout(g, epochs=30, seed=7)
        b = optimize_layout(g, epochs=30, seed=7)
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_layout(self, rng):
        pts = rng.normal(size=(30, 4))
        idx, nd = knn_from_distances(_dist_from_points(pts), 6)
        g = fuzzy_graph(idx, nd)
        a = optimize_layout(g, epochs=20, seed=1)
        b = optimize_layout(g, epochs=20, seed=2)
        assert not np.array_equal(a, b)

    def test_empty_graph_returns_init(self):
        g = FuzzyGraph(3, np.array([], np.int64), np.array([], np.int64),
                       np.array([]), np.zeros(3), np.ones(3))
        coords = optimize_layout(g, epochs=10, seed=3)
        assert coords.shape == (3, 2)
        assert np.isfinite(coords).all()


def _three_clusters(rng, per=100, dim=6, sep=12.0):
    centers = np.zeros((3, dim))
    centers[1, 0] = sep
    centers[2, 1] = sep
    pts = np.concatenate([rng.normal(c, 1.0, size=(per, dim)) for c in centers])
    labels = np.repeat(np.arange(3), per)
    return pts, labels


class TestLayoutQuality:
    def test_three_cluster_purity_and_trustworthiness(self, rng):
        pts, labels = _three_clusters(rng)
        dist = _dist_from_points(pts)
        idx, nd = knn_from_distances(dist, 15)
        g = fuzzy_graph(idx, nd)
        coords = optimize_layout(g, epochs=200, seed=42)
        assert neighbour_purity(coords, labels, 10) >= 0.9
        assert trustworthiness(dist, coords, 10) >= 0.85


class TestProjectionTypeAndIO:
    def test_duplicate_ids_rejected(self):
        with pytest.raises(ProjectionError):
            Projection2D(["a", "a"], np.zeros((2, 2)), "chip")

    def test_nonfinite_coords_rejected(self):
        with pytest.raises(ProjectionError):
            Projection2D(["a", "b"], np.array([[0.0, 0.0], [np.nan, 1.0]]),
                         "chip")

    def test_bad_level_rejected(self):
        with pytest.raises(ProjectionError):
            Projection2D(["a"], np.zeros((1, 2)), "pixel")

    def test_roundtrip(self, rng, tmp_path):
        proj = Projection2D([f"c{i}" for i in range(5)],
                            rng.normal(size=(5, 2)), "segment",
                            {"n_neighbors": 3, "min_dist": 0.1,
                             "epochs": 10, "seed": 0})
        path = tmp_path / "p.proj"
        write_projection(proj, path)
        back = read_projection(path)
        assert back.ids == proj.ids
        assert back.level == "segment"
        assert back.params == proj.params
        np.testing.assert_allclose(back.coords, proj.coords)

    def test_json_layout(self, tmp_path):
        proj = Projection2D(["x"], np.array([[1.5, -2.0]]), "chip", {"seed": 1})
        path = tmp_path / "p.proj"
        write_projection(proj, path)
        raw = json.loads(path.read_text())
        assert raw["level"] == "chip"
        assert raw["points"] == [{"id": "x", "x": 1.5, "y": -2.0}]


class TestEndToEndProjections:
    def test_project_similarity(self, rng):
        n = 12
        base = rng.uniform(-0.2, 0.9, size=(n, n))
        values = ((base + base.T) / 2).astype(np.float32)
        np.fill_diagonal(values, 1.0)
        sim = SimilarityMatrix([f"c{i:02d}" for i in range(n)], values)
        proj = project_similarity(sim, n_neighbors=4, epochs=20, seed=5)
        assert proj.level == "chip"
        assert proj.ids == sim.chip_ids
        assert proj.coords.shape == (n, 2)
        assert proj.params["n_neighbors"] == 4

    def test_project_similarity_clamps_neighbours(self, rng):
        values = np.eye(3, dtype=np.float32)
        values[values == 0.0] = 0.5
        sim = SimilarityMatrix(["a", "b", "c"], values)
        proj = project_similarity(sim, n_neighbors=15, epochs=5, seed=1)
        assert proj.params["n_neighbors"] == 2

    def test_project_vectors(self, rng):
        vecs = rng.normal(size=(20, 16))
        ids = [f"c_s{i}" for i in range(20)]
        proj = project_vectors(ids, vecs, n_neighbors=5, epochs=15, seed=3)
        assert proj.level == "segment"
        assert proj.coords.shape == (20, 2)
        assert np.isfinite(proj.coords).all()

    def test_too_few_points_rejected(self):
        with pytest.raises(ProjectionError):
            project_vectors(["one"], np.zeros((1, 4)))
