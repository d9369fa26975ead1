"""Fuzzy C-means: memberships, objective, seeding, model round-trips."""

import numpy as np
import pytest

from terralabel.clustering import (
    ClusteringError,
    FCMModel,
    fcm_fit,
    fcm_memberships,
    fcm_predict,
    hard_labels,
    predict_chip,
    sample_store,
    subsample_pixels,
)
from terralabel.ingest import ChipStore, Tile

from oracles import adjusted_rand_index


def _three_blobs(rng, n_per=200, spread=0.05):
    centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])
    X = np.concatenate([
        rng.normal(c, spread, size=(n_per, 2)) for c in centers])
    y = np.repeat(np.arange(3), n_per)
    return X, y


class TestSubsample:
    def test_stride_over_flattened_pixels(self):
        data = np.arange(2 * 4 * 5, dtype=np.float32).reshape(2, 4, 5)
        out = subsample_pixels(data, stride=7)
        assert out.shape == (3, 2)  # ceil(20/7)
        np.testing.assert_array_equal(out[:, 0], [0, 7, 14])
        np.testing.assert_array_equal(out[:, 1], [20, 27, 34])

    def test_full_scene_count(self):
        # 10980^2 pixels at stride 56 -> ceil(120560400/56) = 2152865 spectra.
        tile = np.zeros((1, 10980, 10980), dtype=np.float32)
        assert subsample_pixels(tile).shape == (2152865, 1)

    def test_store_sampling_uses_split(self, rng, tmp_path):
        store = ChipStore.create(tmp_path / "s")
        store.add_tile(Tile("t0", rng.normal(size=(2, 512, 512)).astype(np.float32)))
        store.assign_splits()
        train = sample_store(store, stride=56, split="train")
        test = sample_store(store, stride=56, split="test")
        per_chip = int(np.ceil(256 * 256 / 56))
        assert train.shape == (3 * per_chip, 2)
        assert test.shape == (per_chip, 2)


class TestFCMFit:
    def test_three_gaussians_recovered_exactly(self, rng):
        X, y = _three_blobs(rng)
        model = fcm_fit(X, 3, seed=7)
        labels = hard_labels(fcm_predict(model, X))
        assert adjusted_rand_index(labels, y) == pytest.approx(1.0)

    def test_objective_non_increasing(self, rng):
        X, _ = _three_blobs(rng, spread=1.0)
        model = fcm_fit(X, 3, seed=1)
        J = np.asarray(model.objective)
        assert len(J) >= 2
        assert np.all(np.diff(J) <= 1e-9 * np.abs(J[:-1]))

    def test_determinism(self, rng):
        X, _ = _three_blobs(rng)
        a = fcm_fit(X, 3, seed=3)
        b = fcm_fit(X, 3, seed=3)
        np.testing.assert_array_equal(a.centers, b.centers)
        assert a.objective == b.objective

    def test_too_few_points_rejected(self):
        with pytest.raises(ClusteringError):
            fcm_fit(np.zeros((2, 3)), 5)


class TestMemberships:
    def test_rows_sum_to_one(self, rng):
        X, _ = _three_blobs(rng, spread=2.0)
        model = fcm_fit(X, 3, seed=0)
        U = fcm_predict(model, X)
        np.testing.assert_allclose(U.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(U >= 0)

    def test_m2_closed_form(self):
        # distances 1 and 2 from the two centers: u = (1/d^2) normalized.
        U = fcm_memberships(np.array([[0.0]]), np.array([[1.0], [-2.0]]), 2.0)
        np.testing.assert_allclose(U[0], [0.8, 0.2], atol=1e-12)

    def test_zero_distance_one_hot(self):
        U = fcm_memberships(np.array([[1.0, 2.0]]),
                            np.array([[1.0, 2.0], [3.0, 4.0]]), 2.0)
        np.testing.assert_array_equal(U[0], [1.0, 0.0])

    def test_equidistant_uniform(self):
        U = fcm_memberships(np.array([[0.0]]), np.array([[1.0], [-1.0]]), 2.0)
        np.testing.assert_allclose(U[0], [0.5, 0.5], atol=1e-12)


class TestModelIO:
    def test_round_trip(self, rng, tmp_path):
        X, _ = _three_blobs(rng)
        model = fcm_fit(X, 3, seed=2)
        model.save(tmp_path / "fcm.json")
        back = FCMModel.load(tmp_path / "fcm.json")
        assert back.n_classes == 3 and back.m == 2.0 and back.n_iter == model.n_iter
        np.testing.assert_allclose(back.centers, model.centers)
        np.testing.assert_allclose(back.band_mean, model.band_mean)
        U_a = fcm_predict(model, X)
        U_b = fcm_predict(back, X)
        np.testing.assert_allclose(U_a, U_b, atol=1e-12)


class TestChipPrediction:
    def test_membership_maps_shape_and_sum(self, rng):
        X, _ = _three_blobs(rng)
        model = fcm_fit(X, 3, seed=0)
        chip = rng.normal(2.0, 2.0, size=(2, 16, 16)).astype(np.float32)
        maps = predict_chip(model, chip)
        assert maps.shape == (3, 16, 16)
        np.testing.assert_allclose(maps.sum(axis=0), 1.0, atol=1e-5)

    def test_matches_flat_prediction(self, rng):
        X, _ = _three_blobs(rng)
        model = fcm_fit(X, 3, seed=0)
        chip = rng.normal(size=(2, 4, 4)).astype(np.float32)
        maps = predict_chip(model, chip)
        flat = fcm_predict(model, chip.reshape(2, -1).T)
        np.testing.assert_allclose(maps.reshape(3, -1).T, flat, atol=1e-6)
