import numpy as np
import pytest

from edlkit.data import (
    DEFAULT_NOISE_SIGMAS,
    OOD_LABEL,
    LabeledDataset,
    Standardizer,
    add_noise,
    class_means,
    gaussian_blobs,
    ood_ring,
    read_csv,
    stratified_split,
    write_csv,
)


class TestLabeledDataset:
    def test_ood_rows_need_zero_labels(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((1, 2)), np.array([[1.0, 0.0]]), np.array(["ood"], dtype=object))

    def test_id_rows_need_one_hot(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((1, 2)), np.array([[0.5, 0.5]]), np.array(["id"], dtype=object))

    def test_row_counts(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2)), np.eye(2)[:1], np.array(["id"], dtype=object))

    def test_label_index_marks_ood(self):
        ds = gaussian_blobs(2, 3, seed=0).concat([gaussian_blobs(2, 3, seed=0), ood_ring(2, 2, 5.0)])
        assert np.all(ds.label_index[-2:] == OOD_LABEL)
        assert ds.is_ood.sum() == 2


class TestGenerators:
    def test_class_means_on_circle(self):
        mu = class_means(4, 3, 2.0)
        np.testing.assert_allclose(np.linalg.norm(mu, axis=1), 2.0)
        np.testing.assert_array_equal(mu[:, 2], 0.0)

    def test_blobs_shape_and_balance(self):
        ds = gaussian_blobs(3, 50, dim=5, seed=1)
        assert ds.features.shape == (150, 5)
        np.testing.assert_array_equal(ds.labels.sum(axis=0), [50, 50, 50])

    def test_blobs_are_seeded(self):
        a, b = gaussian_blobs(3, 10, seed=4), gaussian_blobs(3, 10, seed=4)
        np.testing.assert_array_equal(a.features, b.features)
        assert not np.array_equal(a.features, gaussian_blobs(3, 10, seed=5).features)

    def test_zero_spread_sits_on_means(self):
        ds = gaussian_blobs(3, 4, dim=2, spread=0.0, seed=0)
        np.testing.assert_allclose(ds.features, class_means(3, 2, 3.0)[ds.label_index])

    def test_ring_norms(self):
        ds = ood_ring(500, 6, 8.0, seed=2, width=0.1)
        r = np.linalg.norm(ds.features, axis=1)
        assert r.min() >= 7.2 and r.max() <= 8.8
        assert ds.is_ood.all() and ds.labels.sum() == 0

    @pytest.mark.parametrize("kwargs", [{"num_classes": 1}, {"dim": 1}, {"spread": -1.0}])
    def test_blob_validation(self, kwargs):
        args = {"num_classes": 3, "n_per_class": 5, "dim": 2, "spread": 1.0} | kwargs
        with pytest.raises(ValueError):
            gaussian_blobs(**args)


class TestNoise:
    def test_levels_and_origin(self):
        ds = gaussian_blobs(2, 20, seed=0)
        noisy = add_noise(ds, DEFAULT_NOISE_SIGMAS, seed=1)
        assert len(noisy) == 8
        assert noisy[0].origin[0] == "noisy(0.025)"
        np.testing.assert_array_equal(noisy[3].labels, ds.labels)

    def test_noise_scale(self):
        ds = gaussian_blobs(2, 5000, seed=0)
        (noisy,) = add_noise(ds, [0.2], seed=1)
        assert (noisy.features - ds.features).std() == pytest.approx(0.2, rel=0.02)

    def test_zero_sigma_is_identity(self):
        ds = gaussian_blobs(2, 5, seed=0)
        np.testing.assert_array_equal(add_noise(ds, [0.0])[0].features, ds.features)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_noise(gaussian_blobs(2, 5), [-0.1])


class TestSplit:
    def test_partition_and_stratification(self):
        ds = gaussian_blobs(3, 100, seed=0)
        parts = stratified_split(ds, [0.65, 0.05, 0.3], seed=1)
        assert sum(len(p) for p in parts) == 300
        np.testing.assert_array_equal(parts[1].labels.sum(axis=0), [5, 5, 5])
        np.testing.assert_array_equal(parts[2].labels.sum(axis=0), [30, 30, 30])
        rows = np.concatenate([p.features for p in parts])
        assert np.unique(rows, axis=0).shape[0] == 300

    def test_seeded(self):
        ds = gaussian_blobs(2, 30, seed=0)
        a = stratified_split(ds, [0.5, 0.5], seed=3)
        b = stratified_split(ds, [0.5, 0.5], seed=3)
        np.testing.assert_array_equal(a[0].features, b[0].features)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(ValueError):
            stratified_split(gaussian_blobs(2, 10), [0.5, 0.4])


class TestStandardizer:
    def test_train_statistics(self):
        x = np.random.default_rng(0).normal(3.0, 2.0, size=(500, 3))
        st = Standardizer.fit(x)
        z = st(x)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(z.std(axis=0), 1.0)

    def test_constant_column(self):
        st = Standardizer.fit(np.ones((4, 2)))
        np.testing.assert_array_equal(st(np.ones((1, 2))), 0.0)


class TestCsv:
    def test_round_trip_is_exact(self, tmp_path):
        ds = LabeledDataset.concat([gaussian_blobs(3, 5, dim=3, seed=0), ood_ring(4, 3, 6.0, num_classes=3)])
        write_csv(ds, tmp_path / "d.csv")
        back = read_csv(tmp_path / "d.csv", num_classes=3)
        np.testing.assert_array_equal(back.features, ds.features)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert list(back.origin) == list(ds.origin)

    def test_header(self, tmp_path):
        write_csv(gaussian_blobs(2, 1, dim=2), tmp_path / "d.csv")
        assert (tmp_path / "d.csv").read_text().splitlines()[0] == "x0,x1,label,origin"

    def test_bad_header(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(tmp_path / "d.csv")
