import numpy as np
import pytest

from dskernel.classify import KnnConfig, evaluate, knn_predict
from dskernel.data import (
    ImagePatchSpec,
    LabeledDataset,
    WishartSpec,
    box_muller,
    covariance_descriptor,
    dumps_spdset,
    eigenvalue_bias_experiment,
    feature_covariance,
    image_descriptors,
    load_dataset,
    loads_spdb,
    loads_spdset,
    loo_splits,
    make_rng,
    make_wishart_task,
    merge,
    pixel_features,
    read_pgm,
    sample_wishart,
    save_dataset,
    split,
    split_indices,
    stratified_folds,
    write_pgm,
)
from dskernel.errors import DegenerateCovariance, FormatError, InsufficientClassSamples
from dskernel.spd import stein_gram

from conftest import rand_spd


class TestDataset:
    def test_validation(self, rng):
        x = rand_spd(rng, 2)
        with pytest.raises(ValueError):
            LabeledDataset((x,), np.array([1, 2]))
        with pytest.raises(ValueError):
            LabeledDataset((x, rand_spd(rng, 3)), np.array([1, 2]))
        with pytest.raises(ValueError):
            LabeledDataset((x,), np.array([0]))

    def test_complete(self, rng):
        x = rand_spd(rng, 2)
        with pytest.raises(ValueError):
            LabeledDataset((x, x), np.array([1, 3])).check_complete()
        LabeledDataset((x, x), np.array([1, 2])).check_complete()

    def test_subset_and_merge(self, small_task):
        a = small_task.subset([0, 1, 6])
        assert np.array_equal(a.labels, [1, 1, 2])
        assert np.allclose(a.eig.vals, small_task.eig.vals[[0, 1, 6]])
        both = merge(a, small_task.subset([7]))
        assert len(both) == 4 and both.labels[-1] == 2

    def test_fingerprint(self, small_task):
        assert small_task.fingerprint == small_task.subset(np.arange(12)).fingerprint
        assert small_task.fingerprint != small_task.subset(np.arange(11)).fingerprint


class TestFiles:
    @pytest.mark.parametrize("suffix", [".spdset", ".spdb"])
    def test_round_trip(self, suffix, tmp_path, small_task):
        path = tmp_path / f"d{suffix}"
        save_dataset(small_task, path)
        back = load_dataset(path)
        assert np.array_equal(back.labels, small_task.labels)
        for a, b in zip(back.samples, small_task.samples):
            assert np.array_equal(a.entries, b.entries)

    def test_header(self, small_task):
        assert dumps_spdset(small_task).splitlines()[0] == "spdset v1 12 4 2"

    def test_bad_text(self, small_task):
        text = dumps_spdset(small_task)
        with pytest.raises(FormatError):
            loads_spdset(text.replace("spdset v1", "spdset v2", 1))
        with pytest.raises(FormatError):
            loads_spdset("\n".join(text.splitlines()[:-1]))
        with pytest.raises(FormatError):
            loads_spdset("spdset v1 1 2 1\n1\n1 2\n3 1\n")
        with pytest.raises(FormatError):
            loads_spdset("spdset v1 1 2 2\n1\n1 0\n0 1\n")

    def test_bad_binary(self):
        with pytest.raises(FormatError):
            loads_spdb(b"spdb v1 1 2 1\n" + b"\0" * 10)

    def test_unknown(self, tmp_path):
        p = tmp_path / "x"
        p.write_bytes(b"hello")
        with pytest.raises(FormatError):
            load_dataset(p)

    def test_pgm(self, tmp_path, rng):
        img = rng.integers(0, 256, (5, 7)).astype(float)
        write_pgm(tmp_path / "a.pgm", img)
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)
        (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(FormatError):
            read_pgm(tmp_path / "b.pgm")

    def test_pgm_comment(self, tmp_path):
        (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n255\n\x01\x02")
        assert np.array_equal(read_pgm(tmp_path / "c.pgm"), [[1.0, 2.0]])


class TestRandom:
    def test_box_muller(self):
        z = box_muller(make_rng(1), 200_000)
        assert abs(z.mean()) < 5 / np.sqrt(2e5)
        assert abs(z.var() - 1) < 5 * np.sqrt(2 / 2e5)

    def test_wishart_mean(self):
        n, d, count = 10, 3, 2000
        draws = np.stack([s.entries for s in sample_wishart(WishartSpec(d, n), count, 0)])
        dev = np.linalg.norm(draws.mean(axis=0) - n * np.eye(d))
        # entry variances: 2n on the diagonal, n off it
        sigma = np.sqrt((d * 2 * n + d * (d - 1) * n) / count)
        assert dev <= 5 * sigma

    def test_wishart_deterministic(self):
        a = sample_wishart(WishartSpec(2, 2), 5, 42)
        b = sample_wishart(WishartSpec(2, 2), 5, 42)
        assert all(np.array_equal(x.entries, y.entries) for x, y in zip(a, b))

    def test_chi_square_marginal(self):
        n, count = 7, 4000
        s11 = np.array([s.entries[0, 0] for s in sample_wishart(WishartSpec(3, n), count, 9)])
        assert abs(s11.mean() - n) <= 5 * np.sqrt(2 * n / count)
        var_sd = np.sqrt((12 * n * (n + 4) - 4 * n * n) / count)
        assert abs(s11.var(ddof=1) - 2 * n) <= 5 * var_sd

    def test_scale(self):
        scale = np.array([[2.0, 0.5], [0.5, 1.0]])
        draws = np.stack([s.entries for s in sample_wishart(WishartSpec(2, 5, scale), 3000, 3)])
        assert np.allclose(draws.mean(axis=0), 5 * scale, atol=0.4)

    def test_too_few_dof(self):
        with pytest.raises(ValueError):
            WishartSpec(3, 2)

    def test_task(self):
        ds = make_wishart_task(5, 200, 0.1, 10, 7)
        assert len(ds) == 20 and list(ds.classes) == [1, 2]
        with pytest.raises(ValueError):
            make_wishart_task(5, 200, 0.0, 10, 7)

    def test_easy_task(self):
        ds = make_wishart_task(5, 200, 100.0, 50, 1)
        tr, te = split(ds, 0.5, 0)
        kc = stein_gram(list(te.samples), list(tr.samples), theta=1.0)
        assert evaluate(knn_predict(kc, tr.labels, KnnConfig(1)), te.labels).accuracy >= 0.99

    def test_eigenvalue_bias_consistency(self):
        out = eigenvalue_bias_experiment(100_000, trials=2, seed=1)
        assert abs(out["mean_largest"] - 40) <= 2
        assert abs(out["mean_smallest"] - 1) <= 0.1


class TestDescriptors:
    def test_features_ramp(self):
        img = np.tile(np.arange(8.0), (6, 1))
        f = pixel_features(img).reshape(6, 8, 5)
        assert np.allclose(f[:, 1:-1, 1], 1.0) and np.allclose(f[:, :, 2], 0.0)
        assert np.allclose(f[:, 1:-1, 3], 0.0)

    def test_constant_patch(self):
        with pytest.raises(DegenerateCovariance):
            covariance_descriptor(np.full((8, 8), 3.0))

    def test_ridge_repair(self):
        img = np.tile(np.arange(8.0), (8, 1))
        with pytest.raises(DegenerateCovariance):
            covariance_descriptor(img, ImagePatchSpec(patch=(8, 8)))
        x = covariance_descriptor(img, ImagePatchSpec(patch=(8, 8), ridge=True))
        assert x.eigvals[-1] > 0

    def test_noise_features(self):
        n = 1024
        x = feature_covariance(box_muller(make_rng(5), (n, 5)))
        # entries of the sample covariance have standard deviation about 1/sqrt(n)
        assert np.max(np.abs(x.entries - np.eye(5))) <= 5 * np.sqrt(2 / n)

    def test_matches_numpy(self, rng):
        patch = rng.uniform(0, 255, (32, 32))
        x = covariance_descriptor(patch)
        assert np.allclose(x.entries, np.cov(pixel_features(patch), rowvar=False), rtol=1e-12)

    def test_fraction(self, rng):
        patch = rng.uniform(0, 255, (32, 32))
        spec = ImagePatchSpec(fraction=0.25)
        x = covariance_descriptor(patch, spec, seed=1)
        assert not np.allclose(x.entries, covariance_descriptor(patch).entries)
        assert np.array_equal(x.entries, covariance_descriptor(patch, spec, seed=1).entries)

    def test_grid(self, rng):
        img = rng.uniform(0, 255, (64, 64))
        out = image_descriptors(img, ImagePatchSpec(patch=(16, 16), grid=(4, 4)))
        assert len(out) == 16 and out[0].dim == 5
        resized = image_descriptors(rng.uniform(0, 255, (50, 70)), ImagePatchSpec(patch=(16, 16), grid=(2, 2)))
        assert len(resized) == 4


class TestSplits:
    def test_half(self):
        labels = np.array([1] * 4 + [2] * 4)
        tr, te = split_indices(labels, 0.5, 0)
        assert np.bincount(labels[tr]).tolist() == [0, 2, 2]
        assert np.bincount(labels[te]).tolist() == [0, 2, 2]

    def test_proportions(self, rng):
        labels = rng.integers(1, 4, 101)
        labels[:6] = [1, 1, 2, 2, 3, 3]
        tr, te = split_indices(labels, 0.3, 5)
        for c in (1, 2, 3):
            assert abs(np.sum(labels[tr] == c) - 0.3 * np.sum(labels == c)) <= 1

    def test_insufficient(self):
        with pytest.raises(InsufficientClassSamples):
            split_indices(np.array([1, 2, 2]), 0.5, 0)

    def test_loo(self):
        folds = loo_splits(5)
        assert len(folds) == 5
        assert sorted(int(te[0]) for _, te in folds) == list(range(5))
        assert all(len(tr) == 4 and te[0] not in tr for tr, te in folds)

    def test_seeds(self):
        labels = np.repeat([1, 2], 20)
        splits = [tuple(split_indices(labels, 0.5, s)[0]) for s in range(20)]
        assert len(set(splits)) == 20
        assert all(tuple(split_indices(labels, 0.5, s)[0]) == splits[s] for s in range(20))

    def test_folds(self):
        labels = np.repeat([1, 2], [6, 9])
        folds = stratified_folds(labels, 3, 0)
        assert sorted(np.concatenate(folds).tolist()) == list(range(15))
        for f in folds:
            assert np.sum(labels[f] == 1) == 2 and np.sum(labels[f] == 2) == 3
        with pytest.raises(InsufficientClassSamples):
            stratified_folds(labels, 7, 0)
