import numpy as np
import pytest

from texweave.data import (AugmentParams, DataError, apply_augment, augment,
                           histogram_match, load_dataset,
                           make_synthetic_dataset, save_manifest,
                           load_manifest, synth_texture)
from texweave.imgio import save_image


def _write_images(tmp_path, n, size=140, prefix="img"):
    rng = np.random.default_rng(9)
    paths = []
    for i in range(n):
        img = rng.uniform(-1, 1, size=(size, size, 3)).astype(np.float32)
        p = tmp_path / f"{prefix}_{i}.png"
        save_image(img, p)
        paths.append(p)
    return paths


class TestLoadDataset:
    def test_split_ratio_arithmetic(self, tmp_path):
        _write_images(tmp_path, 10)
        train, test = load_dataset(tmp_path, split_ratio=0.9, seed=7)
        assert len(train) == 9 and len(test) == 1

    def test_split_deterministic(self, tmp_path):
        _write_images(tmp_path, 10)
        a = load_dataset(tmp_path, split_ratio=0.9, seed=7)
        b = load_dataset(tmp_path, split_ratio=0.9, seed=7)
        assert a[0].keys() == b[0].keys()
        assert a[1].keys() == b[1].keys()

    def test_split_is_partition(self, tmp_path):
        _write_images(tmp_path, 12)
        train, test = load_dataset(tmp_path, split_ratio=0.75, seed=3)
        train_keys, test_keys = set(train.keys()), set(test.keys())
        assert not (train_keys & test_keys)
        assert len(train_keys | test_keys) == 12

    def test_image_smaller_than_patch_is_fatal(self, tmp_path):
        _write_images(tmp_path, 1, size=64)
        with pytest.raises(DataError):
            load_dataset(tmp_path, patch_size=128)

    def test_unreadable_file_skipped_with_warning(self, tmp_path):
        _write_images(tmp_path, 3)
        (tmp_path / "broken.png").write_bytes(b"not a png")
        with pytest.warns(UserWarning, match="broken"):
            train, test = load_dataset(tmp_path, split_ratio=0.5, seed=0)
        assert len(train) + len(test) == 3

    def test_no_valid_images_is_fatal(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)

    def test_manifest_round_trip(self, tmp_path):
        _write_images(tmp_path, 6)
        train, test = load_dataset(tmp_path, split_ratio=0.5, seed=1)
        mpath = tmp_path / "manifest.json"
        save_manifest(train, test, mpath)
        train2, test2 = load_manifest(mpath)
        assert train2.keys() == train.keys()
        assert test2.keys() == test.keys()


class TestHistogramMatch:
    def test_identity_reference(self, rng):
        a = rng.uniform(-1, 1, size=(16, 16, 3)).astype(np.float32)
        out = histogram_match(a, a)
        assert np.allclose(out, a, atol=1e-6)

    def test_constant_to_constant(self):
        a = np.full((8, 8, 3), 0.3, dtype=np.float32)
        b = np.full((8, 8, 3), -0.6, dtype=np.float32)
        assert np.allclose(histogram_match(a, b), b)

    def test_two_pixel_rank_mapping(self):
        # hand-computed: ranks of [0, 1] map onto sorted ref [.25, .75]
        src = np.array([[[0.0] * 3, [1.0] * 3]], dtype=np.float32)
        ref = np.array([[[0.25] * 3, [0.75] * 3]], dtype=np.float32)
        out = histogram_match(src, ref)
        assert np.allclose(out[0, 0], 0.25)
        assert np.allclose(out[0, 1], 0.75)

    def test_idempotent(self, rng):
        a = rng.uniform(-1, 1, size=(12, 12, 3)).astype(np.float32)
        b = rng.uniform(-1, 1, size=(12, 12, 3)).astype(np.float32)
        once = histogram_match(a, b)
        twice = histogram_match(once, b)
        assert np.allclose(once, twice, atol=1e-6)

    def test_output_values_match_reference_distribution(self, rng):
        a = rng.uniform(-1, 1, size=(10, 10, 3)).astype(np.float32)
        b = rng.uniform(-1, 1, size=(10, 10, 3)).astype(np.float32)
        out = histogram_match(a, b)
        for c in range(3):
            assert np.allclose(np.sort(out[..., c].ravel()),
                               np.sort(b[..., c].ravel()), atol=1e-6)


class TestAugment:
    def test_noop_params_is_plain_crop(self, rng):
        img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
        params = AugmentParams(crop_rc=(5, 9))
        out = apply_augment(img, params, 32)
        assert np.allclose(out, img[5:37, 9:41])

    def test_deterministic(self, rng):
        img = rng.uniform(-1, 1, size=(100, 100, 3)).astype(np.float32)
        a = augment(img, seed=21, patch_size=32)
        b = augment(img, seed=21, patch_size=32)
        assert np.array_equal(a, b)

    def test_output_contract(self, rng):
        img = rng.uniform(-1, 1, size=(150, 150, 3)).astype(np.float32)
        for seed in range(10):
            out = augment(img, seed=seed, patch_size=32)
            assert out.shape == (32, 32, 3)
            assert out.min() >= -1.0 and out.max() <= 1.0

    def test_downscale_by_four_geometry(self, rng):
        # 256px source downscaled x4 leaves a 64px image; a 32px crop
        # window must still be honored
        img = rng.uniform(-1, 1, size=(256, 256, 3)).astype(np.float32)
        params = AugmentParams(downscale=4.0, crop_rc=(10, 20))
        out = apply_augment(img, params, 32)
        assert out.shape == (32, 32, 3)

    def test_crop_window_violation_raises(self, rng):
        img = rng.uniform(-1, 1, size=(40, 40, 3)).astype(np.float32)
        params = AugmentParams(crop_rc=(30, 30))
        with pytest.raises(DataError):
            apply_augment(img, params, 32)


class TestSynthTexture:
    def test_stripes_periodicity(self):
        img = synth_texture("stripes", {"period": 8, "angle_deg": 0.0},
                            64, seed=5)
        assert np.allclose(img[:-8], img[8:])

    def test_checker_two_valued_and_period(self):
        img = synth_texture("checker", {"period": 4}, 32, seed=5)
        vals = np.unique(img.reshape(-1, 3), axis=0)
        assert len(vals) == 2
        # value changes exactly at multiples of 4 along both axes
        for r in range(31):
            changed = not np.array_equal(img[r], img[r + 1])
            assert changed == ((r + 1) % 4 == 0)

    def test_noise_octaves_seeds_decorrelated(self):
        # pixelwise correlation of the spatial fields, channel means
        # removed so the random color pairs do not dominate
        a = synth_texture("noise-octaves", {}, 64, seed=1)
        b = synth_texture("noise-octaves", {}, 64, seed=2)
        corrs = []
        for c in range(3):
            x, y = a[..., c].ravel(), b[..., c].ravel()
            corrs.append(abs(np.corrcoef(x - x.mean(),
                                         y - y.mean())[0, 1]))
        assert np.mean(corrs) < 0.2

    def test_unknown_family(self):
        with pytest.raises(DataError):
            synth_texture("plaid", {}, 64, seed=0)

    def test_deterministic(self):
        a = synth_texture("dots", {}, 48, seed=9)
        b = synth_texture("dots", {}, 48, seed=9)
        assert np.array_equal(a, b)

    def test_all_families_in_range(self):
        for family in ("stripes", "checker", "blobs", "noise-octaves",
                       "dots"):
            img = synth_texture(family, {}, 64, seed=3)
            assert img.shape == (64, 64, 3)
            assert img.min() >= -1.0 and img.max() <= 1.0


def test_synthetic_dataset_split_disjoint():
    train, test = make_synthetic_dataset(["stripes", "checker"], 6, 64,
                                         seed=2)
    assert not (set(train.keys()) & set(test.keys()))
    assert len(train) + len(test) == 12
    assert all(it.label in ("stripes", "checker") for it in train.items)
