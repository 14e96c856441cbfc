from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from nasvit.dataset import (
    CLASS_NAMES,
    IMAGENET_MEAN,
    IMAGENET_STD,
    AugmentConfig,
    DatasetManifest,
    augment,
    batches,
    denormalize,
    hflip,
    largest_remainder,
    load_resize,
    normalize,
    resize_bilinear,
    scan_directory,
    stratified_split,
    write_manifest_csv,
)
from nasvit.errors import ConfigError, ContractError, InputError
from nasvit.imageio import read_image, write_png
from nasvit.mixprocessing import ImageBuffer, PreprocessConfig

NO_AUG = AugmentConfig(hflip_prob=0.0, rotation_max_deg=0.0, scale_range=(1.0, 1.0), brightness_delta_max=0.0)
FAST = PreprocessConfig(
    enable_wavelet=False, enable_clahe=False, enable_fourier=False, enable_bilateral=False, enable_morphology=False
)


def make_tree(root, per_class=10, names=CLASS_NAMES, size=8):
    r = np.random.default_rng(0)
    for name in names:
        for k in range(per_class):
            write_png(root / name / f"img_{k:03d}.png", r.random((size, size)))
    return root


def fake_manifest(per_class):
    samples = [(f"{CLASS_NAMES[c]}/{k:03d}.png", c) for c, n in enumerate(per_class) for k in range(n)]
    return DatasetManifest("/nowhere", samples)


class TestScan:
    def test_counts(self, tmp_path):
        m = scan_directory(make_tree(tmp_path))
        assert len(m.samples) == 50
        assert m.class_counts() == [10] * 5

    def test_sorted_and_repeatable(self, tmp_path):
        make_tree(tmp_path, per_class=3)
        a, b = scan_directory(tmp_path), scan_directory(tmp_path)
        assert a == b
        assert a.samples == sorted(a.samples)

    def test_unknown_dir_named(self, tmp_path):
        make_tree(tmp_path, per_class=1)
        (tmp_path / "misc").mkdir()
        with pytest.raises(InputError, match="misc"):
            scan_directory(tmp_path)

    def test_missing_dir_lists_expected(self, tmp_path):
        make_tree(tmp_path, per_class=1, names=CLASS_NAMES[:4])
        with pytest.raises(InputError, match="lung_cancer") as info:
            scan_directory(tmp_path)
        assert all(n in str(info.value) for n in CLASS_NAMES)

    def test_no_images(self, tmp_path):
        for n in CLASS_NAMES:
            (tmp_path / n).mkdir()
        with pytest.raises(InputError, match="no images"):
            scan_directory(tmp_path)

    def test_ignores_non_images(self, tmp_path):
        make_tree(tmp_path, per_class=2)
        (tmp_path / "normal" / "notes.txt").write_text("x")
        assert len(scan_directory(tmp_path).samples) == 10


class TestSplit:
    def test_exact_proportions(self):
        m = stratified_split(fake_manifest([100] * 5), (0.7, 0.15, 0.15), seed=0)
        for split, n in (("train", 70), ("val", 15), ("test", 15)):
            assert m.class_counts(split) == [n] * 5

    def test_largest_remainder_seven(self):
        assert largest_remainder(7, (0.7, 0.15, 0.15)) == [5, 1, 1]

    def test_seven_samples_split(self):
        m = stratified_split(fake_manifest([7] * 5), (0.7, 0.15, 0.15), seed=3)
        assert [m.class_counts(s)[0] for s in ("train", "val", "test")] == [5, 1, 1]

    def test_deterministic(self):
        a = stratified_split(fake_manifest([20] * 5), seed=9)
        b = stratified_split(fake_manifest([20] * 5), seed=9)
        c = stratified_split(fake_manifest([20] * 5), seed=10)
        assert a.split == b.split
        assert a.split != c.split

    def test_too_few_samples(self):
        with pytest.raises(InputError, match="pneumonia"):
            stratified_split(fake_manifest([5, 2, 5, 5, 5]))

    @pytest.mark.parametrize("fractions", [(0.5, 0.5, 0.0), (0.7, 0.2, 0.2), (0.5, 0.5)])
    def test_bad_fractions(self, fractions):
        with pytest.raises(ConfigError):
            stratified_split(fake_manifest([5] * 5), fractions)

    @given(
        st.lists(st.integers(3, 60), min_size=5, max_size=5),
        st.tuples(st.floats(0.05, 1), st.floats(0.05, 1), st.floats(0.05, 1)),
        st.integers(0, 2**32 - 1),
    )
    def test_partition_and_stratification(self, counts, raw, seed):
        total = sum(raw)
        fr = (raw[0] / total, raw[1] / total, 1 - raw[0] / total - raw[1] / total)
        m = stratified_split(fake_manifest(counts), fr, seed)
        assert all(s in ("train", "val", "test") for s in m.split)
        for c, n in enumerate(counts):
            for s, f in zip(("train", "val", "test"), fr):
                assert abs(m.class_counts(s)[c] - n * f) <= 1

    def test_manifest_csv(self, tmp_path):
        m = stratified_split(fake_manifest([3] * 5))
        write_manifest_csv(m, tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "path,class,split"
        assert len(lines) == 16
        assert lines[1].split(",")[1] == "normal"


class TestGeometry:
    def test_identity_resize(self, tmp_path):
        px = np.random.default_rng(0).random((224, 224))
        write_png(tmp_path / "a.png", px)
        out = load_resize(tmp_path / "a.png", (224, 224))
        np.testing.assert_allclose(out.pixels[..., 0], read_image(tmp_path / "a.png")[..., 0], atol=1e-6)

    def test_constant_downscale(self, tmp_path):
        write_png(tmp_path / "c.png", np.full((448, 448), 100 / 255))
        out = load_resize(tmp_path / "c.png", (224, 224))
        assert out.pixels.shape == (224, 224, 3)
        np.testing.assert_allclose(out.pixels, 100 / 255, atol=1e-6)

    def test_two_by_two_upscale(self):
        # half-pixel centres: output centre (1.5, 1.5) maps to source (0.5, 0.5)
        # inner 2x2 block samples the source at 0.25 / 0.75 offsets
        out = resize_bilinear(np.array([[0.0, 1.0], [1.0, 0.0]])[..., None], (4, 4))[..., 0]
        np.testing.assert_allclose(out[1:3, 1:3], [[0.375, 0.625], [0.625, 0.375]], atol=1e-7)
        assert out[1:3, 1:3].mean() == pytest.approx(0.5)

    def test_grayscale_replicated(self, tmp_path):
        write_png(tmp_path / "g.png", np.random.default_rng(1).random((8, 8)))
        out = load_resize(tmp_path / "g.png", (8, 8))
        assert out.channels == 3
        np.testing.assert_array_equal(out.pixels[..., 0], out.pixels[..., 2])

    def test_undecodable(self, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(InputError, match="bad.png"):
            load_resize(bad)

    def test_rgb_read(self, tmp_path):
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "rgb.jpg")
        assert read_image(tmp_path / "rgb.jpg").shape == (4, 4, 3)


class TestNormalize:
    def _img(self, rgb):
        return ImageBuffer(np.broadcast_to(np.asarray(rgb, dtype=np.float32), (2, 2, 3)))

    def test_channel_means_give_zero(self):
        out = normalize(self._img(IMAGENET_MEAN)).data
        assert np.all(out == 0.0)

    def test_red_mean(self):
        assert normalize(self._img([0.485, 0.0, 0.0])).data[0, 0, 0] == 0.0

    def test_green_unit(self):
        out = normalize(self._img([0.0, 0.456 + 0.224, 0.0])).data
        assert out[1, 0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_blue_zero_pixel(self):
        out = normalize(self._img([0.0, 0.0, 0.0])).data
        assert out[2, 0, 0] == pytest.approx(-0.406 / 0.225, abs=1e-6)
        assert round(-0.406 / 0.225, 5) == -1.80444

    def test_constants(self):
        np.testing.assert_array_equal(IMAGENET_MEAN, np.float32([0.485, 0.456, 0.406]))
        np.testing.assert_array_equal(IMAGENET_STD, np.float32([0.229, 0.224, 0.225]))

    def test_needs_three_channels(self):
        with pytest.raises(InputError):
            normalize(ImageBuffer(np.zeros((2, 2))))

    @given(st.integers(0, 2**32 - 1))
    def test_round_trip(self, seed):
        img = ImageBuffer(np.random.default_rng(seed).random((5, 4, 3)))
        np.testing.assert_allclose(denormalize(normalize(img)).pixels, img.pixels, atol=1e-6)


class TestAugment:
    def test_zero_magnitudes_identity(self, rng):
        img = ImageBuffer(rng.random((16, 16, 3)))
        np.testing.assert_array_equal(augment(img, NO_AUG, 4, 1).pixels, img.pixels)

    def test_hflip_involution(self, rng):
        img = ImageBuffer(rng.random((5, 7, 3)))
        np.testing.assert_array_equal(hflip(hflip(img)).pixels, img.pixels)

    def test_flip_only(self, rng):
        img = ImageBuffer(rng.random((6, 6, 3)))
        cfg = AugmentConfig(hflip_prob=1.0, rotation_max_deg=0.0, scale_range=(1.0, 1.0), brightness_delta_max=0.0)
        np.testing.assert_array_equal(augment(img, cfg, 0).pixels, img.pixels[:, ::-1])

    def test_deterministic(self, rng):
        img = ImageBuffer(rng.random((16, 16, 3)))
        cfg = AugmentConfig(seed=5)
        assert augment(img, cfg, 3, 2).pixels.tobytes() == augment(img, cfg, 3, 2).pixels.tobytes()
        assert augment(img, cfg, 3, 2).pixels.tobytes() != augment(img, cfg, 3, 3).pixels.tobytes()

    def test_range_and_shape(self, rng):
        img = ImageBuffer(rng.random((16, 16, 3)))
        cfg = AugmentConfig(brightness_delta_max=0.5, rotation_max_deg=30)
        for i in range(20):
            out = augment(img, cfg, i)
            assert out.pixels.shape == img.pixels.shape
            assert out.pixels.min() >= 0 and out.pixels.max() <= 1

    def test_brightness_shift(self):
        img = ImageBuffer(np.full((4, 4, 3), 0.5))
        cfg = AugmentConfig(hflip_prob=0.0, rotation_max_deg=0.0, scale_range=(1.0, 1.0), brightness_delta_max=0.2)
        out = augment(img, cfg, 0).pixels
        assert np.ptp(out) == 0.0
        assert 0.3 <= out[0, 0, 0] <= 0.7

    @pytest.mark.parametrize(
        "kwargs", [dict(hflip_prob=1.5), dict(scale_range=(1.1, 1.2)), dict(rotation_max_deg=-1.0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            AugmentConfig(**kwargs)


class TestBatches:
    @pytest.fixture
    def manifest(self, tmp_path):
        make_tree(tmp_path, per_class=10)
        return stratified_split(scan_directory(tmp_path), seed=1)

    def test_batch_sizes(self, tmp_path):
        make_tree(tmp_path, per_class=2)
        m = scan_directory(tmp_path)
        m.split = ["test"] * len(m.samples)
        sizes = [len(b.labels) for b in batches(m, "test", 4, FAST, image_size=8)]
        assert sizes == [4, 4, 2]

    def test_shapes_and_labels(self, manifest):
        b = next(batches(manifest, "val", 3, FAST, image_size=16))
        assert b.images.shape == (3, 3, 16, 16)
        assert b.labels == [manifest.samples[i][1] for i in b.indices]

    def test_val_fixed_order_bitwise(self, manifest):
        run = lambda: [b.images.data.tobytes() for b in batches(manifest, "val", 4, FAST, image_size=8)]  # noqa: E731
        assert run() == run()
        order = [i for b in batches(manifest, "val", 4, FAST, image_size=8) for i in b.indices]
        assert order == manifest.indices("val")

    def test_train_epochs_permute(self, manifest):
        def order(epoch):
            return [i for b in batches(manifest, "train", 8, FAST, epoch=epoch, image_size=8) for i in b.indices]

        e1, e2 = order(1), order(2)
        assert e1 != e2
        assert Counter(e1) == Counter(e2) == Counter(manifest.indices("train"))
        assert order(1) == e1

    def test_augment_only_on_train(self, manifest):
        with pytest.raises(ContractError):
            next(batches(manifest, "val", 4, FAST, aug=AugmentConfig()))

    def test_cache_gives_same_tensors(self, manifest):
        cache = {}
        first = [b.images.data.tobytes() for b in batches(manifest, "test", 5, FAST, image_size=8, cache=cache)]
        assert len(cache) == len(manifest.indices("test"))
        again = [b.images.data.tobytes() for b in batches(manifest, "test", 5, FAST, image_size=8, cache=cache)]
        assert first == again

    def test_missing_file_names_path(self, manifest):
        victim = manifest.path(manifest.indices("test")[0])
        victim.unlink()
        with pytest.raises(InputError, match=victim.name):
            list(batches(manifest, "test", 4, FAST, image_size=8))
