import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vialnet import augment as A
from vialnet.data import synth_generate
from vialnet.errors import DatasetError, TransformError

images = arrays(np.uint8, st.tuples(st.integers(3, 12), st.integers(3, 12), st.just(3)))


def spec(kind, **params):
    return A.TransformSpec(kind, params)


@pytest.fixture(scope="module")
def originals():
    return synth_generate(5, 32, seed=2)


class TestKernels:
    def test_posterize_8_identity(self):
        img = np.arange(256, dtype=np.uint8).reshape(16, 16, 1).repeat(3, axis=2)
        np.testing.assert_array_equal(A.apply_transform(img, spec("posterize", bits=8)), img)

    def test_posterize_keeps_top_bits(self):
        img = np.full((2, 2, 3), 0b10110111, np.uint8)
        assert A.posterize(img, 2)[0, 0, 0] == 0b10000000
        assert A.posterize(img, 4)[0, 0, 0] == 0b10110000

    def test_invert(self):
        img = np.zeros((1, 2, 3), np.uint8)
        img[0, 1] = 100
        out = A.apply_transform(img, spec("invert"))
        assert out[0, 0, 0] == 255 and out[0, 1, 0] == 155

    def test_solarize(self):
        img = np.zeros((1, 3, 3), np.uint8)
        img[0, :, 0] = [50, 63, 100]
        out = A.apply_transform(img, spec("solarize", threshold=63))
        assert out[0, :, 0].tolist() == [50, 192, 155]

    def test_flips_are_involutions(self):
        img = np.random.default_rng(0).integers(0, 256, (5, 7, 3), dtype=np.uint8)
        np.testing.assert_array_equal(A.hflip(A.hflip(img)), img)
        np.testing.assert_array_equal(A.vflip(A.vflip(img)), img)
        np.testing.assert_array_equal(A.hflip(img)[:, 0], img[:, -1])

    def test_rotate_90_hand_oracle(self):
        img = np.zeros((2, 2, 3), np.uint8)
        img[..., 0] = [[10, 20], [30, 40]]
        # counter-clockwise quarter turn: top row becomes the right column read upward
        expected = np.array([[20, 40], [10, 30]])
        np.testing.assert_array_equal(A.rotate(img, 90)[..., 0], expected)

    def test_rotate_90_equals_rot90(self):
        img = np.random.default_rng(1).integers(0, 256, (9, 9, 3), dtype=np.uint8)
        np.testing.assert_array_equal(A.rotate(img, 90), np.rot90(img))
        np.testing.assert_array_equal(A.rotate(img, 0), img)

    def test_rotate_fills_corners_black(self):
        img = np.full((21, 21, 3), 200, np.uint8)
        out = A.rotate(img, 45)
        assert out[0, 0].tolist() == [0, 0, 0]
        assert out[10, 10].tolist() == [200, 200, 200]

    def test_blur_constant_image(self):
        img = np.full((10, 10, 3), 77, np.uint8)
        np.testing.assert_array_equal(A.gaussian_blur(img, 9, 3.0), img)

    def test_blur_kernel_normalized_and_symmetric(self):
        k = A.gaussian_kernel1d(5, 1.0)
        assert k.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(k, k[::-1])

    def test_sharpness_identity_and_smoothing(self):
        img = np.random.default_rng(2).integers(0, 256, (6, 6, 3), dtype=np.uint8)
        np.testing.assert_array_equal(A.sharpness(img, 1.0), img)
        smooth = A.sharpness(img, 0.0)
        np.testing.assert_array_equal(smooth[0], img[0])
        patch = img[1:4, 1:4, 0].astype(float)
        weights = np.array([[1, 1, 1], [1, 5, 1], [1, 1, 1]])
        assert smooth[2, 2, 0] == np.rint((patch * weights).sum() / 13)

    def test_autocontrast_stretches(self):
        img = np.zeros((1, 3, 3), np.uint8)
        img[0, :, 0] = [50, 100, 150]
        img[..., 1] = 9
        out = A.autocontrast(img)
        assert out[0, :, 0].tolist() == [0, 128, 255]
        assert out[0, :, 1].tolist() == [9, 9, 9]

    def test_equalize_spreads_two_levels(self):
        img = np.zeros((2, 2, 3), np.uint8)
        img[0] = 10
        img[1] = 20
        out = A.equalize(img)
        assert out[0, 0, 0] == 0 and out[1, 0, 0] == 255

    def test_equalize_uniform_ramp(self):
        img = np.zeros((3, 1, 3), np.uint8)
        img[:, 0, 0] = [0, 1, 2]
        # cdf 1, 2, 3 -> (cdf - 1) * 255 / 2
        assert A.equalize(img)[:, 0, 0].tolist() == [0, 128, 255]

    def test_equalize_constant_channel_kept(self):
        img = np.full((4, 4, 3), 42, np.uint8)
        np.testing.assert_array_equal(A.equalize(img), img)

    def test_crop_pad_scales(self):
        img = np.full((40, 40, 3), 255, np.uint8)
        out = A.crop_pad(img, 300, 50)
        # 300 / 400 of the side stays visible, centred
        assert out.shape == img.shape
        assert (out[..., 0] == 255).sum() == 30 * 30
        assert out[0, 0, 0] == 0 and out[5, 5, 0] == 255

    def test_zero_jitter_is_identity(self):
        img = np.random.default_rng(3).integers(0, 256, (8, 8, 3), dtype=np.uint8)
        s = spec("jitter", brightness=0.0, contrast=0.0, saturation=0.0, hue=0.0)
        np.testing.assert_array_equal(A.apply_transform(img, s, np.random.default_rng(0)), img)

    def test_nonzero_jitter_changes(self):
        img = np.random.default_rng(3).integers(0, 256, (8, 8, 3), dtype=np.uint8)
        out = A.apply_transform(img, spec("jitter", brightness=0.5, hue=0.2), np.random.default_rng(1))
        assert not np.array_equal(out, img)


class TestSpecValidation:
    @pytest.mark.parametrize("kind,params", [
        ("blur", {"kernel": 4, "sigma": 1.0}),
        ("blur", {"kernel": 5, "sigma": (0.05, 2.0)}),
        ("blur", {"kernel": 5, "sigma": (0.1, 6.0)}),
        ("posterize", {"bits": 0}),
        ("posterize", {"bits": 9}),
        ("solarize", {"threshold": 300}),
        ("sharpness", {"factor": -1}),
        ("rotate", {"angle": (50.0, 10.0)}),
        ("crop_pad", {"crop": 0, "pad": 1}),
        ("invert", {"bits": 2}),
        ("shear", {}),
    ])
    def test_rejected(self, kind, params):
        with pytest.raises(TransformError):
            A.TransformSpec(kind, params)

    def test_random_range_needs_rng(self):
        with pytest.raises(TransformError):
            A.apply_transform(np.zeros((4, 4, 3), np.uint8), spec("rotate", angle=(0.0, 90.0)))

    def test_image_type_checked(self):
        with pytest.raises(TransformError):
            A.apply_transform(np.zeros((4, 4, 3), np.float32), spec("invert"))


ALL_SPECS = [
    spec("rotate", angle=(0.0, 360.0)), spec("blur", kernel=5, sigma=(0.1, 5.0)), spec("posterize", bits=2),
    spec("sharpness", factor=3.0), spec("invert"), spec("solarize", threshold=127), spec("equalize"),
    spec("hflip"), spec("vflip"), spec("autocontrast"), spec("crop_pad", crop=350, pad=25, fill=0),
    spec("jitter", brightness=0.3, contrast=0.3, saturation=0.3, hue=0.1),
]


class TestProperties:
    @given(images, st.sampled_from(ALL_SPECS), st.integers(0, 2**32 - 1))
    @settings(max_examples=150, deadline=None)
    def test_dims_and_range_preserved(self, img, s, seed):
        out = A.apply_transform(img, s, np.random.default_rng(seed))
        assert out.shape == img.shape and out.dtype == np.uint8

    @given(images)
    @settings(max_examples=100, deadline=None)
    def test_equalize_nearly_idempotent(self, img):
        once = A.equalize(img)
        twice = A.equalize(once)
        assert np.abs(twice.astype(int) - once.astype(int)).max() <= 1

    @given(st.integers(0, 2**32 - 1), st.integers(8, 48))
    @settings(max_examples=60, deadline=None)
    def test_equalize_nearly_idempotent_skewed(self, seed, n):
        rng = np.random.default_rng(seed)
        img = (rng.beta(rng.uniform(0.3, 3), rng.uniform(0.3, 3), (n, n, 3)) * 255).astype(np.uint8)
        once = A.equalize(img)
        assert np.abs(A.equalize(once).astype(int) - once.astype(int)).max() <= 1

    @given(images, st.sampled_from([2, 4, 6, 8]))
    @settings(max_examples=100, deadline=None)
    def test_posterize_level_count(self, img, bits):
        out = A.posterize(img, bits)
        for c in range(3):
            assert len(np.unique(out[..., c])) <= 2 ** bits


class TestPipelines:
    def test_training_multiset(self):
        pipe = A.builtin_pipeline("train")
        assert pipe.total == 22
        kinds = [chain[0].kind for chain in pipe.steps()]
        counts = {k: kinds.count(k) for k in set(kinds)}
        assert counts == {"rotate": 5, "blur": 6, "posterize": 3, "sharpness": 1, "invert": 1, "solarize": 3,
                          "equalize": 1, "hflip": 1, "vflip": 1}
        kernels = sorted(c[0].params["kernel"] for c in pipe.steps() if c[0].kind == "blur")
        assert kernels == [5, 5, 5, 9, 9, 9]

    @pytest.mark.parametrize("set_id", [1, 2, 3, 4])
    def test_validation_totals(self, set_id):
        assert A.validation_pipeline(set_id).total == 10

    def test_set1_and_set4_contents(self):
        s1 = A.validation_pipeline(1).describe()
        assert s1.count("rotate angle=210:330") == 5 and s1.count("posterize bits=6") == 1
        s4 = A.validation_pipeline(4).describe()
        factors = [float(d.split("=")[1]) for d in s4 if d.startswith("sharpness")]
        assert factors == [0.5, 1.5, 2.5, 3, 4]
        assert s4.count("blur kernel=7 sigma=0.1:5") == 3
        assert "invert + hflip" in s4 and "invert + vflip" in s4

    def test_parse_errors(self):
        with pytest.raises(TransformError):
            A.parse_pipeline("two invert\n")
        with pytest.raises(TransformError):
            A.parse_pipeline("1 invert\n", expected_total=2)
        with pytest.raises(TransformError):
            A.parse_pipeline("1 rotate angle\n")
        with pytest.raises(TransformError):
            A.validation_pipeline(5)

    def test_parse_chain_and_comments(self):
        pipe = A.parse_pipeline("# comment\n2 rotate angle=1:2 + hflip  # trailing\n\n1 invert\n")
        assert pipe.total == 3
        assert [s.kind for s in pipe.steps()[0]] == ["rotate", "hflip"]


class TestBuilders:
    def test_single_original_gives_23(self, originals):
        assert len(A.build_training_set(originals.items[:1], seed=0)) == 23

    def test_training_set_structure(self, originals):
        ds = A.build_training_set(originals, seed=0)
        assert len(ds) == 23 * len(originals)
        for i, item in enumerate(ds.items):
            src = originals.items[i // 23]
            assert item.source == i // 23
            assert (item.fill, item.size) == (src.fill, src.size)
        np.testing.assert_array_equal(ds.items[0].image, originals.items[0].image)

    def test_training_set_deterministic(self, originals):
        a = A.build_training_set(originals.items[:3], seed=5)
        b = A.build_training_set(originals.items[:3], seed=5)
        c = A.build_training_set(originals.items[:3], seed=6)
        assert a.images().tobytes() == b.images().tobytes()
        assert a.images().tobytes() != c.images().tobytes()

    def test_order_independent_randomness(self, originals):
        # variants of an image do not depend on which other images are processed
        full = A.build_training_set(originals.items[:3], seed=1)
        alone = A.build_training_set(originals.items[:1], seed=1)
        assert full.images()[:23].tobytes() == alone.images().tobytes()

    @pytest.mark.parametrize("set_id", [1, 2, 3, 4])
    @pytest.mark.parametrize("n", [2, 4])
    def test_validation_set(self, originals, set_id, n):
        ds = A.build_validation_set(originals, set_id, n, seed=0)
        assert len(ds) == 200
        counts = ds.class_counts(n)
        assert set(counts.values()) == {200 // n}

    def test_validation_insufficient(self, originals):
        with pytest.raises(DatasetError):
            A.build_validation_set(originals.items[:8], 1, 4, seed=0)
