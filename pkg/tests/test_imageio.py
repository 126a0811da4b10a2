import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anomalyhop.errors import CorruptInputError, DatasetNotFoundError
from anomalyhop.imageio import (
    inject_anomaly,
    load_mvtec_class,
    resize_bilinear,
    resize_nearest,
    save_png,
    synth_texture,
    write_synthetic_class,
)


def _bilinear_reference(img, out_h, out_w):
    """Direct per-pixel evaluation of the half-pixel sampling formula."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            y = min(max((i + 0.5) * h / out_h - 0.5, 0.0), h - 1)
            x = min(max((j + 0.5) * w / out_w - 0.5, 0.0), w - 1)
            y0, x0 = int(np.floor(y)), int(np.floor(x))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = y - y0, x - x0
            out[i, j] = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
                         + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
    return out


class TestResize:
    def test_identity_is_bit_equal(self):
        img = np.random.default_rng(0).uniform(size=(17, 23, 3))
        assert np.array_equal(resize_bilinear(img, 17, 23), img)

    @pytest.mark.parametrize("size", [(1, 1), (5, 9), (64, 31), (300, 7)])
    def test_constant_stays_constant(self, size):
        img = np.full((20, 20, 2), 0.7)
        out = resize_bilinear(img, *size)
        assert out.shape == size + (2,)
        np.testing.assert_allclose(out, 0.7, rtol=0, atol=1e-15)

    def test_ramp_4x4_to_2x2(self):
        ramp = np.arange(16, dtype=float).reshape(4, 4)
        # sample centers land at 0.5 and 2.5 on both axes
        expected = np.array([[2.5, 4.5], [10.5, 12.5]])
        np.testing.assert_allclose(resize_bilinear(ramp, 2, 2), expected, atol=1e-15)
        np.testing.assert_allclose(_bilinear_reference(ramp, 2, 2), expected, atol=1e-15)

    def test_matches_direct_formula_on_random_sizes(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(size=(9, 13))
        for out in [(4, 5), (18, 26), (7, 30)]:
            np.testing.assert_allclose(resize_bilinear(img, *out), _bilinear_reference(img, *out), atol=1e-14)

    def test_rejects_empty_target(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.zeros((4, 4)), 0, 3)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), st.integers(1, 40), st.integers(1, 40))
    def test_constant_property(self, value, oh, ow):
        out = resize_bilinear(np.full((11, 7), value), oh, ow)
        np.testing.assert_allclose(out, value, atol=1e-15)


class TestSynthTexture:
    def test_sinusoid_deterministic(self):
        assert np.array_equal(synth_texture("sinusoid", 128, 1), synth_texture("sinusoid", 128, 1))
        assert not np.array_equal(synth_texture("sinusoid", 128, 1), synth_texture("sinusoid", 128, 2))

    def test_checker_two_levels(self):
        assert len(np.unique(synth_texture("checker", 64, 0))) == 2

    def test_noise_mean(self):
        img = synth_texture("noise", 64, 7)
        assert abs(img.sum() / img.size - 0.5) < 0.02

    @pytest.mark.parametrize("kind", ["sinusoid", "checker", "noise"])
    def test_range(self, kind):
        img = synth_texture(kind, 48, 4, angle=30)
        assert img.shape == (48, 48, 1)
        assert img.min() >= 0 and img.max() <= 1

    def test_bad_args(self):
        with pytest.raises(ValueError):
            synth_texture("stripes", 64, 0)
        with pytest.raises(ValueError):
            synth_texture("noise", 16, 0)


class TestInjectAnomaly:
    def test_single_pixel(self):
        _, mask = inject_anomaly(np.zeros((8, 8, 1)), (3, 4, 1, 1))
        assert mask.sum() == 1

    def test_constant(self):
        img = synth_texture("sinusoid", 64, 0)
        out, mask = inject_anomaly(img, (5, 7, 10, 10), "constant", 1.0)
        assert np.count_nonzero(out[5:15, 7:17] == 1.0) == 100
        assert mask.sum() == 100 and mask[5:15, 7:17].all()

    def test_invert_checker(self):
        img = synth_texture("checker", 64, 0)
        out, _ = inject_anomaly(img, (10, 12, 8, 9), "invert")
        np.testing.assert_array_equal(out[10:18, 12:21], 1.0 - img[10:18, 12:21])

    @pytest.mark.parametrize("rect", [(0, 0, 0, 3), (60, 0, 5, 5), (-1, 0, 2, 2), (0, 62, 1, 3)])
    def test_invalid_rect(self, rect):
        with pytest.raises(ValueError):
            inject_anomaly(np.zeros((64, 64, 1)), rect)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 40), st.integers(0, 40), st.integers(1, 24), st.integers(1, 24),
           st.sampled_from(["invert", "constant"]))
    def test_outside_rect_untouched(self, r, c, h, w, mode):
        img = synth_texture("sinusoid", 64, 5)
        out, mask = inject_anomaly(img, (r, c, h, w), mode, 0.3)
        outside = mask[:, :, 0] == 0
        assert np.array_equal(out[outside], img[outside])
        assert set(np.unique(mask)) <= {0.0, 1.0}
        assert mask.sum() == h * w


def _tiny_tree(root):
    base = root / "widget"
    train = np.full((64, 64, 3), 0.5)
    save_png(train, base / "train" / "good" / "000.png")
    defect = train.copy()
    defect[10:30, 20:40] = 1.0
    save_png(defect, base / "test" / "scratch" / "000.png")
    mask = np.zeros((64, 64))
    mask[10:30, 20:40] = 1.0
    save_png(mask, base / "ground_truth" / "scratch" / "000_mask.png")
    return mask


class TestLoadMvtec:
    def test_two_image_fixture(self, tmp_path):
        mask = _tiny_tree(tmp_path)
        split = load_mvtec_class(tmp_path, "widget", 32)
        assert len(split.train) == 1 and len(split.test) == 1
        sample = split.test[0]
        assert sample.label == "anomalous" and sample.defect_name == "scratch"
        assert sample.image.shape == (32, 32, 3)
        # nearest-neighbour pulls source row/col floor((i + 0.5) * 2) = 2i + 1
        src = np.arange(32) * 2 + 1
        expected = int(sum(mask[r, c] for r in src for c in src))
        assert expected == 100
        assert sample.mask.sum() == expected
        assert set(np.unique(sample.mask)) <= {0.0, 1.0}

    def test_gray_mode(self, tmp_path):
        _tiny_tree(tmp_path)
        split = load_mvtec_class(tmp_path, "widget", 40, color_mode="gray")
        assert split.train[0].image.shape == (40, 40, 1)

    def test_synthetic_tree_labels(self, tmp_path):
        write_synthetic_class(tmp_path, "syn", n_train=4, n_test=4, size=64, rect=8)
        split = load_mvtec_class(tmp_path, "syn", 64, threads=2)
        assert all(s.label == "normal" for s in split.train)
        labels = sorted(s.label for s in split.test)
        assert labels == ["anomalous", "anomalous", "normal", "normal"]
        for s in split.test:
            assert set(np.unique(s.mask)) <= {0.0, 1.0}
            if s.label == "normal":
                assert s.mask.sum() == 0
            else:
                assert s.mask.sum() == 64

    def test_missing_class(self, tmp_path):
        with pytest.raises(DatasetNotFoundError):
            load_mvtec_class(tmp_path, "nothing", 32)

    def test_empty_train_dir(self, tmp_path):
        (tmp_path / "empty" / "train" / "good").mkdir(parents=True)
        with pytest.raises(DatasetNotFoundError):
            load_mvtec_class(tmp_path, "empty", 32)

    def test_corrupt_file_named(self, tmp_path):
        _tiny_tree(tmp_path)
        bad = tmp_path / "widget" / "train" / "good" / "001.png"
        bad.write_bytes(b"not a png")
        with pytest.raises(CorruptInputError, match="001.png"):
            load_mvtec_class(tmp_path, "widget", 32)


def test_resize_nearest_picks_centers():
    img = np.arange(16).reshape(4, 4)
    np.testing.assert_array_equal(resize_nearest(img, 2, 2), [[5, 7], [13, 15]])
