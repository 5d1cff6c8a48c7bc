import math

import numpy as np
import pytest

from aivision.features import appearance_embed, cosine_distance, crop_pixels
from aivision.geom import BBox


def solid_frame(color, h=60, w=80):
    frame = np.zeros((h, w, 3), dtype=np.uint8)
    frame[:, :] = color
    return frame


class TestCropPixels:
    def test_exact_crop(self):
        frame = np.arange(10 * 10 * 3, dtype=np.uint8).reshape(10, 10, 3)
        crop = crop_pixels(frame, BBox(2, 3, 4, 5))
        assert crop.shape == (5, 4, 3)
        assert np.array_equal(crop, frame[3:8, 2:6])

    def test_fractional_box_rounds_outward(self):
        frame = np.zeros((10, 10, 3), dtype=np.uint8)
        crop = crop_pixels(frame, BBox(2.4, 2.6, 1.2, 1.2))
        # floor(2.4)=2 .. ceil(3.6)=4 and floor(2.6)=2 .. ceil(3.8)=4
        assert crop.shape == (2, 2, 3)

    def test_clips_to_frame(self):
        frame = np.zeros((10, 10, 3), dtype=np.uint8)
        crop = crop_pixels(frame, BBox(-5, -5, 8, 8))
        assert crop.shape == (3, 3, 3)

    def test_fully_outside_raises(self):
        frame = np.zeros((10, 10, 3), dtype=np.uint8)
        with pytest.raises(ValueError, match="empty"):
            crop_pixels(frame, BBox(50, 50, 5, 5))


class TestAppearanceEmbed:
    def test_uniform_crop_single_bin(self):
        frame = solid_frame((100, 100, 100))
        vec = appearance_embed(frame, BBox(10, 10, 20, 20))
        assert np.count_nonzero(vec) == 1
        assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        frame = rng.integers(0, 256, size=(60, 80, 3), dtype=np.uint8)
        a = appearance_embed(frame, BBox(5, 5, 40, 30))
        b = appearance_embed(frame, BBox(5, 5, 40, 30))
        assert np.array_equal(a, b)

    def test_red_vs_blue_disjoint(self):
        red = appearance_embed(solid_frame((255, 0, 0)), BBox(0, 0, 20, 20))
        blue = appearance_embed(solid_frame((0, 0, 255)), BBox(0, 0, 20, 20))
        assert cosine_distance(red, blue) == pytest.approx(1.0)

    def test_unit_norm_always(self):
        rng = np.random.default_rng(11)
        frame = rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)
        for _ in range(20):
            x = rng.uniform(0, 30)
            y = rng.uniform(0, 30)
            vec = appearance_embed(frame, BBox(x, y, rng.uniform(4, 18), rng.uniform(4, 18)))
            assert np.linalg.norm(vec) == pytest.approx(1.0)

    def test_scale_invariant(self):
        # same solid color at different crop sizes lands in the same bin
        frame = solid_frame((37, 180, 91))
        small = appearance_embed(frame, BBox(0, 0, 8, 8))
        large = appearance_embed(frame, BBox(20, 20, 40, 30))
        assert np.allclose(small, large)

    def test_dimension(self):
        vec = appearance_embed(solid_frame((1, 2, 3)), BBox(0, 0, 10, 10))
        assert vec.shape == (512,)


class TestCosineDistance:
    def test_identical(self):
        v = np.array([1.0, 2.0, 3.0])
        assert cosine_distance(v, v) == pytest.approx(0.0)

    def test_orthogonal(self):
        assert cosine_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(1.0)

    def test_opposite(self):
        assert cosine_distance(np.array([1.0, 0.0]), np.array([-1.0, 0.0])) == pytest.approx(2.0)

    def test_known_angle(self):
        got = cosine_distance(np.array([1.0, 0.0]), np.array([1.0, 1.0]))
        assert got == pytest.approx(1.0 - 1.0 / math.sqrt(2))

    def test_scale_invariant(self):
        a = np.array([1.0, 2.0])
        assert cosine_distance(a, 100 * a) == pytest.approx(0.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_distance(np.zeros(3), np.array([1.0, 0.0, 0.0]))
