"""Annulus selection and polar resampling."""

import math

import numpy as np
import pytest

from annustitch.schemas import UnwrapParams, UnwrapSpec
from annustitch.services.depth_geometry import rotate_image
from annustitch.services.unwrap import (
    CenterOutOfBounds,
    DegenerateAnnulus,
    SpecImageMismatch,
    annulus_radii,
    carry_annulus,
    make_unwrap_spec,
    rewrap,
    spec_for_annulus,
    unwrap,
)
from tests.conftest import render_dark_ellipse, textured


def _disc(shape, center, radius, inside=0.0, outside=200.0):
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    img = np.full(shape, outside)
    img[np.hypot(xx - center[0], yy - center[1]) <= radius] = inside
    return img


class TestAnnulusRadii:
    def test_centered(self):
        img = np.full((101, 101), 200.0)
        img[50, 50] = 0
        r_min, r_max = annulus_radii(img, (50, 50), 10)
        assert r_max == 50
        assert r_min == pytest.approx(0.0)

    def test_off_center_outer_radius(self):
        img = np.full((101, 101), 200.0)
        img[50, 30] = 0
        assert annulus_radii(img, (30, 50), 10)[1] == 30

    def test_dark_disc_inner_radius(self):
        img = _disc((101, 101), (50, 50), 12)
        r_min, _ = annulus_radii(img, (50, 50), 100)
        assert abs(r_min - 12) <= 1

    def test_center_outside_image(self):
        with pytest.raises(CenterOutOfBounds):
            annulus_radii(np.zeros((10, 10)), (12, 3), 5)

    def test_dark_region_reaching_border(self):
        img = _disc((41, 41), (20, 20), 25)
        with pytest.raises(DegenerateAnnulus):
            annulus_radii(img, (20, 20), 100)


class TestUnwrap:
    def test_auto_sample_counts(self):
        img = _disc((101, 101), (50, 50), 10)
        spec = make_unwrap_spec(img, (50, 50), 100)
        assert spec.r_max == 50
        assert spec.n_theta == round(2 * math.pi * 50)
        assert spec.n_r == round(50 - spec.r_min)

    def test_explicit_params_win(self):
        img = np.full((101, 101), 200.0)
        spec = make_unwrap_spec(img, (50, 50), 100, UnwrapParams(n_theta=64, n_r=10, r_min=5, r_max=40))
        assert (spec.n_theta, spec.n_r, spec.r_min, spec.r_max) == (64, 10, 5, 40)

    def test_strip_shape(self):
        spec = UnwrapSpec(center=(32, 32), r_min=4, r_max=30, n_theta=90, n_r=27)
        assert unwrap(np.zeros((65, 65)), spec).shape == (27, 90)

    def test_concentric_rings_give_constant_rows(self):
        yy, xx = np.mgrid[0:129, 0:129]
        img = 127.5 + 100.0 * np.sin(np.hypot(xx - 64, yy - 64) / 3.0)
        spec = UnwrapSpec(center=(64, 64), r_min=5, r_max=60, n_theta=360, n_r=56)
        strip = unwrap(img, spec)
        assert strip.std(axis=1).max() < 0.02 * (img.max() - img.min())

    def test_constant_source(self):
        spec = UnwrapSpec(center=(20, 20), r_min=2, r_max=18, n_theta=64, n_r=17)
        np.testing.assert_allclose(unwrap(np.full((41, 41), 77.0), spec), 77.0)

    def test_values_stay_within_source_range(self):
        img = textured((81, 81), seed=4)
        spec = UnwrapSpec(center=(40, 40), r_min=3, r_max=40, n_theta=200, n_r=38)
        strip = unwrap(img, spec)
        assert strip.min() >= img.min() and strip.max() <= img.max()

    def test_theta_origin_shifts_columns(self):
        img = textured((81, 81), seed=6)
        spec = UnwrapSpec(center=(40, 40), r_min=4, r_max=36, n_theta=96, n_r=33)
        strip = unwrap(img, spec)
        for k in (1, 17, 96):
            moved = spec.model_copy(update={"theta_origin": 2 * math.pi * k / 96})
            np.testing.assert_allclose(unwrap(img, moved), np.roll(strip, -k, axis=1), atol=1e-6)

    def test_quarter_turn_rolls_the_strip(self):
        img = textured((81, 81), seed=7)
        spec = UnwrapSpec(center=(40, 40), r_min=4, r_max=36, n_theta=96, n_r=33)
        # np.rot90 moves the content at angle theta + pi/2 to angle theta
        turned = unwrap(np.rot90(img), spec)
        np.testing.assert_allclose(turned, np.roll(unwrap(img, spec), -24, axis=1), atol=1e-6)

    def test_circle_leaving_image(self):
        spec = UnwrapSpec(center=(10, 10), r_min=1, r_max=15, n_theta=16, n_r=4)
        with pytest.raises(SpecImageMismatch):
            unwrap(np.zeros((30, 30)), spec)

    def test_column_zero_points_along_x(self):
        img = np.zeros((61, 61))
        img[30, 31:] = 255.0
        spec = UnwrapSpec(center=(30, 30), r_min=2, r_max=25, n_theta=128, n_r=24)
        strip = unwrap(img, spec)
        assert np.all(strip[:, 0] == 255.0)
        assert np.all(strip[:, 64] == 0.0)


class TestRewrap:
    def test_zero_strip(self):
        spec = UnwrapSpec(center=(20, 20), r_min=2, r_max=18, n_theta=64, n_r=17)
        assert not rewrap(np.zeros((17, 64)), spec, (41, 41)).any()

    def test_bright_column_becomes_ray_along_x(self):
        spec = UnwrapSpec(center=(30, 30), r_min=5, r_max=25, n_theta=120, n_r=21)
        strip = np.zeros((21, 120))
        strip[:, 0] = 255.0
        canvas = rewrap(strip, spec, (61, 61))
        np.testing.assert_allclose(canvas[30, 35:56], 255.0)
        assert not canvas[30, 5:26].any()
        assert not canvas[5:26, 30].any()

    def test_round_trip_interior(self):
        img = textured((129, 129), seed=5, smooth=4.0)
        spec = make_unwrap_spec(img, (64, 64), 0, UnwrapParams(r_min=4, r_max=60))
        back = rewrap(unwrap(img, spec), spec, img.shape)
        yy, xx = np.mgrid[0:129, 0:129]
        r = np.hypot(xx - 64, yy - 64)
        interior = (r >= 6) & (r <= 58)
        assert np.abs(back - img)[interior].mean() < 3.0

    def test_shape_mismatch(self):
        spec = UnwrapSpec(center=(20, 20), r_min=2, r_max=18, n_theta=64, n_r=17)
        with pytest.raises(SpecImageMismatch):
            rewrap(np.zeros((10, 64)), spec, (41, 41))


class TestCarryAnnulus:
    def test_no_turn_keeps_the_annulus(self):
        spec = UnwrapSpec(center=(30, 40), r_min=6, r_max=25, n_theta=64, n_r=20)
        annulus = carry_annulus(spec, 0.0, (81, 61))
        assert annulus.center == pytest.approx((30, 40))
        assert (annulus.r_min, annulus.r_max) == (6, 25)

    def test_centre_follows_the_turn_and_radius_shrinks(self):
        spec = UnwrapSpec(center=(30, 30), r_min=4, r_max=25, n_theta=64, n_r=21)
        annulus = carry_annulus(spec, math.pi / 2, (61, 81))
        # image centre (40, 30); (30, 30) lies 10 px left of it and turns to 10 px above
        assert annulus.center == pytest.approx((40, 20))
        assert annulus.r_max == pytest.approx(20)
        annulus = carry_annulus(spec, math.pi, (61, 81))
        assert annulus.center == pytest.approx((50, 30))
        assert annulus.r_max == pytest.approx(25)

    def test_turned_corners_do_not_move_the_radii(self):
        img = render_dark_ellipse((161, 161), (80, 80), 30, 15, 25.0)
        spec = make_unwrap_spec(img, (80, 80), 100)
        turned = rotate_image(img, math.radians(-25))
        # the zero-filled corners would count as lumen in a fresh radius search
        with pytest.raises(DegenerateAnnulus):
            make_unwrap_spec(turned, (80, 80), 100)
        carried = spec_for_annulus(turned, carry_annulus(spec, math.radians(-25), turned.shape))
        assert (carried.r_min, carried.r_max) == (spec.r_min, spec.r_max)
        assert carried.n_theta == spec.n_theta and carried.n_r == spec.n_r
