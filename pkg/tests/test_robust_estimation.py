"""Seeded RANSAC for translation and homography models."""

import numpy as np
import pytest

from annustitch.schemas import MatchPair, ModelKind, MotionModel, RansacParams, RansacResult
from annustitch.services.robust_estimation import (
    InsufficientMatches,
    NoConsensus,
    compose,
    fit_homography,
    ransac_estimate,
    result_from_record,
    result_to_record,
    valid_match_count,
)


def _identity_matches(n: int) -> list[MatchPair]:
    return [MatchPair(index_a=i, index_b=i, d1=0.0, d2=1.0) for i in range(n)]


def _planted(seed: int, n_in: int = 20, n_out: int = 20, shift=(10.0, 0.0)):
    rng = np.random.default_rng(seed)
    a_in = rng.uniform(0, 200, (n_in, 2))
    b_in = a_in + np.asarray(shift)
    a_out = rng.uniform(0, 200, (n_out, 2))
    b_out = rng.uniform(0, 200, (n_out, 2))
    return np.vstack([a_in, a_out]), np.vstack([b_in, b_out])


class TestTranslation:
    def test_exact_translation(self):
        a = np.random.default_rng(0).uniform(0, 100, (20, 2))
        result = ransac_estimate(_identity_matches(20), a, a + [10.0, 0.0], "translation")
        dx, dy = result.model.translation
        assert dx == pytest.approx(10.0, abs=1e-6)
        assert dy == pytest.approx(0.0, abs=1e-6)
        assert result.valid_match_count == 20
        assert valid_match_count(result) == 20

    def test_planted_inliers_survive_outliers(self):
        params = RansacParams(iterations=300, inlier_tolerance=3.0)
        good = 0
        for seed in range(100):
            a, b = _planted(seed)
            result = ransac_estimate(_identity_matches(40), a, b, ModelKind.TRANSLATION, params.model_copy(update={"seed": seed}))
            dx, dy = result.model.translation
            if abs(dx - 10) <= 0.5 and abs(dy) <= 0.5 and set(range(20)) <= set(result.inlier_indices):
                good += 1
        assert good >= 95

    def test_same_seed_same_result(self):
        a, b = _planted(7)
        params = RansacParams(seed=42, iterations=50)
        r1 = ransac_estimate(_identity_matches(40), a, b, "translation", params)
        r2 = ransac_estimate(_identity_matches(40), a, b, "translation", params)
        assert r1 == r2

    def test_shifting_b_shifts_the_model(self):
        params = RansacParams(iterations=200, seed=3)
        for seed in range(10):
            a, b = _planted(seed, shift=(4.0, -2.5))
            base = ransac_estimate(_identity_matches(40), a, b, "translation", params)
            moved = ransac_estimate(_identity_matches(40), a, b + [7.0, -3.0], "translation", params)
            assert moved.inlier_indices == base.inlier_indices
            np.testing.assert_allclose(
                moved.model.translation, np.add(base.model.translation, [7.0, -3.0]), atol=1e-9
            )

    def test_every_inlier_within_tolerance(self):
        params = RansacParams(iterations=300, inlier_tolerance=3.0)
        for seed in range(100):
            a, b = _planted(seed)
            result = ransac_estimate(
                _identity_matches(40), a, b, "translation", params.model_copy(update={"seed": seed})
            )
            idx = list(result.inlier_indices)
            err = np.hypot(*(result.model.apply(a[idx]) - b[idx]).T)
            assert np.all(err < params.inlier_tolerance)

    def test_no_matches(self):
        with pytest.raises(InsufficientMatches):
            ransac_estimate([], np.empty((0, 2)), np.empty((0, 2)), "translation")

    def test_random_matches_have_no_consensus(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(0, 1000, (10, 2)), rng.uniform(0, 1000, (10, 2))
        with pytest.raises(NoConsensus):
            ransac_estimate(_identity_matches(10), a, b, "translation", RansacParams(inlier_tolerance=0.5))


class TestHomography:
    H = np.array([[1.02, 0.03, 5.0], [-0.02, 0.98, -3.0], [1e-4, -5e-5, 1.0]])

    def _project(self, pts):
        q = np.c_[pts, np.ones(len(pts))] @ self.H.T
        return q[:, :2] / q[:, 2:3]

    def test_fit_exact(self):
        a = np.random.default_rng(2).uniform(0, 100, (12, 2))
        h = fit_homography(a, self._project(a))
        np.testing.assert_allclose(h, self.H, atol=1e-6)

    def test_ransac_recovers_homography(self):
        a = np.random.default_rng(3).uniform(0, 100, (30, 2))
        result = ransac_estimate(_identity_matches(30), a, self._project(a), "homography", RansacParams(iterations=50))
        assert result.valid_match_count == 30
        np.testing.assert_allclose(result.model.as_matrix(), self.H, atol=1e-6)

    def test_every_inlier_within_tolerance(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 100, (40, 2))
        b = self._project(a)
        b[20:] = rng.uniform(0, 100, (20, 2))
        params = RansacParams(iterations=400, inlier_tolerance=2.0)
        result = ransac_estimate(_identity_matches(40), a, b, "homography", params)
        idx = list(result.inlier_indices)
        assert set(range(20)) <= set(idx)
        err = np.hypot(*(result.model.apply(a[idx]) - b[idx]).T)
        assert np.all(err < params.inlier_tolerance)

    def test_three_matches(self):
        pts = np.zeros((3, 2))
        with pytest.raises(InsufficientMatches):
            ransac_estimate(_identity_matches(3), pts, pts, "homography")

    def test_collinear_points_have_no_consensus(self):
        a = np.column_stack([np.arange(10.0), np.arange(10.0)])
        with pytest.raises(NoConsensus):
            ransac_estimate(_identity_matches(10), a, a, "homography", RansacParams(iterations=20))


def test_empty_inliers_count_zero():
    result = RansacResult(model=MotionModel.identity(), inlier_indices=(), valid_match_count=0)
    assert valid_match_count(result) == 0
    assert valid_match_count(None) == 0


def test_count_must_equal_inliers():
    with pytest.raises(ValueError):
        RansacResult(model=MotionModel.identity(), inlier_indices=(1, 2), valid_match_count=3)


def test_compose_translations():
    t1 = MotionModel(kind=ModelKind.TRANSLATION, translation=(1.0, 2.0))
    t2 = MotionModel(kind=ModelKind.TRANSLATION, translation=(3.0, 4.0))
    assert compose([t1, t2]).translation == (4.0, 6.0)


def test_record_round_trip():
    a = np.random.default_rng(4).uniform(0, 50, (8, 2))
    result = ransac_estimate(_identity_matches(8), a, a + [1.0, -2.0], "translation")
    assert result_from_record(result_to_record(result)) == result
