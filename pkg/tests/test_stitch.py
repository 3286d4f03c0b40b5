"""Placement chaining, feather blending and chain splitting."""

import numpy as np
import pytest

from annustitch.schemas import ModelKind, MotionModel, RansacResult
from annustitch.services.stitch import (
    ChainBroken,
    PanoramaBuilder,
    StitchError,
    compose,
    compose_segments,
    feather_weights,
    panorama_to_record,
)
from tests.conftest import textured


def _link(dx: float, dy: float = 0.0, inliers: int = 10) -> RansacResult:
    return RansacResult(
        model=MotionModel(kind=ModelKind.TRANSLATION, translation=(dx, dy)),
        inlier_indices=tuple(range(inliers)),
        valid_match_count=inliers,
    )


def test_identical_strips_with_identity_link():
    strip = textured((20, 40), seed=1)
    pano = compose([strip, strip], [_link(0.0)])
    np.testing.assert_allclose(pano.canvas, strip, atol=1e-9)


def test_shift_extends_canvas():
    scene = textured((24, 130), seed=2)
    a, b = scene[:, 30:130], scene[:, 0:100]
    # a point of A appears 30 px further right in B
    pano = compose([a, b], [_link(30.0)])
    assert pano.canvas.shape == (24, 130)
    assert pano.origin == (30, 0)
    assert np.abs(pano.canvas - scene).mean() < 1.0
    assert pano.placements[1][1].translation == (-30.0, 0.0)


def test_vertical_shift():
    scene = textured((60, 40), seed=3)
    a, b = scene[10:50], scene[0:40]
    pano = compose([a, b], [_link(0.0, 10.0)])
    assert pano.canvas.shape == (50, 40)
    np.testing.assert_allclose(pano.canvas, scene[0:50], atol=1e-9)


def test_broken_link_splits_into_segments():
    strips = [textured((16, 32), seed=s) for s in range(3)]
    panoramas, breaks = compose_segments(strips, [_link(5.0), None])
    assert len(panoramas) == 2
    assert [b.link_index for b in breaks] == [1]
    assert panoramas[0].canvas.shape == (16, 37)
    np.testing.assert_array_equal(panoramas[1].canvas, strips[2])


def test_compose_refuses_a_broken_chain():
    strips = [np.zeros((8, 8))] * 3
    with pytest.raises(ChainBroken) as info:
        compose(strips, [_link(1.0), _link(1.0, inliers=2)], min_inliers=4)
    assert info.value.link_index == 1


def test_link_count_must_match():
    with pytest.raises(ValueError):
        compose([np.zeros((4, 4))] * 3, [_link(1.0)])


def test_cyclic_keeps_width():
    strips = [textured((16, 64), seed=s) for s in range(3)]
    pano = compose(strips, [_link(20.0), _link(20.0)], cyclic=True)
    assert pano.canvas.shape == (16, 64)
    assert pano.seam_metadata["cyclic"] is True


def test_cyclic_needs_equal_widths():
    builder = PanoramaBuilder(cyclic=True).add(np.zeros((8, 16)))
    with pytest.raises(StitchError):
        builder.add(np.zeros((8, 12)), _link(1.0))


def test_incremental_equals_batch():
    strips = [textured((12, 30), seed=s) for s in range(4)]
    links = [_link(7.0, 1.0), _link(-3.0, 2.0), _link(11.0, 0.0)]
    builder = PanoramaBuilder()
    builder.add(strips[0])
    for strip, link in zip(strips[1:], links):
        builder.add(strip, link)
    np.testing.assert_array_equal(builder.render().canvas, compose(strips, links).canvas)


def test_homography_placement_is_warped():
    strip = textured((50, 50), seed=5)
    scale = MotionModel.from_matrix(np.diag([1.1, 1.1, 1.0]))
    link = RansacResult(model=scale, inlier_indices=tuple(range(8)), valid_match_count=8)
    pano = compose([strip, strip], [link])
    assert pano.canvas.shape == (50, 50)
    assert pano.coverage.max() == 2


def test_feather_weights_peak_in_the_middle():
    w = feather_weights((5, 9))
    assert w.max() == 1.0
    assert w[0, 0] < w[2, 4]


def test_record_lists_every_placement():
    pano = compose([np.zeros((4, 6))] * 2, [_link(2.0)], frame_ids=["a", "b"])
    record = panorama_to_record(pano)
    assert [p["frame_id"] for p in record["placements"]] == ["a", "b"]
    assert record["width"] == 8


def test_blend_weights_form_a_partition_of_unity():
    # equal constant strips stay constant wherever they overlap
    strips = [np.full((12, 40), 90.0)] * 3
    pano = compose(strips, [_link(9.0, 2.0), _link(-4.0, 1.0)])
    covered = pano.coverage > 0
    np.testing.assert_allclose(pano.canvas[covered], 90.0, atol=1e-9)


def test_overlap_is_a_convex_mix():
    pano = compose([np.full((10, 30), 40.0), np.full((10, 30), 200.0)], [_link(12.0)])
    overlap = pano.coverage == 2
    assert overlap.any()
    assert np.all((pano.canvas[overlap] >= 40.0) & (pano.canvas[overlap] <= 200.0))
    single = pano.coverage == 1
    assert set(np.unique(pano.canvas[single])) == {40.0, 200.0}
