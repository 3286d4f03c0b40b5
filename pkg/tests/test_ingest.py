"""Keyframe selection, image decoding and manifest handling."""

import cv2
import numpy as np
import pytest

from annustitch.schemas import FrameManifest, KeyframeSelection
from annustitch.services.ingest import (
    DecodeError,
    InvalidFps,
    VideoTooShort,
    decode_gray,
    load_gray,
    load_manifest,
    save_gray,
    select_keyframes,
    validate_gray,
    write_manifest,
)
from annustitch.services.providers import ManifestFrameSource, get_frame_source


def _manifest(n: int, fps: float) -> FrameManifest:
    return FrameManifest(source_id="v", fps=fps, frame_paths=tuple(f"f{i}.png" for i in range(n)))


def _png(arr: np.ndarray) -> bytes:
    ok, buf = cv2.imencode(".png", arr)
    assert ok
    return buf.tobytes()


class TestSelectKeyframes:
    def test_default_trims_and_stride(self):
        sel = select_keyframes(_manifest(360, 30.0), KeyframeSelection())
        assert sel.selected_indices[0] == 90
        assert sel.selected_indices[-1] == 265
        assert len(sel.selected_indices) == 36
        assert all(b - a == 5 for a, b in zip(sel.selected_indices, sel.selected_indices[1:]))

    def test_video_shorter_than_trims(self):
        with pytest.raises(VideoTooShort):
            select_keyframes(_manifest(120, 30.0), KeyframeSelection())

    def test_duration_equal_to_trims_is_too_short(self):
        with pytest.raises(VideoTooShort):
            select_keyframes(_manifest(180, 30.0), KeyframeSelection())

    @pytest.mark.parametrize("fps", [0.0, -5.0])
    def test_non_positive_fps(self, fps):
        with pytest.raises(InvalidFps):
            select_keyframes(_manifest(100, fps), KeyframeSelection())

    def test_fractional_trim_rounds_up(self):
        # 0.25 s at 10 fps = 2.5 frames -> first kept frame is 3
        params = KeyframeSelection(head_trim=0.25, tail_trim=0.25, stride=1)
        sel = select_keyframes(_manifest(20, 10.0), params)
        assert sel.selected_indices == list(range(3, 17))

    def test_indices_strictly_increasing_and_in_range(self):
        params = KeyframeSelection(head_trim=1, tail_trim=2, stride=7)
        sel = select_keyframes(_manifest(500, 25.0), params)
        idx = sel.selected_indices
        assert idx == sorted(set(idx))
        assert idx[0] >= 25 and idx[-1] <= 500 - 1 - 50

    @pytest.mark.parametrize("fps", [24.0, 25.0, 30.0, 60.0])
    def test_every_length_against_a_direct_loop(self, fps):
        params = KeyframeSelection()
        for n in range(1, 601):
            # frame i survives when at least 3 s of video lie before it and after it
            kept = [i for i in range(n) if i >= 3 * fps and n - 1 - i >= 3 * fps]
            expected = kept[:: params.stride]
            if n / fps <= 6 or not expected:
                with pytest.raises(VideoTooShort):
                    select_keyframes(_manifest(n, fps), params)
                continue
            assert select_keyframes(_manifest(n, fps), params).selected_indices == expected

    def test_params_not_mutated(self):
        params = KeyframeSelection()
        select_keyframes(_manifest(360, 30.0), params)
        assert params.selected_indices == []


class TestDecode:
    def test_white_png(self):
        img = decode_gray(_png(np.full((2, 2), 255, np.uint8)))
        assert img.shape == (2, 2)
        assert img.dtype == np.float64
        assert np.all(img == 255.0)

    def test_red_pixel_uses_luma_weights(self):
        bgr = np.zeros((1, 1, 3), np.uint8)
        bgr[0, 0, 2] = 255
        img = decode_gray(_png(bgr))
        assert img[0, 0] == pytest.approx(76.245)

    def test_truncated_file(self):
        data = _png(np.full((16, 16), 100, np.uint8))
        with pytest.raises(DecodeError):
            decode_gray(data[:20])

    def test_empty_bytes(self):
        with pytest.raises(DecodeError):
            decode_gray(b"")

    def test_sixteen_bit_rejected(self):
        with pytest.raises(DecodeError):
            decode_gray(_png(np.full((4, 4), 1000, np.uint16)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DecodeError):
            load_gray(tmp_path / "nope.png")


def test_save_then_load_preserves_integer_values(tmp_path):
    img = np.arange(64, dtype=np.float64).reshape(8, 8) * 3.0
    path = save_gray(tmp_path / "sub" / "img.png", img)
    np.testing.assert_array_equal(load_gray(path), img)


def test_validate_gray_rejects_out_of_range():
    with pytest.raises(ValueError):
        validate_gray(np.array([[0.0, 256.0]]))
    with pytest.raises(ValueError):
        validate_gray(np.zeros((2, 2, 3)))


def test_manifest_paths_resolve_relative_to_manifest(tmp_path):
    save_gray(tmp_path / "v" / "a.png", np.full((8, 8), 7.0))
    path = write_manifest(tmp_path / "v" / "manifest.json", "v", 12.5, ["a.png"])
    manifest = load_manifest(path)
    assert manifest.fps == 12.5
    assert manifest.frame_count == 1
    source = get_frame_source(path)
    assert isinstance(source, ManifestFrameSource)
    assert source.read(0)[0, 0] == 7.0


def test_manifest_with_duplicate_frames_rejected(tmp_path):
    path = write_manifest(tmp_path / "manifest.json", "v", 10, ["a.png", "a.png"])
    with pytest.raises(Exception) as info:
        load_manifest(path)
    assert "unique" in str(info.value)


def test_frame_source_factory_needs_an_input():
    with pytest.raises(ValueError):
        get_frame_source()
