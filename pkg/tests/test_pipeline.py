"""Config loading and the end-to-end run on a phantom video."""

import json

import pytest

from annustitch.errors import ConfigError
from annustitch.pipeline import load_config, run_pipeline
from annustitch.schemas import KeyframeSelection, MethodVariant, PipelineConfig
from annustitch.services.ingest import load_manifest
from annustitch.services.phantom import PhantomParams, generate_phantom_video, write_phantom_video
from annustitch.services.providers import PhantomFrameSource


class TestConfig:
    def test_defaults(self):
        config = load_config()
        assert config.feature.ratio == 0.75
        assert config.ransac.iterations == 2000
        assert config.eval.reference is MethodVariant.AHE_ROTATED

    def test_ratio_out_of_range_names_the_field(self):
        with pytest.raises(ConfigError) as info:
            load_config(overrides={"feature": {"ratio": 1.5}})
        fields = [v["field"] for v in info.value.violations]
        assert fields == ["feature.ratio"]
        assert "1" in info.value.violations[0]["message"]

    def test_every_violation_is_collected(self):
        with pytest.raises(ConfigError) as info:
            load_config(overrides={"feature": {"ratio": 0}, "ransac": {"iterations": 0}, "bogus": 1})
        fields = {v["field"] for v in info.value.violations}
        assert fields == {"feature.ratio", "ransac.iterations", "bogus"}

    def test_file_then_overrides(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"ingest": {"stride": 2}, "ransac": {"iterations": 10, "seed": 3}}))
        config = load_config(path, {"ransac": {"iterations": "20"}})
        assert config.ingest.stride == 2
        assert config.ransac.iterations == 20
        assert config.ransac.seed == 3

    def test_top_level_seed_wins(self):
        config = load_config(overrides={"seed": 11, "ransac": {"seed": 3}})
        assert config.ransac.seed == 11

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError) as info:
            load_config(path)
        assert info.value.to_dict()["violations"][0]["field"] == "<file>"


@pytest.fixture(scope="module")
def short_config() -> PipelineConfig:
    return PipelineConfig(ingest=KeyframeSelection(head_trim=0, tail_trim=0, stride=1))


@pytest.fixture(scope="module")
def phantom():
    return generate_phantom_video(PhantomParams(n_frames=4), seed=1, source_id="clip")


def test_pipeline_writes_every_artifact(tmp_path, short_config, phantom):
    config = short_config.model_copy(update={"debug_dir": str(tmp_path / "debug")})
    result = run_pipeline(config, PhantomFrameSource(phantom), tmp_path / "out", threads=2)
    out = tmp_path / "out"
    assert result.selection.selected_indices == [0, 1, 2, 3]
    assert (out / "report.csv").exists()
    assert (out / "summary.csv").exists()
    assert (out / "boxplot.svg").exists()
    assert (out / "panorama_00.png").exists()
    assert (out / "panorama_00.json").exists()
    debug = tmp_path / "debug"
    names = [f"clip_{i:05d}" for i in range(4)]
    assert json.loads((debug / "keyframes.json").read_text())["selected_indices"] == [0, 1, 2, 3]
    for name in names:
        assert (debug / f"{name}_depth.png").exists()
        assert (debug / "rotated" / f"{name}.png").exists()
        for variant in MethodVariant:
            assert (debug / "unwrapped" / variant.value / f"{name}.png").exists()
            assert (debug / "unwrapped" / variant.value / f"{name}.json").exists()
            keypoints = json.loads((debug / "keypoints" / variant.value / f"{name}.json").read_text())
            assert isinstance(keypoints, list)
        assert not (debug / "enhanced" / "original").exists()
        assert (debug / "enhanced" / "ahe" / f"{name}.png").exists()
        assert (debug / "enhanced" / "ahe_rotated" / f"{name}.png").exists()
    for variant in MethodVariant:
        for k in range(3):
            record = json.loads((debug / "pairs" / variant.value / f"pair_{k:03d}.json").read_text())
            assert (record["frame_a"], record["frame_b"]) == (names[k], names[k + 1])
            assert {"matches", "ransac", "error"} <= set(record)
            assert (record["ransac"] is None) != (record["error"] is None)
    summary = result.summary()
    assert summary["pairs"] == 3


def test_rerun_is_byte_identical(tmp_path, short_config, phantom):
    manifest = write_phantom_video(phantom, tmp_path / "videos")
    first = run_pipeline(short_config, load_manifest(manifest), tmp_path / "a", threads=1)
    second = run_pipeline(short_config, load_manifest(manifest), tmp_path / "b", threads=3)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    assert [r.valid_match_count for r in first.evaluation.rows] == [r.valid_match_count for r in second.evaluation.rows]


def test_debug_outputs_do_not_depend_on_threads(tmp_path, short_config, phantom):
    for name, threads in (("a", 1), ("b", 3)):
        config = short_config.model_copy(update={"debug_dir": str(tmp_path / name / "debug")})
        run_pipeline(config, PhantomFrameSource(phantom), tmp_path / name / "out", threads=threads)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), str(rel)
