"""Report aggregation, CSV/SVG emission and significance markers."""

import pandas as pd
import pytest

from annustitch.evaluation import build_report, per_video_means
from annustitch.schemas import VARIANT_ORDER, MatchRow, MethodVariant
from annustitch.services.report import emit_report, load_rows, summary_frame


def _rows(counts: dict[str, dict[MethodVariant, list[int]]]) -> list[MatchRow]:
    rows = []
    for video, per_variant in counts.items():
        for variant in VARIANT_ORDER:
            for k, c in enumerate(per_variant[variant]):
                rows.append(MatchRow(video_id=video, variant=variant, pair_index=k, valid_match_count=c))
    return rows


def _trend_rows(n_videos: int = 10) -> list[MatchRow]:
    """ahe_rotated beats original in every video; ahe sits on either side of it."""
    counts = {}
    for i in range(n_videos):
        ref = 50 + i
        ahe = ref + (3 if i % 2 else -3) + (i % 3)
        counts[f"v{i:02d}"] = {
            MethodVariant.ORIGINAL: [ref - 20 - i] * 4,
            MethodVariant.AHE: [ahe] * 4,
            MethodVariant.AHE_ROTATED: [ref] * 4,
        }
    return _rows(counts)


def test_twenty_four_rows(tmp_path):
    counts = {
        v: {var: [10 + k for k in range(4)] for var in VARIANT_ORDER}
        for v in ("a", "b")
    }
    report = build_report(_rows(counts))
    paths = emit_report(report, tmp_path)
    lines = paths["report"].read_text().splitlines()
    assert lines[0] == "video_id,variant,pair_index,valid_match_count"
    assert len(lines) == 25
    assert "errors" not in paths


def test_empty_rows_are_a_usage_error(tmp_path):
    with pytest.raises(ValueError):
        emit_report(build_report([]), tmp_path)


def test_per_video_means_are_the_unit_of_analysis():
    counts = {
        "a": {MethodVariant.ORIGINAL: [1, 3], MethodVariant.AHE: [2, 2], MethodVariant.AHE_ROTATED: [4, 6]},
    }
    means = per_video_means(_rows(counts))
    assert means.loc["a"].tolist() == [2.0, 2.0, 5.0]


def test_asterisk_marks_exactly_the_significant_variants(tmp_path):
    report = build_report(_trend_rows())
    tests = {t.variant: t for t in report.test_results}
    assert tests[MethodVariant.ORIGINAL].significant
    assert not tests[MethodVariant.AHE].significant
    svg = emit_report(report, tmp_path)["boxplot"].read_text()
    assert 'id="significance-original"' in svg
    assert 'id="significance-ahe"' not in svg


def test_summary_records_the_test_setup():
    summary = summary_frame(build_report(_trend_rows()))
    tests = summary[summary["kind"] == "wilcoxon"]
    assert len(tests) == 2
    assert set(tests["unit_of_analysis"]) == {"per_video_mean"}
    assert set(tests["zero_handling"]) == {"wilcox"}
    assert set(tests["reference"]) == {"ahe_rotated"}


def test_identical_variants_are_reported_not_raised():
    counts = {v: {var: [5, 5] for var in VARIANT_ORDER} for v in ("a", "b", "c")}
    report = build_report(_rows(counts))
    assert all(t.note == "all differences zero" and t.p_value is None for t in report.test_results)


def test_outputs_are_byte_identical_across_runs(tmp_path):
    report = build_report(_trend_rows())
    first = emit_report(report, tmp_path / "one")
    second = emit_report(report, tmp_path / "two")
    for key in first:
        assert first[key].read_bytes() == second[key].read_bytes(), key


def test_failed_pairs_go_to_errors_csv(tmp_path):
    rows = _trend_rows(2)
    rows[0] = rows[0].model_copy(update={"valid_match_count": 0, "error": "NoConsensus"})
    paths = emit_report(build_report(rows), tmp_path)
    errors = pd.read_csv(paths["errors"])
    assert errors["error"].tolist() == ["NoConsensus"]
    assert list(pd.read_csv(paths["report"]).columns) == ["video_id", "variant", "pair_index", "valid_match_count"]


def test_rows_reload_from_csv(tmp_path):
    rows = _trend_rows(3)
    paths = emit_report(build_report(rows), tmp_path)
    reloaded = load_rows(paths["report"])
    assert reloaded == rows
