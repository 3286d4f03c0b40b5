# AnnuStitch — Report Emission
# report.csv / errors.csv / summary.csv via pandas and a byte-stable boxplot.svg via matplotlib.

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from annustitch.config import settings  # noqa: E402
from annustitch.errors import StageError  # noqa: E402
from annustitch.evaluation import UNIT_OF_ANALYSIS, per_video_means, rows_frame  # noqa: E402
from annustitch.schemas import VARIANT_ORDER, MatchReport, MatchRow  # noqa: E402
from annustitch.stat_engine import ZERO_HANDLING  # noqa: E402

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["video_id", "variant", "pair_index", "valid_match_count"]
SUMMARY_COLUMNS = [
    "kind",
    "video_id",
    "variant",
    "reference",
    "value",
    "statistic",
    "p_value",
    "significant",
    "n",
    "unit_of_analysis",
    "zero_handling",
    "note",
]
_CSV_OPTS = {"index": False, "lineterminator": "\n", "float_format": "%.10g", "encoding": "utf-8"}


class ReportIoError(StageError):
    stage = "eval_report"


def summary_frame(report: MatchReport) -> pd.DataFrame:
    records = []
    for video, variant, value in report.aggregates:
        records.append({"kind": "video_mean", "video_id": video, "variant": variant.value, "value": value})

    means = per_video_means(list(report.rows))
    for variant in VARIANT_ORDER:
        col = means[variant.value].dropna()
        if len(col):
            records.append({"kind": "variant_median", "variant": variant.value, "value": float(col.median())})

    for t in report.test_results:
        records.append(
            {
                "kind": "wilcoxon",
                "variant": t.variant.value,
                "reference": t.reference.value,
                "statistic": t.statistic,
                "p_value": t.p_value,
                "significant": t.significant,
                "n": t.n,
                "unit_of_analysis": UNIT_OF_ANALYSIS,
                "zero_handling": ZERO_HANDLING,
                "note": t.note,
            }
        )
    return pd.DataFrame.from_records(records, columns=SUMMARY_COLUMNS)


def render_boxplot(report: MatchReport, path: Path) -> Path:
    """Per-variant boxes of per-video mean counts; '*' above each variant that differs from the reference."""
    means = per_video_means(list(report.rows))
    labels = [v.value for v in VARIANT_ORDER]
    data = [means[v].dropna().to_numpy() for v in labels]
    significant = {t.variant.value for t in report.test_results if t.significant}

    with plt.rc_context({"svg.fonttype": "none", "svg.hashsalt": settings.svg_hash_salt}):
        fig, ax = plt.subplots(figsize=(5, 4))
        try:
            ax.boxplot(data)
            ax.set_xticks(range(1, len(labels) + 1), labels)
            ax.set_ylabel("valid matches (per-video mean)")
            top = max((d.max() for d in data if d.size), default=1.0)
            for pos, label in enumerate(labels, start=1):
                if label in significant:
                    ax.text(pos, top * 1.05 + 0.5, "*", ha="center", fontsize=16, gid=f"significance-{label}")
            ax.set_ylim(bottom=0, top=top * 1.15 + 1.0)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path


def load_rows(path: str | Path) -> list[MatchRow]:
    """Rows from a report.csv written by emit_report."""
    try:
        df = pd.read_csv(path, dtype={"video_id": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ReportIoError(f"cannot read {path}: {e}", item_id=str(path)) from e
    missing = set(REPORT_COLUMNS) - set(df.columns)
    if missing:
        raise ReportIoError(f"{path} lacks columns {sorted(missing)}", item_id=str(path))
    return [MatchRow(**rec) for rec in df[REPORT_COLUMNS].to_dict(orient="records")]


def emit_report(report: MatchReport, out_dir: str | Path) -> dict[str, Path]:
    if not report.rows:
        raise ValueError("report has no rows")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        df = rows_frame(list(report.rows))
        paths = {"report": out / "report.csv", "summary": out / "summary.csv", "boxplot": out / "boxplot.svg"}
        df[REPORT_COLUMNS].to_csv(paths["report"], **_CSV_OPTS)
        errors = df[df["error"].notna()]
        if len(errors):
            paths["errors"] = out / "errors.csv"
            errors[["video_id", "variant", "pair_index", "error"]].to_csv(paths["errors"], **_CSV_OPTS)
        summary_frame(report).to_csv(paths["summary"], **_CSV_OPTS)
        render_boxplot(report, paths["boxplot"])
    except OSError as e:
        raise ReportIoError(f"cannot write report to {out}: {e}", item_id=str(out)) from e
    logger.info("report written to %s (%d rows)", out, len(report.rows))
    return paths
