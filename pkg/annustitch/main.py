# AnnuStitch — Command-Line Entrypoint
# keyframes, rotate, unwrap, enhance, match, stitch, eval, report, pipeline, phantom

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from annustitch import __version__
from annustitch.batch_eval import run_batch_eval
from annustitch.config import settings
from annustitch.errors import ConfigError, StageError
from annustitch.evaluation import build_report, locate_unwrap_spec
from annustitch.pipeline import load_config, run_pipeline
from annustitch.schemas import Annulus, PipelineConfig
from annustitch.services.depth_geometry import correct_rotation, write_depth_debug
from annustitch.services.enhance import adaptive_hist_eq
from annustitch.services.features import detect_and_describe, keypoints_to_records, match_ratio, matches_to_records
from annustitch.services.ingest import load_gray, load_manifest, save_gray, select_keyframes
from annustitch.services.phantom import PhantomParams, generate_phantom_dataset
from annustitch.services.report import emit_report, load_rows
from annustitch.services.robust_estimation import ransac_estimate, result_from_record, result_to_record
from annustitch.services.stitch import compose_segments, panorama_to_record
from annustitch.services.unwrap import carry_annulus, spec_for_annulus, spec_to_json, unwrap

logger = logging.getLogger("annustitch")

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _emit(payload: Any) -> None:
    print(json.dumps(payload, indent=2, default=str))


# ---------------------------------------------------------------------------
# flags -> config overrides


def _sentinel(value: str | None, *none_words: str) -> Any:
    """'otsu' / 'auto' style words mean "derive it"; everything else goes to validation as given."""
    if value is None:
        return None
    return None if value.lower() in none_words else value


def overrides_from_args(args: argparse.Namespace) -> dict[str, Any]:
    a = vars(args)
    sections: dict[str, dict[str, Any]] = {k: {} for k in ("ingest", "depth", "unwrap", "ahe", "feature", "ransac", "eval")}

    def put(section: str, key: str, flag: str, value: Any = ...):
        if a.get(flag) is None:
            return
        sections[section][key] = a[flag] if value is ... else value

    put("ingest", "head_trim", "head_trim")
    put("ingest", "tail_trim", "tail_trim")
    put("ingest", "stride", "stride")

    if a.get("depth_threshold") is not None:
        tau = _sentinel(a["depth_threshold"], "otsu")
        sections["depth"].update(rotation_tau=tau, center_tau=tau)
    put("depth", "rotation_tau", "rotation_threshold", _sentinel(a.get("rotation_threshold"), "otsu"))
    put("depth", "center_tau", "center_threshold", _sentinel(a.get("center_threshold"), "otsu"))
    put("depth", "circle_ambiguity_ratio", "circle_ambiguity_ratio")

    put("unwrap", "n_theta", "n_theta", _sentinel(a.get("n_theta"), "auto"))
    put("unwrap", "n_r", "n_r", _sentinel(a.get("n_r"), "auto"))
    put("unwrap", "r_min", "r_min")
    put("unwrap", "r_max", "r_max")
    put("unwrap", "theta_origin", "theta_origin")

    if a.get("ahe_tiles") is not None:
        tx, _, ty = a["ahe_tiles"].lower().partition("x")
        sections["ahe"].update(tiles_x=tx, tiles_y=ty or tx)
    put("ahe", "clip_limit", "ahe_clip", "0" if str(a.get("ahe_clip")).lower() == "off" else a.get("ahe_clip"))
    put("ahe", "bins", "ahe_bins")

    put("feature", "ratio", "ratio")
    put("feature", "contrast_threshold", "contrast_threshold")
    put("feature", "edge_ratio_threshold", "edge_threshold")
    put("feature", "octaves", "octaves")
    put("feature", "scales_per_octave", "scales_per_octave")

    put("ransac", "kind", "model")
    put("ransac", "iterations", "ransac_iters")
    put("ransac", "inlier_tolerance", "ransac_tol")
    put("ransac", "min_inliers", "min_inliers")

    put("eval", "composite_source", "composite_source")
    put("eval", "alpha", "alpha")

    out: dict[str, Any] = {k: v for k, v in sections.items() if v}
    if a.get("seed") is not None:
        out["seed"] = a["seed"]
    if a.get("debug_dir") is not None:
        out["debug_dir"] = a["debug_dir"]
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_keyframes(args: argparse.Namespace, config: PipelineConfig) -> int:
    manifest = load_manifest(args.manifest)
    selection = select_keyframes(manifest, config.ingest)
    _emit({"source_id": manifest.source_id, "frame_count": manifest.frame_count, **selection.model_dump()})
    return 0


def cmd_rotate(args: argparse.Namespace, config: PipelineConfig) -> int:
    img = load_gray(args.input)
    item = Path(args.input).stem
    result = correct_rotation(img, config.depth, item_id=item)
    annulus = carry_annulus(locate_unwrap_spec(img, config), result.applied_angle, img.shape)
    out = save_gray(args.out, result.image)
    if config.debug_dir:
        write_depth_debug(config.debug_dir, item, result, img)
    record = {
        "ellipse": result.ellipse.model_dump(),
        "tau": result.tau,
        "applied_angle": result.applied_angle,
        "annulus": annulus.model_dump(),
    }
    # read back by `unwrap` so the turned frame is sampled on the annulus of the original one
    out.with_suffix(".json").write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    _emit(record)
    return 0


def _read_annulus(path: Path) -> Annulus:
    raw = json.loads(path.read_text(encoding="utf-8"))
    data = raw.get("annulus", raw) if isinstance(raw, dict) else raw
    if not isinstance(data, dict):
        raise ValueError(f"{path}: no annulus record")
    return Annulus.model_validate({k: data.get(k) for k in ("center", "r_min", "r_max")})


def cmd_unwrap(args: argparse.Namespace, config: PipelineConfig) -> int:
    img = load_gray(args.input)
    annulus_path = Path(args.annulus) if args.annulus else None
    if annulus_path is None:
        sidecar = Path(args.input).with_suffix(".json")
        if sidecar.exists() and "annulus" in json.loads(sidecar.read_text(encoding="utf-8")):
            annulus_path = sidecar
    if annulus_path is not None:
        spec = spec_for_annulus(img, _read_annulus(annulus_path), config.unwrap)
    else:
        spec = locate_unwrap_spec(img, config)
    out = save_gray(args.out, unwrap(img, spec))
    out.with_suffix(".json").write_text(spec_to_json(spec) + "\n", encoding="utf-8")
    _emit(spec.model_dump())
    return 0


def cmd_enhance(args: argparse.Namespace, config: PipelineConfig) -> int:
    save_gray(args.out, adaptive_hist_eq(load_gray(args.input), config.ahe))
    return 0


def cmd_match(args: argparse.Namespace, config: PipelineConfig) -> int:
    ka = detect_and_describe(load_gray(args.a), config.feature)
    kb = detect_and_describe(load_gray(args.b), config.feature)
    matches = match_ratio(ka.descriptors, kb.descriptors, config.feature.ratio)
    record: dict[str, Any] = {
        "keypoints_a": keypoints_to_records(ka),
        "keypoints_b": keypoints_to_records(kb),
        "matches": matches_to_records(matches),
        "ransac": None,
        "error": None,
    }
    try:
        result = ransac_estimate(matches, ka.xy, kb.xy, config.ransac.kind, config.ransac)
        record["ransac"] = result_to_record(result)
    except StageError as e:
        record["error"] = e.to_dict()
        logger.warning("no motion estimate: %s", e)
    Path(args.out).write_text(json.dumps(record, indent=2) + "\n", encoding="utf-8")
    _emit({"keypoints": [len(ka), len(kb)], "matches": len(matches),
           "valid_match_count": record["ransac"]["valid_match_count"] if record["ransac"] else 0})
    return 0


def cmd_stitch(args: argparse.Namespace, config: PipelineConfig) -> int:
    paths = sorted(Path(args.input).glob("*.png"))
    if len(paths) < 1:
        raise ValueError(f"no PNG strips in {args.input}")
    links_raw = json.loads(Path(args.matches).read_text(encoding="utf-8"))
    if isinstance(links_raw, dict):
        links_raw = links_raw.get("links", [])
    links = [None if rec is None else result_from_record(rec) for rec in links_raw]
    panoramas, breaks = compose_segments(
        [load_gray(p) for p in paths],
        links,
        min_inliers=config.ransac.min_inliers,
        cyclic=args.cyclic,
        frame_ids=[p.stem for p in paths],
    )
    out = Path(args.out)
    written = []
    for k, pano in enumerate(panoramas):
        target = out if len(panoramas) == 1 else out.with_name(f"{out.stem}_{k:02d}{out.suffix}")
        save_gray(target, pano.canvas)
        target.with_suffix(".json").write_text(json.dumps(panorama_to_record(pano), indent=2) + "\n", encoding="utf-8")
        written.append(str(target))
    _emit({"panoramas": written, "chain_breaks": [{"link_index": b.link_index, "reason": b.reason} for b in breaks]})
    return 0


def cmd_eval(args: argparse.Namespace, config: PipelineConfig) -> int:
    result = run_batch_eval(args.manifest_dir, config, args.out, threads=args.threads)
    _emit({"videos": result.videos, "skipped": result.skipped, "outputs": result.outputs})
    return 0


def cmd_report(args: argparse.Namespace, config: PipelineConfig) -> int:
    report = build_report(load_rows(args.rows), config.eval.reference, config.eval.alpha)
    paths = emit_report(report, args.out)
    _emit({k: str(v) for k, v in paths.items()})
    return 0


def cmd_pipeline(args: argparse.Namespace, config: PipelineConfig) -> int:
    result = run_pipeline(config, load_manifest(args.manifest), args.out, threads=args.threads)
    _emit(result.summary())
    return 0


def cmd_phantom(args: argparse.Namespace, config: PipelineConfig) -> int:
    params = PhantomParams(n_frames=args.frames, width=args.size, height=args.size)
    seed = args.seed if args.seed is not None else settings.default_seed
    manifests = generate_phantom_dataset(args.out, n_videos=args.videos, seed=seed, params=params)
    _emit({"manifests": [str(m) for m in manifests]})
    return 0


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON PipelineConfig file; flags override it")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: ANNUSTITCH_THREADS or CPU count)")
    p.add_argument("--seed", type=int, default=None, help="RANSAC / phantom seed")
    p.add_argument("--debug-dir", default=None, help="write masks, ellipse overlays and strips here")
    p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING ...")
    return p


def _ingest_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("keyframes")
    g.add_argument("--head-trim", help="seconds dropped at the start (default 3)")
    g.add_argument("--tail-trim", help="seconds dropped at the end (default 3)")
    g.add_argument("--stride", help="keep every n-th frame (default 5)")
    return p


def _depth_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("depth")
    g.add_argument("--depth-threshold", help="0..255 or 'otsu'; sets both thresholds below")
    g.add_argument("--rotation-threshold", help="0..255 or 'otsu' for the lumen ellipse")
    g.add_argument("--center-threshold", help="0..255 or 'otsu' for the deepest point")
    g.add_argument("--circle-ambiguity-ratio", help="skip rotation when a/b is below this (default 1.05)")
    return p


def _unwrap_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("unwrap")
    g.add_argument("--n-theta", help="angular samples or 'auto'")
    g.add_argument("--n-r", help="radial samples or 'auto'")
    g.add_argument("--r-min", help="inner radius override, px")
    g.add_argument("--r-max", help="outer radius override, px")
    g.add_argument("--theta-origin", help="angle of column 0, radians")
    return p


def _ahe_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("enhance")
    g.add_argument("--ahe-tiles", help="tile grid, e.g. 8x8")
    g.add_argument("--ahe-clip", help="clip limit or 'off'")
    g.add_argument("--ahe-bins", help="histogram bins (<= 256)")
    return p


def _feature_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("features")
    g.add_argument("--ratio", help="ratio-test bound (default 0.75)")
    g.add_argument("--contrast-threshold", help="DoG contrast threshold on [0, 1] (default 0.03)")
    g.add_argument("--edge-threshold", help="principal curvature ratio (default 10)")
    g.add_argument("--octaves", help="octaves (default 4)")
    g.add_argument("--scales-per-octave", help="scales per octave (default 3)")
    return p


def _ransac_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("ransac")
    g.add_argument("--model", help="translation or homography")
    g.add_argument("--ransac-iters", help="iterations (default 2000)")
    g.add_argument("--ransac-tol", help="inlier tolerance, px (default 3)")
    g.add_argument("--min-inliers", help="minimum consensus (default 4)")
    return p


def _eval_flags() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("evaluation")
    g.add_argument("--composite-source", help="ahe or original strips in the panorama")
    g.add_argument("--alpha", help="significance level (default 0.05)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="annustitch",
        description="Flatten, enhance and stitch tubular endoscopic frames; evaluate valid-match counts.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()
    ingest, depth, unwrap_f = _ingest_flags(), _depth_flags(), _unwrap_flags()
    ahe, feature, ransac, evalf = _ahe_flags(), _feature_flags(), _ransac_flags(), _eval_flags()
    everything = [common, ingest, depth, unwrap_f, ahe, feature, ransac, evalf]

    def add(name: str, handler: Callable, help_text: str, parents: list) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, parents=parents)
        p.set_defaults(handler=handler)
        return p

    p = add("keyframes", cmd_keyframes, "Select keyframes from a frame manifest.", [common, ingest])
    p.add_argument("--manifest", required=True)

    p = add("rotate", cmd_rotate, "Rotate a frame so the lumen ellipse's major axis is horizontal.", [common, depth, unwrap_f])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("unwrap", cmd_unwrap, "Unwrap the annulus around the deepest point into a strip.", [common, depth, unwrap_f])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annulus", help="JSON with center, r_min, r_max (default: the sidecar `rotate` wrote next to --input)")

    p = add("enhance", cmd_enhance, "Adaptive histogram equalization of a strip.", [common, ahe])
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = add("match", cmd_match, "Detect, match and RANSAC-filter features between two strips.", [common, feature, ransac])
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)

    p = add("stitch", cmd_stitch, "Composite strips into panoramas from pairwise RANSAC results.", [common, ransac])
    p.add_argument("--input", required=True, help="directory of strip PNGs, composited in name order")
    p.add_argument("--matches", required=True, help="JSON list of pairwise results (null for a missing link)")
    p.add_argument("--out", required=True)
    p.add_argument("--cyclic", action="store_true", help="wrap the angular axis")

    p = add("eval", cmd_eval, "Evaluate all three variants on every manifest under a directory.", everything)
    p.add_argument("--manifest-dir", required=True)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "Rebuild summary.csv and boxplot.svg from a report.csv.", [common, evalf])
    p.add_argument("--rows", required=True)
    p.add_argument("--out", required=True)

    p = add("pipeline", cmd_pipeline, "Run the full pipeline on one video manifest.", everything)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("phantom", cmd_phantom, "Write seeded synthetic tube videos with manifests.", [common])
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--frames", type=int, default=110)
    p.add_argument("--size", type=int, default=160)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or settings.log_level)
    if args.threads is None:
        args.threads = settings.threads
    try:
        config = load_config(args.config, overrides_from_args(args))
        return args.handler(args, config)
    except ConfigError as e:
        _emit(e.to_dict())
        return 2
    except StageError as e:
        logger.error("%s failed: %s", e.stage, e)
        _emit(e.to_dict())
        return 1
    except ValueError as e:
        _emit({"error": "UsageError", "message": str(e)})
        return 2


if __name__ == "__main__":
    sys.exit(main())
