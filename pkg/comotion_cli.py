#!/usr/bin/env python3
"""
Co-motion command line.

Subcommands:
- flow      optical flow for every consecutive frame pair
- pattern   co-motion pattern of one video (frames, flow or known motion)
- detect    anomaly scores against a real template, optional ROC
- train     AdaBoost model from labeled patterns
- classify  apply a trained model
- synth     synthetic labeled videos
- report    end-to-end synthetic benchmark

Every command function returns a status dictionary. ``main`` prints successful
results as JSON and failures as a single ``ERROR[<code>]: <message>`` line on
stderr with exit code 1.
"""

import argparse
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from authenticity_detector import (
    FAKE,
    REAL,
    anomaly_score,
    build_template,
    classify,
    read_model,
    read_template,
    roc,
    train_adaboost,
    write_model,
    write_roc,
    write_score_report,
    write_template,
)
from comotion_errors import ComotionError, ConfigError, EmptyInputError, MissingInputError, SingleClassError
from comotion_pattern import (
    CorrelationMatrix,
    NormalizedPattern,
    convergence_curve,
    load_rho_archive,
    normalize,
    read_pattern,
    save_rho_archive,
    write_heatmap,
    write_pattern,
)
from comotion_pipeline import (
    DEFAULT_BUDGETS,
    compute_flows,
    correlations_from_motion,
    motions_from_flows,
    pattern_from_summary,
    read_flows,
    run_benchmark,
    write_flows,
)
from landmark_tracks import read_track
from motion_features import read_feature_dump, write_feature_dump
from motion_grouping import write_partition_dump
from pipeline_config import PipelineConfig, load_pipeline_config
from synthetic_faces import FaceModel, generate_track, render_frames, write_synthetic_video

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> None:
    """Configure the root logger once: stderr console plus an optional log file."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode="a"))
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, handlers=handlers, force=True)


def returns_status(fn: Callable[..., Dict[str, Any]]) -> Callable[..., Dict[str, Any]]:
    """Turn pipeline errors raised by a command into error status dictionaries."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ComotionError as e:
            logger.error(f"❌ {fn.__name__}: {e}")
            return e.to_status()
        except OSError as e:
            logger.error(f"❌ {fn.__name__}: {e}")
            return {"status": "error", "error_code": MissingInputError.error_code, "error_message": str(e)}

    return wrapper


def _pattern_files(inputs: Sequence[str]) -> List[Path]:
    """Pattern CSVs named directly or found in directories, in sorted order."""
    files: List[Path] = []
    for item in inputs:
        path = Path(item)
        if path.is_dir():
            files.extend(sorted(path.glob("*.csv")))
        elif path.is_file():
            files.append(path)
        else:
            raise MissingInputError(f"Pattern input not found: {path}")
    if not files:
        raise EmptyInputError("No pattern files given")
    return files


def _load_patterns(inputs: Sequence[str], config: PipelineConfig) -> List[Tuple[str, NormalizedPattern, str]]:
    """(video_id, normalized pattern, sidecar label) for every pattern file."""
    loaded = []
    for path in _pattern_files(inputs):
        pattern, sidecar = read_pattern(path)
        loaded.append((sidecar["video_id"], normalize(pattern, config.pattern.epsilon), sidecar.get("label", "unknown")))
    return loaded


# ============================================================================
# COMMANDS
# ============================================================================


@returns_status
def cmd_flow(frames_dir: str, out_dir: str, config: PipelineConfig) -> Dict[str, Any]:
    """Write one ``.flo`` file per consecutive frame pair."""
    flows = compute_flows(frames_dir, config)
    paths = write_flows(flows, out_dir)
    logger.info(f"✅ Wrote {len(paths)} flow files to {out_dir}")
    return {"status": "success", "pairs": len(paths), "out_dir": str(out_dir)}


@returns_status
def cmd_pattern(
    out_csv: str,
    config: PipelineConfig,
    landmarks_csv: Optional[str] = None,
    frames_dir: Optional[str] = None,
    flow_dir: Optional[str] = None,
    motion_csv: Optional[str] = None,
    heatmap: Optional[str] = None,
    rho_out: Optional[str] = None,
    feature_dump: Optional[str] = None,
    video_id: Optional[str] = None,
    label: Optional[str] = None,
    convergence_out: Optional[str] = None,
    partitions_out: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Co-motion pattern of one video.

    Motion comes from exactly one source: PGM frames (flow is estimated),
    precomputed ``.flo`` files, or a ground-truth motion CSV.
    """
    sources = [s for s in (frames_dir, flow_dir, motion_csv) if s]
    if len(sources) != 1:
        raise ConfigError("Give exactly one of --frames, --flow or --motion")

    if motion_csv:
        motions = read_feature_dump(motion_csv, config.gate)
        video_id = video_id or (Path(landmarks_csv).stem if landmarks_csv else Path(motion_csv).parent.name)
    else:
        if not landmarks_csv:
            raise MissingInputError("--landmarks is required with --frames or --flow")
        track = read_track(landmarks_csv, config.landmark_count, video_id=video_id)
        video_id = track.video_id
        flows = compute_flows(frames_dir, config) if frames_dir else read_flows(flow_dir)
        motions = motions_from_flows(flows, track, config)
        if feature_dump:
            write_feature_dump(motions, feature_dump)

    summary = correlations_from_motion(motions, config, video_id)
    pattern, extra = pattern_from_summary(summary, config)
    if label:
        extra["label"] = label
    sidecar = write_pattern(pattern, out_csv, extra)
    if heatmap:
        write_heatmap(pattern.mean_matrix(), heatmap)
    if rho_out:
        save_rho_archive(summary.rhos, rho_out)
    if partitions_out:
        write_partition_dump(summary.partitions, partitions_out)
    if convergence_out:
        budgets = sorted(set(DEFAULT_BUDGETS) | {config.n_pairs})
        curve = convergence_curve(summary.rhos, budgets, config=config.pattern)
        pd.DataFrame(curve, columns=["N", "pairs_used", "js"]).to_csv(convergence_out, index=False, lineterminator="\n")
    return {"status": "success", "pattern": str(out_csv), **sidecar}


@returns_status
def cmd_detect(
    patterns: Sequence[str],
    config: PipelineConfig,
    template_path: Optional[str] = None,
    build_from: Optional[Sequence[str]] = None,
    template_out: Optional[str] = None,
    threshold: Optional[float] = None,
    roc_out: Optional[str] = None,
    report_out: Optional[str] = None,
) -> Dict[str, Any]:
    """
    Score patterns by JS divergence to a real template.

    The score report's label column holds the thresholded decision when a
    threshold is given, otherwise the label recorded in each pattern's sidecar.
    """
    if template_path:
        template = read_template(template_path)
    elif build_from:
        rhos: List[CorrelationMatrix] = []
        for archive in build_from:
            rhos.extend(load_rho_archive(archive))
        template = build_template(rhos, config.detector.template_sample_size, config.stage_seed("template"), config.pattern)
    else:
        raise MissingInputError("A template (--template) or rho archives (--build-template) are required")
    if template_out:
        write_template(template, template_out)

    loaded = _load_patterns(patterns, config)
    rows = []
    for video_id, p, known in loaded:
        score = anomaly_score(p, template)
        decision = (FAKE if score >= threshold else REAL) if threshold is not None else known
        rows.append({"video_id": video_id, "score": score, "label": decision})
    if report_out:
        write_score_report(rows, report_out)

    result: Dict[str, Any] = {"status": "success", "patterns": len(rows), "template_sources": template.source_count}
    if threshold is not None:
        result["flagged_fake"] = sum(r["label"] == FAKE for r in rows)

    real = [r["score"] for r, (_, _, known) in zip(rows, loaded) if known == REAL]
    fake = [r["score"] for r, (_, _, known) in zip(rows, loaded) if known == FAKE]
    if roc_out and not (real and fake):
        raise SingleClassError("ROC needs patterns labeled both real and fake")
    if real and fake:
        curve = roc(real, fake)
        result.update({"auc": curve.auc, "youden_accuracy": curve.youden_accuracy, "youden_threshold": curve.youden_threshold})
        if roc_out:
            write_roc(curve, roc_out)
        logger.info(f"📊 AUC {curve.auc:.4f} over {len(real)} real / {len(fake)} fake patterns")
    return result


@returns_status
def cmd_train(real: Sequence[str], fake: Sequence[str], model_out: str, config: PipelineConfig) -> Dict[str, Any]:
    """Train an AdaBoost model; fake patterns are the positive class."""
    if not real and not fake:
        raise EmptyInputError("No training patterns given")
    real_patterns = _load_patterns(real, config) if real else []
    fake_patterns = _load_patterns(fake, config) if fake else []
    X = np.stack([p.p for _, p, _ in real_patterns + fake_patterns])
    y = [REAL] * len(real_patterns) + [FAKE] * len(fake_patterns)
    model = train_adaboost(X, y, config.detector.rounds, config.stage_seed("adaboost"))
    write_model(model, model_out, config.pattern.weight_mode, config.pattern.epsilon)
    accuracy = float(np.mean([(m > 0) == (label == FAKE) for m, label in zip(model.margins(X), y)]))
    return {"status": "success", "model": str(model_out), "rounds": model.rounds, "training_accuracy": accuracy}


@returns_status
def cmd_classify(
    model_path: str,
    patterns: Sequence[str],
    config: PipelineConfig,
    report_out: Optional[str] = None,
) -> Dict[str, Any]:
    """Classify patterns; accuracy is reported over those whose sidecar carries a label."""
    model = read_model(model_path)
    rows, correct, labeled = [], 0, 0
    for video_id, p, known in _load_patterns(patterns, config):
        outcome = classify(model, p)
        rows.append({"video_id": video_id, "score": outcome.margin, "label": outcome.label})
        if known in (REAL, FAKE):
            labeled += 1
            correct += outcome.label == known
    if report_out:
        write_score_report(rows, report_out)
    result: Dict[str, Any] = {"status": "success", "patterns": len(rows), "fake": sum(r["label"] == FAKE for r in rows)}
    if labeled:
        result["accuracy"] = correct / labeled
        logger.info(f"📊 Accuracy {correct}/{labeled}")
    return result


@returns_status
def cmd_synth(
    out_dir: str,
    config: PipelineConfig,
    count: int = 1,
    mode: Optional[str] = None,
    render: bool = False,
    frame_noise: float = 0.0,
) -> Dict[str, Any]:
    """Write synthetic videos: landmark CSV (51 points), motion CSV and optional frames."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    mode = mode or config.synth.mode
    class_index = 0 if mode == "real_like" else 1
    model = FaceModel.default()
    videos = []
    for i in range(count):
        synth = config.synth.model_copy(update={"mode": mode, "rng_seed": config.stage_seed("synth", class_index, i)})
        video_id = f"{'real' if mode == 'real_like' else 'fake'}_{i:04d}"
        track, motions = generate_track(model, synth, video_id=video_id, gate=config.gate)
        frames = (
            render_frames(track, texture_seed=config.stage_seed("synth", 2, i), noise_sigma=frame_noise)
            if render
            else None
        )
        write_synthetic_video(Path(out_dir) / video_id, track, motions, frames)
        videos.append(video_id)
    return {"status": "success", "out_dir": str(out_dir), "videos": videos, "mode": mode}


@returns_status
def cmd_report(
    out_dir: str, config: PipelineConfig, tracks_per_class: int = 200, budgets: Sequence[int] = DEFAULT_BUDGETS
) -> Dict[str, Any]:
    report = run_benchmark(config, tracks_per_class, budgets, out_dir)
    return {"status": "success", "out_dir": str(out_dir), **report}


# ============================================================================
# ARGUMENT PARSING
# ============================================================================


class CliParser(argparse.ArgumentParser):
    """Argument parser whose usage errors surface as ConfigError instead of exiting."""

    def error(self, message: str):
        raise ConfigError(f"{self.prog}: {' '.join(message.split())}")


def _common_options() -> argparse.ArgumentParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", help="Flat key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--n-pairs", type=int, help="rho matrices per pattern (N)")
    common.add_argument("--weight-mode", choices=["ch", "k-times-ch"])
    common.add_argument("--sample-rho", choices=["contiguous", "random"])
    common.add_argument("--landmark-count", type=int, choices=[51, 68])
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Any config key")
    common.add_argument("--log-level", default="INFO")
    common.add_argument("--log-file")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = CliParser(prog="comotion", description="Co-motion pattern deepfake detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", parents=[common], help="Optical flow for consecutive frames")
    p.add_argument("--frames", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pattern", parents=[common], help="Co-motion pattern of one video")
    p.add_argument("--landmarks")
    p.add_argument("--frames")
    p.add_argument("--flow")
    p.add_argument("--motion", help="Ground-truth motion CSV (pair,landmark,u,v,magnitude)")
    p.add_argument("--out", required=True)
    p.add_argument("--heatmap")
    p.add_argument("--rho-out")
    p.add_argument("--feature-dump")
    p.add_argument("--video-id")
    p.add_argument("--label", choices=[REAL, FAKE])
    p.add_argument("--convergence", help="CSV of JS distance to the full pattern for growing N")
    p.add_argument("--partitions", help="JSON dump of the chosen grouping of every surviving pair")

    p = sub.add_parser("detect", parents=[common], help="Anomaly scores against a real template")
    p.add_argument("patterns", nargs="+")
    p.add_argument("--template")
    p.add_argument("--build-template", nargs="+", metavar="RHO_ARCHIVE")
    p.add_argument("--template-out")
    p.add_argument("--threshold", type=float)
    p.add_argument("--roc")
    p.add_argument("--out")

    p = sub.add_parser("train", parents=[common], help="Train an AdaBoost model")
    p.add_argument("--real", nargs="+", default=[])
    p.add_argument("--fake", nargs="+", default=[])
    p.add_argument("--model-out", required=True)

    p = sub.add_parser("classify", parents=[common], help="Apply a trained model")
    p.add_argument("patterns", nargs="+")
    p.add_argument("--model", required=True)
    p.add_argument("--out")

    p = sub.add_parser("synth", parents=[common], help="Synthetic labeled videos")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--mode", choices=["real_like", "fake_like"])
    p.add_argument("--render", action="store_true", help="Also render PGM frames")
    p.add_argument("--frame-noise", type=float, default=0.0, help="Frame noise std, 8-bit units")

    p = sub.add_parser("report", parents=[common], help="Synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--tracks-per-class", type=int, default=200)
    p.add_argument("--budgets", type=int, nargs="+", default=list(DEFAULT_BUDGETS))
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides: Dict[str, Any] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key] = value
    for key in ("seed", "threads", "n_pairs", "weight_mode", "sample_rho", "landmark_count"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    return load_pipeline_config(args.config, overrides)


def dispatch(args: argparse.Namespace, config: PipelineConfig) -> Dict[str, Any]:
    if args.command == "flow":
        return cmd_flow(args.frames, args.out, config)
    if args.command == "pattern":
        return cmd_pattern(
            args.out,
            config,
            landmarks_csv=args.landmarks,
            frames_dir=args.frames,
            flow_dir=args.flow,
            motion_csv=args.motion,
            heatmap=args.heatmap,
            rho_out=args.rho_out,
            feature_dump=args.feature_dump,
            video_id=args.video_id,
            label=args.label,
            convergence_out=args.convergence,
            partitions_out=args.partitions,
        )
    if args.command == "detect":
        return cmd_detect(
            args.patterns,
            config,
            template_path=args.template,
            build_from=args.build_template,
            template_out=args.template_out,
            threshold=args.threshold,
            roc_out=args.roc,
            report_out=args.out,
        )
    if args.command == "train":
        return cmd_train(args.real, args.fake, args.model_out, config)
    if args.command == "classify":
        return cmd_classify(args.model, args.patterns, config, report_out=args.out)
    if args.command == "synth":
        return cmd_synth(args.out, config, args.count, args.mode, args.render, args.frame_noise)
    return cmd_report(args.out, config, args.tracks_per_class, args.budgets)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        setup_logging(args.log_level, args.log_file)
        config = config_from_args(args)
    except ComotionError as e:
        result = e.to_status()
    else:
        result = dispatch(args, config)

    if result.get("status") != "success":
        print(f"ERROR[{result.get('error_code', 'E_UNKNOWN')}]: {result.get('error_message', '')}", file=sys.stderr)
        return 1
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
