#!/usr/bin/env python3
"""
Co-motion Pipeline

Pair-level orchestration from frames (or flow, or known motion) to correlation
matrices and patterns, plus the synthetic benchmark.

Pair work fans out over a thread pool; ``Executor.map`` returns results in
submission order, so every reduction runs in pair-index order and outputs do
not depend on the thread count.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import pandas as pd

from artifact_schema import write_artifact
from authenticity_detector import (
    anomaly_score,
    build_template,
    ensemble_accuracy,
    roc,
    train_adaboost,
    write_model,
    write_score_report,
)
from comotion_errors import DimensionMismatchError, EmptyInputError, NoSurvivingPairsError
from comotion_pattern import (
    CoMotionPattern,
    CorrelationMatrix,
    NormalizedPattern,
    accumulate,
    correlation_matrix,
    normalize,
    pattern_difference,
    write_heatmap,
    write_pattern,
)
from flow_io import flow_file_name, list_indexed_files, read_flo, read_pgm, write_flo
from landmark_tracks import LandmarkTrack
from motion_features import MotionFeatureSet, extract_features
from motion_grouping import GroupingConfig, Partition, best_partition
from optical_flow_solver import FlowField, estimate_flow
from pipeline_config import PipelineConfig
from synthetic_faces import FaceModel, generate_track

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
T = TypeVar("T")
R = TypeVar("R")

DEFAULT_BUDGETS = (1, 10, 35, 70)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """Ordered map over ``items``, threaded when ``threads > 1``."""
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ============================================================================
# FLOW
# ============================================================================


def consecutive_frame_pairs(frames_dir: PathLike) -> List[Tuple[Tuple[int, Path], Tuple[int, Path]]]:
    """Frame files paired by consecutive index; a gap in numbering breaks the chain."""
    files = list_indexed_files(frames_dir, ".pgm")
    if len(files) < 2:
        raise EmptyInputError(f"{frames_dir}: need at least 2 PGM frames, found {len(files)}")
    return [(a, b) for a, b in zip(files, files[1:]) if b[0] == a[0] + 1]


def compute_flows(frames_dir: PathLike, config: PipelineConfig) -> Dict[int, FlowField]:
    """Flow of every consecutive frame pair, keyed by the first frame index."""
    pairs = consecutive_frame_pairs(frames_dir)

    def solve(pair):
        (i, path_a), (_, path_b) = pair
        return i, estimate_flow(read_pgm(path_a), read_pgm(path_b), config.flow)

    started = time.perf_counter()
    flows = dict(parallel_map(solve, pairs, config.threads))
    logger.info(f"📊 Estimated {len(flows)} flow fields in {time.perf_counter() - started:.1f}s")
    return flows


def write_flows(flows: Dict[int, FlowField], out_dir: PathLike) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for index in sorted(flows):
        path = out_dir / flow_file_name(index)
        write_flo(flows[index], path)
        paths.append(path)
    return paths


def read_flows(flow_dir: PathLike) -> Dict[int, FlowField]:
    return {index: read_flo(path) for index, path in list_indexed_files(flow_dir, ".flo")}


def motions_from_flows(
    flows: Dict[int, FlowField], track: LandmarkTrack, config: PipelineConfig
) -> List[MotionFeatureSet]:
    """Motion features for every flow whose first frame has landmarks."""
    frames = track.by_index()
    usable = [i for i in sorted(flows) if i in frames]
    missing = len(flows) - len(usable)
    if missing:
        logger.warning(f"⚠️  {track.video_id}: {missing} flow field(s) without landmarks skipped")
    return parallel_map(
        lambda i: extract_features(flows[i], frames[i], config.gate, pair_id=(i, i + 1)),
        usable,
        config.threads,
    )


# ============================================================================
# CORRELATION MATRICES AND PATTERNS
# ============================================================================


@dataclass
class PairSummary:
    """Correlation matrices of the gated pairs of one video plus pair counts."""

    video_id: str
    rhos: List[CorrelationMatrix] = field(default_factory=list)
    pairs_total: int = 0
    pairs_gated: int = 0
    partitions: List[Tuple[Tuple[int, int], Partition]] = field(default_factory=list)


def correlations_from_motion(
    motions: Sequence[MotionFeatureSet],
    config: PipelineConfig,
    video_id: str,
    limit: Optional[int] = None,
    grouping: Optional[GroupingConfig] = None,
) -> PairSummary:
    """
    Group every pair that passes the magnitude gate and build its correlation
    matrix. ``limit`` stops after that many surviving pairs (in pair order).
    """
    grouping = grouping or config.seeded_grouping()
    ordered = sorted(motions, key=lambda m: m.pair_id)
    survivors = [m for m in ordered if m.passes_gate]
    if limit is not None:
        survivors = survivors[:limit]

    partitions = parallel_map(lambda m: best_partition(m, grouping), survivors, config.threads)
    rhos = [correlation_matrix(part, m.pair_id, video_id) for m, part in zip(survivors, partitions)]
    summary = PairSummary(
        video_id=video_id,
        rhos=rhos,
        pairs_total=len(ordered),
        pairs_gated=sum(not m.passes_gate for m in ordered),
        partitions=[(m.pair_id, part) for m, part in zip(survivors, partitions)],
    )
    logger.debug(
        f"{video_id}: {summary.pairs_total} pairs, {summary.pairs_gated} gated, {len(rhos)} grouped"
    )
    return summary


def select_rhos(
    rhos: Sequence[CorrelationMatrix], n: int, sample_rho: str = "contiguous", rng_seed: int = 0
) -> List[CorrelationMatrix]:
    """The first ``n`` matrices in pair order, or ``n`` drawn at random without replacement."""
    ordered = sorted(rhos, key=lambda r: r.pair_id)
    if n >= len(ordered):
        return ordered
    if sample_rho == "random":
        picks = np.sort(np.random.default_rng(rng_seed).choice(len(ordered), size=n, replace=False))
        return [ordered[i] for i in picks]
    return ordered[:n]


def pattern_from_summary(summary: PairSummary, config: PipelineConfig) -> Tuple[CoMotionPattern, Dict[str, Any]]:
    """Pattern of up to N surviving pairs plus the sidecar fields describing it."""
    if not summary.rhos:
        raise NoSurvivingPairsError(
            f"{summary.video_id}: zero surviving pairs ({summary.pairs_gated} of {summary.pairs_total} gated)"
        )
    chosen = select_rhos(
        summary.rhos, config.n_pairs, config.sample_rho, config.stage_seed("sampling")
    )
    if len(chosen) < config.n_pairs:
        logger.warning(
            f"⚠️  {summary.video_id}: only {len(chosen)} surviving pairs for N={config.n_pairs}; using all"
        )
    pattern = accumulate(chosen, config.pattern.weight_mode, video_id=summary.video_id)
    extra = {
        "n_requested": config.n_pairs,
        "sample_rho": config.sample_rho,
        "pairs_total": summary.pairs_total,
        "pairs_used": len(chosen),
        "pairs_gated": summary.pairs_gated,
    }
    return pattern, extra


# ============================================================================
# SYNTHETIC BENCHMARK
# ============================================================================


@dataclass
class SyntheticVideo:
    video_id: str
    label: str
    rhos: List[CorrelationMatrix]


def synthesize_videos(
    config: PipelineConfig, tracks_per_class: int, max_pairs: int, model: Optional[FaceModel] = None
) -> List[SyntheticVideo]:
    """
    Generate real_like and fake_like tracks and group their ground-truth motion.

    Only the first ``max_pairs`` surviving pairs of each track are grouped;
    every smaller budget reuses a prefix of them.
    """
    model = model or FaceModel.default()
    grouping = config.seeded_grouping()
    videos = []
    for class_index, (mode, label) in enumerate((("real_like", "real"), ("fake_like", "fake"))):
        for i in range(tracks_per_class):
            synth = config.synth.model_copy(
                update={"mode": mode, "rng_seed": config.stage_seed("synth", class_index, i)}
            )
            video_id = f"{label}_{i:04d}"
            _, motions = generate_track(model, synth, video_id=video_id, gate=config.gate)
            summary = correlations_from_motion(motions, config, video_id, limit=max_pairs, grouping=grouping)
            if not summary.rhos:
                logger.warning(f"⚠️  {video_id}: zero surviving pairs, skipped")
                continue
            videos.append(SyntheticVideo(video_id, label, summary.rhos))
    logger.info(f"✅ Synthesized {len(videos)} videos ({tracks_per_class} per class requested)")
    return videos


def _split(videos: Sequence[SyntheticVideo]) -> Tuple[List[SyntheticVideo], List[SyntheticVideo]]:
    """Alternate videos of each class between train and test."""
    train, test = [], []
    for label in ("real", "fake"):
        members = [v for v in videos if v.label == label]
        train.extend(members[0::2])
        test.extend(members[1::2])
    return train, test


def _patterns(videos: Sequence[SyntheticVideo], n: int, config: PipelineConfig) -> List[NormalizedPattern]:
    return [
        normalize(accumulate(v.rhos[:n], config.pattern.weight_mode, video_id=v.video_id), config.pattern.epsilon)
        for v in videos
    ]


def _class_difference(videos: Sequence[SyntheticVideo], n: int, config: PipelineConfig) -> np.ndarray:
    """Mean real pattern minus mean fake pattern as a landmark x landmark matrix."""
    patterns = _patterns(videos, n, config)
    means = [
        NormalizedPattern(np.mean([p.p for p, v in zip(patterns, videos) if v.label == label], axis=0))
        for label in ("real", "fake")
    ]
    return pattern_difference(*means)


def run_benchmark(
    config: PipelineConfig,
    tracks_per_class: int = 200,
    budgets: Iterable[int] = DEFAULT_BUDGETS,
    out_dir: Optional[PathLike] = None,
) -> Dict[str, Any]:
    """
    Synthetic detection benchmark.

    For every budget N: anomaly AUC and Youden accuracy of held-out patterns
    against a template pooled from training real rho matrices, and held-out
    accuracy of an AdaBoost model trained on the training patterns.

    Returns:
        Report document (see the ``benchmark_report`` schema)
    """
    budgets = sorted(set(int(b) for b in budgets))
    if not budgets or budgets[0] < 1:
        raise EmptyInputError(f"Budgets must be positive, got {budgets}")
    if tracks_per_class < 2:
        raise DimensionMismatchError("The benchmark needs at least 2 tracks per class")

    started = time.perf_counter()
    videos = synthesize_videos(config, tracks_per_class, budgets[-1])
    train, test = _split(videos)
    if {v.label for v in train} != {"real", "fake"} or {v.label for v in test} != {"real", "fake"}:
        raise NoSurvivingPairsError("Too few synthetic videos survived the magnitude gate")

    template = build_template(
        [r for v in train if v.label == "real" for r in v.rhos],
        config.detector.template_sample_size,
        config.stage_seed("template"),
        config.pattern,
    )
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for n in budgets:
        test_patterns = _patterns(test, n, config)
        scores = [anomaly_score(p, template) for p in test_patterns]
        curve = roc(
            [s for s, v in zip(scores, test) if v.label == "real"],
            [s for s, v in zip(scores, test) if v.label == "fake"],
        )
        model = train_adaboost(
            _patterns(train, n, config), [v.label for v in train], config.detector.rounds, config.stage_seed("adaboost")
        )
        accuracy = ensemble_accuracy(model, np.stack([p.p for p in test_patterns]), [v.label for v in test])
        rows.append(
            {
                "N": n,
                "anomaly_auc": curve.auc,
                "anomaly_accuracy": curve.youden_accuracy,
                "classification_accuracy": accuracy,
            }
        )
        logger.info(
            f"📊 N={n}: anomaly AUC {curve.auc:.4f}, anomaly accuracy {curve.youden_accuracy:.4f}, "
            f"AdaBoost accuracy {accuracy:.4f}"
        )
        if out_dir is not None:
            write_score_report(
                ({"video_id": v.video_id, "score": s, "label": v.label} for v, s in zip(test, scores)),
                out_dir / f"scores_N{n}.csv",
            )
            write_model(model, out_dir / f"model_N{n}.json", config.pattern.weight_mode, config.pattern.epsilon)

    report = {
        "seed": config.seed,
        "tracks_per_class": tracks_per_class,
        "budgets": budgets,
        "videos_used": len(videos),
        "train_videos": len(train),
        "test_videos": len(test),
        "rows": rows,
    }
    if out_dir is not None:
        write_artifact("benchmark_report", report, out_dir / "report.json")
        pd.DataFrame(rows).to_csv(out_dir / "report.csv", index=False, lineterminator="\n")
        for v in test:
            pattern = accumulate(v.rhos[: budgets[-1]], config.pattern.weight_mode, video_id=v.video_id)
            pattern_dir = out_dir / "patterns"
            pattern_dir.mkdir(exist_ok=True)
            write_pattern(pattern, pattern_dir / f"{v.video_id}.csv", {"label": v.label, "pairs_used": pattern.pair_count})
        write_heatmap(_class_difference(test, budgets[-1], config), out_dir / f"difference_N{budgets[-1]}.pgm")
    logger.info(f"✅ Benchmark finished in {time.perf_counter() - started:.1f}s")
    return report
