#!/usr/bin/env python3
"""
Authenticity Detector

Decides whether a co-motion pattern comes from a real or a forged video.

Features:
- Anomaly detection: Jensen-Shannon distance to a template pooled from real rho matrices
- ROC sweep with trapezoidal AUC and accuracy at the Youden-optimal threshold
- Supervised detection: discrete AdaBoost over decision stumps on the 1275 pattern entries
- Template, model and score-report files

Fake is the positive class throughout: a positive margin or a high anomaly
score means "fake"; a zero margin is classified "real".
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from sklearn.base import clone
from sklearn.metrics import accuracy_score, auc, roc_curve
from sklearn.tree import DecisionTreeClassifier

from artifact_schema import read_artifact, write_artifact
from comotion_errors import DimensionMismatchError, EmptyInputError, SingleClassError
from comotion_pattern import (
    TRIANGLE_SIZE,
    CorrelationMatrix,
    NormalizedPattern,
    PatternConfig,
    WeightMode,
    accumulate,
    js_divergence,
    normalize,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

REAL = "real"
FAKE = "fake"
SCORE_COLUMNS = ["video_id", "score", "label"]
ROC_COLUMNS = ["fpr", "tpr", "threshold"]
_MAX_ALPHA_ERROR = 1e-10


class DetectorConfig(BaseModel):
    """Template pooling and boosting settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    template_sample_size: int = Field(3000, gt=0, description="rho matrices pooled into the real template")
    rounds: int = Field(100, gt=0, description="AdaBoost rounds T")


# ============================================================================
# ANOMALY DETECTION
# ============================================================================


@dataclass(frozen=True)
class RealTemplate:
    """Normalized pattern pooled from real-video correlation matrices."""

    pattern: NormalizedPattern
    source_count: int
    weight_mode: WeightMode = "ch"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.source_count < 1:
            raise EmptyInputError(f"Template needs at least one source, got {self.source_count}")


def _canonical_pool(rhos: Sequence[CorrelationMatrix]) -> List[CorrelationMatrix]:
    return sorted(rhos, key=lambda r: (r.video_id, r.pair_id, r.k, r.weight, r.rho.tobytes()))


def build_template(
    rhos: Sequence[CorrelationMatrix],
    sample_size: int = 3000,
    rng_seed: int = 0,
    config: Optional[PatternConfig] = None,
) -> RealTemplate:
    """
    Pool up to ``sample_size`` correlation matrices, drawn without replacement,
    into a real template.

    The pool is put in canonical order before sampling, so the template does
    not depend on the order the matrices were supplied in.
    """
    config = config or PatternConfig()
    if len(rhos) == 0:
        raise EmptyInputError("Cannot build a template from no correlation matrices")
    if sample_size < 1:
        raise EmptyInputError(f"sample_size must be >= 1, got {sample_size}")

    pool = _canonical_pool(rhos)
    if sample_size >= len(pool):
        chosen = pool
    else:
        rng = np.random.default_rng(rng_seed)
        picks = np.sort(rng.choice(len(pool), size=sample_size, replace=False))
        chosen = [pool[i] for i in picks]

    pattern = normalize(accumulate(chosen, config.weight_mode, video_id="template"), config.epsilon)
    logger.info(f"✅ Built real template from {len(chosen)} of {len(pool)} correlation matrices")
    return RealTemplate(pattern=pattern, source_count=len(chosen), weight_mode=config.weight_mode, epsilon=config.epsilon)


def anomaly_score(p: NormalizedPattern, t: RealTemplate) -> float:
    """JS divergence to the template; higher is more anomalous."""
    return js_divergence(p, t.pattern)


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered by decreasing threshold, fake = positive class."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    youden_threshold: float
    youden_accuracy: float

    @property
    def points(self) -> List[Tuple[float, float]]:
        return [(float(x), float(y)) for x, y in zip(self.fpr, self.tpr)]


def roc(scores_real: Sequence[float], scores_fake: Sequence[float]) -> RocCurve:
    """
    Sweep every distinct score as a threshold (score >= threshold means fake).

    Tied scores move the curve diagonally, so the trapezoidal AUC counts ties
    as one half, matching the Mann-Whitney statistic.
    """
    real = np.asarray(scores_real, dtype=np.float64).reshape(-1)
    fake = np.asarray(scores_fake, dtype=np.float64).reshape(-1)
    if real.size == 0 or fake.size == 0:
        raise EmptyInputError("ROC needs at least one real and one fake score")

    y_true = np.concatenate([np.zeros(real.size, dtype=np.int64), np.ones(fake.size, dtype=np.int64)])
    scores = np.concatenate([real, fake])
    fpr, tpr, thresholds = roc_curve(y_true, scores, pos_label=1, drop_intermediate=False)
    area = float(auc(fpr, tpr))

    # Accuracy at each operating point, best Youden J first among ties
    best = int(np.argmax(tpr - fpr))
    accuracy = (tpr[best] * fake.size + (1.0 - fpr[best]) * real.size) / (real.size + fake.size)
    return RocCurve(
        fpr=fpr,
        tpr=tpr,
        thresholds=thresholds,
        auc=area,
        youden_threshold=float(thresholds[best]),
        youden_accuracy=float(accuracy),
    )


def write_template(t: RealTemplate, path: PathLike) -> None:
    document = {
        "source_count": int(t.source_count),
        "weight_mode": t.weight_mode,
        "epsilon": float(t.epsilon),
        "p": [float(x) for x in t.pattern.p],
    }
    write_artifact("template", document, path)
    logger.info(f"✅ Wrote template ({t.source_count} sources) to {path}")


def read_template(path: PathLike) -> RealTemplate:
    document = read_artifact("template", path)
    pattern = NormalizedPattern(p=np.asarray(document["p"], dtype=np.float64), smoothed=document["epsilon"] > 0)
    return RealTemplate(
        pattern=pattern,
        source_count=int(document["source_count"]),
        weight_mode=document["weight_mode"],
        epsilon=float(document["epsilon"]),
    )


def write_score_report(rows: Iterable[Dict[str, Any]], path: PathLike) -> pd.DataFrame:
    """``video_id,score,label`` CSV, one row per scored pattern."""
    table = pd.DataFrame(list(rows), columns=SCORE_COLUMNS)
    table.to_csv(Path(path), index=False, lineterminator="\n")
    return table


def write_roc(curve: RocCurve, path: PathLike) -> None:
    table = pd.DataFrame({"fpr": curve.fpr, "tpr": curve.tpr, "threshold": curve.thresholds}, columns=ROC_COLUMNS)
    table.to_csv(Path(path), index=False, lineterminator="\n")


# ============================================================================
# SUPERVISED DETECTION
# ============================================================================


@dataclass(frozen=True)
class Stump:
    """One-feature threshold rule: ``polarity`` if x[feature] > threshold else ``-polarity``."""

    feature: int
    threshold: float
    polarity: int
    alpha: float

    def __post_init__(self):
        if not 0 <= self.feature < TRIANGLE_SIZE:
            raise DimensionMismatchError(f"Stump feature {self.feature} outside [0, {TRIANGLE_SIZE})")
        if self.polarity not in (-1, 1):
            raise DimensionMismatchError(f"Stump polarity must be +1 or -1, got {self.polarity}")
        if not np.isfinite(self.alpha):
            raise DimensionMismatchError(f"Stump alpha must be finite, got {self.alpha}")

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.where(X[:, self.feature] > self.threshold, self.polarity, -self.polarity)


@dataclass(frozen=True)
class StumpEnsemble:
    stumps: Tuple[Stump, ...] = ()

    @property
    def rounds(self) -> int:
        return len(self.stumps)

    def __add__(self, other: "StumpEnsemble") -> "StumpEnsemble":
        return StumpEnsemble(self.stumps + other.stumps)

    def truncated(self, rounds: int) -> "StumpEnsemble":
        return StumpEnsemble(self.stumps[:rounds])

    def margins(self, X: np.ndarray) -> np.ndarray:
        X = _design_matrix(X)
        out = np.zeros(X.shape[0])
        for s in self.stumps:
            out += s.alpha * s.predict(X)
        return out


@dataclass(frozen=True)
class Classification:
    label: str
    margin: float


def _design_matrix(X: Union[Sequence[NormalizedPattern], np.ndarray]) -> np.ndarray:
    if isinstance(X, np.ndarray):
        matrix = np.asarray(X, dtype=np.float64)
        if matrix.ndim == 1:
            matrix = matrix[None, :]
    else:
        matrix = np.stack([x.p if isinstance(x, NormalizedPattern) else np.asarray(x, dtype=np.float64) for x in X])
    if matrix.ndim != 2 or matrix.shape[1] != TRIANGLE_SIZE:
        raise DimensionMismatchError(f"Expected patterns with {TRIANGLE_SIZE} entries, got shape {matrix.shape}")
    return matrix


def signed_labels(y: Iterable[Union[str, int, bool]]) -> np.ndarray:
    """Map labels to +1 (fake) / -1 (real); accepts 'fake'/'real', 1/0 or booleans."""
    out = []
    for label in y:
        if isinstance(label, str):
            if label not in (REAL, FAKE):
                raise SingleClassError(f"Unknown label {label!r}; expected '{REAL}' or '{FAKE}'")
            out.append(1 if label == FAKE else -1)
        else:
            out.append(1 if int(label) > 0 else -1)
    return np.asarray(out, dtype=np.int64)


def _as_stump(tree: DecisionTreeClassifier, alpha: float) -> Optional[Stump]:
    """Read a depth-1 tree back as a Stump; None when the tree never split."""
    t = tree.tree_
    if t.node_count < 3:
        return None
    left = tree.classes_[int(np.argmax(t.value[t.children_left[0]]))]
    right = tree.classes_[int(np.argmax(t.value[t.children_right[0]]))]
    if left == right:
        return None
    return Stump(feature=int(t.feature[0]), threshold=float(t.threshold[0]), polarity=int(right), alpha=alpha)


def train_adaboost(
    X: Union[Sequence[NormalizedPattern], np.ndarray],
    y: Iterable[Union[str, int, bool]],
    rounds: int = 100,
    rng_seed: int = 0,
) -> StumpEnsemble:
    """
    Discrete AdaBoost with decision stumps.

    Each round fits a depth-1 tree to the weighted sample (thresholds at
    midpoints between observed values), weights it by
    alpha = 0.5 * ln((1 - err) / err) and reweights samples by exp(-y * F).
    Training stops when a stump has weighted error >= 0.5, never splits,
    or classifies the sample perfectly.
    """
    X = _design_matrix(X)
    y = signed_labels(y)
    if y.shape[0] != X.shape[0]:
        raise DimensionMismatchError(f"{X.shape[0]} patterns but {y.shape[0]} labels")
    if len(np.unique(y)) < 2:
        raise SingleClassError("Training data must contain both real and fake patterns")

    n = X.shape[0]
    weights = np.full(n, 1.0 / n)
    F = np.zeros(n)
    base = DecisionTreeClassifier(max_depth=1, random_state=rng_seed)
    stumps: List[Stump] = []

    for round_ in range(rounds):
        tree = clone(base).fit(X, y, sample_weight=weights)
        candidate = _as_stump(tree, alpha=0.0)
        if candidate is None:
            logger.debug(f"Round {round_}: no informative split, stopping")
            break
        pred = candidate.predict(X)
        err = 1.0 - accuracy_score(y, pred, sample_weight=weights)
        if err >= 0.5:
            logger.debug(f"Round {round_}: weighted error {err:.4f} >= 0.5, stopping")
            break

        alpha = 0.5 * np.log((1.0 - err) / max(err, _MAX_ALPHA_ERROR))
        stumps.append(Stump(candidate.feature, candidate.threshold, candidate.polarity, float(alpha)))
        if err <= 0.0:
            break

        F += alpha * pred
        weights = np.exp(-y * F)
        weights /= weights.sum()

    ensemble = StumpEnsemble(tuple(stumps))
    logger.info(f"✅ Trained AdaBoost: {ensemble.rounds} stump(s) on {n} patterns")
    return ensemble


def classify(e: StumpEnsemble, p: NormalizedPattern) -> Classification:
    margin = float(e.margins(p.p)[0])
    return Classification(label=FAKE if margin > 0 else REAL, margin=margin)


def predict_labels(e: StumpEnsemble, X: Union[Sequence[NormalizedPattern], np.ndarray]) -> np.ndarray:
    """+1 (fake) / -1 (real) for each row."""
    return np.where(e.margins(X) > 0, 1, -1)


def ensemble_accuracy(e: StumpEnsemble, X, y) -> float:
    return float(accuracy_score(signed_labels(y), predict_labels(e, X)))


def exponential_loss(e: StumpEnsemble, X, y) -> float:
    """Mean of exp(-y * margin); the quantity each boosting round reduces."""
    return float(np.mean(np.exp(-signed_labels(y) * e.margins(X))))


def write_model(
    e: StumpEnsemble, path: PathLike, weight_mode: WeightMode = "ch", epsilon: float = 1e-8
) -> Dict[str, Any]:
    document = {
        "model": "adaboost-stumps",
        "rounds": e.rounds,
        "weight_mode": weight_mode,
        "epsilon": float(epsilon),
        "stumps": [
            {"feature": s.feature, "threshold": s.threshold, "polarity": s.polarity, "alpha": s.alpha}
            for s in e.stumps
        ],
    }
    write_artifact("model", document, path)
    logger.info(f"✅ Wrote model ({e.rounds} stumps) to {path}")
    return document


def read_model(path: PathLike) -> StumpEnsemble:
    document = read_artifact("model", path)
    stumps = tuple(
        Stump(int(s["feature"]), float(s["threshold"]), int(s["polarity"]), float(s["alpha"]))
        for s in document["stumps"]
    )
    if len(stumps) != document["rounds"]:
        logger.warning(f"⚠️  {Path(path).name}: rounds={document['rounds']} but {len(stumps)} stumps")
    return StumpEnsemble(stumps)
