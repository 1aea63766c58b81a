"""Score calibration for the sync branch and parameter-free average-logit fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

BRANCHES = ("FB", "LB", "LFB", "AV")
DEFAULT_EPSILON = 1e-3
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class CalibrationParams:
    score_min: float
    score_max: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.score_min > self.score_max:
            raise DataError("score_min > score_max")
        if not (0.0 < self.epsilon <= 0.1):
            raise DataError("epsilon must be in (0, 0.1]")

    @property
    def degenerate(self) -> bool:
        return self.score_min == self.score_max


@dataclass(frozen=True)
class FusedPrediction:
    video_id: str
    p_final: float
    label: str  # "real" | "fake"
    threshold: float


def fit_minmax(av_scores, epsilon: float = DEFAULT_EPSILON) -> CalibrationParams:
    """Population extrema of the raw sync scores; min == max is flagged."""
    scores = np.asarray(list(av_scores), dtype=np.float64)
    if scores.size == 0:
        raise DataError("cannot fit calibration on an empty population")
    return CalibrationParams(float(scores.min()), float(scores.max()), epsilon)


def calibrate(av_raw: float, params: CalibrationParams) -> float:
    """Min-max scale to [0, 1], then clamp to [eps, 1 - eps].

    A degenerate population maps every input to 0.5. Strictly order-preserving
    away from the clamp boundaries.
    """
    if params.degenerate:
        return 0.5
    m = (av_raw - params.score_min) / (params.score_max - params.score_min)
    m = min(max(m, 0.0), 1.0)
    return min(max(m, params.epsilon), 1.0 - params.epsilon)


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def fuse(p_fb: float, p_lb: float, p_lfb: float, p_av: float,
         epsilon: float = DEFAULT_EPSILON) -> float:
    """sigmoid of the mean branch logit; symmetric and strictly increasing in
    each argument."""
    ps = np.clip([p_fb, p_lb, p_lfb, p_av], epsilon, 1.0 - epsilon)
    mean_logit = float(np.mean([logit(p) for p in ps]))
    return float(1.0 / (1.0 + np.exp(-mean_logit)))


def decide(p_final: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    """fake iff p_final >= threshold (boundary counts as fake)."""
    return "fake" if p_final >= threshold else "real"


def fuse_table(branch_scores: dict[str, dict[str, float]],
               calibration: CalibrationParams,
               threshold: float = DEFAULT_THRESHOLD) -> list[FusedPrediction]:
    """branch_scores: video_id -> {FB, LB, LFB, AV: raw score}. AV rows are
    calibrated, visual rows are already probabilities."""
    out = []
    for vid in sorted(branch_scores):
        row = branch_scores[vid]
        missing = [b for b in BRANCHES if b not in row]
        if missing:
            raise DataError(f"video {vid} missing branch scores: {missing}")
        p_av = calibrate(row["AV"], calibration)
        p = fuse(row["FB"], row["LB"], row["LFB"], p_av, calibration.epsilon)
        out.append(FusedPrediction(vid, p, decide(p, threshold), threshold))
    return out
