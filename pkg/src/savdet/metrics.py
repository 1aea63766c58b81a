"""Threshold-free ranking metrics with exact tie handling.

AUC uses the rank-statistic definition with half credit for ties (midranks),
AP sweeps thresholds at each distinct score with tied items entering together.
Both match brute-force oracles exactly, not just to tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError


@dataclass(frozen=True)
class LabeledScores:
    labels: np.ndarray = field(repr=False)   # 1 = fake/positive
    scores: np.ndarray = field(repr=False)
    groups: tuple[str, ...] | None = None    # optional manipulation tag per item

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.int64)
        s = np.asarray(self.scores, dtype=np.float64)
        if y.shape != s.shape or y.ndim != 1:
            raise DataError("labels and scores must be equal-length 1-D")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        if self.groups is not None and len(self.groups) != y.size:
            raise DataError("group tags must match item count")
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "scores", s)


def auc(data: LabeledScores) -> float:
    """P(random positive outranks random negative), ties get half credit."""
    y, s = data.labels, data.scores
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    wins = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return wins / (n_pos * n_neg)


def average_precision(data: LabeledScores) -> float:
    """Discrete threshold sweep over distinct scores, descending; tied items
    enter together. AP = sum (R_k - R_{k-1}) * P_k."""
    y, s = data.labels, data.scores
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DataError("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    s_sorted = s[order]
    ap = 0.0
    tp = 0
    taken = 0
    recall_prev = 0.0
    i = 0
    n = y.size
    while i < n:
        j = i
        while j < n and s_sorted[j] == s_sorted[i]:
            j += 1
        tp += int(y_sorted[i:j].sum())
        taken += j - i
        recall = tp / n_pos
        precision = tp / taken
        ap += (recall - recall_prev) * precision
        recall_prev = recall
        i = j
    return ap


def breakdown(data: LabeledScores) -> list[tuple[str, float, float]]:
    """Per-manipulation (group, AUC, AP): all reals plus that group's fakes.

    Groups that contain no fakes are skipped.
    """
    if data.groups is None:
        raise DataError("breakdown requires group tags")
    y, s = data.labels, data.scores
    tags = np.asarray(data.groups)
    real_mask = y == 0
    rows = []
    seen = []
    for g in tags[y == 1]:
        if g not in seen:
            seen.append(g)
    for g in seen:
        mask = real_mask | ((y == 1) & (tags == g))
        sub = LabeledScores(y[mask], s[mask])
        rows.append((g, auc(sub), average_precision(sub)))
    return rows
