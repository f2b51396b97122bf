"""Fmax and macro-AUC for multi-label score matrices.

Fmax: per sample, predict label j iff score >= t; F1 computed per sample
and averaged, maximized over a shared threshold.  The threshold set is all
distinct observed scores plus {0, 1}, which makes the maximum exact.
Samples with no predicted labels count as precision 1; samples with no
true labels are skipped.

Macro-AUC: per label, the rank statistic P(random positive outranks a
random negative) with ties counted half; labels missing a class are
skipped and reported; unweighted mean over the rest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class MetricError(ValueError):
    pass


@dataclass
class ScoreMatrix:
    scores: np.ndarray  # (N, K) in [0, 1]
    truth: np.ndarray  # (N, K) in {-1, +1}

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.truth = np.asarray(self.truth)
        if self.scores.shape != self.truth.shape or self.scores.ndim != 2:
            raise MetricError(
                f"scores {self.scores.shape} and truth {self.truth.shape} must be equal N x K"
            )
        if not np.isfinite(self.scores).all():
            raise MetricError("non-finite score")
        if self.scores.min(initial=0.0) < 0 or self.scores.max(initial=0.0) > 1:
            raise MetricError("scores must lie in [0, 1]")
        if not np.isin(self.truth, (-1, 1)).all():
            raise MetricError("truth entries must be +/-1")


def sample_f1_at(sm: ScoreMatrix, threshold: float) -> float:
    """Mean per-sample F1 at one shared threshold."""
    pred = sm.scores >= threshold
    true = sm.truth == 1
    keep = true.any(axis=1)
    if not keep.any():
        raise MetricError("no sample has a true label")
    tp = (pred & true)[keep].sum(axis=1).astype(np.float64)
    n_pred = pred[keep].sum(axis=1)
    n_true = true[keep].sum(axis=1)
    prec = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 1.0)
    rec = tp / n_true
    denom = prec + rec
    f1 = np.where(denom > 0, 2 * prec * rec / np.maximum(denom, 1e-300), 0.0)
    return float(f1.mean())


def fmax(sm: ScoreMatrix) -> tuple[float, float]:
    """(best mean sample F1, smallest threshold attaining it)."""
    if sm.scores.shape[0] < 1:
        raise MetricError("empty score matrix")
    thresholds = np.unique(np.concatenate([sm.scores.reshape(-1), [0.0, 1.0]]))
    best_f, best_t = -1.0, 0.0
    for t in thresholds:
        f = sample_f1_at(sm, float(t))
        if f > best_f:
            best_f, best_t = f, float(t)
    return best_f, best_t


def label_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Rank-based one-vs-rest AUC for a single label; ties count half."""
    pos = truth == 1
    n_pos = int(pos.sum())
    n_neg = scores.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("label needs both a positive and a negative")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


@dataclass
class MacroAucReport:
    macro_auc: float
    per_label: dict[int, float] = field(default_factory=dict)
    skipped_labels: list[int] = field(default_factory=list)


def macro_auc(sm: ScoreMatrix) -> MacroAucReport:
    if sm.scores.shape[0] < 2:
        raise MetricError("macro-AUC needs at least two samples")
    per_label = {}
    skipped = []
    for j in range(sm.scores.shape[1]):
        truth_j = sm.truth[:, j]
        if (truth_j == 1).any() and (truth_j == -1).any():
            per_label[j] = label_auc(sm.scores[:, j], truth_j)
        else:
            skipped.append(j)
    if not per_label:
        raise MetricError("no label has both a positive and a negative example")
    return MacroAucReport(
        macro_auc=float(np.mean(list(per_label.values()))),
        per_label=per_label,
        skipped_labels=skipped,
    )


def evaluation_report(sm: ScoreMatrix, label_names=None) -> dict:
    """Structured evaluation summary: Fmax, threshold, per-label AUCs."""
    f, t = fmax(sm)
    auc = macro_auc(sm)
    names = label_names or [str(j) for j in range(sm.scores.shape[1])]
    return {
        "version": 1,
        "fmax": f,
        "fmax_threshold": t,
        "macro_auc": auc.macro_auc,
        "per_label_auc": {names[j]: v for j, v in auc.per_label.items()},
        "skipped_labels": [names[j] for j in auc.skipped_labels],
        "n_samples": int(sm.scores.shape[0]),
    }
