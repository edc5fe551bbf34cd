"""Equal error rate computation and per-tag evaluation reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import UndefinedEerError


def _roc_points(scores: np.ndarray, truths: np.ndarray) -> tuple:
    """Operating points swept over the distinct score thresholds.

    Point i is reached after classifying everything with score <= the
    i-th distinct score as negative (ties collapse into one threshold).
    Returns (fpr, fnr) arrays of length n_distinct + 1 starting at the
    accept-all point (1, 0); fpr is non-increasing, fnr non-decreasing.
    """
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    sorted_truths = truths[order]
    n_pos = float(sorted_truths.sum())
    n_neg = float(len(sorted_truths) - n_pos)
    # indices where a run of equal scores ends
    boundary = np.nonzero(np.diff(sorted_scores))[0]
    ends = np.concatenate([boundary + 1, [len(sorted_scores)]])
    pos_below = np.concatenate([[0.0], np.cumsum(sorted_truths)[ends - 1]])
    neg_below = np.concatenate([[0.0], np.cumsum(1.0 - sorted_truths)[ends - 1]])
    fnr = pos_below / n_pos
    fpr = (n_neg - neg_below) / n_neg
    return fpr, fnr


def interpolate_crossing(fpr: np.ndarray, fnr: np.ndarray) -> float:
    """EER from swept operating points.

    Finds the first point where fnr >= fpr; returns it exactly when the
    rates are equal there, otherwise interpolates linearly along the
    segment from the previous point to where the two rates cross.
    """
    diff = fnr - fpr
    idx = int(np.searchsorted(diff, 0.0, side="left"))
    if idx >= len(diff):
        idx = len(diff) - 1
    if diff[idx] == 0.0:
        return float(fpr[idx])
    span = (fpr[idx - 1] - fnr[idx - 1]) + (fnr[idx] - fpr[idx])
    lam = (fpr[idx - 1] - fnr[idx - 1]) / span
    return float(fpr[idx - 1] + lam * (fpr[idx] - fpr[idx - 1]))


def compute_eer(scores, truths) -> float:
    """Equal error rate of a score-ranked binary decision set.

    Sweeps every distinct score as a threshold and returns the rate at
    which the false positive and false negative rates coincide, linearly
    interpolated between the two bracketing operating points.

    Raises ``UndefinedEerError`` when the truth labels are all-positive
    or all-negative.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if scores.shape != truths.shape or scores.ndim != 1:
        raise ValueError(f"scores {scores.shape} and truths {truths.shape} must be equal-length vectors")
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    n_pos = truths.sum()
    if n_pos == 0 or n_pos == len(truths):
        raise UndefinedEerError("EER needs at least one positive and one negative truth")
    fpr, fnr = _roc_points(scores, truths)
    return interpolate_crossing(fpr, fnr)


@dataclass
class TagResult:
    tag: str
    n_pos: int
    n_neg: int
    eer: float | None  # None when undefined for this tag


@dataclass
class EvalReport:
    per_tag: list
    mean_eer: float | None
    pooling: str

    @property
    def skipped(self) -> list:
        return [r.tag for r in self.per_tag if r.eer is None]


def evaluate_scores(scores: np.ndarray, truths: np.ndarray, tags: list,
                    pooling: str = "per-tag") -> EvalReport:
    """Per-tag EER table from an (n_clips, K) score matrix.

    ``pooling`` selects the aggregate: "per-tag" averages the defined
    per-tag EERs; "pooled" computes one EER over all (clip, tag)
    decisions at once.
    """
    if pooling not in ("per-tag", "pooled"):
        raise ValueError(f"pooling must be 'per-tag' or 'pooled', got {pooling!r}")
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if scores.shape != truths.shape:
        raise ValueError(f"score matrix {scores.shape} != truth matrix {truths.shape}")
    per_tag = []
    for k, tag in enumerate(tags):
        n_pos = int(truths[:, k].sum())
        n_neg = int(len(truths) - n_pos)
        try:
            eer = compute_eer(scores[:, k], truths[:, k])
        except UndefinedEerError:
            eer = None
        per_tag.append(TagResult(tag=tag, n_pos=n_pos, n_neg=n_neg, eer=eer))
    if pooling == "pooled":
        mean = compute_eer(scores.ravel(), truths.ravel())
    else:
        defined = [r.eer for r in per_tag if r.eer is not None]
        mean = float(np.mean(defined)) if defined else None
    return EvalReport(per_tag=per_tag, mean_eer=mean, pooling=pooling)


def evaluate_tagger(model, X, y, tags: list | None = None,
                    pooling: str = "per-tag") -> EvalReport:
    """Score a fitted tagger on (X, y) and build the per-tag EER report."""
    scores = model.predict_proba(X)
    truths = np.asarray(y, dtype=np.float64)
    if tags is None:
        tags = [f"tag{k}" for k in range(truths.shape[1])]
    return evaluate_scores(scores, truths, tags, pooling)


def write_eer_report(path, report: EvalReport) -> None:
    """CSV rows: tag, n_pos, n_neg, eer; a final 'mean' row carries the aggregate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tag", "n_pos", "n_neg", "eer"])
        for r in report.per_tag:
            writer.writerow([r.tag, r.n_pos, r.n_neg,
                             "skipped" if r.eer is None else f"{r.eer:.6f}"])
        mean = "" if report.mean_eer is None else f"{report.mean_eer:.6f}"
        writer.writerow(["mean", "", "", mean])
