"""ROC/AUROC metrics, FPR-targeted threshold calibration, fairness audit.

The decision convention is fixed globally: a pair is called a match iff
score >= threshold. Calibration picks a midpoint threshold whose
empirical FPR on its own negatives never exceeds the target; tie blocks
at the cut push the threshold upward past the ties.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ringwatch.errors import EmptyNegatives, EmptySide, NoNegativePairs
from ringwatch.pairs import GROUP_AXES, SessionPair
from ringwatch.session import AGE_BANDS, GENDERS

THRESHOLD_DELTA = 1e-9  # nudge above the max negative when FPR target allows none


@dataclass(frozen=True)
class ScoredPair:
    pair: SessionPair
    score: float


@dataclass(frozen=True)
class Threshold:
    value: float
    fpr_target: float
    calibrated_on: str = "validation"
    method: str = ""
    low_sample_warning: bool = False  # fewer negatives than ceil(1/fpr_target)

    def to_dict(self) -> dict:
        return {"value": self.value, "fpr_target": self.fpr_target,
                "calibrated_on": self.calibrated_on, "method": self.method,
                "low_sample_warning": self.low_sample_warning}

    @classmethod
    def from_dict(cls, data: dict) -> "Threshold":
        return cls(value=data["value"], fpr_target=data["fpr_target"],
                   calibrated_on=data.get("calibrated_on", "validation"),
                   method=data.get("method", ""),
                   low_sample_warning=data.get("low_sample_warning", False))


@dataclass(frozen=True)
class EvaluationReport:
    method: str
    auroc: float
    fpr: float
    fnr: float
    threshold: Threshold
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return {"method": self.method, "auroc": self.auroc, "fpr": self.fpr,
                "fnr": self.fnr, "threshold": self.threshold.to_dict(),
                "n_pos": self.n_pos, "n_neg": self.n_neg}

    def text_row(self) -> str:
        return (f"{self.method:<24} {self.auroc * 100:7.2f}% {self.fpr * 100:7.2f}% "
                f"{self.fnr * 100:7.2f}%  ({self.n_pos} pos / {self.n_neg} neg)")


@dataclass(frozen=True)
class GroupRow:
    attribute: str  # gender | age_band | region
    group: str
    pair_count: int
    ratio: float  # group pair count / total negative pairs
    tnr: float

    def to_dict(self) -> dict:
        return {"attribute": self.attribute, "group": self.group,
                "pair_count": self.pair_count, "ratio": self.ratio, "tnr": self.tnr}


@dataclass(frozen=True)
class FairnessReport:
    method: str
    rows: tuple[GroupRow, ...]
    overall_tnr: float
    total_pairs: int
    threshold: Threshold

    def to_dict(self) -> dict:
        return {"method": self.method, "overall_tnr": self.overall_tnr,
                "total_pairs": self.total_pairs, "threshold": self.threshold.to_dict(),
                "rows": [r.to_dict() for r in self.rows]}

    def to_text(self) -> str:
        lines = [f"method: {self.method}",
                 f"overall TNR {self.overall_tnr * 100:.2f}% over "
                 f"{self.total_pairs} negative pairs",
                 f"{'attribute':<10} {'group':<10} {'ratio':>8} {'TNR':>8}"]
        for r in self.rows:
            lines.append(f"{r.attribute:<10} {r.group:<10} "
                         f"{r.ratio * 100:7.2f}% {r.tnr * 100:7.2f}%")
        return "\n".join(lines) + "\n"


def auroc(pos_scores, neg_scores) -> float:
    """Probability a random positive outscores a random negative, ties half.

    Rank-based (O(N log N)); exactly equals brute-force pair counting.
    """
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise EmptySide(f"{pos.size} positive / {neg.size} negative scores")
    scores = np.concatenate([pos, neg])
    n = scores.size
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [n]])
    block_rank = (starts + 1 + ends) / 2.0  # mean of 1-based ranks in a tie block
    ranks_sorted = np.repeat(block_rank, ends - starts)
    ranks = np.empty(n)
    ranks[order] = ranks_sorted
    u_stat = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u_stat / (pos.size * neg.size))


def calibrate_threshold(neg_scores, fpr_target: float = 0.01,
                        calibrated_on: str = "validation",
                        method: str = "") -> Threshold:
    """Smallest midpoint threshold whose FPR on these negatives <= target.

    With m = floor(fpr_target * N), the threshold sits between the m-th
    and (m+1)-th largest negative scores. Ties collapsing that gap move
    the cut upward past the tie block; m = 0 puts it just above the max.
    """
    neg = np.sort(np.asarray(neg_scores, dtype=float))[::-1]
    n = neg.size
    if n == 0:
        raise EmptyNegatives("no negative scores to calibrate on")
    if not 0.0 < fpr_target < 1.0:
        raise ValueError(f"fpr_target must be in (0, 1), got {fpr_target}")
    m = int(math.floor(fpr_target * n))
    while m > 0 and neg[m - 1] <= neg[m]:
        m -= 1  # tie block at the cut: move up until a strict gap
    if m == 0:
        value = float(neg[0] + THRESHOLD_DELTA)
    else:
        value = float((neg[m - 1] + neg[m]) / 2.0)
    warning = n < math.ceil(1.0 / fpr_target)
    return Threshold(value=value, fpr_target=fpr_target, calibrated_on=calibrated_on,
                     method=method, low_sample_warning=warning)


def _split_scores(scored_pairs: list[ScoredPair]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.array([sp.score for sp in scored_pairs if sp.pair.label == "positive"])
    neg = np.array([sp.score for sp in scored_pairs if sp.pair.label == "negative"])
    return pos, neg


def evaluate(scored_pairs: list[ScoredPair], threshold: Threshold,
             method: str = "") -> EvaluationReport:
    """FPR/FNR at the threshold plus AUROC over the scored test pairs."""
    pos, neg = _split_scores(scored_pairs)
    if pos.size == 0 or neg.size == 0:
        raise EmptySide(f"{pos.size} positive / {neg.size} negative pairs")
    fpr = float(np.mean(neg >= threshold.value))
    fnr = float(np.mean(pos < threshold.value))
    return EvaluationReport(method=method or threshold.method,
                            auroc=auroc(pos, neg), fpr=fpr, fnr=fnr,
                            threshold=threshold, n_pos=int(pos.size), n_neg=int(neg.size))


_GROUP_ORDER = {
    "gender": [g for g in GENDERS if g != "unknown"],
    "age_band": [a for a in AGE_BANDS if a != "unknown"],
}


def fairness_audit(scored_pairs: list[ScoredPair], threshold: Threshold,
                   group_by: tuple[str, ...] = GROUP_AXES,
                   method: str = "") -> FairnessReport:
    """Per-group true-negative rates over negative pairs.

    A pair belongs to every group either of its users is in, so a
    cross-group pair counts once per group and ratios can sum past 100%.
    Unknown demographics stay out of the rows but count in the totals.
    """
    negatives = [sp for sp in scored_pairs if sp.pair.label == "negative"]
    if not negatives:
        raise NoNegativePairs("fairness audit needs negative pairs")
    total = len(negatives)
    rejected_total = sum(1 for sp in negatives if sp.score < threshold.value)

    rows: list[GroupRow] = []
    for axis in group_by:
        counts: dict[str, int] = {}
        rejected: dict[str, int] = {}
        for sp in negatives:
            tag_a, tag_b = sp.pair.groups[axis]
            for tag in {tag_a, tag_b}:
                if tag == "unknown":
                    continue
                counts[tag] = counts.get(tag, 0) + 1
                if sp.score < threshold.value:
                    rejected[tag] = rejected.get(tag, 0) + 1
        order = _GROUP_ORDER.get(axis)
        groups = ([g for g in order if g in counts] if order else sorted(counts))
        for group in groups:
            c = counts[group]
            rows.append(GroupRow(attribute=axis, group=group, pair_count=c,
                                 ratio=c / total, tnr=rejected.get(group, 0) / c))
    return FairnessReport(method=method or threshold.method, rows=tuple(rows),
                          overall_tnr=rejected_total / total, total_pairs=total,
                          threshold=threshold)
