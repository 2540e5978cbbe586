"""Ranking metrics and structure-recovery reports."""

from __future__ import annotations

import csv
import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError


def _check(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0/1")
    return scores, labels.astype(np.int64)


def average_precision(scores, labels) -> float:
    """Mean of precision@k over the ranks k holding a positive.

    Ranking is by descending score; ties keep ascending index order.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("average precision is undefined without positive labels")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    # exact rational sum so the result is the correctly rounded AP
    total = Fraction(0)
    found = 0
    for k, hit in enumerate(hits.tolist(), start=1):
        if hit:
            found += 1
            total += Fraction(found, k)
    return float(total / n_pos)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) + 0.5 P(tie)."""
    scores, labels = _check(scores, labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise DataError("ROC-AUC needs both positive and negative labels")
    diff = pos[:, None] - neg[None, :]
    # integer numerator and denominator: one correctly rounded division
    return (2 * int((diff > 0).sum()) + int((diff == 0).sum())) / (2 * pos.size * neg.size)


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation; NaN for an empty list."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return float("nan"), float("nan")
    return float(values.mean()), float(values.std())


@dataclass
class IndividualScore:
    id: str
    scores: list[float]
    ground_truth: list[int]
    ap: float
    auc: Optional[float]


@dataclass
class EvalReport:
    split: str
    rows: list[IndividualScore]
    metadata: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    @property
    def ap(self) -> tuple[float, float]:
        return mean_std([r.ap for r in self.rows])

    @property
    def auc(self) -> tuple[float, float]:
        return mean_std([r.auc for r in self.rows if r.auc is not None])

    def summary(self) -> str:
        (ap_m, ap_s), (auc_m, auc_s) = self.ap, self.auc
        return (f"{self.split}: AP {ap_m:.3f}±{ap_s:.3f} / "
                f"AUC {auc_m:.3f}±{auc_s:.3f} (n={len(self.rows)})")

    def to_dict(self) -> dict:
        # JSON has no NaN: undefined aggregates become null
        (ap_m, ap_s), (auc_m, auc_s) = (tuple(None if np.isnan(v) else v for v in pair)
                                        for pair in (self.ap, self.auc))
        return {
            "split": self.split,
            "aggregate": {"ap_mean": ap_m, "ap_std": ap_s, "auc_mean": auc_m, "auc_std": auc_s,
                          "count": len(self.rows)},
            "individuals": [vars(r) for r in self.rows],
            "skipped": self.skipped,
            "metadata": self.metadata,
        }

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)
                              + "\n",
                              encoding="utf-8")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "ap", "auc", "scores", "ground_truth"])
            for r in self.rows:
                writer.writerow([r.id, repr(r.ap), "" if r.auc is None else repr(r.auc),
                                 " ".join(repr(v) for v in r.scores),
                                 " ".join(str(v) for v in r.ground_truth)])


def score_individual(sample_id: str, scores, ground_truth) -> IndividualScore:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(ground_truth, dtype=np.int64)
    both = 0 < truth.sum() < truth.size
    return IndividualScore(sample_id, scores.tolist(), truth.tolist(),
                           average_precision(scores, truth),
                           roc_auc(scores, truth) if both else None)


def score_structures(ids: Sequence[str], attention: Sequence[np.ndarray],
                     ground_truths: Sequence[Optional[np.ndarray]], target_index: int = 0,
                     split: str = "unseen", metadata: Optional[dict] = None) -> EvalReport:
    """Score full-length attention vectors against exogenous parent indicators;
    the target's own entry is dropped before ranking."""
    rows = []
    for sid, vec, truth in zip(ids, attention, ground_truths):
        if truth is None:
            raise DataError(f"{sid}: no ground truth")
        exo = np.delete(np.asarray(vec, dtype=np.float64), target_index)
        if exo.size != len(truth):
            raise DataError(f"{sid}: {exo.size} exogenous scores vs {len(truth)} labels")
        rows.append(score_individual(sid, exo, truth))
    return EvalReport(split, rows, dict(metadata or {}))
