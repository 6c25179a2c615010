"""Macro (per-class, C-) and micro (overall, O-) precision/recall/F1.

Ratios with empty denominators are defined as 0, which penalizes labels that
are never predicted. C-F1 is the unweighted mean of per-label F1 values, not
the F1 of the averaged precision and recall.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ConfusionCounts:
    tp: np.ndarray  # (n_labels,) integer counts
    fp: np.ndarray
    fn: np.ndarray


@dataclass
class MetricReport:
    c_precision: float
    c_recall: float
    c_f1: float
    o_precision: float
    o_recall: float
    o_f1: float
    mean_labels: float

    CSV_HEADER = "method,C-P,C-R,C-F1,O-P,O-R,O-F1,mean_labels"

    def csv_row(self, method: str) -> str:
        vals = [self.c_precision, self.c_recall, self.c_f1,
                self.o_precision, self.o_recall, self.o_f1, self.mean_labels]
        return method + "," + ",".join(f"{v:.6f}" for v in vals)


def confusion_counts(preds: np.ndarray, truths: np.ndarray) -> ConfusionCounts:
    preds = np.atleast_2d(np.asarray(preds))
    truths = np.atleast_2d(np.asarray(truths))
    if preds.shape != truths.shape:
        raise ValueError(
            f"confusion_counts: shape mismatch {preds.shape} vs {truths.shape}")
    p = preds.astype(bool)
    t = truths.astype(bool)
    return ConfusionCounts(
        tp=np.sum(p & t, axis=0).astype(np.int64),
        fp=np.sum(p & ~t, axis=0).astype(np.int64),
        fn=np.sum(~p & t, axis=0).astype(np.int64))


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(den, dtype=np.float64)
    nz = den != 0
    out[nz] = num[nz] / den[nz]
    return out


def macro_prf1(counts: ConfusionCounts) -> tuple[float, float, float]:
    p = _safe_div(counts.tp, counts.tp + counts.fp)
    r = _safe_div(counts.tp, counts.tp + counts.fn)
    f1 = _safe_div(2 * p * r, p + r)
    return float(np.mean(p)), float(np.mean(r)), float(np.mean(f1))


def micro_prf1(counts: ConfusionCounts) -> tuple[float, float, float]:
    tp, fp, fn = counts.tp.sum(), counts.fp.sum(), counts.fn.sum()
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return float(p), float(r), float(f1)


def mean_labels(preds: np.ndarray) -> float:
    preds = np.atleast_2d(np.asarray(preds))
    if preds.size == 0:
        raise ValueError("mean_labels: empty prediction list")
    return float(np.mean(np.sum(preds, axis=1)))


def report(preds: np.ndarray, truths: np.ndarray) -> MetricReport:
    counts = confusion_counts(preds, truths)
    cp, cr, cf1 = macro_prf1(counts)
    op, orec, of1 = micro_prf1(counts)
    return MetricReport(cp, cr, cf1, op, orec, of1, mean_labels(preds))
