"""ROC analysis of recognition records and privacy-threshold selection.

A record is *positive* when the evaluator could **not** recognise the sample;
a threshold ``t`` predicts "private" when ``score >= t``. TPR is therefore the
share of unrecognised samples at or above ``t`` and FPR the share of
recognised samples at or above ``t``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .metrics import Metric

TIE_TOL = 1e-12

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


class RecordFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RecognitionRecord:
    sample_id: str
    metric: Metric
    score: float
    recognized: bool

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric.parse(self.metric))
        object.__setattr__(self, "score", float(self.score))
        if not math.isfinite(self.score):
            raise ValueError(f"record {self.sample_id!r}: score must be finite")


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered by strictly decreasing threshold, starting at +inf."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True)
class Thresholds:
    t_acc: float
    acc_point: tuple[float, float]  # (FPR, TPR)
    t_cutoff: float
    cutoff_point: tuple[float, float]


def recognized_from_answers(ticked: Iterable, source_labels: Iterable) -> bool:
    """Collapse one multi-label survey answer to a recognition outcome.

    Recognised iff any ticked label is one of the sample's source labels; an
    empty answer ("I cannot tell") counts as not recognised.
    """
    return bool(set(ticked) & set(source_labels))


def _single_metric(records: Sequence[RecognitionRecord], metric=None) -> list[RecognitionRecord]:
    if metric is not None:
        m = Metric.parse(metric)
        records = [r for r in records if r.metric is m]
        if not records:
            raise ValueError(f"no records for metric {m.value}")
    else:
        found = {r.metric for r in records}
        if len(found) > 1:
            raise ValueError(f"records mix several metrics {sorted(m.value for m in found)}; pass metric=")
    return list(records)


def build_roc(records: Sequence[RecognitionRecord], metric=None) -> RocCurve:
    """ROC over all distinct scores (plus a +inf sentinel), AUC by trapezoids."""
    records = _single_metric(records, metric)
    scores = np.array([r.score for r in records])
    positive = np.array([not r.recognized for r in records])
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both recognised and unrecognised records")
    cuts = np.unique(scores)[::-1]
    # counts of scores >= each cut via sorted search on ascending arrays
    pos_sorted = np.sort(scores[positive])
    neg_sorted = np.sort(scores[~positive])
    tp = n_pos - np.searchsorted(pos_sorted, cuts, side="left")
    fp = n_neg - np.searchsorted(neg_sorted, cuts, side="left")
    thresholds = np.concatenate([[np.inf], cuts])
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(thresholds, fpr, tpr, auc)


def select_thresholds(roc: RocCurve) -> Thresholds:
    """Youden (max TPR - FPR) and closest-to-(0, 1) thresholds.

    Ties go to the larger threshold, i.e. the stricter privacy floor.
    """
    order = np.argsort(-roc.thresholds, kind="stable")
    t, fpr, tpr = roc.thresholds[order], roc.fpr[order], roc.tpr[order]
    youden = tpr - fpr
    i_acc = int(np.flatnonzero(youden >= youden.max() - TIE_TOL)[0])
    dist = np.hypot(fpr, 1.0 - tpr)
    i_cut = int(np.flatnonzero(dist <= dist.min() + TIE_TOL)[0])
    return Thresholds(
        t_acc=float(t[i_acc]),
        acc_point=(float(fpr[i_acc]), float(tpr[i_acc])),
        t_cutoff=float(t[i_cut]),
        cutoff_point=(float(fpr[i_cut]), float(tpr[i_cut])),
    )


def fpr_at(records: Sequence[RecognitionRecord], metric, t: float) -> float:
    """Share of recognised records of ``metric`` scoring at or above ``t``."""
    m = Metric.parse(metric)
    recognised = [r.score for r in records if r.metric is m and r.recognized]
    if not any(r.metric is m for r in records):
        raise ValueError(f"no records for metric {m.value}")
    if not recognised:
        raise ValueError(f"no recognised records for metric {m.value}")
    return sum(s >= t for s in recognised) / len(recognised)


# -- CSV ----------------------------------------------------------------------

RECORD_HEADER = ["sample_id", "metric", "score", "recognized"]


def _parse_bool(text: str) -> bool:
    v = text.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise ValueError(f"recognized must be one of 0/1/true/false, got {text!r}")


def ingest_records(path) -> list[RecognitionRecord]:
    """Parse a ``sample_id,metric,score,recognized`` CSV."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != RECORD_HEADER:
            raise RecordFormatError(f"{path}:1: expected header {','.join(RECORD_HEADER)}")
        records = []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise RecordFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            sample_id, metric, score, recognized = (c.strip() for c in row)
            try:
                records.append(RecognitionRecord(sample_id, Metric.parse(metric), float(score), _parse_bool(recognized)))
            except ValueError as exc:
                raise RecordFormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise RecordFormatError(f"{path}: no records")
    return records


def export_records(records: Sequence[RecognitionRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_HEADER)
        for r in records:
            w.writerow([r.sample_id, r.metric.value, repr(r.score), int(r.recognized)])


def _g9(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.9g}"


def export_roc(roc: RocCurve, path) -> None:
    """``threshold,fpr,tpr`` rows followed by an ``auc,<value>`` line."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in roc.points():
            w.writerow([_g9(t), _g9(f), _g9(p)])
        w.writerow(["auc", _g9(roc.auc)])


def read_roc(path) -> RocCurve:
    rows = list(csv.reader(Path(path).open(newline="")))
    if not rows or rows[0] != ["threshold", "fpr", "tpr"] or rows[-1][0] != "auc":
        raise RecordFormatError(f"{path}: not a ROC export")
    body = np.array([[float(c) for c in r] for r in rows[1:-1]])
    return RocCurve(body[:, 0], body[:, 1], body[:, 2], float(rows[-1][1]))


# Published survey results: metric -> (AUC, (t_acc, FPR, TPR), (t_cutoff, FPR, TPR)).
# Reference values only; the underlying responses were never released.
PUBLISHED = {
    ("dogs", "human"): {
        "mse": (0.77, (2178, 0.36, 0.79), (2589, 0.31, 0.69)),
        "fid": (0.59, (63160, 0.53, 0.69), (93674, 0.43, 0.56)),
        "dssim": (0.80, (0.63, 0.27, 0.77), (0.65, 0.25, 0.74)),
        "phash": (0.78, (0.28, 0.25, 0.69), (0.28, 0.25, 0.69)),
        "dhaar": (0.86, (0.61, 0.23, 0.80), (0.62, 0.21, 0.78)),
    },
    ("stl10", "human"): {
        "mse": (0.70, (2228, 0.45, 0.80), (2965, 0.34, 0.65)),
        "fid": (0.65, (415, 0.54, 0.75), (34971, 0.40, 0.59)),
        "dssim": (0.86, (0.66, 0.14, 0.72), (0.61, 0.22, 0.77)),
        "phash": (0.75, (0.28, 0.27, 0.65), (0.28, 0.27, 0.65)),
        "dhaar": (0.84, (0.60, 0.23, 0.78), (0.60, 0.22, 0.77)),
    },
    ("dogs", "vision-api"): {
        "mse": (0.81, (1715, 0.28, 0.82), (2118, 0.26, 0.72)),
        "fid": (0.62, (100518, 0.26, 0.47), (80275, 0.46, 0.53)),
        "dssim": (0.83, (0.47, 0.34, 0.87), (0.56, 0.25, 0.74)),
        "phash": (0.81, (0.21, 0.25, 0.74), (0.21, 0.25, 0.74)),
        "dhaar": (0.88, (0.56, 0.11, 0.80), (0.55, 0.19, 0.81)),
    },
    ("stl10", "vision-api"): {
        "mse": (0.80, (1328, 0.39, 0.86), (1850, 0.29, 0.73)),
        "fid": (0.60, (181679, 0.23, 0.44), (146856, 0.47, 0.52)),
        "dssim": (0.89, (0.48, 0.21, 0.79), (0.54, 0.19, 0.79)),
        "phash": (0.79, (0.25, 0.21, 0.66), (0.25, 0.21, 0.66)),
        "dhaar": (0.87, (0.54, 0.19, 0.79), (0.54, 0.19, 0.79)),
    },
}
