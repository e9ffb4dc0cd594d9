"""Ranking and calibration metrics over (label, score) records."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, UndefinedAucError


@dataclass(frozen=True)
class EvalRecord:
    y_true: int
    y_score: float
    student_id: str = ""
    step: int = 0
    kc_id: str = ""

    def __post_init__(self):
        if self.y_true not in (0, 1):
            raise ParameterError(f"y_true must be 0 or 1, got {self.y_true!r}")
        if not (np.isfinite(self.y_score) and 0.0 <= self.y_score <= 1.0):
            raise ParameterError(f"y_score must be a finite probability, got {self.y_score!r}")


def _split_records(records):
    if records and isinstance(records[0], EvalRecord):
        y = np.array([r.y_true for r in records], dtype=np.int64)
        s = np.array([r.y_score for r in records], dtype=np.float64)
        return y, s
    y, s = records
    return np.asarray(y, dtype=np.int64), np.asarray(s, dtype=np.float64)


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); tied values share the mean of their ranks."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    _, inverse, counts = np.unique(sorted_vals, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg = starts + (counts + 1) / 2.0
    ranks = np.empty(len(values))
    ranks[order] = avg[inverse]
    return ranks


def auc(records) -> float:
    """Mann-Whitney AUC: P(random positive outranks random negative), ties half.

    ``records`` is a list of EvalRecord or a (labels, scores) pair. Raises
    UndefinedAucError when only one class is present.
    """
    y, s = _split_records(records)
    n_pos = int((y == 1).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC undefined: records contain a single class")
    ranks = _tied_ranks(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_stderr(auc_value: float, n_pos: int, n_neg: int) -> float:
    """Hanley-McNeil standard error of an AUC estimate."""
    a = auc_value
    q1 = a / (2 - a)
    q2 = 2 * a * a / (1 + a)
    var = (a * (1 - a) + (n_pos - 1) * (q1 - a * a) + (n_neg - 1) * (q2 - a * a)) / (n_pos * n_neg)
    return float(np.sqrt(max(var, 0.0)))


@dataclass(frozen=True)
class CalibrationBin:
    bin_lo: float
    bin_hi: float
    mean_conf: float
    frac_pos: float
    count: int


@dataclass(frozen=True)
class CalibrationReport:
    bins: tuple[CalibrationBin, ...]
    ece: float
    n_bins: int
    n_records: int

    def to_rows(self):
        return [
            (b.bin_lo, b.bin_hi, b.mean_conf, b.frac_pos, b.count) for b in self.bins
        ]


def calibration(records, n_bins: int = 10) -> CalibrationReport:
    """Equal-width reliability bins over [0, 1] and the expected calibration error.

    The last bin is right-closed. Empty bins are reported with count 0 and do
    not contribute to the ECE, which is the count-weighted mean absolute gap
    between bin confidence and bin accuracy.
    """
    if n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {n_bins}")
    y, s = _split_records(records)
    idx = np.clip(np.floor(s * n_bins).astype(int), 0, n_bins - 1)
    bins = []
    ece = 0.0
    total = len(y)
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        in_bin = idx == b
        count = int(in_bin.sum())
        if count == 0:
            bins.append(CalibrationBin(lo, hi, 0.0, 0.0, 0))
            continue
        conf = float(s[in_bin].mean())
        acc = float(y[in_bin].mean())
        ece += (count / total) * abs(conf - acc)
        bins.append(CalibrationBin(lo, hi, conf, acc, count))
    return CalibrationReport(bins=tuple(bins), ece=float(ece), n_bins=n_bins, n_records=total)


def write_calibration_csv(report: CalibrationReport, path) -> None:
    """``bin_lo,bin_hi,mean_conf,frac_pos,count`` rows plus an ece footer row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "mean_conf", "frac_pos", "count"])
        for row in report.to_rows():
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        writer.writerow(["ece", repr(report.ece), "", "", ""])


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "step", "kc_id", "y_true", "y_score"])
        for r in records:
            writer.writerow([r.student_id, r.step, r.kc_id, r.y_true, repr(r.y_score)])


def read_records_csv(path) -> list[EvalRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append(
                EvalRecord(
                    y_true=int(row["y_true"]),
                    y_score=float(row["y_score"]),
                    student_id=row.get("student_id", ""),
                    step=int(row.get("step", 0) or 0),
                    kc_id=row.get("kc_id", ""),
                )
            )
    return out
