"""Confusion counts, the five mask metrics, and their aggregation.

Zero denominators follow the usual change-detection convention: a frame with
no foreground in either mask scores precision = recall = F = 1, while a
ratio with an empty denominator but some error elsewhere scores 0.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError

CSV_COLUMNS = ("sequence", "frame", "tp", "fp", "fn", "tn",
               "accuracy", "precision", "recall", "specificity", "f_measure")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


@dataclass
class MetricReport:
    accuracy: float
    f_measure: float
    precision: float
    recall: float
    specificity: float
    counts: ConfusionCounts
    pooled: "MetricReport" = None

    def as_row(self):
        c = self.counts
        return [c.tp, c.fp, c.fn, c.tn, self.accuracy, self.precision,
                self.recall, self.specificity, self.f_measure]


def confusion(pred, gt, ignore=None):
    """Pixel tallies of pred against gt; pixels with ignore == 1 are skipped."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise DimensionError(f"pred {pred.shape} and gt {gt.shape} differ")
    if ignore is not None:
        keep = ~(np.asarray(ignore) > 0)
        if keep.shape != gt.shape:
            raise DimensionError(f"ignore mask {keep.shape} does not match {gt.shape}")
        pred, gt = pred[keep], gt[keep]
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(pred.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num, den, vacuous):
    if den:
        return num / den
    return 1.0 if vacuous else 0.0


def compute_metrics(c):
    if c.total < 1:
        raise ContractError("cannot compute metrics from all-zero counts")
    no_positives = c.tp == 0 and c.fp == 0 and c.fn == 0
    precision = _ratio(c.tp, c.tp + c.fp, no_positives)
    recall = _ratio(c.tp, c.tp + c.fn, no_positives)
    if no_positives:
        f = 1.0
    elif precision + recall == 0:
        f = 0.0
    else:
        f = 2 * precision * recall / (precision + recall)
    return MetricReport(
        accuracy=(c.tp + c.tn) / c.total,
        f_measure=f,
        precision=precision,
        recall=recall,
        specificity=_ratio(c.tn, c.tn + c.fp, True),
        counts=c,
    )


def evaluate(pred, gt, ignore=None):
    return compute_metrics(confusion(pred, gt, ignore))


def aggregate(reports):
    """Unweighted mean of each metric over frames.

    The returned report carries summed counts, and ``pooled`` holds the
    metrics recomputed from those summed counts.
    """
    reports = list(reports)
    if not reports:
        raise ContractError("cannot aggregate an empty list of reports")
    counts = reports[0].counts
    for r in reports[1:]:
        counts = counts + r.counts

    def mean(attr):
        return float(np.mean([getattr(r, attr) for r in reports]))

    return MetricReport(mean("accuracy"), mean("f_measure"), mean("precision"),
                        mean("recall"), mean("specificity"), counts,
                        pooled=compute_metrics(counts))


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_report_csv(path, rows, aggregates=()):
    """Per-frame rows then aggregate rows.

    ``rows`` is an iterable of (sequence, frame, MetricReport). Each
    ``aggregates`` entry (sequence, MetricReport) from ``aggregate`` produces
    a ``mean`` row and a ``pooled`` row.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for seq, frame, rep in rows:
            w.writerow([seq, frame] + [_fmt(v) for v in rep.as_row()])
        for seq, rep in aggregates:
            w.writerow([seq, "mean"] + [_fmt(v) for v in rep.as_row()])
            if rep.pooled is not None:
                w.writerow([seq, "pooled"] + [_fmt(v) for v in rep.pooled.as_row()])


def read_report_csv(path):
    """Rows of a report CSV as dicts (numbers converted)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in CSV_COLUMNS[2:6]:
                row[k] = int(row[k])
            for k in CSV_COLUMNS[6:]:
                row[k] = float(row[k])
            out.append(row)
    return out
