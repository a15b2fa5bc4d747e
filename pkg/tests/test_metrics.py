import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from foregan import metrics
from foregan.errors import ContractError, DimensionError
from foregan.metrics import ConfusionCounts, compute_metrics, confusion

from oracles import confusion_loop, metrics_loop

masks16 = arrays(np.uint8, (16, 16), elements=st.integers(0, 1))


def test_identical_masks_have_no_errors():
    m = np.random.default_rng(0).integers(0, 2, (32, 32))
    c = confusion(m, m)
    assert c.fp == 0 and c.fn == 0


def test_all_false_positives():
    c = confusion(np.ones((64, 64)), np.zeros((64, 64)))
    assert c == ConfusionCounts(tp=0, fp=4096, fn=0, tn=0)


def test_confusion_matches_pixel_loop():
    rng = np.random.default_rng(1)
    pred, gt = rng.integers(0, 2, (16, 16)), rng.integers(0, 2, (16, 16))
    c = confusion(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == confusion_loop(pred, gt)


def test_confusion_ignore_mask_excludes_pixels():
    pred = np.array([[1, 1], [0, 0]])
    gt = np.array([[1, 0], [1, 0]])
    ignore = np.array([[0, 1], [1, 0]])
    assert confusion(pred, gt, ignore) == ConfusionCounts(1, 0, 0, 1)


def test_confusion_dimension_mismatch():
    with pytest.raises(DimensionError):
        confusion(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        confusion(np.zeros((3, 3)), np.zeros((3, 3)), np.zeros((2, 2)))


def test_hand_evaluated_metrics():
    r = compute_metrics(ConfusionCounts(tp=8, fp=2, fn=2, tn=88))
    assert r.precision == pytest.approx(0.8)
    assert r.recall == pytest.approx(0.8)
    assert r.f_measure == pytest.approx(0.8)
    assert r.accuracy == pytest.approx(0.96)
    assert r.specificity == pytest.approx(0.9778, abs=1e-4)


def test_perfect_prediction():
    r = compute_metrics(ConfusionCounts(tp=5, fp=0, fn=0, tn=20))
    assert (r.accuracy, r.f_measure, r.precision, r.recall, r.specificity) == (1, 1, 1, 1, 1)


def test_empty_positive_convention():
    r = compute_metrics(ConfusionCounts(tp=0, fp=0, fn=0, tn=100))
    assert r.precision == r.recall == r.f_measure == 1.0
    assert r.accuracy == r.specificity == 1.0


def test_zero_denominator_with_errors_scores_zero():
    missed = compute_metrics(ConfusionCounts(tp=0, fp=0, fn=4, tn=10))
    assert missed.precision == 0.0 and missed.recall == 0.0 and missed.f_measure == 0.0
    false_alarm = compute_metrics(ConfusionCounts(tp=0, fp=3, fn=0, tn=10))
    assert false_alarm.recall == 0.0 and false_alarm.f_measure == 0.0


def test_all_zero_counts_rejected():
    with pytest.raises(ContractError):
        compute_metrics(ConfusionCounts(0, 0, 0, 0))


def _report(f, counts=ConfusionCounts(1, 1, 1, 1)):
    return metrics.MetricReport(0.5, f, 0.5, 0.5, 0.5, counts)


def test_aggregate_single_report_is_itself():
    r = compute_metrics(ConfusionCounts(3, 1, 2, 10))
    agg = metrics.aggregate([r])
    for name in ("accuracy", "f_measure", "precision", "recall", "specificity"):
        assert getattr(agg, name) == pytest.approx(getattr(r, name))
    assert agg.counts == r.counts


def test_aggregate_is_mean():
    assert metrics.aggregate([_report(0.6), _report(0.8)]).f_measure == pytest.approx(0.7)


def test_aggregate_mean_differs_from_pooled_on_skewed_input():
    small = compute_metrics(ConfusionCounts(tp=1, fp=0, fn=0, tn=99))       # F = 1
    large = compute_metrics(ConfusionCounts(tp=100, fp=300, fn=300, tn=300))  # F = 0.25
    agg = metrics.aggregate([small, large])
    assert agg.f_measure == pytest.approx(0.625)
    pooled_f = 2 * 101 / (2 * 101 + 300 + 300)
    assert agg.pooled.f_measure == pytest.approx(pooled_f)
    assert abs(agg.f_measure - agg.pooled.f_measure) > 0.3


def test_aggregate_empty_rejected():
    with pytest.raises(ContractError):
        metrics.aggregate([])


@settings(max_examples=60, deadline=None)
@given(m=masks16)
def test_self_comparison_is_perfect(m):
    r = metrics.evaluate(m, m)
    assert (r.accuracy, r.f_measure, r.precision, r.recall, r.specificity) == (1, 1, 1, 1, 1)


@settings(max_examples=60, deadline=None)
@given(pred=masks16, gt=masks16)
def test_swap_symmetry(pred, gt):
    a, b = confusion(pred, gt), confusion(gt, pred)
    assert (a.tp, a.tn, a.fp, a.fn) == (b.tp, b.tn, b.fn, b.fp)
    ra, rb = compute_metrics(a), compute_metrics(b)
    assert ra.accuracy == rb.accuracy
    assert ra.f_measure == pytest.approx(rb.f_measure)


@settings(max_examples=60, deadline=None)
@given(pred=masks16, gt=masks16, extra=masks16)
def test_recall_monotone_in_added_foreground(pred, gt, extra):
    before = metrics.evaluate(pred, gt).recall
    after = metrics.evaluate(pred | extra, gt).recall
    if gt.any():
        assert after >= before


@settings(max_examples=60, deadline=None)
@given(pred=masks16, gt=masks16)
def test_metrics_in_unit_interval_and_consistent(pred, gt):
    r = metrics.evaluate(pred, gt)
    for v in (r.accuracy, r.f_measure, r.precision, r.recall, r.specificity):
        assert 0.0 <= v <= 1.0
    if r.precision + r.recall > 0 and r.counts.tp:
        assert r.f_measure == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))
    assert r.counts.total == pred.size
    expected = metrics_loop(*confusion_loop(pred, gt))
    np.testing.assert_allclose(
        (r.accuracy, r.f_measure, r.precision, r.recall, r.specificity), expected, atol=1e-12)


def test_report_csv_round_trip(tmp_path):
    r1 = compute_metrics(ConfusionCounts(8, 2, 2, 88))
    r2 = compute_metrics(ConfusionCounts(0, 0, 0, 100))
    agg = metrics.aggregate([r1, r2])
    path = tmp_path / "report.csv"
    metrics.write_report_csv(path, [("seq", "f0", r1), ("seq", "f1", r2)], [("seq", agg)])
    text = path.read_bytes()
    assert b"\r\n" not in text
    assert text.splitlines()[0] == b"sequence,frame,tp,fp,fn,tn,accuracy,precision,recall,specificity,f_measure"
    rows = metrics.read_report_csv(path)
    assert [r["frame"] for r in rows] == ["f0", "f1", "mean", "pooled"]
    assert rows[0]["f_measure"] == pytest.approx(0.8)
    assert rows[2]["f_measure"] == pytest.approx(0.9)
    assert rows[3]["tp"] == 8 and rows[3]["tn"] == 188
