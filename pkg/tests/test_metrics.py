import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import confusion_oracle
from zs3.classifier import predict_scores
from zs3.metrics import evaluate, harmonic_iou, report_from_confusion
from zs3.scene_data import SplitConfig


def _split(n, unseen=()):
    return SplitConfig(k=len(unseen), unseen=tuple(unseen), seed=0, n_classes=n)


def test_worked_four_pixel_example():
    rep = evaluate(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), _split(2))
    ov = rep.groups["overall"]
    assert ov.pa == 0.75 and ov.ma == 0.75
    assert rep.iou == [0.5, pytest.approx(2 / 3)]
    assert ov.miou == pytest.approx(7 / 12, abs=1e-15)
    assert rep.groups["unseen"] is None and rep.hiou is None


def test_perfect_predictions():
    gt = np.random.default_rng(0).integers(0, 5, size=(3, 8, 8))
    rep = evaluate(gt, gt, _split(5, (2, 4)))
    for g in rep.groups.values():
        assert g.pa == g.ma == g.miou == 1.0
    assert rep.hiou == 1.0


def test_confusion_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(1)
    for _ in range(100):
        k = int(rng.integers(2, 8))
        gt = rng.integers(0, k, size=(int(rng.integers(1, 6)), int(rng.integers(1, 6))))
        pred = rng.integers(0, k, size=gt.shape)
        rep = evaluate(pred, gt, _split(k))
        assert np.array_equal(rep.confusion, confusion_oracle(gt, pred, k))


def test_absent_classes_are_excluded():
    rep = evaluate(np.array([0, 0, 1]), np.array([0, 0, 1]), _split(4, (3,)))
    assert rep.iou[2] is None and rep.iou[3] is None
    assert rep.groups["seen"].miou == 1.0
    assert rep.groups["unseen"].miou == 0.0


def test_group_pixel_decomposition():
    rng = np.random.default_rng(2)
    gt = rng.integers(0, 6, size=200)
    pred = rng.integers(0, 6, size=200)
    rep = evaluate(pred, gt, _split(6, (1, 4)))
    conf = rep.confusion
    seen_px = conf[list(rep.groups["seen"].classes)].sum()
    unseen_px = conf[list(rep.groups["unseen"].classes)].sum()
    assert seen_px + unseen_px == conf.sum() == 200


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate(np.zeros(3, int), np.zeros(4, int), _split(2))
    with pytest.raises(ValueError):
        evaluate(np.zeros(0, int), np.zeros(0, int), _split(2))
    with pytest.raises(ValueError):
        evaluate(np.array([5]), np.array([0]), _split(2))


def test_harmonic_iou_reference_values():
    assert round(harmonic_iou(72.0, 35.4), 1) == 47.5
    assert round(harmonic_iou(66.4, 23.2), 1) == 34.4
    assert harmonic_iou(0.3, 0.3) == pytest.approx(0.3)
    assert harmonic_iou(0.0, 0.0) == 0.0


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_iou_bounds(a, b):
    h = harmonic_iou(a, b)
    assert h <= 2 * min(a, b) + 1e-12
    assert h <= (a + b) / 2 + 1e-12


def test_vanilla_unseen_accuracy_dominates_generalized():
    rng = np.random.default_rng(3)
    unseen = (2, 5)
    scores = rng.normal(size=(500, 7))
    gt = rng.choice(unseen, size=500)
    gen_pred = predict_scores(scores, "generalized")
    van_pred = predict_scores(scores, "vanilla", unseen)
    assert np.all((gen_pred == gt) <= (van_pred == gt))
    split = _split(7, unseen)
    g = evaluate(gen_pred, gt, split).groups["unseen"]
    v = evaluate(van_pred, gt, split).groups["unseen"]
    assert v.pa >= g.pa


def test_report_dict_round_trip():
    rep = report_from_confusion(np.array([[3, 1], [0, 4]]), (0,), (1,), ["a", "b"])
    again = type(rep).from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()
