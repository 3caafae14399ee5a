import numpy as np
import pytest

from zs3.classifier import (ClassifierTrainConfig, LinearPixelClassifier, build_class_pools,
                            finetune_classifier, load_classifier, logits, predict, predict_scores,
                            save_classifier)
from zs3.errors import ConfigError, DataError, DimensionError, FormatError
from zs3.scene_data import SplitConfig
from zs3.tensor_core import RngStream

SPLIT = SplitConfig(k=2, unseen=(3, 4), seed=0, n_classes=5)


def test_logits_examples():
    clf = LinearPixelClassifier(3, 4)
    clf.bias.value[...] = [1.0, 2.0, 3.0]
    assert np.array_equal(logits(clf, np.ones((2, 4))), [[1, 2, 3], [1, 2, 3]])
    clf = LinearPixelClassifier(4, 4)
    clf.weight.value[...] = np.eye(4)
    x = RngStream(0).normal((5, 4))
    assert np.array_equal(logits(clf, x), x)
    with pytest.raises(DimensionError):
        logits(clf, np.ones((2, 3)))


def test_logits_match_scalar_loop():
    clf = LinearPixelClassifier(5, 6, RngStream(1))
    clf.bias.value[...] = RngStream(2).normal(5)
    x = RngStream(3).normal((7, 6))
    got = logits(clf, x)
    for i in range(7):
        for c in range(5):
            ref = sum(x[i, j] * clf.weight.value[c, j] for j in range(6)) + clf.bias.value[c]
            assert abs(got[i, c] - ref) < 1e-12


def test_predict_modes():
    scores = np.array([[5.0, 0.0, 0.0, 1.0, 2.0]])
    assert predict_scores(scores, "generalized").tolist() == [0]
    assert predict_scores(scores, "vanilla", (3, 4)).tolist() == [4]
    assert predict_scores(np.zeros((2, 5))).tolist() == [0, 0]
    assert predict_scores(np.zeros((1, 5)), "vanilla", (4, 3)).tolist() == [3]
    with pytest.raises(ConfigError):
        predict_scores(scores, "vanilla", ())
    with pytest.raises(ConfigError):
        predict_scores(scores, "greedy")


def test_predict_matches_argmax_oracle_and_shift_invariance():
    rng = np.random.default_rng(4)
    scores = rng.normal(size=(300, 5))
    gen = predict_scores(scores)
    van = predict_scores(scores, "vanilla", (3, 4))
    for row, g, v in zip(scores, gen, van):
        assert g == max(range(5), key=lambda c: (row[c], -c))
        assert v == max((3, 4), key=lambda c: (row[c], -c))
    assert np.array_equal(predict_scores(scores + rng.normal(size=(300, 1))), gen)


def _toy_sets(seed=0):
    rng = RngStream(seed)
    means = np.eye(5) * 3
    ys = rng.integers(0, 3, size=300)
    xs = means[ys] + 0.1 * rng.normal((300, 5))
    yu = np.repeat([3, 4], 50)
    xu = means[yu] + 0.1 * rng.normal((100, 5))
    return (xs, ys), (xu, yu), means


def test_zero_iterations_and_label_checks():
    seen, synth, _ = _toy_sets()
    clf = LinearPixelClassifier(5, 5, RngStream(0))
    before = clf.weight.value.copy()
    res = finetune_classifier(clf, seen, synth, ClassifierTrainConfig(iterations=0), RngStream(1), SPLIT)
    assert res.trace == [] and np.array_equal(before, clf.weight.value)
    with pytest.raises(DataError):
        finetune_classifier(clf, synth, synth, ClassifierTrainConfig(), RngStream(1), SPLIT)
    with pytest.raises(DataError):
        finetune_classifier(clf, seen, seen, ClassifierTrainConfig(), RngStream(1), SPLIT)
    with pytest.raises(DataError):
        finetune_classifier(clf, seen, (np.zeros((0, 5)), np.zeros(0, int)), ClassifierTrainConfig(),
                            RngStream(1), SPLIT)
    with pytest.raises(DataError):
        finetune_classifier(clf, seen, synth, ClassifierTrainConfig(), RngStream(1), SPLIT,
                            pseudo_set=seen)


def test_finetune_learns_and_balances():
    seen, synth, means = _toy_sets()
    clf = LinearPixelClassifier(5, 5, RngStream(0))
    cfg = ClassifierTrainConfig(iterations=300, batch_size=64)
    res = finetune_classifier(clf, seen, synth, cfg, RngStream(1), SPLIT)
    assert np.mean(res.trace[-20:]) < 0.2 * np.mean(res.trace[:20])
    assert predict(clf, means).tolist() == [0, 1, 2, 3, 4]
    frac = res.class_draws / res.class_draws.sum()
    assert np.all(np.abs(frac - 0.2) < 0.02)


def test_seen_only_mode():
    seen, _, means = _toy_sets()
    empty = (np.zeros((0, 5)), np.zeros(0, dtype=np.int64))
    clf = LinearPixelClassifier(5, 5, RngStream(0))
    finetune_classifier(clf, seen, empty, ClassifierTrainConfig(iterations=300, batch_size=64), RngStream(1),
                        SPLIT, allow_empty_synthetic=True)
    assert not np.isin(predict(clf, means), SPLIT.unseen).any()


def test_class_pools_cap():
    x = np.arange(20.0).reshape(10, 2)
    y = np.array([0] * 8 + [1] * 2)
    pools = build_class_pools([(x, y)], 3, RngStream(0))
    assert len(pools[0]) == 3 and len(pools[1]) == 2


def test_determinism():
    seen, synth, _ = _toy_sets()
    outs = []
    for _ in range(2):
        clf = LinearPixelClassifier(5, 5, RngStream(0))
        finetune_classifier(clf, seen, synth, ClassifierTrainConfig(iterations=50), RngStream(1), SPLIT)
        outs.append(clf.weight.value.copy())
    assert np.array_equal(*outs)


def test_checkpoint_round_trip(tmp_path):
    clf = LinearPixelClassifier(4, 3, RngStream(0))
    clf.bias.value[...] = [1, 2, 3, 4]
    path = tmp_path / "c.ckpt"
    save_classifier(clf, path)
    again = load_classifier(path)
    assert np.array_equal(again.weight.value, clf.weight.value)
    assert np.array_equal(again.bias.value, clf.bias.value)
    raw = path.read_bytes()
    path.write_bytes(b"ZS3G" + raw[4:])
    with pytest.raises(FormatError):
        load_classifier(path)
    path.write_bytes(raw[:-1])
    with pytest.raises(OSError):
        load_classifier(path)


def test_config_validation():
    with pytest.raises(ConfigError):
        ClassifierTrainConfig(lr=-1).validate()
    with pytest.raises(ConfigError):
        ClassifierTrainConfig(momentum=1.0).validate()
