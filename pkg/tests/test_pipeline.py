import dataclasses
import warnings

import numpy as np
import pytest

from oracles import pseudo_label_oracle
from zs3.classifier import ClassifierTrainConfig, LinearPixelClassifier
from zs3.errors import ConfigError, DataError
from zs3.gmmn import GeneratorConfig
from zs3.pipeline import (DeviseBaseline, Zs3RunConfig, apply_overrides, cv_problem, p_sweep,
                          run_baseline, run_zs3, run_zs5, select_pseudo_labels, supervised_oracle,
                          zero_shot_cross_validate)
from zs3.scene_data import Dataset, SplitConfig, ZslData, make_split, synthesize
from zs3.tensor_core import Affine, cosine_loss

FAST = Zs3RunConfig(seed=0, generator=GeneratorConfig(hidden=32, iterations=200),
                    classifier=ClassifierTrainConfig(iterations=300, batch_size=128), n_synthetic=200)


@pytest.fixture(scope="module")
def fast_zs3(emb, small_data):
    _, data = small_data
    return run_zs3(FAST, data, emb)


def _identity_clf(n):
    clf = LinearPixelClassifier(n, n)
    clf.weight.value[...] = np.eye(n)
    return clf


def test_pseudo_labels_match_sort_oracle():
    rng = np.random.default_rng(0)
    split = SplitConfig(k=2, unseen=(2, 4), seed=0, n_classes=5)
    # quantized scores force many confidence ties
    feats = np.round(rng.normal(size=(4, 6, 5, 5)), 1)
    clf = _identity_clf(5)
    for p in (0.1, 0.25, 0.5, 0.9):
        sel = select_pseudo_labels(clf, feats, split, p)
        for s in range(4):
            pix, cls = pseudo_label_oracle(feats[s].reshape(-1, 5), set(split.unseen), p)
            assert sel.pixels[s].tolist() == pix
            assert sel.classes[s].tolist() == cls
            assert np.all(np.diff(sel.confidence[s]) <= 0)


def test_pseudo_label_extremes():
    rng = np.random.default_rng(1)
    split = SplitConfig(k=2, unseen=(2, 4), seed=0, n_classes=5)
    feats = rng.normal(size=(3, 8, 8, 5))
    clf = _identity_clf(5)
    assert len(select_pseudo_labels(clf, feats, split, 0.0)) == 0
    every = select_pseudo_labels(clf, feats, split, 1.0)
    pred = feats.reshape(3, -1, 5).argmax(axis=2)
    assert len(every) == int(np.isin(pred, (2, 4)).sum())
    with pytest.raises(ConfigError):
        select_pseudo_labels(clf, feats, split, 1.5)


def test_zs5_with_p_zero_is_zs3(emb, small_data, fast_zs3):
    _, data = small_data
    cfg = dataclasses.replace(FAST, p=0.0)
    with pytest.warns(UserWarning):
        clf, report, sets = run_zs5(cfg, data, emb, fast_zs3)
    assert clf is fast_zs3.classifier
    assert report.to_dict() == fast_zs3.report.to_dict()


def test_zs5_uses_only_unseen_pseudo_labels(emb, small_data, fast_zs3):
    _, data = small_data
    clf, report, sets = run_zs5(FAST, data, emb, fast_zs3)
    assert len(sets) == 1 and len(sets[0]) > 0
    labels = np.concatenate(sets[0].classes)
    assert set(labels.tolist()) <= set(data.split.unseen)
    assert clf is not fast_zs3.classifier


def test_p_sweep_reports_per_p(emb, small_data, fast_zs3):
    _, data = small_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = p_sweep(FAST, data, emb, [0.0, 0.5, 1.0], fast_zs3)
    assert [p for p, _ in out] == [0.0, 0.5, 1.0]
    assert out[0][1].to_dict() == fast_zs3.report.to_dict()


def test_zs3_is_deterministic(emb, small_data, fast_zs3):
    _, data = small_data
    again = run_zs3(FAST, data, emb)
    assert again.report.to_dict() == fast_zs3.report.to_dict()
    assert again.generator_trace == fast_zs3.generator_trace


def test_synthetic_and_seen_sets_are_disjoint_in_labels(small_data, fast_zs3):
    _, data = small_data
    assert set(np.unique(fast_zs3.synthetic_set[1]).tolist()) == set(data.split.unseen)
    assert not data.split.is_unseen(fast_zs3.seen_set[1]).any()
    assert len(fast_zs3.synthetic_set[1]) == FAST.n_synthetic * len(data.split.unseen)


def test_leaky_training_data_is_rejected(emb, small_data):
    _, data = small_data
    leaky = ZslData(Dataset(data.test.features, data.test.labels), data.test, data.pool, data.split)
    with pytest.raises(DataError):
        run_zs3(FAST, leaky, emb)
    with pytest.raises(DataError):
        run_baseline(FAST, leaky, emb)


def test_k0_matches_supervised_oracle(emb, small_data):
    world, _ = small_data
    data = synthesize(world, emb, make_split(emb.catalog, 0, seed=11), 12, 4, 1, seed=5)
    res = run_zs3(FAST, data, emb)
    _, oracle = supervised_oracle(FAST, data)
    assert res.generator is None
    assert abs(res.report.groups["overall"].miou - oracle.groups["overall"].miou) < 1e-9
    assert res.report.groups["unseen"] is None


def test_seen_only_ablation_predicts_no_unseen(emb, small_data):
    _, data = small_data
    res = run_zs3(FAST, data, emb, seen_only=True)
    assert res.generator is None and len(res.synthetic_set[1]) == 0
    conf = res.report.confusion
    unseen = list(data.split.unseen)
    assert conf[:, unseen].sum() == 0


def test_devise_identity_example(emb):
    table = emb.normalize()
    y = np.arange(1, 10)
    x = table.vectors[y]
    proj = Affine(emb.dim, emb.dim, name="proj")
    proj.weight.value[...] = np.eye(emb.dim)
    loss, _ = cosine_loss(proj.forward(x), table.vectors[y])
    assert loss < 1e-12
    model = DeviseBaseline(proj, table, [])
    assert np.array_equal(model.predict(x), y)
    assert set(model.predict(x, "vanilla", (3, 7)).tolist()) <= {3, 7}


def test_baseline_needs_normalized_embeddings(emb):
    from zs3.pipeline import train_devise_baseline
    from zs3.tensor_core import RngStream

    with pytest.raises(ConfigError):
        train_devise_baseline((np.zeros((2, 16)), np.array([1, 2])), emb, ClassifierTrainConfig(),
                              RngStream(0))


def test_apply_overrides():
    cfg = apply_overrides(FAST, {"generator.lr": 1e-3, "n_synthetic": 7, "generator.bandwidths": [1, 2]})
    assert cfg.generator.lr == 1e-3 and cfg.n_synthetic == 7 and cfg.generator.bandwidths == (1.0, 2.0)
    assert FAST.generator.lr == 2e-4
    with pytest.raises(ConfigError):
        apply_overrides(FAST, {"generator.lrr": 1})
    with pytest.raises(ConfigError):
        apply_overrides(FAST, {"generator.lr": -1.0})


def test_cv_problem_never_touches_true_unseen(emb, small_data):
    _, data = small_data
    problem, table, held = cv_problem(data, emb, seed=0)
    assert len(held) == 2  # ceil(8 / 4)
    assert not set(held) & set(data.split.unseen)
    assert len(table.catalog) == len(data.split.seen)
    assert problem.split.n_classes == len(data.split.seen)
    assert not problem.split.is_unseen(problem.train.labels).any()
    assert problem.split.is_unseen(problem.test.labels).reshape(len(problem.test), -1).any(axis=1).all()


@pytest.fixture(scope="module")
def cv_rows(emb, small_data):
    _, data = small_data
    grid = [{"generator.bandwidths": [1e6]}, {"generator.bandwidths": [2.0, 5.0, 10.0, 20.0, 40.0, 60.0]}]
    return data, grid, zero_shot_cross_validate(FAST, data, emb, grid)


def test_cv_degenerate_bandwidth_loses(cv_rows):
    _, grid, (best, rows) = cv_rows
    assert best == grid[1]
    assert rows[0][1] < rows[1][1]


def test_cv_is_order_invariant_and_single_point(emb, cv_rows):
    data, grid, (best, _) = cv_rows
    again, _ = zero_shot_cross_validate(FAST, data, emb, grid[::-1])
    assert again == best
    one, rows = zero_shot_cross_validate(FAST, data, emb, [grid[0]])
    assert one == grid[0] and len(rows) == 1
    with pytest.raises(ConfigError):
        zero_shot_cross_validate(FAST, data, emb, [])
