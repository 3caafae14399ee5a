"""Per-pixel linear classifier (the 1x1 convolution over feature maps)."""
import struct
from dataclasses import dataclass

import numpy as np

from zs3.errors import ConfigError, DataError, DimensionError, FormatError
from zs3.tensor_core import Optimizer, Parameter, PolyLrSchedule, poly_lr, softmax_cross_entropy


@dataclass
class ClassifierTrainConfig:
    lr: float = 7e-3
    weight_decay: float = 5e-4
    momentum: float = 0.9
    power: float = 0.9
    iterations: int = 2000
    batch_size: int = 256
    class_cap: int = 500

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_size < 1 or self.class_cap < 1:
            raise ConfigError("batch_size and class_cap must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.power <= 0:
            raise ConfigError("weight_decay must be >= 0 and power > 0")


class LinearPixelClassifier:
    def __init__(self, n_classes, feature_dim, rng=None):
        if rng is None:
            w = np.zeros((n_classes, feature_dim))
        else:
            w = rng.normal((n_classes, feature_dim)) / np.sqrt(feature_dim)
        self.weight = Parameter(w, "clf.weight")
        self.bias = Parameter(np.zeros(n_classes), "clf.bias")

    @property
    def n_classes(self):
        return self.weight.value.shape[0]

    @property
    def feature_dim(self):
        return self.weight.value.shape[1]

    def parameters(self):
        return [self.weight, self.bias]

    def copy(self):
        out = LinearPixelClassifier(self.n_classes, self.feature_dim)
        out.weight.value[...] = self.weight.value
        out.bias.value[...] = self.bias.value
        return out


def logits(clf, features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != clf.feature_dim:
        raise DimensionError(f"expected (B, {clf.feature_dim}) features, got {features.shape}")
    return features @ clf.weight.value.T + clf.bias.value


def predict_scores(scores, mode="generalized", unseen=()):
    """Argmax of a score matrix; ``vanilla`` restricts it to the unseen classes."""
    if mode == "generalized":
        return np.argmax(scores, axis=1)
    if mode != "vanilla":
        raise ConfigError(f"unknown prediction mode {mode!r}")
    unseen = np.array(sorted(set(int(c) for c in unseen)), dtype=np.int64)
    if unseen.size == 0:
        raise ConfigError("vanilla prediction needs a nonempty unseen set")
    return unseen[np.argmax(scores[:, unseen], axis=1)]


def predict(clf, features, mode="generalized", unseen=()):
    """Class id per row; ties go to the smallest id (numpy argmax order)."""
    return predict_scores(logits(clf, features), mode, unseen)


@dataclass
class FinetuneResult:
    trace: list
    class_draws: np.ndarray  # how many rows each class contributed over training


def build_class_pools(groups, cap, rng):
    """Merge ``(features, labels)`` groups into per-class pools capped at ``cap`` rows."""
    feats = {}
    for x, y in groups:
        for c in np.unique(y):
            feats.setdefault(int(c), []).append(x[y == c])
    pools = {}
    for c in sorted(feats):
        rows = np.concatenate(feats[c])
        if len(rows) > cap:
            rows = rows[np.sort(rng.choice(len(rows), cap, replace=False))]
        pools[c] = rows
    return pools


def finetune_classifier(clf, seen_set, synthetic_set, config, rng, split, pseudo_set=None,
                        allow_empty_synthetic=False):
    """SGD + momentum with poly decay on cross-entropy over class-balanced batches.

    ``seen_set`` holds real features labelled with seen classes, ``synthetic_set``
    generated features for unseen classes and ``pseudo_set`` (optional) real
    features carrying unseen pseudo-labels. Only classifier parameters change.
    """
    config.validate()
    seen = set(split.seen)
    unseen = set(split.unseen)
    xs, ys = seen_set
    xu, yu = synthetic_set
    if len(ys) == 0:
        raise DataError("no real seen-class training features")
    if not set(np.unique(ys).tolist()) <= seen:
        raise DataError("real training features carry non-seen labels")
    if len(yu) == 0 and unseen and not allow_empty_synthetic:
        raise DataError("no synthetic unseen features (pass allow_empty_synthetic for the seen-only ablation)")
    if not set(np.unique(yu).tolist()) <= unseen:
        raise DataError("synthetic features carry labels outside the unseen set")
    groups = [(np.asarray(xs, dtype=np.float64), np.asarray(ys))]
    if len(yu):
        groups.append((np.asarray(xu, dtype=np.float64), np.asarray(yu)))
    if pseudo_set is not None and len(pseudo_set[1]):
        if not set(np.unique(pseudo_set[1]).tolist()) <= unseen:
            raise DataError("pseudo-labels must be unseen classes")
        groups.append((np.asarray(pseudo_set[0], dtype=np.float64), np.asarray(pseudo_set[1])))

    pools = build_class_pools(groups, config.class_cap, rng)
    classes = np.array(sorted(pools), dtype=np.int64)
    schedule = PolyLrSchedule(config.lr, config.iterations, config.power)
    opt = Optimizer(clf.parameters(), "sgd_momentum", lr=config.lr, momentum=config.momentum,
                    weight_decay=config.weight_decay)
    draws = np.zeros(clf.n_classes, dtype=np.int64)
    trace = []
    for it in range(config.iterations):
        picked = classes[rng.integers(0, len(classes), size=config.batch_size)]
        xb = np.empty((config.batch_size, clf.feature_dim))
        for c in np.unique(picked):
            rows = np.flatnonzero(picked == c)
            pool = pools[int(c)]
            xb[rows] = pool[rng.integers(0, len(pool), size=len(rows))]
        draws += np.bincount(picked, minlength=clf.n_classes)
        opt.zero_grad()
        loss, g = softmax_cross_entropy(logits(clf, xb), picked)
        clf.weight.grad += g.T @ xb
        clf.bias.grad += g.sum(axis=0)
        lr = poly_lr(schedule, it)
        if lr > 0:
            opt.step(lr)
        trace.append(loss)
    return FinetuneResult(trace, draws)


CLF_MAGIC = b"ZS3C"
CLF_VERSION = 1
_CLF_HEADER = struct.Struct("<4sHHH")


def save_classifier(clf, path):
    with open(path, "wb") as fh:
        fh.write(_CLF_HEADER.pack(CLF_MAGIC, CLF_VERSION, clf.n_classes, clf.feature_dim))
        fh.write(clf.weight.value.astype("<f8").tobytes())
        fh.write(clf.bias.value.astype("<f8").tobytes())


def load_classifier(path):
    with open(path, "rb") as fh:
        head = fh.read(_CLF_HEADER.size)
        if len(head) < _CLF_HEADER.size:
            raise OSError(f"{path}: truncated header")
        magic, version, k, d = _CLF_HEADER.unpack(head)
        if magic != CLF_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != CLF_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        body = fh.read(8 * (k * d + k))
        if len(body) < 8 * (k * d + k):
            raise OSError(f"{path}: truncated parameters")
    values = np.frombuffer(body, dtype="<f8")
    clf = LinearPixelClassifier(k, d)
    clf.weight.value[...] = values[:k * d].reshape(k, d)
    clf.bias.value[...] = values[k * d:]
    return clf
