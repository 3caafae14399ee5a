"""Synthetic scenes standing in for backbone features and segmentation masks.

Label maps are rectangles stamped over a background class. Each pixel of
class ``c`` gets the feature ``a[c] @ W* + eps`` with ``eps ~ N(0, noise^2 I)``,
so unseen-class feature distributions are predictable from their embeddings.
"""
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from zs3.errors import ConfigError, DataError, FormatError, UnknownClassError
from zs3.tensor_core import RngStream

MAGIC = b"ZS3D"
VERSION = 1
_HEADER = struct.Struct("<4sHHHHI")


@dataclass(frozen=True)
class WorldConfig:
    feature_dim: int = 16
    noise: float = 0.05
    height: int = 64
    width: int = 64
    min_stamps: int = 2
    max_stamps: int = 5
    min_rect: int = 10
    max_rect: int = 28
    min_region: int = 40

    def validate(self):
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")
        if self.height < 2 or self.width < 2:
            raise ConfigError("scenes must be at least 2x2")
        if not 0 <= self.min_stamps <= self.max_stamps:
            raise ConfigError("need 0 <= min_stamps <= max_stamps")
        if not 1 <= self.min_rect <= self.max_rect:
            raise ConfigError("need 1 <= min_rect <= max_rect")
        if self.max_rect > min(self.height, self.width):
            raise ConfigError(f"max_rect {self.max_rect} does not fit a {self.height}x{self.width} canvas")
        if self.min_region > self.max_rect**2:
            raise ConfigError(
                f"min_region {self.min_region} larger than the biggest rectangle ({self.max_rect}^2)")


@dataclass
class SyntheticWorld:
    true_map: np.ndarray  # (d_a, d_x)
    config: WorldConfig
    seed: int

    @property
    def noise(self):
        return self.config.noise

    def class_means(self, embeddings):
        return embeddings.vectors @ self.true_map


@dataclass(frozen=True)
class SplitConfig:
    k: int
    unseen: tuple
    seed: int
    n_classes: int

    @property
    def seen(self):
        u = set(self.unseen)
        return tuple(c for c in range(self.n_classes) if c not in u)

    def is_unseen(self, labels):
        return np.isin(labels, np.asarray(self.unseen, dtype=np.int64))


@dataclass
class Dataset:
    features: np.ndarray  # (S, M, N, d_x) float32
    labels: np.ndarray  # (S, M, N) int64
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 4 or self.labels.shape != self.features.shape[:3]:
            raise DataError(f"feature shape {self.features.shape} does not match labels {self.labels.shape}")
        if len(self.labels) == 0:
            raise DataError("dataset is empty")

    def __len__(self):
        return len(self.labels)

    @property
    def feature_dim(self):
        return self.features.shape[-1]

    def flat(self):
        """All pixels as ((P, d_x) float64 features, (P,) labels)."""
        return self.features.reshape(-1, self.feature_dim).astype(np.float64), self.labels.reshape(-1)

    def subset(self, idx):
        return Dataset(self.features[idx], self.labels[idx], dict(self.meta))


def build_world(embeddings, config=None, seed=0):
    config = config or WorldConfig()
    config.validate()
    d_a = embeddings.dim
    if d_a < 2:
        raise ConfigError("embedding dimension must be >= 2")
    rng = RngStream(seed, "world")
    w = rng.normal((d_a, config.feature_dim)) / math.sqrt(d_a)
    return SyntheticWorld(w, config, int(seed))


def stamp(canvas, rect, cls):
    """Paint ``cls`` over rectangle ``(top, left, height, width)`` in place."""
    top, left, h, w = rect
    canvas[top:top + h, left:left + w] = cls
    return canvas


def render_scene(world, classes, seed, background=0, n_stamps=None):
    """Label map: ``background`` everywhere, then random rectangles from ``classes``.

    A stamp is redrawn whenever it would leave any stamped class with fewer
    than ``min_region`` pixels.
    """
    cfg = world.config
    classes = [int(c) for c in classes]
    if not classes:
        raise ConfigError("render_scene needs a nonempty class subset")
    rng = RngStream(seed, "scene")
    canvas = np.full((cfg.height, cfg.width), background, dtype=np.int64)
    if n_stamps is None:
        n_stamps = int(rng.integers(cfg.min_stamps, cfg.max_stamps + 1))
    stamped = set()
    for _ in range(n_stamps):
        cls = classes[int(rng.integers(0, len(classes)))]
        for _attempt in range(1000):
            h = int(rng.integers(cfg.min_rect, cfg.max_rect + 1))
            w = int(rng.integers(cfg.min_rect, cfg.max_rect + 1))
            top = int(rng.integers(0, cfg.height - h + 1))
            left = int(rng.integers(0, cfg.width - w + 1))
            trial = stamp(canvas.copy(), (top, left, h, w), cls)
            counts = np.bincount(trial.ravel(), minlength=max(stamped | {cls}) + 1)
            if all(counts[c] >= cfg.min_region for c in stamped | {cls}):
                canvas = trial
                stamped.add(cls)
                break
        else:
            raise ConfigError("could not place a stamp satisfying min_region; canvas too small")
    return canvas


def emit_features(world, labelmap, embeddings, seed):
    """Per-pixel features ``a[c] @ W* + noise`` as float32 of shape (M, N, d_x)."""
    labelmap = np.asarray(labelmap)
    n_classes = len(embeddings.catalog)
    bad = np.setdiff1d(np.unique(labelmap), np.arange(n_classes))
    if bad.size:
        raise UnknownClassError(f"no embedding for class id(s) {bad.tolist()}")
    means = world.class_means(embeddings)
    x = means[labelmap]
    if world.noise > 0:
        x = x + world.noise * RngStream(seed, "features").normal(x.shape)
    return x.astype(np.float32)


def make_split(catalog, k, seed):
    """Unseen set = first ``k`` of a seeded permutation of the non-background ids.

    The same seed makes ``split(k)`` a prefix of ``split(k')`` for ``k < k'``.
    """
    candidates = [c for c in catalog.ids if c != catalog.background]
    if k < 0 or k >= len(catalog) or k > len(candidates):
        raise ConfigError(f"K={k} invalid for {len(catalog)} classes ({len(candidates)} may be unseen)")
    perm = RngStream(seed, "split").permutation(len(candidates))
    unseen = tuple(int(candidates[i]) for i in perm[:k])
    return SplitConfig(k=k, unseen=unseen, seed=int(seed), n_classes=len(catalog))


def render_dataset(world, embeddings, classes, n_scenes, seed, background=0):
    """``n_scenes`` scenes whose stamps come from ``classes``; seeds derive from ``seed``."""
    labels, feats = [], []
    for i in range(n_scenes):
        scene_seed = _scene_seed(seed, i)
        lab = render_scene(world, classes, scene_seed, background=background)
        labels.append(lab)
        feats.append(emit_features(world, lab, embeddings, scene_seed))
    return Dataset(np.stack(feats), np.stack(labels), {"seed": int(seed), "classes": list(classes)})


def _scene_seed(seed, i):
    return (int(seed) * 1_000_003 + i) % (2**63)


@dataclass
class ZslData:
    """Train (seen classes only), test and unlabeled-pool scenes for one split."""

    train: Dataset
    test: Dataset
    pool: Dataset
    split: SplitConfig


def synthesize(world, embeddings, split, n_train, n_test, n_pool, seed):
    catalog = embeddings.catalog
    bg = catalog.background if catalog.background is not None else 0
    stampable = [c for c in catalog.ids if c != bg]
    seen_stampable = [c for c in split.seen if c != bg]
    root = RngStream(seed, "scenes")
    seeds = [int(root.child(n).integers(0, 2**62)) for n in ("train", "test", "pool")]
    train = render_dataset(world, embeddings, seen_stampable or [bg], n_train, seeds[0], bg)
    test = render_dataset(world, embeddings, stampable, n_test, seeds[1], bg)
    pool = render_dataset(world, embeddings, stampable, n_pool, seeds[2], bg)
    check_seen_only(train, split)
    return ZslData(train, test, pool, split)


def check_seen_only(dataset, split):
    if split.unseen and split.is_unseen(dataset.labels).any():
        present = sorted(set(np.unique(dataset.labels).tolist()) & set(split.unseen))
        raise DataError(f"supervision data contains unseen class(es) {present}")


def dataset_nbytes(n_scenes, height, width, feature_dim):
    return _HEADER.size + n_scenes * height * width * (2 + 4 * feature_dim)


def save_dataset(dataset, path):
    s, m, n, d = dataset.features.shape
    if dataset.labels.max() >= 2**16 or dataset.labels.min() < 0:
        raise FormatError("labels must fit in u16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, m, n, s))
        for i in range(s):
            fh.write(dataset.labels[i].astype("<u2").tobytes())
            fh.write(dataset.features[i].astype("<f4").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise OSError(f"{path}: truncated header")
        magic, version, d, m, n, s = _HEADER.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        labels = np.empty((s, m, n), dtype=np.int64)
        feats = np.empty((s, m, n, d), dtype=np.float32)
        lab_bytes, feat_bytes = m * n * 2, m * n * d * 4
        for i in range(s):
            lb = fh.read(lab_bytes)
            fb = fh.read(feat_bytes)
            if len(lb) < lab_bytes or len(fb) < feat_bytes:
                raise OSError(f"{path}: truncated at scene {i} of {s}")
            labels[i] = np.frombuffer(lb, dtype="<u2").reshape(m, n)
            feats[i] = np.frombuffer(fb, dtype="<f4").reshape(m, n, d)
    return Dataset(feats, labels)
