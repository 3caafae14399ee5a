"""Class-conditioned generative moment matching network (GMMN).

The generator maps ``[a ‖ z]`` (class embedding, Gaussian noise) to a pixel
feature and is trained so that, class by class, generated and real feature
populations have low multi-bandwidth MMD.
"""
import struct
from dataclasses import dataclass

import numpy as np

from zs3.errors import ConfigError, DimensionError, FormatError, UnknownClassError
from zs3.tensor_core import Affine, Dropout, LeakyReLU, Optimizer

DEFAULT_BANDWIDTHS = (2.0, 5.0, 10.0, 20.0, 40.0, 60.0)


def gaussian_kernel(x, y, sigma):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    if sigma <= 0:
        raise ConfigError(f"bandwidth must be positive, got {sigma}")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * sigma**2)))


def pairwise_sqdist(x, y):
    # explicit differences: D(x, y) is exactly D(y, x).T, which keeps MMD symmetric bit-for-bit
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _ordered_mean(k):
    # summation order fixed by value, not by layout
    return float(np.sort(k, axis=None).sum()) / k.size


def check_bandwidths(bandwidths):
    bandwidths = tuple(float(s) for s in bandwidths)
    if not bandwidths:
        raise ConfigError("kernel bank is empty")
    if any(s <= 0 for s in bandwidths):
        raise ConfigError(f"bandwidths must be positive: {bandwidths}")
    return bandwidths


def mmd_loss(real, fake, bandwidths=DEFAULT_BANDWIDTHS, with_grad=True):
    """Biased multi-bandwidth MMD^2 and its gradient w.r.t. ``fake``.

    ``sum_s [mean k_s(X, X) + mean k_s(Y, Y) - 2 mean k_s(X, Y)]`` with
    diagonal terms included. Returns ``(loss, grad)``; ``grad`` is ``None``
    when ``with_grad`` is false.
    """
    x = np.asarray(real, dtype=np.float64)
    y = np.asarray(fake, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"sample sets must be 2-D with equal width: {x.shape} vs {y.shape}")
    m, n = len(x), len(y)
    if m == 0 or n == 0:
        raise ValueError("MMD needs two nonempty sample sets")
    bandwidths = check_bandwidths(bandwidths)
    dxx = pairwise_sqdist(x, x)
    dyy = pairwise_sqdist(y, y)
    dxy = pairwise_sqdist(x, y)
    loss = 0.0
    grad = np.zeros_like(y) if with_grad else None
    for s in bandwidths:
        c = 1.0 / (2.0 * s * s)
        kxx = np.exp(-c * dxx)
        kyy = np.exp(-c * dyy)
        kxy = np.exp(-c * dxy)
        loss += (_ordered_mean(kxx) + _ordered_mean(kyy)) - 2.0 * _ordered_mean(kxy)
        if with_grad:
            inv = 1.0 / (s * s)
            grad += (2.0 * inv / (n * n)) * (kyy @ y - kyy.sum(axis=1)[:, None] * y)
            grad -= (2.0 * inv / (m * n)) * (kxy.T @ x - kxy.sum(axis=0)[:, None] * y)
    return loss, grad


@dataclass
class GeneratorConfig:
    hidden: int = 256
    slope: float = 0.2
    dropout: float = 0.5
    bandwidths: tuple = DEFAULT_BANDWIDTHS
    lr: float = 2e-4
    iterations: int = 4000
    batch_real: int = 64
    batch_fake: int = 64
    weight_decay: float = 0.0
    graph_scenes_per_step: int = 16
    graph_target: str = "mean"

    def validate(self):
        check_bandwidths(self.bandwidths)
        if self.hidden < 1:
            raise ConfigError("hidden must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.batch_real < 1 or self.batch_fake < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.graph_scenes_per_step < 1:
            raise ConfigError("graph_scenes_per_step must be >= 1")
        if self.graph_target not in ("mean", "pixel"):
            raise ConfigError(f"graph_target must be 'mean' or 'pixel', got {self.graph_target!r}")


class GmmnMlp:
    """One-hidden-layer MLP: affine -> leaky-ReLU -> dropout -> affine."""

    kind = 0

    def __init__(self, embed_dim, feature_dim, hidden=256, noise_dim=None, slope=0.2,
                 dropout=0.5, rng=None):
        self.embed_dim = embed_dim
        self.noise_dim = embed_dim if noise_dim is None else noise_dim
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.fc1 = Affine(self.embed_dim + self.noise_dim, hidden, rng, "fc1")
        self.act = LeakyReLU(slope)
        self.drop = Dropout(dropout)
        self.fc2 = Affine(hidden, feature_dim, rng, "fc2")

    @property
    def slope(self):
        return self.act.slope

    def parameters(self):
        return self.fc1.parameters() + self.fc2.parameters()

    def forward(self, a, z, rng=None, training=False):
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if a.shape[0] != z.shape[0]:
            raise DimensionError(f"embedding batch {a.shape[0]} != noise batch {z.shape[0]}")
        if a.shape[1] != self.embed_dim or z.shape[1] != self.noise_dim:
            raise DimensionError(
                f"expected embeddings of width {self.embed_dim} and noise of width {self.noise_dim}")
        h = self.act.forward(self.fc1.forward(np.hstack([a, z])))
        h = self.drop.forward(h, rng, training)
        return self.fc2.forward(h)

    def backward(self, gout):
        g = self.drop.backward(self.fc2.backward(gout))
        return self.fc1.backward(self.act.backward(g))


def generator_forward(gen, a, z, rng=None, training=False):
    return gen.forward(a, z, rng, training)


def class_pools(features, labels, classes):
    """Map each class in ``classes`` to its (P_c, d_x) real feature rows."""
    pools = {}
    empty = []
    for c in classes:
        rows = features[labels == c]
        if len(rows) == 0:
            empty.append(int(c))
        pools[int(c)] = rows
    if empty:
        raise ConfigError(f"seen class(es) with zero pixels: {empty}")
    return pools


def train_generator(gen, pools, embeddings, config, rng):
    """Adam on per-class MMD, one class per step in round-robin order.

    Returns the per-iteration loss trace.
    """
    config.validate()
    classes = sorted(pools)
    if not classes:
        raise ConfigError("no classes to train the generator on")
    opt = Optimizer(gen.parameters(), "adam", lr=config.lr, weight_decay=config.weight_decay)
    trace = []
    for it in range(config.iterations):
        c = classes[it % len(classes)]
        pool = pools[c]
        real = pool[rng.integers(0, len(pool), size=config.batch_real)]
        a = np.repeat(embeddings.vectors[c][None, :], config.batch_fake, axis=0)
        z = rng.normal((config.batch_fake, gen.noise_dim))
        opt.zero_grad()
        fake = gen.forward(a, z, rng, training=True)
        loss, g = mmd_loss(real, fake, config.bandwidths)
        gen.backward(g)
        opt.step()
        trace.append(loss)
    return trace


def per_class_mmd(gen, pools, embeddings, bandwidths, rng, n=64, training=True):
    """MMD between ``n`` real and ``n`` generated features for every pooled class."""
    out = {}
    for c in sorted(pools):
        pool = pools[c]
        real = pool[rng.integers(0, len(pool), size=n)]
        fake, _, _ = sample_synthetic(gen, c, n, embeddings, rng, training=training)
        out[c] = mmd_loss(real, fake, bandwidths, with_grad=False)[0]
    return out


def sample_synthetic(gen, cid, n, embeddings, rng, training=False):
    """``n`` synthetic triplets ``(x_hat, y, a)`` for class ``cid``, fresh ``z`` per row.

    Sampling runs with dropout off unless ``training`` is set.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= cid < len(embeddings.catalog):
        raise UnknownClassError(f"unknown class id {cid}")
    a = np.repeat(embeddings.vectors[cid][None, :], n, axis=0)
    z = rng.normal((n, gen.noise_dim))
    x = gen.forward(a, z, rng, training=training)
    return x, np.full(n, cid, dtype=np.int64), a


# -- checkpoints --------------------------------------------------------------

GEN_MAGIC = b"ZS3G"
GEN_VERSION = 1
_GEN_HEADER = struct.Struct("<4sHBHHHHdd")


def save_generator(gen, path):
    with open(path, "wb") as fh:
        fh.write(_GEN_HEADER.pack(GEN_MAGIC, GEN_VERSION, gen.kind, gen.embed_dim, gen.noise_dim,
                                  gen.hidden, gen.feature_dim, gen.slope, gen.drop.rate))
        for p in gen.parameters():
            fh.write(p.value.astype("<f8").tobytes())


def load_generator(path):
    from zs3.graph_context import GraphGenerator

    with open(path, "rb") as fh:
        head = fh.read(_GEN_HEADER.size)
        if len(head) < _GEN_HEADER.size:
            raise OSError(f"{path}: truncated header")
        magic, version, kind, d_a, d_z, hidden, d_x, slope, rate = _GEN_HEADER.unpack(head)
        if magic != GEN_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != GEN_VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        cls = {0: GmmnMlp, 1: GraphGenerator}.get(kind)
        if cls is None:
            raise FormatError(f"{path}: unknown generator kind {kind}")
        gen = cls(d_a, d_x, hidden=hidden, noise_dim=d_z, slope=slope, dropout=rate)
        for p in gen.parameters():
            nbytes = p.value.size * 8
            buf = fh.read(nbytes)
            if len(buf) < nbytes:
                raise OSError(f"{path}: truncated parameter {p.name}")
            p.value[...] = np.frombuffer(buf, dtype="<f8").reshape(p.value.shape)
    return gen
