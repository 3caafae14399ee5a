"""Small dense-layer toolkit with hand-written backward passes.

Matrices are plain float64 numpy arrays with batch along rows. Layers cache
what they need in ``forward`` and accumulate into ``Parameter.grad`` in
``backward``.
"""
import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from zs3.errors import ConfigError, DimensionError


class RngStream:
    """Deterministic counter-based random stream (Philox).

    Gaussian draws use Box-Muller on the stream's uniforms so the sequence
    only depends on the Philox counter, not on numpy's normal sampler.
    """

    def __init__(self, seed, name=""):
        self.seed = int(seed)
        self.name = name
        key = (zlib.crc32(name.encode("utf-8")),) if name else ()
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, name):
        """Independent stream derived from this stream's seed and a name."""
        full = f"{self.name}/{name}" if self.name else name
        return RngStream(self.seed, full)

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size):
        size = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(size))
        half = (n + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # (0, 1]
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])
        return z[:n].reshape(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=True):
        return self._gen.choice(n, size=size, replace=replace)

    def state(self):
        return self._gen.bit_generator.state


@dataclass
class Parameter:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


class Affine:
    """``out = x @ weight + bias`` with weight of shape (n_in, n_out)."""

    def __init__(self, n_in, n_out, rng=None, name="affine", scale=None):
        if rng is None:
            w = np.zeros((n_in, n_out))
        else:
            scale = 1.0 / math.sqrt(n_in) if scale is None else scale
            w = rng.normal((n_in, n_out)) * scale
        self.weight = Parameter(w, f"{name}.weight")
        self.bias = Parameter(np.zeros((1, n_out)), f"{name}.bias")
        self._x = None

    def parameters(self):
        return [self.weight, self.bias]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.weight.value.shape[0]:
            raise DimensionError(
                f"affine expects (B, {self.weight.value.shape[0]}) input, got {x.shape}")
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, gout):
        self.weight.grad += self._x.T @ gout
        self.bias.grad += gout.sum(axis=0, keepdims=True)
        return gout @ self.weight.value.T


def leaky_relu(x, slope=0.2):
    return np.where(x >= 0, x, slope * x)


class LeakyReLU:
    def __init__(self, slope=0.2):
        if not 0.0 < slope < 1.0:
            raise ConfigError(f"leaky-ReLU slope must lie in (0, 1), got {slope}")
        self.slope = slope
        self._x = None

    def forward(self, x):
        self._x = x
        return leaky_relu(x, self.slope)

    def backward(self, gout):
        return np.where(self._x >= 0, gout, self.slope * gout)


class Dropout:
    """Inverted dropout; the mask drawn in ``forward`` is reused by ``backward``."""

    def __init__(self, rate=0.5):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def forward(self, x, rng=None, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.uniform(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, gout):
        return gout if self._mask is None else gout * self._mask


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, targets):
    """Mean negative log-likelihood and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    b, k = logits.shape
    if targets.shape != (b,):
        raise DimensionError(f"expected {b} targets, got shape {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise IndexError(f"target out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(log_z - shifted[rows, targets]))
    grad = np.exp(shifted - log_z[:, None])
    grad[rows, targets] -= 1.0
    return loss, grad / b


def cosine_loss(outputs, targets):
    """Mean of ``1 - cos(output_i, target_i)`` and its gradient w.r.t. ``outputs``.

    ``targets`` are expected to be unit norm.
    """
    norms = np.linalg.norm(outputs, axis=1, keepdims=True)
    norms = np.maximum(norms, 1e-12)
    cos = np.sum(outputs * targets, axis=1, keepdims=True) / norms
    b = outputs.shape[0]
    loss = float(np.mean(1.0 - cos))
    grad = -(targets / norms - cos * outputs / norms**2) / b
    return loss, grad


@dataclass
class PolyLrSchedule:
    base_rate: float
    max_iterations: int
    power: float = 0.9

    def rate(self, it):
        return poly_lr(self, it)


def poly_lr(schedule, it):
    """``base * (1 - it/max)^power``; iterations past the end clamp to 0."""
    if it > schedule.max_iterations:
        warnings.warn(f"iteration {it} past schedule end {schedule.max_iterations}; rate clamped to 0")
        return 0.0
    if schedule.max_iterations == 0:
        return schedule.base_rate
    return schedule.base_rate * (1.0 - it / schedule.max_iterations) ** schedule.power


class Optimizer:
    """SGD with momentum or Adam; weight decay is added to the gradient."""

    def __init__(self, params, mode="adam", lr=2e-4, momentum=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.0):
        if mode not in ("sgd_momentum", "adam"):
            raise ConfigError(f"unknown optimizer mode {mode!r}")
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ConfigError("momentum / beta1 / beta2 must lie in [0, 1)")
        if weight_decay < 0:
            raise ConfigError("weight decay must be nonnegative")
        self.params = list(params)
        self.mode = mode
        self.lr = lr
        self.momentum = momentum
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.steps = 0

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.steps += 1
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad + self.weight_decay * p.value if self.weight_decay else p.grad
            if self.mode == "sgd_momentum":
                m *= self.momentum
                m += g
                p.value -= lr * m
            else:
                m *= self.momentum
                m += (1.0 - self.momentum) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.momentum**self.steps)
                v_hat = v / (1.0 - self.beta2**self.steps)
                p.value -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def gradient_check(closure, params, epsilon=1e-5, floor=1e-8):
    """Worst relative error between analytic and central-difference gradients.

    ``closure()`` must zero the grads, run forward + backward and return the
    loss; it is called once for the analytic gradient and twice per entry.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    params = list(params)
    loss = closure()
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in gradient check")
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = closure()
            flat[i] = orig - epsilon
            f_minus = closure()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError("non-finite loss in gradient check")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            a = g.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    closure()
    return worst
