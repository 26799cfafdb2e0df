"""Dense multilayer perceptron on a flat weight vector, with exact backprop.

Weights live in one float64 vector. :class:`Layout` maps each layer's
weight matrix (fan_in x fan_out, row-major) and bias (fan_out) to slices of
that vector, layer by layer.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "relu")
OUTPUTS = ("softmax_cross_entropy", "mean_squared_error")


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str | tuple[str, ...] = "tanh"
    output: str = "softmax_cross_entropy"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 3:
            raise ValueError(f"need input, at least one hidden and an output layer, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        acts = (self.activation,) * (len(sizes) - 2) if isinstance(self.activation, str) else tuple(self.activation)
        if len(acts) != len(sizes) - 2:
            raise ValueError(f"expected {len(sizes) - 2} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "activation", acts)
        if self.output not in OUTPUTS:
            raise ValueError(f"unknown output {self.output!r}")

    @property
    def n_hidden_layers(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def n_weights(self) -> int:
        s = self.layer_sizes
        return sum((s[i] + 1) * s[i + 1] for i in range(len(s) - 1))

    def layout(self) -> Layout:
        return _layout(self.layer_sizes)


@dataclass(frozen=True)
class RegularizerConfig:
    dropout_rate: float = 0.0
    l2_lambda: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")
        if not self.l2_lambda >= 0.0:
            raise ValueError(f"l2_lambda must be >= 0, got {self.l2_lambda}")

    @property
    def retention(self) -> float:
        return 1.0 - self.dropout_rate


@dataclass(frozen=True)
class Layout:
    shapes: tuple[tuple[int, int], ...]
    offsets: tuple[int, ...] = field(repr=False)

    @classmethod
    def for_sizes(cls, sizes) -> Layout:
        shapes = tuple((int(sizes[i]), int(sizes[i + 1])) for i in range(len(sizes) - 1))
        offsets, pos = [], 0
        for fan_in, fan_out in shapes:
            offsets.append(pos)
            pos += (fan_in + 1) * fan_out
        offsets.append(pos)
        return cls(shapes, tuple(offsets))

    @property
    def size(self) -> int:
        return self.offsets[-1]

    def unpack(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer; writes through to ``w``."""
        if w.shape != (self.size,):
            raise ValueError(f"weight vector has shape {w.shape}, layout expects ({self.size},)")
        out = []
        for (fan_in, fan_out), start in zip(self.shapes, self.offsets):
            mid = start + fan_in * fan_out
            out.append((w[start:mid].reshape(fan_in, fan_out), w[mid : mid + fan_out]))
        return out

    def pack(self, params) -> np.ndarray:
        return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])

    def index(self, layer: int, row: int, col: int) -> int:
        """Flat index of W[layer][row, col]; ``row == fan_in`` addresses the bias."""
        fan_in, fan_out = self.shapes[layer]
        if not (0 <= row <= fan_in and 0 <= col < fan_out):
            raise IndexError((layer, row, col))
        return self.offsets[layer] + row * fan_out + col

    def locate(self, flat: int) -> tuple[int, int, int]:
        if not 0 <= flat < self.size:
            raise IndexError(flat)
        layer = int(np.searchsorted(self.offsets, flat, side="right")) - 1
        rel = flat - self.offsets[layer]
        fan_out = self.shapes[layer][1]
        return layer, rel // fan_out, rel % fan_out


@functools.lru_cache(maxsize=64)
def _layout(sizes: tuple[int, ...]) -> Layout:
    return Layout.for_sizes(sizes)


def init_weights(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    layout = spec.layout()
    w = np.zeros(layout.size)
    for W, _ in layout.unpack(w):
        fan_in, fan_out = W.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return w


def _act(name, z):
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name, z, a):
    return 1.0 - a * a if name == "tanh" else (z > 0).astype(np.float64)


@dataclass
class Cache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    post: list[np.ndarray]
    masks: list[np.ndarray | None]
    retention: float


def draw_masks(spec: MlpSpec, batch_size: int, reg: RegularizerConfig, rng: np.random.Generator):
    """Keep-masks for every hidden layer (None when nothing is dropped)."""
    p = reg.retention
    if p >= 1.0:
        return [None] * spec.n_hidden_layers
    return [rng.random((batch_size, n)) < p for n in spec.layer_sizes[1:-1]]


def forward(
    spec: MlpSpec,
    w: np.ndarray,
    x: np.ndarray,
    mode: str = "eval",
    reg: RegularizerConfig = RegularizerConfig(),
    rng: np.random.Generator | None = None,
    masks=None,
    params=None,
) -> tuple[np.ndarray, Cache]:
    """Forward pass returning raw output-layer values and the activation cache.

    In ``train`` mode hidden units are kept with probability p and scaled by
    1/p (inverted dropout). Masks come from ``masks`` if given, otherwise
    from ``rng``. ``eval`` mode applies neither mask nor scale.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ValueError(f"batch shape {x.shape} does not match input size {spec.layer_sizes[0]}")
    p = reg.retention
    if p <= 0.0:
        raise ValueError("dropout retention must be > 0")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train" and masks is None:
        if p < 1.0 and rng is None:
            raise ValueError("train mode with dropout needs an rng or explicit masks")
        masks = draw_masks(spec, x.shape[0], reg, rng) if p < 1.0 else [None] * spec.n_hidden_layers
    if mode == "eval":
        masks = [None] * spec.n_hidden_layers

    if params is None:
        params = spec.layout().unpack(w)
    cache = Cache([], [], [], [], p)
    a = x
    for i, (W, b) in enumerate(params):
        cache.inputs.append(a)
        z = a @ W + b
        if i == len(params) - 1:
            cache.pre.append(z)
            cache.post.append(z)
            cache.masks.append(None)
            return z, cache
        h = _act(spec.activation[i], z)
        cache.pre.append(z)
        cache.post.append(h)
        m = masks[i]
        if m is not None:
            h = h * m / p
        cache.masks.append(m)
        a = h
    raise AssertionError("unreachable")


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _data_loss(spec: MlpSpec, out: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-example loss and its gradient w.r.t. the output layer."""
    n, k = out.shape
    y = np.asarray(y)
    if spec.output == "softmax_cross_entropy":
        rows = np.arange(n)
        z = out - out.max(axis=1, keepdims=True)
        e = np.exp(z)
        s = e.sum(axis=1)
        loss = float(np.mean(np.log(s) - z[rows, y]))
        d = e / s[:, None]
        d[rows, y] -= 1.0
        return loss, d / n
    target = np.zeros_like(out)
    target[np.arange(n), y] = 1.0
    diff = out - target
    return float(np.mean(np.sum(diff * diff, axis=1) / k)), 2.0 * diff / (k * n)


def _check_batch(x, y):
    if len(x) == 0 or len(y) == 0:
        raise ValueError("empty batch")
    if len(x) != len(y):
        raise ValueError(f"batch has {len(x)} inputs but {len(y)} labels")


def loss_batch(spec, w, x, y, reg=RegularizerConfig(), mode="eval", rng=None, masks=None) -> float:
    """Mean per-example loss plus l2_lambda/2 * ||w||^2."""
    _check_batch(x, y)
    out, _ = forward(spec, w, x, mode, reg, rng, masks)
    loss, _ = _data_loss(spec, out, y)
    return loss + 0.5 * reg.l2_lambda * float(w @ w)


def loss_and_grad(spec, w, x, y, reg=RegularizerConfig(), mode="train", rng=None, masks=None):
    """Loss and its exact gradient; the dropout mask is drawn once and shared."""
    _check_batch(x, y)
    layout = spec.layout()
    params = layout.unpack(w)
    out, cache = forward(spec, w, x, mode, reg, rng, masks, params)
    loss, delta = _data_loss(spec, out, y)
    grad = np.empty(layout.size)
    gparams = layout.unpack(grad)
    for i in range(len(params) - 1, -1, -1):
        W, _ = params[i]
        gW, gb = gparams[i]
        gW[...] = cache.inputs[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i == 0:
            break
        da = delta @ W.T
        m = cache.masks[i - 1]
        if m is not None:
            da = da * m / cache.retention
        delta = da * _act_grad(spec.activation[i - 1], cache.pre[i - 1], cache.post[i - 1])
    if reg.l2_lambda:
        grad += reg.l2_lambda * w
        loss += 0.5 * reg.l2_lambda * float(w @ w)
    return loss, grad


def grad_batch(spec, w, x, y, reg=RegularizerConfig(), mode="train", rng=None, masks=None) -> np.ndarray:
    return loss_and_grad(spec, w, x, y, reg, mode, rng, masks)[1]


def predict(spec: MlpSpec, w: np.ndarray, x: np.ndarray) -> np.ndarray:
    out, _ = forward(spec, w, x, "eval")
    return out.argmax(axis=1)


def error_rate(spec: MlpSpec, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(predict(spec, w, x) != np.asarray(y)))


@dataclass
class MlpObjective:
    """Training loss of an MLP over a fixed dataset.

    ``loss_and_grad`` evaluates a mini-batch in train mode (dropout active);
    ``value`` and ``grad`` use the full dataset in eval mode.
    """

    spec: MlpSpec
    x: np.ndarray
    y: np.ndarray
    reg: RegularizerConfig = RegularizerConfig()

    def loss_and_grad(self, w, batch, rng, reg: RegularizerConfig | None = None):
        reg = self.reg if reg is None else reg
        return loss_and_grad(self.spec, w, self.x[batch], self.y[batch], reg, "train", rng)

    def value(self, w) -> float:
        return loss_batch(self.spec, w, self.x, self.y, self.reg, "eval")

    def grad(self, w) -> np.ndarray:
        return grad_batch(self.spec, w, self.x, self.y, self.reg, "eval")
