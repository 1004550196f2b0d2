"""From-scratch neural network core in numpy, float64, NHWC layout.

Implements exactly what the image classifier needs: 3x3 same-padded
convolutions, 2x2 max pooling, dense layers, ReLU, inverted dropout, and a
sigmoid multi-label head trained with per-label binary cross-entropy under
adaptive-moment stochastic gradient descent. Forward/backward passes are
vectorized through im2col; gradients are exact (verified against finite
differences in the test suite).
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import TrainingDivergedError


class Conv2D:
    """3x3 convolution with 'same' zero padding, stride 1."""

    def __init__(self, c_in, c_out, rng, ksize=3):
        self.ksize = ksize
        fan_in = ksize * ksize * c_in
        self.w = rng.standard_normal((ksize, ksize, c_in, c_out)) * math.sqrt(2.0 / fan_in)
        self.b = np.zeros(c_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self._cols = None
        self._x_shape = None

    def params(self):
        return [(self.w, self.dw), (self.b, self.db)]

    def forward(self, x, train, rng):
        n, h, w, c = x.shape
        k = self.ksize
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))  # (n, h, w, c, k, k)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, k * k * c)
        out = cols @ self.w.reshape(k * k * c, -1) + self.b
        self._cols = cols
        self._x_shape = x.shape
        return out.reshape(n, h, w, -1)

    def backward(self, grad):
        n, h, w, c = self._x_shape
        k = self.ksize
        pad = k // 2
        c_out = self.b.size
        g = grad.reshape(n * h * w, c_out)
        self.dw += (self._cols.T @ g).reshape(k, k, c, c_out)
        self.db += g.sum(axis=0)
        dcols = (g @ self.w.reshape(k * k * c, c_out).T).reshape(n, h, w, k, k, c)
        dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
        for ky in range(k):
            for kx in range(k):
                dxp[:, ky:ky + h, kx:kx + w, :] += dcols[:, :, :, ky, kx, :]
        self._cols = None
        return dxp[:, pad:pad + h, pad:pad + w, :]


class MaxPool2:
    """2x2 max pooling with stride 2 (spatial dims must be even)."""

    def forward(self, x, train, rng):
        n, h, w, c = x.shape
        patches = (
            x.reshape(n, h // 2, 2, w // 2, 2, c)
            .transpose(0, 1, 3, 5, 2, 4)
            .reshape(n, h // 2, w // 2, c, 4)
        )
        idx = patches.argmax(axis=-1)
        out = np.take_along_axis(patches, idx[..., None], axis=-1)[..., 0]
        self._idx = idx
        self._x_shape = x.shape
        return out

    def params(self):
        return []

    def backward(self, grad):
        n, h, w, c = self._x_shape
        dpatches = np.zeros((n, h // 2, w // 2, c, 4))
        np.put_along_axis(dpatches, self._idx[..., None], grad[..., None], axis=-1)
        return (
            dpatches.reshape(n, h // 2, w // 2, c, 2, 2)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, h, w, c)
        )


class ReLU:
    def forward(self, x, train, rng):
        self._mask = x > 0.0
        return x * self._mask

    def params(self):
        return []

    def backward(self, grad):
        return grad * self._mask


class Flatten:
    def forward(self, x, train, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def params(self):
        return []

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense:
    def __init__(self, d_in, d_out, rng, scale=None):
        if scale is None:
            scale = math.sqrt(2.0 / d_in)
        self.w = rng.standard_normal((d_in, d_out)) * scale
        self.b = np.zeros(d_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def params(self):
        return [(self.w, self.dw), (self.b, self.db)]

    def forward(self, x, train, rng):
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad):
        self.dw += self._x.T @ grad
        self.db += grad.sum(axis=0)
        self._x = None
        return grad @ self.w.T


class Dropout:
    """Inverted dropout: active only in training; eval is the identity, so
    evaluation activations match the training-time expectation."""

    def __init__(self, rate):
        self.rate = rate
        self._mask = None

    def params(self):
        return []

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) >= self.rate) / keep
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


def sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(scores, y, eps=1e-12):
    """Mean per-label binary cross-entropy over all (sample, label) slots."""
    s = np.clip(scores, eps, 1.0 - eps)
    return float(-np.mean(y * np.log(s) + (1.0 - y) * np.log(1.0 - s)))


class Network:
    """A plain sequential network with a sigmoid multi-label head."""

    def __init__(self, layers):
        self.layers = layers

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def forward_logits(self, x, train=False, rng=None, trace=None):
        if trace is not None:
            trace.append(tuple(x.shape[1:]))
        for layer in self.layers:
            x = layer.forward(x, train, rng)
            if trace is not None:
                trace.append(tuple(x.shape[1:]))
        return x

    def forward(self, x, train=False, rng=None, trace=None):
        return sigmoid(self.forward_logits(x, train=train, rng=rng, trace=trace))

    def zero_grads(self):
        for p, g in self.params():
            g[...] = 0.0

    def backward_from_logits(self, dlogits):
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def loss_and_grads(self, x, y, train=True, rng=None):
        """Mean BCE loss; fills parameter gradients (sigmoid folded into the
        logits gradient for numerical stability)."""
        self.zero_grads()
        logits = self.forward_logits(x, train=train, rng=rng)
        scores = sigmoid(logits)
        loss = bce_loss(scores, y)
        self.backward_from_logits((scores - y) / y.size)
        return loss

    # flat parameter-vector view, used by optimizers and gradient checks

    def get_flat_params(self):
        return np.concatenate([p.ravel() for p, _ in self.params()])

    def set_flat_params(self, flat):
        pos = 0
        for p, _ in self.params():
            p[...] = flat[pos:pos + p.size].reshape(p.shape)
            pos += p.size

    def get_flat_grads(self):
        return np.concatenate([g.ravel() for _, g in self.params()])

    @property
    def n_params(self):
        return sum(p.size for p, _ in self.params())


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p, _ in params]
        self.v = [np.zeros_like(p) for p, _ in params]
        self.t = 0

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for (p, g), m, v in zip(self.params, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def build_cnn(m, k_out, c_in=3, conv1=32, conv2=64, dense=128, dropout=0.5, seed=0):
    """The image classifier: conv(3x3, conv1, same)+ReLU -> pool 2x2 ->
    conv(3x3, conv2, same)+ReLU -> pool 2x2 -> flatten -> dense+ReLU ->
    dropout -> dense k_out (sigmoid head). Requires m divisible by 4."""
    if m % 4 != 0:
        raise ValueError(f"input resolution {m} must be divisible by 4")
    rng = np.random.default_rng(seed)
    flat_dim = (m // 4) * (m // 4) * conv2
    return Network(
        [
            Conv2D(c_in, conv1, rng),
            ReLU(),
            MaxPool2(),
            Conv2D(conv1, conv2, rng),
            ReLU(),
            MaxPool2(),
            Flatten(),
            Dense(flat_dim, dense, rng),
            ReLU(),
            Dropout(dropout),
            Dense(dense, k_out, rng, scale=math.sqrt(1.0 / dense)),
        ]
    )


def build_mlp(d_in, k_out, hidden=128, seed=0):
    rng = np.random.default_rng(seed)
    return Network(
        [
            Dense(d_in, hidden, rng),
            ReLU(),
            Dense(hidden, k_out, rng, scale=math.sqrt(1.0 / hidden)),
        ]
    )


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)


def train_network(net: Network, X, Y, config: TrainConfig) -> TrainHistory:
    """Mini-batch training; deterministic under config.seed (one rng drives
    both the shuffling and the dropout masks)."""
    rng = np.random.default_rng(config.seed)
    opt = Adam(net.params(), lr=config.lr,
               beta1=config.adam_betas[0], beta2=config.adam_betas[1])
    n = X.shape[0]
    history = TrainHistory()
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            sel = perm[start:start + config.batch_size]
            loss = net.loss_and_grads(X[sel], Y[sel], train=True, rng=rng)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite training loss: {loss}")
            if config.lr != 0.0:
                opt.step()
            epoch_loss += loss * len(sel)
        history.losses.append(epoch_loss / n)
    return history


def images_to_input(images):
    """Byte images (n, m, m, 3) -> float input scaled to [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return arr.astype(np.float64) / 255.0


def cnn_forward(net: Network, image, train_mode=False, seed=0, trace=None):
    """Sigmoid scores for one byte image; in train mode the dropout mask is
    drawn from the given seed, so equal seeds give equal scores."""
    x = images_to_input(image)
    rng = np.random.default_rng(seed) if train_mode else None
    return net.forward(x, train=train_mode, rng=rng, trace=trace)[0]
