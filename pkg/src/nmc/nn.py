"""Differentiable layers with hand-written backward passes, Adam and gradient checking.

Every layer works on 2-D float64 arrays of shape ``(batch, features)``. A
layer caches what it needs during :meth:`forward` and consumes it in
:meth:`backward`, which returns the gradient w.r.t. the layer input and
stores parameter gradients in ``layer.grads`` (same keys as ``layer.params``).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BatchTooSmallError, DivergedError, InputTooShortError, ShapeError


def he_init(shape, fan_in, rng) -> np.ndarray:
    """Zero-mean Gaussian draws with standard deviation ``sqrt(2 / fan_in)``."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def conv_out_len(length, kernel, stride) -> int:
    if length < kernel:
        raise InputTooShortError(f"input length {length} shorter than kernel {kernel}")
    return (length - kernel) // stride + 1


def _check_2d(x, n_features, who):
    if x.ndim != 2 or x.shape[1] != n_features:
        raise ShapeError(f"{who} expects (batch, {n_features}) input, got {x.shape}")


class Layer:
    params: dict
    grads: dict
    state: dict

    def __init__(self):
        self.params, self.grads, self.state = {}, {}, {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Dense(Layer):
    """Fully connected layer, ``y = x @ W.T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, n_in, n_out, rng):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": he_init((n_out, n_in), n_in, rng), "b": np.zeros(n_out)}

    def forward(self, x, train=False, rng=None):
        _check_2d(x, self.n_in, "Dense")
        self._x = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        _check_2d(dy, self.n_out, "Dense.backward")
        self.grads = {"W": dy.T @ self._x, "b": dy.sum(axis=0)}
        return dy @ self.params["W"]


class BatchNorm(Layer):
    """Batch normalization over ``channels`` groups of ``length`` features each.

    With ``length == 1`` this is ordinary per-feature batch norm. After a
    convolution the input is laid out channel-major, and statistics are shared
    along each channel's positions. ``momentum`` weights the newest batch in the
    running averages.
    """

    def __init__(self, channels, length=1, momentum=0.1, eps=1e-5):
        super().__init__()
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.channels, self.length = channels, length
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(channels), "beta": np.zeros(channels)}
        self.state = {"running_mean": np.zeros(channels), "running_var": np.ones(channels)}

    def forward(self, x, train=False, rng=None):
        _check_2d(x, self.channels * self.length, "BatchNorm")
        n = x.shape[0]
        x3 = x.reshape(n, self.channels, self.length)
        if train:
            if n < 2:
                raise BatchTooSmallError("batch norm in train mode needs a batch of at least 2")
            mean = x3.mean(axis=(0, 2))
            var = x3.var(axis=(0, 2))
            m = self.momentum
            self.state["running_mean"] = (1 - m) * self.state["running_mean"] + m * mean
            self.state["running_var"] = (1 - m) * self.state["running_var"] + m * var
        else:
            mean, var = self.state["running_mean"], self.state["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x3 - mean[:, None]) * inv_std[:, None]
        self._cache = (xhat, inv_std, train)
        y = self.params["gamma"][:, None] * xhat + self.params["beta"][:, None]
        return y.reshape(n, -1)

    def backward(self, dy):
        xhat, inv_std, train = self._cache
        n = dy.shape[0]
        dy3 = dy.reshape(n, self.channels, self.length)
        self.grads = {
            "gamma": (dy3 * xhat).sum(axis=(0, 2)),
            "beta": dy3.sum(axis=(0, 2)),
        }
        dxhat = dy3 * self.params["gamma"][:, None]
        if not train:
            return (dxhat * inv_std[:, None]).reshape(n, -1)
        count = n * self.length
        dx = (
            count * dxhat
            - dxhat.sum(axis=(0, 2))[:, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2))[:, None]
        ) * (inv_std / count)[:, None]
        return dx.reshape(n, -1)


class ReLU(Layer):
    def forward(self, x, train=False, rng=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        # gradient at exactly 0 is taken as 0
        return dy * self._mask


class Dropout(Layer):
    """Inverted dropout; inference is the identity."""

    def __init__(self, p):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")
        self.p = p
        self.mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.p == 0.0:
            self.mask = None
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        self.mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * self.mask

    def backward(self, dy):
        return dy if self.mask is None else dy * self.mask


class Conv1d(Layer):
    """Strided valid 1-D convolution.

    Input rows hold ``in_channels`` signals of equal length, channel-major;
    output rows hold ``filters`` signals of length ``(L - kernel) // stride + 1``,
    filter-major. ``W`` has shape ``(filters, in_channels, kernel)``.
    """

    def __init__(self, in_channels, filters, kernel, stride, rng):
        super().__init__()
        if min(in_channels, filters, kernel, stride) < 1:
            raise ValueError("in_channels, filters, kernel and stride must be >= 1")
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.stride = kernel, stride
        self.params = {
            "W": he_init((filters, in_channels, kernel), in_channels * kernel, rng),
            "b": np.zeros(filters),
        }

    def out_len(self, length) -> int:
        return conv_out_len(length, self.kernel, self.stride)

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] % self.in_channels:
            raise ShapeError(f"Conv1d got input of shape {x.shape} for {self.in_channels} channels")
        n = x.shape[0]
        length = x.shape[1] // self.in_channels
        t_out = self.out_len(length)
        x3 = x.reshape(n, self.in_channels, length)
        # (n, c, t_out, k)
        win = sliding_window_view(x3, self.kernel, axis=2)[:, :, :: self.stride, :][:, :, :t_out]
        self._cache = (win, length)
        y = np.tensordot(win, self.params["W"], axes=([1, 3], [1, 2]))  # (n, t_out, f)
        y = y.transpose(0, 2, 1) + self.params["b"][None, :, None]
        return y.reshape(n, -1)

    def backward(self, dy):
        win, length = self._cache
        n, c, t_out, k = win.shape
        dy3 = dy.reshape(n, self.filters, t_out)
        self.grads = {
            "W": np.tensordot(dy3, win, axes=([0, 2], [0, 2])),
            "b": dy3.sum(axis=(0, 2)),
        }
        dwin = np.tensordot(dy3, self.params["W"], axes=([1], [0]))  # (n, t_out, c, k)
        dx = np.zeros((n, c, length))
        span = self.stride * (t_out - 1) + 1
        for u in range(k):
            dx[:, :, u : u + span : self.stride] += dwin[:, :, :, u].transpose(0, 2, 1)
        return dx.reshape(n, -1)


class Sequential:
    """Ordered layer stack with dotted parameter names (``"3.W"``)."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def named(self, attr):
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in getattr(layer, attr).items():
                out[f"{i}.{k}"] = v
        return out

    def params(self):
        return self.named("params")

    def grads(self):
        return self.named("grads")

    def state(self):
        return self.named("state")


class Adam:
    """Adam with bias correction; updates parameter arrays in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0 < beta1 < 1 and 0 < beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m, self.v = {}, {}

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise DivergedError(f"non-finite gradient for {name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for name, g in grads.items():
            p = params[name]
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def grad_check(loss_fn, arrays: dict, analytic: dict, h=1e-5, skip=None, atol=1e-9) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn()`` must recompute the scalar loss from the current contents of
    ``arrays`` (which are perturbed in place and restored). ``skip`` maps a name
    to a boolean mask of coordinates left out of the comparison, e.g. inputs
    sitting on a ReLU kink. The error of one coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``, taken as 0 when both ``|a|`` and
    ``|n|`` are at most ``atol``: a parameter with an exactly zero gradient (a
    bias feeding batch norm) otherwise reports pure round-off, about
    ``eps * |loss| / h``, as error.
    """
    worst = 0.0
    skip = skip or {}
    for name, arr in arrays.items():
        grad = analytic[name]
        mask = skip.get(name)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            if mask is not None and mask[idx]:
                continue
            orig = arr[idx]
            arr[idx] = orig + h
            plus = loss_fn()
            arr[idx] = orig - h
            minus = loss_fn()
            arr[idx] = orig
            num = (plus - minus) / (2.0 * h)
            a = grad[idx]
            if max(abs(a), abs(num)) <= atol:
                continue
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    return worst
