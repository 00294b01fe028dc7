"""Differentiable layers backing the 3D convolutional regressor.

Each layer caches what its backward pass needs during forward and returns
the gradient with respect to its input from backward; parameter gradients
land in Param.grad. All math is plain numpy so the arithmetic stays
deterministic and dtype-stable (float32 by default, float64 for gradient
verification).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError


class Param:
    """A tensor parameter with its gradient slot."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value: np.ndarray, name: str):
        self.value = value
        self.grad = np.zeros_like(value)
        self.name = name

    @property
    def size(self) -> int:
        return self.value.size


class Layer:
    params: tuple[Param, ...] = ()

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class InputNorm(Layer):
    """Per-sample standardization: subtract mean, divide by std.

    Makes the network invariant to positive affine rescaling of the input
    intensities (up to the epsilon guard).
    """

    def __init__(self, eps: float = 1e-12):
        self.eps = eps

    def forward(self, x):
        axes = tuple(range(1, x.ndim))
        mu = x.mean(axis=axes, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
        self._scale = np.sqrt(var + self.eps)
        self._y = (x - mu) / self._scale
        return self._y

    def backward(self, grad_out):
        axes = tuple(range(1, grad_out.ndim))
        g_mean = grad_out.mean(axis=axes, keepdims=True)
        gy_mean = (grad_out * self._y).mean(axis=axes, keepdims=True)
        return (grad_out - g_mean - self._y * gy_mean) / self._scale


class Conv3d(Layer):
    """3D convolution with 'same' zero padding and odd kernel sizes."""

    def __init__(self, cin, cout, kernel, rng, dtype=np.float32):
        self.kernel = tuple(int(k) for k in kernel)
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValidationError(f"conv kernel dims must be odd, got {self.kernel}")
        fan_in = cin * int(np.prod(self.kernel))
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(cout, cin, *self.kernel)).astype(dtype)
        self.weight = Param(w, "weight")
        self.bias = Param(np.zeros(cout, dtype=dtype), "bias")
        self.params = (self.weight, self.bias)

    def _pad(self, x):
        pz, py, px = (k // 2 for k in self.kernel)
        return np.pad(x, ((0, 0), (0, 0), (pz, pz), (py, py), (px, px)))

    def forward(self, x):
        windows = sliding_window_view(self._pad(x), self.kernel, axis=(2, 3, 4))
        self._windows = windows
        out = np.tensordot(windows, self.weight.value, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        out = np.moveaxis(out, -1, 1)
        out += self.bias.value[None, :, None, None, None]
        return np.ascontiguousarray(out)

    def backward(self, grad_out):
        self.bias.grad = grad_out.sum(axis=(0, 2, 3, 4))
        self.weight.grad = np.tensordot(
            grad_out, self._windows, axes=([0, 2, 3, 4], [0, 2, 3, 4])
        )
        flipped = self.weight.value[:, :, ::-1, ::-1, ::-1]
        g_windows = sliding_window_view(self._pad(grad_out), self.kernel, axis=(2, 3, 4))
        grad_in = np.tensordot(g_windows, flipped, axes=([1, 5, 6, 7], [0, 2, 3, 4]))
        return np.ascontiguousarray(np.moveaxis(grad_in, -1, 1))


class ReLU(Layer):
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, grad_out.dtype.type(0))


class MaxPool3d(Layer):
    """Max pooling with the given (pz, py, px) window; dims must divide."""

    def __init__(self, pool=(1, 2, 2)):
        self.pool = tuple(int(p) for p in pool)

    def forward(self, x):
        b, c, d, h, w = x.shape
        pz, py, px = self.pool
        if d % pz or h % py or w % px:
            raise ValidationError(
                f"input {x.shape[2:]} not divisible by pool {self.pool}"
            )
        do, ho, wo = d // pz, h // py, w // px
        tiles = (
            x.reshape(b, c, do, pz, ho, py, wo, px)
            .transpose(0, 1, 2, 4, 6, 3, 5, 7)
            .reshape(b, c, do, ho, wo, pz * py * px)
        )
        self._idx = tiles.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(tiles, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, grad_out):
        b, c, d, h, w = self._in_shape
        pz, py, px = self.pool
        do, ho, wo = d // pz, h // py, w // px
        tiles = np.zeros((b, c, do, ho, wo, pz * py * px), dtype=grad_out.dtype)
        np.put_along_axis(tiles, self._idx[..., None], grad_out[..., None], axis=-1)
        return (
            tiles.reshape(b, c, do, ho, wo, pz, py, px)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(b, c, d, h, w)
        )


class GlobalAvgPool(Layer):
    """Mean over all spatial axes: (B, C, D, H, W) -> (B, C)."""

    def forward(self, x):
        self._in_shape = x.shape
        return x.mean(axis=(2, 3, 4))

    def backward(self, grad_out):
        b, c, d, h, w = self._in_shape
        g = grad_out / grad_out.dtype.type(d * h * w)
        return np.broadcast_to(g[:, :, None, None, None], self._in_shape).copy()


class Dense(Layer):
    def __init__(self, fin, fout, rng, dtype=np.float32, init="he"):
        bound = np.sqrt(6.0 / fin) if init == "he" else 1.0 / np.sqrt(fin)
        w = rng.uniform(-bound, bound, size=(fin, fout)).astype(dtype)
        self.weight = Param(w, "weight")
        self.bias = Param(np.zeros(fout, dtype=dtype), "bias")
        self.params = (self.weight, self.bias)

    def forward(self, x):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, grad_out):
        self.weight.grad = self._x.T @ grad_out
        self.bias.grad = grad_out.sum(axis=0)
        return grad_out @ self.weight.value.T
