"""Compact 3D convolutional regressor mapping volumes to amplitude vectors.

Architecture: per-sample input normalization, then n_blocks of
[convs_per_block x (Conv3d + ReLU)] followed by lateral-only max pooling,
then global average pooling and a small dense stack with a linear output
layer (negative amplitudes must be representable). Channel count starts at
base_channels and doubles per block.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError, ValidationError
from ..volume import Volume
from .layers import Conv3d, Dense, GlobalAvgPool, InputNorm, Layer, MaxPool3d, ReLU


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape of the regressor; the input lateral extent must be divisible
    by prod of the lateral pool factors, i.e. 2**n_blocks for (1, 2, 2)."""

    n_outputs: int
    n_blocks: int = 5
    convs_per_block: int = 2
    base_channels: int = 8
    kernel: tuple[int, int, int] = (3, 3, 3)
    pool: tuple[int, int, int] = (1, 2, 2)
    dense_widths: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "pool", tuple(int(p) for p in self.pool))
        object.__setattr__(self, "dense_widths", tuple(int(u) for u in self.dense_widths))
        if self.n_outputs < 1:
            raise ValidationError("n_outputs must be >= 1")
        if self.n_blocks < 1 or self.convs_per_block < 1 or self.base_channels < 1:
            raise ValidationError("block structure fields must be >= 1")
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValidationError(f"kernel dims must be odd, got {self.kernel}")
        if any(p < 1 for p in self.pool):
            raise ValidationError(f"pool dims must be >= 1, got {self.pool}")

    def channels(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.n_blocks)]

    def validate_input_shape(self, shape: tuple[int, int, int]) -> None:
        d, h, w = shape
        pz, py, px = self.pool
        for name, extent, p in (("z", d, pz), ("y", h, py), ("x", w, px)):
            if extent % (p ** self.n_blocks):
                raise ValidationError(
                    f"input {name} extent {extent} not divisible by "
                    f"{p}^{self.n_blocks} (pool {self.pool}, {self.n_blocks} blocks)"
                )


class Regressor:
    """The trainable network, bound to one input volume shape."""

    def __init__(
        self,
        arch: ArchitectureSpec,
        input_shape: tuple[int, int, int],
        seed: int = 0,
        dtype=np.float32,
    ):
        arch.validate_input_shape(tuple(input_shape))
        self.arch = arch
        self.input_shape = tuple(int(s) for s in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)

        self.norm = InputNorm()
        self.layers: list[Layer] = []
        cin = 1
        for cout in arch.channels():
            for _ in range(arch.convs_per_block):
                self.layers.append(Conv3d(cin, cout, arch.kernel, rng, self.dtype))
                self.layers.append(ReLU())
                cin = cout
            self.layers.append(MaxPool3d(arch.pool))
        self.layers.append(GlobalAvgPool())
        fin = cin
        for width in arch.dense_widths:
            self.layers.append(Dense(fin, width, rng, self.dtype))
            self.layers.append(ReLU())
            fin = width
        self.layers.append(Dense(fin, arch.n_outputs, rng, self.dtype, init="small"))

    # -- parameter plumbing -------------------------------------------------
    def parameters(self) -> list:
        """All Params in the documented order: layer sequence, weight then bias."""
        out = []
        for layer in self.layers:
            out.extend(layer.params)
        return out

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def flat_weights(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters()])

    def load_flat_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat)
        if flat.size != self.n_parameters:
            raise ValidationError(
                f"weight count {flat.size} does not match architecture "
                f"({self.n_parameters} parameters)"
            )
        pos = 0
        for p in self.parameters():
            p.value = flat[pos: pos + p.size].reshape(p.value.shape).astype(self.dtype)
            p.grad = np.zeros_like(p.value)
            pos += p.size

    # -- forward / backward --------------------------------------------------
    def _as_batch(self, batch) -> np.ndarray:
        if isinstance(batch, (list, tuple)):
            batch = np.stack(
                [b.data if isinstance(b, Volume) else np.asarray(b) for b in batch]
            )
        batch = np.asarray(batch, dtype=self.dtype)
        if batch.ndim == 3:
            batch = batch[None]
        if batch.ndim != 4 or batch.shape[1:] != self.input_shape:
            raise ValidationError(
                f"batch shape {batch.shape} does not match model input {self.input_shape}"
            )
        return batch

    def forward(self, batch) -> np.ndarray:
        """Predict amplitude rows (micrometers) for a batch of volumes."""
        x = self.norm.forward(self._as_batch(batch))[:, None]
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def loss_and_gradients(self, batch, truths) -> tuple[float, list[np.ndarray]]:
        """MSE over (samples x modes) plus gradients for every parameter.

        Gradients are left in each Param.grad and also returned as a list
        aligned with parameters().
        """
        truths = np.asarray(truths, dtype=self.dtype)
        pred = self.forward(batch)
        if truths.shape != pred.shape:
            raise ValidationError(
                f"truth shape {truths.shape} does not match predictions {pred.shape}"
            )
        if not np.all(np.isfinite(pred)):
            raise DivergenceError("non-finite values in the forward pass")
        err = pred - truths
        mse = float(np.mean(err.astype(np.float64) ** 2))
        grad = (2.0 / err.size) * err
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        self.norm.backward(grad[:, 0])
        return mse, [p.grad for p in self.parameters()]

    def clone_weights_to(self, other: "Regressor") -> None:
        other.load_flat_weights(self.flat_weights())
