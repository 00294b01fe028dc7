"""Adam training loop over generator streams, with validation tracking."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from ..errors import DivergenceError, ValidationError
from ..generator import NS_VAL, GeneratorConfig, Sample, sample_at
from .checkpoint import ModelCheckpoint
from .network import Regressor


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 0.0003
    batch_size: int = 2
    steps_per_epoch: int = 5
    seed: int = 0
    validation_source: GeneratorConfig | Sequence[Sample] | None = None
    val_size: int = 32

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if min(self.batch_size, self.steps_per_epoch, self.val_size) < 1:
            raise ValidationError("batch_size, steps_per_epoch, val_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be > 0")


class Adam:
    """Adaptive-moment estimation with bias correction."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.value -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)

    def flat_state(self) -> dict:
        return {
            "t": self.t,
            "m": np.concatenate([a.ravel() for a in self.m]),
            "v": np.concatenate([a.ravel() for a in self.v]),
        }

    def load_flat_state(self, state: dict) -> None:
        self.t = int(state["t"])
        pos = 0
        for i, p in enumerate(self.params):
            n = p.value.size
            self.m[i] = np.asarray(state["m"][pos: pos + n]).reshape(p.value.shape).astype(p.value.dtype)
            self.v[i] = np.asarray(state["v"][pos: pos + n]).reshape(p.value.shape).astype(p.value.dtype)
            pos += n


@dataclass
class EpochLog:
    epoch: int
    train_mse: float
    val_mse: float
    wall_ms: float


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint       # taken at the best validation MSE
    log: list[EpochLog] = field(default_factory=list)
    best_val_mse: float = float("inf")
    final_val_mse: float = float("inf")
    steps: int = 0


def _validation_samples(config: TrainConfig, generator_config) -> list[Sample]:
    source = config.validation_source
    if source is None:
        if generator_config is None:
            raise ValidationError(
                "no validation source: pass TrainConfig.validation_source or generator_config"
            )
        source = generator_config
    if isinstance(source, GeneratorConfig):
        return [sample_at(source, i, NS_VAL) for i in range(config.val_size)]
    return list(source)


def _mse_over(model: Regressor, samples: Sequence[Sample], batch_size: int = 8) -> float:
    total, count = 0.0, 0
    for i in range(0, len(samples), batch_size):
        chunk = samples[i: i + batch_size]
        pred = model.forward([s.image for s in chunk])
        truth = np.stack([s.truth.as_array() for s in chunk])
        total += float(np.sum((pred.astype(np.float64) - truth) ** 2))
        count += truth.size
    return total / count


def write_log_csv(path, log: Iterable[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse", "wall_ms"])
        for row in log:
            writer.writerow([row.epoch, repr(row.train_mse), repr(row.val_mse),
                             f"{row.wall_ms:.1f}"])


def train(
    model: Regressor,
    batches: Iterator[list[Sample]],
    config: TrainConfig,
    generator_config: GeneratorConfig | None = None,
    log_path=None,
    checkpoint_path=None,
) -> TrainResult:
    """Run Adam over the sample stream; checkpoint at the best validation MSE.

    The stream provides the training batches (its batch size should match
    config.batch_size). Validation uses either a fixed array of samples or a
    dedicated generator (drawn once, from the validation seed namespace).
    A non-finite loss aborts with DivergenceError carrying the last good
    checkpoint.
    """
    def snapshot(step):
        return ModelCheckpoint.from_model(
            model, generator_config=generator_config, step=step
        )

    result = TrainResult(checkpoint=snapshot(0))
    if config.epochs == 0:
        return result

    val_set = _validation_samples(config, generator_config)
    optimizer = Adam(model.parameters(), config.learning_rate)
    best_val = float("inf")
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        epoch_mse = 0.0
        for _ in range(config.steps_per_epoch):
            batch = next(batches)
            images = [s.image for s in batch]
            truths = np.stack([s.truth.as_array() for s in batch])
            try:
                mse, _ = model.loss_and_gradients(images, truths)
            except DivergenceError as exc:
                ckpt = result.checkpoint
                if checkpoint_path is not None:
                    ckpt.save(checkpoint_path)
                raise DivergenceError(
                    f"training diverged at step {step}: {exc}", checkpoint=ckpt, step=step,
                ) from exc
            if not np.isfinite(mse):
                ckpt = result.checkpoint
                if checkpoint_path is not None:
                    ckpt.save(checkpoint_path)
                raise DivergenceError(
                    f"training diverged at step {step}: loss={mse}", checkpoint=ckpt, step=step,
                )
            optimizer.step()
            epoch_mse += mse
            step += 1
        val_mse = _mse_over(model, val_set)
        wall_ms = (time.perf_counter() - t0) * 1e3
        result.log.append(EpochLog(epoch, epoch_mse / config.steps_per_epoch, val_mse, wall_ms))
        if val_mse < best_val:
            best_val = val_mse
            result.checkpoint = ModelCheckpoint.from_model(
                model, generator_config=generator_config, step=step,
                optimizer_state=optimizer.flat_state(),
            )
        result.best_val_mse = best_val
        result.final_val_mse = val_mse
        result.steps = step
    if log_path is not None:
        write_log_csv(log_path, result.log)
    if checkpoint_path is not None:
        result.checkpoint.save(checkpoint_path)
    return result
