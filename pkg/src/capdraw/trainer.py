"""Initialization, RMSprop with global-norm gradient clipping, training loop.

Every weight matrix starts from N(0, 0.01^2); gate and head biases start at
zero, while the learned initial states (canvas bias and the two hidden-state
biases) are drawn like weights. The learning rate is constant until
``drop_epoch`` and then switches to ``drop_lr``.

Randomness is scoped per epoch: data and noise streams are spawned from the
master seed by epoch label, so a resumed run consumes exactly the draws a
straight-through run would.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError
from .model import ModelConfig, ModelParams, encode, infer_bound, parameter_shapes
from .rng import RngStream

ZERO_INIT_SUFFIX = "/bias"  # gate/head offsets; learned initial states are drawn


class TrainingDiverged(RuntimeError):
    """Loss or gradients went non-finite; parameters are no longer trusted."""


@dataclass
class TrainSchedule:
    epochs: int = 150
    samples_per_epoch: int = 10000
    initial_lr: float = 0.001
    drop_lr: float = 0.0001
    drop_epoch: int = 110
    clip_norm: float = 10.0
    batch_size: int = 100
    rms_decay: float = 0.95
    rms_eps: float = 1e-6

    def validate(self):
        if self.drop_epoch > self.epochs:
            raise ValueError("TrainSchedule: drop_epoch must not exceed epochs")
        if self.clip_norm <= 0:
            raise ValueError("TrainSchedule: clip_norm must be positive")
        if min(self.epochs, self.samples_per_epoch, self.batch_size) < 1:
            raise ValueError("TrainSchedule: counts must be >= 1")
        return self

    def learning_rate(self, epoch: int) -> float:
        return self.initial_lr if epoch <= self.drop_epoch else self.drop_lr


def init_params(config: ModelConfig, rng: RngStream, std: float = 0.01) -> ModelParams:
    """Fresh parameters in canonical order from a single stream."""
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(ZERO_INIT_SUFFIX):
            tensors[name] = ad.parameter(np.zeros(shape))
        else:
            tensors[name] = ad.parameter(rng.standard_normal(shape) * std)
    return ModelParams(config, tensors)


@dataclass
class OptState:
    accumulators: dict
    decay: float = 0.95
    eps: float = 1e-6
    step_count: int = 0

    @classmethod
    def fresh(cls, params: ModelParams, decay: float = 0.95, eps: float = 1e-6) -> "OptState":
        acc = {name: np.zeros(t.shape) for name, t in params.items()}
        return cls(accumulators=acc, decay=decay, eps=eps)


def global_norm(grads: dict) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def clip_gradients(grads: dict, threshold: float):
    """Scale the whole table down when its global L2 norm exceeds the
    threshold; direction is never changed. Returns (table, observed norm)."""
    if threshold <= 0:
        raise ValueError("clip_gradients: threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold:
        return grads, norm
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}, norm


def rmsprop_step(params: ModelParams, grads: dict, state: OptState, lr: float):
    """acc <- decay*acc + (1-decay)*g^2 ; p <- p - lr * g / sqrt(acc + eps)"""
    for name, tensor in params.items():
        g = grads[name]
        acc = state.accumulators[name]
        acc *= state.decay
        acc += (1.0 - state.decay) * g * g
        tensor.data -= lr * g / np.sqrt(acc + state.eps)
    state.step_count += 1


def batches_by_caption_length(samples, batch_size):
    """Group draws into equal-caption-length batches, preserving draw order
    inside each length group; groups are visited by ascending length."""
    groups = {}
    for sample in samples:
        groups.setdefault(len(sample[1]), []).append(sample)
    for length in sorted(groups):
        bucket = groups[length]
        for i in range(0, len(bucket), batch_size):
            yield bucket[i:i + batch_size]


@dataclass
class EpochStats:
    epoch: int
    mean_bound: float
    learning_rate: float
    wall_seconds: float


@dataclass
class TrainResult:
    params: ModelParams
    opt_state: OptState
    stats: list = field(default_factory=list)


def train(params: ModelParams, schedule: TrainSchedule, sample_source: Callable,
          seed: int, start_epoch: int = 0, opt_state: Optional[OptState] = None,
          on_epoch: Optional[Callable] = None) -> TrainResult:
    """Run epochs ``start_epoch+1 .. epochs`` of bound maximization.

    ``sample_source(rng, count)`` must return ``count`` (image, codes) pairs
    using only the given stream. ``on_epoch(stats, params, opt_state)`` runs
    after each epoch, e.g. to write a checkpoint. A non-finite loss aborts
    with TrainingDiverged; state already handed to ``on_epoch`` stays valid.
    """
    schedule.validate()
    if opt_state is None:
        opt_state = OptState.fresh(params, schedule.rms_decay, schedule.rms_eps)
    names = [name for name, _ in params.items()]
    stats: list = []

    for epoch in range(start_epoch + 1, schedule.epochs + 1):
        started = time.perf_counter()
        data_rng = RngStream(seed).spawn(f"data-epoch-{epoch}")
        noise_rng = RngStream(seed).spawn(f"noise-epoch-{epoch}")
        lr = schedule.learning_rate(epoch)
        samples = sample_source(data_rng, schedule.samples_per_epoch)
        bound_total = 0.0
        seen = 0
        for batch in batches_by_caption_length(samples, schedule.batch_size):
            grad_sum = {name: None for name in names}
            try:
                for image, codes in batch:
                    enc = encode(params, codes)
                    report = infer_bound(params, image, enc, rng=noise_rng, samples=1)
                    table = ad.backward(ad.neg(report.bound_node))
                    bound_total += report.bound
                    seen += 1
                    for name, tensor in params.items():
                        g = table[tensor]
                        if grad_sum[name] is None:
                            grad_sum[name] = g / len(batch)
                        else:
                            grad_sum[name] += g / len(batch)
            except NonFiniteError as err:
                raise TrainingDiverged(
                    f"non-finite loss in epoch {epoch} after {opt_state.step_count} updates"
                ) from err
            clipped, _ = clip_gradients(grad_sum, schedule.clip_norm)
            rmsprop_step(params, clipped, opt_state, lr)
        record = EpochStats(
            epoch=epoch,
            mean_bound=bound_total / max(seen, 1),
            learning_rate=lr,
            wall_seconds=time.perf_counter() - started,
        )
        stats.append(record)
        if on_epoch is not None:
            on_epoch(record, params, opt_state)
    return TrainResult(params=params, opt_state=opt_state, stats=stats)
