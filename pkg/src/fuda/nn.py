"""Minimal dense-network engine for bottleneck+head classifiers.

Everything is float64 numpy: forward pass, analytic backprop for the three
cross-entropy variants, heavy-ball SGD, and a linear-warmup learning-rate
schedule. Functions are pure -- parameters are value objects and no
operation mutates its inputs -- so models can be handed between protocol
stages without defensive copying.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, ValidationError

# Floor applied to probabilities inside every log so one-hot targets and
# saturated predictions stay finite.
PROB_FLOOR = 1e-12

LOSS_KINDS = ("ce", "softce", "ssce")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Shape of a classifier over precomputed feature vectors.

    ``bottleneck_widths`` may be empty, in which case the model is a single
    linear head. ReLU sits between consecutive layers; the head output is
    raw logits.
    """

    input_dim: int
    num_classes: int
    bottleneck_widths: tuple[int, ...] = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "bottleneck_widths", tuple(int(w) for w in self.bottleneck_widths))
        if self.input_dim < 1:
            raise ValidationError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if any(w < 1 for w in self.bottleneck_widths):
            raise ValidationError(f"bottleneck widths must be positive, got {self.bottleneck_widths}")

    @property
    def layer_widths(self) -> tuple[int, ...]:
        """Widths from input through bottleneck to the head output."""
        return (self.input_dim, *self.bottleneck_widths, self.num_classes)


@dataclass
class ModelParams:
    """Ordered dense layers as (weights[out, in], bias[out]) pairs."""

    layers: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("a model needs at least one layer")
        cleaned = []
        prev_out = None
        for k, (w, b) in enumerate(self.layers):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.ndim != 1 or b.shape[0] != w.shape[0]:
                raise DimensionError(f"layer {k}: weights {w.shape} and bias {b.shape} do not match")
            if prev_out is not None and w.shape[1] != prev_out:
                raise DimensionError(
                    f"layer {k}: expects {w.shape[1]} inputs but previous layer emits {prev_out}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValidationError(f"layer {k}: parameters contain NaN or Inf")
            prev_out = w.shape[0]
            cleaned.append((w, b))
        self.layers = cleaned

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def num_classes(self) -> int:
        return self.layers[-1][0].shape[0]

    def shape_signature(self) -> tuple[tuple[int, int], ...]:
        return tuple(w.shape for w, _ in self.layers)

    def architecture(self) -> ArchitectureSpec:
        widths = tuple(w.shape[0] for w, _ in self.layers[:-1])
        return ArchitectureSpec(self.input_dim, self.num_classes, widths)

    def copy(self) -> "ModelParams":
        return ModelParams([(w.copy(), b.copy()) for w, b in self.layers])

    def freeze(self) -> "ModelParams":
        """Mark all arrays read-only; used once client training ends."""
        for w, b in self.layers:
            w.flags.writeable = False
            b.flags.writeable = False
        return self

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one mini-batch SGD run."""

    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.9
    warmup_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValidationError(f"warmup_fraction must be in [0, 1), got {self.warmup_fraction}")
        if not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True)
class LossSpec:
    """Which cross-entropy variant to train with.

    ``ce`` expects integer class labels, ``softce`` expects per-sample
    probability vectors, and ``ssce`` mixes those vectors with the uniform
    distribution (weight ``epsilon``) before taking the cross-entropy.
    """

    kind: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError(f"epsilon must be in [0, 1], got {self.epsilon}")


def init_params(arch: ArchitectureSpec, seed: int) -> ModelParams:
    """Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero."""
    rng = np.random.default_rng(seed)
    layers = []
    widths = arch.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        layers.append((w, np.zeros(fan_out)))
    return ModelParams(layers)


def zeros_like(params: ModelParams) -> ModelParams:
    return ModelParams([(np.zeros_like(w), np.zeros_like(b)) for w, b in params.layers])


def _check_batch(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise DimensionError(f"batch must be 2-D (n, features), got shape {batch.shape}")
    if batch.shape[1] != params.input_dim:
        raise DimensionError(
            f"batch has {batch.shape[1]} features but the model expects {params.input_dim}"
        )
    if not np.isfinite(batch).all():
        raise ValidationError("batch contains NaN or Inf")
    return batch


def _forward_cached(params: ModelParams, batch: np.ndarray):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    inputs = [batch]
    pre_acts = []
    h = batch
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        z = h @ w.T + b
        pre_acts.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
            inputs.append(h)
    return pre_acts[-1], inputs, pre_acts


def forward(params: ModelParams, batch: np.ndarray) -> np.ndarray:
    """Raw (pre-softmax) logits for a batch of feature vectors."""
    batch = _check_batch(params, batch)
    logits, _, _ = _forward_cached(params, batch)
    return logits


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis; accepts a vector or a batch."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValidationError("logits contain NaN or Inf")
    return _softmax_rows(logits)


def _target_distribution(targets, n: int, num_classes: int, loss: LossSpec) -> np.ndarray:
    """Per-sample target distributions (n, C) for the configured loss."""
    if loss.kind == "ce":
        labels = np.asarray(targets)
        if labels.shape != (n,):
            raise DimensionError(f"expected {n} integer labels, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("hard cross-entropy needs integer class labels")
        if labels.min() < 0 or labels.max() >= num_classes:
            raise DimensionError(
                f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]"
            )
        dist = np.zeros((n, num_classes))
        dist[np.arange(n), labels] = 1.0
        return dist

    dist = np.asarray(targets, dtype=np.float64)
    if dist.shape != (n, num_classes):
        raise DimensionError(
            f"expected target distributions of shape ({n}, {num_classes}), got {dist.shape}"
        )
    if dist.min() < 0.0:
        raise ValidationError("target distributions contain negative entries")
    if np.abs(dist.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValidationError("target distributions must sum to 1 within 1e-6")
    if loss.kind == "ssce":
        dist = (1.0 - loss.epsilon) * dist + loss.epsilon / num_classes
    return dist


def _cross_entropy(probs: np.ndarray, dist: np.ndarray) -> float:
    return float(-(dist * np.log(np.maximum(probs, PROB_FLOOR))).sum() / probs.shape[0])


def _mean_loss(params: ModelParams, batch: np.ndarray, targets, loss: LossSpec) -> float:
    logits, _, _ = _forward_cached(params, batch)
    probs = _softmax_rows(logits)
    dist = _target_distribution(targets, batch.shape[0], params.num_classes, loss)
    return _cross_entropy(probs, dist)


def loss_and_grad(
    params: ModelParams, batch: np.ndarray, targets, loss: LossSpec
) -> tuple[float, ModelParams]:
    """Batch-mean loss and its exact gradient in the shape of ``params``.

    For ``ssce`` the smoothing is folded into the target distribution here,
    so callers pass the raw pseudo-label vectors.
    """
    batch = _check_batch(params, batch)
    logits, inputs, pre_acts = _forward_cached(params, batch)
    if not np.isfinite(logits).all():
        raise NumericError("model produced non-finite logits")
    n = batch.shape[0]
    probs = _softmax_rows(logits)
    dist = _target_distribution(targets, n, params.num_classes, loss)
    value = _cross_entropy(probs, dist)

    delta = (probs - dist) / n
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    for k in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[k]
        grads.append((delta.T @ inputs[k], delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ w) * (pre_acts[k - 1] > 0.0)
    grads.reverse()
    return value, ModelParams(grads)


def sgd_step(
    params: ModelParams,
    grads: ModelParams,
    velocity: ModelParams,
    lr: float,
    momentum: float,
) -> tuple[ModelParams, ModelParams]:
    """One heavy-ball update: v <- momentum*v + g, p <- p - lr*v."""
    if not (params.shape_signature() == grads.shape_signature() == velocity.shape_signature()):
        raise DimensionError("params, grads and velocity must share one shape")
    new_v = []
    new_p = []
    for (w, b), (gw, gb), (vw, vb) in zip(params.layers, grads.layers, velocity.layers):
        vw = momentum * vw + gw
        vb = momentum * vb + gb
        new_v.append((vw, vb))
        new_p.append((w - lr * vw, b - lr * vb))
    return ModelParams(new_p), ModelParams(new_v)


def lr_at_step(step: int, total_steps: int, base_lr: float, warmup_fraction: float) -> float:
    """Linear ramp to ``base_lr`` over the warmup steps, then constant."""
    if total_steps <= 0:
        raise ValidationError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps})")
    warmup_steps = math.ceil(warmup_fraction * total_steps)
    if step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    return base_lr


def train(
    params: ModelParams,
    features: np.ndarray,
    targets,
    loss: LossSpec,
    cfg: TrainConfig,
) -> ModelParams:
    """Mini-batch SGD over the whole dataset for ``cfg.epochs`` epochs.

    Batch order is reshuffled every epoch from a seed derived as
    ``cfg.seed XOR epoch`` so runs are bit-reproducible. Returns the input
    unchanged when ``epochs`` is zero.
    """
    features = _check_batch(params, features)
    n = features.shape[0]
    targets = np.asarray(targets)
    if targets.shape[0] != n:
        raise DimensionError(f"{n} samples but {targets.shape[0]} targets")
    if cfg.epochs == 0:
        return params

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    velocity = zeros_like(params)
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng(cfg.seed ^ epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            lr = lr_at_step(step, total_steps, cfg.learning_rate, cfg.warmup_fraction)
            value, grads = loss_and_grad(params, features[idx], targets[idx], loss)
            params, velocity = sgd_step(params, grads, velocity, lr, cfg.momentum)
            epoch_loss += value * idx.size
            step += 1
        if not math.isfinite(epoch_loss / n):
            raise NumericError(f"epoch {epoch}: training loss is not finite")
    return params


def check_gradients(
    params: ModelParams,
    batch: np.ndarray,
    targets,
    loss: LossSpec,
    h: float = 1e-5,
    grads: ModelParams | None = None,
) -> float:
    """Worst relative error of analytic gradients vs central differences.

    ``grads`` overrides the analytic gradients under test, which lets a
    harness verify that deliberately corrupted gradients are flagged.
    """
    if not h > 0:
        raise ValidationError(f"h must be positive, got {h}")
    batch = _check_batch(params, batch)
    if grads is None:
        _, grads = loss_and_grad(params, batch, targets, loss)

    probe = params.copy()
    worst = 0.0
    for k in range(len(probe.layers)):
        for tensor_idx in (0, 1):
            arr = probe.layers[k][tensor_idx]
            analytic = grads.layers[k][tensor_idx]
            flat = arr.reshape(-1)
            flat_grad = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                upper = _mean_loss(probe, batch, targets, loss)
                flat[i] = orig - h
                lower = _mean_loss(probe, batch, targets, loss)
                flat[i] = orig
                fd = (upper - lower) / (2.0 * h)
                err = abs(flat_grad[i] - fd) / max(abs(flat_grad[i]), abs(fd), 1e-6)
                worst = max(worst, err)
    return worst
