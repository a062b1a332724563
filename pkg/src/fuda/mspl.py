"""Multi-source pseudo-labeling for the unlabeled target domain.

Every source model scores every target sample; the logits are averaged
across models and pushed through softmax once to form per-sample pseudo
label distributions. The global model is then fine-tuned against them,
by default with the smoothed soft-label cross-entropy, which mixes each
pseudo label with the uniform distribution to keep noisy labels from
dominating.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DomainDataset
from .errors import DimensionError, ValidationError
from .nn import (
    PROB_FLOOR,
    LossSpec,
    ModelParams,
    TrainConfig,
    _forward_cached,
    _softmax_rows,
    train,
)


@dataclass
class PseudoLabelSet:
    """One probability vector per target sample."""

    probs: np.ndarray
    source_count: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise DimensionError(f"pseudo labels must be 2-D (n, C), got {self.probs.shape}")
        if self.source_count < 1:
            raise ValidationError("source_count must be >= 1")
        if self.probs.min() < 0:
            raise ValidationError("pseudo labels contain negative entries")
        if np.abs(self.probs.sum(axis=1) - 1.0).max() > 1e-9:
            raise ValidationError("pseudo label rows must sum to 1 within 1e-9")

    def __len__(self) -> int:
        return self.probs.shape[0]

    def hard_labels(self) -> np.ndarray:
        """Argmax per sample, lowest class index on ties."""
        return np.argmax(self.probs, axis=1)


@dataclass(frozen=True)
class MSPLConfig:
    """Adaptation settings: smoothing strength, SGD recipe and loss choice.

    ``loss`` defaults to the smoothed soft-label cross-entropy at
    ``epsilon``; plain ``ce`` and ``softce`` exist for ablations.
    """

    epsilon: float
    train: TrainConfig
    loss: LossSpec | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValidationError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.loss is None:
            object.__setattr__(self, "loss", LossSpec("ssce", self.epsilon))

    def describe(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "loss": self.loss.kind,
            "epochs": self.train.epochs,
            "batch_size": self.train.batch_size,
            "learning_rate": self.train.learning_rate,
            "momentum": self.train.momentum,
            "warmup_fraction": self.train.warmup_fraction,
            "seed": self.train.seed,
        }


def generate_pseudo_labels(models: list[ModelParams], target: DomainDataset) -> PseudoLabelSet:
    """Average the source models' logits per sample, then apply softmax.

    Target labels, if present, are ignored entirely.
    """
    if not models:
        raise ValidationError("need at least one source model")
    signature = models[0].shape_signature()
    for m in models[1:]:
        if m.shape_signature() != signature:
            raise DimensionError("source models disagree on layer shapes")
    if target.feature_dim != models[0].input_dim:
        raise DimensionError(
            f"target features have dim {target.feature_dim}, models expect {models[0].input_dim}"
        )
    stacked = np.stack([_forward_cached(m, target.features)[0] for m in models])
    mean_logits = stacked.mean(axis=0)
    return PseudoLabelSet(_softmax_rows(mean_logits), source_count=len(models))


def smooth_labels(pl: PseudoLabelSet, epsilon: float) -> PseudoLabelSet:
    """Mix every vector with the uniform distribution: (1-eps)*v + eps/C."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon must be in [0, 1], got {epsilon}")
    c = pl.probs.shape[1]
    return PseudoLabelSet((1.0 - epsilon) * pl.probs + epsilon / c, pl.source_count)


def entropy_increase_of_smoothing(pl: PseudoLabelSet, epsilon: float) -> np.ndarray:
    """Per-sample entropy gain H(smoothed) - H(original).

    Nonnegative up to float rounding, zero exactly for uniform inputs.
    """
    if not 0.0 < epsilon <= 1.0:
        raise ValidationError(f"epsilon must be in (0, 1], got {epsilon}")
    smoothed = smooth_labels(pl, epsilon)

    def _entropies(p: np.ndarray) -> np.ndarray:
        return -(p * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=1)

    return _entropies(smoothed.probs) - _entropies(pl.probs)


def adapt_global(
    global_params: ModelParams,
    target: DomainDataset,
    pl: PseudoLabelSet,
    cfg: MSPLConfig,
) -> ModelParams:
    """Fine-tune the global model on the target features and pseudo labels.

    With the default ``ssce`` loss the smoothing happens inside the loss,
    exactly once -- the pseudo labels are passed in raw. The ``ce`` ablation
    trains on the argmax of each pseudo label instead.
    """
    if len(pl) != len(target):
        raise ValidationError(f"{len(pl)} pseudo labels for {len(target)} target samples")
    if pl.probs.shape[1] != global_params.num_classes:
        raise DimensionError(
            f"pseudo labels have {pl.probs.shape[1]} classes, model emits {global_params.num_classes}"
        )
    targets = pl.hard_labels() if cfg.loss.kind == "ce" else pl.probs
    return train(global_params, target.features, targets, cfg.loss, cfg.train)
