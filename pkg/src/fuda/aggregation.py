"""Client confidence on the target domain and weighted model aggregation.

Four weighting strategies are available:

* ``uniform``  -- plain averaging, every client 1/M;
* ``fedavg``   -- clients weighted by their sample counts;
* ``entropy``  -- clients weighted by normalized inverse mean entropy;
* ``sea``      -- inverse-entropy weights divided by their mean, squared,
  then renormalized. Squaring the mean-relative weights spreads them apart,
  so confident clients dominate even when entropies cluster closely.
  Algebraically the result equals ``w_i^2 / sum_j w_j^2`` for the raw
  inverse-entropy weights ``w``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import DomainDataset
from .errors import DimensionError, ValidationError
from .nn import PROB_FLOOR, ModelParams, _forward_cached, _softmax_rows

AGGREGATORS = ("uniform", "fedavg", "entropy", "sea")

# Mean entropies are clamped to this floor before inversion; an (almost)
# perfectly confident model would otherwise receive unbounded weight.
ENTROPY_FLOOR = 1e-6

WEIGHT_SUM_TOL = 1e-12


@dataclass
class EntropyStats:
    """Per-client mean prediction entropy on the shared target domain."""

    per_client: list[tuple[str, float]]

    def __post_init__(self):
        if not self.per_client:
            raise ValidationError("EntropyStats needs at least one client")
        for cid, h in self.per_client:
            if not math.isfinite(h) or h < 0:
                raise ValidationError(f"client {cid!r}: mean entropy {h} is invalid")

    @property
    def client_ids(self) -> list[str]:
        return [cid for cid, _ in self.per_client]

    @property
    def entropies(self) -> np.ndarray:
        return np.array([h for _, h in self.per_client])


@dataclass
class AggregationWeights:
    """Normalized nonnegative client weights, ordered like the client list."""

    per_client: list[tuple[str, float]]
    strategy: str

    def __post_init__(self):
        weights = self.weights
        if weights.min() < 0:
            raise ValidationError("aggregation weights must be nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValidationError(f"aggregation weights sum to {weights.sum()!r}, not 1")

    @property
    def client_ids(self) -> list[str]:
        return [cid for cid, _ in self.per_client]

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for _, w in self.per_client])


def prediction_entropy(probs: np.ndarray) -> float:
    """Shannon entropy (natural log) of one probability vector."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 1:
        raise DimensionError(f"expected a probability vector, got shape {probs.shape}")
    if not np.isfinite(probs).all() or probs.min() < 0:
        raise ValidationError("probabilities must be finite and nonnegative")
    if abs(probs.sum() - 1.0) > 1e-6:
        raise ValidationError(f"probabilities sum to {probs.sum()!r}, not 1")
    return float(-(probs * np.log(np.maximum(probs, PROB_FLOOR))).sum())


def _entropy_rows(probs: np.ndarray) -> np.ndarray:
    return -(probs * np.log(np.maximum(probs, PROB_FLOOR))).sum(axis=1)


def mean_entropy(params: ModelParams, target: DomainDataset) -> float:
    """Mean prediction entropy of ``params`` over all target samples."""
    if len(target) < 1:
        raise ValidationError("target dataset is empty")
    if target.feature_dim != params.input_dim:
        raise DimensionError(
            f"target features have dim {target.feature_dim}, model expects {params.input_dim}"
        )
    logits, _, _ = _forward_cached(params, target.features)
    return float(_entropy_rows(_softmax_rows(logits)).mean())


def compute_weights(
    stats: EntropyStats, sample_counts: list[int] | None, kind: str
) -> AggregationWeights:
    """Client weights for the chosen strategy, normalized to sum to 1."""
    if kind not in AGGREGATORS:
        raise ValidationError(f"aggregator must be one of {AGGREGATORS}, got {kind!r}")
    ids = stats.client_ids
    m = len(ids)

    if kind == "uniform":
        raw = np.ones(m)
    elif kind == "fedavg":
        if sample_counts is None or len(sample_counts) != m:
            raise ValidationError("fedavg weighting needs one sample count per client")
        counts = np.asarray(sample_counts, dtype=np.float64)
        if counts.min() <= 0:
            raise ValidationError("sample counts must be positive")
        raw = counts
    else:
        entropies = stats.entropies
        if entropies.min() < 0:
            raise ValidationError("mean entropies must be nonnegative")
        inverse = 1.0 / np.maximum(entropies, ENTROPY_FLOOR)
        if kind == "entropy":
            raw = inverse
        else:  # sea: scale by the mean, square, renormalize below
            raw = (inverse / inverse.mean()) ** 2

    weights = raw / raw.sum()
    return AggregationWeights(list(zip(ids, weights.tolist())), strategy=kind)


def aggregate(models: list[ModelParams], weights: AggregationWeights) -> ModelParams:
    """Element-wise weighted average of the models' parameter tensors."""
    if not models:
        raise ValidationError("nothing to aggregate")
    if len(models) != len(weights.per_client):
        raise DimensionError(f"{len(models)} models but {len(weights.per_client)} weights")
    signature = models[0].shape_signature()
    for m in models[1:]:
        if m.shape_signature() != signature:
            raise DimensionError("models disagree on layer shapes")

    w = weights.weights
    layers = []
    for k in range(len(signature)):
        acc_w = w[0] * models[0].layers[k][0]
        acc_b = w[0] * models[0].layers[k][1]
        for i in range(1, len(models)):
            acc_w = acc_w + w[i] * models[i].layers[k][0]
            acc_b = acc_b + w[i] * models[i].layers[k][1]
        layers.append((acc_w, acc_b))
    return ModelParams(layers)
