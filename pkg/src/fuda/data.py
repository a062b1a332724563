"""Multi-domain datasets: a synthetic domain-shift generator and a portable
feature-file format.

Feature files are UTF-8 text with LF newlines. Line 1 is the header::

    #fuda-features v1 domain=<id> classes=<C> dim=<d>

and every following line is ``<label-or-dash>,<f0>,...,<f{d-1}>`` with
decimal floats. A ``-`` label marks an unlabeled row; a file must be either
fully labeled or fully unlabeled.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FeatureFileError, ValidationError

FEATURE_FILE_MAGIC = "#fuda-features v1"


@dataclass
class DomainDataset:
    """Feature vectors of one domain, optionally labeled.

    ``clean_labels`` retains the pre-noise labels of synthetic domains for
    diagnostics (e.g. counting injected flips); it is never read by the
    training or adaptation code paths.
    """

    domain_id: str
    features: np.ndarray
    labels: np.ndarray | None
    num_classes: int
    clean_labels: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValidationError(f"features must be a nonempty 2-D array, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValidationError(f"domain {self.domain_id!r}: features contain NaN or Inf")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        for name in ("labels", "clean_labels"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=np.int64)
            if arr.shape != (len(self),):
                raise DimensionError(f"{name} shape {arr.shape} does not match {len(self)} samples")
            if arr.min() < 0 or arr.max() >= self.num_classes:
                raise ValidationError(f"{name} outside [0, {self.num_classes})")
            setattr(self, name, arr)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def without_labels(self) -> "DomainDataset":
        """Label-free view handed to adaptation code (privacy boundary)."""
        return DomainDataset(self.domain_id, self.features, None, self.num_classes)

    def content_hash(self) -> str:
        """SHA-256 over id, shape, features and labels; hex digest."""
        digest = hashlib.sha256()
        digest.update(self.domain_id.encode())
        digest.update(str(self.features.shape).encode())
        digest.update(np.ascontiguousarray(self.features).tobytes())
        if self.labels is not None:
            digest.update(np.ascontiguousarray(self.labels).tobytes())
        return digest.hexdigest()


@dataclass(frozen=True)
class SyntheticShiftConfig:
    """Controls for the synthetic domain-shift generator.

    Domain 0 holds Gaussian class clusters; every further domain is the same
    sample pushed through a seeded random rotation and translation, with each
    label resampled uniformly with probability ``label_noise_rate``.
    """

    num_domains: int = 4
    num_classes: int = 5
    feature_dim: int = 16
    samples_per_domain: int = 4800
    class_separation: float = 2.4
    shift_rotation_max: float = 0.9
    shift_translation_max: float = 1.0
    label_noise_rate: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.num_domains < 2:
            raise ValidationError(f"need at least 2 domains, got {self.num_domains}")
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.samples_per_domain < 1:
            raise ValidationError(f"samples_per_domain must be >= 1, got {self.samples_per_domain}")
        if not self.class_separation > 0:
            raise ValidationError(f"class_separation must be positive, got {self.class_separation}")
        if self.shift_rotation_max < 0 or self.shift_translation_max < 0:
            raise ValidationError("shift magnitudes must be nonnegative")
        if not 0.0 <= self.label_noise_rate < 0.5:
            raise ValidationError(f"label_noise_rate must be in [0, 0.5), got {self.label_noise_rate}")


def _random_rotation(rng: np.random.Generator, dim: int, max_angle: float) -> np.ndarray:
    """Random rotation whose principal angles are all in [0, max_angle].

    Built as plane rotations in a random orthogonal frame: a seeded basis Q,
    one angle per 2-D plane, composed as Q * blockdiag(rot(a_1), ...) * Q^T.
    """
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    block = np.eye(dim)
    for k in range(dim // 2):
        angle = rng.uniform(0.0, max_angle)
        c, s = math.cos(angle), math.sin(angle)
        i, j = 2 * k, 2 * k + 1
        block[i, i] = c
        block[i, j] = -s
        block[j, i] = s
        block[j, j] = c
    return basis @ block @ basis.T


def generate_domains(cfg: SyntheticShiftConfig) -> list[DomainDataset]:
    """Produce ``cfg.num_domains`` datasets sharing one base sample.

    Deterministic in (cfg, cfg.seed): the same config always yields
    byte-identical datasets. With zero shift and zero noise all domains are
    identical copies of domain 0.
    """
    if cfg.shift_rotation_max > 0 and cfg.feature_dim < 2:
        raise ValidationError("rotation shift needs feature_dim >= 2")
    if cfg.num_classes > cfg.feature_dim:
        raise ValidationError(
            f"orthonormal class centers need num_classes <= feature_dim "
            f"({cfg.num_classes} > {cfg.feature_dim})"
        )
    rng = np.random.default_rng(cfg.seed)
    d, c, n = cfg.feature_dim, cfg.num_classes, cfg.samples_per_domain

    # Class centers: a random orthonormal frame scaled by the separation.
    basis, _ = np.linalg.qr(rng.standard_normal((d, c)))
    centers = cfg.class_separation * basis.T

    base_labels = rng.integers(0, c, size=n)
    base_features = centers[base_labels] + rng.standard_normal((n, d))

    domains = [
        DomainDataset("domain0", base_features.copy(), base_labels.copy(), c,
                      clean_labels=base_labels.copy())
    ]
    for k in range(1, cfg.num_domains):
        features = base_features
        if cfg.shift_rotation_max > 0:
            rotation = _random_rotation(rng, d, cfg.shift_rotation_max)
            features = features @ rotation.T
        if cfg.shift_translation_max > 0:
            direction = rng.standard_normal(d)
            direction /= np.linalg.norm(direction)
            features = features + rng.uniform(0.0, cfg.shift_translation_max) * direction
        labels = base_labels.copy()
        if cfg.label_noise_rate > 0:
            flip = rng.random(n) < cfg.label_noise_rate
            labels[flip] = rng.integers(0, c, size=int(flip.sum()))
        domains.append(
            DomainDataset(f"domain{k}", np.ascontiguousarray(features), labels, c,
                          clean_labels=base_labels.copy())
        )
    return domains


def save_feature_file(ds: DomainDataset, path) -> None:
    """Write ``ds`` in the feature-file format with full-precision floats."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{FEATURE_FILE_MAGIC} domain={ds.domain_id} classes={ds.num_classes} dim={ds.feature_dim}\n")
        labels = ds.labels
        for i in range(len(ds)):
            label = "-" if labels is None else str(int(labels[i]))
            row = ",".join(repr(float(x)) for x in ds.features[i])
            fh.write(f"{label},{row}\n")


def _parse_header(line: str) -> tuple[str, int, int]:
    parts = line.strip().split()
    if len(parts) != 5 or parts[0] != "#fuda-features" or parts[1] != "v1":
        raise FeatureFileError(f"bad header {line.strip()!r}", line=1)
    fields = {}
    for part in parts[2:]:
        key, _, value = part.partition("=")
        fields[key] = value
    if set(fields) != {"domain", "classes", "dim"}:
        raise FeatureFileError(f"header must carry domain=, classes=, dim=, got {line.strip()!r}", line=1)
    try:
        classes = int(fields["classes"])
        dim = int(fields["dim"])
    except ValueError:
        raise FeatureFileError("classes and dim must be integers", line=1) from None
    return fields["domain"], classes, dim


def load_feature_file(path) -> DomainDataset:
    """Parse a feature file; raises FeatureFileError naming the bad line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FeatureFileError("empty file", line=1)
    domain_id, num_classes, dim = _parse_header(lines[0])

    labels: list[int] = []
    rows: list[list[float]] = []
    unlabeled = None
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != dim + 1:
            raise FeatureFileError(f"expected {dim + 1} fields, got {len(cells)}", line=lineno)
        raw_label = cells[0].strip()
        if raw_label == "-":
            row_unlabeled = True
        else:
            row_unlabeled = False
            try:
                label = int(raw_label)
            except ValueError:
                raise FeatureFileError(f"bad label {raw_label!r}", line=lineno) from None
            if not 0 <= label < num_classes:
                raise FeatureFileError(
                    f"label {label} outside [0, {num_classes})", line=lineno
                )
            labels.append(label)
        if unlabeled is None:
            unlabeled = row_unlabeled
        elif unlabeled != row_unlabeled:
            raise FeatureFileError("mixed labeled and unlabeled rows", line=lineno)
        try:
            rows.append([float(cell) for cell in cells[1:]])
        except ValueError:
            raise FeatureFileError("bad float value", line=lineno) from None
    if not rows:
        raise FeatureFileError("file has a header but no data rows", line=2)
    features = np.array(rows, dtype=np.float64)
    label_arr = None if unlabeled else np.array(labels, dtype=np.int64)
    return DomainDataset(domain_id, features, label_arr, num_classes)


def _stratified_first_count(labels: np.ndarray, num_classes: int, fraction: float) -> np.ndarray:
    """Per-class sizes of the first split half, largest-remainder rounding."""
    counts = np.bincount(labels, minlength=num_classes)
    ideal = counts * fraction
    take = np.floor(ideal).astype(np.int64)
    target_total = int(round(len(labels) * fraction))
    remainder = ideal - take
    # Hand out the leftover slots to the classes with the largest remainders,
    # lowest class index first on ties.
    order = np.lexsort((np.arange(num_classes), -remainder))
    i = 0
    while take.sum() < target_total and i < num_classes:
        cls = order[i]
        if take[cls] < counts[cls]:
            take[cls] += 1
        i += 1
    return take


def split(ds: DomainDataset, fraction: float, seed: int) -> tuple[DomainDataset, DomainDataset]:
    """Seeded split into (fraction, 1-fraction) parts, stratified by class
    when labels are present. The two halves partition the original samples.
    """
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}")
    n = len(ds)
    n_first = int(round(n * fraction))
    if n_first in (0, n):
        raise ValidationError(f"fraction {fraction} leaves one half of {n} samples empty")

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    if ds.labels is None:
        first_idx, second_idx = order[:n_first], order[n_first:]
    else:
        take = _stratified_first_count(ds.labels[order], ds.num_classes, fraction)
        remaining = take.copy()
        mask = np.zeros(n, dtype=bool)
        for pos, idx in enumerate(order):
            cls = ds.labels[idx]
            if remaining[cls] > 0:
                mask[pos] = True
                remaining[cls] -= 1
        first_idx, second_idx = order[mask], order[~mask]

    def _take(indices: np.ndarray) -> DomainDataset:
        return DomainDataset(
            ds.domain_id,
            ds.features[indices],
            None if ds.labels is None else ds.labels[indices],
            ds.num_classes,
            clean_labels=None if ds.clean_labels is None else ds.clean_labels[indices],
        )

    return _take(first_idx), _take(second_idx)
