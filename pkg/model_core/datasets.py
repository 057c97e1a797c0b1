from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
from django.core.exceptions import ValidationError
from pydantic import ValidationError as SchemaError

from .exceptions import InvalidBatch
from .prng import gaussian_block
from .schemas import DatasetKind, DatasetSpec


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled samples, either materialised or an addressable noise stream.

    A stream (kind ``noisy_quadratic``) has no stored samples: sample `i` is the
    noise offset generated from ``(seed, i)``, so every index >= 0 is valid and
    ``size`` is only the nominal epoch length.
    """

    kind: str
    size: int
    seed: int
    dim: int
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    sigma2: float | None = None
    spec: DatasetSpec | None = field(default=None, repr=False)

    @property
    def is_stream(self) -> bool:
        return self.features is None

    @classmethod
    def from_arrays(cls, features, labels, *, kind: str = "custom", seed: int = 0) -> "Dataset":
        features = np.array(features, dtype=np.float64, ndmin=2)
        labels = np.array(labels, dtype=np.int64).reshape(-1)
        if features.shape[0] == 0:
            raise ValidationError("A dataset needs at least one sample.")
        if features.shape[0] != labels.shape[0]:
            raise ValidationError(
                f"Feature rows ({features.shape[0]}) and labels ({labels.shape[0]}) differ."
            )
        features.setflags(write=False)
        labels.setflags(write=False)
        return cls(kind=kind, size=features.shape[0], seed=seed, dim=features.shape[1], features=features, labels=labels)

    def check_indices(self, indices: np.ndarray) -> None:
        if indices.size and indices.min() < 0:
            raise InvalidBatch("Sample indices must be non-negative.")
        if not self.is_stream and indices.size and indices.max() >= self.size:
            raise InvalidBatch(f"Sample index {int(indices.max())} is outside a dataset of {self.size}.")

    def take(self, indices) -> tuple[np.ndarray, np.ndarray]:
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        self.check_indices(indices)
        if self.is_stream:
            scale = np.sqrt(self.sigma2 / self.dim)
            noise = scale * gaussian_block(self.seed, indices, self.dim)
            return noise, np.zeros(indices.size, dtype=np.int64)
        return self.features[indices], self.labels[indices]

    def samples(self) -> Iterator[tuple[np.ndarray, int]]:
        features, labels = self.take(np.arange(self.size))
        for row, label in zip(features, labels):
            yield row, int(label)


@dataclass(frozen=True, eq=False)
class Batch:
    indices: np.ndarray

    @classmethod
    def of(cls, indices) -> "Batch":
        indices = np.array(indices, dtype=np.int64).reshape(-1)
        if indices.size == 0:
            raise InvalidBatch("A batch needs at least one sample.")
        if np.unique(indices).size != indices.size:
            raise InvalidBatch("Batch indices must be unique.")
        indices.setflags(write=False)
        return cls(indices=indices)

    @property
    def count(self) -> int:
        return int(self.indices.size)


def _make_blobs(spec: DatasetSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    labels = rng.permutation(np.arange(spec.size, dtype=np.int64) % spec.num_classes)
    angles = 2.0 * np.pi * labels / spec.num_classes
    centers = np.zeros((spec.size, spec.dim), dtype=np.float64)
    centers[:, 0] = spec.separation * np.cos(angles)
    if spec.dim > 1:
        centers[:, 1] = spec.separation * np.sin(angles)
    features = centers + spec.spread * rng.standard_normal((spec.size, spec.dim))
    flip = rng.random(spec.size) < spec.label_noise
    shifted = (labels + rng.integers(1, spec.num_classes, size=spec.size)) % spec.num_classes
    labels = np.where(flip, shifted, labels)
    dataset = Dataset.from_arrays(features, labels, kind=spec.kind.value, seed=spec.seed)
    return replace(dataset, spec=spec)


def build_dataset(spec: DatasetSpec) -> Dataset:
    if spec.kind == DatasetKind.BLOBS:
        return _make_blobs(spec)
    if spec.kind == DatasetKind.NOISY_QUADRATIC:
        return Dataset(
            kind=spec.kind.value,
            size=spec.size,
            seed=spec.seed,
            dim=spec.dim,
            sigma2=spec.sigma2,
            spec=spec,
        )
    raise ValidationError(f"Unknown dataset kind '{spec.kind}'.")


def make_synthetic(kind: str, n: int, seed: int, **options) -> Dataset:
    if n < 1:
        raise ValidationError(f"A synthetic dataset needs n >= 1, got {n}.")
    known = {choice.value for choice in DatasetKind}
    if kind not in known:
        raise ValidationError(f"Unknown dataset kind '{kind}'. Choose one of {sorted(known)}.")
    try:
        spec = DatasetSpec(kind=kind, size=n, seed=seed, **options)
    except SchemaError as exc:
        raise ValidationError(str(exc)) from exc
    dataset = build_dataset(spec)
    logger.debug("Synthetic dataset built kind=%s size=%s seed=%s", kind, n, seed)
    return dataset
