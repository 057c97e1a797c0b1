from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from functools import lru_cache
from typing import Union

import numpy as np

from .datasets import Batch, Dataset
from .exceptions import DimensionMismatch, InvalidBatch
from .params import ParamVector, as_param_vector, ensure_finite
from .schemas import ModelKind, ModelSpec


logger = logging.getLogger(__name__)


class DeskModel(ABC):
    """A small differentiable model with exact per-sample losses and gradients.

    Subclasses work on a whole batch at once: `sample_losses` returns one value
    per row of `features`, `sample_grads` one gradient row per sample. Weight
    decay is never part of those; it is added once per batch by the callers.
    """

    def __init__(self, spec: ModelSpec) -> None:
        self.spec = spec
        self.decay_mask = self._decay_mask()

    @property
    @abstractmethod
    def num_params(self) -> int: ...

    @abstractmethod
    def sample_losses(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def sample_grads(self, w: ParamVector, features: np.ndarray, labels: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def init_params(self, seed: int) -> ParamVector: ...

    def _decay_mask(self) -> np.ndarray:
        return np.ones(self.num_params, dtype=np.float64)

    def decay_term(self, w: ParamVector) -> ParamVector:
        return self.spec.weight_decay * (self.decay_mask * w)

    def decay_penalty(self, w: ParamVector) -> float:
        decayed = self.decay_mask * w
        return 0.5 * self.spec.weight_decay * float(decayed @ decayed)

    def check_dataset(self, dataset: Dataset) -> None:
        if dataset.dim != self.spec.input_dim:
            raise DimensionMismatch(
                f"Dataset features have dim {dataset.dim}, model expects {self.spec.input_dim}."
            )

    def population_loss(self, w: ParamVector) -> float | None:
        return None


class QuadraticModel(DeskModel):
    """l(w, x) = ½ wᵀAw + xᵀw, so every sample acts as a gradient offset x."""

    def __init__(self, spec: ModelSpec) -> None:
        self.curvature, self.lambda_max = self._build_curvature(spec)
        super().__init__(spec)

    @staticmethod
    def _build_curvature(spec: ModelSpec) -> tuple[np.ndarray, float]:
        dim = spec.input_dim
        eigenvalues = np.array(spec.curvature.eigenvalues or [1.0] * dim, dtype=np.float64)
        if spec.curvature.rotation_seed is None:
            matrix = np.diag(eigenvalues)
        else:
            rng = np.random.default_rng(spec.curvature.rotation_seed)
            rotation, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
            matrix = rotation @ np.diag(eigenvalues) @ rotation.T
            matrix = 0.5 * (matrix + matrix.T)
        matrix.setflags(write=False)
        return matrix, float(eigenvalues.max())

    @property
    def num_params(self) -> int:
        return self.spec.input_dim

    def sample_losses(self, w, features, labels):
        return 0.5 * float(w @ self.curvature @ w) + features @ w

    def sample_grads(self, w, features, labels):
        return (self.curvature @ w)[None, :] + features

    def init_params(self, seed: int) -> ParamVector:
        return np.random.default_rng(seed).standard_normal(self.num_params)

    def population_loss(self, w: ParamVector) -> float:
        return 0.5 * float(w @ self.curvature @ w) + self.decay_penalty(w)


class LogisticRegressionModel(DeskModel):
    """Binary logistic regression; parameters are [weights..., bias]."""

    @property
    def num_params(self) -> int:
        return self.spec.input_dim + 1

    def _decay_mask(self) -> np.ndarray:
        mask = np.ones(self.num_params, dtype=np.float64)
        if not self.spec.decay_all_params:
            mask[-1] = 0.0
        return mask

    def check_dataset(self, dataset: Dataset) -> None:
        super().check_dataset(dataset)
        if dataset.labels is not None and not np.isin(dataset.labels, (0, 1)).all():
            raise InvalidBatch("Logistic regression needs labels in {0, 1}.")

    def _logits(self, w, features):
        return features @ w[:-1] + w[-1]

    def sample_losses(self, w, features, labels):
        z = self._logits(w, features)
        return np.logaddexp(0.0, z) - labels * z

    def sample_grads(self, w, features, labels):
        z = self._logits(w, features)
        residual = 0.5 * (1.0 + np.tanh(0.5 * z)) - labels
        return np.hstack([residual[:, None] * features, residual[:, None]])

    def init_params(self, seed: int) -> ParamVector:
        return np.zeros(self.num_params, dtype=np.float64)


class MLPModel(DeskModel):
    """input -> tanh hidden layer -> softmax classes, trained with cross-entropy.

    Flat layout: W1 (hidden x input, row-major), b1, W2 (classes x hidden), b2.
    """

    @property
    def num_params(self) -> int:
        d, h, c = self.spec.input_dim, self.spec.hidden_width, self.spec.num_classes
        return h * d + h + c * h + c

    def _decay_mask(self) -> np.ndarray:
        mask = np.ones(self.num_params, dtype=np.float64)
        if not self.spec.decay_all_params:
            d, h, c = self.spec.input_dim, self.spec.hidden_width, self.spec.num_classes
            mask[h * d:h * d + h] = 0.0
            mask[-c:] = 0.0
        return mask

    def check_dataset(self, dataset: Dataset) -> None:
        super().check_dataset(dataset)
        if dataset.labels is not None and dataset.labels.size and dataset.labels.max() >= self.spec.num_classes:
            raise InvalidBatch(f"Labels exceed num_classes={self.spec.num_classes}.")

    def unpack(self, w: ParamVector):
        d, h, c = self.spec.input_dim, self.spec.hidden_width, self.spec.num_classes
        w1_end = h * d
        b1_end = w1_end + h
        w2_end = b1_end + c * h
        return (
            w[:w1_end].reshape(h, d),
            w[w1_end:b1_end],
            w[b1_end:w2_end].reshape(c, h),
            w[w2_end:],
        )

    def _forward(self, w, features):
        w1, b1, w2, b2 = self.unpack(w)
        hidden = np.tanh(features @ w1.T + b1)
        logits = hidden @ w2.T + b2
        return hidden, logits

    @staticmethod
    def _log_normaliser(logits):
        peak = logits.max(axis=1)
        return peak + np.log(np.exp(logits - peak[:, None]).sum(axis=1))

    def sample_losses(self, w, features, labels):
        _, logits = self._forward(w, features)
        rows = np.arange(labels.size)
        return self._log_normaliser(logits) - logits[rows, labels]

    def sample_grads(self, w, features, labels):
        _, _, w2, _ = self.unpack(w)
        hidden, logits = self._forward(w, features)
        rows = np.arange(labels.size)
        d_logits = np.exp(logits - self._log_normaliser(logits)[:, None])
        d_logits[rows, labels] -= 1.0
        d_pre = (d_logits @ w2) * (1.0 - hidden ** 2)
        batch = labels.size
        return np.hstack(
            [
                np.einsum("bh,bd->bhd", d_pre, features).reshape(batch, -1),
                d_pre,
                np.einsum("bc,bh->bch", d_logits, hidden).reshape(batch, -1),
                d_logits,
            ]
        )

    def init_params(self, seed: int) -> ParamVector:
        d, h, c = self.spec.input_dim, self.spec.hidden_width, self.spec.num_classes
        rng = np.random.default_rng(seed)
        w1 = rng.standard_normal((h, d)) / np.sqrt(d)
        w2 = rng.standard_normal((c, h)) / np.sqrt(h)
        return np.concatenate([w1.reshape(-1), np.zeros(h), w2.reshape(-1), np.zeros(c)])


MODEL_CLASSES = {
    ModelKind.QUADRATIC: QuadraticModel,
    ModelKind.LOGISTIC_REGRESSION: LogisticRegressionModel,
    ModelKind.MLP: MLPModel,
}

ModelLike = Union[ModelSpec, DeskModel]


@lru_cache(maxsize=64)
def build_model(spec: ModelSpec) -> DeskModel:
    model = MODEL_CLASSES[spec.kind](spec)
    logger.debug("Desk model built kind=%s params=%s", spec.kind.value, model.num_params)
    return model


def resolve_model(model: ModelLike) -> DeskModel:
    return model if isinstance(model, DeskModel) else build_model(model)


def _prepare(model: ModelLike, w, dataset: Dataset, indices) -> tuple[DeskModel, ParamVector, np.ndarray, np.ndarray]:
    desk = resolve_model(model)
    w = as_param_vector(w, dim=desk.num_params)
    desk.check_dataset(dataset)
    features, labels = dataset.take(indices)
    return desk, w, features, labels


def loss(model: ModelLike, w, dataset: Dataset, batch: Batch) -> float:
    desk, w, features, labels = _prepare(model, w, dataset, batch.indices)
    value = float(desk.sample_losses(w, features, labels).sum()) / batch.count + desk.decay_penalty(w)
    ensure_finite(np.array([value]), what="loss")
    return value


def grad(model: ModelLike, w, dataset: Dataset, batch: Batch) -> ParamVector:
    desk, w, features, labels = _prepare(model, w, dataset, batch.indices)
    gradient = desk.sample_grads(w, features, labels).sum(axis=0) / batch.count + desk.decay_term(w)
    return ensure_finite(gradient, what="gradient")


def per_sample_grads(model: ModelLike, w, dataset: Dataset, batch: Batch) -> np.ndarray:
    """One row per sample, without the weight-decay term."""
    desk, w, features, labels = _prepare(model, w, dataset, batch.indices)
    return ensure_finite(desk.sample_grads(w, features, labels), what="per-sample gradients")


def gradient_sum(model: ModelLike, w, dataset: Dataset, indices) -> tuple[ParamVector, float]:
    """Unnormalised (Σ ∇l_i, Σ l_i) over `indices`; a worker's local contribution."""
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    desk = resolve_model(model)
    if indices.size == 0:
        return np.zeros(desk.num_params, dtype=np.float64), 0.0
    desk, w, features, labels = _prepare(desk, w, dataset, indices)
    grads = ensure_finite(desk.sample_grads(w, features, labels).sum(axis=0), what="gradient")
    return grads, float(desk.sample_losses(w, features, labels).sum())


def full_loss(model: ModelLike, w, dataset: Dataset) -> float:
    """Objective over the whole dataset; the exact population loss for streams when known."""
    desk = resolve_model(model)
    if dataset.is_stream:
        value = desk.population_loss(as_param_vector(w, dim=desk.num_params))
        if value is None:
            raise InvalidBatch("This model has no closed-form population loss over a stream.")
        return value
    return loss(desk, w, dataset, Batch.of(np.arange(dataset.size)))
