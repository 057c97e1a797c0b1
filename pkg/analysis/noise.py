"""Monte-Carlo estimates of gradient noise and of what momentum does to it."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from model_core.datasets import Dataset
from model_core.objectives import ModelLike, resolve_model
from model_core.params import as_param_vector, ensure_finite
from optim.rules import linear_scaling_rescale
from optim.schemas import OptimizerConfig, Strategy
from optim.updater import ParameterUpdater

from .schemas import NoiseEstimate


logger = logging.getLogger(__name__)

# z value of a two-sided 95% normal interval
_Z95 = 1.959963984540054
# upper bound on per-sample gradient rows held in memory at once
_CHUNK_ROWS = 1 << 18


def _replica_indices(dataset: Dataset, batch_size: int, replicas: int, seed: int) -> np.ndarray:
    """(replicas, batch_size) sample indices, i.i.d. across replicas."""
    if dataset.is_stream:
        # disjoint stretches of the noise stream, one range of 2**32 per seed
        start = seed << 32
        return start + np.arange(replicas * batch_size, dtype=np.int64).reshape(replicas, batch_size)
    rng = np.random.default_rng([seed, batch_size])
    return rng.integers(0, dataset.size, size=(replicas, batch_size))


def replica_mean_grads(model: ModelLike, w, dataset: Dataset, batch_size: int, replicas: int, seed: int) -> np.ndarray:
    """Mini-batch mean gradients of `replicas` independent batches, one row each."""
    desk = resolve_model(model)
    w = as_param_vector(w, dim=desk.num_params)
    desk.check_dataset(dataset)
    indices = _replica_indices(dataset, batch_size, replicas, seed)
    per_chunk = max(1, _CHUNK_ROWS // (batch_size * desk.num_params))
    means = np.empty((replicas, desk.num_params), dtype=np.float64)
    for start in range(0, replicas, per_chunk):
        block = indices[start:start + per_chunk]
        features, labels = dataset.take(block.reshape(-1))
        grads = desk.sample_grads(w, features, labels).reshape(block.shape[0], batch_size, desk.num_params)
        means[start:start + block.shape[0]] = grads.mean(axis=1)
    return ensure_finite(means, what="replica gradients")


def trace_covariance(samples: np.ndarray) -> tuple[float, float]:
    """Unbiased trace of the covariance of the rows and its standard error."""
    count = samples.shape[0]
    centred = samples - samples.mean(axis=0)
    per_row = (count / (count - 1)) * np.einsum("ij,ij->i", centred, centred)
    return float(per_row.mean()), float(per_row.std(ddof=1) / math.sqrt(count))


def estimate_grad_variance(
    model: ModelLike, w, dataset: Dataset, batch_size: int, replicas: int, seed: int
) -> NoiseEstimate:
    if replicas < 2:
        raise ValidationError(f"A variance estimate needs at least 2 replicas, got {replicas}.")
    if batch_size < 1:
        raise ValidationError(f"Batch size must be at least 1, got {batch_size}.")
    if seed < 0:
        raise ValidationError(f"Seed must be non-negative, got {seed}.")
    means = replica_mean_grads(model, w, dataset, batch_size, replicas, seed)
    variance, stderr = trace_covariance(means)
    estimate = NoiseEstimate(
        batch_size=batch_size,
        variance=variance,
        replicas=replicas,
        ci_low=max(0.0, variance - _Z95 * stderr),
        ci_high=variance + _Z95 * stderr,
    )
    logger.debug("Gradient variance estimated B=%s variance=%.6g replicas=%s", batch_size, variance, replicas)
    return estimate


@dataclass(frozen=True)
class NoiseScan:
    estimates: list[NoiseEstimate]
    slope: float
    intercept: float


def noise_scan(model: ModelLike, w, dataset: Dataset, batch_sizes, replicas: int, seed: int) -> NoiseScan:
    """Variance per batch size plus the least-squares slope of log variance against log B."""
    sizes = sorted(set(int(size) for size in batch_sizes))
    if len(sizes) < 2:
        raise ValidationError("A noise scan needs at least two distinct batch sizes.")
    estimates = [estimate_grad_variance(model, w, dataset, size, replicas, seed) for size in sizes]
    if any(estimate.variance <= 0 for estimate in estimates):
        raise ValidationError("Gradient variance vanished; the log-log fit is undefined.")
    slope, intercept = np.polyfit(np.log(sizes), np.log([estimate.variance for estimate in estimates]), 1)
    logger.info("Noise scan fitted sizes=%s slope=%.4f", len(sizes), slope)
    return NoiseScan(estimates=estimates, slope=float(slope), intercept=float(intercept))


def _check_mu(mu: float) -> None:
    if mu >= 1.0 or mu < 0.0:
        raise ValidationError(f"Momentum must lie in [0, 1), got {mu}.")


def stationarity_steps(mu: float) -> int:
    return math.ceil(50.0 / (1.0 - mu))


def momentum_variance_ratio(mu: float, steps: int | None = None, seed: int = 0, *, chains: int = 512) -> float:
    """Var(u) / Var(g) for u <- mu * u + g driven by i.i.d. standard normal g.

    Both variances are taken over the same post burn-in window, so mu = 0
    yields exactly 1.
    """
    _check_mu(mu)
    minimum = stationarity_steps(mu)
    steps = steps if steps is not None else max(4 * minimum, 1000)
    if steps < minimum:
        raise ValidationError(f"{steps} steps are too few to reach stationarity at mu={mu}; need {minimum}.")
    burn_in = math.ceil(10.0 / (1.0 - mu))
    rng = np.random.default_rng(seed)
    u = np.zeros(chains, dtype=np.float64)
    sums = np.zeros(4, dtype=np.float64)
    for step in range(steps):
        g = rng.standard_normal(chains)
        u = mu * u + g
        if step >= burn_in:
            sums += (u.sum(), (u * u).sum(), g.sum(), (g * g).sum())
    count = (steps - burn_in) * chains
    var_u = sums[1] / count - (sums[0] / count) ** 2
    var_g = sums[3] / count - (sums[2] / count) ** 2
    ratio = float(var_u / var_g)
    logger.info("Momentum variance ratio mu=%s steps=%s ratio=%.6g target=%.6g", mu, steps, ratio, 1 / (1 - mu * mu))
    return ratio


def stationary_buffers(mu: float, population: int, seed: int) -> np.ndarray:
    _check_mu(mu)
    rng = np.random.default_rng(seed)
    v = np.zeros(population, dtype=np.float64)
    for _ in range(stationarity_steps(mu)):
        v = mu * v + rng.standard_normal(population)
    return v


def buffer_rescale_inflation(k: float, mu: float = 0.9, *, population: int = 20000, seed: int = 0) -> float:
    """Variance ratio of a stationary buffer population before and after the linear-scaling rescale."""
    buffers = stationary_buffers(mu, population, seed)
    rescaled = linear_scaling_rescale(buffers, k)
    return float(np.var(rescaled, ddof=1) / np.var(buffers, ddof=1))


@dataclass(frozen=True)
class UpdateVariance:
    strategy: Strategy
    k: float
    before: float
    after: float

    @property
    def ratio(self) -> float:
        return self.after / self.before


def update_variance_at_change(
    strategy: Strategy,
    k: float,
    mu: float = 0.9,
    *,
    replicas: int = 2000,
    seed: int = 0,
    base_lr: float = 0.1,
    base_batch: int = 32,
    sigma2: float = 1.0,
) -> UpdateVariance:
    """Variance of the last update before and the first update after a batch change.

    Each replica is one coordinate of a single updater driven by pure gradient
    noise of variance sigma2 / B, so every replica sees the same strategy hook.
    """
    _check_mu(mu)
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}.")
    if replicas < 30:
        raise ValidationError(f"At least 30 replicas are needed, got {replicas}.")
    config = OptimizerConfig(base_lr=base_lr, momentum=mu, base_batch=base_batch, strategy=Strategy(strategy))
    updater = ParameterUpdater(config, np.zeros(replicas), initial_batch=base_batch)
    rng = np.random.default_rng(seed)

    def step(batch: int) -> np.ndarray:
        before = updater.weights
        grad_sum = math.sqrt(batch * sigma2) * rng.standard_normal(replicas)
        return before - updater.apply(grad_sum, batch).weights

    update = None
    for _ in range(max(1, 2 * stationarity_steps(mu) // 5)):
        update = step(base_batch)
    pre = float(np.var(update, ddof=1))
    new_batch = max(1, round(k * base_batch))
    updater.change_batch(new_batch)
    post = float(np.var(step(new_batch), ddof=1))
    logger.info("Update variance at change strategy=%s k=%s ratio=%.4g", config.strategy.value, k, post / pre)
    return UpdateVariance(strategy=config.strategy, k=k, before=pre, after=post)
