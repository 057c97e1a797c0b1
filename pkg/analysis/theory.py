"""Closed forms for the convex learning-rate optimum and the convergence bound under elastic machine counts.

For step sizes eta_t = eta_0 * k_t**beta the bound on the weighted average of
E||grad L(w_t)||^2 is

    2 L_delta / (eta_0 S_b)  +  eta_0 C sigma2 S_2b1 / S_b,
    S_b = sum k_t**beta,  S_2b1 = sum k_t**(2 beta - 1),

minimised at eta_0 = C1 / sqrt(S_2b1), where it equals C2 sqrt(S_2b1) / S_b.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from django.core.exceptions import ValidationError

from model_core.datasets import build_dataset
from model_core.exceptions import NonFiniteValues
from model_core.objectives import QuadraticModel, build_model
from model_core.params import as_param_vector
from model_core.schemas import DatasetSpec, ModelSpec

from .schemas import TheoremConstants, TheoremOptions


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvexLr:
    exact: float
    approx: float


def optimal_lr_convex(g2: float, C: float, sigma2: float, k: float) -> ConvexLr:
    """Best single-step learning rate on a convex objective with k machines.

    exact = k G^2 / (C (k G^2 + sigma2)); approx = k G^2 / (C sigma2) is its
    linear regime for k G^2 << sigma2.
    """
    for name, value in (("G^2", g2), ("C", C), ("sigma2", sigma2), ("k", k)):
        if not value > 0:
            raise ValidationError(f"{name} must be positive, got {value}.")
    signal = k * g2
    return ConvexLr(exact=signal / (C * (signal + sigma2)), approx=signal / (C * sigma2))


def _trace(constants: TheoremConstants, machine_trace) -> np.ndarray:
    trace = np.asarray(machine_trace, dtype=np.float64).reshape(-1)
    if trace.size == 0:
        raise ValidationError("The machine trace is empty.")
    if trace.min() < 1 or trace.max() > constants.K:
        raise ValidationError(f"Machine counts must lie in [1, {constants.K}].")
    return trace


def _beta(constants: TheoremConstants, beta: float | None) -> float:
    beta = constants.beta if beta is None else beta
    if beta < 0:
        raise ValidationError(f"beta must be non-negative, got {beta}.")
    return beta


@dataclass(frozen=True)
class StepSizes:
    etas: np.ndarray
    eta0: float
    beta: float
    guaranteed: bool

    @property
    def T(self) -> int:
        return int(self.etas.size)


def theorem1_step_sizes(constants: TheoremConstants, machine_trace, beta: float | None = None) -> StepSizes:
    trace = _trace(constants, machine_trace)
    beta = _beta(constants, beta)
    eta0 = constants.C1 / math.sqrt(float(np.sum(trace ** (2 * beta - 1))))
    guaranteed = trace.size > constants.T0
    if not guaranteed:
        logger.warning("Too few steps for the bound to hold T=%s T0=%.6g", trace.size, constants.T0)
    return StepSizes(etas=eta0 * trace**beta, eta0=eta0, beta=beta, guaranteed=guaranteed)


def theorem1_bound(constants: TheoremConstants, machine_trace, beta: float | None = None) -> float:
    trace = _trace(constants, machine_trace)
    beta = _beta(constants, beta)
    return constants.C2 * math.sqrt(float(np.sum(trace ** (2 * beta - 1)))) / float(np.sum(trace**beta))


def bound_terms(constants: TheoremConstants, machine_trace, eta0: float, beta: float | None = None) -> tuple[float, float]:
    """The optimisation and noise terms of the bound for an arbitrary eta_0."""
    trace = _trace(constants, machine_trace)
    beta = _beta(constants, beta)
    weight = float(np.sum(trace**beta))
    optimisation = 2.0 * constants.L_delta / (eta0 * weight)
    noise = eta0 * constants.C * constants.sigma2 * float(np.sum(trace ** (2 * beta - 1))) / weight
    return optimisation, noise


def cauchy_floor(constants: TheoremConstants, machine_trace) -> float:
    """C2 / sqrt(sum k_t): no beta does better, beta = 1 attains it."""
    trace = _trace(constants, machine_trace)
    return constants.C2 / math.sqrt(float(trace.sum()))


def machine_trace(options: TheoremOptions) -> np.ndarray:
    if options.trace == "constant":
        return np.full(options.iterations, options.constant_k, dtype=np.int64)
    rng = np.random.default_rng(options.trace_seed)
    return rng.integers(1, options.max_machines + 1, size=options.iterations)


def random_traces(count: int, length: int, max_machines: int, seed: int = 0) -> list[np.ndarray]:
    return [np.random.default_rng([seed, index]).integers(1, max_machines + 1, size=length) for index in range(count)]


def _quadratic(model: ModelSpec) -> QuadraticModel:
    desk = build_model(model)
    if not isinstance(desk, QuadraticModel):
        raise ValidationError(f"The convergence check needs a quadratic model, got '{model.kind.value}'.")
    return desk


def quadratic_constants(
    model: ModelSpec, dataset: DatasetSpec, w0, options: TheoremOptions, *, beta: float = 1.0
) -> TheoremConstants:
    """C = lambda_max, L_delta = L(w0) - min L (min is 0) and sigma2 from the noise stream, unless overridden."""
    desk = _quadratic(model)
    w0 = as_param_vector(w0, dim=desk.num_params)
    return TheoremConstants(
        C=options.C or desk.lambda_max,
        L_delta=options.L_delta or desk.population_loss(w0),
        sigma2=options.sigma2 or dataset.sigma2,
        K=options.max_machines,
        beta=beta,
    )


@dataclass(frozen=True)
class TheoremRun:
    """Squared gradient norms of plain SGD, one row per iterate and one column per seed."""

    bound: float
    grad_norm2: np.ndarray
    guaranteed: bool

    @property
    def per_seed_min(self) -> np.ndarray:
        return self.grad_norm2.min(axis=0)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.per_seed_min <= self.bound))

    @property
    def seed_average_curve(self) -> np.ndarray:
        return self.grad_norm2.mean(axis=1)

    @property
    def seed_average_min(self) -> float:
        return float(self.seed_average_curve.min())

    @property
    def mean_grad_norm2(self) -> float:
        return float(self.grad_norm2.mean())


def verify_theorem1(
    model: ModelSpec,
    dataset: DatasetSpec,
    constants: TheoremConstants,
    trace,
    seeds: int,
    *,
    beta: float | None = None,
    w0=None,
    seed: int = 0,
) -> TheoremRun:
    """Plain SGD (no momentum) on the noisy quadratic with the bound's step sizes.

    Step t averages k_t fresh stream samples, so its gradient noise has trace
    sigma2 / k_t. Seeds are independent noise streams from a shared start w0.
    """
    desk = _quadratic(model)
    stream = build_dataset(dataset)
    if not stream.is_stream:
        raise ValidationError("The convergence check samples from a noisy_quadratic stream.")
    desk.check_dataset(stream)
    if seeds < 1:
        raise ValidationError(f"At least one seed is required, got {seeds}.")
    trace = _trace(constants, trace).astype(np.int64)
    steps = theorem1_step_sizes(constants, trace, beta)
    bound = theorem1_bound(constants, trace, steps.beta)
    w0 = desk.init_params(seed) if w0 is None else as_param_vector(w0, dim=desk.num_params)

    curvature = desk.curvature
    weights = np.tile(w0, (seeds, 1))
    offsets = (np.arange(seeds, dtype=np.int64) + seed * seeds) << 32
    norms = np.empty((trace.size, seeds), dtype=np.float64)
    cursor = 0
    for t, (k, eta) in enumerate(zip(trace, steps.etas)):
        full_grad = weights @ curvature
        norms[t] = np.einsum("ij,ij->i", full_grad, full_grad)
        indices = offsets[:, None] + cursor + np.arange(k, dtype=np.int64)[None, :]
        noise, _ = stream.take(indices.reshape(-1))
        weights = weights - eta * (full_grad + noise.reshape(seeds, k, -1).mean(axis=1))
        cursor += int(k)
        if not np.all(np.isfinite(weights)):
            raise NonFiniteValues(f"SGD diverged at step {t} with eta={eta:.6g}.")
    run = TheoremRun(bound=bound, grad_norm2=norms, guaranteed=steps.guaranteed)
    logger.info(
        "Convergence check finished beta=%s T=%s seeds=%s bound=%.6g pass_fraction=%.3f",
        steps.beta,
        trace.size,
        seeds,
        bound,
        run.pass_fraction,
    )
    return run
