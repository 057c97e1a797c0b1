"""Desk-scale experiment presets.

Change points sit at the same fraction of training as on the 90-epoch
timeline they mirror: 20/90 for early changes and 70/90 for late ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

from django.core.exceptions import ValidationError

from optim.schemas import Strategy

from .config import config_from_dict
from .schemas import RunConfig

DEFAULT_EPOCHS = 45
N_BASE = 8
SPIKE_K = 12
# spikes land while the learning rate is still large
SPIKE_BASE_LR = 0.3


@dataclass(frozen=True)
class Preset:
    name: str
    description: str
    build: Callable[[int], dict]
    strategy: Strategy = Strategy.DYNAMIC_SGD


def early_epoch(epochs: int) -> int:
    return math.ceil(2 * epochs / 9)


def late_epoch(epochs: int) -> int:
    return math.ceil(7 * epochs / 9)


def _blobs_task(epochs: int, *, base_lr: float = 0.1) -> dict:
    return {
        "model": {"kind": "mlp", "input_dim": 2, "hidden_width": 16, "num_classes": 4},
        "dataset": {"kind": "blobs", "size": 1536, "dim": 2, "num_classes": 4, "separation": 2.0, "spread": 1.0},
        "optimizer": {"base_lr": base_lr, "momentum": 0.9, "base_batch": 32},
        "lr_schedule": {"kind": "cosine", "total_epochs": epochs, "warmup_epochs": 5},
        "batch_policy": {"kind": "fixed_per_worker", "value": 4},
        "epochs": epochs,
        "records": {"full_loss": True},
    }


def _quadratic_task(sigma2: float) -> dict:
    return {
        "model": {"kind": "quadratic", "input_dim": 10},
        "dataset": {"kind": "noisy_quadratic", "size": 1024, "dim": 10, "sigma2": sigma2},
        "optimizer": {"base_lr": 0.1, "momentum": 0.0, "base_batch": 32, "strategy": "plain_sgd"},
        "lr_schedule": {"kind": "constant", "warmup_epochs": 0},
        "schedule": {"kind": "static", "n_base": N_BASE},
        "epochs": 5,
    }


def _static(n_base: int, epochs: int = DEFAULT_EPOCHS) -> dict:
    return {**_blobs_task(epochs), "schedule": {"kind": "static", "n_base": n_base}}


def _spike(epoch: int, epochs: int = DEFAULT_EPOCHS) -> dict:
    schedule = {"kind": "spike", "n_base": N_BASE, "epoch": epoch, "k": SPIKE_K}
    return {**_blobs_task(epochs, base_lr=SPIKE_BASE_LR), "schedule": schedule}


def _damp(epochs: int = DEFAULT_EPOCHS) -> dict:
    schedule = {"kind": "damp", "n_base": N_BASE * SPIKE_K, "epoch": early_epoch(epochs), "k": SPIKE_K}
    return {**_blobs_task(epochs), "schedule": schedule}


def _rand_step(max_scale: int, seed: int, epochs: int = DEFAULT_EPOCHS) -> dict:
    schedule = {
        "kind": "rand_step",
        "n_base": N_BASE,
        "period_epochs": 5,
        "min_scale": 1,
        "max_scale": max_scale,
        "seed": seed,
    }
    return {**_blobs_task(epochs), "schedule": schedule}


PRESETS: dict[str, Preset] = {
    preset.name: preset
    for preset in (
        Preset("static_small", "8 workers throughout, 32 samples per update.", lambda seed: _static(N_BASE),
               Strategy.MOMENTUM_SGD),
        Preset("static_large", "96 workers throughout with the linearly scaled learning rate.",
               lambda seed: _static(N_BASE * SPIKE_K), Strategy.LINEAR_SCALING),
        Preset("spike_early", "8 to 96 workers at 2/9 of training.",
               lambda seed: _spike(early_epoch(DEFAULT_EPOCHS))),
        Preset("spike_late", "8 to 96 workers at 7/9 of training.", lambda seed: _spike(late_epoch(DEFAULT_EPOCHS))),
        Preset("damp", "96 to 8 workers at 2/9 of training.", lambda seed: _damp(), Strategy.LINEAR_SCALING),
        Preset("rand_step_12x", "Worker scale redrawn from 1..12 every 5 epochs.", lambda seed: _rand_step(12, seed)),
        Preset("rand_step_16x", "Worker scale redrawn from 1..16 every 5 epochs.", lambda seed: _rand_step(16, seed)),
        Preset("theorem_quadratic", "Plain SGD on the noisy quadratic used by the convergence-bound check.",
               lambda seed: _quadratic_task(1.0), Strategy.PLAIN_SGD),
        Preset("noise_scan", "Noisy quadratic with per-sample noise trace 4 for the batch-size variance scan.",
               lambda seed: _quadratic_task(4.0), Strategy.PLAIN_SGD),
    )
}


def preset(name: str, *, seed: int = 0, strategy: Strategy | str | None = None) -> RunConfig:
    entry = PRESETS.get(name)
    if entry is None:
        raise ValidationError(f"Unknown preset '{name}'. Choose one of {', '.join(sorted(PRESETS))}.")
    payload = entry.build(seed)
    chosen = Strategy(strategy) if strategy is not None else entry.strategy
    payload["optimizer"] = {**payload["optimizer"], "strategy": chosen.value}
    payload.update(name=name, seed=seed)
    return config_from_dict(payload)
