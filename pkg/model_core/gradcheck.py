from __future__ import annotations

import numpy as np

from .datasets import Batch, Dataset
from .objectives import ModelLike, loss, resolve_model
from .params import ParamVector, as_param_vector


def central_differences(model: ModelLike, w, dataset: Dataset, batch: Batch, *, step: float = 1e-5) -> ParamVector:
    """∂loss/∂w_j ≈ (loss(w + h e_j) − loss(w − h e_j)) / 2h for every coordinate j."""
    desk = resolve_model(model)
    w = as_param_vector(w, dim=desk.num_params)
    estimate = np.empty_like(w)
    for j in range(w.size):
        forward = w.copy()
        backward = w.copy()
        forward[j] += step
        backward[j] -= step
        estimate[j] = (loss(desk, forward, dataset, batch) - loss(desk, backward, dataset, batch)) / (2.0 * step)
    return estimate


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, *, floor: float = 1e-3) -> np.ndarray:
    # coordinates smaller than `floor` are compared absolutely
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def max_relative_error(model: ModelLike, w, dataset: Dataset, batch: Batch, analytic: np.ndarray, **options) -> float:
    numeric = central_differences(model, w, dataset, batch, **options)
    return float(relative_errors(np.asarray(analytic), numeric).max())
