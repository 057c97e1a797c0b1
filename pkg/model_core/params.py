from __future__ import annotations

from typing import Iterable

import numpy as np
import numpy.typing as npt

from .exceptions import DimensionMismatch, NonFiniteValues

ParamVector = npt.NDArray[np.float64]


def as_param_vector(values: Iterable[float] | np.ndarray, *, dim: int | None = None) -> ParamVector:
    vector = np.array(values, dtype=np.float64).reshape(-1)
    if vector.size == 0:
        raise DimensionMismatch("Parameter vectors must have at least one entry.")
    if dim is not None and vector.size != dim:
        raise DimensionMismatch(f"Expected {dim} parameters, got {vector.size}.")
    return ensure_finite(vector)


def ensure_finite(vector: np.ndarray, *, what: str = "parameters") -> np.ndarray:
    if not np.all(np.isfinite(vector)):
        raise NonFiniteValues(f"Non-finite values in {what}.")
    return vector


def check_dims(*vectors: np.ndarray) -> int:
    sizes = {vector.shape for vector in vectors}
    if len(sizes) != 1:
        raise DimensionMismatch(f"Vector shapes differ: {sorted(sizes)}")
    return vectors[0].size


def zeros_like(vector: ParamVector) -> ParamVector:
    return np.zeros(vector.shape, dtype=np.float64)
