from __future__ import annotations

from django.core.exceptions import ValidationError


class DimensionMismatch(ValidationError):
    """A parameter vector does not match the model's parameter count."""


class InvalidBatch(ValidationError):
    """Batch indices are empty, duplicated or outside the dataset."""


class NonFiniteValues(ValidationError):
    """An input or result contains NaN or Inf."""
