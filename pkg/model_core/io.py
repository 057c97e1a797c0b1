"""CSV export/import of materialised datasets for reproducibility audits."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError

from .datasets import Dataset


logger = logging.getLogger(__name__)


def dataset_header(dim: int) -> list[str]:
    return [f"x{j}" for j in range(dim)] + ["label"]


def export_csv(dataset: Dataset, path: str | Path) -> Path:
    if dataset.is_stream:
        raise ValidationError("Noise streams have no finite sample set to export.")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(dataset_header(dataset.dim))
        for row, label in dataset.samples():
            writer.writerow([repr(float(value)) for value in row] + [label])
    logger.info("Dataset exported path=%s size=%s", path, dataset.size)
    return path


def import_csv(path: str | Path, *, seed: int = 0) -> Dataset:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[-1] != "label":
            raise ValidationError(f"{path}: expected a header ending in 'label'.")
        rows = [row for row in reader if row]
    if not rows:
        raise ValidationError(f"{path}: no samples.")
    dim = len(header) - 1
    try:
        features = np.array([[float(value) for value in row[:dim]] for row in rows], dtype=np.float64)
        labels = np.array([int(row[dim]) for row in rows], dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{path}: malformed row ({exc}).") from exc
    return Dataset.from_arrays(features, labels, kind="csv", seed=seed)
