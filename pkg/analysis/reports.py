from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, Sequence

from elastic_engine.records import canonical_dumps

from .schemas import CheckResult


logger = logging.getLogger(__name__)


def write_json_report(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_dumps(payload) + "\n", encoding="utf-8")
    logger.info("Analysis report written path=%s", path)
    return path


def write_csv_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(value) if isinstance(value, float) else value for value in row])
    return path


def checks_payload(checks: list[CheckResult]) -> dict:
    return {
        "checks": [check.model_dump(mode="json") for check in checks],
        "passed": all(check.passed for check in checks),
    }
