from __future__ import annotations

import json
import logging
from pathlib import Path

from django.core.exceptions import ValidationError
from pydantic import ValidationError as SchemaError

from elastic_engine.records import canonical_dumps

from .schemas import RunConfig


logger = logging.getLogger(__name__)


class ConfigError(ValidationError):
    """Every schema violation of a run config, each as ``"path: message"``."""

    def __init__(self, violations: list[str]) -> None:
        self.violations = violations
        super().__init__(violations)


def _violations(exc: SchemaError) -> list[str]:
    messages = []
    for error in exc.errors():
        path = ".".join(str(part) for part in error["loc"]) or "$"
        messages.append(f"{path}: {error['msg']}")
    return messages


def parse_config(text: str | bytes) -> RunConfig:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError([f"$: not UTF-8 ({exc.reason})"]) from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"$: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    return config_from_dict(payload)


def config_from_dict(payload) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError(["$: a run config must be a JSON object"])
    try:
        return RunConfig.model_validate(payload)
    except SchemaError as exc:
        violations = _violations(exc)
        logger.info("Run config rejected violations=%s", len(violations))
        raise ConfigError(violations) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"$: no config file at {path}"])
    return parse_config(path.read_bytes())


def config_echo(config: RunConfig) -> dict:
    return json.loads(canonical_json(config))


def canonical_json(config: RunConfig) -> str:
    return canonical_dumps(config.model_dump(mode="json"))
