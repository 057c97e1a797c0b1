from __future__ import annotations

import json
from pathlib import Path

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError as SchemaError

from model_core.exceptions import NonFiniteValues
from runs.config import ConfigError, load_config
from runs.presets import PRESETS, preset
from runs.schemas import RunConfig

VALIDATION_EXIT = 1
DIVERGENCE_EXIT = 2


class LabCommand(BaseCommand):
    """Maps validation problems to exit code 1 and divergence to exit code 2."""

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except NonFiniteValues as exc:
            raise CommandError(f"Diverged: {' '.join(exc.messages)}", returncode=DIVERGENCE_EXIT) from exc
        except ConfigError as exc:
            raise CommandError("Invalid config:\n  " + "\n  ".join(exc.violations), returncode=VALIDATION_EXIT) from exc
        except ValidationError as exc:
            raise CommandError(" ".join(exc.messages), returncode=VALIDATION_EXIT) from exc
        except SchemaError as exc:
            raise CommandError(str(exc), returncode=VALIDATION_EXIT) from exc

    def resolve_config(self, value: str, *, seed: int | None = None) -> RunConfig:
        """A config file path, or a preset name when no such file exists."""
        if not Path(value).exists() and value in PRESETS:
            return preset(value, seed=seed or 0)
        config = load_config(value)
        if seed is not None:
            config = config.model_copy(update={"seed": seed})
        return config

    def emit_json(self, payload) -> None:
        self.stdout.write(json.dumps(payload, indent=2, sort_keys=True))
