from __future__ import annotations

from typing import List

from django.core.exceptions import ValidationError
from django.shortcuts import get_object_or_404
from ninja import Router
from ninja.errors import HttpError

from .config import ConfigError, config_echo, config_from_dict
from .models import ExperimentRun
from .presets import PRESETS, preset
from .schemas import CompareRequest, ComparisonSchema, ExperimentRunSchema, PresetSchema, RunMode, RunRequest
from .services import RunService, compare_paths

router = Router(tags=["runs"])


@router.get("/presets/", response=List[PresetSchema])
def list_presets(request):
    return [PresetSchema(name=entry.name, description=entry.description) for entry in PRESETS.values()]


@router.get("/presets/{name}")
def get_preset(request, name: str, seed: int = 0):
    try:
        return config_echo(preset(name, seed=seed))
    except ValidationError as exc:
        raise HttpError(404, " ".join(exc.messages))


@router.post("/runs/", response={201: ExperimentRunSchema})
def create_run(request, payload: RunRequest):
    try:
        config = config_from_dict(payload.config)
    except ConfigError as exc:
        raise HttpError(400, "; ".join(exc.violations))
    if config.mode != RunMode.SIMULATE:
        raise HttpError(400, "mode: only simulate runs can be started over HTTP")
    try:
        outcome = RunService().execute(config)
    except ValidationError as exc:
        raise HttpError(400, " ".join(exc.messages))
    if outcome.experiment is None:
        raise HttpError(503, "Experiment ledger unavailable.")
    return 201, outcome.experiment


@router.post("/runs/compare", response=ComparisonSchema)
def compare_runs(request, payload: CompareRequest):
    try:
        return compare_paths(payload.records, window_epochs=payload.window_epochs)
    except ValidationError as exc:
        raise HttpError(400, " ".join(exc.messages))


@router.get("/runs/{int:run_id}", response=ExperimentRunSchema)
def get_run(request, run_id: int):
    return get_object_or_404(ExperimentRun, pk=run_id)
