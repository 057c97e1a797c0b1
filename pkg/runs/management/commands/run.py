from __future__ import annotations

from django.core.management.base import CommandError

from runs.services import RunService

from ._base import DIVERGENCE_EXIT, LabCommand


class Command(LabCommand):
    help = "Train from a run config (JSON file) and write its run record."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Path to a run config JSON file.")
        parser.add_argument("--out", help="Record stem; defaults to the config's output or RUN_OUTPUT_DIR.")

    def handle(self, *args, **options):
        config = self.resolve_config(options["config"])
        finish(self, RunService().execute(config, stem=options.get("out")))


def finish(command: LabCommand, outcome) -> None:
    summary = outcome.record.summary.model_dump(mode="json")
    command.emit_json({"records": str(outcome.stem), "summary": summary})
    if outcome.diverged:
        raise CommandError(f"Run diverged after {summary['iterations']} updates.", returncode=DIVERGENCE_EXIT)
