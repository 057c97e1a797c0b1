from __future__ import annotations

from optim.schemas import Strategy
from runs.config import canonical_json
from runs.presets import PRESETS, preset
from runs.services import RunService

from ._base import LabCommand
from .run import finish


class Command(LabCommand):
    help = "Run one of the built-in experiment presets."

    def add_arguments(self, parser):
        parser.add_argument("name", choices=sorted(PRESETS))
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--out", help="Record stem.")
        parser.add_argument("--strategy", choices=[strategy.value for strategy in Strategy])
        parser.add_argument("--print-config", action="store_true", help="Print the canonical config and exit.")

    def handle(self, *args, **options):
        config = preset(options["name"], seed=options["seed"], strategy=options.get("strategy"))
        if options["print_config"]:
            self.stdout.write(canonical_json(config))
            return
        finish(self, RunService().execute(config, stem=options.get("out")))
