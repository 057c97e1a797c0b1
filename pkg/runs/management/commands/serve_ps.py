from __future__ import annotations

from runs.schemas import RunMode
from runs.services import RunService

from ._base import LabCommand
from .run import finish


class Command(LabCommand):
    help = "Serve a run as the parameter server; workers connect with the `worker` command."

    def add_arguments(self, parser):
        parser.add_argument("config", help="Run config JSON file or preset name.")
        parser.add_argument("--host")
        parser.add_argument("--port", type=int)
        parser.add_argument("--control-port", type=int)
        parser.add_argument("--wait-for-workers", type=int)
        parser.add_argument("--out", help="Record stem.")

    def handle(self, *args, **options):
        config = self.resolve_config(options["config"])
        overrides = {
            key: options[option]
            for key, option in (
                ("host", "host"),
                ("port", "port"),
                ("control_port", "control_port"),
                ("wait_for_workers", "wait_for_workers"),
            )
            if options.get(option) is not None
        }
        cluster = config.cluster.model_validate({**config.cluster.model_dump(), **overrides})
        config = config.model_validate(
            {**config.model_dump(mode="json"), "mode": RunMode.CLUSTER_TCP.value, "cluster": cluster.model_dump(mode="json")}
        )
        finish(self, RunService().execute(config, stem=options.get("out")))
