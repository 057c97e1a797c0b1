from __future__ import annotations

import asyncio

from django.conf import settings
from django.core.exceptions import ValidationError

from cluster.worker import run_worker

from ._base import LabCommand


def parse_address(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValidationError(f"Expected HOST:PORT, got '{address}'.")
    return host, int(port)


class Command(LabCommand):
    help = "Join a parameter server as a gradient worker until it shuts the run down."

    def add_arguments(self, parser):
        parser.add_argument("address", help="Parameter server HOST:PORT.")
        parser.add_argument("--heartbeat-interval", type=float, default=None)
        parser.add_argument("--fail-after", type=int, help="Drop the connection on the N-th assignment.")

    def handle(self, *args, **options):
        host, port = parse_address(options["address"])
        core = asyncio.run(
            run_worker(
                host,
                port,
                heartbeat_interval=options.get("heartbeat_interval") or settings.HEARTBEAT_INTERVAL_SECONDS,
                max_frame_bytes=settings.MAX_FRAME_BYTES,
                fail_after=options.get("fail_after"),
            )
        )
        self.stdout.write(f"Worker {core.worker_id} finished at version {core.version}.")
