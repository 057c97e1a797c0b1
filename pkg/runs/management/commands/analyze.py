from __future__ import annotations

from pathlib import Path

from django.conf import settings

from analysis.services import ANALYSES, AnalysisService

from ._base import LabCommand


class Command(LabCommand):
    help = "Run the noise, momentum or convergence-bound analysis for a config or preset."

    def add_arguments(self, parser):
        parser.add_argument("kind", choices=ANALYSES)
        parser.add_argument("config", help="Run config JSON file or preset name.")
        parser.add_argument("--seed", type=int)
        parser.add_argument("--out", help="Report stem; files are <stem>.<kind>.json plus CSV tables.")

    def handle(self, *args, **options):
        config = self.resolve_config(options["config"], seed=options.get("seed"))
        report = AnalysisService(config.model, config.dataset, config.seed, config.analysis).run(options["kind"])
        stem = options.get("out") or Path(settings.RUN_OUTPUT_DIR) / f"{config.name or 'analysis'}-s{config.seed}"
        paths = report.write(stem)
        for check in report.checks:
            self.stdout.write(f"{'PASS' if check.passed else 'FAIL'} {check.name}")
        self.stdout.write(f"Report written to {paths[0]}")
        if not report.passed:
            self.stderr.write("Some checks failed; see the report for details.")
