from __future__ import annotations

from runs.services import compare_paths, write_comparison

from ._base import LabCommand


class Command(LabCommand):
    help = "Compare run records that share model, dataset and seed."

    def add_arguments(self, parser):
        parser.add_argument("records", nargs="*", help="Record stems or .jsonl step files.")
        parser.add_argument("--window-epochs", type=int, default=2)
        parser.add_argument("--out", help="Write <out>.json and <out>.csv as well.")

    def handle(self, *args, **options):
        comparison = compare_paths(options["records"], window_epochs=options["window_epochs"])
        if options.get("out"):
            write_comparison(comparison, options["out"])
        self.stdout.write(f"metric: {comparison.metric}")
        self.stdout.write(f"{'label':<32} {'strategy':<22} {'final_loss':>12} {'min_grad':>12} {'spike':>8}")
        for row in comparison.rows:
            self.stdout.write(
                f"{row.label:<32} {row.strategy:<22} {_fmt(row.final_loss):>12} "
                f"{_fmt(row.min_grad_norm):>12} {_fmt(row.spike):>8}"
            )


def _fmt(value) -> str:
    return "-" if value is None else f"{value:.4g}"
