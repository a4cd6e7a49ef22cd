from experiments.cli import ExperimentCommand
from experiments.runner import build_report, discover_runs, write_report


class Command(ExperimentCommand):
    """Tabulate finished runs: algorithms as rows, experiments as columns."""

    help = "Build a comparison table (text and CSV) from run directories."
    config_required = False

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument(
            "runs",
            nargs="*",
            help="Run directories; defaults to every run under the output directory."
        )

    def run(self, config, out_dir: str, options: dict) -> None:
        report = build_report(options["runs"] or discover_runs(out_dir))
        self.stdout.write(report.text)
        for path in write_report(report, out_dir):
            self.stdout.write(f"Wrote {path}")
        for warning in report.warnings:
            self.stdout.write(self.style.WARNING(warning))
        if report.warnings:
            self.stdout.write(self.style.WARNING(f"{len(report.warnings)} warnings"))
        if report.flagged:
            self.stdout.write(self.style.WARNING(
                f"mamql is not the best method on {', '.join(report.flagged)}"
            ))
        else:
            self.stdout.write(self.style.SUCCESS("Report complete"))
