from experiments.cli import ExperimentCommand
from experiments.runner import RunSummary, train_grid


class Command(ExperimentCommand):
    """Train every algorithm of the config over its dataset sizes and seeds."""

    help = "Train the configured algorithms on the expert dataset."

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        parser.add_argument(
            "--resume",
            action="store_true",
            help="Continue runs from their checkpoints."
        )

    def run(self, config, out_dir: str, options: dict) -> None:
        seeds = None if options["seed"] is None else [options["seed"]]

        def report(summary: RunSummary) -> None:
            final = "n/a" if summary.final is None else f"{summary.final.total_return:.4f}"
            self.stdout.write(
                f"{summary.algorithm} n={summary.dataset_size} seed={summary.seed}: "
                f"{summary.episodes} episodes, {summary.env_steps} env steps, "
                f"final return {final}"
            )

        summaries = train_grid(config, out_dir, seeds, options["resume"], report)
        self.stdout.write(self.style.SUCCESS(
            f"Finished {len(summaries)} runs in {out_dir}"
        ))
