from experiments.cli import ExperimentCommand
from experiments.runner import evaluate


class Command(ExperimentCommand):
    """Evaluate a checkpoint (or the stored expert) with every metric."""

    help = "Evaluate a trained checkpoint or the expert policy."

    def add_arguments(self, parser) -> None:
        super().add_arguments(parser)
        target = parser.add_mutually_exclusive_group()
        target.add_argument("--checkpoint", help="Trainer checkpoint (.npz).")
        target.add_argument(
            "--expert",
            action="store_true",
            help="Evaluate the equilibrium policy written by gen_experts."
        )
        parser.add_argument(
            "--plots",
            action="store_true",
            help="Also write return, reward MSE and behavioural error SVGs."
        )

    def run(self, config, out_dir: str, options: dict) -> None:
        summary = evaluate(
            config, out_dir, options["checkpoint"], options["expert"],
            options["plots"], options["seed"]
        )
        record = summary.record
        self.stdout.write(
            f"Average return {record.total_return:.4f} ± {summary.total_stderr:.4f} "
            f"(per agent {', '.join(f'{value:.4f}' for value in record.returns)})"
        )
        self.stdout.write(f"Expert-action NLL {', '.join(f'{v:.4f}' for v in record.nll)}")
        if record.tv is not None:
            self.stdout.write(f"TV to expert {', '.join(f'{v:.4f}' for v in record.tv)}")
        if record.reward_mse is not None:
            self.stdout.write(
                f"Reward MSE {', '.join(f'{v:.4f}' for v in record.reward_mse)}"
            )
        for path in summary.plots:
            self.stdout.write(f"Plot written to {path}")
        self.stdout.write(self.style.SUCCESS("Evaluation complete"))
