from experiments.cli import ExperimentCommand
from experiments.runner import generate_experts


class Command(ExperimentCommand):
    """Solve the configured game exactly and write an expert dataset."""

    help = "Solve the game's equilibrium and roll out an expert dataset."

    def run(self, config, out_dir: str, options: dict) -> None:
        self.stdout.write(f"Solving {config.name} ({config.env_type})...")
        summary = generate_experts(config, out_dir, options["seed"])
        self.stdout.write(
            f"Solver residual {summary.residual:.3e} after {summary.iterations} rounds"
        )
        ratio = "" if summary.ratio is None else f" (agent ratio {summary.ratio:.3f})"
        self.stdout.write(f"Expert average return {summary.expert_return:.4f}{ratio}")
        self.stdout.write(self.style.SUCCESS(
            f"Wrote {summary.n_transitions} transitions to {summary.path}"
        ))
