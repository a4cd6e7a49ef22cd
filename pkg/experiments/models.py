from django.core.exceptions import ValidationError
from django.core.validators import MinValueValidator
from django.db import models
from django.db.models.constraints import UniqueConstraint

ALGORITHMS = ("mamql", "bc", "iql-indep", "iql-ma")
ENV_TYPES = ("matrix", "gems")


class ExpertDataset(models.Model):
    path = models.CharField(max_length=1024, unique=True)
    env_type = models.CharField(
        max_length=16,
        choices=[(name, name) for name in ENV_TYPES]
    )
    env_hash = models.CharField(max_length=64)
    solver_seed = models.PositiveBigIntegerField(default=0)
    lam = models.FloatField(validators=(MinValueValidator(0.0),))
    damping = models.FloatField(validators=(MinValueValidator(0.0),))
    residual = models.FloatField(validators=(MinValueValidator(0.0),))
    expert_return = models.FloatField()
    n_transitions = models.PositiveIntegerField()
    created_time = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ("-created_time",)

    def __str__(self) -> str:
        return f"{self.env_type} experts ({self.n_transitions} transitions)"


class TrainingRun(models.Model):
    class Status(models.TextChoices):
        RUNNING = "running"
        COMPLETED = "completed"
        FAILED = "failed"

    algorithm = models.CharField(
        max_length=16,
        choices=[(name, name) for name in ALGORITHMS]
    )
    env_type = models.CharField(
        max_length=16,
        choices=[(name, name) for name in ENV_TYPES]
    )
    env_hash = models.CharField(max_length=64)
    seed = models.PositiveBigIntegerField(default=0)
    dataset_size = models.PositiveIntegerField(validators=(MinValueValidator(1),))
    dataset = models.ForeignKey(
        ExpertDataset,
        on_delete=models.SET_NULL,
        null=True,
        blank=True,
        related_name="runs"
    )
    output_dir = models.CharField(max_length=1024, unique=True)
    status = models.CharField(
        max_length=16,
        choices=Status.choices,
        default=Status.RUNNING
    )
    episodes = models.PositiveIntegerField(default=0)
    env_steps = models.PositiveBigIntegerField(default=0)
    converged_at = models.PositiveIntegerField(null=True, blank=True)
    created_time = models.DateTimeField(auto_now_add=True)
    updated_time = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ("-created_time",)

    @staticmethod
    def validate_run(
        algorithm: str,
        env_type: str,
        error_to_raise: type(Exception)
    ) -> None:
        if algorithm not in ALGORITHMS:
            raise error_to_raise(
                f"Unknown algorithm '{algorithm}'; "
                f"choose from {', '.join(ALGORITHMS)}."
            )
        if env_type not in ENV_TYPES:
            raise error_to_raise(f"Unknown environment type '{env_type}'.")

    def clean(self) -> None:
        TrainingRun.validate_run(self.algorithm, self.env_type, ValidationError)

    def save(
        self,
        force_insert: bool = False,
        force_update: bool = False,
        using: str = None,
        update_fields: list[str] = None,
    ):
        self.full_clean()
        return super().save(force_insert, force_update, using, update_fields)

    def __str__(self) -> str:
        return f"{self.algorithm} n={self.dataset_size} seed={self.seed}"


class Evaluation(models.Model):
    """One evaluation point of a run; per-agent values are JSON lists."""

    run = models.ForeignKey(
        TrainingRun,
        on_delete=models.CASCADE,
        related_name="evaluations"
    )
    episode = models.PositiveIntegerField()
    env_steps = models.PositiveBigIntegerField(default=0)
    total_return = models.FloatField()
    returns = models.JSONField()
    return_stderr = models.JSONField()
    nll = models.JSONField()
    reward_mse = models.JSONField(null=True, blank=True)
    tv = models.JSONField(null=True, blank=True)
    wall_clock = models.FloatField(default=0.0)

    class Meta:
        constraints = [
            UniqueConstraint(
                fields=["run", "episode"],
                name="unique_evaluation_episode"
            )
        ]
        ordering = ("run", "episode")

    @staticmethod
    def validate_agent_values(
        returns: list,
        per_agent: dict[str, list | None],
        error_to_raise: type(Exception)
    ) -> None:
        if not returns:
            raise error_to_raise("At least one agent return is required.")
        for name, values in per_agent.items():
            if values is not None and len(values) != len(returns):
                raise error_to_raise(
                    f"{name} must have one entry per agent ({len(returns)})."
                )

    def clean(self) -> None:
        Evaluation.validate_agent_values(
            self.returns,
            {
                "return_stderr": self.return_stderr,
                "nll": self.nll,
                "reward_mse": self.reward_mse,
                "tv": self.tv,
            },
            ValidationError
        )

    def save(
        self,
        force_insert: bool = False,
        force_update: bool = False,
        using: str = None,
        update_fields: list[str] = None,
    ):
        self.full_clean()
        return super().save(force_insert, force_update, using, update_fields)

    def __str__(self) -> str:
        return f"{self.run} @ {self.episode}"
