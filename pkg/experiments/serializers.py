from rest_framework import serializers
from rest_framework.exceptions import ValidationError

from experiments.models import ALGORITHMS, ExpertDataset, TrainingRun, Evaluation
from games.envs.gems import GemsConfig
from games.envs.matrix import MatrixGameConfig
from games.exceptions import ArgumentError
from games.solver import EQUILIBRIUM_TOL, MAX_OUTER_ITERATIONS, SOFT_Q_TOL
from learning.mamql import BACKENDS, LOSS_MODES, OPPONENT_MODES, PHI_KINDS, MamqlConfig

SECTIONS = ("solver", "algo", "eval", "io")


class StrictSerializer(serializers.Serializer):
    """Rejects keys that are not declared fields."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise ValidationError({key: ["Unknown setting."] for key in unknown})
        return super().to_internal_value(data)


def validate_discount(gamma: float | None, error_to_raise: type(Exception)) -> None:
    if gamma is not None and not 0.0 <= gamma < 1.0:
        raise error_to_raise("gamma must lie in [0, 1).")


class MatrixEnvSerializer(StrictSerializer):
    type = serializers.ChoiceField(choices=["matrix"])
    payoffs = serializers.JSONField()
    action_count = serializers.IntegerField(min_value=1, default=2)
    transitions = serializers.JSONField(allow_null=True, default=None)
    gamma = serializers.FloatField(default=0.9)
    horizon = serializers.IntegerField(min_value=1, allow_null=True, default=None)
    episode_length = serializers.IntegerField(min_value=1, default=10)
    initial = serializers.JSONField(allow_null=True, default=None)

    def validate(self, attrs: dict) -> dict:
        data = super().validate(attrs)
        validate_discount(attrs["gamma"], ValidationError)
        try:
            MatrixGameConfig.from_dict(attrs)
        except (ArgumentError, TypeError, ValueError) as error:
            raise ValidationError(str(error)) from error
        return data


class GemsEnvSerializer(StrictSerializer):
    type = serializers.ChoiceField(choices=["gems"])
    width = serializers.IntegerField(default=5)
    height = serializers.IntegerField(default=5)
    n_red = serializers.IntegerField(default=2)
    n_blue = serializers.IntegerField(default=2)
    n_purple = serializers.IntegerField(default=2)
    purple_reward = serializers.FloatField(default=6.0)
    color_reward = serializers.FloatField(default=1.0)
    horizon = serializers.IntegerField(default=45)
    seed = serializers.IntegerField(min_value=0, default=0)
    placement = serializers.ChoiceField(choices=["fixed", "random"], default="random")
    layout = serializers.CharField(allow_null=True, default=None, trim_whitespace=False)
    gamma = serializers.FloatField(default=0.95)

    def validate(self, attrs: dict) -> dict:
        data = super().validate(attrs)
        validate_discount(attrs["gamma"], ValidationError)
        if attrs["layout"] is None:
            GemsConfig.validate_config(
                attrs["width"],
                attrs["height"],
                (attrs["n_red"], attrs["n_blue"], attrs["n_purple"]),
                attrs["horizon"],
                attrs["placement"],
                ValidationError
            )
        else:
            try:
                GemsConfig.from_dict(attrs)
            except ArgumentError as error:
                raise ValidationError(str(error)) from error
        return data


ENV_SERIALIZERS = {
    "matrix": MatrixEnvSerializer,
    "gems": GemsEnvSerializer,
}


class SolverSerializer(StrictSerializer):
    lam = serializers.FloatField(default=1.0)
    tol = serializers.FloatField(default=EQUILIBRIUM_TOL)
    q_tol = serializers.FloatField(default=SOFT_Q_TOL)
    damping = serializers.FloatField(default=0.5)
    max_iterations = serializers.IntegerField(min_value=1, default=MAX_OUTER_ITERATIONS)
    init_noise = serializers.FloatField(min_value=0.0, default=0.0)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs: dict) -> dict:
        data = super().validate(attrs)
        if attrs["lam"] <= 0.0:
            raise ValidationError("lam must be positive.")
        if attrs["tol"] <= 0.0 or attrs["q_tol"] <= 0.0:
            raise ValidationError("tolerances must be positive.")
        if not 0.0 <= attrs["damping"] < 1.0:
            raise ValidationError("damping must lie in [0, 1).")
        return data


class AlgorithmNamesField(serializers.Field):
    """One algorithm name or a list of them; always a list internally."""

    def to_internal_value(self, data) -> list[str]:
        names = [data] if isinstance(data, str) else data
        if not isinstance(names, list) or not names:
            raise ValidationError("Expected an algorithm name or a non-empty list of them.")
        unknown = [name for name in names if name not in ALGORITHMS]
        if unknown:
            raise ValidationError(
                f"Unknown algorithms {unknown}; choose from {', '.join(ALGORITHMS)}."
            )
        if len(set(names)) != len(names):
            raise ValidationError("Algorithm names must be unique.")
        return list(names)

    def to_representation(self, value: list[str]) -> list[str]:
        return list(value)


class AlgoSerializer(StrictSerializer):
    """Algorithm choice plus trainer settings; omitted settings keep the
    :class:`learning.mamql.MamqlConfig` defaults."""

    name = AlgorithmNamesField(default=["mamql"])
    lam = serializers.FloatField(required=False)
    gamma = serializers.FloatField(required=False, allow_null=True)
    alpha = serializers.FloatField(required=False)
    batch_size = serializers.IntegerField(required=False)
    buffer_capacity = serializers.IntegerField(required=False, allow_null=True)
    phi = serializers.ChoiceField(choices=PHI_KINDS, required=False)
    beta = serializers.FloatField(required=False)
    loss_mode = serializers.ChoiceField(choices=LOSS_MODES, required=False)
    opponent_mode = serializers.ChoiceField(choices=OPPONENT_MODES, required=False)
    tau = serializers.FloatField(required=False, allow_null=True)
    hidden_sizes = serializers.ListField(
        child=serializers.IntegerField(min_value=1), required=False
    )
    backend = serializers.ChoiceField(choices=BACKENDS, required=False)
    max_episodes = serializers.IntegerField(required=False)
    updates_per_episode = serializers.IntegerField(required=False)

    def validate(self, attrs: dict) -> dict:
        data = super().validate(attrs)
        MamqlConfig.validate_config(attrs, ValidationError)
        return data


class EvalSerializer(StrictSerializer):
    n_episodes = serializers.IntegerField(min_value=1, default=1000)
    eval_interval = serializers.IntegerField(required=False)
    eval_episodes = serializers.IntegerField(required=False)
    reward_samples = serializers.IntegerField(required=False)
    convergence_window = serializers.IntegerField(required=False)
    convergence_fraction = serializers.FloatField(required=False)
    stop_on_convergence = serializers.BooleanField(required=False)

    def validate(self, attrs: dict) -> dict:
        data = super().validate(attrs)
        MamqlConfig.validate_config(attrs, ValidationError)
        return data


class IoSerializer(StrictSerializer):
    dataset = serializers.CharField(default="expert.jsonl")
    n_steps = serializers.IntegerField(min_value=1, default=2000)
    dataset_sizes = serializers.ListField(
        child=serializers.IntegerField(min_value=1), required=False, allow_empty=False
    )
    seeds = serializers.ListField(
        child=serializers.IntegerField(min_value=0), default=[0], allow_empty=False
    )
    out = serializers.CharField(required=False, allow_null=True, default=None)

    def validate(self, attrs: dict) -> dict:
        data = super().validate(attrs)
        sizes = attrs.get("dataset_sizes") or [attrs["n_steps"]]
        if max(sizes) > attrs["n_steps"]:
            raise ValidationError("dataset_sizes cannot exceed n_steps.")
        if len(set(attrs["seeds"])) != len(attrs["seeds"]):
            raise ValidationError("seeds must be unique.")
        data["dataset_sizes"] = sorted(set(sizes))
        return data


class ExperimentConfigSerializer(StrictSerializer):
    name = serializers.SlugField(default="experiment")
    env = serializers.DictField()
    solver = SolverSerializer()
    algo = AlgoSerializer()
    eval = EvalSerializer()
    io = IoSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{section: {} for section in SECTIONS}, **data}
        return super().to_internal_value(data)

    def validate_env(self, value: dict) -> dict:
        env_type = value.get("type")
        if env_type not in ENV_SERIALIZERS:
            raise ValidationError(
                f"type must be one of {', '.join(ENV_SERIALIZERS)}."
            )
        serializer = ENV_SERIALIZERS[env_type](data=value)
        serializer.is_valid(raise_exception=True)
        return dict(serializer.validated_data)


class ExpertDatasetSerializer(serializers.ModelSerializer):
    class Meta:
        model = ExpertDataset
        fields = (
            "id", "path", "env_type", "env_hash", "solver_seed", "lam",
            "damping", "residual", "expert_return", "n_transitions",
            "created_time"
        )


class EvaluationSerializer(serializers.ModelSerializer):
    class Meta:
        model = Evaluation
        fields = (
            "id", "run", "episode", "env_steps", "total_return", "returns",
            "return_stderr", "nll", "reward_mse", "tv", "wall_clock"
        )


class TrainingRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = TrainingRun
        fields = (
            "id", "algorithm", "env_type", "env_hash", "seed", "dataset_size",
            "dataset", "output_dir", "status", "episodes", "env_steps",
            "converged_at", "created_time", "updated_time"
        )


class TrainingRunListSerializer(serializers.ModelSerializer):
    final_return = serializers.SerializerMethodField()

    class Meta:
        model = TrainingRun
        fields = (
            "id", "algorithm", "env_type", "seed", "dataset_size", "status",
            "episodes", "final_return"
        )

    @staticmethod
    def get_final_return(obj: TrainingRun) -> float | None:
        evaluation = obj.evaluations.order_by("-episode").first()
        return None if evaluation is None else evaluation.total_return


class TrainingRunRetrieveSerializer(TrainingRunSerializer):
    dataset = ExpertDatasetSerializer(many=False, read_only=True)
    evaluations = EvaluationSerializer(many=True, read_only=True)

    class Meta:
        model = TrainingRun
        fields = TrainingRunSerializer.Meta.fields + ("evaluations",)
