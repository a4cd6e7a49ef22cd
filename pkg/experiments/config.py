"""
Experiment configuration: one JSON file per experiment with ``env``,
``solver``, ``algo``, ``eval`` and ``io`` sections.

Every section is validated by :mod:`experiments.serializers` before anything
touches the disk; unknown keys are rejected at every level. Omitted trainer
settings keep the :class:`learning.mamql.MamqlConfig` defaults.
"""
import hashlib
import json
from dataclasses import dataclass

from experiments.serializers import ExperimentConfigSerializer
from games.envs import build_env
from games.exceptions import ConfigError
from games.markov_game import MarkovGame
from learning.mamql import MamqlConfig


@dataclass(frozen=True)
class SolverSettings:
    lam: float
    tol: float
    q_tol: float
    damping: float
    max_iterations: int
    init_noise: float
    seed: int


@dataclass(frozen=True)
class IoSettings:
    dataset: str
    n_steps: int
    dataset_sizes: tuple[int, ...]
    seeds: tuple[int, ...]
    out: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: dict
    solver: SolverSettings
    algorithms: tuple[str, ...]
    algo: dict
    eval: dict
    io: IoSettings

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        serializer = ExperimentConfigSerializer(data=data)
        if not serializer.is_valid():
            raise ConfigError(f"invalid experiment config: {_flatten(serializer.errors)}")
        values = serializer.validated_data
        algo = dict(values["algo"])
        algorithms = tuple(algo.pop("name"))
        if "hidden_sizes" in algo:
            algo["hidden_sizes"] = tuple(algo["hidden_sizes"])
        io = dict(values["io"])
        return cls(
            name=values["name"],
            env=dict(values["env"]),
            solver=SolverSettings(**values["solver"]),
            algorithms=algorithms,
            algo=algo,
            eval=dict(values["eval"]),
            io=IoSettings(
                dataset=io["dataset"],
                n_steps=io["n_steps"],
                dataset_sizes=tuple(io["dataset_sizes"]),
                seeds=tuple(io["seeds"]),
                out=io.get("out"),
            ),
        )

    @property
    def env_type(self) -> str:
        return self.env["type"]

    @property
    def n_episodes(self) -> int:
        return self.eval["n_episodes"]

    def build_env(self) -> MarkovGame:
        return build_env(self.env)

    def trainer_config(self, seed: int) -> MamqlConfig:
        settings = {key: value for key, value in self.eval.items() if key != "n_episodes"}
        return MamqlConfig.from_dict({**self.algo, **settings, "seed": seed})

    def training_hash(self, algorithm: str, seed: int, dataset_size: int) -> str:
        """Identifies everything a checkpoint's trajectory depends on.

        ``max_episodes`` only decides where a run stops, so a resumed run may
        raise it.
        """
        algo = {key: value for key, value in self.algo.items() if key != "max_episodes"}
        payload = json.dumps(
            {
                "env": self.env,
                "algorithm": algorithm,
                "algo": algo,
                "eval": self.eval,
                "seed": seed,
                "dataset_size": dataset_size,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _flatten(errors, prefix: str = "") -> str:
    if isinstance(errors, dict):
        return "; ".join(
            _flatten(value, f"{prefix}{key}." if key != "non_field_errors" else prefix)
            for key, value in errors.items()
        )
    if isinstance(errors, list):
        return "; ".join(_flatten(value, prefix) for value in errors)
    return f"{prefix.rstrip('.')}: {errors}" if prefix else str(errors)


def load_config(path: str) -> ExperimentConfig:
    """Parse and validate an experiment file; raises :class:`ConfigError`.

    An unreadable file raises ``OSError``.
    """
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as error:
        raise ConfigError(
            f"{path} is not valid JSON (line {error.lineno}: {error.msg})."
        ) from error
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a JSON object.")
    return ExperimentConfig.from_dict(data)
