"""
The work behind the management commands: expert generation, the training
grid, checkpoint evaluation and the comparison report.

Output layout under the experiment directory::

    expert.jsonl              expert transitions (manifest header first)
    expert_policy.npz         equilibrium policy of the solver
    <algorithm>/n<size>_s<seed>/
        metrics.csv           one RunRecord per evaluation
        checkpoint.npz        trainer state after the latest evaluation
        run.json              run summary
    eval.csv, *.svg           written by eval
    report.txt, report.csv    written by report
"""
import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from django.db import DatabaseError

from experiments.config import ExperimentConfig
from experiments.models import ExpertDataset, TrainingRun, Evaluation
from games.exceptions import ConfigError, DatasetParseError, NumericError
from games.markov_game import MarkovGame, PolicyTable, Transition
from games.solver import TablePolicy, equilibrium_fixed_point, generate_expert_dataset
from learning.approx import load_checkpoint, save_checkpoint
from learning.baselines import build_trainer
from learning.datasets import DatasetManifest, read_dataset, subsample, write_dataset
from learning.mamql import Trainer
from learning.metrics import (
    RunRecord,
    average_return,
    behavioral_error,
    episodes_to_convergence,
    read_metrics_csv,
    reward_recovery_mse,
    write_metrics_csv
)
from learning.plots import plot_run

logger = logging.getLogger(__name__)

EXPERT_POLICY_FILE = "expert_policy.npz"
METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.npz"
RUN_FILE = "run.json"
EVAL_FILE = "eval.csv"
REPORT_ALGORITHMS = ("mamql", "iql-ma", "iql-indep", "bc", "ma-airl")
REPORT_METRICS = ("return", "converged", "reward_mse", "nll")
UNAVAILABLE = "n/a"


@dataclass(frozen=True)
class ExpertSummary:
    path: str
    n_transitions: int
    residual: float
    iterations: int
    expert_return: float
    ratio: float | None


@dataclass(frozen=True)
class RunSummary:
    algorithm: str
    dataset_size: int
    seed: int
    directory: str
    episodes: int
    env_steps: int
    final: RunRecord | None
    converged_at: int | None


@dataclass(frozen=True)
class EvalSummary:
    record: RunRecord
    total_stderr: float
    ratio: float | None
    plots: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Report:
    header: list[str]
    rows: list[list[str]]
    flagged: list[str]
    warnings: list[str]

    @property
    def text(self) -> str:
        widths = [
            max(len(row[k]) for row in [self.header, *self.rows])
            for k in range(len(self.header))
        ]
        lines = [
            "  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
            for row in [self.header, *self.rows]
        ]
        lines.insert(1, "  ".join("-" * width for width in widths))
        for column in self.flagged:
            lines.append(f"! mamql is not the best method on {column}")
        return "\n".join(lines) + "\n"


def dataset_path(config: ExperimentConfig, out_dir: str) -> str:
    return os.path.join(out_dir, config.io.dataset)


def run_directory(out_dir: str, algorithm: str, dataset_size: int, seed: int) -> str:
    return os.path.join(out_dir, algorithm, f"n{dataset_size}_s{seed}")


def _registry(operation: Callable, *args, **kwargs):
    """Run a registry write; the file outputs stay authoritative without it."""
    try:
        return operation(*args, **kwargs)
    except DatabaseError as error:
        logger.warning("run registry unavailable (%s); continuing without it", error)
        return None


def _register_dataset(path: str, config: ExperimentConfig, env: MarkovGame,
                      summary: ExpertSummary) -> ExpertDataset:
    dataset, _ = ExpertDataset.objects.update_or_create(
        path=os.path.abspath(path),
        defaults={
            "env_type": config.env_type,
            "env_hash": env.config_hash(),
            "solver_seed": config.solver.seed,
            "lam": config.solver.lam,
            "damping": config.solver.damping,
            "residual": summary.residual,
            "expert_return": summary.expert_return,
            "n_transitions": summary.n_transitions,
        },
    )
    return dataset


def _register_run(directory: str, config: ExperimentConfig, env: MarkovGame,
                  algorithm: str, dataset_size: int, seed: int,
                  dataset_file: str) -> TrainingRun:
    run, _ = TrainingRun.objects.update_or_create(
        output_dir=os.path.abspath(directory),
        defaults={
            "algorithm": algorithm,
            "env_type": config.env_type,
            "env_hash": env.config_hash(),
            "seed": seed,
            "dataset_size": dataset_size,
            "dataset": ExpertDataset.objects.filter(
                path=os.path.abspath(dataset_file)
            ).first(),
            "status": TrainingRun.Status.RUNNING,
        },
    )
    return run


def _register_evaluation(run: TrainingRun | None, record: RunRecord) -> None:
    if run is None:
        return
    Evaluation.objects.update_or_create(
        run=run,
        episode=record.episode,
        defaults={
            "env_steps": record.env_steps,
            "total_return": record.total_return,
            "returns": list(record.returns),
            "return_stderr": list(record.return_stderr),
            "nll": list(record.nll),
            "reward_mse": None if record.reward_mse is None else list(record.reward_mse),
            "tv": None if record.tv is None else list(record.tv),
            "wall_clock": record.wall_clock,
        },
    )


def _finish_run(run: TrainingRun | None, trainer: Trainer, status: str,
                converged_at: int | None = None) -> None:
    if run is None:
        return
    run.status = status
    run.episodes = trainer.episode
    run.env_steps = trainer.env_steps
    run.converged_at = converged_at
    run.save()


def generate_experts(config: ExperimentConfig, out_dir: str,
                     seed: int | None = None) -> ExpertSummary:
    """Solve the game exactly, roll out ``io.n_steps`` expert transitions and
    store them together with the equilibrium policy."""
    env = config.build_env()
    model = env.tabular_model()
    solver = config.solver
    eq = equilibrium_fixed_point(
        model,
        lam=solver.lam,
        tol=solver.tol,
        damping=solver.damping,
        max_iterations=solver.max_iterations,
        q_tol=solver.q_tol,
        init_noise=solver.init_noise,
        seed=solver.seed,
    )
    rollout_seed = config.io.seeds[0] if seed is None else seed
    transitions = generate_expert_dataset(env, eq, config.io.n_steps, rollout_seed)
    returns = average_return(TablePolicy(env, eq.policies), env, config.n_episodes, rollout_seed)

    os.makedirs(out_dir, exist_ok=True)
    path = dataset_path(config, out_dir)
    manifest = DatasetManifest(
        env_hash=env.config_hash(),
        solver_seed=solver.seed,
        n_transitions=len(transitions),
        metadata={
            "lam": solver.lam,
            "damping": solver.damping,
            "residual": eq.residual,
            "iterations": eq.iterations,
            "expert_return": returns.total_mean,
            "expert_returns": list(returns.means),
            "rollout_seed": rollout_seed,
        },
    )
    write_dataset(path, transitions, manifest, env)
    save_checkpoint(
        os.path.join(out_dir, EXPERT_POLICY_FILE),
        {"probs": eq.policies.probs},
        {"env_hash": env.config_hash(), "lam": solver.lam, "residual": eq.residual},
    )
    summary = ExpertSummary(
        path=path,
        n_transitions=len(transitions),
        residual=eq.residual,
        iterations=eq.iterations,
        expert_return=returns.total_mean,
        ratio=returns.ratio,
    )
    _registry(_register_dataset, path, config, env, summary)
    return summary


def load_experts(
    config: ExperimentConfig,
    out_dir: str,
    env: MarkovGame
) -> tuple[list[Transition], DatasetManifest, TablePolicy | None]:
    """The expert dataset (manifest checked against ``env``) and the stored
    equilibrium policy when there is one."""
    transitions, manifest = read_dataset(
        dataset_path(config, out_dir), env, expected_env_hash=env.config_hash()
    )
    policy = None
    policy_path = os.path.join(out_dir, EXPERT_POLICY_FILE)
    if os.path.exists(policy_path):
        state, metadata = load_checkpoint(policy_path)
        if metadata.get("env_hash") == env.config_hash():
            policy = TablePolicy(env, PolicyTable(state["probs"]))
        else:
            logger.warning("%s belongs to another environment; TV is not reported",
                           policy_path)
    return transitions, manifest, policy


def _write_run_file(directory: str, payload: dict) -> None:
    tmp_path = os.path.join(directory, f"{RUN_FILE}.tmp")
    with open(tmp_path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")
    os.replace(tmp_path, os.path.join(directory, RUN_FILE))


def train_one(
    config: ExperimentConfig,
    env: MarkovGame,
    algorithm: str,
    transitions: Sequence[Transition],
    dataset_size: int,
    seed: int,
    out_dir: str,
    expert_policy: TablePolicy | None = None,
    expert_return: float | None = None,
    resume: bool = False
) -> RunSummary:
    directory = run_directory(out_dir, algorithm, dataset_size, seed)
    checkpoint = os.path.join(directory, CHECKPOINT_FILE)
    if dataset_size == len(transitions):
        expert = list(transitions)
    else:
        expert = subsample(transitions, dataset_size, seed)
    trainer = build_trainer(
        algorithm, env, expert, config.trainer_config(seed),
        expert_policy=expert_policy, expert_return=expert_return
    )
    metadata = {
        "algorithm": algorithm,
        "env_hash": env.config_hash(),
        "training_hash": config.training_hash(algorithm, seed, dataset_size),
        "seed": seed,
        "dataset_size": dataset_size,
    }
    if resume and os.path.exists(checkpoint):
        state, saved = load_checkpoint(checkpoint)
        if saved.get("training_hash") != metadata["training_hash"]:
            raise ConfigError(
                f"{checkpoint} was written by a different configuration; "
                f"remove it or run without --resume."
            )
        trainer.load_state_dict(state)
        logger.info("resuming %s from episode %d", directory, trainer.episode)

    os.makedirs(directory, exist_ok=True)
    run = _registry(
        _register_run, directory, config, env, algorithm, dataset_size, seed,
        dataset_path(config, out_dir)
    )

    def on_record(trainer: Trainer, record: RunRecord) -> None:
        write_metrics_csv(os.path.join(directory, METRICS_FILE), trainer.records)
        save_checkpoint(checkpoint, trainer.state_dict(), metadata)
        _registry(_register_evaluation, run, record)

    summary = {**metadata, "env_type": config.env_type, "experiment": config.name,
               "expert_return": expert_return}
    try:
        records = trainer.run(on_record)
    except NumericError as error:
        _write_run_file(directory, {
            **summary, "status": "failed", "error": str(error),
            "episodes": trainer.episode, "env_steps": trainer.env_steps,
        })
        _registry(_finish_run, run, trainer, TrainingRun.Status.FAILED)
        raise

    write_metrics_csv(os.path.join(directory, METRICS_FILE), records)
    save_checkpoint(checkpoint, trainer.state_dict(), metadata)
    converged_at = None
    if expert_return is not None and records:
        converged_at = episodes_to_convergence(
            records, expert_return, trainer.cfg.convergence_window,
            trainer.cfg.convergence_fraction
        )
    final = records[-1] if records else None
    _write_run_file(directory, {
        **summary,
        "status": "completed",
        "episodes": trainer.episode,
        "env_steps": trainer.env_steps,
        "converged_at": converged_at,
        "final": None if final is None else final.comparable(),
    })
    _registry(_finish_run, run, trainer, TrainingRun.Status.COMPLETED, converged_at)
    logger.info("%s finished after %d episodes (%d env steps)",
                directory, trainer.episode, trainer.env_steps)
    return RunSummary(
        algorithm=algorithm,
        dataset_size=dataset_size,
        seed=seed,
        directory=directory,
        episodes=trainer.episode,
        env_steps=trainer.env_steps,
        final=final,
        converged_at=converged_at,
    )


def train_grid(
    config: ExperimentConfig,
    out_dir: str,
    seeds: Sequence[int] | None = None,
    resume: bool = False,
    on_run: Callable[[RunSummary], None] | None = None
) -> list[RunSummary]:
    """Every algorithm × dataset size × seed of the config, one after another."""
    env = config.build_env()
    transitions, manifest, expert_policy = load_experts(config, out_dir, env)
    too_large = [size for size in config.io.dataset_sizes if size > len(transitions)]
    if too_large:
        raise ConfigError(
            f"dataset holds {len(transitions)} transitions, fewer than the "
            f"requested sizes {too_large}; regenerate it with a larger io.n_steps."
        )
    expert_return = manifest.metadata.get("expert_return")
    summaries = []
    for algorithm in config.algorithms:
        for size in config.io.dataset_sizes:
            for seed in seeds or config.io.seeds:
                summary = train_one(
                    config, env, algorithm, transitions, size, seed, out_dir,
                    expert_policy, expert_return, resume
                )
                summaries.append(summary)
                if on_run is not None:
                    on_run(summary)
    return summaries


def evaluate(
    config: ExperimentConfig,
    out_dir: str,
    checkpoint: str | None = None,
    expert: bool = False,
    plots: bool = False,
    seed: int | None = None
) -> EvalSummary:
    """All metrics for a trained checkpoint or for the stored expert policy."""
    if expert == (checkpoint is not None):
        raise ConfigError("evaluate either a checkpoint or the expert policy.")
    env = config.build_env()
    transitions, _, expert_policy = load_experts(config, out_dir, env)
    seed = config.io.seeds[0] if seed is None else seed
    cfg = config.trainer_config(seed)
    history: list[RunRecord] = []
    reward_models = []
    episode = env_steps = 0
    if expert:
        if expert_policy is None:
            raise ConfigError(f"no expert policy stored in {out_dir}; run gen_experts first.")
        policy = expert_policy
        title = "expert"
    else:
        state, metadata = load_checkpoint(checkpoint)
        if metadata.get("env_hash") != env.config_hash():
            raise ConfigError(f"{checkpoint} was trained on a different environment.")
        trainer = build_trainer(
            metadata["algorithm"], env, transitions,
            config.trainer_config(int(metadata["seed"])), expert_policy=expert_policy
        )
        trainer.load_state_dict(state)
        policy = trainer.policy()
        reward_models = trainer.reward_models
        history = list(trainer.records)
        episode, env_steps = trainer.episode, trainer.env_steps
        title = f"{metadata['algorithm']} n={metadata['dataset_size']} seed={metadata['seed']}"

    returns = average_return(policy, env, config.n_episodes, seed)
    mse = None
    if reward_models:
        mse = reward_recovery_mse(reward_models, env, policy, cfg.reward_samples, seed)
    error = behavioral_error(policy, transitions, expert_policy)
    record = RunRecord(
        episode=episode,
        returns=returns.means,
        return_stderr=returns.stderr,
        total_return=returns.total_mean,
        nll=error.nll,
        reward_mse=mse,
        tv=error.tv,
        env_steps=env_steps,
        seed=seed,
    )
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(out_dir, EVAL_FILE), [record])
    paths = []
    if plots:
        if not history or history[-1].episode < record.episode:
            history.append(record)
        paths = plot_run(history, out_dir, title)
    return EvalSummary(record, returns.total_stderr, returns.ratio, paths)


def _read_run_file(directory: str) -> dict:
    path = os.path.join(directory, RUN_FILE)
    with open(path, "r", encoding="utf-8") as handle:
        text = handle.read()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as error:
        raise DatasetParseError(f"{path}: {error.msg}", error.lineno) from error
    missing = [key for key in ("algorithm", "experiment", "dataset_size", "seed", "status")
               if key not in payload]
    if missing:
        raise DatasetParseError(f"{path} lacks {missing}.", 1)
    return payload


def discover_runs(out_dir: str) -> list[str]:
    found = []
    for algorithm in sorted(os.listdir(out_dir)) if os.path.isdir(out_dir) else []:
        base = os.path.join(out_dir, algorithm)
        if not os.path.isdir(base):
            continue
        for name in sorted(os.listdir(base)):
            if os.path.exists(os.path.join(base, name, RUN_FILE)):
                found.append(os.path.join(base, name))
    return found


def _median(values: list[float]) -> str:
    if not values:
        return UNAVAILABLE
    return f"{float(np.median(values)):.4g}"


def build_report(run_dirs: Sequence[str]) -> Report:
    """Algorithms as rows, one column group per experiment and dataset size.

    Cells hold medians over seeds of the final evaluation; missing data is
    ``n/a`` and counted as a warning. Runs that compare several methods also
    list MA-AIRL, which is never available here.
    """
    if not run_dirs:
        raise FileNotFoundError("no run directories to report on.")
    warnings: list[str] = []
    cells: dict[tuple[str, str], dict[str, list[float]]] = {}
    groups: list[str] = []
    algorithms: set[str] = set()
    for directory in run_dirs:
        payload = _read_run_file(directory)
        algorithm = payload["algorithm"]
        group = f"{payload['experiment']}/n{payload['dataset_size']}"
        if group not in groups:
            groups.append(group)
        algorithms.add(algorithm)
        values = cells.setdefault((algorithm, group), {name: [] for name in REPORT_METRICS})
        metrics_path = os.path.join(directory, METRICS_FILE)
        if not os.path.exists(metrics_path):
            warnings.append(f"{directory}: missing {METRICS_FILE}")
            continue
        records = read_metrics_csv(metrics_path)
        if not records:
            warnings.append(f"{directory}: no evaluations recorded")
            continue
        final = records[-1]
        values["return"].append(final.total_return)
        values["nll"].append(float(np.mean(final.nll)))
        if final.reward_mse is not None:
            values["reward_mse"].append(float(np.mean(final.reward_mse)))
        if payload.get("converged_at") is not None:
            values["converged"].append(float(payload["converged_at"]))

    rows_order = [name for name in REPORT_ALGORITHMS if name in algorithms]
    if len(rows_order) > 1:
        rows_order.append("ma-airl")
    header = ["algorithm"] + [f"{group}:{metric}" for group in groups
                              for metric in REPORT_METRICS]
    rows = []
    for algorithm in rows_order:
        row = [algorithm]
        for group in groups:
            values = cells.get((algorithm, group))
            for metric in REPORT_METRICS:
                row.append(UNAVAILABLE if values is None else _median(values[metric]))
        rows.append(row)

    flagged = []
    for group in groups:
        finals = {
            algorithm: np.median(values["return"])
            for (algorithm, name), values in cells.items()
            if name == group and values["return"]
        }
        if "mamql" in finals and max(finals.values()) > finals["mamql"]:
            flagged.append(group)
    return Report(header, rows, flagged, warnings)


def write_report(report: Report, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    text_path = os.path.join(out_dir, "report.txt")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(text_path, "w", encoding="utf-8") as handle:
        handle.write(report.text)
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(report.header + ["flag"])
        for row in report.rows:
            flag = "not-best" if row[0] == "mamql" and report.flagged else ""
            writer.writerow(row + [flag])
    return [text_path, csv_path]
