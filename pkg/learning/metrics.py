"""
Evaluation protocols: episodic and average return, reward recovery error,
behavioural error against expert demonstrations, episodes to convergence,
and the metrics CSV stream.
"""
import csv
import math
from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np

from games.exceptions import ArgumentError, DatasetParseError
from games.markov_game import MarkovGame, Transition, sample_actions

NLL_FLOOR = 1e-12


class PolicyBundle(Protocol):
    n_agents: int

    def action_probs(self, agent: int, states: Sequence) -> np.ndarray:
        ...


@dataclass(frozen=True)
class RunRecord:
    """One evaluation point of a training run."""

    episode: int
    returns: tuple[float, ...]
    return_stderr: tuple[float, ...]
    total_return: float
    nll: tuple[float, ...]
    reward_mse: tuple[float, ...] | None = None
    tv: tuple[float, ...] | None = None
    env_steps: int = 0
    seed: int = 0
    wall_clock: float = 0.0

    @staticmethod
    def validate_record(
        episode: int,
        values: Sequence[float],
        error_to_raise: type(Exception)
    ) -> None:
        if episode < 0:
            raise error_to_raise("episode index must be non-negative.")
        if not all(math.isfinite(value) for value in values):
            raise error_to_raise("run record fields must be finite.")

    def __post_init__(self) -> None:
        for name in ("returns", "return_stderr", "nll", "reward_mse", "tv"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in value))
        values = [*self.returns, *self.return_stderr, *self.nll, self.total_return]
        values += list(self.reward_mse or ()) + list(self.tv or ())
        RunRecord.validate_record(self.episode, values, ArgumentError)

    @property
    def n_agents(self) -> int:
        return len(self.returns)

    def comparable(self) -> dict:
        """Every field except the wall clock, for reproducibility checks."""
        data = asdict(self)
        data.pop("wall_clock")
        return data


@dataclass(frozen=True)
class ReturnSummary:
    means: tuple[float, ...]
    stderr: tuple[float, ...]
    total_mean: float
    total_stderr: float
    ratio: float | None
    n_episodes: int


@dataclass(frozen=True)
class BehavioralError:
    nll: tuple[float, ...]
    tv: tuple[float, ...] | None = None


def episodic_return(trajectory: Sequence[Transition]) -> float:
    """G(τ) = Σₜ Σᵢ rₜⁱ."""
    total = 0.0
    for transition in trajectory:
        if transition.true_rewards is None:
            raise ArgumentError("trajectory is missing true rewards.")
        total += sum(transition.true_rewards)
    return total


def rollout(
    policy: PolicyBundle,
    env: MarkovGame,
    rng: np.random.Generator,
    episode: int = 0
) -> list[Transition]:
    trajectory = []
    state = env.reset(rng)
    for step in range(env.max_episode_steps):
        rows = np.stack([
            policy.action_probs(i, [state])[0] for i in range(env.spec.n_agents)
        ])
        joint = sample_actions(rows, rng)
        next_state, rewards, done = env.step(state, joint, rng)
        trajectory.append(Transition(
            state, joint, next_state, done, tuple(rewards), episode, step
        ))
        state = next_state
        if done:
            break
    return trajectory


def average_return(
    policy: PolicyBundle,
    env: MarkovGame,
    n_episodes: int = 1000,
    seed: int = 0
) -> ReturnSummary:
    """Per-agent mean episode return over independently seeded rollouts."""
    if n_episodes < 1:
        raise ArgumentError("n_episodes must be positive.")
    n = env.spec.n_agents
    returns = np.zeros((n_episodes, n))
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n_episodes)):
        trajectory = rollout(policy, env, np.random.default_rng(child), k)
        for transition in trajectory:
            returns[k] += transition.true_rewards
    totals = returns.sum(axis=1)
    if n_episodes > 1:
        stderr = returns.std(axis=0, ddof=1) / np.sqrt(n_episodes)
        total_stderr = float(totals.std(ddof=1) / np.sqrt(n_episodes))
    else:
        stderr = np.zeros(n)
        total_stderr = 0.0
    means = returns.mean(axis=0)
    ratio = None
    if n == 2 and means[1] != 0.0:
        ratio = float(means[0] / means[1])
    return ReturnSummary(
        means=tuple(float(m) for m in means),
        stderr=tuple(float(s) for s in stderr),
        total_mean=float(totals.mean()),
        total_stderr=total_stderr,
        ratio=ratio,
        n_episodes=n_episodes,
    )


def reward_recovery_mse(
    reward_models: Sequence,
    env: MarkovGame,
    policy: PolicyBundle,
    n_samples: int = 1000,
    seed: int = 0
) -> tuple[float, ...]:
    """MSE between each learned reward and the true reward on policy rollouts."""
    if n_samples < 1:
        raise ArgumentError("n_samples must be positive.")
    rng = np.random.default_rng(seed)
    samples: list[Transition] = []
    episode = 0
    while len(samples) < n_samples:
        samples.extend(rollout(policy, env, rng, episode))
        episode += 1
    samples = samples[:n_samples]
    states = [t.state for t in samples]
    joints = [t.joint_action for t in samples]
    errors = []
    for model in reward_models:
        truth = np.array([t.true_rewards[model.agent] for t in samples])
        predicted = model.predict(states, joints)
        errors.append(float(np.mean((predicted - truth) ** 2)))
    return tuple(errors)


def behavioral_error(
    policy: PolicyBundle,
    expert: Sequence[Transition],
    expert_policy: PolicyBundle | None = None
) -> BehavioralError:
    """Expert-action NLL per agent; TV to the expert policy when it is known.

    NLL is averaged over transitions. TV is averaged over the distinct states
    visited in the dataset, each counted once.
    """
    if not expert:
        raise ArgumentError("expert dataset is empty.")
    states = [t.state for t in expert]
    actions = np.array([t.joint_action for t in expert])
    nll = []
    tv = []
    rows = np.arange(len(expert))
    visited = list(dict.fromkeys(states))
    for i in range(actions.shape[1]):
        probs = policy.action_probs(i, states)
        nll.append(float(-np.mean(np.log(
            np.maximum(probs[rows, actions[:, i]], NLL_FLOOR)
        ))))
        if expert_policy is not None:
            learned = policy.action_probs(i, visited)
            target = expert_policy.action_probs(i, visited)
            tv.append(float(np.mean(0.5 * np.abs(learned - target).sum(axis=1))))
    return BehavioralError(tuple(nll), tuple(tv) if expert_policy is not None else None)


def episodes_to_convergence(
    records: Sequence[RunRecord],
    expert_return: float,
    window: int = 50,
    fraction: float = 0.85
) -> int | None:
    """First episode from which the trailing-window mean return stays at or
    above ``fraction`` of the expert return for the rest of the run."""
    if window < 1:
        raise ArgumentError("window must be positive.")
    threshold = fraction * expert_return
    totals = np.array([record.total_return for record in records])
    converged_from = None
    for k in range(len(totals)):
        windowed = totals[max(0, k - window + 1):k + 1].mean()
        if windowed >= threshold:
            if converged_from is None:
                converged_from = k
        else:
            converged_from = None
    if converged_from is None:
        return None
    return records[converged_from].episode


def metrics_header(n_agents: int) -> list[str]:
    header = ["episode", "env_steps", "seed", "total_return"]
    for prefix in ("return", "return_stderr", "reward_mse", "nll", "tv"):
        header += [f"{prefix}_{i}" for i in range(n_agents)]
    header.append("wall_clock")
    return header


def _cells(values: tuple[float, ...] | None, n_agents: int) -> list[str]:
    if values is None:
        return [""] * n_agents
    return [repr(float(value)) for value in values]


def write_metrics_csv(path: str, records: Sequence[RunRecord]) -> None:
    """One row per record; episodes must be strictly increasing."""
    episodes = [record.episode for record in records]
    if any(b <= a for a, b in zip(episodes, episodes[1:])):
        raise ArgumentError("record episodes must be strictly increasing.")
    n_agents = records[0].n_agents if records else 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(metrics_header(n_agents))
        for record in records:
            writer.writerow(
                [record.episode, record.env_steps, record.seed,
                 repr(float(record.total_return))]
                + _cells(record.returns, n_agents)
                + _cells(record.return_stderr, n_agents)
                + _cells(record.reward_mse, n_agents)
                + _cells(record.nll, n_agents)
                + _cells(record.tv, n_agents)
                + [repr(float(record.wall_clock))]
            )


def read_metrics_csv(path: str) -> list[RunRecord]:
    with open(path, "r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        fields = reader.fieldnames or []
        n_agents = sum(1 for name in fields if name.startswith("return_")
                       and not name.startswith("return_stderr"))
        if fields != metrics_header(n_agents):
            raise DatasetParseError("unexpected metrics header.", 1)

        def column(row: dict, prefix: str) -> tuple[float, ...] | None:
            cells = [row[f"{prefix}_{i}"] for i in range(n_agents)]
            if all(cell == "" for cell in cells):
                return None
            return tuple(float(cell) for cell in cells)

        records = []
        for number, row in enumerate(reader, start=2):
            try:
                records.append(RunRecord(
                    episode=int(row["episode"]),
                    returns=column(row, "return"),
                    return_stderr=column(row, "return_stderr"),
                    total_return=float(row["total_return"]),
                    nll=column(row, "nll"),
                    reward_mse=column(row, "reward_mse"),
                    tv=column(row, "tv"),
                    env_steps=int(row["env_steps"]),
                    seed=int(row["seed"]),
                    wall_clock=float(row["wall_clock"]),
                ))
            except (TypeError, ValueError) as error:
                raise DatasetParseError(f"invalid metrics row ({error}).", number) from error
    return records
