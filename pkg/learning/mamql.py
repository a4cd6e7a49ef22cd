"""
Multi-agent marginal soft-Q learning.

Every agent keeps a marginal critic Q̄ᵢ(s, aᵢ), trained with the inverse
soft-Q objective on expert and rollout batches, and a reward model
Rᵢ(s, a) regressed onto the rewards the critic implies once the other
agents' actions are averaged out under a frozen policy snapshot.
"""
import logging
import time
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Callable, Sequence

import numpy as np

from games.exceptions import (
    ArgumentError,
    ConfigError,
    EnumerationTooLargeError,
    NumericError,
    TabularUnsupportedError
)
from games.markov_game import (
    JointAction,
    MarkovGame,
    PolicyTable,
    TabularModel,
    Transition,
    enumerate_opponent_actions,
    sample_actions
)
from games.solver import Marginalizer, boltzmann, soft_value_grad, soft_values
from learning.approx import Adam, Mlp, TabularParams, soft_update
from learning.datasets import ReplayBuffer
from learning.metrics import (
    RunRecord,
    average_return,
    behavioral_error,
    episodes_to_convergence,
    reward_recovery_mse,
    rollout
)

logger = logging.getLogger(__name__)

PHI_KINDS = ("linear", "pearson")
LOSS_MODES = ("online", "offline")
OPPONENT_MODES = ("enumerate", "one-sample")
BACKENDS = ("auto", "tabular", "mlp")
DEFAULT_TAU = 0.005
BUFFER_HORIZONS = 400


def phi(x, kind: str = "pearson"):
    """Concave regulariser: identity, or x − x²/4 for the Pearson χ² case."""
    if kind == "linear":
        return x * 1.0
    if kind == "pearson":
        return x - x * x / 4.0
    raise ArgumentError(f"unknown phi kind {kind!r}; choose from {PHI_KINDS}.")


def phi_grad(x, kind: str = "pearson"):
    if kind == "linear":
        return np.ones_like(np.asarray(x, dtype=np.float64))
    if kind == "pearson":
        return 1.0 - x / 2.0
    raise ArgumentError(f"unknown phi kind {kind!r}; choose from {PHI_KINDS}.")


@dataclass(frozen=True)
class MamqlConfig:
    """Hyperparameters shared by MAMQL and the inverse soft-Q baselines.

    ``None`` entries are resolved against an environment by :meth:`resolve`:
    γ from the game, a buffer of 400 horizons, Polyak τ=0.005 for MLP
    critics and no target copy for tables.
    """

    lam: float = 1.0
    gamma: float | None = None
    alpha: float = 3e-4
    batch_size: int = 64
    buffer_capacity: int | None = None
    phi: str = "pearson"
    beta: float = 1e-3
    loss_mode: str = "online"
    opponent_mode: str = "enumerate"
    tau: float | None = None
    hidden_sizes: tuple[int, ...] = (64, 64, 64, 64)
    backend: str = "auto"
    seed: int = 0
    max_episodes: int = 1000
    updates_per_episode: int = 1
    eval_interval: int = 50
    eval_episodes: int = 100
    reward_samples: int = 500
    convergence_window: int = 50
    convergence_fraction: float = 0.85
    stop_on_convergence: bool = False

    @staticmethod
    def validate_config(
        values: dict[str, Any],
        error_to_raise: type(Exception)
    ) -> None:
        for name in (
            "lam", "alpha", "batch_size", "updates_per_episode",
            "eval_interval", "eval_episodes", "reward_samples",
            "convergence_window"
        ):
            if name in values and values[name] <= 0:
                raise error_to_raise(f"{name} must be positive.")
        for name in ("beta", "max_episodes", "seed"):
            if name in values and values[name] < 0:
                raise error_to_raise(f"{name} must be non-negative.")
        if values.get("gamma") is not None and not 0.0 <= values["gamma"] < 1.0:
            raise error_to_raise("gamma must lie in [0, 1).")
        if values.get("buffer_capacity") is not None and values["buffer_capacity"] < 1:
            raise error_to_raise("buffer_capacity must be positive.")
        if values.get("tau") is not None and not 0.0 <= values["tau"] <= 1.0:
            raise error_to_raise("tau must lie in [0, 1]; 0 disables the target copy.")
        if "convergence_fraction" in values and not 0.0 < values["convergence_fraction"] <= 1.0:
            raise error_to_raise("convergence_fraction must lie in (0, 1].")
        if "hidden_sizes" in values and any(size < 1 for size in values["hidden_sizes"]):
            raise error_to_raise("hidden layer sizes must be positive.")
        choices = {
            "phi": PHI_KINDS,
            "loss_mode": LOSS_MODES,
            "opponent_mode": OPPONENT_MODES,
            "backend": BACKENDS,
        }
        for name, allowed in choices.items():
            if name in values and values[name] not in allowed:
                raise error_to_raise(
                    f"{name} must be one of {', '.join(allowed)}."
                )

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        MamqlConfig.validate_config(
            {item.name: getattr(self, item.name) for item in fields(self)},
            ArgumentError
        )

    @classmethod
    def from_dict(cls, data: dict) -> "MamqlConfig":
        known = {item.name for item in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown algorithm settings: {sorted(unknown)}.")
        return cls(**data)

    def resolve(self, env: MarkovGame) -> "MamqlConfig":
        backend = self.backend
        if backend == "auto":
            backend = "tabular" if env.is_tabular else "mlp"
        elif backend == "tabular" and not env.is_tabular:
            raise TabularUnsupportedError(
                "tabular backend requested for a game without state enumeration."
            )
        tau = self.tau
        if tau is None:
            tau = DEFAULT_TAU if backend == "mlp" else 0.0
        return replace(
            self,
            gamma=env.spec.gamma if self.gamma is None else self.gamma,
            buffer_capacity=(
                BUFFER_HORIZONS * env.max_episode_steps
                if self.buffer_capacity is None else self.buffer_capacity
            ),
            backend=backend,
            tau=tau,
        )


def _discount(cfg: MamqlConfig) -> float:
    if cfg.gamma is None:
        raise ArgumentError("gamma is unresolved; call MamqlConfig.resolve(env).")
    return cfg.gamma


class StateEncoder:
    """Network inputs for states: ids for table backends, features otherwise."""

    def __init__(self, env: MarkovGame, tabular: bool) -> None:
        if tabular and not env.is_tabular:
            raise TabularUnsupportedError("the game has no state enumeration.")
        self.env = env
        self.tabular = tabular

    def ids(self, states: Sequence) -> np.ndarray:
        return np.array([self.env.state_id(state) for state in states], dtype=np.int64)

    def features(self, states: Sequence, agent: int) -> np.ndarray:
        if not len(states):
            return np.zeros((0, self.env.feature_size))
        return np.stack([self.env.features(state, agent) for state in states])

    def encode(self, states: Sequence, agent: int) -> np.ndarray:
        if self.tabular:
            return self.ids(states)
        return self.features(states, agent)


class MarginalCritic:
    """Q̄ᵢ(s, ·) over the agent's own actions, with an optional Polyak target."""

    def __init__(
        self,
        net: Mlp | TabularParams,
        encoder: StateEncoder,
        agent: int,
        lam: float = 1.0,
        tau: float = 0.0
    ) -> None:
        if lam <= 0:
            raise ArgumentError("lambda must be positive.")
        self.net = net
        self.encoder = encoder
        self.agent = agent
        self.lam = lam
        self.tau = tau
        self.target = net.copy() if tau > 0.0 else None

    @classmethod
    def build(
        cls,
        env: MarkovGame,
        encoder: StateEncoder,
        agent: int,
        cfg: MamqlConfig,
        seed: int = 0
    ) -> "MarginalCritic":
        action_count = env.spec.action_count
        if encoder.tabular:
            net = TabularParams(env.spec.state_space_size, action_count)
        else:
            net = Mlp([env.feature_size, *cfg.hidden_sizes, action_count], seed=seed)
        return cls(net, encoder, agent, cfg.lam, cfg.tau or 0.0)

    @classmethod
    def from_table(
        cls,
        table: np.ndarray,
        env: MarkovGame,
        agent: int,
        lam: float = 1.0
    ) -> "MarginalCritic":
        net = TabularParams(*table.shape)
        net.table[...] = table
        return cls(net, StateEncoder(env, tabular=True), agent, lam)

    def q_values(self, states: Sequence, target: bool = False) -> np.ndarray:
        net = self.target if target and self.target is not None else self.net
        return net.forward(self.encoder.encode(states, self.agent))

    def policy(self, states: Sequence) -> np.ndarray:
        return boltzmann(self.q_values(states), self.lam)

    def values(self, states: Sequence, target: bool = False) -> np.ndarray:
        return soft_values(self.q_values(states, target), self.lam)

    def update_target(self) -> None:
        if self.target is not None:
            soft_update(self.target, self.net, self.tau)

    def snapshot(self) -> "MarginalCritic":
        return MarginalCritic(self.net.copy(), self.encoder, self.agent, self.lam)

    def q_table(self) -> np.ndarray:
        if isinstance(self.net, TabularParams):
            return self.net.table.copy()
        env = self.encoder.env
        states = [env.state_from_id(s) for s in range(env.spec.state_space_size)]
        return self.q_values(states)

    def state_dict(self) -> dict:
        return {
            "net": self.net.state_dict(),
            "target": None if self.target is None else self.target.state_dict(),
        }

    def load_state_dict(self, state: dict) -> None:
        self.net.load_state_dict(state["net"])
        if (state["target"] is None) != (self.target is None):
            raise ConfigError("checkpoint target network does not match the critic.")
        if self.target is not None:
            self.target.load_state_dict(state["target"])


class CriticPolicy:
    """Joint policy in which agent i plays Boltzmann over its own critic."""

    def __init__(self, critics: Sequence[MarginalCritic]) -> None:
        self.critics = list(critics)

    @property
    def n_agents(self) -> int:
        return len(self.critics)

    def action_probs(self, agent: int, states: Sequence) -> np.ndarray:
        return self.critics[agent].policy(states)

    def frozen(self) -> "CriticPolicy":
        return CriticPolicy([critic.snapshot() for critic in self.critics])


class RewardModel:
    """Rᵢ(s, a) from the agent's state features and a one-hot joint action.

    With ``joint=False`` only the agent's own action is encoded.
    """

    def __init__(
        self,
        net: Mlp,
        encoder: StateEncoder,
        agent: int,
        n_agents: int,
        action_count: int,
        joint: bool = True
    ) -> None:
        self.net = net
        self.encoder = encoder
        self.agent = agent
        self.n_agents = n_agents
        self.action_count = action_count
        self.joint = joint
        expected = encoder.env.feature_size + self.action_width
        if net.input_size != expected or net.output_size != 1:
            raise ArgumentError(
                f"reward net must map {expected} inputs to one output."
            )

    @classmethod
    def build(
        cls,
        env: MarkovGame,
        encoder: StateEncoder,
        agent: int,
        hidden_sizes: Sequence[int],
        seed: int = 0,
        joint: bool = True
    ) -> "RewardModel":
        n, action_count = env.spec.n_agents, env.spec.action_count
        width = n * action_count if joint else action_count
        net = Mlp([env.feature_size + width, *hidden_sizes, 1], seed=seed)
        return cls(net, encoder, agent, n, action_count, joint)

    @property
    def action_width(self) -> int:
        if self.joint:
            return self.n_agents * self.action_count
        return self.action_count

    def one_hot(self, joint_actions: Sequence[JointAction]) -> np.ndarray:
        actions = np.asarray(joint_actions, dtype=np.int64).reshape(-1, self.n_agents)
        rows = np.arange(len(actions))
        encoded = np.zeros((len(actions), self.action_width))
        if self.joint:
            offsets = np.arange(self.n_agents) * self.action_count
            encoded[rows[:, None], offsets + actions] = 1.0
        else:
            encoded[rows, actions[:, self.agent]] = 1.0
        return encoded

    def inputs(self, features: np.ndarray, joint_actions: Sequence[JointAction]) -> np.ndarray:
        return np.concatenate([features, self.one_hot(joint_actions)], axis=1)

    def predict(self, states: Sequence, joint_actions: Sequence[JointAction]) -> np.ndarray:
        features = self.encoder.features(states, self.agent)
        return self.net.forward(self.inputs(features, joint_actions))[:, 0]

    def state_dict(self) -> dict:
        return self.net.state_dict()

    def load_state_dict(self, state: dict) -> None:
        self.net.load_state_dict(state)


def reward_estimates(
    critic: MarginalCritic,
    batch: Sequence[Transition],
    gamma: float
) -> np.ndarray:
    """R̄(s, aᵢ) = Q̄(s, aᵢ) − γ·V(s′) per transition, V(s′) = 0 after termination."""
    i = critic.agent
    actions = np.array([t.joint_action[i] for t in batch], dtype=np.int64)
    alive = np.array([0.0 if t.done else 1.0 for t in batch])
    next_values = critic.values(
        [t.next_state for t in batch], target=critic.target is not None
    )
    q = critic.q_values([t.state for t in batch])
    return q[np.arange(len(batch)), actions] - gamma * alive * next_values


def reward_estimate(
    critic: MarginalCritic,
    state: Any,
    a_i: int,
    next_state: Any,
    gamma: float,
    done: bool = False
) -> float:
    joint = [0] * critic.encoder.env.spec.n_agents
    joint[critic.agent] = a_i
    transition = Transition(state, tuple(joint), next_state, done)
    return float(reward_estimates(critic, [transition], gamma)[0])


def enumerated_reward_estimate(
    q_table: np.ndarray,
    model: TabularModel,
    policy: PolicyTable,
    agent: int,
    lam: float = 1.0
) -> np.ndarray:
    """R̄ for every (s, aᵢ) with the next-state value averaged exactly over
    opponents and successors."""
    marginal = Marginalizer(policy, agent)
    next_values = model.expected_next(soft_values(q_table, lam))
    return q_table - model.spec.gamma * marginal(next_values)


def critic_loss(
    critic: MarginalCritic,
    expert_batch: Sequence[Transition],
    rollout_batch: Sequence[Transition],
    cfg: MamqlConfig,
    initial_states: Sequence | None = None
) -> tuple[float, list[np.ndarray]]:
    """Inverse soft-Q loss of one agent and its parameter gradients.

    online:  E_ρπ[V(s) − γV(s′)] − E_ρE[φ(Q̄(s,aᵢ) − γV(s′))]
    offline: (1−γ)·E_p₀[V(s₀)] − E_ρE[φ(Q̄(s,aᵢ) − γV(s′))]
    """
    if not expert_batch:
        raise ArgumentError("expert batch is empty.")
    online = cfg.loss_mode == "online"
    if online and not rollout_batch:
        raise ArgumentError("rollout batch is empty.")
    if not online and not initial_states:
        raise ArgumentError("offline mode needs initial-state samples.")
    gamma = _discount(cfg)
    i = critic.agent

    expert_actions = np.array([t.joint_action[i] for t in expert_batch], dtype=np.int64)
    expert_alive = np.array([0.0 if t.done else 1.0 for t in expert_batch])
    expert_next = [t.next_state for t in expert_batch]
    if online:
        head = [t.state for t in rollout_batch] + [t.next_state for t in rollout_batch]
    else:
        head = list(initial_states)
    detached = critic.target is not None
    states = head + [t.state for t in expert_batch]
    if detached:
        next_values = critic.values(expert_next, target=True)
    else:
        states += expert_next

    q = critic.net.forward(critic.encoder.encode(states, i))
    values = soft_values(q, critic.lam)
    dv = soft_value_grad(q, critic.lam)
    grad = np.zeros_like(q)

    if online:
        b = len(rollout_batch)
        alive = np.array([0.0 if t.done else 1.0 for t in rollout_batch])
        loss = float(np.mean(values[:b] - gamma * alive * values[b:2 * b]))
        grad[:b] += dv[:b] / b
        grad[b:2 * b] -= (gamma * alive / b)[:, None] * dv[b:2 * b]
        start = 2 * b
    else:
        b = len(initial_states)
        loss = float((1.0 - gamma) * np.mean(values[:b]))
        grad[:b] += (1.0 - gamma) / b * dv[:b]
        start = b

    e = len(expert_batch)
    rows = np.arange(start, start + e)
    if not detached:
        next_values = values[start + e:]
    r_bar = q[rows, expert_actions] - gamma * expert_alive * next_values
    loss -= float(np.mean(phi(r_bar, cfg.phi)))
    weight = phi_grad(r_bar, cfg.phi) / e
    grad[rows, expert_actions] -= weight
    if not detached:
        grad[start + e:] += (gamma * expert_alive * weight)[:, None] * dv[start + e:]
    return loss, critic.net.backward(grad)


def opponent_expectation(
    snapshot,
    states: Sequence,
    own_actions: np.ndarray,
    agent: int,
    mode: str = "enumerate",
    rng: np.random.Generator | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Joint actions (B, T, n) and weights (B, T) for E_{ã₋ᵢ∼π₋ᵢ(·|s)}.

    ``enumerate`` lists every opponent tuple and falls back to one sample per
    row when the enumeration cap is exceeded.
    """
    n = snapshot.n_agents
    batch = len(states)
    opponents = [j for j in range(n) if j != agent]
    probs = [snapshot.action_probs(j, states) for j in range(n)]
    if not opponents:
        mode = "enumerate"
    if mode == "enumerate":
        try:
            tuples = enumerate_opponent_actions(n, probs[0].shape[1], agent)
        except EnumerationTooLargeError as error:
            logger.debug("falling back to sampled opponents: %s", error)
            mode = "one-sample"
        else:
            weights = PolicyTable(np.stack(probs)).opponent_weights(agent, tuples)
            others = np.asarray(tuples, dtype=np.int64).reshape(len(tuples), n - 1)
            others = np.broadcast_to(others, (batch, len(tuples), n - 1))
    if mode == "one-sample":
        if rng is None:
            raise ArgumentError("one-sample opponent mode needs an rng.")
        others = np.array([
            [sample_actions(np.stack([probs[j][b] for j in opponents]), rng)]
            for b in range(batch)
        ], dtype=np.int64).reshape(batch, 1, n - 1)
        weights = np.ones((batch, 1))
    joints = np.empty((batch, others.shape[1], n), dtype=np.int64)
    joints[..., opponents] = others
    joints[..., agent] = np.asarray(own_actions, dtype=np.int64)[:, None]
    return joints, weights


def regress_rewards(
    reward: RewardModel,
    features: np.ndarray,
    joints: np.ndarray,
    weights: np.ndarray,
    targets: np.ndarray,
    beta: float
) -> tuple[float, list[np.ndarray]]:
    """Squared error between E_w[R(s, ·)] and the targets plus β·E_w[R²]."""
    batch, count, n = joints.shape
    inputs = reward.inputs(np.repeat(features, count, axis=0), joints.reshape(-1, n))
    out = reward.net.forward(inputs)[:, 0].reshape(batch, count)
    error = (weights * out).sum(axis=1) - targets
    loss = float(np.mean(error ** 2) + beta * np.mean((weights * out ** 2).sum(axis=1)))
    grad = 2.0 * (error[:, None] * weights + beta * weights * out) / batch
    return loss, reward.net.backward(grad.reshape(-1, 1))


def reward_loss(
    reward: RewardModel,
    critic: MarginalCritic,
    snapshot,
    batch: Sequence[Transition],
    cfg: MamqlConfig,
    rng: np.random.Generator | None = None
) -> tuple[float, list[np.ndarray]]:
    """Regress E_{ã₋ᵢ∼π₋ᵢ}[Rᵢ(s, aᵢ, ã₋ᵢ)] onto the critic's R̄(s, aᵢ).

    The targets carry no gradient into the critic.
    """
    if not batch:
        raise ArgumentError("rollout batch is empty.")
    i = reward.agent
    targets = reward_estimates(critic, batch, _discount(cfg))
    states = [t.state for t in batch]
    if reward.joint:
        own = np.array([t.joint_action[i] for t in batch], dtype=np.int64)
        joints, weights = opponent_expectation(
            snapshot, states, own, i, cfg.opponent_mode, rng
        )
    else:
        joints = np.array([t.joint_action for t in batch], dtype=np.int64)[:, None, :]
        weights = np.ones((len(batch), 1))
    features = reward.encoder.features(states, i)
    return regress_rewards(reward, features, joints, weights, targets, cfg.beta)


def act(policy, state: Any, rng: np.random.Generator) -> JointAction:
    """Independent draw of every agent's action from its Boltzmann policy."""
    rows = np.stack([policy.action_probs(i, [state])[0] for i in range(policy.n_agents)])
    return sample_actions(rows, rng)


@dataclass
class TrainingResult:
    critics: list
    reward_models: list
    records: list[RunRecord]
    policy: Any


class Trainer:
    """Rollout/update loop shared by MAMQL and the inverse soft-Q baselines.

    One episode is rolled out into the replay buffer per iteration, then every
    agent takes ``updates_per_episode`` gradient steps against a frozen
    snapshot of the joint policy. Updates are skipped while the buffer holds
    fewer than ``batch_size`` transitions.
    """

    algorithm = "mamql"
    joint_rewards = True
    RNG_STREAMS = ("rollout", "expert", "opponents", "initial")

    def __init__(
        self,
        env: MarkovGame,
        expert: Sequence[Transition],
        cfg: MamqlConfig | None = None,
        expert_policy=None,
        expert_return: float | None = None
    ) -> None:
        if not expert:
            raise ArgumentError("expert dataset is empty.")
        if len(expert[0].joint_action) != env.spec.n_agents:
            raise ArgumentError("dataset and environment disagree on the number of agents.")
        self.env = env
        self.expert = list(expert)
        self.cfg = (cfg or MamqlConfig()).resolve(env)
        self.expert_policy = expert_policy
        self.expert_return = expert_return
        self.encoder = StateEncoder(env, self.cfg.backend == "tabular")

        streams = np.random.SeedSequence(self.cfg.seed).spawn(len(self.RNG_STREAMS) + 2)
        self.rngs = {
            name: np.random.default_rng(seq)
            for name, seq in zip(self.RNG_STREAMS, streams)
        }
        self.buffer = ReplayBuffer(
            self.cfg.buffer_capacity,
            seed=int(streams[-1].generate_state(1)[0])
        )
        self.episode = 0
        self.env_steps = 0
        self.records: list[RunRecord] = []
        self.losses: list[tuple[int, int, float, float]] = []
        self.started = time.perf_counter()
        model_seeds = streams[-2].generate_state(2 * env.spec.n_agents)
        self.build_models([int(seed) for seed in model_seeds])

    def build_models(self, seeds: list[int]) -> None:
        env, cfg = self.env, self.cfg
        n = env.spec.n_agents
        self.critics = [
            MarginalCritic.build(env, self.encoder, i, cfg, seeds[2 * i])
            for i in range(n)
        ]
        self.reward_models = [
            RewardModel.build(
                env, self.encoder, i, cfg.hidden_sizes, seeds[2 * i + 1],
                joint=self.joint_rewards
            )
            for i in range(n)
        ]
        self.critic_opts = [Adam(c.net.parameters, lr=cfg.alpha) for c in self.critics]
        self.reward_opts = [Adam(r.net.parameters, lr=cfg.alpha) for r in self.reward_models]

    def policy(self):
        return CriticPolicy(self.critics)

    def rollout_episode(self) -> list[Transition]:
        trajectory = rollout(self.policy(), self.env, self.rngs["rollout"], self.episode)
        self.buffer.extend(trajectory)
        self.env_steps += len(trajectory)
        return trajectory

    def expert_batch(self) -> list[Transition]:
        size = min(self.cfg.batch_size, len(self.expert))
        indices = self.rngs["expert"].choice(len(self.expert), size=size, replace=False)
        return [self.expert[int(index)] for index in indices]

    def initial_states(self) -> list | None:
        if self.cfg.loss_mode != "offline":
            return None
        return [self.env.reset(self.rngs["initial"]) for _ in range(self.cfg.batch_size)]

    def update(self) -> bool:
        if len(self.buffer) < self.cfg.batch_size:
            logger.debug(
                "episode %d: buffer holds %d of %d transitions, update skipped",
                self.episode, len(self.buffer), self.cfg.batch_size
            )
            return False
        snapshot = self.policy().frozen()
        for i in range(self.env.spec.n_agents):
            self.update_agent(i, self.expert_batch(), self.buffer.sample(self.cfg.batch_size),
                              snapshot)
        return True

    def update_agent(self, i: int, expert_batch, rollout_batch, snapshot) -> None:
        critic = self.critics[i]
        loss, grads = critic_loss(
            critic, expert_batch, rollout_batch, self.cfg, self.initial_states()
        )
        self.apply(self.critic_opts[i], grads, loss, i, "critic")
        critic.update_target()
        r_loss, r_grads = reward_loss(
            self.reward_models[i], critic, snapshot, rollout_batch, self.cfg,
            self.rngs["opponents"]
        )
        self.apply(self.reward_opts[i], r_grads, r_loss, i, "reward")
        self.losses.append((self.episode, i, loss, r_loss))

    def apply(self, optimizer: Adam, grads: list[np.ndarray], loss: float,
              agent: int, part: str) -> None:
        try:
            if not np.isfinite(loss):
                raise NumericError(f"non-finite {part} loss")
            optimizer.step(grads)
        except NumericError as error:
            logger.error("%s update of agent %d aborted at episode %d: %s",
                         part, agent, self.episode, error)
            raise NumericError(
                f"{part} update aborted", episode=self.episode, agent=agent
            ) from error

    def train_step(self) -> None:
        self.rollout_episode()
        for _ in range(self.cfg.updates_per_episode):
            self.update()

    def evaluate(self) -> RunRecord:
        cfg = self.cfg
        policy = self.policy()
        seed = int(np.random.SeedSequence([cfg.seed, self.episode]).generate_state(1)[0])
        summary = average_return(policy, self.env, cfg.eval_episodes, seed)
        mse = None
        if self.reward_models:
            mse = reward_recovery_mse(
                self.reward_models, self.env, policy, cfg.reward_samples, seed
            )
        error = behavioral_error(policy, self.expert, self.expert_policy)
        return RunRecord(
            episode=self.episode,
            returns=summary.means,
            return_stderr=summary.stderr,
            total_return=summary.total_mean,
            nll=error.nll,
            reward_mse=mse,
            tv=error.tv,
            env_steps=self.env_steps,
            seed=cfg.seed,
            wall_clock=time.perf_counter() - self.started,
        )

    def converged(self) -> bool:
        if self.expert_return is None:
            return False
        return episodes_to_convergence(
            self.records, self.expert_return,
            self.cfg.convergence_window, self.cfg.convergence_fraction
        ) is not None

    def run(self, on_record: Callable[["Trainer", RunRecord], None] | None = None) -> list[RunRecord]:
        """Train until ``max_episodes``; evaluates every ``eval_interval``
        episodes and once more at the end."""
        cfg = self.cfg
        while self.episode < cfg.max_episodes:
            self.train_step()
            self.episode += 1
            if self.episode % cfg.eval_interval and self.episode != cfg.max_episodes:
                continue
            record = self.evaluate()
            self.records.append(record)
            logger.info(
                "%s episode %d: return %.3f, nll %s",
                self.algorithm, record.episode, record.total_return,
                ", ".join(f"{value:.3f}" for value in record.nll)
            )
            if on_record is not None:
                on_record(self, record)
            if cfg.stop_on_convergence and self.converged():
                logger.info("%s converged at episode %d", self.algorithm, self.episode)
                break
        return self.records

    def result(self) -> TrainingResult:
        return TrainingResult(
            critics=self.critics,
            reward_models=self.reward_models,
            records=self.records,
            policy=self.policy(),
        )

    def models_state(self) -> dict:
        return {
            "critics": [critic.state_dict() for critic in self.critics],
            "critic_opts": [opt.state_dict() for opt in self.critic_opts],
            "rewards": [reward.state_dict() for reward in self.reward_models],
            "reward_opts": [opt.state_dict() for opt in self.reward_opts],
        }

    def load_models_state(self, state: dict) -> None:
        for critic, saved in zip(self.critics, state["critics"]):
            critic.load_state_dict(saved)
        for opt, saved in zip(self.critic_opts, state["critic_opts"]):
            opt.load_state_dict(saved)
        for reward, saved in zip(self.reward_models, state["rewards"]):
            reward.load_state_dict(saved)
        for opt, saved in zip(self.reward_opts, state["reward_opts"]):
            opt.load_state_dict(saved)

    def state_dict(self) -> dict:
        """Everything needed to continue the run bit-exactly."""
        return {
            "algorithm": self.algorithm,
            "episode": self.episode,
            "env_steps": self.env_steps,
            "models": self.models_state(),
            "buffer": self.buffer.state_dict(self.env),
            "rngs": {name: rng.bit_generator.state for name, rng in self.rngs.items()},
            "records": [asdict(record) for record in self.records],
            "losses": [list(entry) for entry in self.losses],
        }

    def load_state_dict(self, state: dict) -> None:
        if state["algorithm"] != self.algorithm:
            raise ConfigError(
                f"checkpoint belongs to {state['algorithm']}, not {self.algorithm}."
            )
        self.episode = int(state["episode"])
        self.env_steps = int(state["env_steps"])
        self.load_models_state(state["models"])
        self.buffer.load_state_dict(state["buffer"], self.env)
        for name, rng in self.rngs.items():
            rng.bit_generator.state = state["rngs"][name]
        self.records = [RunRecord(**record) for record in state["records"]]
        self.losses = [tuple(entry) for entry in state["losses"]]


class MamqlTrainer(Trainer):
    algorithm = "mamql"


def train(
    env: MarkovGame,
    expert: Sequence[Transition],
    cfg: MamqlConfig | None = None,
    **kwargs
) -> TrainingResult:
    trainer = MamqlTrainer(env, expert, cfg, **kwargs)
    trainer.run()
    return trainer.result()
