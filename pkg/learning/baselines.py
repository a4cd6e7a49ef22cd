"""
Comparison methods: per-agent behavioural cloning, independent inverse
soft-Q learning, and inverse soft-Q learning with joint-action critics.
They share the replay buffer, optimizer, checkpoint and metric paths of
:class:`learning.mamql.Trainer`.
"""
import logging
from typing import Any, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from games.exceptions import ArgumentError, ConfigError
from games.markov_game import (
    MarkovGame,
    PolicyTable,
    Transition,
    joint_from_index,
    joint_index
)
from games.solver import Marginalizer, boltzmann, soft_value_grad, soft_values
from learning.approx import Adam, Mlp, TabularParams, soft_update
from learning.mamql import (
    MamqlConfig,
    MamqlTrainer,
    RewardModel,
    StateEncoder,
    Trainer,
    TrainingResult,
    phi,
    phi_grad,
    regress_rewards
)

logger = logging.getLogger(__name__)

JOINT_POLICY_SWEEPS = 3


class BcPolicy:
    """Per-agent softmax heads over own actions."""

    def __init__(self, nets: Sequence[Mlp | TabularParams], encoder: StateEncoder) -> None:
        self.nets = list(nets)
        self.encoder = encoder

    @property
    def n_agents(self) -> int:
        return len(self.nets)

    def action_probs(self, agent: int, states: Sequence) -> np.ndarray:
        logits = self.nets[agent].forward(self.encoder.encode(states, agent))
        return softmax(logits, axis=-1)


def bc_loss(
    net: Mlp | TabularParams,
    encoder: StateEncoder,
    agent: int,
    batch: Sequence[Transition]
) -> tuple[float, list[np.ndarray]]:
    """Cross-entropy of the expert actions of ``agent``."""
    if not batch:
        raise ArgumentError("expert batch is empty.")
    actions = np.array([t.joint_action[agent] for t in batch], dtype=np.int64)
    rows = np.arange(len(batch))
    logits = net.forward(encoder.encode([t.state for t in batch], agent))
    log_probs = log_softmax(logits, axis=-1)
    loss = float(-np.mean(log_probs[rows, actions]))
    grad = np.exp(log_probs)
    grad[rows, actions] -= 1.0
    return loss, net.backward(grad / len(batch))


class BcTrainer(Trainer):
    """Offline: one cross-entropy step per agent per iteration, no rollouts.

    ``max_episodes`` counts gradient steps; a batch size at least as large as
    the dataset gives full-batch training.
    """

    algorithm = "bc"

    def build_models(self, seeds: list[int]) -> None:
        env, cfg = self.env, self.cfg
        action_count = env.spec.action_count
        self.nets = []
        for i in range(env.spec.n_agents):
            if self.encoder.tabular:
                self.nets.append(TabularParams(env.spec.state_space_size, action_count))
            else:
                self.nets.append(
                    Mlp([env.feature_size, *cfg.hidden_sizes, action_count], seed=seeds[2 * i])
                )
        self.opts = [Adam(net.parameters, lr=cfg.alpha) for net in self.nets]
        self.critics = []
        self.reward_models = []

    def policy(self) -> BcPolicy:
        return BcPolicy(self.nets, self.encoder)

    def train_step(self) -> None:
        for i, (net, opt) in enumerate(zip(self.nets, self.opts)):
            if self.cfg.batch_size >= len(self.expert):
                batch = self.expert
            else:
                batch = self.expert_batch()
            loss, grads = bc_loss(net, self.encoder, i, batch)
            self.apply(opt, grads, loss, i, "policy")
            self.losses.append((self.episode, i, loss, None))

    def models_state(self) -> dict:
        return {
            "nets": [net.state_dict() for net in self.nets],
            "opts": [opt.state_dict() for opt in self.opts],
        }

    def load_models_state(self, state: dict) -> None:
        for net, saved in zip(self.nets, state["nets"]):
            net.load_state_dict(saved)
        for opt, saved in zip(self.opts, state["opts"]):
            opt.load_state_dict(saved)

    def result(self) -> TrainingResult:
        return TrainingResult([], [], self.records, self.policy())


class IqlIndependentTrainer(MamqlTrainer):
    """Single-agent inverse soft-Q per agent: reward models ignore the
    other agents' actions; rollouts are still joint."""

    algorithm = "iql-indep"
    joint_rewards = False


class JointCritic:
    """Qᵢ(s, a) over full joint actions.

    Tables have shape (S, |A|ⁿ); MLPs read state features ⊕ one-hot joint
    action and output a scalar. Joint actions are indexed lexicographically.
    """

    def __init__(
        self,
        net: Mlp | TabularParams,
        encoder: StateEncoder,
        agent: int,
        n_agents: int,
        action_count: int,
        lam: float = 1.0,
        tau: float = 0.0
    ) -> None:
        self.net = net
        self.encoder = encoder
        self.agent = agent
        self.n_agents = n_agents
        self.action_count = action_count
        self.lam = lam
        self.tau = tau
        self.target = net.copy() if tau > 0.0 else None
        joint_count = action_count ** n_agents
        self.one_hots = np.zeros((joint_count, n_agents * action_count))
        offsets = np.arange(n_agents) * action_count
        for k in range(joint_count):
            self.one_hots[k, offsets + np.array(joint_from_index(k, n_agents, action_count))] = 1.0

    @classmethod
    def build(
        cls,
        env: MarkovGame,
        encoder: StateEncoder,
        agent: int,
        cfg: MamqlConfig,
        seed: int = 0
    ) -> "JointCritic":
        n, action_count = env.spec.n_agents, env.spec.action_count
        if encoder.tabular:
            net = TabularParams(env.spec.state_space_size, env.spec.joint_action_count)
        else:
            net = Mlp([env.feature_size + n * action_count, *cfg.hidden_sizes, 1], seed=seed)
        return cls(net, encoder, agent, n, action_count, cfg.lam, cfg.tau or 0.0)

    @property
    def joint_count(self) -> int:
        return len(self.one_hots)

    def _forward(self, net, states: Sequence) -> np.ndarray:
        if self.encoder.tabular:
            return net.forward(self.encoder.ids(states))
        features = self.encoder.features(states, self.agent)
        inputs = np.concatenate([
            np.repeat(features, self.joint_count, axis=0),
            np.tile(self.one_hots, (len(states), 1)),
        ], axis=1)
        return net.forward(inputs).reshape(len(states), self.joint_count)

    def q_all(self, states: Sequence, target: bool = False) -> np.ndarray:
        net = self.target if target and self.target is not None else self.net
        return self._forward(net, states)

    def backward(self, grad: np.ndarray) -> list[np.ndarray]:
        """Gradients for the last :meth:`q_all` of the online network."""
        if self.encoder.tabular:
            return self.net.backward(grad)
        return self.net.backward(grad.reshape(-1, 1))

    def update_target(self) -> None:
        if self.target is not None:
            soft_update(self.target, self.net, self.tau)

    def snapshot(self) -> "JointCritic":
        return JointCritic(
            self.net.copy(), self.encoder, self.agent, self.n_agents,
            self.action_count, self.lam
        )

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


class JointCriticPolicy:
    """Boltzmann over E_{ã₋ᵢ}[Qᵢ(s, aᵢ, ã₋ᵢ)].

    The opponents' policies come from a few Jacobi sweeps started at uniform.
    """

    def __init__(self, critics: Sequence[JointCritic], sweeps: int = JOINT_POLICY_SWEEPS) -> None:
        self.critics = list(critics)
        self.sweeps = sweeps

    @property
    def n_agents(self) -> int:
        return len(self.critics)

    def probabilities(self, states: Sequence) -> np.ndarray:
        """Action distributions of every agent, shape (n, B, |A|)."""
        q = [critic.q_all(states) for critic in self.critics]
        action_count = self.critics[0].action_count
        probs = np.full((self.n_agents, len(states), action_count), 1.0 / action_count)
        for _ in range(self.sweeps):
            table = PolicyTable(probs)
            probs = np.stack([
                boltzmann(Marginalizer(table, i)(q[i]), critic.lam)
                for i, critic in enumerate(self.critics)
            ])
        return probs

    def action_probs(self, agent: int, states: Sequence) -> np.ndarray:
        return self.probabilities(states)[agent]

    def frozen(self) -> "JointCriticPolicy":
        return JointCriticPolicy([critic.snapshot() for critic in self.critics], self.sweeps)


def _marginalizer(snapshot: JointCriticPolicy, states: Sequence, agent: int) -> Marginalizer:
    return Marginalizer(PolicyTable(snapshot.probabilities(states)), agent)


def joint_values(
    critic: JointCritic,
    snapshot: JointCriticPolicy,
    states: Sequence,
    target: bool = False
) -> np.ndarray:
    """V(s) of the critic marginalised under the snapshot's opponents."""
    marginal = _marginalizer(snapshot, states, critic.agent)
    return soft_values(marginal(critic.q_all(states, target)), critic.lam)


def joint_reward_targets(
    critic: JointCritic,
    snapshot: JointCriticPolicy,
    batch: Sequence[Transition],
    gamma: float
) -> np.ndarray:
    """Q(s, a) − γ·V(s′), V(s′) = 0 after termination."""
    alive = np.array([0.0 if t.done else 1.0 for t in batch])
    next_values = joint_values(
        critic, snapshot, [t.next_state for t in batch], target=critic.target is not None
    )
    ids = [joint_index(t.joint_action, critic.action_count) for t in batch]
    q = critic.q_all([t.state for t in batch])
    return q[np.arange(len(batch)), ids] - gamma * alive * next_values


def joint_critic_loss(
    critic: JointCritic,
    snapshot: JointCriticPolicy,
    expert_batch: Sequence[Transition],
    rollout_batch: Sequence[Transition],
    cfg: MamqlConfig,
    initial_states: Sequence | None = None
) -> tuple[float, list[np.ndarray]]:
    """The inverse soft-Q loss with V taken from the marginalised joint critic
    and the expert term read at the full expert joint action."""
    if not expert_batch:
        raise ArgumentError("expert batch is empty.")
    online = cfg.loss_mode == "online"
    if online and not rollout_batch:
        raise ArgumentError("rollout batch is empty.")
    if not online and not initial_states:
        raise ArgumentError("offline mode needs initial-state samples.")
    if cfg.gamma is None:
        raise ArgumentError("gamma is unresolved; call MamqlConfig.resolve(env).")
    gamma = cfg.gamma
    i = critic.agent

    expert_ids = np.array(
        [joint_index(t.joint_action, critic.action_count) for t in expert_batch], dtype=np.int64
    )
    expert_alive = np.array([0.0 if t.done else 1.0 for t in expert_batch])
    expert_next = [t.next_state for t in expert_batch]
    if online:
        head = [t.state for t in rollout_batch] + [t.next_state for t in rollout_batch]
    else:
        head = list(initial_states)
    detached = critic.target is not None
    states = head + [t.state for t in expert_batch]
    if detached:
        next_values = joint_values(critic, snapshot, expert_next, target=True)
    else:
        states += expert_next

    marginal = _marginalizer(snapshot, states, i)
    q = critic.q_all(states)
    q_bar = marginal(q)
    values = soft_values(q_bar, critic.lam)
    dv = soft_value_grad(q_bar, critic.lam)
    value_coef = np.zeros(len(states))

    if online:
        b = len(rollout_batch)
        alive = np.array([0.0 if t.done else 1.0 for t in rollout_batch])
        loss = float(np.mean(values[:b] - gamma * alive * values[b:2 * b]))
        value_coef[:b] += 1.0 / b
        value_coef[b:2 * b] -= gamma * alive / b
        start = 2 * b
    else:
        b = len(initial_states)
        loss = float((1.0 - gamma) * np.mean(values[:b]))
        value_coef[:b] += (1.0 - gamma) / b
        start = b

    e = len(expert_batch)
    rows = np.arange(start, start + e)
    if not detached:
        next_values = values[start + e:]
    r_bar = q[rows, expert_ids] - gamma * expert_alive * next_values
    loss -= float(np.mean(phi(r_bar, cfg.phi)))
    weight = phi_grad(r_bar, cfg.phi) / e
    if not detached:
        value_coef[start + e:] += gamma * expert_alive * weight

    grad_bar = value_coef[:, None] * dv
    grad = np.zeros_like(q)
    # every (aᵢ, opponent tuple) maps to a distinct joint index
    grad[:, marginal.index] += grad_bar[:, :, None] * marginal.weights[:, None, :]
    grad[rows, expert_ids] -= weight
    return loss, critic.backward(grad)


class IqlMaTrainer(Trainer):
    """Inverse soft-Q with joint-action critics; rewards are recovered as
    Q(s, a) − γV(s′) at the sampled joint action."""

    algorithm = "iql-ma"

    def build_models(self, seeds: list[int]) -> None:
        env, cfg = self.env, self.cfg
        n = env.spec.n_agents
        self.critics = [
            JointCritic.build(env, self.encoder, i, cfg, seeds[2 * i]) for i in range(n)
        ]
        self.reward_models = [
            RewardModel.build(env, self.encoder, i, cfg.hidden_sizes, seeds[2 * i + 1])
            for i in range(n)
        ]
        self.critic_opts = [Adam(c.net.parameters, lr=cfg.alpha) for c in self.critics]
        self.reward_opts = [Adam(r.net.parameters, lr=cfg.alpha) for r in self.reward_models]

    def policy(self) -> JointCriticPolicy:
        return JointCriticPolicy(self.critics)

    def update_agent(self, i: int, expert_batch, rollout_batch, snapshot) -> None:
        critic = self.critics[i]
        loss, grads = joint_critic_loss(
            critic, snapshot, expert_batch, rollout_batch, self.cfg, self.initial_states()
        )
        self.apply(self.critic_opts[i], grads, loss, i, "critic")
        critic.update_target()
        reward = self.reward_models[i]
        targets = joint_reward_targets(critic, snapshot, rollout_batch, self.cfg.gamma)
        joints = np.array([t.joint_action for t in rollout_batch], dtype=np.int64)[:, None, :]
        r_loss, r_grads = regress_rewards(
            reward,
            self.encoder.features([t.state for t in rollout_batch], i),
            joints,
            np.ones((len(rollout_batch), 1)),
            targets,
            self.cfg.beta,
        )
        self.apply(self.reward_opts[i], r_grads, r_loss, i, "reward")
        self.losses.append((self.episode, i, loss, r_loss))


TRAINERS: dict[str, type[Trainer]] = {
    "mamql": MamqlTrainer,
    "bc": BcTrainer,
    "iql-indep": IqlIndependentTrainer,
    "iql-ma": IqlMaTrainer,
}


def build_trainer(algorithm: str, env: MarkovGame, expert: Sequence[Transition],
                  cfg: MamqlConfig | None = None, **kwargs: Any) -> Trainer:
    try:
        trainer_class = TRAINERS[algorithm]
    except KeyError:
        raise ConfigError(
            f"unknown algorithm {algorithm!r}; choose from {', '.join(TRAINERS)}."
        ) from None
    logger.info("building %s trainer (seed %s)", algorithm, getattr(cfg, "seed", 0))
    return trainer_class(env, expert, cfg, **kwargs)


def bc_train(env: MarkovGame, expert: Sequence[Transition],
             cfg: MamqlConfig | None = None) -> BcPolicy:
    trainer = BcTrainer(env, expert, cfg)
    trainer.run()
    return trainer.policy()


def iql_independent_train(env: MarkovGame, expert: Sequence[Transition],
                          cfg: MamqlConfig | None = None, **kwargs: Any) -> TrainingResult:
    trainer = IqlIndependentTrainer(env, expert, cfg, **kwargs)
    trainer.run()
    return trainer.result()


def iql_ma_train(env: MarkovGame, expert: Sequence[Transition],
                 cfg: MamqlConfig | None = None, **kwargs: Any) -> TrainingResult:
    trainer = IqlMaTrainer(env, expert, cfg, **kwargs)
    trainer.run()
    return trainer.result()
