"""
Small repeated matrix games: per-state payoff tensors plus a deterministic
or stochastic transition table. Exactly solvable, used as the oracle testbed.
"""
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from games.exceptions import ArgumentError
from games.markov_game import (
    GameSpec,
    MarkovGame,
    TabularModel,
    joint_index
)


@dataclass(frozen=True)
class MatrixState:
    node: int
    step: int = 0


@dataclass(frozen=True, eq=False)
class MatrixGameConfig:
    """Payoffs have shape (n, S, |A|ⁿ) (or (n, S, |A|, ..., |A|)).

    ``transitions`` is either a (S, |A|ⁿ) table of successor nodes or a
    (S, |A|ⁿ, S) table of probabilities; ``None`` keeps the current node.
    ``horizon=None`` makes the game continuing; rollouts are then truncated
    after ``episode_length`` steps.
    """

    payoffs: np.ndarray
    action_count: int = 2
    transitions: np.ndarray | None = None
    gamma: float = 0.9
    horizon: int | None = None
    episode_length: int = 10
    initial: np.ndarray | None = None
    n_agents: int = field(init=False)

    @staticmethod
    def validate_config(
        payoffs: np.ndarray,
        action_count: int,
        transitions: np.ndarray | None,
        initial: np.ndarray,
        episode_length: int,
        error_to_raise: type(Exception)
    ) -> None:
        if payoffs.ndim != 3:
            raise error_to_raise(
                "payoffs must have shape (n_agents, states, |A|^n)."
            )
        n_agents, states, joint = payoffs.shape
        if action_count < 1 or joint != action_count ** n_agents:
            raise error_to_raise(
                f"payoff tensor has {joint} joint actions per state, "
                f"expected {action_count}^{n_agents}."
            )
        if not np.all(np.isfinite(payoffs)):
            raise error_to_raise("payoffs must be finite.")
        if transitions is not None:
            if transitions.shape == (states, joint):
                if np.any(transitions < 0) or np.any(transitions >= states):
                    raise error_to_raise("transition targets out of range.")
            elif transitions.shape == (states, joint, states):
                if np.any(transitions < 0) or np.any(
                    np.abs(transitions.sum(axis=-1) - 1.0) > 1e-9
                ):
                    raise error_to_raise(
                        "transition probabilities must be distributions."
                    )
            else:
                raise error_to_raise(
                    "transitions must have shape (S, |A|^n) or (S, |A|^n, S)."
                )
        if initial.shape != (states,) or np.any(initial < 0) or abs(
            initial.sum() - 1.0
        ) > 1e-9:
            raise error_to_raise("initial must be a distribution over states.")
        if episode_length < 1:
            raise error_to_raise("episode_length must be positive.")

    def __post_init__(self) -> None:
        payoffs = np.asarray(self.payoffs, dtype=np.float64)
        if payoffs.ndim > 3:
            payoffs = payoffs.reshape(payoffs.shape[0], payoffs.shape[1], -1)
        transitions = self.transitions
        if transitions is not None:
            transitions = np.asarray(transitions)
            if transitions.ndim == 2:
                transitions = transitions.astype(np.int64)
            else:
                transitions = transitions.astype(np.float64)
        states = payoffs.shape[1] if payoffs.ndim == 3 else 0
        initial = (
            np.eye(max(states, 1))[0][:states]
            if self.initial is None
            else np.asarray(self.initial, dtype=np.float64)
        )
        MatrixGameConfig.validate_config(
            payoffs,
            self.action_count,
            transitions,
            initial,
            self.episode_length,
            ArgumentError
        )
        object.__setattr__(self, "payoffs", payoffs)
        object.__setattr__(self, "transitions", transitions)
        object.__setattr__(self, "initial", initial)
        object.__setattr__(self, "n_agents", payoffs.shape[0])

    @property
    def state_count(self) -> int:
        return self.payoffs.shape[1]

    @property
    def stochastic(self) -> bool:
        return self.transitions is not None and self.transitions.ndim == 3

    @classmethod
    def from_dict(cls, data: dict) -> "MatrixGameConfig":
        return cls(
            payoffs=np.asarray(data["payoffs"], dtype=np.float64),
            action_count=data.get("action_count", 2),
            transitions=data.get("transitions"),
            gamma=data.get("gamma", 0.9),
            horizon=data.get("horizon"),
            episode_length=data.get("episode_length", 10),
            initial=data.get("initial"),
        )

    def to_dict(self) -> dict:
        return {
            "type": "matrix",
            "payoffs": self.payoffs.tolist(),
            "action_count": self.action_count,
            "transitions": (
                None if self.transitions is None else self.transitions.tolist()
            ),
            "gamma": self.gamma,
            "horizon": self.horizon,
            "episode_length": self.episode_length,
            "initial": self.initial.tolist(),
        }


def matrix_step(
    state: MatrixState,
    a: Sequence[int],
    cfg: MatrixGameConfig,
    rng: np.random.Generator | None = None
) -> tuple[MatrixState, np.ndarray, bool]:
    if len(a) != cfg.n_agents or any(
        not 0 <= int(action) < cfg.action_count for action in a
    ):
        raise ArgumentError(f"invalid joint action {tuple(a)}.")
    if cfg.horizon is not None and state.step >= cfg.horizon:
        raise ArgumentError("episode already reached its horizon.")
    j = joint_index(a, cfg.action_count)
    rewards = cfg.payoffs[:, state.node, j].copy()
    if cfg.transitions is None:
        node = state.node
    elif cfg.stochastic:
        if rng is None:
            raise ArgumentError("stochastic transitions need an rng.")
        node = int(rng.choice(cfg.state_count, p=cfg.transitions[state.node, j]))
    else:
        node = int(cfg.transitions[state.node, j])
    if cfg.horizon is None:
        return MatrixState(node), rewards, False
    step = state.step + 1
    return MatrixState(node, step), rewards, step == cfg.horizon


class MatrixGame(MarkovGame):
    def __init__(self, cfg: MatrixGameConfig) -> None:
        self.cfg = cfg
        buckets = 1 if cfg.horizon is None else cfg.horizon + 1
        self.spec = GameSpec(
            n_agents=cfg.n_agents,
            action_count=cfg.action_count,
            gamma=cfg.gamma,
            horizon=cfg.horizon,
            state_space_size=cfg.state_count * buckets,
        )
        self._model = None

    @property
    def max_episode_steps(self) -> int:
        if self.cfg.horizon is None:
            return self.cfg.episode_length
        return self.cfg.horizon

    @property
    def is_tabular(self) -> bool:
        return True

    @property
    def feature_size(self) -> int:
        return self.cfg.state_count

    def reset(self, rng: np.random.Generator) -> MatrixState:
        return MatrixState(int(rng.choice(self.cfg.state_count, p=self.cfg.initial)))

    def step(
        self,
        state: MatrixState,
        joint_action: Sequence[int],
        rng: np.random.Generator | None = None
    ) -> tuple[MatrixState, np.ndarray, bool]:
        return matrix_step(state, joint_action, self.cfg, rng)

    def features(self, state: MatrixState, agent: int) -> np.ndarray:
        encoding = np.zeros(self.cfg.state_count)
        encoding[state.node] = 1.0
        return encoding

    def state_id(self, state: MatrixState) -> int:
        return state.step * self.cfg.state_count + state.node

    def state_from_id(self, s: int) -> MatrixState:
        self.spec.validate_state_id(s)
        step, node = divmod(s, self.cfg.state_count)
        return MatrixState(node, step)

    def state_to_json(self, state: MatrixState) -> Any:
        return self.state_id(state)

    def state_from_json(self, payload: Any) -> MatrixState:
        return self.state_from_id(int(payload))

    def config_dict(self) -> dict:
        return self.cfg.to_dict()

    def tabular_model(self) -> TabularModel:
        if self._model is None:
            self._model = self._build_model()
        return self._model

    def _build_model(self) -> TabularModel:
        cfg = self.cfg
        nodes = cfg.state_count
        joint = self.spec.joint_action_count
        buckets = 1 if cfg.horizon is None else cfg.horizon + 1
        total = nodes * buckets

        if cfg.transitions is None:
            node_next = np.repeat(np.arange(nodes)[:, None], joint, axis=1)[..., None]
            node_probs = np.ones((nodes, joint, 1))
        elif cfg.stochastic:
            node_next = np.broadcast_to(
                np.arange(nodes), (nodes, joint, nodes)
            ).copy()
            node_probs = cfg.transitions
        else:
            node_next = cfg.transitions[..., None]
            node_probs = np.ones((nodes, joint, 1))

        rewards = np.zeros((cfg.n_agents, total, joint))
        successors = np.zeros((total, joint, node_next.shape[-1]), dtype=np.int64)
        probs = np.zeros_like(successors, dtype=np.float64)
        dones = np.zeros((total, joint), dtype=bool)
        for step in range(buckets):
            block = slice(step * nodes, (step + 1) * nodes)
            if cfg.horizon is not None and step == cfg.horizon:
                # terminal bucket: absorbing, never bootstrapped
                successors[block] = np.arange(step * nodes, (step + 1) * nodes)[
                    :, None, None
                ]
                probs[block, :, 0] = 1.0
                dones[block] = True
                continue
            rewards[:, block] = cfg.payoffs
            offset = 0 if cfg.horizon is None else (step + 1) * nodes
            successors[block] = node_next + offset
            probs[block] = node_probs
            if cfg.horizon is not None:
                dones[block] = step + 1 == cfg.horizon
        initial = np.zeros(total)
        initial[:nodes] = cfg.initial
        return TabularModel(
            spec=self.spec,
            rewards=rewards,
            successors=successors,
            probs=probs,
            dones=dones,
            initial=initial,
        )


def random_matrix_game(
    rng: np.random.Generator,
    n_states: int = 2,
    n_agents: int = 2,
    action_count: int = 2,
    gamma: float = 0.9,
    stochastic: bool = True
) -> MatrixGameConfig:
    joint = action_count ** n_agents
    payoffs = rng.uniform(-1.0, 1.0, size=(n_agents, n_states, joint))
    if stochastic:
        transitions = rng.dirichlet(np.ones(n_states), size=(n_states, joint))
    else:
        transitions = rng.integers(0, n_states, size=(n_states, joint))
    return MatrixGameConfig(
        payoffs=payoffs,
        action_count=action_count,
        transitions=transitions,
        gamma=gamma,
    )
