"""
Core abstractions shared by every environment and learner: the game
signature, joint actions, transitions, factorised policy tables and the
environment interface.

Joint actions over Aⁿ are flattened in lexicographic order with agent 0 as
the most significant digit; opponent tuples keep the remaining agents in
index order.
"""
import abc
import hashlib
import itertools
import json
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from django.conf import settings

from games.exceptions import (
    ArgumentError,
    EnumerationTooLargeError,
    TabularUnsupportedError
)

JointAction = tuple[int, ...]

ROW_TOLERANCE = 1e-9


def enumeration_cap() -> int:
    return getattr(settings, "MAMQL_ENUMERATION_CAP", 4096)


@dataclass(frozen=True)
class GameSpec:
    """Signature ⟨n, S, A, γ⟩ of a Markov game.

    ``horizon`` is ``None`` for continuing games and ``state_space_size`` is
    ``None`` when the states cannot be enumerated.
    """

    n_agents: int
    action_count: int
    gamma: float
    horizon: int | None = None
    state_space_size: int | None = None

    @staticmethod
    def validate_spec(
        n_agents: int,
        action_count: int,
        gamma: float,
        horizon: int | None,
        state_space_size: int | None,
        error_to_raise: type(Exception)
    ) -> None:
        if n_agents < 1:
            raise error_to_raise("n_agents must be at least 1.")
        if action_count < 1:
            raise error_to_raise("action_count must be at least 1.")
        if not 0.0 <= gamma < 1.0:
            raise error_to_raise("gamma must lie in [0, 1).")
        if horizon is not None and horizon < 1:
            raise error_to_raise("horizon must be positive or unbounded.")
        if state_space_size is not None and state_space_size < 1:
            raise error_to_raise("state_space_size must be positive.")

    def __post_init__(self) -> None:
        GameSpec.validate_spec(
            self.n_agents,
            self.action_count,
            self.gamma,
            self.horizon,
            self.state_space_size,
            ArgumentError
        )

    @property
    def enumerable(self) -> bool:
        return self.state_space_size is not None

    @property
    def joint_action_count(self) -> int:
        return self.action_count ** self.n_agents

    def validate_agent(self, i: int) -> None:
        if not 0 <= i < self.n_agents:
            raise ArgumentError(
                f"agent index {i} out of range [0, {self.n_agents})."
            )

    def validate_state_id(self, s: int) -> None:
        if self.state_space_size is not None and not (
            0 <= s < self.state_space_size
        ):
            raise ArgumentError(
                f"state id {s} out of range [0, {self.state_space_size})."
            )

    def validate_joint_action(self, a: Sequence[int]) -> JointAction:
        joint = tuple(int(action) for action in a)
        if len(joint) != self.n_agents:
            raise ArgumentError(
                f"joint action {joint} must have {self.n_agents} entries."
            )
        for action in joint:
            if not 0 <= action < self.action_count:
                raise ArgumentError(
                    f"action id {action} out of range "
                    f"[0, {self.action_count})."
                )
        return joint


def split_joint(a: Sequence[int], i: int) -> tuple[int, JointAction]:
    """Split a joint action into (aᵢ, a₋ᵢ)."""
    joint = tuple(a)
    if not 0 <= i < len(joint):
        raise ArgumentError(
            f"agent index {i} out of range for joint action {joint}."
        )
    return joint[i], joint[:i] + joint[i + 1:]


def recombine_joint(a_i: int, a_minus_i: Sequence[int], i: int) -> JointAction:
    opponents = tuple(a_minus_i)
    if not 0 <= i <= len(opponents):
        raise ArgumentError(
            f"agent index {i} out of range for {len(opponents)} opponents."
        )
    return opponents[:i] + (a_i,) + opponents[i:]


def enumerate_opponent_actions(
    n_agents: int,
    action_count: int,
    i: int,
    cap: int | None = None
) -> list[JointAction]:
    """All |A|^(n-1) opponent tuples of agent ``i`` in lexicographic order."""
    if not 0 <= i < n_agents:
        raise ArgumentError(f"agent index {i} out of range [0, {n_agents}).")
    cap = enumeration_cap() if cap is None else cap
    count = action_count ** (n_agents - 1)
    if count > cap:
        raise EnumerationTooLargeError(
            f"{count} opponent tuples exceed the enumeration cap of {cap}."
        )
    return list(itertools.product(range(action_count), repeat=n_agents - 1))


def joint_index(a: Sequence[int], action_count: int) -> int:
    index = 0
    for action in a:
        index = index * action_count + int(action)
    return index


def joint_from_index(index: int, n_agents: int, action_count: int) -> JointAction:
    digits = []
    for _ in range(n_agents):
        index, digit = divmod(index, action_count)
        digits.append(digit)
    return tuple(reversed(digits))


def joint_index_table(
    n_agents: int,
    action_count: int,
    i: int,
    opponent_tuples: Sequence[JointAction]
) -> np.ndarray:
    """Flat joint index of (aᵢ, t) for every own action and opponent tuple.

    Shape (|A|, len(opponent_tuples)).
    """
    table = np.empty((action_count, len(opponent_tuples)), dtype=np.int64)
    for a_i in range(action_count):
        for t, a_minus_i in enumerate(opponent_tuples):
            table[a_i, t] = joint_index(
                recombine_joint(a_i, a_minus_i, i), action_count
            )
    return table


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Per-agent, per-state action distributions, shape (n, S, |A|)."""

    probs: np.ndarray

    @staticmethod
    def validate_rows(probs: np.ndarray, error_to_raise: type(Exception)) -> None:
        if probs.ndim != 3:
            raise error_to_raise("policy table must have shape (n, S, |A|).")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0.0):
            raise error_to_raise("policy entries must be finite and >= 0.")
        if np.any(np.abs(probs.sum(axis=-1) - 1.0) > ROW_TOLERANCE):
            raise error_to_raise("every policy row must sum to 1.")

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        PolicyTable.validate_rows(probs, ArgumentError)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(
        cls,
        n_agents: int,
        state_count: int,
        action_count: int
    ) -> "PolicyTable":
        return cls(
            np.full((n_agents, state_count, action_count), 1.0 / action_count)
        )

    @property
    def n_agents(self) -> int:
        return self.probs.shape[0]

    @property
    def state_count(self) -> int:
        return self.probs.shape[1]

    @property
    def action_count(self) -> int:
        return self.probs.shape[2]

    def row(self, i: int, s: int) -> np.ndarray:
        return self.probs[i, s]

    def opponent_weights(
        self,
        i: int,
        opponent_tuples: Sequence[JointAction]
    ) -> np.ndarray:
        """∏_{j≠i} π_j(t_j | s) for every state and tuple, shape (S, T)."""
        tuples = np.asarray(opponent_tuples, dtype=np.int64).reshape(
            len(opponent_tuples), self.n_agents - 1
        )
        weights = np.ones((self.state_count, len(tuples)))
        opponents = [j for j in range(self.n_agents) if j != i]
        for position, j in enumerate(opponents):
            weights *= self.probs[j][:, tuples[:, position]]
        return weights


def opponent_prob(
    policy: PolicyTable,
    s: int,
    i: int,
    a_minus_i: Sequence[int]
) -> float:
    """∏_{j≠i} π_j(a_j | s)."""
    if not 0 <= i < policy.n_agents:
        raise ArgumentError(f"agent index {i} out of range.")
    if not 0 <= s < policy.state_count:
        raise ArgumentError(f"state id {s} out of range.")
    opponents = [j for j in range(policy.n_agents) if j != i]
    if len(a_minus_i) != len(opponents):
        raise ArgumentError(
            f"expected {len(opponents)} opponent actions, got {len(a_minus_i)}."
        )
    prob = 1.0
    for j, a_j in zip(opponents, a_minus_i):
        prob *= float(policy.probs[j, s, a_j])
    return prob


@dataclass(frozen=True)
class Transition:
    """One (s, a, s′) record with optional true per-agent rewards."""

    state: Any
    joint_action: JointAction
    next_state: Any
    done: bool
    true_rewards: tuple[float, ...] | None = None
    episode: int = 0
    step: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "joint_action", tuple(int(a) for a in self.joint_action)
        )
        object.__setattr__(self, "done", bool(self.done))
        if self.true_rewards is not None:
            rewards = tuple(float(r) for r in self.true_rewards)
            if len(rewards) != len(self.joint_action):
                raise ArgumentError(
                    "true_rewards must have exactly one entry per agent."
                )
            object.__setattr__(self, "true_rewards", rewards)


def split_episodes(transitions: Iterable[Transition]) -> list[list[Transition]]:
    """Group consecutive transitions sharing an episode id."""
    episodes: list[list[Transition]] = []
    for transition in transitions:
        if not episodes or episodes[-1][-1].episode != transition.episode:
            episodes.append([])
        episodes[-1].append(transition)
    return episodes


@dataclass(frozen=True, eq=False)
class TabularModel:
    """Exact dynamics of an enumerable game.

    rewards (n, S, J), successors/probs (S, J, K), dones (S, J),
    initial (S,) with J = |A|ⁿ and K the maximal branching factor.
    """

    spec: GameSpec
    rewards: np.ndarray
    successors: np.ndarray
    probs: np.ndarray
    dones: np.ndarray
    initial: np.ndarray

    def __post_init__(self) -> None:
        n, states, joint = self.rewards.shape
        if n != self.spec.n_agents or joint != self.spec.joint_action_count:
            raise ArgumentError("reward tensor does not match the game spec.")
        if self.successors.shape[:2] != (states, joint):
            raise ArgumentError("successor table does not match rewards.")
        if self.successors.shape != self.probs.shape:
            raise ArgumentError("successor ids and probabilities differ in shape.")
        if self.dones.shape != (states, joint):
            raise ArgumentError("done table does not match rewards.")
        if self.initial.shape != (states,):
            raise ArgumentError("initial distribution does not match rewards.")

    @property
    def state_count(self) -> int:
        return self.rewards.shape[1]

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        """E_{s′∼T(·|s,a)}[V(s′)] per (s, joint action), zero after termination."""
        expected = (self.probs * values[self.successors]).sum(axis=-1)
        return np.where(self.dones, 0.0, expected)


class MarkovGame(abc.ABC):
    """Environment interface ⟨n, S, A, T, R, p₀⟩ with symmetric actions."""

    spec: GameSpec

    @abc.abstractmethod
    def reset(self, rng: np.random.Generator) -> Any:
        """Draw an initial state from p₀."""

    @abc.abstractmethod
    def step(
        self,
        state: Any,
        joint_action: Sequence[int],
        rng: np.random.Generator | None = None
    ) -> tuple[Any, np.ndarray, bool]:
        """Return (next state, per-agent rewards, done)."""

    @abc.abstractmethod
    def features(self, state: Any, agent: int) -> np.ndarray:
        """Feature encoding of ``state`` from ``agent``'s perspective."""

    @property
    @abc.abstractmethod
    def feature_size(self) -> int:
        pass

    @abc.abstractmethod
    def config_dict(self) -> dict:
        """JSON-serialisable description used for dataset manifests."""

    @abc.abstractmethod
    def state_to_json(self, state: Any) -> Any:
        pass

    @abc.abstractmethod
    def state_from_json(self, payload: Any) -> Any:
        pass

    @property
    def max_episode_steps(self) -> int:
        return self.spec.horizon

    @property
    def is_tabular(self) -> bool:
        return False

    def state_id(self, state: Any) -> int:
        raise TabularUnsupportedError(
            f"{type(self).__name__} has no state enumeration."
        )

    def state_from_id(self, s: int) -> Any:
        raise TabularUnsupportedError(
            f"{type(self).__name__} has no state enumeration."
        )

    def tabular_model(self) -> TabularModel:
        raise TabularUnsupportedError(
            f"{type(self).__name__} has no tabular model."
        )

    def config_hash(self) -> str:
        payload = json.dumps(self.config_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def sample_actions(rows: np.ndarray, rng: np.random.Generator) -> JointAction:
    """Sample one action per agent from rows of shape (n, |A|).

    Inverse-CDF sampling: one uniform draw per agent, in agent order.
    """
    actions = []
    for row in rows:
        cumulative = np.cumsum(row)
        index = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        actions.append(min(index, len(row) - 1))
    return tuple(actions)
