"""
Exact tabular oracles: marginalised soft-Q functions, soft values,
generalised Boltzmann equilibria via damped best-response dynamics, and
expert demonstrations rolled out from the equilibrium.
"""
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from games.exceptions import ArgumentError, IterationLimitError
from games.markov_game import (
    MarkovGame,
    PolicyTable,
    TabularModel,
    Transition,
    enumerate_opponent_actions,
    joint_index,
    joint_index_table,
    recombine_joint,
    sample_actions
)

logger = logging.getLogger(__name__)

SOFT_Q_TOL = 1e-8
EQUILIBRIUM_TOL = 1e-6
MAX_OUTER_ITERATIONS = 500
MAX_SOFT_Q_ITERATIONS = 10_000


@dataclass(frozen=True, eq=False)
class TabularCritic:
    """Marginal critic Q̄[s][aᵢ] of one agent with rationality λ."""

    table: np.ndarray
    lam: float = 1.0
    agent: int = 0

    def __post_init__(self) -> None:
        table = np.array(self.table, dtype=np.float64)
        if table.ndim != 2:
            raise ArgumentError("critic table must have shape (S, |A|).")
        if not np.all(np.isfinite(table)):
            raise ArgumentError("critic table must be finite.")
        if self.lam <= 0:
            raise ArgumentError("lambda must be positive.")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    policies: PolicyTable
    critics: tuple[TabularCritic, ...]
    residual: float
    iterations: int
    converged: bool = True


def boltzmann(q: np.ndarray, lam: float) -> np.ndarray:
    return softmax(lam * q, axis=-1)


def soft_values(q: np.ndarray, lam: float) -> np.ndarray:
    """V = (1−λ)·E_π[Q̄] + log Σ exp(λQ̄) along the last axis."""
    policy = boltzmann(q, lam)
    return (1.0 - lam) * (policy * q).sum(axis=-1) + logsumexp(lam * q, axis=-1)


def soft_value_grad(q: np.ndarray, lam: float) -> np.ndarray:
    """∂V/∂Q̄ₐ = πₐ·[1 + λ(1−λ)(Q̄ₐ − E_π Q̄)]."""
    policy = boltzmann(q, lam)
    mean = (policy * q).sum(axis=-1, keepdims=True)
    return policy * (1.0 + lam * (1.0 - lam) * (q - mean))


def boltzmann_policy(critic: TabularCritic) -> np.ndarray:
    return boltzmann(critic.table, critic.lam)


def soft_value(critic: TabularCritic, s: int) -> float:
    return float(soft_values(critic.table[s], critic.lam))


def soft_value_oracle(
    critic: TabularCritic,
    s: int,
    policy: PolicyTable,
    full_q: np.ndarray | None = None
) -> float:
    """E_{ã∼π(·|s)}[Qᵢ(s, ã) − log πᵢ(ãᵢ|s)] by enumerating joint actions.

    Without ``full_q`` the joint critic is Qᵢ(s, ã) = Q̄(s, ãᵢ).
    """
    i = critic.agent
    n, _, action_count = policy.probs.shape
    value = 0.0
    for a_minus_i in enumerate_opponent_actions(n, action_count, i):
        weight = 1.0
        for j, a_j in zip((j for j in range(n) if j != i), a_minus_i):
            weight *= policy.probs[j, s, a_j]
        for a_i in range(action_count):
            prob = policy.probs[i, s, a_i] * weight
            if prob == 0.0:
                continue
            if full_q is None:
                q = critic.table[s, a_i]
            else:
                q = full_q[s, joint_index(
                    recombine_joint(a_i, a_minus_i, i), action_count
                )]
            value += prob * (q - np.log(policy.probs[i, s, a_i]))
    return float(value)


class Marginalizer:
    """Applies E_{a₋ᵢ∼π₋ᵢ(·|s)} to tables indexed by (s, joint action)."""

    def __init__(self, policy: PolicyTable, i: int, cap: int | None = None) -> None:
        tuples = enumerate_opponent_actions(
            policy.n_agents, policy.action_count, i, cap
        )
        self.index = joint_index_table(
            policy.n_agents, policy.action_count, i, tuples
        )
        self.weights = policy.opponent_weights(i, tuples)

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("st,sat->sa", self.weights, values[:, self.index])


def marginal_expectation(
    values: np.ndarray,
    policy: PolicyTable,
    i: int,
    cap: int | None = None
) -> np.ndarray:
    return Marginalizer(policy, i, cap)(values)


def marginalize_q(
    full_q: np.ndarray,
    policy: PolicyTable,
    i: int,
    lam: float = 1.0
) -> TabularCritic:
    """Q̄(s, aᵢ) = Σ_{a₋ᵢ} π₋ᵢ(a₋ᵢ|s) · Q(s, aᵢ, a₋ᵢ)."""
    return TabularCritic(marginal_expectation(full_q, policy, i), lam, i)


def marginal_soft_q_iteration(
    model: TabularModel,
    policy: PolicyTable,
    i: int,
    lam: float = 1.0,
    tol: float = SOFT_Q_TOL,
    max_iterations: int = MAX_SOFT_Q_ITERATIONS
) -> TabularCritic:
    """Fixed point of Q̄ ← R̄ + γ·E_{a₋ᵢ, s′}[V(s′)] against fixed π₋ᵢ."""
    marginal = Marginalizer(policy, i)
    gamma = model.spec.gamma
    r_bar = marginal(model.rewards[i])
    q = r_bar
    for _ in range(max_iterations):
        updated = r_bar + gamma * marginal(
            model.expected_next(soft_values(q, lam))
        )
        delta = float(np.max(np.abs(updated - q)))
        q = updated
        if delta < tol:
            return TabularCritic(q, lam, i)
    raise IterationLimitError(
        f"soft-Q iteration for agent {i} did not reach tol={tol} "
        f"within {max_iterations} iterations.",
        result=TabularCritic(q, lam, i)
    )


def bellman_residual(
    critic: TabularCritic,
    model: TabularModel,
    policy: PolicyTable
) -> float:
    """Sup-norm violation of the marginalised soft Bellman condition."""
    marginal = Marginalizer(policy, critic.agent)
    target = marginal(model.rewards[critic.agent]) + model.spec.gamma * marginal(
        model.expected_next(soft_values(critic.table, critic.lam))
    )
    return float(np.max(np.abs(target - critic.table)))


def equilibrium_residual(
    policy: PolicyTable,
    critics: Sequence[TabularCritic]
) -> float:
    return float(max(
        np.max(np.abs(policy.probs[critic.agent] - boltzmann_policy(critic)))
        for critic in critics
    ))


def _best_responses(
    model: TabularModel,
    policy: PolicyTable,
    lam: float,
    q_tol: float
) -> tuple[TabularCritic, ...]:
    return tuple(
        marginal_soft_q_iteration(model, policy, i, lam, q_tol)
        for i in range(policy.n_agents)
    )


def equilibrium_fixed_point(
    model: TabularModel,
    lam: float = 1.0,
    tol: float = EQUILIBRIUM_TOL,
    damping: float = 0.5,
    max_iterations: int = MAX_OUTER_ITERATIONS,
    q_tol: float = SOFT_Q_TOL,
    init_noise: float = 0.0,
    seed: int = 0
) -> EquilibriumResult:
    """Damped best-response dynamics towards a generalised Boltzmann equilibrium.

    Every round all agents respond to the same snapshot of the others'
    policies. Stops once the damped update moves no state's policy by more
    than ``tol`` in total variation; the reported residual is the largest
    |πᵢ(aᵢ|s) − Boltzmann(λ·Q̄ᵢ)(aᵢ|s)| of the final snapshot. ``init_noise``
    perturbs the uniform start (seeded) to break symmetric but unstable fixed
    points.
    """
    if not 0.0 <= damping < 1.0:
        raise ArgumentError("damping must lie in [0, 1).")
    n = model.spec.n_agents
    shape = (n, model.state_count, model.spec.action_count)
    probs = np.full(shape, 1.0 / model.spec.action_count)
    if init_noise > 0.0:
        rng = np.random.default_rng(seed)
        probs = probs + init_noise * rng.uniform(size=shape)
        probs /= probs.sum(axis=-1, keepdims=True)

    if max_iterations < 1:
        raise ArgumentError("max_iterations must be positive.")

    converged = False
    for iterations in range(1, max_iterations + 1):
        policies = PolicyTable(probs)
        critics = _best_responses(model, policies, lam, q_tol)
        targets = np.stack([boltzmann_policy(critic) for critic in critics])
        residual = float(np.max(np.abs(targets - probs)))
        updated = (1.0 - damping) * targets + damping * probs
        change = float(0.5 * np.abs(updated - probs).sum(axis=-1).max())
        logger.debug(
            "best-response round %d: change %.3e, residual %.3e",
            iterations,
            change,
            residual
        )
        if change < tol:
            converged = True
            break
        probs = updated

    # the reported policies are the last snapshot the residual was measured on
    result = EquilibriumResult(
        policies=policies,
        critics=critics,
        residual=residual,
        iterations=iterations,
        converged=converged,
    )
    if not converged:
        raise IterationLimitError(
            f"best-response dynamics did not converge within "
            f"{max_iterations} rounds (residual {result.residual:.3e}).",
            result=result
        )
    logger.info(
        "equilibrium after %d rounds, residual %.3e",
        iterations,
        result.residual
    )
    return result


class TablePolicy:
    """Joint policy backed by a PolicyTable over an enumerable game."""

    def __init__(self, env: MarkovGame, policies: PolicyTable) -> None:
        self.env = env
        self.policies = policies

    @property
    def n_agents(self) -> int:
        return self.policies.n_agents

    def action_probs(self, agent: int, states: Sequence) -> np.ndarray:
        ids = [self.env.state_id(state) for state in states]
        return self.policies.probs[agent, ids]


def generate_expert_dataset(
    env: MarkovGame,
    eq: EquilibriumResult,
    n_steps: int,
    seed: int
) -> list[Transition]:
    """Roll out the joint equilibrium policy for exactly ``n_steps`` steps."""
    rng = np.random.default_rng(seed)
    transitions: list[Transition] = []
    episode = 0
    while len(transitions) < n_steps:
        state = env.reset(rng)
        for step in range(env.max_episode_steps):
            if len(transitions) == n_steps:
                break
            rows = eq.policies.probs[:, env.state_id(state)]
            joint = sample_actions(rows, rng)
            next_state, rewards, done = env.step(state, joint, rng)
            transitions.append(Transition(
                state=state,
                joint_action=joint,
                next_state=next_state,
                done=done,
                true_rewards=tuple(rewards),
                episode=episode,
                step=step,
            ))
            state = next_state
            if done:
                break
        episode += 1
    logger.info("generated %d expert transitions over %d episodes",
                len(transitions), episode)
    return transitions
