import numpy as np
from django.test import SimpleTestCase, override_settings

from games.exceptions import ArgumentError, EnumerationTooLargeError
from games.markov_game import (
    GameSpec,
    PolicyTable,
    Transition,
    enumerate_opponent_actions,
    joint_from_index,
    joint_index,
    opponent_prob,
    recombine_joint,
    sample_actions,
    split_episodes,
    split_joint
)


def sample_policy(seed: int = 0, n_agents: int = 3, states: int = 4,
                  actions: int = 3) -> PolicyTable:
    rng = np.random.default_rng(seed)
    return PolicyTable(rng.dirichlet(np.ones(actions), size=(n_agents, states)))


class GameSpecTests(SimpleTestCase):
    """Test game signature validation."""

    def test_valid_spec(self) -> None:
        spec = GameSpec(n_agents=2, action_count=5, gamma=0.9, horizon=45)
        self.assertEqual(spec.joint_action_count, 25)
        self.assertFalse(spec.enumerable)

    def test_invalid_gamma_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            GameSpec(n_agents=2, action_count=2, gamma=1.0)

    def test_invalid_counts_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            GameSpec(n_agents=0, action_count=2, gamma=0.5)
        with self.assertRaises(ArgumentError):
            GameSpec(n_agents=1, action_count=0, gamma=0.5)

    def test_state_id_range(self) -> None:
        spec = GameSpec(2, 2, 0.5, state_space_size=3)
        spec.validate_state_id(2)
        with self.assertRaises(ArgumentError):
            spec.validate_state_id(3)

    def test_joint_action_validation(self) -> None:
        spec = GameSpec(2, 3, 0.5)
        self.assertEqual(spec.validate_joint_action([2, 0]), (2, 0))
        with self.assertRaises(ArgumentError):
            spec.validate_joint_action([3, 0])
        with self.assertRaises(ArgumentError):
            spec.validate_joint_action([1])


class JointActionTests(SimpleTestCase):
    """Test splitting, recombining and indexing joint actions."""

    def test_split_examples(self) -> None:
        self.assertEqual(split_joint((2, 0, 1), 1), (0, (2, 1)))
        self.assertEqual(split_joint((3,), 0), (3, ()))
        self.assertEqual(split_joint((0, 1, 2, 3), 3), (3, (0, 1, 2)))

    def test_split_out_of_range(self) -> None:
        with self.assertRaises(ArgumentError):
            split_joint((0, 1), 2)

    def test_split_recombine_round_trip(self) -> None:
        rng = np.random.default_rng(7)
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            joint = tuple(int(a) for a in rng.integers(0, 5, size=n))
            i = int(rng.integers(0, n))
            a_i, a_minus_i = split_joint(joint, i)
            self.assertEqual(recombine_joint(a_i, a_minus_i, i), joint)

    def test_joint_index_round_trip(self) -> None:
        for index in range(27):
            joint = joint_from_index(index, 3, 3)
            self.assertEqual(joint_index(joint, 3), index)
        self.assertEqual(joint_index((1, 0), 5), 5)


class EnumerateOpponentActionsTests(SimpleTestCase):
    """Test exhaustive enumeration of opponent tuples."""

    def test_examples(self) -> None:
        self.assertEqual(enumerate_opponent_actions(2, 3, 0), [(0,), (1,), (2,)])
        self.assertEqual(
            enumerate_opponent_actions(3, 2, 1),
            [(0, 0), (0, 1), (1, 0), (1, 1)]
        )
        self.assertEqual(enumerate_opponent_actions(1, 5, 0), [()])

    def test_cap_exceeded(self) -> None:
        with self.assertRaises(EnumerationTooLargeError):
            enumerate_opponent_actions(4, 5, 0, cap=100)

    @override_settings(MAMQL_ENUMERATION_CAP=8)
    def test_cap_read_from_settings(self) -> None:
        self.assertEqual(len(enumerate_opponent_actions(4, 2, 0)), 8)
        with self.assertRaises(EnumerationTooLargeError):
            enumerate_opponent_actions(5, 2, 0)


class OpponentProbTests(SimpleTestCase):
    """Test factorised opponent probabilities."""

    def test_uniform_opponents(self) -> None:
        policy = PolicyTable.uniform(3, 1, 2)
        for a_minus_i in enumerate_opponent_actions(3, 2, 0):
            self.assertAlmostEqual(opponent_prob(policy, 0, 0, a_minus_i), 0.25)

    def test_deterministic_opponent(self) -> None:
        policy = PolicyTable(np.array([[[0.5, 0.5]], [[0.0, 1.0]]]))
        self.assertEqual(opponent_prob(policy, 0, 0, (1,)), 1.0)
        self.assertEqual(opponent_prob(policy, 0, 0, (0,)), 0.0)

    def test_product_of_factors(self) -> None:
        policy = PolicyTable(np.array([
            [[0.5, 0.5]],
            [[0.3, 0.7]],
            [[0.5, 0.5]],
        ]))
        self.assertAlmostEqual(opponent_prob(policy, 0, 0, (1, 0)), 0.35)

    def test_opponent_probs_sum_to_one(self) -> None:
        policy = sample_policy()
        for i in range(policy.n_agents):
            tuples = enumerate_opponent_actions(3, 3, i)
            for s in range(policy.state_count):
                total = sum(opponent_prob(policy, s, i, t) for t in tuples)
                self.assertAlmostEqual(total, 1.0, delta=1e-9)

    def test_vectorised_weights_match_scalar(self) -> None:
        policy = sample_policy(seed=3)
        tuples = enumerate_opponent_actions(3, 3, 2)
        weights = policy.opponent_weights(2, tuples)
        for s in range(policy.state_count):
            for t, a_minus_i in enumerate(tuples):
                self.assertAlmostEqual(
                    weights[s, t], opponent_prob(policy, s, 2, a_minus_i),
                    delta=1e-15
                )


class PolicyTableTests(SimpleTestCase):
    """Test policy table validation."""

    def test_rows_must_sum_to_one(self) -> None:
        with self.assertRaises(ArgumentError):
            PolicyTable(np.array([[[0.5, 0.6]]]))

    def test_negative_entries_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            PolicyTable(np.array([[[1.5, -0.5]]]))

    def test_table_is_immutable(self) -> None:
        policy = PolicyTable.uniform(2, 2, 2)
        with self.assertRaises(ValueError):
            policy.probs[0, 0, 0] = 1.0


class TransitionTests(SimpleTestCase):
    """Test transition records."""

    def test_reward_length_must_match_agents(self) -> None:
        with self.assertRaises(ArgumentError):
            Transition(0, (0, 1), 1, False, true_rewards=(1.0,))

    def test_split_episodes(self) -> None:
        transitions = [
            Transition(0, (0,), 0, False, episode=0),
            Transition(0, (0,), 0, True, episode=0),
            Transition(0, (0,), 0, True, episode=1),
        ]
        self.assertEqual([len(e) for e in split_episodes(transitions)], [2, 1])


class SampleActionsTests(SimpleTestCase):
    """Test inverse-CDF joint action sampling."""

    def test_deterministic_rows(self) -> None:
        rows = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        for seed in range(5):
            rng = np.random.default_rng(seed)
            self.assertEqual(sample_actions(rows, rng), (1, 2))

    def test_reproducible_for_seed(self) -> None:
        rows = np.full((2, 4), 0.25)
        first = [sample_actions(rows, np.random.default_rng(11)) for _ in range(3)]
        second = [sample_actions(rows, np.random.default_rng(11)) for _ in range(3)]
        self.assertEqual(first, second)
