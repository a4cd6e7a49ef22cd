import os
import tempfile

import numpy as np
from django.test import SimpleTestCase

from games.envs.matrix import MatrixGame, MatrixGameConfig, MatrixState
from games.exceptions import ArgumentError, DatasetParseError
from games.markov_game import PolicyTable, Transition
from games.solver import TablePolicy
from learning.metrics import (
    RunRecord,
    average_return,
    behavioral_error,
    episodes_to_convergence,
    episodic_return,
    metrics_header,
    read_metrics_csv,
    reward_recovery_mse,
    rollout,
    write_metrics_csv
)
from learning.plots import PLOT_FILES, plot_run


def sample_constant_game(rewards=(2.0, 1.0), action_count: int = 2,
                         episode_length: int = 5) -> MatrixGame:
    joint = action_count ** len(rewards)
    payoffs = np.array(rewards, dtype=float)[:, None, None] * np.ones((1, 1, joint))
    return MatrixGame(MatrixGameConfig(
        payoffs=payoffs,
        action_count=action_count,
        episode_length=episode_length,
    ))


def sample_uniform_policy(game: MatrixGame) -> TablePolicy:
    spec = game.spec
    return TablePolicy(
        game, PolicyTable.uniform(spec.n_agents, spec.state_space_size, spec.action_count)
    )


def sample_record(episode: int, total: float = 1.0, **params) -> RunRecord:
    defaults = {
        "returns": (total / 2, total / 2),
        "return_stderr": (0.1, 0.2),
        "total_return": total,
        "nll": (0.5, 0.25),
    }
    defaults.update(params)
    return RunRecord(episode=episode, **defaults)


class ConstantReward:
    def __init__(self, agent: int, value: float) -> None:
        self.agent = agent
        self.value = value

    def predict(self, states, joint_actions) -> np.ndarray:
        return np.full(len(states), self.value)


class EpisodicReturnTests(SimpleTestCase):
    """Test the summed episode return."""

    def test_sums_over_agents_and_steps(self) -> None:
        trajectory = [
            Transition(0, (0, 0), 0, False, (1.0, 2.0)),
            Transition(0, (0, 0), 0, True, (3.0, 4.0)),
        ]
        self.assertEqual(episodic_return(trajectory), 10.0)

    def test_zero_rewards(self) -> None:
        trajectory = [Transition(0, (1,), 0, False, (0.0,))] * 3
        self.assertEqual(episodic_return(trajectory), 0.0)

    def test_single_agent_is_plain_return(self) -> None:
        trajectory = [Transition(0, (1,), 0, False, (r,)) for r in (1.0, -0.5, 2.0)]
        self.assertEqual(episodic_return(trajectory), 2.5)

    def test_missing_rewards(self) -> None:
        with self.assertRaises(ArgumentError):
            episodic_return([Transition(0, (0,), 0, False)])


class AverageReturnTests(SimpleTestCase):
    """Test average return over seeded rollouts."""

    def setUp(self) -> None:
        self.game = sample_constant_game()
        self.policy = sample_uniform_policy(self.game)

    def test_deterministic_returns_have_zero_stderr(self) -> None:
        summary = average_return(self.policy, self.game, n_episodes=20, seed=3)
        self.assertEqual(summary.means, (10.0, 5.0))
        self.assertEqual(summary.stderr, (0.0, 0.0))
        self.assertEqual(summary.total_mean, 15.0)
        self.assertEqual(summary.ratio, 2.0)
        self.assertEqual(summary.n_episodes, 20)

    def test_single_agent_has_no_ratio(self) -> None:
        game = sample_constant_game(rewards=(1.0,))
        summary = average_return(sample_uniform_policy(game), game, n_episodes=3)
        self.assertIsNone(summary.ratio)

    def test_reproducible_for_a_seed(self) -> None:
        game = MatrixGame(MatrixGameConfig(
            payoffs=np.arange(8, dtype=float).reshape(2, 1, 4),
            episode_length=4,
        ))
        policy = sample_uniform_policy(game)
        first = average_return(policy, game, n_episodes=30, seed=7)
        self.assertEqual(first, average_return(policy, game, n_episodes=30, seed=7))
        self.assertGreater(first.stderr[0], 0.0)

    def test_rollout_length(self) -> None:
        trajectory = rollout(self.policy, self.game, np.random.default_rng(0), episode=4)
        self.assertEqual(len(trajectory), 5)
        self.assertTrue(all(t.episode == 4 for t in trajectory))
        self.assertEqual([t.step for t in trajectory], list(range(5)))

    def test_needs_episodes(self) -> None:
        with self.assertRaises(ArgumentError):
            average_return(self.policy, self.game, n_episodes=0)


class RewardRecoveryTests(SimpleTestCase):
    """Test reward recovery error on policy rollouts."""

    def setUp(self) -> None:
        self.game = sample_constant_game(rewards=(1.0, 1.0))
        self.policy = sample_uniform_policy(self.game)

    def test_exact_model(self) -> None:
        models = [ConstantReward(0, 1.0), ConstantReward(1, 1.0)]
        self.assertEqual(reward_recovery_mse(models, self.game, self.policy, 50), (0.0, 0.0))

    def test_zero_model_on_unit_rewards(self) -> None:
        models = [ConstantReward(0, 0.0), ConstantReward(1, 0.0)]
        self.assertEqual(reward_recovery_mse(models, self.game, self.policy, 50), (1.0, 1.0))

    def test_needs_samples(self) -> None:
        with self.assertRaises(ArgumentError):
            reward_recovery_mse([], self.game, self.policy, 0)


class BehavioralErrorTests(SimpleTestCase):
    """Test behavioural error against expert demonstrations."""

    def setUp(self) -> None:
        self.game = sample_constant_game(action_count=5, rewards=(1.0, 1.0))
        self.expert = rollout(
            sample_uniform_policy(self.game), self.game, np.random.default_rng(1)
        )

    def test_uniform_policy_nll_is_log_action_count(self) -> None:
        error = behavioral_error(sample_uniform_policy(self.game), self.expert)
        np.testing.assert_allclose(error.nll, np.log(5))
        self.assertIsNone(error.tv)

    def test_identical_policies_have_zero_tv(self) -> None:
        policy = sample_uniform_policy(self.game)
        error = behavioral_error(policy, self.expert, policy)
        self.assertEqual(error.tv, (0.0, 0.0))

    def test_disjoint_policies_have_unit_tv(self) -> None:
        spec = self.game.spec
        first = np.zeros((2, spec.state_space_size, 5))
        second = np.zeros_like(first)
        first[:, :, 0] = 1.0
        second[:, :, 4] = 1.0
        error = behavioral_error(TablePolicy(self.game, PolicyTable(first)), self.expert,
                                 TablePolicy(self.game, PolicyTable(second)))
        self.assertEqual(error.tv, (1.0, 1.0))

    def test_tv_counts_each_visited_state_once(self) -> None:
        game = MatrixGame(MatrixGameConfig(payoffs=np.zeros((2, 2, 4))))
        first = np.full((2, 2, 2), 0.5)
        second = first.copy()
        first[:, 1] = [1.0, 0.0]
        second[:, 1] = [0.0, 1.0]
        crowded, rare = MatrixState(0), MatrixState(1)
        expert = [Transition(crowded, (0, 0), crowded, False)] * 3 + [
            Transition(rare, (0, 0), rare, False)
        ]
        error = behavioral_error(TablePolicy(game, PolicyTable(first)), expert,
                                 TablePolicy(game, PolicyTable(second)))
        self.assertEqual(error.tv, (0.5, 0.5))

    def test_impossible_actions_are_floored(self) -> None:
        spec = self.game.spec
        probs = np.zeros((2, spec.state_space_size, 5))
        probs[:, :, 0] = 1.0
        expert = [Transition(self.expert[0].state, (1, 1), self.expert[0].next_state, False)]
        error = behavioral_error(TablePolicy(self.game, PolicyTable(probs)), expert)
        self.assertTrue(np.all(np.isfinite(error.nll)))

    def test_empty_dataset(self) -> None:
        with self.assertRaises(ArgumentError):
            behavioral_error(sample_uniform_policy(self.game), [])


class ConvergenceTests(SimpleTestCase):
    """Test episodes-to-convergence over a metric stream."""

    def test_constant_expert_level(self) -> None:
        records = [sample_record(10 * k, total=4.0) for k in range(1, 6)]
        self.assertEqual(episodes_to_convergence(records, 4.0, window=2), 10)

    def test_never_above_threshold(self) -> None:
        records = [sample_record(k, total=1.0) for k in range(1, 6)]
        self.assertIsNone(episodes_to_convergence(records, 4.0))

    def test_must_stay_above(self) -> None:
        totals = [4.0, 0.0, 4.0, 4.0, 4.0]
        records = [sample_record(k + 1, total=total) for k, total in enumerate(totals)]
        self.assertEqual(episodes_to_convergence(records, 4.0, window=1), 3)

    def test_window_smooths_the_stream(self) -> None:
        totals = [0.0, 4.0, 4.0, 4.0]
        records = [sample_record(k + 1, total=total) for k, total in enumerate(totals)]
        self.assertEqual(episodes_to_convergence(records, 4.0, window=2, fraction=0.75), 3)

    def test_invalid_window(self) -> None:
        with self.assertRaises(ArgumentError):
            episodes_to_convergence([], 1.0, window=0)


class RunRecordTests(SimpleTestCase):
    """Test run records and the metrics CSV stream."""

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "metrics.csv")

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_rejects_non_finite_fields(self) -> None:
        with self.assertRaises(ArgumentError):
            sample_record(1, nll=(float("nan"), 0.1))
        with self.assertRaises(ArgumentError):
            sample_record(-1)

    def test_header(self) -> None:
        self.assertEqual(metrics_header(1), [
            "episode", "env_steps", "seed", "total_return", "return_0",
            "return_stderr_0", "reward_mse_0", "nll_0", "tv_0", "wall_clock",
        ])

    def test_csv_round_trip(self) -> None:
        records = [
            sample_record(5, total=0.1 + 0.2, reward_mse=(1e-17, 3.5), env_steps=40,
                          seed=3, wall_clock=1.25),
            sample_record(10, total=-2.0, tv=(0.0, 1.0 / 3.0)),
        ]
        write_metrics_csv(self.path, records)
        loaded = read_metrics_csv(self.path)
        self.assertEqual(loaded, records)
        self.assertIsNone(loaded[1].reward_mse)
        self.assertIsNone(loaded[0].tv)

    def test_episodes_must_increase(self) -> None:
        with self.assertRaises(ArgumentError):
            write_metrics_csv(self.path, [sample_record(5), sample_record(5)])

    def test_bad_row_reports_line(self) -> None:
        write_metrics_csv(self.path, [sample_record(5)])
        with open(self.path, "a", encoding="utf-8") as handle:
            handle.write("x" + "," * (len(metrics_header(2)) - 1) + "\n")
        with self.assertRaises(DatasetParseError) as context:
            read_metrics_csv(self.path)
        self.assertEqual(context.exception.line, 3)

    def test_bad_header(self) -> None:
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.write("episode,total\n1,2\n")
        with self.assertRaises(DatasetParseError):
            read_metrics_csv(self.path)

    def test_plots_write_svg_files(self) -> None:
        records = [sample_record(5), sample_record(10, reward_mse=(0.5, 0.25), tv=(0.1, 0.2))]
        paths = plot_run(records, self.tmp.name, title="smoke")
        self.assertEqual([os.path.basename(path) for path in paths], list(PLOT_FILES))
        for path in paths:
            with open(path, encoding="utf-8") as handle:
                self.assertIn("<svg", handle.read())

    def test_plots_without_reward_models(self) -> None:
        paths = plot_run([sample_record(5)], self.tmp.name)
        self.assertTrue(all(os.path.exists(path) for path in paths))
