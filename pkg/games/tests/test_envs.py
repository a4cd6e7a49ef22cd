import numpy as np
from django.test import SimpleTestCase

from games.envs import build_env
from games.envs.gems import (
    DOWN,
    LEFT,
    RIGHT,
    STOP,
    UP,
    GemsConfig,
    GemsGame,
    GemsState,
    gems_encode,
    gems_enumerate_states,
    gems_step,
    parse_layout,
    render
)
from games.envs.matrix import (
    MatrixGame,
    MatrixGameConfig,
    MatrixState,
    matrix_step,
    random_matrix_game
)
from games.exceptions import (
    ArgumentError,
    ConfigError,
    TabularUnsupportedError
)


def sample_gems_config(layout: str, **params) -> GemsConfig:
    defaults = {"placement": "fixed", "horizon": 3}
    defaults.update(params)
    return GemsConfig(layout=layout, **defaults)


def sample_state(cfg: GemsConfig) -> GemsState:
    return GemsState.initial(parse_layout(cfg.layout)[2])


class GemsLayoutTests(SimpleTestCase):
    """Test ASCII layout parsing."""

    def test_layout_fixes_dimensions_and_counts(self) -> None:
        cfg = sample_gems_config("1R.\n.P2\nB..\n...")
        self.assertEqual((cfg.width, cfg.height), (3, 4))
        self.assertEqual((cfg.n_red, cfg.n_blue, cfg.n_purple), (1, 1, 1))

    def test_missing_agent_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            parse_layout("1R\n..")

    def test_unknown_character_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            parse_layout("1X\n.2")

    def test_render_round_trip(self) -> None:
        layout = "1R.\n.P2\nB.."
        cfg = sample_gems_config(layout)
        self.assertEqual(render(sample_state(cfg), cfg), layout)

    def test_overfull_grid_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            GemsConfig(width=2, height=2, n_red=2, n_blue=1, n_purple=0)


class GemsStepTests(SimpleTestCase):
    """Test Gems dynamics and rewards."""

    def test_red_collects_red_gem(self) -> None:
        cfg = sample_gems_config("1R\n2.")
        state, rewards, done = gems_step(sample_state(cfg), (RIGHT, STOP), cfg)
        self.assertEqual(rewards.tolist(), [1.0, 0.0])
        self.assertEqual(state.alive, (False,))
        self.assertFalse(done)

    def test_blue_ignores_red_gem(self) -> None:
        cfg = sample_gems_config("2R\n1.")
        state, rewards, _ = gems_step(sample_state(cfg), (STOP, RIGHT), cfg)
        self.assertEqual(rewards.tolist(), [0.0, 0.0])
        self.assertEqual(state.alive, (True,))

    def test_joint_purple_collection(self) -> None:
        cfg = sample_gems_config("1P\n2P")
        state, rewards, _ = gems_step(sample_state(cfg), (RIGHT, RIGHT), cfg)
        self.assertEqual(rewards.tolist(), [6.0, 6.0])
        self.assertEqual(state.alive, (False, False))

    def test_single_agent_on_purple_collects_nothing(self) -> None:
        cfg = sample_gems_config("1P\n2P")
        state, rewards, _ = gems_step(sample_state(cfg), (RIGHT, STOP), cfg)
        self.assertEqual(rewards.tolist(), [0.0, 0.0])
        self.assertEqual(state.alive, (True, True))

    def test_boundary_move_is_noop(self) -> None:
        cfg = sample_gems_config("1.\n.2")
        state, rewards, _ = gems_step(sample_state(cfg), (UP, DOWN), cfg)
        self.assertEqual(state.positions, ((0, 0), (1, 1)))
        self.assertEqual(rewards.tolist(), [0.0, 0.0])
        state, _, _ = gems_step(state, (LEFT, RIGHT), cfg)
        self.assertEqual(state.positions, ((0, 0), (1, 1)))

    def test_done_at_horizon(self) -> None:
        cfg = sample_gems_config("1.\n.2", horizon=2)
        state, _, done = gems_step(sample_state(cfg), (STOP, STOP), cfg)
        self.assertFalse(done)
        state, _, done = gems_step(state, (STOP, STOP), cfg)
        self.assertTrue(done)
        with self.assertRaises(ArgumentError):
            gems_step(state, (STOP, STOP), cfg)

    def test_invalid_action_rejected(self) -> None:
        cfg = sample_gems_config("1.\n.2")
        with self.assertRaises(ArgumentError):
            gems_step(sample_state(cfg), (5, 0), cfg)

    def test_rewards_in_allowed_set(self) -> None:
        cfg = GemsConfig(width=3, height=3, n_red=2, n_blue=2, n_purple=2,
                         horizon=20)
        game = GemsGame(cfg)
        rng = np.random.default_rng(0)
        allowed = {0.0, 1.0, 6.0, 7.0}
        for _ in range(20):
            state = game.reset(rng)
            done = False
            while not done:
                joint = tuple(int(a) for a in rng.integers(0, 5, size=2))
                state, rewards, done = game.step(state, joint)
                self.assertTrue(set(rewards.tolist()) <= allowed)


class GemsEncodeTests(SimpleTestCase):
    """Test Gems feature encoding."""

    def test_empty_grid_positions(self) -> None:
        cfg = GemsConfig(width=2, height=2, n_red=0, n_blue=0, n_purple=0)
        state = GemsState(((0, 0), (1, 1)), (), ())
        encoding = gems_encode(state, cfg, 0)
        self.assertEqual(encoding.shape, (20,))
        self.assertEqual(encoding[:8].sum(), 2.0)

    def test_perspective_swaps_agent_channels(self) -> None:
        cfg = sample_gems_config("1R\nP2")
        state = sample_state(cfg)
        first = gems_encode(state, cfg, 0).reshape(5, -1)
        second = gems_encode(state, cfg, 1).reshape(5, -1)
        np.testing.assert_array_equal(first[[1, 0, 2, 3, 4]], second)

    def test_sum_counts_agents_and_alive_gems(self) -> None:
        cfg = sample_gems_config("1R\nP2")
        state = sample_state(cfg)
        self.assertEqual(gems_encode(state, cfg, 0).sum(), 4.0)
        state, _, _ = gems_step(state, (RIGHT, STOP), cfg)
        self.assertEqual(gems_encode(state, cfg, 0).sum(), 3.0)


class GemsEnumerationTests(SimpleTestCase):
    """Test the tabular state enumeration of fixed Gems layouts."""

    def test_state_count_per_step(self) -> None:
        index = gems_enumerate_states(sample_gems_config("1R\n.2"))
        self.assertEqual(index.states_per_step, 4 * 4 * 2)
        self.assertEqual(index.state_count, 4 * 4 * 2 * 4)

    def test_round_trip_all_ids(self) -> None:
        index = gems_enumerate_states(sample_gems_config("1R\n.2"))
        for s in range(index.state_count):
            self.assertEqual(index.state_id(index.state_from_id(s)), s)

    def test_large_grid_unsupported(self) -> None:
        cfg = GemsConfig(width=5, height=5, n_red=2, n_blue=2, n_purple=2,
                         horizon=45, placement="fixed")
        with self.assertRaises(TabularUnsupportedError):
            gems_enumerate_states(cfg)
        self.assertFalse(GemsGame(cfg).is_tabular)

    def test_random_placement_unsupported(self) -> None:
        cfg = GemsConfig(width=2, height=2, n_red=1, n_blue=0, n_purple=0)
        with self.assertRaises(TabularUnsupportedError):
            gems_enumerate_states(cfg)

    def test_tabular_model_matches_step(self) -> None:
        game = GemsGame(sample_gems_config("1R\nB2"))
        model = game.tabular_model()
        self.assertEqual(model.initial.sum(), 1.0)
        state = game.state_from_id(int(np.argmax(model.initial)))
        for joint in [(RIGHT, STOP), (DOWN, UP), (STOP, LEFT)]:
            j = joint[0] * 5 + joint[1]
            next_state, rewards, done = game.step(state, joint)
            s = game.state_id(state)
            self.assertEqual(model.successors[s, j, 0], game.state_id(next_state))
            np.testing.assert_array_equal(model.rewards[:, s, j], rewards)
            self.assertEqual(model.dones[s, j], done)

    def test_json_state_round_trip(self) -> None:
        game = GemsGame(GemsConfig(width=3, height=3, n_red=1, n_blue=1,
                                   n_purple=1))
        state = game.reset(np.random.default_rng(3))
        self.assertEqual(game.state_from_json(game.state_to_json(state)), state)


class MatrixGameTests(SimpleTestCase):
    """Test repeated matrix games."""

    def test_constant_game(self) -> None:
        cfg = MatrixGameConfig(payoffs=np.ones((2, 1, 4)))
        _, rewards, done = matrix_step(MatrixState(0), (1, 0), cfg)
        self.assertEqual(rewards.tolist(), [1.0, 1.0])
        self.assertFalse(done)

    def test_zero_sum(self) -> None:
        payoff = np.array([[1.0, -1.0], [-1.0, 1.0]])
        cfg = MatrixGameConfig(payoffs=np.stack([payoff, -payoff])[:, None])
        for a0 in range(2):
            for a1 in range(2):
                _, rewards, _ = matrix_step(MatrixState(0), (a0, a1), cfg)
                self.assertEqual(rewards.sum(), 0.0)

    def test_deterministic_transition(self) -> None:
        cfg = MatrixGameConfig(
            payoffs=np.zeros((2, 2, 4)),
            transitions=np.array([[1, 1, 1, 1], [0, 0, 0, 0]]),
        )
        next_state, _, _ = matrix_step(MatrixState(0), (0, 1), cfg)
        self.assertEqual(next_state.node, 1)

    def test_stochastic_transition_needs_rng(self) -> None:
        cfg = random_matrix_game(np.random.default_rng(0))
        with self.assertRaises(ArgumentError):
            matrix_step(MatrixState(0), (0, 0), cfg)
        next_state, _, _ = matrix_step(
            MatrixState(0), (0, 0), cfg, np.random.default_rng(1)
        )
        self.assertIn(next_state.node, (0, 1))

    def test_done_at_horizon(self) -> None:
        cfg = MatrixGameConfig(payoffs=np.ones((1, 1, 2)), horizon=2)
        state, _, done = matrix_step(MatrixState(0), (0,), cfg)
        self.assertFalse(done)
        _, _, done = matrix_step(state, (1,), cfg)
        self.assertTrue(done)

    def test_malformed_payoffs_rejected(self) -> None:
        with self.assertRaises(ArgumentError):
            MatrixGameConfig(payoffs=np.ones((2, 1, 3)))
        with self.assertRaises(ArgumentError):
            MatrixGameConfig(
                payoffs=np.ones((2, 2, 4)),
                transitions=np.full((2, 4), 5),
            )

    def test_tabular_model_terminal_bucket(self) -> None:
        game = MatrixGame(MatrixGameConfig(payoffs=np.ones((1, 1, 2)), horizon=2))
        model = game.tabular_model()
        self.assertEqual(model.state_count, 3)
        self.assertTrue(model.dones[1].all())
        self.assertTrue(model.dones[2].all())
        self.assertEqual(model.rewards[0, 2].sum(), 0.0)

    def test_config_dict_round_trip(self) -> None:
        cfg = random_matrix_game(np.random.default_rng(4))
        game = build_env(cfg.to_dict())
        np.testing.assert_array_equal(game.cfg.payoffs, cfg.payoffs)
        self.assertEqual(game.config_hash(), MatrixGame(cfg).config_hash())

    def test_unknown_env_type(self) -> None:
        with self.assertRaises(ConfigError):
            build_env({"type": "overcooked"})
