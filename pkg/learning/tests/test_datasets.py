import os
import tempfile
from collections import Counter

import numpy as np
from django.test import SimpleTestCase

from games.envs.gems import GemsConfig, GemsGame
from games.envs.matrix import MatrixGame, MatrixGameConfig
from games.exceptions import (
    ArgumentError,
    BufferNotReadyError,
    DatasetParseError,
    ManifestMismatchError
)
from games.markov_game import Transition, split_episodes
from learning.datasets import (
    DatasetManifest,
    ReplayBuffer,
    read_dataset,
    subsample,
    write_dataset
)


def sample_game() -> MatrixGame:
    return MatrixGame(MatrixGameConfig(
        payoffs=np.ones((2, 2, 4)),
        transitions=np.array([[1, 0, 0, 1], [0, 1, 1, 0]]),
        horizon=5,
    ))


def sample_transitions(count: int, seed: int = 0, episode_length: int = 5) -> list[Transition]:
    rng = np.random.default_rng(seed)
    game = sample_game()
    transitions = []
    for k in range(count):
        episode, step = divmod(k, episode_length)
        state = game.state_from_id(step * 2 + int(rng.integers(0, 2)))
        next_state = game.state_from_id((step + 1) * 2 + int(rng.integers(0, 2)))
        transitions.append(Transition(
            state=state,
            joint_action=tuple(int(a) for a in rng.integers(0, 2, size=2)),
            next_state=next_state,
            done=step == episode_length - 1,
            true_rewards=tuple(rng.normal(size=2)),
            episode=episode,
            step=step,
        ))
    return transitions


def sample_manifest(transitions: list[Transition]) -> DatasetManifest:
    return DatasetManifest(
        env_hash=sample_game().config_hash(),
        solver_seed=0,
        n_transitions=len(transitions),
        metadata={"lam": 1.0},
    )


class DatasetFileTests(SimpleTestCase):
    """Test JSONL dataset persistence."""

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "expert.jsonl")
        self.game = sample_game()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def test_empty_round_trip(self) -> None:
        write_dataset(self.path, [], sample_manifest([]), self.game)
        transitions, manifest = read_dataset(self.path, self.game)
        self.assertEqual(transitions, [])
        self.assertEqual(manifest.n_transitions, 0)

    def test_round_trip_bit_exact(self) -> None:
        transitions = sample_transitions(1000)
        write_dataset(self.path, transitions, sample_manifest(transitions), self.game)
        loaded, manifest = read_dataset(
            self.path, self.game, expected_env_hash=self.game.config_hash()
        )
        self.assertEqual(loaded, transitions)
        self.assertEqual(manifest, sample_manifest(transitions))

    def test_feature_states_round_trip(self) -> None:
        game = GemsGame(GemsConfig(width=3, height=3, n_red=1, n_blue=1, n_purple=1,
                                   horizon=4))
        rng = np.random.default_rng(0)
        state = game.reset(rng)
        next_state, rewards, done = game.step(state, (1, 2))
        transitions = [Transition(state, (1, 2), next_state, done, tuple(rewards))]
        manifest = DatasetManifest(game.config_hash(), 0, 1)
        write_dataset(self.path, transitions, manifest, game)
        self.assertEqual(read_dataset(self.path, game)[0], transitions)

    def test_truncated_file(self) -> None:
        transitions = sample_transitions(10)
        write_dataset(self.path, transitions, sample_manifest(transitions), self.game)
        with open(self.path, "r", encoding="utf-8") as handle:
            content = handle.read()
        lines = content.split("\n")
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines[:6]) + "\n" + lines[6][:10])
        with self.assertRaises(DatasetParseError) as ctx:
            read_dataset(self.path, self.game)
        self.assertEqual(ctx.exception.line, 7)

    def test_missing_lines(self) -> None:
        transitions = sample_transitions(10)
        write_dataset(self.path, transitions, sample_manifest(transitions), self.game)
        with open(self.path, "r", encoding="utf-8") as handle:
            lines = handle.read().split("\n")
        with open(self.path, "w", encoding="utf-8") as handle:
            handle.write("\n".join(lines[:5]) + "\n")
        with self.assertRaises(DatasetParseError) as ctx:
            read_dataset(self.path, self.game)
        self.assertEqual(ctx.exception.line, 6)

    def test_manifest_mismatch(self) -> None:
        transitions = sample_transitions(3)
        write_dataset(self.path, transitions, sample_manifest(transitions), self.game)
        with self.assertRaises(ManifestMismatchError):
            read_dataset(self.path, self.game, expected_env_hash="0" * 64)

    def test_manifest_count_must_match(self) -> None:
        transitions = sample_transitions(3)
        with self.assertRaises(ArgumentError):
            write_dataset(self.path, transitions, sample_manifest([]), self.game)
        self.assertFalse(os.path.exists(self.path))


class SubsampleTests(SimpleTestCase):
    """Test episode-preserving dataset subsampling."""

    def test_full_length_is_identity(self) -> None:
        transitions = sample_transitions(50)
        self.assertEqual(subsample(transitions, 50, seed=3), transitions)

    def test_zero_is_empty(self) -> None:
        self.assertEqual(subsample(sample_transitions(50), 0, seed=3), [])

    def test_same_seed_same_subset(self) -> None:
        transitions = sample_transitions(50)
        self.assertEqual(subsample(transitions, 17, seed=1),
                         subsample(transitions, 17, seed=1))

    def test_exact_size_whole_episodes(self) -> None:
        subset = subsample(sample_transitions(50), 17, seed=2)
        self.assertEqual(len(subset), 17)
        lengths = sorted(len(e) for e in split_episodes(subset))
        self.assertEqual(lengths, [2, 5, 5, 5])
        for episode in split_episodes(subset):
            self.assertEqual([t.step for t in episode], list(range(len(episode))))

    def test_too_many_steps(self) -> None:
        with self.assertRaises(ArgumentError):
            subsample(sample_transitions(5), 6, seed=0)


class ReplayBufferTests(SimpleTestCase):
    """Test the FIFO replay buffer."""

    def test_fifo_eviction(self) -> None:
        buffer = ReplayBuffer(capacity=10)
        items = sample_transitions(11)
        buffer.extend(items)
        self.assertEqual(len(buffer), 10)
        self.assertNotIn(items[0], list(buffer.items))
        self.assertEqual(list(buffer.items), items[1:])

    def test_full_batch_is_permutation(self) -> None:
        buffer = ReplayBuffer(capacity=10, seed=1)
        items = sample_transitions(10)
        buffer.extend(items)
        batch = buffer.sample(10)
        self.assertCountEqual([items.index(t) for t in batch], range(10))

    def test_underfull_buffer(self) -> None:
        buffer = ReplayBuffer(capacity=10)
        buffer.extend(sample_transitions(3))
        with self.assertRaises(BufferNotReadyError):
            buffer.sample(4)

    def test_uniform_sampling_frequencies(self) -> None:
        buffer = ReplayBuffer(capacity=20, seed=2)
        buffer.extend(sample_transitions(20))
        counts = Counter()
        draws = 0
        while draws < 100_000:
            for t in buffer.sample(4):
                counts[(t.episode, t.step)] += 1
            draws += 4
        expected = draws / 20
        sigma = np.sqrt(draws * (1 / 20) * (19 / 20))
        for count in counts.values():
            self.assertLess(abs(count - expected), 4 * sigma)

    def test_state_round_trip(self) -> None:
        game = sample_game()
        buffer = ReplayBuffer(capacity=8, seed=3)
        buffer.extend(sample_transitions(12))
        buffer.sample(2)
        restored = ReplayBuffer(capacity=8, seed=0)
        restored.load_state_dict(buffer.state_dict(game), game)
        self.assertEqual(restored.digest(game), buffer.digest(game))
        self.assertEqual(restored.sample(5), buffer.sample(5))
