"""
Expert dataset persistence (line-delimited JSON with a manifest header),
episode-preserving subsampling and the rollout replay buffer.
"""
import hashlib
import json
import logging
import os
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from games.exceptions import (
    ArgumentError,
    BufferNotReadyError,
    DatasetParseError,
    ManifestMismatchError
)
from games.markov_game import MarkovGame, Transition, split_episodes

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
RECORD_FIELDS = (
    "episode", "step", "state", "joint_action", "next_state", "done", "rewards"
)


@dataclass(frozen=True)
class DatasetManifest:
    env_hash: str
    solver_seed: int
    n_transitions: int
    schema_version: int = SCHEMA_VERSION
    metadata: dict = field(default_factory=dict)

    @staticmethod
    def validate_manifest(
        n_transitions: int,
        schema_version: int,
        error_to_raise: type(Exception)
    ) -> None:
        if n_transitions < 0:
            raise error_to_raise("n_transitions must be non-negative.")
        if schema_version != SCHEMA_VERSION:
            raise error_to_raise(
                f"unsupported dataset schema version {schema_version}."
            )


def encode_transition(env: MarkovGame, transition: Transition) -> dict:
    return {
        "episode": transition.episode,
        "step": transition.step,
        "state": env.state_to_json(transition.state),
        "joint_action": list(transition.joint_action),
        "next_state": env.state_to_json(transition.next_state),
        "done": transition.done,
        "rewards": (
            None if transition.true_rewards is None
            else list(transition.true_rewards)
        ),
    }


def decode_transition(env: MarkovGame, record: dict) -> Transition:
    rewards = record["rewards"]
    return Transition(
        state=env.state_from_json(record["state"]),
        joint_action=tuple(record["joint_action"]),
        next_state=env.state_from_json(record["next_state"]),
        done=record["done"],
        true_rewards=None if rewards is None else tuple(rewards),
        episode=record["episode"],
        step=record["step"],
    )


def write_dataset(
    path: str,
    transitions: Sequence[Transition],
    manifest: DatasetManifest,
    env: MarkovGame
) -> None:
    """Header line ``{"manifest": ...}`` followed by one transition per line."""
    DatasetManifest.validate_manifest(
        manifest.n_transitions, manifest.schema_version, ArgumentError
    )
    if manifest.n_transitions != len(transitions):
        raise ArgumentError(
            f"manifest announces {manifest.n_transitions} transitions, "
            f"got {len(transitions)}."
        )
    tmp_path = f"{path}.tmp"
    with open(tmp_path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"manifest": asdict(manifest)}, sort_keys=True))
        handle.write("\n")
        for transition in transitions:
            handle.write(json.dumps(encode_transition(env, transition), sort_keys=True))
            handle.write("\n")
    os.replace(tmp_path, path)
    logger.info("wrote %d transitions to %s", len(transitions), path)


def _parse_line(text: str, number: int) -> dict:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as error:
        raise DatasetParseError(f"malformed JSON ({error.msg}).", number) from error
    if not isinstance(payload, dict):
        raise DatasetParseError("record is not an object.", number)
    return payload


def read_dataset(
    path: str,
    env: MarkovGame,
    expected_env_hash: str | None = None
) -> tuple[list[Transition], DatasetManifest]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise DatasetParseError("missing manifest header.", 1)

    header = _parse_line(lines[0], 1)
    try:
        manifest = DatasetManifest(**header["manifest"])
    except (KeyError, TypeError) as error:
        raise DatasetParseError(f"invalid manifest header ({error}).", 1) from error
    try:
        DatasetManifest.validate_manifest(
            manifest.n_transitions, manifest.schema_version, ArgumentError
        )
    except ArgumentError as error:
        raise DatasetParseError(str(error), 1) from error
    if expected_env_hash is not None and manifest.env_hash != expected_env_hash:
        raise ManifestMismatchError(
            f"dataset {path} was generated for environment "
            f"{manifest.env_hash[:12]}, not {expected_env_hash[:12]}."
        )

    transitions = []
    for number, text in enumerate(lines[1:], start=2):
        payload = _parse_line(text, number)
        missing = [key for key in RECORD_FIELDS if key not in payload]
        if missing:
            raise DatasetParseError(f"missing fields {missing}.", number)
        try:
            transitions.append(decode_transition(env, payload))
        except (ValueError, TypeError, KeyError) as error:
            raise DatasetParseError(f"invalid record ({error}).", number) from error
    if len(transitions) != manifest.n_transitions:
        raise DatasetParseError(
            f"expected {manifest.n_transitions} transitions, "
            f"found {len(transitions)}.",
            len(lines) + 1
        )
    return transitions, manifest


def subsample(
    transitions: Sequence[Transition],
    n_steps: int,
    seed: int
) -> list[Transition]:
    """Exactly ``n_steps`` transitions built from randomly chosen episodes.

    Whole episodes are taken while they fit; the last one may be cut to a
    prefix. Chosen episodes keep their original order.
    """
    if not 0 <= n_steps <= len(transitions):
        raise ArgumentError(
            f"cannot subsample {n_steps} transitions from {len(transitions)}."
        )
    episodes = split_episodes(transitions)
    order = np.random.default_rng(seed).permutation(len(episodes))
    chosen: dict[int, list[Transition]] = {}
    total = 0
    for index in order:
        if total == n_steps:
            break
        episode = episodes[int(index)]
        take = min(len(episode), n_steps - total)
        chosen[int(index)] = episode[:take]
        total += take
    return [t for index in sorted(chosen) for t in chosen[index]]


class ReplayBuffer:
    """FIFO buffer of rollout transitions with uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0) -> None:
        if capacity < 1:
            raise ArgumentError("buffer capacity must be positive.")
        self.capacity = capacity
        self.items: deque[Transition] = deque(maxlen=capacity)
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, transition: Transition) -> None:
        self.items.append(transition)

    def extend(self, transitions: Iterable[Transition]) -> None:
        self.items.extend(transitions)

    def sample(self, batch_size: int) -> list[Transition]:
        """Uniform batch without replacement."""
        if batch_size < 1:
            raise ArgumentError("batch size must be positive.")
        if len(self.items) < batch_size:
            raise BufferNotReadyError(
                f"buffer holds {len(self.items)} transitions, "
                f"{batch_size} requested."
            )
        indices = self.rng.choice(len(self.items), size=batch_size, replace=False)
        return [self.items[int(index)] for index in indices]

    def digest(self, env: MarkovGame) -> str:
        payload = json.dumps(
            [encode_transition(env, t) for t in self.items], sort_keys=True
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def state_dict(self, env: MarkovGame) -> dict[str, Any]:
        return {
            "capacity": self.capacity,
            "items": [encode_transition(env, t) for t in self.items],
            "rng": self.rng.bit_generator.state,
            "digest": self.digest(env),
        }

    def load_state_dict(self, state: dict[str, Any], env: MarkovGame) -> None:
        if state["capacity"] != self.capacity:
            raise ArgumentError("buffer capacity differs from the checkpoint.")
        self.items.clear()
        self.items.extend(decode_transition(env, record) for record in state["items"])
        self.rng.bit_generator.state = state["rng"]
        if self.digest(env) != state["digest"]:
            raise ManifestMismatchError("restored buffer digest does not match.")
