"""
Gems: a general-sum gridworld where Red (agent 0) and Blue (agent 1) collect
gems of their own colour, and share a larger reward for purple gems that can
only be taken while both agents stand on purple gems at the same time.

Layout maps use '.' for empty cells, 'R' / 'B' / 'P' for gems and '1' / '2'
for the agents' starting cells.
"""
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np
from django.conf import settings

from games.exceptions import ArgumentError, TabularUnsupportedError
from games.markov_game import GameSpec, MarkovGame, TabularModel, joint_index

STOP, UP, DOWN, LEFT, RIGHT = range(5)
ACTION_NAMES = ("stop", "up", "down", "left", "right")
MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))

RED, BLUE, PURPLE = "R", "B", "P"
AGENT_COLORS = (RED, BLUE)
AGENT_MARKS = ("1", "2")
CHANNELS = 5

Cell = tuple[int, int]


@dataclass(frozen=True)
class Gem:
    color: str
    cell: Cell


@dataclass(frozen=True)
class GemsLayout:
    gems: tuple[Gem, ...]
    starts: tuple[Cell, Cell]


def parse_layout(text: str) -> tuple[int, int, GemsLayout]:
    """Parse an ASCII map into (width, height, layout)."""
    rows = [row.strip() for row in text.strip().splitlines() if row.strip()]
    if not rows:
        raise ArgumentError("layout map is empty.")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise ArgumentError("layout rows must all have the same width.")
    gems = []
    starts: dict[str, Cell] = {}
    for r, row in enumerate(rows):
        for c, char in enumerate(row):
            if char in (RED, BLUE, PURPLE):
                gems.append(Gem(char, (r, c)))
            elif char in AGENT_MARKS:
                if char in starts:
                    raise ArgumentError(f"agent '{char}' placed twice.")
                starts[char] = (r, c)
            elif char != ".":
                raise ArgumentError(f"unknown layout character '{char}'.")
    if set(starts) != set(AGENT_MARKS):
        raise ArgumentError("layout must place both agents ('1' and '2').")
    order = {RED: 0, BLUE: 1, PURPLE: 2}
    gems.sort(key=lambda gem: (order[gem.color], gem.cell))
    layout = GemsLayout(tuple(gems), (starts["1"], starts["2"]))
    return width, len(rows), layout


@dataclass(frozen=True)
class GemsConfig:
    """Gems parameters.

    When ``layout`` is given it fixes the grid size and gem counts.
    """

    width: int = 5
    height: int = 5
    n_red: int = 2
    n_blue: int = 2
    n_purple: int = 2
    purple_reward: float = 6.0
    color_reward: float = 1.0
    horizon: int = 45
    seed: int = 0
    placement: str = "random"
    layout: str | None = None
    gamma: float = 0.95

    @staticmethod
    def validate_config(
        width: int,
        height: int,
        gem_counts: Sequence[int],
        horizon: int,
        placement: str,
        error_to_raise: type(Exception)
    ) -> None:
        if width < 1 or height < 1:
            raise error_to_raise("width and height must be positive.")
        if any(count < 0 for count in gem_counts):
            raise error_to_raise("gem counts must be non-negative.")
        if sum(gem_counts) + 2 > width * height:
            raise error_to_raise(
                "gems plus both agent starts do not fit on the grid."
            )
        if horizon < 1:
            raise error_to_raise("horizon must be positive.")
        if placement not in ("fixed", "random"):
            raise error_to_raise("placement must be 'fixed' or 'random'.")

    def __post_init__(self) -> None:
        if self.layout is not None:
            width, height, layout = parse_layout(self.layout)
            counts = {
                color: sum(gem.color == color for gem in layout.gems)
                for color in (RED, BLUE, PURPLE)
            }
            object.__setattr__(self, "width", width)
            object.__setattr__(self, "height", height)
            object.__setattr__(self, "n_red", counts[RED])
            object.__setattr__(self, "n_blue", counts[BLUE])
            object.__setattr__(self, "n_purple", counts[PURPLE])
        GemsConfig.validate_config(
            self.width,
            self.height,
            (self.n_red, self.n_blue, self.n_purple),
            self.horizon,
            self.placement,
            ArgumentError
        )

    @property
    def cells(self) -> int:
        return self.width * self.height

    @property
    def gem_count(self) -> int:
        return self.n_red + self.n_blue + self.n_purple

    @classmethod
    def from_dict(cls, data: dict) -> "GemsConfig":
        fields = {key: value for key, value in data.items() if key != "type"}
        return cls(**fields)

    def to_dict(self) -> dict:
        return {
            "type": "gems",
            "width": self.width,
            "height": self.height,
            "n_red": self.n_red,
            "n_blue": self.n_blue,
            "n_purple": self.n_purple,
            "purple_reward": self.purple_reward,
            "color_reward": self.color_reward,
            "horizon": self.horizon,
            "seed": self.seed,
            "placement": self.placement,
            "layout": self.layout,
            "gamma": self.gamma,
        }


def random_layout(cfg: GemsConfig, rng: np.random.Generator) -> GemsLayout:
    order = rng.permutation(cfg.cells)
    cells = [divmod(int(index), cfg.width) for index in order]
    starts = (cells[0], cells[1])
    colors = [RED] * cfg.n_red + [BLUE] * cfg.n_blue + [PURPLE] * cfg.n_purple
    gems = tuple(Gem(color, cell) for color, cell in zip(colors, cells[2:]))
    return GemsLayout(gems, starts)


def fixed_layout(cfg: GemsConfig) -> GemsLayout:
    if cfg.layout is not None:
        return parse_layout(cfg.layout)[2]
    return random_layout(cfg, np.random.default_rng(cfg.seed))


@dataclass(frozen=True)
class GemsState:
    positions: tuple[Cell, Cell]
    gems: tuple[Gem, ...]
    alive: tuple[bool, ...]
    step: int = 0

    @classmethod
    def initial(cls, layout: GemsLayout) -> "GemsState":
        return cls(
            positions=layout.starts,
            gems=layout.gems,
            alive=(True,) * len(layout.gems),
        )


def _move(cell: Cell, action: int, cfg: GemsConfig) -> Cell:
    dr, dc = MOVES[action]
    r, c = cell[0] + dr, cell[1] + dc
    if 0 <= r < cfg.height and 0 <= c < cfg.width:
        return r, c
    return cell


def gems_step(
    state: GemsState,
    a: Sequence[int],
    cfg: GemsConfig
) -> tuple[GemsState, np.ndarray, bool]:
    """Move both agents, then resolve own-colour gems, then purple gems."""
    if state.step >= cfg.horizon:
        raise ArgumentError("episode already reached its horizon.")
    if len(a) != 2 or any(not 0 <= int(action) < len(MOVES) for action in a):
        raise ArgumentError(f"invalid joint action {tuple(a)}.")
    positions = tuple(
        _move(cell, int(action), cfg) for cell, action in zip(state.positions, a)
    )
    alive = list(state.alive)
    rewards = np.zeros(2)

    for agent, color in enumerate(AGENT_COLORS):
        for g, gem in enumerate(state.gems):
            if alive[g] and gem.color == color and gem.cell == positions[agent]:
                alive[g] = False
                rewards[agent] += cfg.color_reward

    stood_on = [
        [
            g for g, gem in enumerate(state.gems)
            if alive[g] and gem.color == PURPLE and gem.cell == positions[agent]
        ]
        for agent in range(2)
    ]
    if stood_on[0] and stood_on[1]:
        for g in set(stood_on[0]) | set(stood_on[1]):
            alive[g] = False
        rewards += cfg.purple_reward

    step = state.step + 1
    next_state = GemsState(positions, state.gems, tuple(alive), step)
    return next_state, rewards, step == cfg.horizon


def gems_encode(state: GemsState, cfg: GemsConfig, perspective: int) -> np.ndarray:
    """Flattened channels: self, other, red gems, blue gems, purple gems."""
    grid = np.zeros((CHANNELS, cfg.height, cfg.width))
    own = state.positions[perspective]
    other = state.positions[1 - perspective]
    grid[0, own[0], own[1]] = 1.0
    grid[1, other[0], other[1]] = 1.0
    channel = {RED: 2, BLUE: 3, PURPLE: 4}
    for gem, alive in zip(state.gems, state.alive):
        if alive:
            grid[channel[gem.color], gem.cell[0], gem.cell[1]] = 1.0
    return grid.reshape(-1)


def render(state: GemsState, cfg: GemsConfig) -> str:
    rows = [["."] * cfg.width for _ in range(cfg.height)]
    for gem, alive in zip(state.gems, state.alive):
        if alive:
            rows[gem.cell[0]][gem.cell[1]] = gem.color
    for mark, (r, c) in zip(AGENT_MARKS, state.positions):
        rows[r][c] = "*" if rows[r][c] in AGENT_MARKS else mark
    return "\n".join("".join(row) for row in rows)


class GemsStateIndex:
    """Bijection between fixed-layout Gems states and integer ids.

    id = ((step · 2^G + alive_mask) · C + cell₁) · C + cell₂, with step
    buckets 0..horizon and C the number of grid cells.
    """

    def __init__(self, cfg: GemsConfig, layout: GemsLayout) -> None:
        self.cfg = cfg
        self.layout = layout
        self.masks = 1 << len(layout.gems)
        self.states_per_step = self.masks * cfg.cells * cfg.cells
        self.state_count = self.states_per_step * (cfg.horizon + 1)

    def _cell(self, cell: Cell) -> int:
        return cell[0] * self.cfg.width + cell[1]

    def state_id(self, state: GemsState) -> int:
        mask = sum(1 << g for g, alive in enumerate(state.alive) if alive)
        core = (mask * self.cfg.cells + self._cell(state.positions[0])) \
            * self.cfg.cells + self._cell(state.positions[1])
        return state.step * self.states_per_step + core

    def state_from_id(self, s: int) -> GemsState:
        if not 0 <= s < self.state_count:
            raise ArgumentError(f"state id {s} out of range.")
        step, core = divmod(s, self.states_per_step)
        rest, second = divmod(core, self.cfg.cells)
        mask, first = divmod(rest, self.cfg.cells)
        alive = tuple(bool(mask >> g & 1) for g in range(len(self.layout.gems)))
        return GemsState(
            positions=(
                divmod(first, self.cfg.width),
                divmod(second, self.cfg.width)
            ),
            gems=self.layout.gems,
            alive=alive,
            step=step,
        )


def gems_enumerate_states(cfg: GemsConfig) -> GemsStateIndex:
    max_cells = getattr(settings, "MAMQL_TABULAR_MAX_CELLS", 16)
    max_gems = getattr(settings, "MAMQL_TABULAR_MAX_GEMS", 8)
    if cfg.placement != "fixed":
        raise TabularUnsupportedError(
            "tabular Gems requires a fixed layout."
        )
    if cfg.cells > max_cells or cfg.gem_count > max_gems:
        raise TabularUnsupportedError(
            f"{cfg.width}x{cfg.height} grid with {cfg.gem_count} gems exceeds "
            f"the tabular cap ({max_cells} cells, {max_gems} gems)."
        )
    return GemsStateIndex(cfg, fixed_layout(cfg))


class GemsGame(MarkovGame):
    def __init__(self, cfg: GemsConfig) -> None:
        self.cfg = cfg
        self._index = None
        self._model = None
        try:
            self._index = gems_enumerate_states(cfg)
        except TabularUnsupportedError:
            pass
        self.spec = GameSpec(
            n_agents=2,
            action_count=len(MOVES),
            gamma=cfg.gamma,
            horizon=cfg.horizon,
            state_space_size=(
                None if self._index is None else self._index.state_count
            ),
        )
        self._layout = fixed_layout(cfg) if cfg.placement == "fixed" else None

    @property
    def is_tabular(self) -> bool:
        return self._index is not None

    @property
    def feature_size(self) -> int:
        return CHANNELS * self.cfg.cells

    def reset(self, rng: np.random.Generator) -> GemsState:
        if self._layout is not None:
            return GemsState.initial(self._layout)
        return GemsState.initial(random_layout(self.cfg, rng))

    def step(
        self,
        state: GemsState,
        joint_action: Sequence[int],
        rng: np.random.Generator | None = None
    ) -> tuple[GemsState, np.ndarray, bool]:
        return gems_step(state, joint_action, self.cfg)

    def features(self, state: GemsState, agent: int) -> np.ndarray:
        return gems_encode(state, self.cfg, agent)

    def _require_index(self) -> GemsStateIndex:
        if self._index is None:
            return gems_enumerate_states(self.cfg)
        return self._index

    def state_id(self, state: GemsState) -> int:
        return self._require_index().state_id(state)

    def state_from_id(self, s: int) -> GemsState:
        return self._require_index().state_from_id(s)

    def state_to_json(self, state: GemsState) -> Any:
        if self._index is not None:
            return self._index.state_id(state)
        return {
            "positions": [list(cell) for cell in state.positions],
            "gems": [[gem.color, *gem.cell] for gem in state.gems],
            "alive": list(state.alive),
            "step": state.step,
        }

    def state_from_json(self, payload: Any) -> GemsState:
        if isinstance(payload, int):
            return self.state_from_id(payload)
        return GemsState(
            positions=tuple(tuple(cell) for cell in payload["positions"]),
            gems=tuple(
                Gem(color, (r, c)) for color, r, c in payload["gems"]
            ),
            alive=tuple(payload["alive"]),
            step=payload["step"],
        )

    def config_dict(self) -> dict:
        return self.cfg.to_dict()

    def tabular_model(self) -> TabularModel:
        if self._model is None:
            self._model = self._build_model()
        return self._model

    def _build_model(self) -> TabularModel:
        index = self._require_index()
        per_step = index.states_per_step
        joint_actions = [
            (a0, a1) for a0 in range(len(MOVES)) for a1 in range(len(MOVES))
        ]
        joint = len(joint_actions)
        core_next = np.zeros((per_step, joint), dtype=np.int64)
        core_rewards = np.zeros((2, per_step, joint))
        # dynamics do not depend on the step counter
        probe = replace(self.cfg, horizon=self.cfg.horizon + 1)
        for core in range(per_step):
            state = index.state_from_id(core)
            for a in joint_actions:
                j = joint_index(a, len(MOVES))
                next_state, rewards, _ = gems_step(state, a, probe)
                core_next[core, j] = index.state_id(
                    replace(next_state, step=0)
                )
                core_rewards[:, core, j] = rewards

        horizon = self.cfg.horizon
        total = index.state_count
        rewards = np.zeros((2, total, joint))
        successors = np.zeros((total, joint, 1), dtype=np.int64)
        dones = np.zeros((total, joint), dtype=bool)
        for step in range(horizon + 1):
            block = slice(step * per_step, (step + 1) * per_step)
            if step == horizon:
                successors[block, :, 0] = np.arange(
                    step * per_step, (step + 1) * per_step
                )[:, None]
                dones[block] = True
                continue
            rewards[:, block] = core_rewards
            successors[block, :, 0] = core_next + (step + 1) * per_step
            dones[block] = step + 1 == horizon
        initial = np.zeros(total)
        initial[index.state_id(GemsState.initial(index.layout))] = 1.0
        return TabularModel(
            spec=self.spec,
            rewards=rewards,
            successors=successors,
            probs=np.ones((total, joint, 1)),
            dones=dones,
            initial=initial,
        )
