"""Key/door grid tasks with a partial egocentric view.

Layout text format (one row per line, all rows equal width)::

    #  wall            .  floor
    A  agent start     K  key
    D  locked door     G  goal

Actions: 0 up, 1 down, 2 left, 3 right, 4 pick up (on the key cell),
5 toggle (opens an orthogonally adjacent door when holding the key).
The goal pays ``goal_reward - decay * t`` when entered at step ``t``
(1-based) and ends the episode.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..mdp_core import TabularMDP
from .base import EpisodeStep, ExportUnavailableError, Featurizer

MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))
PICKUP, TOGGLE = 4, 5
N_ACTIONS = 6
DEFAULT_EXPORT_CAP = 5000

Pos = tuple[int, int]


@dataclass(frozen=True)
class GridTaskConfig:
    width: int
    height: int
    walls: frozenset
    agent: Pos
    goal: Pos
    key: Pos | None = None
    door: Pos | None = None
    view_radius: int = 1
    goal_reward: float = 1.0
    decay: float = 0.0
    step_penalty: float = 0.0
    horizon: int = 50
    gamma: float = 0.95

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        if self.view_radius < 1:
            raise ValueError("view_radius must be >= 1")
        for name in ("agent", "goal", "key", "door"):
            pos = getattr(self, name)
            if pos is None:
                continue
            x, y = pos
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"{name} position {pos} out of bounds")
            if pos in self.walls:
                raise ValueError(f"{name} placed on a wall")
        if (self.key is None) != (self.door is None):
            raise ValueError("key and door must be given together")

    @classmethod
    def from_layout(cls, text: str, **kwargs) -> "GridTaskConfig":
        rows = [ln for ln in (r.rstrip("\n") for r in text.strip("\n").splitlines()) if ln]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("layout rows must be non-empty and of equal width")
        walls, found = set(), {}
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch == "#":
                    walls.add((x, y))
                elif ch in "AKDG":
                    if ch in found:
                        raise ValueError(f"duplicate {ch!r} in layout")
                    found[ch] = (x, y)
                elif ch != ".":
                    raise ValueError(f"unknown layout character {ch!r}")
        for ch in "AG":
            if ch not in found:
                raise ValueError(f"layout needs an {ch!r}")
        return cls(len(rows[0]), len(rows), frozenset(walls), found["A"], found["G"],
                   found.get("K"), found.get("D"), **kwargs)


class GridObservation(NamedTuple):
    window: tuple[str, ...]
    has_key: bool


class GridState(NamedTuple):
    pos: Pos
    has_key: bool
    door_open: bool


class GridTask:
    def __init__(self, config: GridTaskConfig, export_cap: int = DEFAULT_EXPORT_CAP):
        self.config = config
        self.export_cap = export_cap
        self.n_actions = N_ACTIONS
        self.horizon = config.horizon
        self.gamma = config.gamma
        self.featurizer = Featurizer(validate=self._check_obs)
        c = config
        self.cells = [(x, y) for y in range(c.height) for x in range(c.width) if (x, y) not in c.walls]
        self._states = [GridState(p, k, d) for p in self.cells for k in (False, True) for d in (False, True)]
        self._index = {st: i for i, st in enumerate(self._states)}
        self.n_states = len(self._states)
        self._state = GridState(c.agent, False, False)
        self._t = 0

    @staticmethod
    def _check_obs(obs):
        if not isinstance(obs, GridObservation):
            raise ValueError(f"expected a GridObservation, got {type(obs).__name__}")

    # -- dynamics ----------------------------------------------------------

    def _blocked(self, pos: Pos, door_open: bool) -> bool:
        c = self.config
        x, y = pos
        if not (0 <= x < c.width and 0 <= y < c.height) or pos in c.walls:
            return True
        return pos == c.door and not door_open

    def _next(self, st: GridState, action: int) -> GridState:
        c = self.config
        if action < 4:
            dx, dy = MOVES[action]
            nxt = (st.pos[0] + dx, st.pos[1] + dy)
            return st if self._blocked(nxt, st.door_open) else st._replace(pos=nxt)
        if action == PICKUP:
            if c.key is not None and st.pos == c.key and not st.has_key:
                return st._replace(has_key=True)
            return st
        if action == TOGGLE:
            if c.door is not None and st.has_key and not st.door_open:
                if abs(st.pos[0] - c.door[0]) + abs(st.pos[1] - c.door[1]) == 1:
                    return st._replace(door_open=True)
            return st
        raise ValueError(f"invalid action {action}")

    # -- observation -------------------------------------------------------

    def _cell_char(self, pos: Pos, st: GridState) -> str:
        c = self.config
        x, y = pos
        if not (0 <= x < c.width and 0 <= y < c.height) or pos in c.walls:
            return "#"
        if pos == c.door:
            return "d" if st.door_open else "D"
        if pos == c.key and not st.has_key:
            return "K"
        if pos == c.goal:
            return "G"
        return "."

    def observe(self, st: GridState | None = None) -> GridObservation:
        st = st or self._state
        r = self.config.view_radius
        x0, y0 = st.pos
        window = tuple(
            "".join(self._cell_char((x0 + dx, y0 + dy), st) for dx in range(-r, r + 1))
            for dy in range(-r, r + 1)
        )
        return GridObservation(window, st.has_key)

    # -- simulation --------------------------------------------------------

    @property
    def state_id(self) -> int:
        return self._index[self._state]

    @property
    def start_state(self) -> int:
        return self._index[GridState(self.config.agent, False, False)]

    def state(self, state_id: int) -> GridState:
        return self._states[state_id]

    def location(self, state_id: int) -> str:
        x, y = self._states[state_id].pos
        return f"{x},{y}"

    def goal_distance(self, state_id: int) -> int:
        (x, y), (gx, gy) = self._states[state_id].pos, self.config.goal
        return abs(x - gx) + abs(y - gy)

    def reset(self, rng: np.random.Generator | None = None) -> GridObservation:
        self._state = GridState(self.config.agent, False, False)
        self._t = 0
        return self.observe()

    def step(self, action: int) -> EpisodeStep:
        c = self.config
        obs = self.observe()
        prev = self._state
        self._state = self._next(prev, int(action))
        self._t += 1
        reward = c.step_penalty
        terminal = self._state.pos == c.goal
        if terminal:
            reward += c.goal_reward - c.decay * self._t
        done = terminal or self._t >= self.horizon
        info = {"location": self.location(self._index[prev]), "terminal": terminal,
                "truncated": done and not terminal}
        return EpisodeStep(obs, int(action), reward, self.observe(), done, info)

    def render(self) -> str:
        c = self.config
        rows = []
        for y in range(c.height):
            row = ""
            for x in range(c.width):
                row += "A" if (x, y) == self._state.pos else self._cell_char((x, y), self._state)
            rows.append(row)
        return "\n".join(rows)

    def export_mdp(self) -> TabularMDP:
        """Exact MDP over (position, has_key, door_open).

        Unavailable when the goal reward decays (the reward then depends on
        elapsed time) or when the state count exceeds ``export_cap``.
        """
        c = self.config
        if c.decay != 0.0:
            raise ExportUnavailableError("decaying goal reward is time-dependent; no Markov export")
        if self.n_states > self.export_cap:
            raise ExportUnavailableError(f"{self.n_states} states exceed export cap {self.export_cap}")
        S = self.n_states
        P = np.zeros((S, N_ACTIONS, S))
        R = np.zeros((S, N_ACTIONS))
        terminals = set()
        for i, st in enumerate(self._states):
            if st.pos == c.goal:
                P[i, :, i] = 1.0
                terminals.add(i)
                continue
            for a in range(N_ACTIONS):
                nxt = self._next(st, a)
                P[i, a, self._index[nxt]] = 1.0
                R[i, a] = c.step_penalty + (c.goal_reward if nxt.pos == c.goal else 0.0)
        return TabularMDP(P, R, c.gamma, frozenset(terminals))


def build_grid_task(config: GridTaskConfig, export_cap: int = DEFAULT_EXPORT_CAP) -> GridTask:
    return GridTask(config, export_cap)
