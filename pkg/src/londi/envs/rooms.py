"""RoomsWorld: a corridor leading to a hallway that opens onto several rooms.

Only one room holds the goal, so the hallway is the bottleneck decision: a
wrong door costs a dead-end detour. Locations::

    corridor0 -> ... -> corridor{L-1} -> hallway -> room{r}_0 -> ... -> room{r}_{D-1}

Actions (``n_actions = n_rooms``): in corridor and room cells action 0 moves
forward, action 1 moves back and any other action stays put; in the hallway
action ``r`` enters room ``r``. Reaching the end of the goal room is terminal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ..mdp_core import TabularMDP
from .base import EpisodeStep, Featurizer

HALLWAY = "hallway"


def room_cell(room: int, depth: int) -> str:
    return f"room{room}_{depth}"


@dataclass(frozen=True)
class RoomsWorldConfig:
    n_rooms: int = 4
    goal_room: int = 2
    corridor_length: int = 2
    room_depth: int = 3
    goal_reward: float = 1.0
    subgoal_rewards: tuple[tuple[str, float], ...] | None = None
    step_penalty: float = -0.01
    horizon: int = 40
    gamma: float = 0.95

    def __post_init__(self):
        if self.n_rooms < 2:
            raise ValueError("n_rooms must be at least 2")
        if not 0 <= self.goal_room < self.n_rooms:
            raise ValueError(f"goal_room {self.goal_room} out of range")
        if self.corridor_length < 0 or self.room_depth < 1:
            raise ValueError("corridor_length must be >= 0 and room_depth >= 1")
        if self.horizon < self.n_rooms + 2:
            raise ValueError("horizon must be at least n_rooms + 2")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.subgoal_rewards is None:
            object.__setattr__(self, "subgoal_rewards", ((room_cell(self.goal_room, 0), 0.5),))
        else:
            object.__setattr__(self, "subgoal_rewards",
                               tuple((str(loc), float(r)) for loc, r in self.subgoal_rewards))

    @property
    def goal(self) -> str:
        return room_cell(self.goal_room, self.room_depth - 1)


class RoomsObservation(NamedTuple):
    location: str
    collected: frozenset


@dataclass
class RoomsWorld:
    """Simulator with an exact TabularMDP export; state = (location, subgoals collected)."""

    config: RoomsWorldConfig
    locations: list[str] = field(init=False)
    n_actions: int = field(init=False)

    def __post_init__(self):
        c = self.config
        self.locations = [f"corridor{i}" for i in range(c.corridor_length)] + [HALLWAY]
        for r in range(c.n_rooms):
            self.locations += [room_cell(r, j) for j in range(c.room_depth)]
        self._loc_index = {loc: i for i, loc in enumerate(self.locations)}
        self.subgoals = [loc for loc, _ in c.subgoal_rewards]
        for loc in self.subgoals:
            if loc not in self._loc_index:
                raise ValueError(f"subgoal location {loc!r} does not exist")
        self._subgoal_reward = dict(c.subgoal_rewards)
        self.n_actions = max(c.n_rooms, 2)
        self.horizon = c.horizon
        self.gamma = c.gamma
        self._n_masks = 2 ** len(self.subgoals)
        self.n_states = len(self.locations) * self._n_masks
        self.start = self.locations[0]

        fixed = {}
        for loc in self.locations:
            for mask in range(self._n_masks):
                fixed[RoomsObservation(loc, self._collected(mask))] = self._sid(loc, mask)
        self.featurizer = Featurizer(fixed, validate=self._check_obs)
        self._mdp = self._build_mdp()
        self._dist = self._goal_distances()
        self._loc = self.start
        self._mask = 0
        self._t = 0

    # -- state indexing ----------------------------------------------------

    def _collected(self, mask: int) -> frozenset:
        return frozenset(loc for i, loc in enumerate(self.subgoals) if mask >> i & 1)

    def _sid(self, loc: str, mask: int) -> int:
        return self._loc_index[loc] * self._n_masks + mask

    def decode(self, state_id: int) -> RoomsObservation:
        li, mask = divmod(int(state_id), self._n_masks)
        return RoomsObservation(self.locations[li], self._collected(mask))

    def location(self, state_id: int) -> str:
        return self.decode(state_id).location

    def location_map(self) -> dict[int, str]:
        return {s: self.location(s) for s in range(self.n_states)}

    @property
    def start_state(self) -> int:
        return self._sid(self.start, 0)

    @property
    def hallway_states(self) -> list[int]:
        return [s for s in range(self.n_states) if self.location(s) == HALLWAY]

    def _check_obs(self, obs):
        if not isinstance(obs, RoomsObservation):
            raise ValueError(f"expected a RoomsObservation, got {type(obs).__name__}")

    # -- dynamics ----------------------------------------------------------

    def _move(self, loc: str, action: int) -> str:
        c = self.config
        if loc == HALLWAY:
            return room_cell(action, 0) if action < c.n_rooms else loc
        if loc.startswith("corridor"):
            i = int(loc[len("corridor"):])
            if action == 0:
                return f"corridor{i + 1}" if i + 1 < c.corridor_length else HALLWAY
            if action == 1:
                return f"corridor{i - 1}" if i > 0 else loc
            return loc
        room, depth = (int(x) for x in loc[len("room"):].split("_"))
        if action == 0:
            return room_cell(room, min(depth + 1, c.room_depth - 1))
        if action == 1:
            return room_cell(room, depth - 1) if depth > 0 else HALLWAY
        return loc

    def _transition(self, loc: str, mask: int, action: int) -> tuple[str, int, float, bool]:
        c = self.config
        nxt = self._move(loc, action)
        reward = c.step_penalty
        if nxt in self._subgoal_reward:
            bit = 1 << self.subgoals.index(nxt)
            if not mask & bit:
                mask |= bit
                reward += self._subgoal_reward[nxt]
        terminal = nxt == c.goal
        if terminal:
            reward += c.goal_reward
        return nxt, mask, reward, terminal

    def _build_mdp(self) -> TabularMDP:
        S, A = self.n_states, self.n_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        terminals = set()
        for loc in self.locations:
            for mask in range(self._n_masks):
                s = self._sid(loc, mask)
                if loc == self.config.goal:
                    P[s, :, s] = 1.0
                    terminals.add(s)
                    continue
                for a in range(A):
                    nxt, m2, r, _ = self._transition(loc, mask, a)
                    P[s, a, self._sid(nxt, m2)] = 1.0
                    R[s, a] = r
        return TabularMDP(P, R, self.config.gamma, frozenset(terminals))

    def _goal_distances(self) -> dict[str, int]:
        """Shortest number of moves from each location to the goal (BFS on reversed moves)."""
        preds: dict[str, set[str]] = {loc: set() for loc in self.locations}
        for loc in self.locations:
            for a in range(self.n_actions):
                preds[self._move(loc, a)].add(loc)
        dist = {self.config.goal: 0}
        queue = deque([self.config.goal])
        while queue:
            cur = queue.popleft()
            for p in preds[cur]:
                if p not in dist:
                    dist[p] = dist[cur] + 1
                    queue.append(p)
        return dist

    def export_mdp(self) -> TabularMDP:
        return self._mdp

    def goal_distance(self, state_id: int) -> int:
        return self._dist[self.location(state_id)]

    # -- simulation --------------------------------------------------------

    @property
    def state_id(self) -> int:
        return self._sid(self._loc, self._mask)

    @property
    def observation(self) -> RoomsObservation:
        return RoomsObservation(self._loc, self._collected(self._mask))

    def reset(self, rng: np.random.Generator | None = None) -> RoomsObservation:
        self._loc, self._mask, self._t = self.start, 0, 0
        return self.observation

    def step(self, action: int) -> EpisodeStep:
        if not 0 <= action < self.n_actions:
            raise ValueError(f"invalid action {action}")
        obs = self.observation
        nxt, mask, reward, terminal = self._transition(self._loc, self._mask, int(action))
        self._loc, self._mask = nxt, mask
        self._t += 1
        done = terminal or self._t >= self.horizon
        info = {"location": obs.location, "terminal": terminal, "truncated": done and not terminal}
        return EpisodeStep(obs, int(action), reward, self.observation, done, info)

    def render(self, obs: RoomsObservation | None = None) -> str:
        """Text view of the layout with the agent marked; debugging aid only."""
        obs = obs or self.observation
        c = self.config

        def cell(loc):
            return "[A]" if loc == obs.location else ("[G]" if loc == c.goal else "[ ]")

        lines = [" ".join(cell(f"corridor{i}") for i in range(c.corridor_length)) + " " + cell(HALLWAY)]
        for r in range(c.n_rooms):
            lines.append(f"  room{r}: " + " ".join(cell(room_cell(r, j)) for j in range(c.room_depth)))
        return "\n".join(lines)


def build_rooms_world(config: RoomsWorldConfig | None = None) -> RoomsWorld:
    return RoomsWorld(config or RoomsWorldConfig())
