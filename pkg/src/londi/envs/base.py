from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Protocol

import numpy as np

from ..mdp_core import TabularMDP


class ExportUnavailableError(RuntimeError):
    """The environment cannot be exported as an exact TabularMDP."""


@dataclass(frozen=True)
class EpisodeStep:
    observation: Any
    action: int
    reward: float
    next_observation: Any
    done: bool
    info: dict = field(default_factory=dict)


class Featurizer:
    """Deterministic observation -> state-id map.

    With ``fixed`` ids (an enumerated observation space) unknown observations
    are rejected; otherwise new observations get the next free id.
    """

    def __init__(self, fixed: dict[Hashable, int] | None = None, validate=None):
        self._ids: dict[Hashable, int] = dict(fixed or {})
        self._frozen = fixed is not None
        self._validate = validate

    def __len__(self) -> int:
        return len(self._ids)

    def encode(self, observation) -> int:
        if self._validate is not None:
            self._validate(observation)
        try:
            return self._ids[observation]
        except KeyError:
            if self._frozen:
                raise ValueError(f"unknown observation {observation!r}") from None
            new_id = len(self._ids)
            self._ids[observation] = new_id
            return new_id
        except TypeError as exc:
            raise ValueError(f"observation is not hashable: {observation!r}") from exc


def encode_observation(featurizer: Featurizer, observation) -> int:
    return featurizer.encode(observation)


class Environment(Protocol):
    n_actions: int
    horizon: int
    gamma: float
    featurizer: Featurizer

    @property
    def state_id(self) -> int: ...

    def reset(self, rng: np.random.Generator | None = None): ...

    def step(self, action: int) -> EpisodeStep: ...

    def location(self, state_id: int) -> str: ...


class MDPEnv:
    """Simulator for an arbitrary TabularMDP; observations are state ids."""

    def __init__(self, mdp: TabularMDP, start: int | np.ndarray = 0, horizon: int = 100,
                 locations: dict[int, str] | None = None):
        self.mdp = mdp
        self.n_states = mdp.n_states
        self.n_actions = mdp.n_actions
        self.gamma = mdp.gamma
        self.horizon = int(horizon)
        if np.ndim(start) == 0:
            dist = np.zeros(mdp.n_states)
            dist[int(start)] = 1.0
        else:
            dist = np.asarray(start, dtype=float)
        self.start_distribution = dist
        self._start_cdf = np.cumsum(dist)
        self._start_cdf[-1] = 1.0
        self._cdf = np.cumsum(mdp.transition, axis=2)
        self._cdf[..., -1] = 1.0
        self._locations = locations or {}
        self.featurizer = Featurizer({s: s for s in range(mdp.n_states)}, validate=self._check_obs)
        self._rng = np.random.default_rng(0)
        self._s = 0
        self._t = 0

    def _check_obs(self, obs):
        if not isinstance(obs, (int, np.integer)) or not 0 <= obs < self.n_states:
            raise ValueError(f"observation {obs!r} is not a state id of this MDP")

    @property
    def state_id(self) -> int:
        return self._s

    def reset(self, rng: np.random.Generator | None = None) -> int:
        if rng is not None:
            self._rng = rng
        self._s = int(np.searchsorted(self._start_cdf, self._rng.random(), side="right"))
        self._t = 0
        return self._s

    def step(self, action: int) -> EpisodeStep:
        s = self._s
        reward = float(self.mdp.reward[s, action])
        nxt = int(np.searchsorted(self._cdf[s, action], self._rng.random(), side="right"))
        self._s = nxt
        self._t += 1
        terminal = nxt in self.mdp.terminal_states
        done = terminal or self._t >= self.horizon
        info = {"location": self.location(s), "terminal": terminal, "truncated": done and not terminal}
        return EpisodeStep(s, int(action), reward, nxt, done, info)

    def location(self, state_id: int) -> str:
        return self._locations.get(state_id, str(state_id))

    def export_mdp(self) -> TabularMDP:
        return self.mdp
