"""Finite discounted MDPs and exact dynamic-programming primitives.

Everything downstream (switching, budget, envs) treats these routines as the
ground truth, so they favour exactness over speed: dense tensors, synchronous
sweeps, and an optional exact policy-evaluation polish after value iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

ROW_SUM_TOL = 1e-9
DEFAULT_MAX_ITER = 200_000

FORMAT_HEADER = "# londi-mdp v1"


class SolverError(RuntimeError):
    """Iterative solver hit its iteration cap before reaching the tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP ``<S, A, P, R, gamma>`` with absorbing terminal states.

    ``transition[s, a, s']`` is P(s' | s, a) and ``reward[s, a]`` the expected
    one-step reward. Arrays are copied and frozen on construction.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal_states: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise ValueError("need at least one state and one action")
        if not np.all(np.isfinite(R)):
            raise ValueError("reward table contains non-finite entries")
        if not np.all(np.isfinite(P)) or P.min() < 0.0 or P.max() > 1.0:
            raise ValueError("transition entries must lie in [0, 1]")
        bad = np.abs(P.sum(axis=2) - 1.0) > ROW_SUM_TOL
        if bad.any():
            s, a = np.argwhere(bad)[0]
            raise ValueError(f"transition row ({s}, {a}) does not sum to 1")
        gamma = float(self.gamma)
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
        terms = frozenset(int(t) for t in self.terminal_states)
        for t in terms:
            if not 0 <= t < P.shape[0]:
                raise ValueError(f"terminal state {t} out of range")
            if np.any(P[t, :, t] != 1.0) or np.any(R[t] != 0.0):
                raise ValueError(f"terminal state {t} must self-loop with zero reward")
        object.__setattr__(self, "transition", _readonly(P))
        object.__setattr__(self, "reward", _readonly(R))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "terminal_states", terms)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def value_bound(self) -> float:
        """max|R| / (1 - gamma), the a-priori bound on any value function."""
        return float(np.abs(self.reward).max()) / (1.0 - self.gamma)

    def with_reward(self, reward: np.ndarray) -> "TabularMDP":
        return TabularMDP(self.transition, reward, self.gamma, self.terminal_states)


def check_policy(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Validate a stationary policy table against ``mdp`` and return it as floats."""
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {pi.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )
    if not np.all(np.isfinite(pi)) or pi.min() < 0.0 or pi.max() > 1.0:
        raise ValueError("policy entries must lie in [0, 1]")
    if np.any(np.abs(pi.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ValueError("policy rows must sum to 1")
    return pi


def _check_values(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise ValueError(f"value vector shape {v.shape} does not match {mdp.n_states} states")
    if not np.all(np.isfinite(v)):
        raise ValueError("value vector contains non-finite entries")
    return v


def q_from_values(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    """One-step lookahead: Q(s,a) = R(s,a) + gamma * sum_s' P(s'|s,a) v(s')."""
    v = _check_values(mdp, v)
    return mdp.reward + mdp.gamma * (mdp.transition @ v)


def bellman_optimality(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    return q_from_values(mdp, v).max(axis=1)


def greedy_policy(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    """Deterministic greedy policy w.r.t. ``v``; ties go to the lowest action id."""
    q = q_from_values(mdp, v)
    pi = np.zeros_like(q)
    pi[np.arange(mdp.n_states), q.argmax(axis=1)] = 1.0
    return pi


def induced_chain(mdp: TabularMDP, policy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state kernel P^pi and expected reward r^pi under ``policy``."""
    pi = check_policy(mdp, policy)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    r_pi = (pi * mdp.reward).sum(axis=1)
    return P_pi, r_pi


def evaluate_linear(mdp: TabularMDP, policy: np.ndarray) -> np.ndarray:
    """Exact v^pi from the linear system (I - gamma P^pi) v = r^pi."""
    P_pi, r_pi = induced_chain(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, r_pi)


def value_iteration(
    mdp: TabularMDP,
    tol: float = 1e-10,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
    polish: bool = True,
    v0: np.ndarray | None = None,
) -> np.ndarray:
    """Optimal values by synchronous (Jacobi) value iteration.

    Stops once ``||Tv - v||_inf <= tol``. With ``polish`` the greedy policy of
    the final iterate is evaluated exactly and its values are kept when their
    Bellman residual is no larger; this removes the geometric-series tail and
    makes closed-form cases exact.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states) if v0 is None else _check_values(mdp, v0).copy()
    residual = np.inf
    for _ in range(max_iter):
        tv = bellman_optimality(mdp, v)
        residual = float(np.max(np.abs(tv - v)))
        if residual <= tol:
            v = tv
            break
        v = tv
    else:
        raise SolverError("value iteration did not converge", residual)

    if polish:
        exact = evaluate_linear(mdp, greedy_policy(mdp, v))
        if np.all(np.isfinite(exact)):
            res_exact = float(np.max(np.abs(bellman_optimality(mdp, exact) - exact)))
            res_v = float(np.max(np.abs(bellman_optimality(mdp, v) - v)))
            if res_exact <= res_v:
                v = exact
    return v


def policy_evaluation(
    mdp: TabularMDP,
    policy: np.ndarray,
    tol: float = 1e-10,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """v^pi by successive approximation of T^pi until ``||T^pi v - v||_inf <= tol``."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    P_pi, r_pi = induced_chain(mdp, policy)
    gP = mdp.gamma * P_pi
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for _ in range(max_iter):
        tv = r_pi + gP @ v
        residual = float(np.max(np.abs(tv - v)))
        v = tv
        if residual <= tol:
            return v
    raise SolverError("policy evaluation did not converge", residual)


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def deterministic_policy(mdp: TabularMDP, actions: Iterable[int]) -> np.ndarray:
    actions = np.asarray(list(actions), dtype=int)
    pi = np.zeros((mdp.n_states, mdp.n_actions))
    pi[np.arange(mdp.n_states), actions] = 1.0
    return pi


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float = 0.9,
    *,
    reward_scale: float = 1.0,
    sparsity: float = 0.0,
) -> TabularMDP:
    """Random dense MDP used by property tests and benchmarks.

    ``sparsity`` is the fraction of next-state entries zeroed per row (at least
    one successor is always kept).
    """
    P = rng.random((n_states, n_actions, n_states))
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        keep = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = False
        P[mask] = 0.0
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-reward_scale, reward_scale, size=(n_states, n_actions))
    return TabularMDP(P, R, gamma)


# ---------------------------------------------------------------------------
# Text format
#
#   # londi-mdp v1
#   states <S>
#   actions <A>
#   gamma <float>
#   terminal <s> <s> ...        (optional, may be empty)
#   T <s> <a> <s'> <prob>       (one line per non-zero transition)
#   R <s> <a> <reward>          (one line per non-zero reward)
#
# Floats are written with repr(), which round-trips exactly. Blank lines and
# lines starting with '#' (other than the header) are ignored on load.
# ---------------------------------------------------------------------------


def dumps_mdp(mdp: TabularMDP) -> str:
    lines = [
        FORMAT_HEADER,
        f"states {mdp.n_states}",
        f"actions {mdp.n_actions}",
        f"gamma {mdp.gamma!r}",
        "terminal " + " ".join(str(t) for t in sorted(mdp.terminal_states)),
    ]
    for s, a, t in zip(*np.nonzero(mdp.transition)):
        lines.append(f"T {s} {a} {t} {float(mdp.transition[s, a, t])!r}")
    for s, a in zip(*np.nonzero(mdp.reward)):
        lines.append(f"R {s} {a} {float(mdp.reward[s, a])!r}")
    return "\n".join(lines) + "\n"


def loads_mdp(text: str) -> TabularMDP:
    n_states = n_actions = None
    gamma = None
    terminal: list[int] = []
    trans: list[tuple[int, int, int, float]] = []
    rew: list[tuple[int, int, float]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, *rest = line.split()
        try:
            if key == "states":
                n_states = int(rest[0])
            elif key == "actions":
                n_actions = int(rest[0])
            elif key == "gamma":
                gamma = float(rest[0])
            elif key == "terminal":
                terminal = [int(x) for x in rest]
            elif key == "T":
                s, a, t = (int(x) for x in rest[:3])
                trans.append((s, a, t, float(rest[3])))
            elif key == "R":
                s, a = int(rest[0]), int(rest[1])
                rew.append((s, a, float(rest[2])))
            else:
                raise ValueError(f"unknown record {key!r}")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if n_states is None or n_actions is None or gamma is None:
        raise ValueError("MDP file must declare states, actions and gamma")
    P = np.zeros((n_states, n_actions, n_states))
    R = np.zeros((n_states, n_actions))
    for s, a, t, p in trans:
        P[s, a, t] = p
    for s, a, r in rew:
        R[s, a] = r
    return TabularMDP(P, R, gamma, frozenset(terminal))


def save_mdp(mdp: TabularMDP, path: str | Path) -> None:
    Path(path).write_text(dumps_mdp(mdp))


def load_mdp(path: str | Path) -> TabularMDP:
    return loads_mdp(Path(path).read_text())
