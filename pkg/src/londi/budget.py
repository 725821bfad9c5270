"""Budgeted switching: the switcher's MDP over (state, remaining activations).

Remaining budget is clamped at -1. Once it is negative every further step
pays the over-budget penalty, so deeper overdraft levels behave identically.
Terminal base states end the episode, so they carry neither cost nor penalty.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mdp_core import TabularMDP, check_policy, q_from_values, value_iteration
from .switching import dumps_solution_rows

DEFAULT_STATE_CAP = 3000


@dataclass(frozen=True)
class BudgetSpec:
    n: int
    penalty: float = 0.0
    cost: float = 0.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 0:
            raise ValueError(f"budget n must be a nonnegative integer, got {self.n}")
        if not np.isfinite(self.penalty) or self.penalty < 0:
            raise ValueError(f"penalty must be nonnegative, got {self.penalty}")
        if not np.isfinite(self.cost) or self.cost < 0:
            raise ValueError(f"cost must be nonnegative, got {self.cost}")


@dataclass(frozen=True)
class AugmentedState:
    base: int
    remaining: int


def budget_step(x: AugmentedState, g: int) -> AugmentedState:
    """Consume one activation when ``g`` is 1; the count never drops below -1."""
    if x.remaining < -1:
        raise ValueError(f"remaining budget below -1: {x.remaining}")
    if g not in (0, 1):
        raise ValueError(f"decision must be 0 or 1, got {g!r}")
    if g == 0:
        return x
    return AugmentedState(x.base, max(x.remaining - 1, -1))


def next_remaining(k: int, g: int) -> int:
    return max(k - 1, -1) if g == 1 else k


@dataclass(frozen=True, eq=False)
class BudgetedMDP:
    """Switcher MDP over X = S x {-1, ..., n}; action 0 = QUICK, 1 = DEEPTHINK.

    Augmented index of (s, k) is ``s * (n + 2) + k + 1``.
    """

    mdp: TabularMDP
    base_states: int
    spec: BudgetSpec

    @property
    def levels(self) -> int:
        return self.spec.n + 2

    def index(self, s: int, k: int) -> int:
        if not -1 <= k <= self.spec.n:
            raise ValueError(f"remaining budget {k} outside [-1, {self.spec.n}]")
        return s * self.levels + k + 1

    def state(self, x: int) -> AugmentedState:
        s, j = divmod(int(x), self.levels)
        return AugmentedState(s, j - 1)


def augment_with_budget(
    mdp: TabularMDP,
    pi_quick: np.ndarray,
    pi_deep: np.ndarray,
    spec: BudgetSpec,
    *,
    state_cap: int = DEFAULT_STATE_CAP,
) -> BudgetedMDP:
    """Build the budget-augmented switcher MDP.

    Activating costs ``spec.cost``; any step whose post-decision remaining
    budget is -1 also pays ``spec.penalty``.
    """
    pi_q = check_policy(mdp, pi_quick)
    pi_d = check_policy(mdp, pi_deep)
    S, L = mdp.n_states, spec.n + 2
    X = S * L
    if X > state_cap:
        raise ValueError(f"augmented state count {X} exceeds cap {state_cap}")

    P_q = np.einsum("sa,sat->st", pi_q, mdp.transition).clip(0.0, 1.0)
    P_d = np.einsum("sa,sat->st", pi_d, mdp.transition).clip(0.0, 1.0)
    r_q = (pi_q * mdp.reward).sum(axis=1)
    r_d = (pi_d * mdp.reward).sum(axis=1)

    P = np.zeros((X, 2, X))
    R = np.zeros((X, 2))
    terminals = []
    for s in range(S):
        for k in range(-1, spec.n + 1):
            x = s * L + k + 1
            if s in mdp.terminal_states:
                P[x, :, x] = 1.0
                terminals.append(x)
                continue
            for g, P_pi, r_pi in ((0, P_q, r_q), (1, P_d, r_d)):
                k2 = next_remaining(k, g)
                P[x, g, k2 + 1 :: L] = P_pi[s]
                R[x, g] = r_pi[s] - spec.cost * g - spec.penalty * (k2 == -1)
    aug = TabularMDP(P, R, mdp.gamma, frozenset(terminals))
    return BudgetedMDP(aug, S, spec)


@dataclass(frozen=True, eq=False)
class BudgetSolution:
    """Optimal values and Markov switch decisions over (state, remaining)."""

    bmdp: BudgetedMDP
    v: np.ndarray  # (S, n + 2), column j is remaining = j - 1
    q: np.ndarray  # (S * (n + 2), 2)
    g: np.ndarray  # (S, n + 2)

    def value(self, s: int, k: int) -> float:
        return float(self.v[s, k + 1])

    def decision(self, s: int, k: int) -> int:
        return int(self.g[s, k + 1])

    def base_values(self) -> np.ndarray:
        """Values at the start of an episode, i.e. with the full budget."""
        return self.v[:, -1].copy()

    def dumps(self) -> str:
        rows = []
        S, L = self.v.shape
        for s in range(S):
            for j in range(L):
                g = int(self.g[s, j])
                rows.append((s, j - 1, self.v[s, j], "deep" if g else "quick", g))
        return dumps_solution_rows(rows, self.bmdp.spec.cost, budgeted=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())


def solve_budgeted(bmdp: BudgetedMDP, tol: float = 1e-10, *, tie_tol: float = 1e-9) -> BudgetSolution:
    """Exact optimum of the budgeted problem by value iteration on the augmented MDP.

    Activation is chosen only when it beats QUICK by more than ``tie_tol``.
    """
    v = value_iteration(bmdp.mdp, tol)
    q = q_from_values(bmdp.mdp, v)
    g = (q[:, 1] - q[:, 0] > tie_tol).astype(np.int8)
    for x in bmdp.mdp.terminal_states:
        g[x] = 0
    shape = (bmdp.base_states, bmdp.levels)
    return BudgetSolution(bmdp, v.reshape(shape), q, g.reshape(shape))
