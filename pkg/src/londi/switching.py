"""Switching controls: intervention operator, switching Bellman operator, exact solver.

Two readings of the no-switch branch coexist here and are selected by the
``pi_quick`` argument that most functions accept:

* ``pi_quick=None`` -- operator semantics. The no-switch branch is
  ``max_a Q(s, a)``, exactly as the switching Bellman operator is written.
* ``pi_quick`` given -- deployed semantics. Where the switcher declines, the
  QUICK actor moves, so the no-switch branch is ``sum_a pi_quick(a|s) Q(s, a)``.

Costs are nonnegative magnitudes subtracted on each activation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mdp_core import (
    DEFAULT_MAX_ITER,
    SolverError,
    TabularMDP,
    check_policy,
    evaluate_linear,
    q_from_values,
)

SOLUTION_HEADER = "# londi-switch-solution v1"


def _check_cost(cost: float) -> float:
    cost = float(cost)
    if not np.isfinite(cost) or cost < 0:
        raise ValueError(f"switch cost must be a finite nonnegative number, got {cost}")
    return cost


def _check_switch_policy(mdp: TabularMDP, g: Sequence[int]) -> np.ndarray:
    g = np.asarray(g)
    if g.shape != (mdp.n_states,):
        raise ValueError(f"switch policy shape {g.shape} does not match {mdp.n_states} states")
    if not np.isin(g, (0, 1)).all():
        raise ValueError("switch decisions must be 0 or 1")
    return g.astype(np.int8)


def effective_switch(mdp: TabularMDP, g: Sequence[int]) -> np.ndarray:
    """Switch decisions with terminal states forced to 0 (nothing left to decide)."""
    g = _check_switch_policy(mdp, g).copy()
    for t in mdp.terminal_states:
        g[t] = 0
    return g


# ---------------------------------------------------------------------------
# Branch values
# ---------------------------------------------------------------------------


def intervention_value(q: np.ndarray, s: int, pi_deep: np.ndarray, cost: float) -> float:
    """M Q(s) = sum_a pi_deep(a|s) Q(s, a) - c."""
    cost = _check_cost(cost)
    row = np.asarray(pi_deep, dtype=float)[s]
    return float(row @ np.asarray(q, dtype=float)[s]) - cost


def no_switch_value(q: np.ndarray, s: int, pi_quick: np.ndarray | None = None) -> float:
    q_s = np.asarray(q, dtype=float)[s]
    if pi_quick is None:
        return float(q_s.max())
    return float(np.asarray(pi_quick, dtype=float)[s] @ q_s)


def branch_values(
    q: np.ndarray, pi_deep: np.ndarray, cost: float, pi_quick: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised (intervention, no-switch) branch values at every state."""
    q = np.asarray(q, dtype=float)
    deep = (np.asarray(pi_deep, dtype=float) * q).sum(axis=1) - _check_cost(cost)
    if pi_quick is None:
        quick = q.max(axis=1)
    else:
        quick = (np.asarray(pi_quick, dtype=float) * q).sum(axis=1)
    return deep, quick


def switch_rule(
    q: np.ndarray,
    s: int,
    pi_deep: np.ndarray,
    cost: float,
    pi_quick: np.ndarray | None = None,
) -> int:
    """Activation rule: 1 iff the intervention gap ``M Q(s) - no-switch value`` is > 0.

    A zero gap returns 0 so that ties never spend a DEEPTHINK call.
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q table contains non-finite entries")
    gap = intervention_value(q, s, pi_deep, cost) - no_switch_value(q, s, pi_quick)
    return int(gap > 0.0)


# ---------------------------------------------------------------------------
# Operators and solver
# ---------------------------------------------------------------------------


def switch_bellman_step(
    mdp: TabularMDP,
    v: np.ndarray,
    pi_deep: np.ndarray,
    cost: float,
    pi_quick: np.ndarray | None = None,
) -> np.ndarray:
    """One synchronous application of the switching Bellman operator T_S."""
    check_policy(mdp, pi_deep)
    if pi_quick is not None:
        check_policy(mdp, pi_quick)
    q = q_from_values(mdp, v)
    deep, quick = branch_values(q, pi_deep, cost, pi_quick)
    return np.maximum(deep, quick)


@dataclass(frozen=True, eq=False)
class SwitchSolution:
    """Fixed point of T_S together with the activation set it induces.

    ``q_star`` is the one-step lookahead of ``v_star`` over base actions, so
    ``switch_rule(q_star, s, pi_deep, cost, pi_quick)`` reproduces ``g_star``.
    """

    v_star: np.ndarray
    q_star: np.ndarray
    g_star: np.ndarray
    deep_value: np.ndarray
    quick_value: np.ndarray
    cost: float
    iterations: int
    residual: float

    @property
    def branch(self) -> np.ndarray:
        """'deep' where the intervention branch attains the max, else 'quick'."""
        return np.where(self.g_star == 1, "deep", "quick")


def solve_switcher(
    mdp: TabularMDP,
    pi_quick: np.ndarray | None,
    pi_deep: np.ndarray,
    cost: float,
    tol: float = 1e-10,
    *,
    max_iter: int = DEFAULT_MAX_ITER,
) -> SwitchSolution:
    """Iterate T_S from zero to its fixed point and extract the activation set.

    With ``pi_quick`` given the continuation at non-activated states is the
    QUICK actor (deployed semantics). Passing ``None`` iterates the operator
    exactly as written, whose no-switch branch may pick any action.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    cost = _check_cost(cost)
    check_policy(mdp, pi_deep)
    if pi_quick is not None:
        check_policy(mdp, pi_quick)
    v = np.zeros(mdp.n_states)
    residual = np.inf
    for it in range(1, max_iter + 1):
        q = q_from_values(mdp, v)
        deep, quick = branch_values(q, pi_deep, cost, pi_quick)
        tv = np.maximum(deep, quick)
        residual = float(np.max(np.abs(tv - v)))
        v = tv
        if residual <= tol:
            break
    else:
        raise SolverError("switching value iteration did not converge", residual)

    q = q_from_values(mdp, v)
    deep, quick = branch_values(q, pi_deep, cost, pi_quick)
    g = (deep - quick > 0.0).astype(np.int8)
    for t in mdp.terminal_states:
        g[t] = 0
    return SwitchSolution(v, q, g, deep, quick, cost, it, residual)


# ---------------------------------------------------------------------------
# Composite process evaluation
# ---------------------------------------------------------------------------


def composite_policy(pi_quick: np.ndarray, pi_deep: np.ndarray, g: Sequence[int]) -> np.ndarray:
    """Stationary base-action policy that follows DEEPTHINK where g = 1, QUICK elsewhere."""
    g = np.asarray(g)[:, None]
    return np.where(g == 1, np.asarray(pi_deep, float), np.asarray(pi_quick, float))


def composite_mdp(mdp: TabularMDP, g: Sequence[int], cost: float) -> TabularMDP:
    """Copy of ``mdp`` whose rewards carry the activation cost at g = 1 states."""
    g = effective_switch(mdp, g)
    return mdp.with_reward(mdp.reward - _check_cost(cost) * g[:, None])


def composite_exact_evaluate(
    mdp: TabularMDP,
    pi_quick: np.ndarray,
    pi_deep: np.ndarray,
    g: Sequence[int],
    persistence_p: float,
    cost: float,
    *,
    full: bool = False,
) -> np.ndarray:
    """Exact discounted value of the switched process with persistence.

    The process lives on (state, m) with m the switch-on flag. While m = 1 a
    Bernoulli(persistence_p) draw of 1 keeps DEEPTHINK acting without
    consulting ``g`` (no cost); otherwise ``g`` is consulted, costing ``cost``
    when it activates. Returns values for m = 0 (switch off), or the full
    2|S| vector ordered [m=0 block, m=1 block] when ``full``.
    """
    p = float(persistence_p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"persistence_p must lie in [0, 1], got {p}")
    cost = _check_cost(cost)
    pi_q = check_policy(mdp, pi_quick)
    pi_d = check_policy(mdp, pi_deep)
    g = effective_switch(mdp, g)
    S = mdp.n_states

    P_q = np.einsum("sa,sat->st", pi_q, mdp.transition)
    P_d = np.einsum("sa,sat->st", pi_d, mdp.transition)
    r_q = (pi_q * mdp.reward).sum(axis=1)
    r_d = (pi_d * mdp.reward).sum(axis=1)

    # Consulted step, identical from either layer.
    on = g[:, None] == 1
    consult_P = np.zeros((S, 2 * S))
    consult_P[:, :S] = np.where(on, 0.0, P_q)
    consult_P[:, S:] = np.where(on, P_d, 0.0)
    consult_r = np.where(g == 1, r_d - cost, r_q)

    persist_P = np.zeros((S, 2 * S))
    persist_P[:, S:] = P_d

    P_ext = np.vstack([consult_P, p * persist_P + (1.0 - p) * consult_P])
    r_ext = np.concatenate([consult_r, p * r_d + (1.0 - p) * consult_r])
    # mixing can overshoot 1 by an ulp
    np.clip(P_ext, 0.0, 1.0, out=P_ext)
    chain = TabularMDP(P_ext[:, None, :], r_ext[:, None], mdp.gamma)
    v = evaluate_linear(chain, np.ones((2 * S, 1)))
    return v if full else v[:S]


# ---------------------------------------------------------------------------
# Switching times
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SwitchingTimes:
    """Activation times and the matching deactivation boundaries of a trace."""

    times: tuple[int, ...]
    deactivations: tuple[int, ...]

    @property
    def tau(self) -> tuple[int, ...]:
        """Interleaved sequence tau_1 < tau_2 < ... (on, off, on, off, ...)."""
        return tuple(sorted(self.times + self.deactivations))


def extract_switching_times(decision_trace: Iterable[tuple[int, int]]) -> SwitchingTimes:
    """Steps where the decision turns on from an inactive regime, and where it turns off."""
    times: list[int] = []
    offs: list[int] = []
    prev_step = None
    active = False
    for step, g in decision_trace:
        step = int(step)
        if prev_step is not None and step <= prev_step:
            raise ValueError(f"trace is not ordered by step ({prev_step} then {step})")
        if g not in (0, 1):
            raise ValueError(f"decision must be 0 or 1, got {g!r}")
        if g == 1 and not active:
            times.append(step)
        elif g == 0 and active:
            offs.append(step)
        active = g == 1
        prev_step = step
    return SwitchingTimes(tuple(times), tuple(offs))


# ---------------------------------------------------------------------------
# Text format
#
#   # londi-switch-solution v1
#   # cost <c>
#   state [remaining] v branch g
#   <s> [<k>] <v> <deep|quick> <0|1>
# ---------------------------------------------------------------------------


def dumps_solution_rows(rows: Iterable[tuple], cost: float, budgeted: bool = False) -> str:
    header = "state remaining v branch g" if budgeted else "state v branch g"
    lines = [SOLUTION_HEADER, f"# cost {float(cost)!r}", header]
    for row in rows:
        *ids, v, branch, g = row
        lines.append(" ".join(str(int(i)) for i in ids) + f" {float(v)!r} {branch} {int(g)}")
    return "\n".join(lines) + "\n"


def dumps_solution(sol: SwitchSolution) -> str:
    rows = ((s, sol.v_star[s], sol.branch[s], sol.g_star[s]) for s in range(len(sol.v_star)))
    return dumps_solution_rows(rows, sol.cost)


def loads_solution_table(text: str) -> list[dict]:
    """Parse a solution file into row dicts (``state``, optional ``remaining``, ``v``, ``branch``, ``g``)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty solution file")
    header = lines[0].split()
    rows = []
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) != len(header):
            raise ValueError(f"malformed solution row: {ln!r}")
        row = dict(zip(header, parts))
        row["state"] = int(row["state"])
        if "remaining" in row:
            row["remaining"] = int(row["remaining"])
        row["v"] = float(row["v"])
        row["g"] = int(row["g"])
        rows.append(row)
    return rows


def save_solution(sol: SwitchSolution, path: str | Path) -> None:
    Path(path).write_text(dumps_solution(sol))
