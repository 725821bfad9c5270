"""QUICK / DEEPTHINK action-policy surrogates and compute-cost accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .mdp_core import TabularMDP, check_policy, greedy_policy, policy_evaluation, value_iteration

QUICK_COST = 1.0
DEEP_COST = 5.0
DEEP_EPSILON = 0.05


class Tier(str, Enum):
    QUICK = "QUICK"
    DEEPTHINK = "DEEPTHINK"


@dataclass(frozen=True)
class SkillSpec:
    """Probability of replacing the oracle action by a uniformly random one."""

    epsilon: float

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")


@dataclass(frozen=True, eq=False)
class PolicyProvider:
    """Stationary stochastic action policy with a fixed compute cost per call."""

    name: str
    tier: Tier
    call_cost: float
    probabilities: np.ndarray
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.call_cost) or self.call_cost < 0:
            raise ValueError(f"call_cost must be nonnegative, got {self.call_cost}")
        pi = np.array(self.probabilities, dtype=float)
        if pi.ndim != 2:
            raise ValueError("policy table must be 2-D (state, action)")
        if pi.min() < 0 or np.any(np.abs(pi.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("policy rows must be probability distributions")
        pi.setflags(write=False)
        cdf = np.cumsum(pi, axis=1)
        cdf[:, -1] = 1.0
        cdf.setflags(write=False)
        object.__setattr__(self, "tier", Tier(self.tier))
        object.__setattr__(self, "probabilities", pi)
        object.__setattr__(self, "_cdf", cdf)

    @property
    def n_actions(self) -> int:
        return self.probabilities.shape[1]

    def act(self, state: int, rng: np.random.Generator) -> int:
        row = self._cdf[state]
        return int(np.searchsorted(row, rng.random(), side="right").clip(max=len(row) - 1))

    def descriptor(self) -> dict:
        return {"name": self.name, "tier": self.tier.value, "call_cost": self.call_cost}


def skilled_table(mdp: TabularMDP, epsilon: float) -> np.ndarray:
    """(1 - epsilon) * greedy(v*) + epsilon * uniform."""
    SkillSpec(epsilon)
    greedy = greedy_policy(mdp, value_iteration(mdp))
    return (1.0 - epsilon) * greedy + epsilon / mdp.n_actions


def make_skilled_policy(
    mdp: TabularMDP,
    skill: SkillSpec,
    tier: Tier | str,
    call_cost: float | None = None,
    name: str | None = None,
) -> PolicyProvider:
    tier = Tier(tier)
    if call_cost is None:
        call_cost = QUICK_COST if tier is Tier.QUICK else DEEP_COST
    table = skilled_table(mdp, skill.epsilon)
    return PolicyProvider(name or tier.value.lower(), tier, float(call_cost), table)


def start_value(mdp: TabularMDP, policy: np.ndarray, start: int | np.ndarray) -> float:
    v = policy_evaluation(mdp, check_policy(mdp, policy), tol=1e-10)
    if np.ndim(start) == 0:
        return float(v[int(start)])
    return float(np.asarray(start, dtype=float) @ v)


def calibrate_quick_epsilon(
    mdp: TabularMDP,
    start: int | np.ndarray,
    *,
    deep_epsilon: float = DEEP_EPSILON,
    ratio: float = 0.5,
    rel_tol: float = 0.05,
    max_iter: int = 60,
) -> float:
    """Bisect the QUICK epsilon so its start value is ``ratio`` times DEEPTHINK's.

    Stops when the achieved ratio is within ``rel_tol`` (relative) of the target.
    """
    target = ratio * start_value(mdp, skilled_table(mdp, deep_epsilon), start)
    if target <= 0:
        raise ValueError("DEEPTHINK start value must be positive to calibrate a ratio")

    def value(eps: float) -> float:
        return start_value(mdp, skilled_table(mdp, eps), start)

    lo, hi = deep_epsilon, 1.0
    if value(hi) > target:
        raise ValueError("even the uniform policy exceeds the target value; ratio unattainable")
    mid = hi
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        v = value(mid)
        if abs(v - target) <= rel_tol * target:
            return mid
        if v > target:
            lo = mid
        else:
            hi = mid
    return mid


def make_provider_pair(
    mdp: TabularMDP,
    start: int | np.ndarray,
    *,
    deep_epsilon: float = DEEP_EPSILON,
    quick_epsilon: float | None = None,
) -> tuple[PolicyProvider, PolicyProvider]:
    """(QUICK, DEEPTHINK) surrogates; QUICK's epsilon is calibrated unless given."""
    if quick_epsilon is None:
        quick_epsilon = calibrate_quick_epsilon(mdp, start, deep_epsilon=deep_epsilon)
    return (make_skilled_policy(mdp, SkillSpec(quick_epsilon), Tier.QUICK),
            make_skilled_policy(mdp, SkillSpec(deep_epsilon), Tier.DEEPTHINK))


@dataclass
class CostLedger:
    """Running compute-cost account; ``cumulative`` is the AUC proxy."""

    cumulative: float = 0.0
    series: list[tuple[int, float]] = field(default_factory=list)

    def __add__(self, other: "CostLedger") -> "CostLedger":
        if self.series and other.series and other.series[0][0] < self.series[-1][0]:
            raise ValueError("cannot concatenate ledgers whose steps go backwards")
        out = CostLedger(self.cumulative, list(self.series))
        for step, cost in other.series:
            out.series.append((step, cost))
            out.cumulative += cost
        return out

    def rows(self) -> list[dict]:
        running = 0.0
        out = []
        for step, cost in self.series:
            running += cost
            out.append({"step": step, "cost": cost, "cumulative": running})
        return out


def record_call(ledger: CostLedger, provider: PolicyProvider, step: int) -> CostLedger:
    """Charge one call of ``provider`` at ``step`` (in place) and return the ledger."""
    if ledger.series and step < ledger.series[-1][0]:
        raise ValueError(f"step {step} precedes last recorded step {ledger.series[-1][0]}")
    ledger.series.append((int(step), provider.call_cost))
    ledger.cumulative += provider.call_cost
    return ledger
