"""Model-free switcher training (LONDI and LONDI-B loops) and baseline switchers.

The per-step control flow in :func:`run_episode` follows the two training
algorithms branch for branch:

* a switch decision ``g_t`` is evaluated every step (consuming randomness even
  when it ends up unused);
* if the DEEPTHINK regime is on (``m > 0``) a Bernoulli(p) persistence draw of
  1 keeps DEEPTHINK acting without consulting ``g_t``;
* otherwise ``g_t`` is consulted: 1 selects DEEPTHINK (a fresh activation
  increments ``m``), 0 selects QUICK and resets ``m`` to 0.

Consulted activations pay the switch cost and, in the budgeted loop, consume
one unit of budget; every step taken while the budget is negative pays the
over-budget penalty.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .policies import PolicyProvider, Tier
from .switching import intervention_value, no_switch_value

RECENT_WINDOW = 5


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 2000
    horizon: int | None = None
    persistence_p: float = 0.0
    cost: float = 0.0
    budget: int | None = None
    penalty: float = 0.0
    buffer_capacity: int = 20_000
    batch_size: int = 32
    batches_per_epoch: int = 4
    epochs: int = 1
    seed: int = 0
    alpha: float = 0.1
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    temperature: float | None = None

    def __post_init__(self):
        for name in ("episodes", "buffer_capacity", "batch_size", "batches_per_epoch", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.horizon is not None and self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not 0.0 <= self.persistence_p <= 1.0:
            raise ValueError("persistence_p must lie in [0, 1]")
        if self.cost < 0 or self.penalty < 0:
            raise ValueError("cost and penalty must be nonnegative")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if self.temperature is not None and self.temperature <= 0:
            raise ValueError("temperature must be positive")

    def epsilon(self, episode: int) -> float:
        """Linear decay from ``epsilon_start`` to ``epsilon_end`` over the first fraction of episodes."""
        span = max(1, int(round(self.epsilon_decay_fraction * self.episodes)))
        frac = min(1.0, episode / span)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


@dataclass(frozen=True)
class StepRecord:
    """One logged environment step. Field order is the serialisation order."""

    episode: int
    step: int
    state: int
    location: str
    m: int
    persist_draw: int | None
    consulted: bool
    g: int
    tier: str
    action: int
    reward: float
    stored_reward: float
    cost: float
    remaining: int | None

    @property
    def deep(self) -> bool:
        return self.tier == Tier.DEEPTHINK.value


@dataclass(frozen=True)
class ReplayTransition:
    state: int
    remaining: int | None
    g: int
    reward: float
    next_state: int
    next_remaining: int | None
    done: bool


@dataclass
class EpisodeSummary:
    episode: int
    steps: int
    env_return: float
    discounted_return: float
    consulted_activations: int
    deep_steps: int
    call_cost: float
    success: bool


@dataclass
class TrainLog:
    records: list[StepRecord] = field(default_factory=list)
    episodes: list[EpisodeSummary] = field(default_factory=list)

    def to_jsonl(self) -> str:
        names = [f.name for f in fields(StepRecord)]
        return "".join(
            json.dumps({n: getattr(r, n) for n in names}, separators=(",", ":")) + "\n"
            for r in self.records
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl())

    @staticmethod
    def read_records(path: str | Path) -> list[StepRecord]:
        with open(path) as fh:
            return [StepRecord(**json.loads(line)) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# Switch policies
# ---------------------------------------------------------------------------


@dataclass
class StepContext:
    """What a switch policy may look at besides (state, remaining)."""

    recent_rewards: deque = field(default_factory=lambda: deque(maxlen=RECENT_WINDOW))
    goal_distance: float | None = None


class SwitchPolicy(Protocol):
    def decide(self, state: int, remaining: int | None, rng: np.random.Generator,
               ctx: StepContext) -> int: ...


@dataclass
class TableSwitcher:
    """Fixed decision table over (state,) or (state, remaining)."""

    table: np.ndarray
    budget: int | None = None
    name: str = "table"

    def decide(self, state, remaining, rng, ctx) -> int:
        if self.table.ndim == 1:
            return int(self.table[state])
        k = self.budget if remaining is None else remaining
        return int(self.table[state, k + 1])


@dataclass
class ConstantSwitcher:
    g: int
    name: str = ""

    def decide(self, state, remaining, rng, ctx) -> int:
        return self.g


@dataclass
class ProbabilisticSwitcher:
    """i.i.d. Bernoulli(p) decision; with ``respect_budget`` it stops once the budget is spent."""

    p: float
    respect_budget: bool = True
    name: str = "probabilistic"

    def decide(self, state, remaining, rng, ctx) -> int:
        g = int(rng.random() < self.p)
        if self.respect_budget and remaining is not None and remaining <= 0:
            return 0
        return g


@dataclass
class CascadeSwitcher:
    """QUICK first; escalate when the progress score falls below ``threshold``.

    Score = mean env reward over the last few steps + ``distance_scale / (1 + d)``
    where ``d`` is the goal distance when the environment exposes one.
    """

    threshold: float
    distance_scale: float = 0.1
    respect_budget: bool = True
    name: str = "cascade"
    queries_quick_first: bool = True

    def score(self, ctx: StepContext) -> float:
        recent = ctx.recent_rewards
        s = float(np.mean(recent)) if recent else 0.0
        if ctx.goal_distance is not None:
            s += self.distance_scale / (1.0 + ctx.goal_distance)
        return s

    def decide(self, state, remaining, rng, ctx) -> int:
        if self.respect_budget and remaining is not None and remaining <= 0:
            return 0
        return int(self.score(ctx) < self.threshold)


def make_baseline_switcher(kind: str, *, p: float = 0.5, threshold: float = 0.0,
                           distance_scale: float = 0.1, respect_budget: bool = True) -> SwitchPolicy:
    """Baselines: ``probabilistic``, ``cascade``, ``always_quick`` or ``always_deep``."""
    if kind == "probabilistic":
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        return ProbabilisticSwitcher(p, respect_budget, name=f"probabilistic({p:g})")
    if kind == "cascade":
        if not np.isfinite(threshold):
            raise ValueError("threshold must be finite")
        return CascadeSwitcher(threshold, distance_scale, respect_budget)
    if kind == "always_quick":
        return ConstantSwitcher(0, "always_quick")
    if kind == "always_deep":
        return ConstantSwitcher(1, "always_deep")
    raise ValueError(f"unknown baseline kind {kind!r}")


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------


class SwitcherLearner:
    """Tabular Q-learner over (state[, remaining]) x {QUICK, DEEPTHINK}.

    Exploration is epsilon-greedy, or Boltzmann when ``temperature`` is set
    (the entropy-regularised variant, whose target uses the soft maximum).
    Greedy decisions never pick an activation that was not tried yet, and
    ties go to QUICK.
    """

    def __init__(self, n_states: int, gamma: float, *, budget: int | None = None,
                 alpha: float = 0.1, schedule: str = "constant", temperature: float | None = None):
        if schedule not in ("constant", "robbins-monro"):
            raise ValueError(f"unknown learning-rate schedule {schedule!r}")
        self.gamma = float(gamma)
        self.budget = budget
        self.alpha = float(alpha)
        self.schedule = schedule
        self.temperature = temperature
        levels = 1 if budget is None else budget + 2
        self.q = np.zeros((n_states, levels, 2))
        self.visits = np.zeros((n_states, levels, 2), dtype=np.int64)

    def _ensure(self, s: int) -> None:
        if s >= self.q.shape[0]:
            grow = max(s + 1, 2 * self.q.shape[0]) - self.q.shape[0]
            self.q = np.concatenate([self.q, np.zeros((grow,) + self.q.shape[1:])])
            self.visits = np.concatenate([self.visits, np.zeros((grow,) + self.visits.shape[1:], np.int64)])

    def _col(self, remaining: int | None) -> int:
        if self.budget is None:
            return 0
        if remaining is None:
            raise ValueError("budgeted learner needs the remaining budget")
        return max(-1, min(remaining, self.budget)) + 1

    def greedy(self, s: int, remaining: int | None = None) -> int:
        self._ensure(s)
        j = self._col(remaining)
        if self.visits[s, j, 1] == 0:
            return 0
        return int(self.q[s, j, 1] > self.q[s, j, 0])

    def sample(self, s: int, remaining: int | None, epsilon: float, rng: np.random.Generator) -> int:
        self._ensure(s)
        if self.temperature is not None:
            qs = self.q[s, self._col(remaining)] / self.temperature
            p1 = 1.0 / (1.0 + np.exp(np.clip(qs[0] - qs[1], -700, 700)))
            return int(rng.random() < p1)
        if rng.random() < epsilon:
            return int(rng.random() < 0.5)
        return self.greedy(s, remaining)

    def _continuation(self, s: int, remaining: int | None) -> float:
        qs = self.q[s, self._col(remaining)]
        if self.temperature is None:
            return float(qs.max())
        t = self.temperature
        m = qs.max()
        return float(m + t * np.log(np.exp((qs - m) / t).sum()))

    def update(self, tr: ReplayTransition) -> None:
        self._ensure(max(tr.state, tr.next_state))
        j = self._col(tr.remaining)
        self.visits[tr.state, j, tr.g] += 1
        alpha = self.alpha
        if self.schedule == "robbins-monro":
            alpha = 1.0 / (1.0 + self.visits[tr.state, j, tr.g])
        cont = 0.0 if tr.done else self._continuation(tr.next_state, tr.next_remaining)
        target = tr.reward + self.gamma * cont
        self.q[tr.state, j, tr.g] += alpha * (target - self.q[tr.state, j, tr.g])

    def policy(self, n_states: int | None = None) -> TableSwitcher:
        """Greedy decision table; shape (S,) without budget, (S, n + 2) with."""
        S = self.q.shape[0] if n_states is None else n_states
        self._ensure(S - 1)
        if self.budget is None:
            table = np.array([self.greedy(s) for s in range(S)], dtype=np.int8)
        else:
            table = np.array([[self.greedy(s, k) for k in range(-1, self.budget + 1)]
                              for s in range(S)], dtype=np.int8)
        return TableSwitcher(table, self.budget, "londi" if self.budget is None else "londi-b")


class LearnerSwitcher:
    """Adapter exposing a learner as a SwitchPolicy (exploring or greedy)."""

    def __init__(self, learner: SwitcherLearner, epsilon: float = 0.0):
        self.learner = learner
        self.epsilon = epsilon

    def decide(self, state, remaining, rng, ctx) -> int:
        if self.epsilon <= 0 and self.learner.temperature is None:
            return self.learner.greedy(state, remaining)
        return self.learner.sample(state, remaining, self.epsilon, rng)


class ReplayBuffer:
    """FIFO buffer with uniform sampling."""

    def __init__(self, capacity: int):
        self._data: deque[ReplayTransition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._data)

    def add(self, tr: ReplayTransition) -> None:
        self._data.append(tr)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[ReplayTransition]:
        idx = rng.integers(len(self._data), size=batch_size)
        return [self._data[i] for i in idx]


# ---------------------------------------------------------------------------
# Episode runner shared by training and evaluation
# ---------------------------------------------------------------------------


def run_episode(
    env,
    pi_quick: PolicyProvider,
    pi_deep: PolicyProvider,
    switcher: SwitchPolicy,
    rng: np.random.Generator,
    *,
    persistence_p: float = 0.0,
    cost: float = 0.0,
    budget: int | None = None,
    penalty: float = 0.0,
    episode: int = 0,
    horizon: int | None = None,
    buffer: ReplayBuffer | None = None,
    records: list | None = None,
) -> EpisodeSummary:
    """Roll out one episode of the switched system."""
    horizon = horizon or env.horizon
    obs = env.reset(rng)
    m = 0
    n = budget
    ctx = StepContext()
    quick_first = getattr(switcher, "queries_quick_first", False)
    total = disc = call_cost = 0.0
    consulted_acts = deep_steps = 0
    success = False
    steps = 0
    for t in range(horizon):
        s = env.featurizer.encode(obs)
        actor_state = env.state_id
        if hasattr(env, "goal_distance"):
            ctx.goal_distance = env.goal_distance(actor_state)
        k = None if n is None else max(n, -1)
        g = switcher.decide(s, k, rng, ctx)
        m_t = m

        draw = None
        if m > 0:
            draw = int(rng.random() < persistence_p)
            if draw == 1:
                deep, consulted = True, False
            else:
                consulted = True
                deep = g == 1
                if not deep:
                    m = 0
        else:
            consulted = True
            deep = g == 1
            if deep:
                m += 1
        activation = consulted and g == 1
        if activation:
            consulted_acts += 1
            if n is not None:
                n -= 1

        actor = pi_deep if deep else pi_quick
        a = actor.act(actor_state, rng)
        step = env.step(a)
        this_cost = actor.call_cost + (pi_quick.call_cost if deep and quick_first else 0.0)

        stored = step.reward
        if activation:
            stored -= cost
        if n is not None and n < 0:
            stored -= penalty

        total += step.reward
        disc += env.gamma ** t * step.reward
        call_cost += this_cost
        deep_steps += deep
        ctx.recent_rewards.append(step.reward)
        terminal = bool(step.info.get("terminal", False))
        success = success or terminal
        k_next = None if n is None else max(n, -1)

        if buffer is not None and consulted:
            s_next = env.featurizer.encode(step.next_observation)
            buffer.add(ReplayTransition(s, k, int(g), stored, s_next, k_next, terminal))
        if records is not None:
            records.append(StepRecord(
                episode, t, s, step.info.get("location", str(actor_state)), m_t,
                draw, consulted, int(g), (Tier.DEEPTHINK if deep else Tier.QUICK).value, int(a),
                float(step.reward), float(stored), float(this_cost), k_next,
            ))
        steps = t + 1
        obs = step.next_observation
        if step.done:
            break
    return EpisodeSummary(episode, steps, total, disc, consulted_acts, deep_steps, call_cost, success)



# ---------------------------------------------------------------------------
# Training loops
# ---------------------------------------------------------------------------


def _check_bindings(env, pi_quick: PolicyProvider, pi_deep: PolicyProvider) -> None:
    for p in (pi_quick, pi_deep):
        if p.n_actions != env.n_actions:
            raise ValueError(f"provider {p.name!r} has {p.n_actions} actions, env has {env.n_actions}")
    if pi_quick.tier is not Tier.QUICK or pi_deep.tier is not Tier.DEEPTHINK:
        raise ValueError("providers must be (QUICK, DEEPTHINK) in that order")


def _train(env, pi_quick, pi_deep, learner: SwitcherLearner, config: TrainConfig,
           record: bool) -> tuple[TableSwitcher, TrainLog]:
    _check_bindings(env, pi_quick, pi_deep)
    rng = np.random.default_rng(config.seed)
    buffer = ReplayBuffer(config.buffer_capacity)
    log = TrainLog()
    for ep in range(config.episodes):
        explorer = LearnerSwitcher(learner, config.epsilon(ep))
        log.episodes.append(run_episode(
            env, pi_quick, pi_deep, explorer, rng,
            persistence_p=config.persistence_p, cost=config.cost, budget=config.budget,
            penalty=config.penalty, episode=ep, horizon=config.horizon, buffer=buffer,
            records=log.records if record else None,
        ))
        if not len(buffer):
            continue
        for _ in range(config.epochs):
            for _ in range(config.batches_per_epoch):
                for tr in buffer.sample(config.batch_size, rng):
                    learner.update(tr)
    return learner.policy(len(env.featurizer)), log


def run_londi(env, pi_quick, pi_deep, learner: SwitcherLearner, config: TrainConfig,
              *, record: bool = True) -> tuple[TableSwitcher, TrainLog]:
    """Train a cost-based switcher; returns its greedy decision table and the log."""
    if config.budget is not None:
        raise ValueError("run_londi takes no budget; use run_londi_b")
    if learner.budget is not None:
        raise ValueError("learner is budget-aware but the run is not")
    return _train(env, pi_quick, pi_deep, learner, config, record)


def run_londi_b(env, pi_quick, pi_deep, learner: SwitcherLearner, config: TrainConfig,
                *, record: bool = True) -> tuple[TableSwitcher, TrainLog]:
    """Train a budget-aware switcher over (state, remaining budget)."""
    if config.budget is None:
        raise ValueError("run_londi_b needs a budget")
    if learner.budget != config.budget:
        raise ValueError(f"learner budget {learner.budget} != config budget {config.budget}")
    return _train(env, pi_quick, pi_deep, learner, config, record)


# ---------------------------------------------------------------------------
# Q-learning variant over base actions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QTransition:
    state: int
    action: int
    reward: float
    next_state: int
    done: bool = False


def switched_q_update(
    q: np.ndarray,
    transition: QTransition,
    pi_deep: np.ndarray,
    cost: float,
    alpha: float,
    *,
    gamma: float,
    pi_quick: np.ndarray | None = None,
) -> np.ndarray:
    """In-place update of Q(s, a) towards the two-branch target.

    target = r + gamma * max{ M Q(s'), no-switch value of Q(s') }, with the
    branches as in :mod:`londi.switching`; a terminal next state contributes 0.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    tr = transition
    if tr.done:
        cont = 0.0
    else:
        cont = max(intervention_value(q, tr.next_state, pi_deep, cost),
                   no_switch_value(q, tr.next_state, pi_quick))
    target = tr.reward + gamma * cont
    q[tr.state, tr.action] += alpha * (target - q[tr.state, tr.action])
    return q


def switched_q_learning(
    mdp,
    pi_deep: np.ndarray,
    cost: float,
    updates: int,
    rng: np.random.Generator,
    *,
    pi_quick: np.ndarray | None = None,
    rate_exponent: float = 0.8,
) -> tuple[np.ndarray, np.ndarray]:
    """Asynchronous switched Q-learning from a generative model.

    Each update draws a non-terminal (state, action) pair uniformly, so every
    pair keeps being visited. The step size at the n-th visit of a pair is
    ``(1 + n) ** -rate_exponent``, which satisfies the Robbins-Monro
    conditions for exponents in (1/2, 1]. Returns (Q, visit counts).
    """
    if not 0.5 < rate_exponent <= 1.0:
        raise ValueError("rate_exponent must lie in (0.5, 1]")
    S, A = mdp.n_states, mdp.n_actions
    live = np.array([s for s in range(S) if s not in mdp.terminal_states])
    if live.size == 0:
        raise ValueError("MDP has no non-terminal states")
    cdf = np.cumsum(mdp.transition, axis=2)
    cdf[..., -1] = 1.0
    q = np.zeros((S, A))
    visits = np.zeros((S, A), dtype=np.int64)
    terminal = np.zeros(S, dtype=bool)
    terminal[list(mdp.terminal_states)] = True
    for _ in range(int(updates)):
        s = int(live[rng.integers(live.size)])
        a = int(rng.integers(A))
        s2 = int(np.searchsorted(cdf[s, a], rng.random(), side="right"))
        visits[s, a] += 1
        alpha = (1.0 + visits[s, a]) ** -rate_exponent
        tr = QTransition(s, a, float(mdp.reward[s, a]), s2, bool(terminal[s2]))
        switched_q_update(q, tr, pi_deep, cost, alpha, gamma=mdp.gamma, pi_quick=pi_quick)
    return q, visits


# ---------------------------------------------------------------------------
# Trace validation
# ---------------------------------------------------------------------------


def validate_trace(records: Sequence[StepRecord]) -> None:
    """Check the regime law on every step; raises ValueError on the first violation.

    DEEPTHINK acts iff (m > 0 and draw = 1) or (consulted and g = 1), the switch
    state evolves as the training loop prescribes, and a step is consulted
    exactly when no persistence draw of 1 occurred.
    """
    prev = None
    for r in records:
        persisted = r.m > 0 and r.persist_draw == 1
        if (r.persist_draw is not None) != (r.m > 0):
            raise ValueError(f"persistence draw present iff m > 0 violated at {r}")
        if r.consulted == persisted:
            raise ValueError(f"consulted flag inconsistent at {r}")
        if r.deep != (persisted or (r.consulted and r.g == 1)):
            raise ValueError(f"regime law violated at {r}")
        if prev is not None and prev.episode == r.episode:
            if prev.deep:
                expected = prev.m + 1 if prev.m == 0 else prev.m
            else:
                expected = 0
            if r.m != expected:
                raise ValueError(f"switch state should be {expected} at {r}")
        elif r.m != 0:
            raise ValueError(f"episode must start with the switch off: {r}")
        prev = r


def validate_budget_trace(records: Sequence[StepRecord], cost: float, penalty: float,
                          budget: int) -> None:
    """Check budget bookkeeping and that every over-budget step carries the penalty."""
    remaining = None
    episode = None
    for r in records:
        if r.episode != episode:
            episode, remaining = r.episode, budget
        activation = r.consulted and r.g == 1
        remaining = max(remaining - 1, -1) if activation else remaining
        if r.remaining != remaining:
            raise ValueError(f"remaining budget should be {remaining} at {r}")
        expected = r.reward - (cost if activation else 0.0) - (penalty if remaining < 0 else 0.0)
        if not np.isclose(r.stored_reward, expected, rtol=0, atol=1e-12):
            raise ValueError(f"stored reward should be {expected} at {r}")


def consulted_activations_per_episode(records: Iterable[StepRecord]) -> dict[int, int]:
    counts: dict[int, int] = {}
    for r in records:
        counts.setdefault(r.episode, 0)
        if r.consulted and r.g == 1:
            counts[r.episode] += 1
    return counts


def regime_run_lengths(records: Sequence[StepRecord]) -> list[int]:
    """Lengths of DEEPTHINK regimes, from a fresh activation until QUICK acts again.

    Regimes cut short by the end of an episode are dropped.
    """
    lengths = []
    current = None
    episode = None
    for r in records:
        if r.episode != episode:
            episode, current = r.episode, None
        if current is None:
            if r.m == 0 and r.deep:
                current = 1
        elif r.deep:
            current += 1
        else:
            lengths.append(current)
            current = None
    return lengths
