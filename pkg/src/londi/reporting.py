"""Evaluation, sweeps, heatmaps and comparison tables.

Evaluation is greedy (no exploration) and repeated over seeds. For each seed
the reward metrics come from ``episodes`` episodes; the compute ledger (AUC
proxy) and the relative DEEPTHINK share are measured over a fixed stream of
``episodes * horizon`` timesteps in which episodes restart on termination, so
every bundle is charged for the same number of timesteps.

Tables are plain CSV files with a header row; every table has a JSON
metadata sidecar ``<table>.meta.json``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from . import __version__
from .policies import PolicyProvider
from .seeding import derive_rng, derive_seed
from .trainer import (
    StepRecord,
    SwitcherLearner,
    SwitchPolicy,
    TrainConfig,
    make_baseline_switcher,
    run_episode,
    run_londi,
    run_londi_b,
)

# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------


@dataclass
class Bundle:
    """Everything needed to roll out a switched system."""

    name: str
    pi_quick: PolicyProvider
    pi_deep: PolicyProvider
    switcher: SwitchPolicy
    budget: int | None = None
    penalty: float = 0.0
    cost: float = 0.0
    persistence_p: float = 0.0


BundleSource = Union[Bundle, Callable[[int], Bundle]]


@dataclass(frozen=True)
class ExperimentConfig:
    """Training and evaluation knobs shared by the sweeps."""

    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    root_seed: int = 0
    train_episodes: int = 3000
    eval_episodes: int = 1000
    alpha: float = 0.1
    schedule: str = "constant"
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    batch_size: int = 32
    batches_per_epoch: int = 4
    persistence_p: float = 0.0
    penalty: float = 10.0
    cost: float = 0.0
    baseline_p: float = 0.5
    cascade_threshold: float = 0.05
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        if self.eval_episodes < 1 or self.train_episodes < 1:
            raise ValueError("episode counts must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def train_config(self, seed: int, *, cost: float = 0.0, budget: int | None = None) -> TrainConfig:
        return TrainConfig(
            episodes=self.train_episodes, persistence_p=self.persistence_p, cost=cost,
            budget=budget, penalty=self.penalty if budget is not None else 0.0,
            batch_size=self.batch_size, batches_per_epoch=self.batches_per_epoch,
            seed=derive_seed(self.root_seed, seed, "train"), alpha=self.alpha,
            epsilon_start=self.epsilon_start, epsilon_end=self.epsilon_end,
            epsilon_decay_fraction=self.epsilon_decay_fraction,
        )


# Trained bundles keyed by object identity and settings. Training is
# deterministic, so a hit is exactly what retraining would produce; the stored
# references keep the keyed objects alive so their ids cannot be reused.
_TRAINED: dict = {}


def clear_training_cache() -> None:
    _TRAINED.clear()


@dataclass
class LondiFactory:
    """Picklable seed -> trained bundle; ``budget=None`` trains LONDI, otherwise LONDI-B."""

    env: object
    pi_quick: PolicyProvider
    pi_deep: PolicyProvider
    config: ExperimentConfig
    cost: float = 0.0
    budget: int | None = None

    def __call__(self, seed: int) -> Bundle:
        key = (id(self.env), id(self.pi_quick), id(self.pi_deep), self.config, self.cost,
               self.budget, seed)
        hit = _TRAINED.get(key)
        if hit is not None:
            return hit[1]
        bundle = self._train(seed)
        _TRAINED[key] = ((self.env, self.pi_quick, self.pi_deep), bundle)
        return bundle

    def _train(self, seed: int) -> Bundle:
        cfg = self.config.train_config(seed, cost=self.cost, budget=self.budget)
        learner = SwitcherLearner(len(self.env.featurizer), self.env.gamma, budget=self.budget,
                                  alpha=cfg.alpha, schedule=self.config.schedule)
        train = run_londi if self.budget is None else run_londi_b
        switcher, _ = train(self.env, self.pi_quick, self.pi_deep, learner, cfg, record=False)
        name = "londi" if self.budget is None else f"londi-b(n={self.budget})"
        return Bundle(name, self.pi_quick, self.pi_deep, switcher, self.budget,
                      cfg.penalty, self.cost, self.config.persistence_p)


def anchor_bundle(kind: str, pi_quick: PolicyProvider, pi_deep: PolicyProvider) -> Bundle:
    """QUICK-only (``always_quick``) or DEEP-only (``always_deep``) reference."""
    return Bundle(kind, pi_quick, pi_deep, make_baseline_switcher(kind))


def baseline_bundle(kind: str, pi_quick, pi_deep, *, budget: int | None, penalty: float = 0.0,
                    p: float = 0.5, threshold: float = 0.05) -> Bundle:
    switcher = make_baseline_switcher(kind, p=p, threshold=threshold)
    return Bundle(switcher.name, pi_quick, pi_deep, switcher, budget, penalty)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SeedMetrics:
    seed: int
    episodes: int
    mean_reward: float
    success_rate: float
    activations_mean: float
    activations_max: int
    deep_steps: int
    stream_steps: int
    stream_deep_steps: int
    relative_calls: float
    auc: float


@dataclass(frozen=True)
class EvalMetrics:
    name: str
    mean_reward: float
    std_reward: float
    activations_mean: float
    activations_max: int
    deep_steps: int
    relative_calls: float
    auc: float
    success_rate: float
    per_seed: tuple[SeedMetrics, ...]
    records: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(m.seed for m in self.per_seed)


def seed_std(values: Sequence[float]) -> float:
    """Across-seed standard deviation (sample std; 0 for a single seed)."""
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1)) if values.size > 1 else 0.0


def pooled_std(a: EvalMetrics, b: EvalMetrics) -> float:
    return float(np.sqrt((a.std_reward ** 2 + b.std_reward ** 2) / 2.0))


def _rollout(env, bundle: Bundle, rng: np.random.Generator, episode: int, horizon: int,
             records: list | None):
    return run_episode(
        env, bundle.pi_quick, bundle.pi_deep, bundle.switcher, rng,
        persistence_p=bundle.persistence_p, cost=bundle.cost, budget=bundle.budget,
        penalty=bundle.penalty, episode=episode, horizon=horizon, records=records,
    )


def evaluate_seed(env, source: BundleSource, episodes: int, seed: int, *, root_seed: int = 0,
                  stream: bool = True, keep_records: bool = False) -> tuple[str, SeedMetrics, list]:
    bundle = source(seed) if callable(source) else source
    rng = derive_rng(root_seed, seed, "eval")
    records = [] if keep_records else None
    horizon = env.horizon
    rewards, acts, successes = [], [], []
    deep_steps = 0
    steps = deep = 0
    cost = 0.0
    for ep in range(episodes):
        summ = _rollout(env, bundle, rng, ep, horizon, records)
        rewards.append(summ.env_return)
        acts.append(summ.consulted_activations)
        successes.append(summ.success)
        deep_steps += summ.deep_steps
        steps += summ.steps
        deep += summ.deep_steps
        cost += summ.call_cost
    if stream:
        left = episodes * horizon - steps
        ep = episodes
        while left > 0:
            summ = _rollout(env, bundle, rng, ep, min(horizon, left), None)
            steps += summ.steps
            deep += summ.deep_steps
            cost += summ.call_cost
            left -= summ.steps
            ep += 1
    metrics = SeedMetrics(
        seed, episodes, float(np.mean(rewards)), float(np.mean(successes)),
        float(np.mean(acts)), int(max(acts)), deep_steps, steps, deep,
        deep / steps if steps else 0.0, cost,
    )
    return bundle.name, metrics, records or []


def _evaluate_task(args):
    env, source, episodes, seed, root_seed, stream, keep = args
    return evaluate_seed(env, source, episodes, seed, root_seed=root_seed, stream=stream,
                         keep_records=keep)


def _map(tasks: list, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [_evaluate_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_evaluate_task, tasks))


def _aggregate(name: str, per_seed: Sequence[SeedMetrics], records: dict) -> EvalMetrics:
    per_seed = tuple(sorted(per_seed, key=lambda m: m.seed))
    means = [m.mean_reward for m in per_seed]
    return EvalMetrics(
        name=name,
        mean_reward=float(np.mean(means)),
        std_reward=seed_std(means),
        activations_mean=float(np.mean([m.activations_mean for m in per_seed])),
        activations_max=max(m.activations_max for m in per_seed),
        deep_steps=sum(m.deep_steps for m in per_seed),
        relative_calls=float(np.mean([m.relative_calls for m in per_seed])),
        auc=float(np.mean([m.auc for m in per_seed])),
        success_rate=float(np.mean([m.success_rate for m in per_seed])),
        per_seed=per_seed,
        records=records,
    )


def evaluate(env, source: BundleSource, episodes: int, seeds: Sequence[int], *,
             root_seed: int = 0, stream: bool = True, keep_records: bool = False,
             workers: int = 1) -> EvalMetrics:
    """Greedy evaluation of a bundle (or a seed -> bundle factory) over seeds."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if not seeds:
        raise ValueError("seeds must be nonempty")
    return _evaluate_many(env, [source], episodes, seeds, root_seed=root_seed, stream=stream,
                          keep_records=keep_records, workers=workers)[0]


def _evaluate_many(env, sources: Sequence[BundleSource], episodes: int, seeds: Sequence[int], *,
                   root_seed: int, stream: bool = True, keep_records: bool = False,
                   workers: int = 1) -> list[EvalMetrics]:
    tasks = [(env, src, episodes, seed, root_seed, stream, keep_records)
             for src in sources for seed in seeds]
    results = _map(tasks, workers)
    out = []
    for i in range(len(sources)):
        chunk = results[i * len(seeds):(i + 1) * len(seeds)]
        name = chunk[0][0]
        records = {m.seed: recs for _, m, recs in chunk} if keep_records else {}
        out.append(_aggregate(name, [m for _, m, _ in chunk], records))
    return out


# ---------------------------------------------------------------------------
# Tables
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("mean_reward", "std_reward", "normalized_reward", "activations_mean",
                  "activations_max", "deep_steps", "relative_calls", "auc", "success_rate")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return "" if v is None else str(v)


@dataclass
class Table:
    columns: tuple[str, ...]
    rows: list[dict]
    metadata: dict = field(default_factory=dict)

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        meta = dict(self.metadata)
        meta.setdefault("code_version", __version__)
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        return path


def read_table(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _metric_row(m: EvalMetrics, deep_anchor: EvalMetrics | None, **extra) -> dict:
    row = dict(extra)
    row.update(name=m.name, mean_reward=m.mean_reward, std_reward=m.std_reward,
               activations_mean=m.activations_mean, activations_max=m.activations_max,
               deep_steps=m.deep_steps, relative_calls=m.relative_calls, auc=m.auc,
               success_rate=m.success_rate)
    denom = deep_anchor.mean_reward if deep_anchor is not None else 0.0
    row["normalized_reward"] = m.mean_reward / denom if denom else None
    row["metrics"] = m
    return row


def _meta(kind: str, config: ExperimentConfig, **extra) -> dict:
    cfg = asdict(config)
    meta = {"table": kind, "config": cfg, "config_hash": config_hash({"kind": kind, **cfg, **extra}),
            "seeds": list(config.seeds), "root_seed": config.root_seed}
    meta.update(extra)
    return meta


def _anchors(env, pi_quick, pi_deep, config: ExperimentConfig) -> tuple[EvalMetrics, EvalMetrics]:
    q, d = _evaluate_many(env, [anchor_bundle("always_quick", pi_quick, pi_deep),
                                anchor_bundle("always_deep", pi_quick, pi_deep)],
                          config.eval_episodes, config.seeds, root_seed=config.root_seed,
                          workers=config.workers)
    return q, d


def sweep_cost(env, grid: Sequence[float], pi_quick, pi_deep,
               config: ExperimentConfig = ExperimentConfig()) -> Table:
    """One trained-LONDI row per switch cost plus QUICK-only and DEEP-only anchors."""
    grid = [float(c) for c in grid]
    if not grid:
        raise ValueError("cost grid must be nonempty")
    if min(grid) < 0:
        raise ValueError("costs must be nonnegative")
    quick, deep = _anchors(env, pi_quick, pi_deep, config)
    sources = [LondiFactory(env, pi_quick, pi_deep, config, cost=c) for c in sorted(grid)]
    rows_m = _evaluate_many(env, sources, config.eval_episodes, config.seeds,
                            root_seed=config.root_seed, workers=config.workers)
    rows = [_metric_row(quick, deep, kind="anchor", cost=None),
            _metric_row(deep, deep, kind="anchor", cost=None)]
    rows += [_metric_row(m, deep, kind="londi", cost=c) for c, m in zip(sorted(grid), rows_m)]
    return Table(("kind", "name", "cost") + METRIC_COLUMNS, rows,
                 _meta("sweep-cost", config, grid=sorted(grid)))


def sweep_budget(env, grid: Sequence[int], pi_quick, pi_deep,
                 config: ExperimentConfig = ExperimentConfig(), *,
                 keep_records: bool = False) -> Table:
    """One trained-LONDI-B row per budget (with usage) plus the two anchors."""
    grid = sorted(int(n) for n in grid)
    if not grid:
        raise ValueError("budget grid must be nonempty")
    if grid[0] < 0:
        raise ValueError("budgets must be nonnegative")
    quick, deep = _anchors(env, pi_quick, pi_deep, config)
    sources = [LondiFactory(env, pi_quick, pi_deep, config, cost=config.cost, budget=n) for n in grid]
    rows_m = _evaluate_many(env, sources, config.eval_episodes, config.seeds,
                            root_seed=config.root_seed, keep_records=keep_records,
                            workers=config.workers)
    rows = [_metric_row(quick, deep, kind="anchor", budget=None, usage=None),
            _metric_row(deep, deep, kind="anchor", budget=None, usage=None)]
    rows += [_metric_row(m, deep, kind="londi-b", budget=n, usage=m.activations_max)
             for n, m in zip(grid, rows_m)]
    return Table(("kind", "name", "budget", "usage") + METRIC_COLUMNS, rows,
                 _meta("sweep-budget", config, grid=grid))


def compare_baselines(env, sources: dict[str, BundleSource],
                      config: ExperimentConfig = ExperimentConfig()) -> tuple[Table, Table]:
    """Per-bundle metrics plus every pairwise mean difference with its pooled std."""
    if len(sources) < 2:
        raise ValueError("need at least two bundles to compare")
    names = list(sources)
    metrics = _evaluate_many(env, [sources[n] for n in names], config.eval_episodes, config.seeds,
                             root_seed=config.root_seed, workers=config.workers)
    by_name = dict(zip(names, metrics))
    rows = [_metric_row(by_name[n], None, label=n) for n in names]
    pairs = []
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            ma, mb = by_name[a], by_name[b]
            ps = pooled_std(ma, mb)
            diff = ma.mean_reward - mb.mean_reward
            pairs.append({"a": a, "b": b, "diff": diff, "pooled_std": ps,
                          "diff_over_std": diff / ps if ps > 0 else None})
    meta = _meta("compare", config, bundles=names)
    return (Table(("label", "name") + METRIC_COLUMNS, rows, meta),
            Table(("a", "b", "diff", "pooled_std", "diff_over_std"), pairs, meta))


# ---------------------------------------------------------------------------
# Heatmaps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HeatmapTable:
    counts: dict[str, int]
    shares: dict[str, float] | None

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def shares_undefined(self) -> bool:
        return self.shares is None

    def share(self, location: str) -> float:
        if self.shares is None:
            raise ValueError("no activations; shares are undefined")
        return self.shares.get(location, 0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("location", "count", "share"))
        for loc in sorted(self.counts):
            share = "" if self.shares is None else _fmt(self.shares[loc])
            w.writerow((loc, self.counts[loc], share))
        return buf.getvalue()

    def save(self, path: str | Path, metadata: dict | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        meta = {"table": "heatmap", "code_version": __version__, "total": self.total,
                "shares_undefined": self.shares_undefined, **(metadata or {})}
        path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        return path


def emit_heatmap(records: Sequence[StepRecord], location_map: dict[int, str] | None = None,
                 path: str | Path | None = None) -> HeatmapTable:
    """Count consulted activations per location.

    Every location in ``location_map`` (if given) appears with its count, zero
    included. A record without a location and not covered by the map is rejected.
    """
    counts: dict[str, int] = {loc: 0 for loc in (location_map or {}).values()}
    for r in records:
        loc = r.location if r.location else (location_map or {}).get(r.state)
        if not loc:
            raise ValueError(f"record at episode {r.episode} step {r.step} has no location")
        counts.setdefault(loc, 0)
        if r.consulted and r.g == 1:
            counts[loc] += 1
    total = sum(counts.values())
    shares = {loc: c / total for loc, c in counts.items()} if total else None
    table = HeatmapTable(counts, shares)
    if path is not None:
        table.save(path)
    return table


def with_seeds(config: ExperimentConfig, seeds: Sequence[int]) -> ExperimentConfig:
    return replace(config, seeds=tuple(seeds))
