"""Command-line entry point: ``londi <subcommand> [--config FILE] [flags]``.

Config files are JSON objects whose keys are the long flag names with dashes
replaced by underscores (``eval_episodes``, ``root_seed``...). Flags given on
the command line override the file; unknown keys are rejected.

Environment specs (``--env``) are either the builtin name ``rooms``, a
``londi-mdp`` text file, or a JSON object::

    {"type": "rooms", "config": {...RoomsWorldConfig fields...}}
    {"type": "grid", "layout": "...", "options": {...GridTaskConfig keywords...}}
    {"type": "mdp", "path": "chain.mdp", "start": 0, "horizon": 50,
     "quick_epsilon": 0.6, "deep_epsilon": 0.05}

Artifacts go to ``<outdir>/<subcommand>/<config-hash>/`` with ``tables/``,
``logs/``, ``solutions/``, the resolved ``config.json`` and ``metadata.json``.

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 I/O failure. On
failure a single JSON line ``{"error": ..., "message": ...}`` goes to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .budget import BudgetSpec, augment_with_budget, solve_budgeted
from .envs import GridTaskConfig, MDPEnv, RoomsWorldConfig, build_grid_task, build_rooms_world
from .envs.base import ExportUnavailableError
from .mdp_core import SolverError, load_mdp
from .policies import DEEP_EPSILON, make_provider_pair
from .reporting import (
    ExperimentConfig,
    LondiFactory,
    anchor_bundle,
    baseline_bundle,
    compare_baselines,
    config_hash,
    emit_heatmap,
    evaluate,
    sweep_budget,
    sweep_cost,
    Table,
)
from .seeding import derive_seed
from .switching import save_solution, solve_switcher
from .trainer import SwitcherLearner, TrainLog, run_londi, run_londi_b

SUBCOMMANDS = ("solve", "solve-budgeted", "train", "train-b", "eval", "sweep-cost",
               "sweep-budget", "heatmap", "compare")
DEFAULT_BUNDLES = ("londi-b", "probabilistic", "cascade", "always_quick", "always_deep")
EXIT_VALIDATION, EXIT_SOLVER, EXIT_IO = 2, 3, 4


class ValidationError(ValueError):
    pass


@dataclass
class RunConfig:
    subcommand: str
    env: str = "rooms"
    cost: float = 0.0
    budget: int | None = None
    penalty: float = 10.0
    persistence: float = 0.0
    episodes: int = 3000
    eval_episodes: int = 1000
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    root_seed: int = 0
    outdir: str = "runs"
    tol: float = 1e-10
    grid: list[float] | None = None
    alpha: float = 0.1
    deep_epsilon: float | None = None
    quick_epsilon: float | None = None
    bundles: list[str] | None = None
    log: str | None = None
    workers: int = 1

    def validate(self) -> None:
        if self.subcommand not in SUBCOMMANDS:
            raise ValidationError(f"unknown subcommand {self.subcommand!r}")
        if not np.isfinite(self.cost) or self.cost < 0:
            raise ValidationError("cost must be a finite nonnegative number")
        if self.penalty < 0:
            raise ValidationError("penalty must be nonnegative")
        if self.budget is not None and self.budget < 0:
            raise ValidationError("budget must be nonnegative")
        if not 0.0 <= self.persistence <= 1.0:
            raise ValidationError("persistence must lie in [0, 1]")
        if self.episodes < 1 or self.eval_episodes < 1:
            raise ValidationError("episode counts must be positive")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds) or min(self.seeds) < 0:
            raise ValidationError("seeds must be a nonempty list of distinct nonnegative integers")
        if self.root_seed < 0:
            raise ValidationError("root_seed must be nonnegative")
        if not 0 < self.tol < 1:
            raise ValidationError("tol must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ValidationError("alpha must lie in (0, 1]")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.subcommand in ("solve-budgeted", "train-b") and self.budget is None:
            raise ValidationError(f"{self.subcommand} needs --budget")
        if self.grid is not None and not self.grid:
            raise ValidationError("grid must be nonempty")
        if self.subcommand == "sweep-budget" and self.grid is not None:
            if any(float(n) != int(n) or n < 0 for n in self.grid):
                raise ValidationError("budget grid entries must be nonnegative integers")
        if self.bundles is not None:
            unknown = set(self.bundles) - set(DEFAULT_BUNDLES) - {"londi"}
            if unknown:
                raise ValidationError(f"unknown bundles {sorted(unknown)}")
            if len(self.bundles) < 2:
                raise ValidationError("compare needs at least two bundles")
        if self.env != "rooms" and not Path(self.env).is_file():
            raise ValidationError(f"environment spec {self.env!r} does not exist")
        if self.log is not None and not Path(self.log).is_file():
            raise ValidationError(f"log file {self.log!r} does not exist")

    def hashed(self) -> dict:
        d = asdict(self)
        d.pop("outdir")
        d.pop("workers")
        return d


CONFIG_KEYS = {f.name for f in fields(RunConfig)} - {"subcommand"}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="londi", description="Learned QUICK/DEEPTHINK switching: solve, train, evaluate.")
    p.add_argument("--version", action="version", version=f"londi {__version__}")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--env", help="'rooms', a londi-mdp file or a JSON environment spec")
    p.add_argument("--cost", type=float, help="switch cost per consulted activation")
    p.add_argument("--budget", type=int, help="activation budget per episode")
    p.add_argument("--penalty", type=float, help="per-step over-budget penalty")
    p.add_argument("--persistence", type=float, help="probability an active DEEPTHINK regime persists")
    p.add_argument("--episodes", type=int, help="training episodes per seed")
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--seeds", type=_int_list, help="comma-separated run seeds")
    p.add_argument("--root-seed", type=int)
    p.add_argument("--outdir")
    p.add_argument("--tol", type=float, help="solver tolerance")
    p.add_argument("--grid", type=_float_list, help="comma-separated sweep grid")
    p.add_argument("--alpha", type=float, help="learning rate")
    p.add_argument("--deep-epsilon", type=float)
    p.add_argument("--quick-epsilon", type=float)
    p.add_argument("--bundles", type=_str_list, help=f"compare: subset of {','.join(DEFAULT_BUNDLES)},londi")
    p.add_argument("--log", help="heatmap: existing JSONL step log to read instead of training")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    return p


def load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config file {path!r} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config file {path!r} is not valid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    unknown = sorted(set(data) - CONFIG_KEYS)
    if unknown:
        raise ValidationError(f"unknown config keys {unknown}")
    return data


def resolve_config(argv: list[str]) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = load_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        cfg = RunConfig(args.subcommand, **values)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Environments and providers
# ---------------------------------------------------------------------------


@dataclass
class Setup:
    env: object
    mdp: object
    start: int
    pi_quick: object
    pi_deep: object


def load_environment(spec: str) -> tuple[object, dict]:
    """Returns the environment and the provider options found in the environment file."""
    if spec == "rooms":
        return build_rooms_world(), {}
    path = Path(spec)
    text = path.read_text()
    if not text.lstrip().startswith("{"):
        return MDPEnv(load_mdp(path)), {}
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"environment spec is not valid JSON: {exc.msg}") from None
    kind = data.get("type")
    opts = {k: data[k] for k in ("quick_epsilon", "deep_epsilon") if k in data}
    if kind == "rooms":
        return build_rooms_world(RoomsWorldConfig(**data.get("config", {}))), opts
    if kind == "grid":
        layout = data.get("layout")
        if layout is None and "layout_file" in data:
            layout = (path.parent / data["layout_file"]).read_text()
        if layout is None:
            raise ValidationError("grid spec needs 'layout' or 'layout_file'")
        return build_grid_task(GridTaskConfig.from_layout(layout, **data.get("options", {}))), opts
    if kind == "mdp":
        mdp = load_mdp(path.parent / data["path"])
        env = MDPEnv(mdp, data.get("start", 0), data.get("horizon", 100))
        return env, opts
    raise ValidationError(f"unknown environment type {kind!r}")


def make_setup(cfg: RunConfig) -> Setup:
    env, opts = load_environment(cfg.env)
    try:
        mdp = env.export_mdp()
    except ExportUnavailableError as exc:
        raise ValidationError(f"environment has no exact model to build policies from: {exc}") from None
    start = env.start_state if hasattr(env, "start_state") else int(np.argmax(env.start_distribution))
    deep_eps = cfg.deep_epsilon if cfg.deep_epsilon is not None else opts.get("deep_epsilon", DEEP_EPSILON)
    quick_eps = cfg.quick_epsilon if cfg.quick_epsilon is not None else opts.get("quick_epsilon")
    pq, pd = make_provider_pair(mdp, start, deep_epsilon=deep_eps, quick_epsilon=quick_eps)
    return Setup(env, mdp, start, pq, pd)


def experiment_config(cfg: RunConfig) -> ExperimentConfig:
    return ExperimentConfig(
        seeds=tuple(cfg.seeds), root_seed=cfg.root_seed, train_episodes=cfg.episodes,
        eval_episodes=cfg.eval_episodes, alpha=cfg.alpha, persistence_p=cfg.persistence,
        penalty=cfg.penalty, cost=cfg.cost, workers=cfg.workers,
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _switch_table_rows(env, table, budget):
    rows = []
    for s in range(table.shape[0]):
        loc = env.location(s)
        if budget is None:
            rows.append({"state": s, "location": loc, "remaining": None, "g": int(table[s])})
        else:
            for j in range(table.shape[1]):
                rows.append({"state": s, "location": loc, "remaining": j - 1, "g": int(table[s, j])})
    return rows


def cmd_solve(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    sol = solve_switcher(setup.mdp, setup.pi_quick.probabilities, setup.pi_deep.probabilities,
                         cfg.cost, tol=cfg.tol)
    save_solution(sol, out / "solutions" / "solution.txt")
    return {"iterations": sol.iterations, "residual": sol.residual,
            "activations": int(sol.g_star.sum()), "start_value": float(sol.v_star[setup.start])}


def cmd_solve_budgeted(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    spec = BudgetSpec(cfg.budget, penalty=cfg.penalty, cost=cfg.cost)
    bmdp = augment_with_budget(setup.mdp, setup.pi_quick.probabilities, setup.pi_deep.probabilities, spec)
    sol = solve_budgeted(bmdp, tol=cfg.tol)
    sol.save(out / "solutions" / "budget_solution.txt")
    return {"start_value": sol.value(setup.start, cfg.budget)}


def cmd_train(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    budget = cfg.budget if cfg.subcommand == "train-b" else None
    if cfg.subcommand == "train" and cfg.budget is not None:
        raise ValidationError("train takes no budget; use train-b")
    ex = experiment_config(cfg)
    rows = []
    for seed in cfg.seeds:
        tc = ex.train_config(seed, cost=cfg.cost, budget=budget)
        learner = SwitcherLearner(len(setup.env.featurizer), setup.env.gamma, budget=budget, alpha=cfg.alpha)
        runner = run_londi if budget is None else run_londi_b
        switcher, log = runner(setup.env, setup.pi_quick, setup.pi_deep, learner, tc)
        log.save(out / "logs" / f"train_seed{seed}.jsonl")
        Table(("state", "location", "remaining", "g"),
              _switch_table_rows(setup.env, switcher.table, budget),
              {"seed": seed, "derived_seed": tc.seed}).save(out / "solutions" / f"switcher_seed{seed}.csv")
        tail = log.episodes[-max(1, len(log.episodes) // 10):]
        rows.append({"seed": seed, "episodes": len(log.episodes),
                     "final_return": float(np.mean([e.env_return for e in tail])),
                     "final_activations": float(np.mean([e.consulted_activations for e in tail]))})
    Table(("seed", "episodes", "final_return", "final_activations"), rows,
          {"seeds": cfg.seeds}).save(out / "tables" / "train_summary.csv")
    return {"seeds": len(cfg.seeds)}


def _metrics_table(metrics, deep_reward):
    rows = []
    for m in metrics:
        rows.append({"name": m.name, "mean_reward": m.mean_reward, "std_reward": m.std_reward,
                     "normalized_reward": m.mean_reward / deep_reward if deep_reward else None,
                     "activations_mean": m.activations_mean, "activations_max": m.activations_max,
                     "deep_steps": m.deep_steps, "relative_calls": m.relative_calls, "auc": m.auc,
                     "success_rate": m.success_rate})
    return Table(tuple(rows[0]), rows)


def cmd_eval(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    ex = experiment_config(cfg)
    sources = [anchor_bundle("always_quick", setup.pi_quick, setup.pi_deep),
               anchor_bundle("always_deep", setup.pi_quick, setup.pi_deep),
               LondiFactory(setup.env, setup.pi_quick, setup.pi_deep, ex, cost=cfg.cost, budget=cfg.budget)]
    metrics = [evaluate(setup.env, s, cfg.eval_episodes, cfg.seeds, root_seed=cfg.root_seed,
                        workers=cfg.workers) for s in sources]
    table = _metrics_table(metrics, metrics[1].mean_reward)
    table.metadata = {"seeds": cfg.seeds}
    table.save(out / "tables" / "eval.csv")
    seed_rows = [{"name": m.name, **asdict(s)} for m in metrics for s in m.per_seed]
    Table(tuple(seed_rows[0]), seed_rows, {"seeds": cfg.seeds}).save(out / "tables" / "eval_per_seed.csv")
    return {"londi_mean_reward": metrics[2].mean_reward}


def _strip(table: Table) -> Table:
    return replace(table, rows=[{k: v for k, v in r.items() if k != "metrics"} for r in table.rows])


def cmd_sweep_cost(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    grid = cfg.grid if cfg.grid is not None else [0.0, 0.05, 0.1, 0.2, 0.3]
    table = sweep_cost(setup.env, grid, setup.pi_quick, setup.pi_deep, experiment_config(cfg))
    _strip(table).save(out / "tables" / "sweep_cost.csv")
    return {"rows": len(table.rows)}


def cmd_sweep_budget(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    grid = [int(n) for n in cfg.grid] if cfg.grid is not None else [0, 1, 2, 3, 4]
    table = sweep_budget(setup.env, grid, setup.pi_quick, setup.pi_deep, experiment_config(cfg))
    _strip(table).save(out / "tables" / "sweep_budget.csv")
    return {"rows": len(table.rows)}


def cmd_heatmap(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    locations = {s: setup.env.location(s) for s in range(len(setup.env.featurizer))}
    if cfg.log is not None:
        records = TrainLog.read_records(cfg.log)
    else:
        ex = experiment_config(cfg)
        factory = LondiFactory(setup.env, setup.pi_quick, setup.pi_deep, ex, cost=cfg.cost, budget=cfg.budget)
        m = evaluate(setup.env, factory, cfg.eval_episodes, cfg.seeds, root_seed=cfg.root_seed,
                     stream=False, keep_records=True, workers=cfg.workers)
        records = [r for seed in sorted(m.records) for r in m.records[seed]]
    hm = emit_heatmap(records, locations)
    hm.save(out / "tables" / "heatmap.csv", {"seeds": cfg.seeds})
    return {"activations": hm.total}


def cmd_compare(cfg: RunConfig, setup: Setup, out: Path) -> dict:
    ex = experiment_config(cfg)
    budget = cfg.budget if cfg.budget is not None else 1
    names = cfg.bundles or list(DEFAULT_BUNDLES)
    pq, pd = setup.pi_quick, setup.pi_deep
    sources = {}
    for name in names:
        if name == "londi-b":
            sources[name] = LondiFactory(setup.env, pq, pd, ex, cost=cfg.cost, budget=budget)
        elif name == "londi":
            sources[name] = LondiFactory(setup.env, pq, pd, ex, cost=cfg.cost)
        elif name in ("probabilistic", "cascade"):
            sources[name] = baseline_bundle(name, pq, pd, budget=budget, penalty=cfg.penalty,
                                            p=ex.baseline_p, threshold=ex.cascade_threshold)
        else:
            sources[name] = anchor_bundle(name, pq, pd)
    metrics, pairs = compare_baselines(setup.env, sources, ex)
    _strip(metrics).save(out / "tables" / "compare.csv")
    pairs.save(out / "tables" / "compare_pairs.csv")
    return {"bundles": len(names)}


COMMANDS = {
    "solve": cmd_solve,
    "solve-budgeted": cmd_solve_budgeted,
    "train": cmd_train,
    "train-b": cmd_train,
    "eval": cmd_eval,
    "sweep-cost": cmd_sweep_cost,
    "sweep-budget": cmd_sweep_budget,
    "heatmap": cmd_heatmap,
    "compare": cmd_compare,
}


def artifact_dir(cfg: RunConfig) -> Path:
    return Path(cfg.outdir) / cfg.subcommand / config_hash(cfg.hashed())


def run(cfg: RunConfig) -> Path:
    """Execute a validated config; returns the artifact directory."""
    setup = make_setup(cfg)
    out = artifact_dir(cfg)
    for sub in ("tables", "logs", "solutions"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    summary = COMMANDS[cfg.subcommand](cfg, setup, out)
    config = {k: v for k, v in asdict(cfg).items() if k != "subcommand"}
    (out / "config.json").write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    meta = {
        "subcommand": cfg.subcommand,
        "config_hash": out.name,
        "config": config,
        "seeds": cfg.seeds,
        "derived_train_seeds": {str(s): derive_seed(cfg.root_seed, s, "train") for s in cfg.seeds},
        "code_version": __version__,
        "rerun": ["londi", cfg.subcommand, "--config", "config.json"],
        "summary": summary,
    }
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return out


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": " ".join(str(message).split())}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = resolve_config(argv)
        out = run(cfg)
    except SolverError as exc:
        return _fail("solver", str(exc), EXIT_SOLVER)
    except (ValidationError, ValueError, TypeError, KeyError) as exc:
        return _fail("validation", str(exc), EXIT_VALIDATION)
    except OSError as exc:
        return _fail("io", str(exc), EXIT_IO)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
