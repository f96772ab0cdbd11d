"""Batch front-end: dataset generation, training, evaluation, estimator
analysis, and report aggregation.

Every command is a pure function of (config, seeds, input files):
re-running it writes byte-identical outputs. Exit codes: 0 ok, 2 config
error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, analysis
from . import datasets as data_io
from .algos import (
    evaluation_sampling_action,
    init_train_state,
    train_step,
)
from .config import RunConfig, load_config
from .datasets import file_sha256, generate_dataset, merge, normalize_score, relabel
from .envs import ToyEnv, env_step, initial_state, random_controller, scripted_controller
from .errors import (
    CheckpointError,
    ConfigError,
    DatasetFormatError,
    PoisonedStateError,
)
from .nets import load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

OUTPUT_ROOT_VAR = "OFFRL_OUTPUT_ROOT"

METRICS_COLUMNS = ["step", "critic_loss", "actor_loss", "mean_advantage",
                   "tree_log_norm"]
EVAL_COLUMNS = ["seed", "episode", "es", "return", "normalized_score"]


def output_dir(config: RunConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_VAR)
    out = Path(config.output_dir)
    if root and not out.is_absolute():
        out = Path(root) / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


# ----------------------------------------------------------------------
# gen-data

def cmd_gen_data(config: RunConfig) -> int:
    """Emit same-, cross-, and mixed-objective datasets plus a manifest."""
    out = output_dir(config)
    env_cfg = config.env
    master = np.random.SeedSequence(config.seeds[0])
    children = master.spawn(len(env_cfg.tasks) + 1)

    bases = {}
    for task, child in zip(env_cfg.tasks, children):
        env = ToyEnv(env_id=env_cfg.id, task=task, horizon=env_cfg.horizon)
        bases[task] = generate_dataset(env, scripted_controller(env),
                                       env_cfg.episodes, env_cfg.noise_std,
                                       child)
    rnd_env = ToyEnv(env_id=env_cfg.id, task=env_cfg.tasks[0],
                     horizon=env_cfg.horizon)
    random_base = generate_dataset(rnd_env, random_controller(rnd_env),
                                   env_cfg.episodes, 0.0, children[-1])

    emitted = []

    def emit(dataset, source_label, target):
        name = f"{env_cfg.id}__{source_label}__to__{target}.moodds"
        path = out / name
        data_io.save(dataset, path)
        emitted.append({
            "file": name,
            "env": env_cfg.id,
            "source_tasks": list(dataset.meta.source_tasks),
            "target_task": target,
            "rows": len(dataset),
            "max_return": float(dataset.meta.max_return),
            "sha256": file_sha256(path),
        })

    for target in env_cfg.tasks:
        emit(relabel(bases[target], target), target, target)
    for source in env_cfg.tasks:
        for target in env_cfg.tasks:
            if source != target:
                emit(relabel(bases[source], target), source, target)
    for target in env_cfg.tasks:
        parts = [relabel(bases[s], target) for s in env_cfg.tasks]
        parts.append(relabel(random_base, target))
        emit(merge(parts), "mixed", target)

    data_io.write_manifest(out / "manifest.yaml", emitted)
    print(f"wrote {len(emitted)} datasets and manifest.yaml to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------
# train

def _train_one_seed(config: RunConfig, seed: int):
    dataset = data_io.load(config.dataset)
    state = init_train_state(config.algo, dataset, config.preset, seed)
    rows = []
    for _ in range(config.algo.train_steps):
        metrics = train_step(state, dataset, config.algo)
        if metrics["step"] % config.metrics_every == 0 \
                or metrics["step"] == config.algo.train_steps:
            rows.append(metrics)
    out = output_dir(config)
    tag = f"{config.algo.algorithm}_{seed}"
    metrics_path = out / f"metrics_{tag}.csv"
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in METRICS_COLUMNS])
    components = {"policy": state.policy, "critics": state.critics}
    if state.value_net is not None:
        components["value"] = state.value_net
    ckpt_path = out / f"checkpoint_{tag}.ck"
    save_checkpoint(ckpt_path, components)
    return metrics_path.name, ckpt_path.name


def cmd_train(config: RunConfig) -> int:
    if not config.dataset:
        raise ConfigError("dataset", "train needs a dataset path")
    if not Path(config.dataset).exists():
        raise FileNotFoundError(config.dataset)
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_train_one_seed,
                                    [config] * len(config.seeds), config.seeds))
    else:
        results = [_train_one_seed(config, seed) for seed in config.seeds]
    for metrics_name, ckpt_name in results:
        print(f"wrote {metrics_name} and {ckpt_name}")
    return EXIT_OK


# ----------------------------------------------------------------------
# eval

def _load_policy_critics(path, dataset):
    components = load_checkpoint(path)
    try:
        policy = components["policy"]
        critics = components["critics"]
    except KeyError as exc:
        raise CheckpointError(f"checkpoint is missing component {exc}") from exc
    if policy.mean_net.in_dim != dataset.meta.state_dim \
            or policy.action_dim != dataset.meta.action_dim:
        raise CheckpointError(
            f"checkpoint dimensions ({policy.mean_net.in_dim}, "
            f"{policy.action_dim}) do not match dataset "
            f"({dataset.meta.state_dim}, {dataset.meta.action_dim})")
    return policy, critics


def _episode_return(env, policy, critics, seed, episode, es, config):
    """One rollout; paired es/no-es rows share the initial state stream."""
    ss = np.random.SeedSequence(entropy=(seed, episode))
    init_rng, act_rng = [np.random.default_rng(s) for s in ss.spawn(2)]
    state = initial_state(env, init_rng)
    total = 0.0
    for _ in range(env.horizon):
        if es:
            action = evaluation_sampling_action(
                policy, critics, state, config.algo.m_eval, act_rng,
                config.eval.es_lam)
        else:
            action = policy.mean_action(state)
        state, reward, _ = env_step(env, state, action)
        total += reward
    return total


def cmd_eval(config: RunConfig) -> int:
    if not config.checkpoint:
        raise ConfigError("checkpoint", "eval needs a checkpoint path")
    if not Path(config.checkpoint).exists():
        raise FileNotFoundError(config.checkpoint)
    if not config.dataset:
        raise ConfigError("dataset", "eval needs the training dataset for "
                                     "score normalization")
    dataset = data_io.load(config.dataset)
    policy, critics = _load_policy_critics(config.checkpoint, dataset)
    env = ToyEnv(env_id=dataset.meta.env_id, task=dataset.meta.target_task,
                 horizon=config.env.horizon)
    es_modes = {"off": (0,), "on": (1,), "both": (0, 1)}[config.eval.es]

    out = output_dir(config)
    rows = []
    for seed in config.seeds:
        for episode in range(config.eval.episodes):
            for es in es_modes:
                ret = _episode_return(env, policy, critics, seed, episode, es,
                                      config)
                rows.append([seed, episode, es, ret,
                             normalize_score(ret, dataset)])
    eval_path = out / "eval.csv"
    with open(eval_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVAL_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])

    for es in es_modes:
        for column, label in ((3, "return"), (4, "normalized score")):
            per_seed = []
            for seed in config.seeds:
                vals = [r[column] for r in rows
                        if r[0] == seed and r[2] == es]
                per_seed.append(float(np.mean(vals)))
            mean = float(np.mean(per_seed))
            se = float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))) \
                if len(per_seed) > 1 else 0.0
            print(f"es={es}: {label} {mean:.2f} +/- {se:.2f} "
                  f"({len(per_seed)} seeds x {config.eval.episodes} episodes)")
    print(f"wrote {eval_path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# analyze

def cmd_analyze(config: RunConfig) -> int:
    seed = config.seeds[0]
    a_cfg = config.analyze
    if a_cfg.fixture_rows > 0:
        advantages, logp = analysis.lognormal_fixture(a_cfg.fixture_rows, seed)
    else:
        if not config.dataset or not config.checkpoint:
            raise ConfigError("analyze.fixture_rows",
                              "set fixture_rows > 0 or provide dataset "
                              "and checkpoint paths")
        dataset = data_io.load(config.dataset)
        policy, critics = _load_policy_critics(config.checkpoint, dataset)
        advantages, logp = analysis.advantage_snapshot(
            dataset, policy, critics, a_max=config.algo.a_max,
            k_adv=config.algo.k_adv, seed=seed)
    reports = [analysis.build_report(advantages, logp, estimator,
                                     config.algo.beta, a_cfg.batch_sizes,
                                     a_cfg.trials, seed)
               for estimator in a_cfg.estimators]
    out = output_dir(config)
    path = out / "analysis.csv"
    analysis.write_report_csv(path, reports)
    print(f"wrote {path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# report

def cmd_report(config: RunConfig) -> int:
    """Aggregate an eval.csv into per-mode summary rows across seeds."""
    out = output_dir(config)
    eval_path = out / "eval.csv"
    if not eval_path.exists():
        raise FileNotFoundError(str(eval_path))
    with open(eval_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise DatasetFormatError("eval.csv", "no evaluation rows to report")
    summary = []
    es_values = sorted({row["es"] for row in rows})
    for es in es_values:
        seeds = sorted({row["seed"] for row in rows if row["es"] == es})
        for column in ("return", "normalized_score"):
            per_seed = [float(np.mean([float(r[column]) for r in rows
                                       if r["seed"] == seed and r["es"] == es]))
                        for seed in seeds]
            mean = float(np.mean(per_seed))
            se = float(np.std(per_seed, ddof=1) / math.sqrt(len(per_seed))) \
                if len(per_seed) > 1 else 0.0
            summary.append([es, column, repr(mean), repr(se), len(seeds)])
    path = out / "summary.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["es", "metric", "mean", "standard_error", "seeds"])
        writer.writerows(summary)
    for row in summary:
        print(f"es={row[0]} {row[1]}: {float(row[2]):.3f} +/- {float(row[3]):.3f}")
    print(f"wrote {path}")
    return EXIT_OK


# ----------------------------------------------------------------------

COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="offrl",
        description="offline actor-critic training and diagnostics at desk "
                    "scale")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="YAML run config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="PATH=VALUE",
                       help="override any config leaf, e.g. algo.beta=0.5")
        if name in ("eval", "analyze"):
            p.add_argument("--checkpoint", default=None,
                           help="checkpoint path (overrides config.checkpoint)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, args.overrides)
        if getattr(args, "checkpoint", None):
            config.checkpoint = args.checkpoint
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetFormatError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: missing file {exc}", file=sys.stderr)
        return EXIT_DATA
    except PoisonedStateError as exc:
        print(f"numeric failure at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
