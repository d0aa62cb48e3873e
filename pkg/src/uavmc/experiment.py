"""Experiment orchestration: reproducible runs, metric CSV emission for
every reported figure, the DEP-threshold sweep, and the timing benchmark.

Every run writes a manifest (resolved config + seed + content hash) that
fully determines its outputs; re-running a manifest reproduces the metric
CSVs byte for byte.  Wall-clock columns live only in ``training_log.csv``
and ``timing.csv``, which are excluded from that guarantee.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time

import numpy as np

from .config import ExperimentConfig, build_experiment, load_config
from .env import EnvConfig
from .hierarchy import (AgentSet, TRAIN_LOG_COLUMNS, build_agents, evaluate,
                        fixed_topology, flat_episode, hmappo_episode,
                        load_checkpoint, make_env_pool, save_checkpoint,
                        train)
from .metrics import MetricTable, cdf_pdf
from .rl.ppo import TrainerConfig

LEARNED_ALGOS = ("hmappo", "mappo")

OUTAGE_LOG10_GRID = np.linspace(-15.0, 0.0, 151)
POWER_FRACTION_GRID = np.linspace(0.0, 1.0, 101)

# Outage probabilities below this floor are logged at the floor so the
# log10 axis stays finite.
OUTAGE_FLOOR = 1e-300


def _mode_for(algo: str) -> str:
    return "hmappo" if algo == "hmappo" else "flat_mappo"


def write_manifest(out_dir, resolved: dict, seed: int) -> str:
    lines = [f"{key} = {resolved[key]}" for key in sorted(resolved)]
    content = "\n".join(lines) + f"\nseed = {seed}\n"
    digest = hashlib.sha256(content.encode()).hexdigest()
    manifest = {
        "seed": seed,
        "content_hash": f"sha256:{digest}",
        "config": {key: resolved[key] for key in sorted(resolved)},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _check_out_dir(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise ValueError(f"output directory is not writable: {out_dir}")


def _train_and_save(setup: ExperimentConfig, env_cfg: EnvConfig, seed: int,
                    out_dir) -> AgentSet:
    mode = _mode_for(setup.algo)
    agents, rows = train(mode, env_cfg, setup.trainer_cfg, seed)

    log = MetricTable(list(TRAIN_LOG_COLUMNS))
    for row in rows:
        log.add_row(row)
    log.write(os.path.join(out_dir, "training_log.csv"))

    curve = MetricTable(["iteration", "env_steps", "high_reward_mean",
                         "low_reward_mean"])
    for row in rows:
        curve.add_row((row["iteration"], row["env_steps"],
                       row["high_reward_mean"], row["low_reward_mean"]))
    curve.write(os.path.join(out_dir, "reward_curve.csv"))

    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), agents,
                    setup.trainer_cfg)
    return agents


def _resolve_policy(setup: ExperimentConfig, env_cfg: EnvConfig, seed: int,
                    out_dir, checkpoint=None, skip_train=False):
    """Trained agents for learned algos (training unless a checkpoint is
    given); the baseline name otherwise."""
    if setup.algo not in LEARNED_ALGOS:
        return setup.algo
    if checkpoint is not None:
        agents, _, _ = load_checkpoint(checkpoint, env_cfg)
        return agents
    if skip_train:
        raise ValueError(f"algorithm {setup.algo!r} needs a checkpoint when "
                         "training is skipped")
    return _train_and_save(setup, env_cfg, seed, out_dir)


def _write_eval_outputs(stats, out_dir) -> dict:
    paths = {}

    per_step = MetricTable(["step", "high_reward", "low_reward_mean",
                            "system_power_fraction"])
    for idx in range(stats.high_rewards.size):
        per_step.add_row((idx, stats.high_rewards[idx],
                          stats.low_reward_means[idx],
                          stats.system_power_fractions[idx]))
    paths["per_step"] = per_step.write(os.path.join(out_dir, "per_step.csv"))

    per_episode = MetricTable(["episode", "objective", "high_reward_mean",
                               "low_reward_mean", "dep_violation_rate",
                               "mean_power_fraction", "reconfig_rate",
                               "mean_cluster_size"])
    for row in stats.episode_rows:
        per_episode.add_row(row)
    paths["per_episode"] = per_episode.write(
        os.path.join(out_dir, "per_episode.csv"))

    log_outage = np.log10(np.maximum(stats.outage_probs, OUTAGE_FLOOR))
    outage_table = cdf_pdf(np.clip(log_outage, OUTAGE_LOG10_GRID[0],
                                   OUTAGE_LOG10_GRID[-1]),
                           grid=OUTAGE_LOG10_GRID)
    outage_table.columns = ["log10_outage", "cdf"]
    paths["outage_cdf"] = outage_table.write(
        os.path.join(out_dir, "outage_cdf.csv"))

    sys_fracs = stats.system_power_fractions
    power_table = cdf_pdf(sys_fracs[~np.isnan(sys_fracs)],
                          grid=POWER_FRACTION_GRID)
    power_table.columns = ["power_fraction", "cdf"]
    paths["power_cdf"] = power_table.write(
        os.path.join(out_dir, "power_cdf.csv"))

    size_table = cdf_pdf(stats.cluster_sizes)
    size_table.columns = ["cluster_size", "pdf"]
    paths["cluster_size_pdf"] = size_table.write(
        os.path.join(out_dir, "cluster_size_pdf.csv"))
    return paths


def run_experiment(config_path, seed: int, out_dir, algo=None,
                   checkpoint=None, skip_train=False) -> dict:
    """Train (when the algorithm learns) and evaluate; emit all metric CSVs
    plus the run manifest.  Returns the emitted paths keyed by artifact."""
    values = load_config(config_path)
    if algo is not None:
        values["experiment.algo"] = algo
    setup = build_experiment(values, seed)
    _check_out_dir(out_dir)

    paths = {"manifest": write_manifest(out_dir, setup.resolved, seed)}
    env_cfg = fixed_topology(setup.env_cfg, seed)

    policy = _resolve_policy(setup, env_cfg, seed, out_dir,
                             checkpoint=checkpoint, skip_train=skip_train)
    if isinstance(policy, AgentSet):
        paths["checkpoint"] = os.path.join(out_dir, "checkpoint.npz")

    stats = evaluate(policy, env_cfg, setup.eval_episodes, seed,
                     setup.opportunistic)
    paths.update(_write_eval_outputs(stats, out_dir))
    return paths


def sweep_dep(config_path, seed: int, out_dir, algo=None,
              checkpoint=None) -> dict:
    """Evaluate across the configured DEP thresholds.

    Emits one violation-rate row and one power row per threshold
    (``dep_violations.csv`` and ``power_dep.csv``).
    """
    values = load_config(config_path)
    if algo is not None:
        values["experiment.algo"] = algo
    setup = build_experiment(values, seed)
    _check_out_dir(out_dir)
    paths = {"manifest": write_manifest(out_dir, setup.resolved, seed)}

    env_cfg = fixed_topology(setup.env_cfg, seed)
    policy = _resolve_policy(setup, env_cfg, seed, out_dir,
                             checkpoint=checkpoint,
                             skip_train=checkpoint is not None)

    violations = MetricTable(["eps_max", "dep_violation_rate"])
    power = MetricTable(["eps_max", "mean_power_fraction"])
    for eps in setup.dep_sweep:
        targets = dataclasses.replace(env_cfg.targets, eps_max=eps,
                                      gamma_th=None)
        swept_cfg = dataclasses.replace(env_cfg, targets=targets)
        stats = evaluate(policy, swept_cfg, setup.eval_episodes, seed,
                         setup.opportunistic)
        violations.add_row((eps, stats.dep_violation_rate))
        power.add_row((eps, stats.mean_power_fraction))
    paths["dep_violations"] = violations.write(
        os.path.join(out_dir, "dep_violations.csv"))
    paths["power_dep"] = power.write(os.path.join(out_dir, "power_dep.csv"))
    return paths


def measure_step_time(env_cfg: EnvConfig, tcfg: TrainerConfig, mode: str,
                      steps: int, seed: int):
    """Mean and stddev of the decision+environment wall time per step for
    freshly initialized (untrained) policies."""
    seq = np.random.SeedSequence(seed)
    agent_seed, act_seed, env_seed = seq.spawn(3)
    agents = build_agents(env_cfg, tcfg, mode,
                          np.random.default_rng(agent_seed))
    env = make_env_pool(env_cfg, 1, int(env_seed.generate_state(1)[0]))[0]
    rng = np.random.default_rng(act_seed)

    times = []
    remaining = steps
    while remaining > 0:
        chunk = min(remaining, env_cfg.episode_len)
        start = time.perf_counter()
        if mode == "hmappo":
            _, _, outcomes = hmappo_episode(agents, env, rng, train=False)
        else:
            _, _, outcomes = flat_episode(agents, env, rng, train=False)
        elapsed = time.perf_counter() - start
        times.extend([elapsed / len(outcomes)] * min(chunk, len(outcomes)))
        remaining -= len(outcomes)
    times = np.array(times[:steps])
    return float(times.mean()), float(times.std())


def timing_benchmark(config_path, seed: int, out_dir) -> dict:
    """Per-step wall time versus the AP count for both in-scope learned
    modes, normalized to the largest measured mean."""
    values = load_config(config_path)
    setup = build_experiment(values, seed)
    _check_out_dir(out_dir)
    paths = {"manifest": write_manifest(out_dir, setup.resolved, seed)}

    rows = []
    for k in setup.bench_k_list:
        env_cfg = dataclasses.replace(
            setup.env_cfg, k_aps=k, n_users=setup.bench_n_users,
            ap_positions=None,
            targets=dataclasses.replace(setup.env_cfg.targets, gamma_th=None))
        env_cfg = fixed_topology(env_cfg, seed)
        for mode in ("hmappo", "flat_mappo"):
            mean_s, std_s = measure_step_time(env_cfg, setup.trainer_cfg,
                                              mode, setup.bench_steps, seed)
            rows.append((k, mode, mean_s, std_s))

    top = max(row[2] for row in rows)
    table = MetricTable(["k_aps", "algo", "mean_step_s", "std_step_s",
                         "mean_norm", "std_norm"])
    for k, mode, mean_s, std_s in rows:
        table.add_row((k, mode, mean_s, std_s, mean_s / top, std_s / top))
    paths["timing"] = table.write(os.path.join(out_dir, "timing.csv"))
    return paths
