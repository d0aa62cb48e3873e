"""Flat key=value experiment configuration.

Keys use dotted sections (``radio.p_max_w = 1.0``); ``#`` starts a comment.
Every key can be overridden through the environment with the ``UAVMC_``
prefix and dots replaced by double underscores
(``UAVMC_train__learning_rate=1e-3``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .baselines import OpportunisticParams
from .channel import AntennaConfig, RadioParams
from .env import EnvConfig
from .fbl import ReliabilityTargets
from .geometry import MobilityParams, ServiceArea
from .rl.ppo import TrainerConfig

ENV_PREFIX = "UAVMC_"

ALGOS = ("hmappo", "mappo", "opportunistic", "closest", "random")

# key -> default; the default's type drives parsing.
DEFAULTS = {
    "env.n_users": 6,
    "env.k_aps": 19,
    "env.episode_len": 200,
    "env.arrival_prob": 0.0,
    "env.departure_prob": 0.0,
    "env.interference_mode": "steered",
    "env.ap_height": 25.0,
    "env.bits_b": 256,
    "env.blocklength_n": 400,
    "env.los_coherence_s": 1.0,
    "env.position_noise_std": 0.0,
    "area.x_extent": 3000.0,
    "area.y_extent": 3000.0,
    "area.z_min": 60.0,
    "area.z_max": 120.0,
    "radio.bandwidth_hz": 1.0e7,
    "radio.noise_density_dbm_hz": -174.0,
    "radio.p_max_w": 1.0,
    "antenna.m_z": 4,
    "antenna.n_y": 4,
    "antenna.g0": 1.0,
    "antenna.carrier_freq_hz": 2.0e9,
    "targets.eps_max": 1e-5,
    "targets.outage_max": 1e-3,
    "rewards.high_w1": 1.0,
    "rewards.high_w2": 1.0,
    "rewards.low_w1": 1.0,
    "rewards.low_w2": 1.0,
    "mobility.mean_vx": 0.0,
    "mobility.mean_vy": 0.0,
    "mobility.mean_vz": 0.0,
    "mobility.memory_a": 0.9,
    "mobility.sigma": 5.0,
    "mobility.dt": 0.1,
    "train.learning_rate": 1e-5,
    "train.batch_size": 4000,
    "train.discount": 0.99,
    "train.gae_lambda": 1.0,
    "train.clip": 0.3,
    "train.entropy_coef": 0.01,
    "train.epochs": 10,
    "train.minibatch": 500,
    "train.iterations": 100,
    "train.num_envs": 1,
    "train.hidden": "64,64",
    "train.shared_low": True,
    "train.high_action_period": 1,
    "experiment.algo": "hmappo",
    "experiment.eval_episodes": 20,
    "experiment.dep_sweep": "1e-3,1e-5,1e-7",
    "experiment.opportunistic_margin_db": 20.0,
    "experiment.bench_k_list": "16,32",
    "experiment.bench_steps": 200,
    "experiment.bench_n_users": 3,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    text = raw.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError("expected a boolean")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: cannot parse {raw!r} "
                         f"({exc})") from None


def parse_config_text(text: str) -> dict:
    """Parse key=value lines; unknown keys and malformed lines raise."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ValueError(f"config line {lineno}: expected 'key = value', "
                             f"got {line.rstrip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key: {key!r} (line {lineno})")
        values[key] = _coerce(key, raw)
    return values


def apply_env_overrides(values: dict, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].replace("__", ".")
        if "." not in key:
            continue  # not shaped like a config key (e.g. test harness flags)
        if key not in DEFAULTS:
            raise ValueError(f"environment override {name}: "
                             f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, environ=None) -> dict:
    """Defaults, then the file, then environment overrides."""
    values = dict(DEFAULTS)
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    return apply_env_overrides(values, environ)


def _float_list(key: str, text: str) -> tuple:
    try:
        items = tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError:
        raise ValueError(f"config key {key!r}: expected comma-separated "
                         f"numbers, got {text!r}") from None
    if not items:
        raise ValueError(f"config key {key!r}: list must not be empty")
    return items


def _int_list(key: str, text: str) -> tuple:
    return tuple(int(v) for v in _float_list(key, text))


@dataclass
class ExperimentConfig:
    """Fully resolved experiment: environment, trainer, and run options."""

    env_cfg: EnvConfig
    trainer_cfg: TrainerConfig
    algo: str
    eval_episodes: int
    dep_sweep: tuple
    opportunistic: OpportunisticParams
    bench_k_list: tuple
    bench_steps: int
    bench_n_users: int
    resolved: dict = field(repr=False, default_factory=dict)


def build_experiment(values: dict, seed: int) -> ExperimentConfig:
    """Validate the resolved mapping and build the typed configs."""
    v = dict(values)
    algo = v["experiment.algo"]
    if algo not in ALGOS:
        raise ValueError(f"config key 'experiment.algo': unknown algorithm "
                         f"{algo!r} (choose from {', '.join(ALGOS)})")
    dep_sweep = _float_list("experiment.dep_sweep", v["experiment.dep_sweep"])
    for eps in dep_sweep:
        if not 0.0 < eps < 1.0:
            raise ValueError("config key 'experiment.dep_sweep': thresholds "
                             "must lie strictly between 0 and 1")

    env_cfg = EnvConfig(
        n_users=v["env.n_users"],
        k_aps=v["env.k_aps"],
        area=ServiceArea(v["area.x_extent"], v["area.y_extent"],
                         v["area.z_min"], v["area.z_max"]),
        radio=RadioParams(v["radio.bandwidth_hz"],
                          v["radio.noise_density_dbm_hz"],
                          v["radio.p_max_w"]),
        antenna=AntennaConfig(m_z=v["antenna.m_z"], n_y=v["antenna.n_y"],
                              g0=v["antenna.g0"],
                              carrier_freq=v["antenna.carrier_freq_hz"]),
        mobility=MobilityParams(
            mean_velocity=(v["mobility.mean_vx"], v["mobility.mean_vy"],
                           v["mobility.mean_vz"]),
            memory_a=v["mobility.memory_a"],
            sigma=v["mobility.sigma"],
            dt=v["mobility.dt"]),
        targets=ReliabilityTargets(eps_max=v["targets.eps_max"],
                                   outage_max=v["targets.outage_max"]),
        weights_high=(v["rewards.high_w1"], v["rewards.high_w2"]),
        weights_low=(v["rewards.low_w1"], v["rewards.low_w2"]),
        episode_len=v["env.episode_len"],
        arrival_prob=v["env.arrival_prob"],
        departure_prob=v["env.departure_prob"],
        interference_mode=v["env.interference_mode"],
        seed=seed,
        ap_height=v["env.ap_height"],
        bits_b=v["env.bits_b"],
        blocklength_n=v["env.blocklength_n"],
        los_coherence_s=v["env.los_coherence_s"],
        position_noise_std=v["env.position_noise_std"],
    )
    trainer_cfg = TrainerConfig(
        learning_rate=v["train.learning_rate"],
        batch_size=v["train.batch_size"],
        discount=v["train.discount"],
        gae_lambda=v["train.gae_lambda"],
        clip=v["train.clip"],
        entropy_coef=v["train.entropy_coef"],
        epochs=v["train.epochs"],
        minibatch=v["train.minibatch"],
        iterations=v["train.iterations"],
        hidden=_int_list("train.hidden", v["train.hidden"]),
        num_envs=v["train.num_envs"],
        shared_low=v["train.shared_low"],
        high_action_period=v["train.high_action_period"],
    )
    return ExperimentConfig(
        env_cfg=env_cfg,
        trainer_cfg=trainer_cfg,
        algo=algo,
        eval_episodes=v["experiment.eval_episodes"],
        dep_sweep=dep_sweep,
        opportunistic=OpportunisticParams(
            v["experiment.opportunistic_margin_db"]),
        bench_k_list=_int_list("experiment.bench_k_list",
                               v["experiment.bench_k_list"]),
        bench_steps=v["experiment.bench_steps"],
        bench_n_users=v["experiment.bench_n_users"],
        resolved=v,
    )
