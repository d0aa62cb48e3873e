"""Two-level training coordinator.

In the hierarchical mode a single global agent picks the clustering matrix
and per-AP agents pick power rows; each AP's local observation embeds the
fresh clustering action (the action-observation transition).  The flat mode
drops the global agent: every AP decides, for each user, a join bit and a
power level.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass

import numpy as np

from .baselines import OpportunisticParams, closest_policy, opportunistic_policy, random_policy
from .env import EnvConfig, NetworkEnv, objective_value
from .rl.policy import BernoulliGaussianHead, BernoulliHead, GaussianHead
from .rl.ppo import PpoAgent, RolloutBuffer, TrainerConfig

CHECKPOINT_VERSION = 1

# Per-slot mask for the first-episode bootstrap: the low agents see the
# clustering share (assigned bit + cluster row) but zeroed local history
# (position and LOS entries).
_LOCAL_HISTORY_SLICE = slice(1, 5)


@dataclass
class AgentSet:
    """The policies of one training run."""

    mode: str                      # "hmappo" or "flat_mappo"
    high: PpoAgent | None
    low: list                      # one agent if shared, else one per AP
    shared_low: bool
    n_users: int
    k_aps: int

    def low_agent(self, k: int) -> PpoAgent:
        return self.low[0] if self.shared_low else self.low[k]


def build_agents(env_cfg: EnvConfig, tcfg: TrainerConfig, mode: str,
                 rng: np.random.Generator) -> AgentSet:
    n, k = env_cfg.n_users, env_cfg.k_aps
    if mode == "hmappo":
        high = PpoAgent(env_cfg.high_obs_dim, BernoulliHead(n * k), tcfg, rng)
        low_count = 1 if tcfg.shared_low else k
        low = [PpoAgent(env_cfg.low_obs_dim, GaussianHead(n), tcfg, rng)
               for _ in range(low_count)]
        return AgentSet(mode, high, low, tcfg.shared_low, n, k)
    if mode == "flat_mappo":
        low_count = 1 if tcfg.shared_low else k
        low = [PpoAgent(env_cfg.flat_obs_dim, BernoulliGaussianHead(n, n),
                        tcfg, rng) for _ in range(low_count)]
        return AgentSet(mode, None, low, tcfg.shared_low, n, k)
    raise ValueError(f"unknown mode: {mode!r}")


def _mask_local_history(low_obs: np.ndarray, n_users: int, k_aps: int):
    obs = low_obs.reshape(n_users, 5 + k_aps).copy()
    obs[:, _LOCAL_HISTORY_SLICE] = 0.0
    return obs.ravel()


def hmappo_episode(agents: AgentSet, env: NetworkEnv,
                   rng: np.random.Generator, train: bool,
                   bootstrap_episode: bool = False):
    """Run one hierarchical episode.

    Returns (high_rows, low_rows_per_ap, outcomes); rows are transition
    tuples ready for buffer insertion, empty when ``train`` is False.
    """
    n, k = agents.n_users, agents.k_aps
    high_obs = env.reset()
    high_rows, low_rows = [], [[] for _ in range(k)]
    outcomes = []
    done = False
    prev_bits = None
    step_idx = 0
    while not done:
        act_now = step_idx % agents_high_period(agents) == 0 or prev_bits is None
        if act_now:
            if train:
                bits, raw_h, logp_h, v_h = agents.high.act(high_obs, rng)
            else:
                bits = agents.high.act_deterministic(high_obs)
            prev_bits = bits
        else:
            bits = prev_bits
        env.apply_high_action(bits.reshape(n, k))

        low_obs = []
        for ap in range(k):
            obs = env.low_obs(ap)
            if bootstrap_episode:
                obs = _mask_local_history(obs, n, k)
            low_obs.append(obs)
        low_obs_mat = np.stack(low_obs)

        if agents.shared_low:
            agent = agents.low_agent(0)
            if train:
                low_actions, low_raw, low_logp, low_v = agent.act_batch(
                    low_obs_mat, rng)
            else:
                low_actions = agent.act_deterministic(low_obs_mat)
        else:
            low_actions, low_raw, low_logp, low_v = [], [], [], []
            for ap in range(k):
                agent = agents.low_agent(ap)
                if train:
                    a, raw, logp, v = agent.act(low_obs[ap], rng)
                    low_raw.append(raw)
                    low_logp.append(logp)
                    low_v.append(v)
                else:
                    a = agent.act_deterministic(low_obs[ap])
                low_actions.append(a)
            low_actions = np.stack(low_actions)

        outcome, next_high_obs = env.complete_step(low_actions)
        done = outcome.done
        outcomes.append(outcome)
        if train:
            if act_now:
                high_rows.append((high_obs, raw_h, logp_h, v_h,
                                  outcome.high_reward, done))
            for ap in range(k):
                low_rows[ap].append((low_obs[ap], low_raw[ap], low_logp[ap],
                                     low_v[ap], outcome.low_rewards[ap], done))
        high_obs = next_high_obs
        step_idx += 1
    if train and high_rows:
        # Periodic high actions may leave the final recorded high
        # transition unterminated; mark it so advantage streams cut there.
        last = high_rows[-1]
        high_rows[-1] = last[:5] + (True,)
    return high_rows, low_rows, outcomes


def agents_high_period(agents: AgentSet) -> int:
    high = agents.high
    return high.cfg.high_action_period if high is not None else 1


def flat_episode(agents: AgentSet, env: NetworkEnv, rng: np.random.Generator,
                 train: bool):
    """Run one non-hierarchical episode: each AP emits join bits plus power
    levels; its training reward is the sum of the global and its local
    reward, since it controls both aspects."""
    n, k = agents.n_users, agents.k_aps
    env.reset()
    low_rows = [[] for _ in range(k)]
    outcomes = []
    done = False
    while not done:
        obs_list = [env.flat_obs(ap) for ap in range(k)]
        obs_mat = np.stack(obs_list)
        if agents.shared_low:
            agent = agents.low_agent(0)
            if train:
                actions, raws, logps, values = agent.act_batch(obs_mat, rng)
            else:
                actions = agent.act_deterministic(obs_mat)
        else:
            actions, raws, logps, values = [], [], [], []
            for ap in range(k):
                agent = agents.low_agent(ap)
                if train:
                    a, raw, logp, v = agent.act(obs_list[ap], rng)
                    raws.append(raw)
                    logps.append(logp)
                    values.append(v)
                else:
                    a = agent.act_deterministic(obs_list[ap])
                actions.append(a)
            actions = np.stack(actions)
        assign = actions[:, :n].T                # assign[i, k]
        levels = actions[:, n:]
        env.apply_high_action(assign)
        outcome, _ = env.complete_step(levels)
        done = outcome.done
        outcomes.append(outcome)
        if train:
            for ap in range(k):
                reward = outcome.high_reward + outcome.low_rewards[ap]
                low_rows[ap].append((obs_list[ap], raws[ap], logps[ap],
                                     values[ap], reward, done))
    return [], low_rows, outcomes


def summarize_outcomes(outcomes, eps_max: float) -> dict:
    """Episode-level metrics shared by training logs and evaluation."""
    high_rewards = np.array([o.high_reward for o in outcomes])
    low_means = np.array([o.low_rewards.mean() for o in outcomes])
    dep_flags, power_fracs, sizes, stability = [], [], [], []
    for o in outcomes:
        act = o.active
        if act.any():
            dep_flags.extend((o.dep[act] > eps_max).tolist())
            power_fracs.extend(o.power_fraction[act].tolist())
            sizes.extend(o.cluster_size[act].tolist())
        if o.eligible.any():
            stable = (o.eligible & ~o.cluster_changed).sum() / o.eligible.sum()
            stability.append(stable)
    return {
        "high_reward_mean": float(high_rewards.mean()),
        "low_reward_mean": float(low_means.mean()),
        "dep_violation_rate": float(np.mean(dep_flags)) if dep_flags else 0.0,
        "mean_power_fraction": float(np.mean(power_fracs)) if power_fracs else 0.0,
        "reconfig_rate": 1.0 - (float(np.mean(stability)) if stability else 1.0),
        "mean_cluster_size": float(np.mean(sizes)) if sizes else 0.0,
    }


TRAIN_LOG_COLUMNS = ("iteration", "env_steps", "high_reward_mean",
                     "low_reward_mean", "dep_violation_rate",
                     "mean_power_fraction", "reconfig_rate",
                     "mean_cluster_size", "wall_time_s")


def make_env_pool(env_cfg: EnvConfig, num_envs: int, seed: int):
    """Environments sharing one topology but independent trajectories."""
    seq = np.random.SeedSequence(seed)
    topo_seed, *env_seeds = seq.spawn(num_envs + 1)
    if env_cfg.ap_positions is None:
        rng = np.random.default_rng(topo_seed)
        xy = rng.uniform(size=(env_cfg.k_aps, 2)) * np.array(
            [env_cfg.area.x_extent, env_cfg.area.y_extent])
        ap_positions = np.column_stack(
            [xy, np.full(env_cfg.k_aps, env_cfg.ap_height)])
    else:
        ap_positions = env_cfg.ap_positions
    return [NetworkEnv(dataclasses.replace(
                env_cfg, ap_positions=ap_positions,
                seed=int(child.generate_state(1)[0])))
            for child in env_seeds]


def train(mode: str, env_cfg: EnvConfig, tcfg: TrainerConfig, seed: int):
    """Alternating collection/update for the chosen mode.

    Returns (agents, log_rows); one log row per iteration with the columns
    in ``TRAIN_LOG_COLUMNS``.
    """
    seq = np.random.SeedSequence(seed)
    agent_seed, action_seed, env_seed = seq.spawn(3)
    init_rng = np.random.default_rng(agent_seed)
    act_rng = np.random.default_rng(action_seed)
    agents = build_agents(env_cfg, tcfg, mode, init_rng)
    envs = make_env_pool(env_cfg, tcfg.num_envs, int(env_seed.generate_state(1)[0]))

    episodes_per_iter = max(1, round(tcfg.batch_size / env_cfg.episode_len))
    high_capacity = episodes_per_iter * env_cfg.episode_len
    low_multiplier = env_cfg.k_aps if tcfg.shared_low else 1

    rows = []
    env_steps = 0
    episode_counter = 0
    start = time.perf_counter()
    for iteration in range(tcfg.iterations):
        high_buf = RolloutBuffer(high_capacity)
        low_bufs = [RolloutBuffer(high_capacity * low_multiplier)
                    for _ in agents.low]
        episode_stats = []
        for _ in range(episodes_per_iter):
            env = envs[episode_counter % len(envs)]
            bootstrap = episode_counter == 0 and mode == "hmappo"
            if mode == "hmappo":
                high_rows, low_rows, outcomes = hmappo_episode(
                    agents, env, act_rng, train=True,
                    bootstrap_episode=bootstrap)
            else:
                high_rows, low_rows, outcomes = flat_episode(
                    agents, env, act_rng, train=True)
            for row in high_rows:
                high_buf.add(*row)
            for ap, ap_rows in enumerate(low_rows):
                buf = low_bufs[0] if tcfg.shared_low else low_bufs[ap]
                for row in ap_rows:
                    buf.add(*row)
            episode_stats.append(
                summarize_outcomes(outcomes, env_cfg.targets.eps_max))
            env_steps += len(outcomes)
            episode_counter += 1

        if agents.high is not None:
            agents.high.update(high_buf, act_rng)
        for buf, agent in zip(low_bufs, agents.low):
            agent.update(buf, act_rng)

        row = {key: float(np.mean([s[key] for s in episode_stats]))
               for key in episode_stats[0]}
        row["iteration"] = iteration
        row["env_steps"] = env_steps
        row["wall_time_s"] = time.perf_counter() - start
        rows.append(row)
    return agents, rows


@dataclass
class EvalStats:
    """Pooled evaluation metrics across episodes."""

    high_rewards: np.ndarray
    low_reward_means: np.ndarray
    dep_values: np.ndarray
    dep_violation_rate: float
    outage_probs: np.ndarray
    power_fractions: np.ndarray
    system_power_fractions: np.ndarray
    cluster_sizes: np.ndarray
    reconfig_rate: float
    mean_power_fraction: float
    mean_cluster_size: float
    objective: float
    episode_rows: list

    @property
    def combined_reward(self) -> float:
        """Mean per-step reward with both levels summed."""
        return float(self.high_rewards.mean() + self.low_reward_means.mean())


def evaluate(policy, env_cfg: EnvConfig, episodes: int, seed: int,
             opportunistic: OpportunisticParams | None = None) -> EvalStats:
    """Evaluate a trained AgentSet or a named baseline.

    ``policy`` is an AgentSet (deterministic actions) or one of
    'closest', 'opportunistic', 'random'.
    """
    seq = np.random.SeedSequence(seed)
    env_seed, act_seed = seq.spawn(2)
    envs = make_env_pool(env_cfg, 1, int(env_seed.generate_state(1)[0]))
    env = envs[0]
    act_rng = np.random.default_rng(act_seed)
    opportunistic = opportunistic or OpportunisticParams()

    all_outcomes = []
    objectives = []
    episode_rows = []
    eps_max = env_cfg.targets.eps_max
    for episode in range(episodes):
        if isinstance(policy, AgentSet):
            if policy.mode == "hmappo":
                _, _, outcomes = hmappo_episode(policy, env, act_rng,
                                                train=False)
            else:
                _, _, outcomes = flat_episode(policy, env, act_rng,
                                              train=False)
        else:
            outcomes = _baseline_episode(policy, env, act_rng, opportunistic)
        all_outcomes.extend(outcomes)
        objective = objective_value(outcomes, eps_max, env_cfg.blocklength_n)
        objectives.append(objective)
        row = summarize_outcomes(outcomes, eps_max)
        row["episode"] = episode
        row["objective"] = objective
        episode_rows.append(row)

    summary = summarize_outcomes(all_outcomes, eps_max)
    dep_values, outage, fracs, sizes, sys_fracs = [], [], [], [], []
    for o in all_outcomes:
        act = o.active
        if act.any():
            dep_values.extend(o.dep[act].tolist())
            outage.extend(o.outage_prob[act].tolist())
            fracs.extend(o.power_fraction[act].tolist())
            sizes.extend(o.cluster_size[act].tolist())
            sys_fracs.append(float(o.power_fraction[act].mean()))
        else:
            sys_fracs.append(float("nan"))
    return EvalStats(
        high_rewards=np.array([o.high_reward for o in all_outcomes]),
        low_reward_means=np.array([o.low_rewards.mean() for o in all_outcomes]),
        dep_values=np.array(dep_values),
        dep_violation_rate=summary["dep_violation_rate"],
        outage_probs=np.array(outage),
        power_fractions=np.array(fracs),
        system_power_fractions=np.array(sys_fracs),
        cluster_sizes=np.array(sizes, dtype=int),
        reconfig_rate=summary["reconfig_rate"],
        mean_power_fraction=summary["mean_power_fraction"],
        mean_cluster_size=summary["mean_cluster_size"],
        objective=float(np.mean(objectives)),
        episode_rows=episode_rows,
    )


def fixed_topology(env_cfg: EnvConfig, seed: int) -> EnvConfig:
    """Pin the AP layout from a seed so training and evaluation (and every
    compared algorithm) share one topology."""
    if env_cfg.ap_positions is not None:
        return env_cfg
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    xy = rng.uniform(size=(env_cfg.k_aps, 2)) * np.array(
        [env_cfg.area.x_extent, env_cfg.area.y_extent])
    ap_positions = np.column_stack(
        [xy, np.full(env_cfg.k_aps, env_cfg.ap_height)])
    return dataclasses.replace(env_cfg, ap_positions=ap_positions)


def _baseline_episode(name: str, env: NetworkEnv, rng: np.random.Generator,
                      opportunistic: OpportunisticParams):
    env.reset()
    outcomes = []
    done = False
    p_max = env.cfg.radio.p_max
    while not done:
        if name == "closest":
            strategy, allocation = closest_policy(env)
        elif name == "opportunistic":
            strategy, allocation = opportunistic_policy(env, opportunistic)
        elif name == "random":
            bits, raw_power = random_policy(env, rng)
            outcome, _ = env.step(bits, raw_power)
            outcomes.append(outcome)
            done = outcome.done
            continue
        else:
            raise ValueError(f"unknown baseline: {name!r}")
        raw_power = (allocation.power / p_max).T
        outcome, _ = env.step(strategy.assign, raw_power)
        outcomes.append(outcome)
        done = outcome.done
    return outcomes


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(path, agents: AgentSet, tcfg: TrainerConfig):
    """Versioned dump of every parameter tensor plus the trainer config."""
    arrays = {}
    names = []
    if agents.high is not None:
        names.append(("high", agents.high))
    names.extend((f"low{j}", agent) for j, agent in enumerate(agents.low))
    for prefix, agent in names:
        for net_name, net in (("policy", agent.policy),
                              ("value", agent.value_net)):
            for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
                arrays[f"{prefix}.{net_name}.w{layer}"] = w
                arrays[f"{prefix}.{net_name}.b{layer}"] = b
    meta = {
        "version": CHECKPOINT_VERSION,
        "mode": agents.mode,
        "shared_low": agents.shared_low,
        "n_users": agents.n_users,
        "k_aps": agents.k_aps,
        "trainer": dataclasses.asdict(tcfg),
    }
    arrays["meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path, env_cfg: EnvConfig):
    """Bit-exact inverse of ``save_checkpoint``."""
    data = np.load(path)
    meta = json.loads(bytes(data["meta"]).decode())
    if meta["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta['version']}")
    trainer = meta["trainer"]
    trainer["hidden"] = tuple(trainer["hidden"])
    tcfg = TrainerConfig(**trainer)
    rng = np.random.default_rng(0)
    agents = build_agents(env_cfg, tcfg, meta["mode"], rng)
    names = []
    if agents.high is not None:
        names.append(("high", agents.high))
    names.extend((f"low{j}", agent) for j, agent in enumerate(agents.low))
    for prefix, agent in names:
        for net_name, net in (("policy", agent.policy),
                              ("value", agent.value_net)):
            for layer in range(len(net.weights)):
                net.weights[layer][...] = data[f"{prefix}.{net_name}.w{layer}"]
                net.biases[layer][...] = data[f"{prefix}.{net_name}.b{layer}"]
    return agents, tcfg, meta
