"""PPO with generalized advantage estimation on the hand-rolled MLP.

Each agent owns separate policy and value networks; updates are clipped
surrogate descent with per-minibatch advantage normalization and Adam.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import AdamState, Mlp, adam_update


@dataclass
class TrainerConfig:
    """PPO hyperparameters; defaults follow the reference operating point."""

    learning_rate: float = 1e-5
    batch_size: int = 4000
    discount: float = 0.99
    gae_lambda: float = 1.0
    clip: float = 0.3
    entropy_coef: float = 0.01
    epochs: int = 10
    minibatch: int = 500
    iterations: int = 100
    hidden: tuple = (64, 64)
    num_envs: int = 1
    shared_low: bool = True
    high_action_period: int = 1

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.clip <= 0.0:
            raise ValueError("clip must be positive")
        if self.batch_size < 1 or self.minibatch < 1 or self.epochs < 1:
            raise ValueError("batch_size, minibatch and epochs must be >= 1")


class RolloutBuffer:
    """Per-agent on-policy storage for one iteration's transitions."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.obs: list = []
        self.raw_actions: list = []
        self.log_probs: list = []
        self.values: list = []
        self.rewards: list = []
        self.dones: list = []
        self.bootstrap_value = 0.0

    def __len__(self):
        return len(self.rewards)

    @property
    def full(self) -> bool:
        return len(self) >= self.capacity

    def add(self, obs, raw_action, log_prob, value, reward, done):
        if self.full:
            raise RuntimeError("rollout buffer already full")
        self.obs.append(np.asarray(obs, dtype=float))
        self.raw_actions.append(np.asarray(raw_action, dtype=float))
        self.log_probs.append(float(log_prob))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))

    def arrays(self):
        return (np.stack(self.obs), np.stack(self.raw_actions),
                np.array(self.log_probs), np.array(self.values),
                np.array(self.rewards), np.array(self.dones, dtype=bool))


def gae(rewards, values, bootstrap_value, dones, gamma: float, lam: float):
    """Generalized advantage estimation with episode cuts at done flags.

    delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t), and the
    advantage is the (gamma * lam)-discounted sum of deltas within each
    episode; ``bootstrap_value`` stands in for V(s_{T}) when the last
    transition is a truncation rather than a terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must have equal length")
    n = rewards.size
    advantages = np.empty(n)
    next_adv = 0.0
    next_value = float(bootstrap_value)
    for t in reversed(range(n)):
        not_done = 1.0 - float(dones[t])
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        next_adv = delta + gamma * lam * not_done * next_adv
        advantages[t] = next_adv
        next_value = values[t]
    return advantages


def ppo_loss(ratios, advantages, clip: float, entropy, entropy_coef: float,
             value_pred, value_target):
    """Clipped surrogate loss plus value and entropy terms.

    total = -mean(min(rho*A, clip(rho)*A)) + 0.5 * value MSE
            - entropy_coef * mean(entropy)
    Returns (loss, diagnostics).
    """
    ratios = np.asarray(ratios, dtype=float)
    advantages = np.asarray(advantages, dtype=float)
    entropy = np.asarray(entropy, dtype=float)
    value_pred = np.asarray(value_pred, dtype=float)
    value_target = np.asarray(value_target, dtype=float)

    surr1 = ratios * advantages
    surr2 = np.clip(ratios, 1.0 - clip, 1.0 + clip) * advantages
    policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
    value_mse = float(np.mean((value_pred - value_target) ** 2))
    entropy_mean = float(np.mean(entropy))
    total = policy_loss + 0.5 * value_mse - entropy_coef * entropy_mean
    diagnostics = {
        "policy_loss": policy_loss,
        "value_mse": value_mse,
        "entropy": entropy_mean,
        "clip_fraction": float(np.mean(np.abs(ratios - 1.0) > clip)),
    }
    return total, diagnostics


class PpoAgent:
    """One PPO policy/value pair with a pluggable action head."""

    def __init__(self, obs_dim: int, head, cfg: TrainerConfig,
                 rng: np.random.Generator):
        self.obs_dim = obs_dim
        self.head = head
        self.cfg = cfg
        self.policy = Mlp([obs_dim, *cfg.hidden, head.out_dim], rng,
                          out_scale=0.01)
        self.value_net = Mlp([obs_dim, *cfg.hidden, 1], rng)
        self.policy_opt = AdamState(self.policy.params)
        self.value_opt = AdamState(self.value_net.params)

    # -- acting -------------------------------------------------------
    def act(self, obs, rng: np.random.Generator):
        """Sample an action; returns (env_action, raw, log_prob, value)."""
        head_out, _ = self.policy.forward(obs)
        action, raw, logp = self.head.sample(head_out, rng)
        value, _ = self.value_net.forward(obs)
        return action, raw, logp, float(value[0])

    def act_batch(self, obs_batch, rng: np.random.Generator):
        """Sample one action per row; used for the weight-sharing agents
        that decide for many APs in one step."""
        head_out, _ = self.policy.forward(obs_batch)
        actions, raws, logps = self.head.sample_batch(head_out, rng)
        values, _ = self.value_net.forward(obs_batch)
        return actions, raws, logps, values[:, 0]

    def act_deterministic(self, obs):
        head_out, _ = self.policy.forward(obs)
        return self.head.deterministic(head_out)

    def value(self, obs) -> float:
        out, _ = self.value_net.forward(obs)
        return float(out[0])

    # -- learning -----------------------------------------------------
    def loss_and_grads(self, obs, raw_actions, logp_old, advantages,
                       value_targets):
        """Scalar loss plus exact gradients for both networks."""
        cfg = self.cfg
        batch = obs.shape[0]

        head_out, pol_cache = self.policy.forward(obs)
        logp, dlogp_dout = self.head.log_prob_grad(head_out, raw_actions)
        entropy, dent_dout = self.head.entropy_grad(head_out)
        ratios = np.exp(logp - logp_old)

        v_out, val_cache = self.value_net.forward(obs)
        values = v_out[:, 0]

        loss, diag = ppo_loss(ratios, advantages, cfg.clip, entropy,
                              cfg.entropy_coef, values, value_targets)

        # d(-min(surr1, surr2))/d logp: active only on the unclipped branch.
        surr1 = ratios * advantages
        surr2 = np.clip(ratios, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantages
        unclipped = surr1 <= surr2
        dloss_dlogp = -(unclipped * ratios * advantages) / batch
        dout = (dloss_dlogp[:, None] * dlogp_dout
                - (cfg.entropy_coef / batch) * dent_dout)
        pol_grads, _ = self.policy.backward(pol_cache, dout)

        dvalues = (values - value_targets) / batch
        val_grads, _ = self.value_net.backward(val_cache, dvalues[:, None])
        return loss, pol_grads, val_grads, diag

    def update(self, buffer: RolloutBuffer, rng: np.random.Generator):
        """Run the configured epochs of minibatch PPO on one buffer."""
        cfg = self.cfg
        obs, raw, logp_old, values, rewards, dones = buffer.arrays()
        advantages = gae(rewards, values, buffer.bootstrap_value, dones,
                         cfg.discount, cfg.gae_lambda)
        value_targets = advantages + values

        n = len(buffer)
        losses, clip_fracs, entropies = [], [], []
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                idx = perm[start:start + cfg.minibatch]
                adv = advantages[idx]
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
                loss, pol_grads, val_grads, diag = self.loss_and_grads(
                    obs[idx], raw[idx], logp_old[idx], adv,
                    value_targets[idx])
                adam_update(self.policy.params, pol_grads, self.policy_opt,
                            cfg.learning_rate)
                adam_update(self.value_net.params, val_grads, self.value_opt,
                            cfg.learning_rate)
                losses.append(loss)
                clip_fracs.append(diag["clip_fraction"])
                entropies.append(diag["entropy"])
        return {
            "loss": float(np.mean(losses)),
            "clip_fraction": float(np.mean(clip_fracs)),
            "entropy": float(np.mean(entropies)),
            "mean_reward": float(np.mean(rewards)),
        }


def collect_and_update(agents: dict, envs: list, cfg: TrainerConfig,
                       rng: np.random.Generator):
    """Fill one batch per agent from the environment pool, then update.

    Environments follow a dict protocol: ``reset() -> {agent: obs}`` and
    ``step({agent: action}) -> ({agent: obs}, {agent: reward}, done)``.
    Every agent receives exactly ``cfg.batch_size`` transitions per call,
    and each agent's buffer feeds only its own policy.
    """
    buffers = {name: RolloutBuffer(cfg.batch_size) for name in agents}
    full = False
    while not full:
        for env in envs:
            obs = env.reset()
            done = False
            while not done:
                actions, raws, logps, vals = {}, {}, {}, {}
                for name, agent in agents.items():
                    a, raw, logp, v = agent.act(obs[name], rng)
                    actions[name], raws[name] = a, raw
                    logps[name], vals[name] = logp, v
                next_obs, rewards, done = env.step(actions)
                for name in agents:
                    buffers[name].add(obs[name], raws[name], logps[name],
                                      vals[name], rewards[name], done)
                obs = next_obs
                full = all(buf.full for buf in buffers.values())
                if full:
                    if not done:
                        for name, agent in agents.items():
                            buffers[name].bootstrap_value = agent.value(
                                obs[name])
                    break
            if full:
                break

    metrics = {}
    for name, agent in agents.items():
        metrics[name] = agent.update(buffers[name], rng)
    return metrics
