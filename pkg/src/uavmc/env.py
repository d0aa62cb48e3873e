"""The multi-connectivity downlink MDP.

State assembly, observation encodings for the clustering level and the
per-AP power level, action application with constraint enforcement
(per-link power cap, minimum cluster size), both reward functions, the
scalarized objective, and step/reset semantics.

A step is a three-phase pipeline: the clustering action is applied first,
then every AP reads its local observation (which embeds the fresh
clustering rows), then the power rows complete the step.  ``step`` wraps
the three phases for callers whose power decisions do not depend on the
local observations (baselines, random policies).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import fbl
from .channel import AntennaConfig, RadioParams
from .fbl import ReliabilityTargets
from .geometry import MobilityParams, ServiceArea, UserState, step_mobility

# Power below this is treated as "not transmitting" when building the
# outage signal model (an exponential with zero mean contributes nothing).
POWER_FLOOR = 1e-30


@dataclass
class ClusteringStrategy:
    """Boolean assignment matrix: assign[i, k] means AP k serves user i."""

    assign: np.ndarray

    def __post_init__(self):
        self.assign = np.asarray(self.assign, dtype=bool)

    def cluster_of(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assign[i])

    def cluster_sizes(self) -> np.ndarray:
        return self.assign.sum(axis=1)


@dataclass
class PowerAllocation:
    """Per-link transmit powers in watts, masked by the clustering."""

    power: np.ndarray

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=float)

    def total(self) -> float:
        return float(self.power.sum())


@dataclass
class EnvConfig:
    """Everything needed to construct one environment instance."""

    n_users: int = 6
    k_aps: int = 19
    area: ServiceArea = field(default_factory=ServiceArea)
    radio: RadioParams = field(default_factory=RadioParams)
    antenna: AntennaConfig = field(default_factory=AntennaConfig)
    mobility: MobilityParams = field(default_factory=MobilityParams)
    targets: ReliabilityTargets = field(default_factory=ReliabilityTargets)
    weights_high: tuple = (1.0, 1.0)
    weights_low: tuple = (1.0, 1.0)
    episode_len: int = 200
    arrival_prob: float = 0.0
    departure_prob: float = 0.0
    interference_mode: str = "steered"
    seed: int = 0
    ap_height: float = 25.0
    ap_positions: np.ndarray | None = None
    bits_b: int = 256
    blocklength_n: int = 400
    los_coherence_s: float = 1.0
    position_noise_std: float = 0.0
    gain_norm_db: tuple = (-160.0, -60.0)

    def __post_init__(self):
        if self.k_aps < 1:
            raise ValueError("need at least one AP (k_aps >= 1)")
        if self.n_users < 1:
            raise ValueError("need at least one user slot (n_users >= 1)")
        if min(self.weights_high) < 0 or min(self.weights_low) < 0:
            raise ValueError("reward weights must be nonnegative")
        if self.interference_mode not in ("steered", "paper"):
            raise ValueError("interference_mode must be 'steered' or 'paper'")
        if not (ch.MIN_USER_HEIGHT < self.area.z_min
                and self.area.z_max <= ch.MAX_USER_HEIGHT):
            raise ValueError(
                "UAV altitude band must lie inside the aerial path-loss "
                f"validity range ({ch.MIN_USER_HEIGHT}, {ch.MAX_USER_HEIGHT}] m")

    @property
    def high_obs_dim(self) -> int:
        n, k = self.n_users, self.k_aps
        return 3 * n + k + 2 * n * k + n

    @property
    def low_obs_dim(self) -> int:
        return self.n_users * (5 + self.k_aps)

    @property
    def flat_obs_dim(self) -> int:
        return self.n_users * 7


@dataclass
class LinkSnapshot:
    """Frozen per-step channel state, sufficient to recompute the SINR and
    DEP of that step exactly."""

    theta: np.ndarray
    phi: np.ndarray
    path_loss_db: np.ndarray
    los: np.ndarray
    fading: np.ndarray
    powers: np.ndarray
    assign: np.ndarray
    active: np.ndarray
    noise_power: float
    interference_mode: str

    def link_state(self, i: int, k: int, d3d: float = float("nan")) -> ch.LinkState:
        return ch.LinkState(path_loss_db=float(self.path_loss_db[i, k]),
                            los=bool(self.los[i, k]),
                            fading_power=float(self.fading[i, k]),
                            theta=float(self.theta[i, k]),
                            phi=float(self.phi[i, k]),
                            d3d=d3d)


@dataclass
class StepOutcome:
    """Everything observable about one completed step."""

    t: int
    high_reward: float
    low_rewards: np.ndarray
    sinr: np.ndarray
    dep: np.ndarray
    outage_prob: np.ndarray
    cluster_changed: np.ndarray
    cluster_size: np.ndarray
    eligible: np.ndarray
    active: np.ndarray
    user_ids: np.ndarray
    bits: np.ndarray
    power_sum: np.ndarray
    power_fraction: np.ndarray
    repair_fired: bool
    done: bool
    links: LinkSnapshot
    low_obs: list | None = None


class NetworkEnv:
    """One downlink network instance with explicit, seeded randomness."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.n = cfg.n_users
        self.k = cfg.k_aps
        if cfg.ap_positions is not None:
            ap = np.asarray(cfg.ap_positions, dtype=float)
            if ap.shape != (self.k, 3):
                raise ValueError("ap_positions must have shape (k_aps, 3)")
            self.ap_positions = ap
        else:
            xy = self.rng.uniform(size=(self.k, 2)) * np.array(
                [cfg.area.x_extent, cfg.area.y_extent])
            self.ap_positions = np.column_stack(
                [xy, np.full(self.k, cfg.ap_height)])

        n_bl = cfg.blocklength_n
        if cfg.targets.gamma_th is None:
            cfg.targets.derive_gamma_th(n_bl, cfg.bits_b)
        self.gamma_th = cfg.targets.gamma_th
        self.noise_power = cfg.radio.noise_power()
        self._los_period = max(1, round(cfg.los_coherence_s / cfg.mobility.dt))
        self._phase = "unreset"

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------
    def reset(self) -> np.ndarray:
        """Place users, seed a closest-AP clustering, and return the
        high-level observation."""
        cfg = self.cfg
        u = self.rng.uniform(size=(self.n, 3))
        span = np.array([cfg.area.x_extent, cfg.area.y_extent,
                         cfg.area.z_max - cfg.area.z_min])
        offset = np.array([0.0, 0.0, cfg.area.z_min])
        self.positions = u * span + offset
        self.velocities = np.tile(np.asarray(cfg.mobility.mean_velocity, float),
                                  (self.n, 1))
        self.active = np.ones(self.n, dtype=bool)
        self.newly_arrived = np.zeros(self.n, dtype=bool)
        self.user_ids = np.arange(self.n)
        self._next_id = self.n
        self.bits = np.full(self.n, cfg.bits_b)

        self._update_geometry()
        self._resample_los()
        self.fading = self.rng.exponential(1.0, size=(self.n, self.k))
        self._los_age = 0

        # Closest-AP seed satisfies the minimum-cluster-size constraint.
        self.assign = np.zeros((self.n, self.k), dtype=bool)
        self.assign[np.arange(self.n), np.argmin(self.d3d, axis=1)] = True
        self.prev_assign = self.assign.copy()
        self.powers = np.where(self.assign, cfg.radio.p_max / 2.0, 0.0)

        self._obs_positions = self.positions.copy()
        self._invalidate_obs_cache()
        self.t = 0
        self._phase = "await_high"
        self._repair_fired = False
        return self.high_obs()

    def _update_geometry(self):
        delta = self.positions[:, None, :] - self.ap_positions[None, :, :]
        self.d2d = np.hypot(delta[:, :, 0], delta[:, :, 1])
        self.d3d = np.linalg.norm(delta, axis=2)
        self.theta = np.arctan2(self.d2d, delta[:, :, 2])
        self.phi = np.arctan2(delta[:, :, 1], delta[:, :, 0])
        self._update_path_loss()

    def _update_path_loss(self):
        if not hasattr(self, "los"):
            return
        freq_ghz = self.cfg.antenna.carrier_freq / 1e9
        heights = self.positions[:, 2:3]
        self.path_loss_db = np.where(
            self.los,
            ch.path_loss_los_db(self.d3d, freq_ghz),
            ch.path_loss_nlos_db(self.d3d, heights, freq_ghz))

    def _resample_los(self):
        p = ch.los_probability(self.d2d, self.positions[:, 2:3])
        self.los = self.rng.random(size=(self.n, self.k)) < p
        self._update_path_loss()

    # ------------------------------------------------------------------
    # observations
    # ------------------------------------------------------------------
    def _norm_positions(self) -> np.ndarray:
        if self._norm_pos_cache is not None:
            return self._norm_pos_cache
        cfg = self.cfg
        span = np.array([cfg.area.x_extent, cfg.area.y_extent,
                         cfg.area.z_max - cfg.area.z_min])
        offset = np.array([0.0, 0.0, cfg.area.z_min])
        norm = np.clip((self._obs_positions - offset) / span, 0.0, 1.0)
        norm[~self.active] = 0.0
        self._norm_pos_cache = norm
        return norm

    def _gain_db(self) -> np.ndarray:
        """Instantaneous channel gain in dB (path loss plus fading)."""
        with np.errstate(divide="ignore"):
            return -self.path_loss_db + 10.0 * np.log10(self.fading)

    def _norm_gains(self) -> np.ndarray:
        if self._norm_gain_cache is not None:
            return self._norm_gain_cache
        lo, hi = self.cfg.gain_norm_db
        g = np.clip((self._gain_db() - lo) / (hi - lo), 0.0, 1.0)
        g[~self.active] = 0.0
        self._norm_gain_cache = g
        return g

    def _invalidate_obs_cache(self):
        self._norm_pos_cache = None
        self._norm_gain_cache = None

    def high_obs(self) -> np.ndarray:
        """Global observation: user positions, AP loads, normalized channel
        gains, the previous clustering matrix, and per-user activity bits."""
        loads = (self.assign & self.active[:, None]).sum(axis=0) / self.n
        return np.concatenate([
            self._norm_positions().ravel(),
            loads,
            self._norm_gains().ravel(),
            (self.assign & self.active[:, None]).astype(float).ravel(),
            self.active.astype(float),
        ])

    def low_obs(self, k: int) -> np.ndarray:
        """Local observation of AP k: one slot per user slot, holding the
        assigned bit, normalized position, LOS bit, and that user's full
        cluster row (the clustering action share).  Slots of users not
        assigned to AP k are zeroed."""
        if self._phase != "await_low":
            raise RuntimeError(
                "low_obs requires the clustering action of this step to be "
                "applied first (action-observation ordering)")
        pos = self._norm_positions()
        obs = np.zeros((self.n, 5 + self.k))
        served = self.active & self.assign[:, k]
        obs[served, 0] = 1.0
        obs[served, 1:4] = pos[served]
        obs[served, 4] = self.los[served, k]
        obs[served, 5:] = self.assign[served].astype(float)
        return obs.ravel()

    def flat_obs(self, k: int) -> np.ndarray:
        """Local observation for the non-hierarchical mode, available before
        any clustering decision: per user slot, the activity bit, normalized
        position, LOS bit, previous own-column assignment, and normalized
        channel gain toward this AP."""
        pos = self._norm_positions()
        gains = self._norm_gains()
        obs = np.zeros((self.n, 7))
        act = self.active
        obs[act, 0] = 1.0
        obs[act, 1:4] = pos[act]
        obs[act, 4] = self.los[act, k]
        obs[act, 5] = self.assign[act, k]
        obs[act, 6] = gains[act, k]
        return obs.ravel()

    # ------------------------------------------------------------------
    # actions
    # ------------------------------------------------------------------
    def apply_high_action(self, bits_or_logits: np.ndarray) -> ClusteringStrategy:
        """Threshold the clustering action, repair empty rows, and install
        the new clustering.  Repair forces the best-gain AP on for any
        active user whose row came back all false."""
        if self._phase == "unreset":
            raise RuntimeError("reset the environment before stepping")
        if self._phase != "await_high":
            raise RuntimeError("clustering action already applied this step")
        raw = np.asarray(bits_or_logits)
        if raw.shape != (self.n, self.k):
            raise ValueError(f"clustering action must have shape "
                             f"({self.n}, {self.k})")
        assign = raw.astype(bool) if raw.dtype == bool else raw > 0.5
        assign = assign & self.active[:, None]

        empty = self.active & ~assign.any(axis=1)
        self._repair_fired = bool(empty.any())
        if self._repair_fired:
            best = np.argmax(self._gain_db(), axis=1)
            assign[empty, best[empty]] = True

        self.assign = assign
        self._phase = "await_low"
        return ClusteringStrategy(assign.copy())

    def apply_low_action(self, k: int, raw: np.ndarray) -> np.ndarray:
        """Map one AP's raw [0, 1] power action to its power column:
        raw * p_max on assigned active users, zero elsewhere."""
        raw = np.clip(np.asarray(raw, dtype=float), 0.0, 1.0)
        if raw.shape != (self.n,):
            raise ValueError(f"power action for one AP must have shape ({self.n},)")
        mask = self.assign[:, k] & self.active
        return np.where(mask, raw * self.cfg.radio.p_max, 0.0)

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------
    def step(self, high_action: np.ndarray, low_actions: np.ndarray):
        """Full pipeline for callers whose power decisions do not consume
        the per-AP observations.  Returns (outcome, next_high_obs); the
        per-AP observations the pipeline produced ride on the outcome."""
        self.apply_high_action(high_action)
        low_obs = [self.low_obs(k) for k in range(self.k)]
        outcome, high_obs = self.complete_step(low_actions)
        outcome.low_obs = low_obs
        return outcome, high_obs

    def complete_step(self, low_actions: np.ndarray):
        """Apply the power rows and run the remainder of the step: fading
        draw, SINR / DEP / outage evaluation, both rewards, mobility, and
        the user lifecycle.  Returns (outcome, next_high_obs)."""
        if self._phase == "unreset":
            raise RuntimeError("reset the environment before stepping")
        if self._phase != "await_low":
            raise RuntimeError(
                "complete_step requires the clustering action of this step "
                "to be applied first (action-observation ordering)")
        cfg = self.cfg
        low_actions = np.asarray(low_actions, dtype=float)
        if low_actions.shape != (self.k, self.n):
            raise ValueError(f"low actions must have shape ({self.k}, {self.n})")

        powers = np.zeros((self.n, self.k))
        for k in range(self.k):
            powers[:, k] = self.apply_low_action(k, low_actions[k])
        self.powers = powers

        # Channel realization and reliability metrics for this slot.
        self.fading = self.rng.exponential(1.0, size=(self.n, self.k))
        gain_tensor = ch.steering_gain_tensor(self.theta, self.phi, cfg.antenna)
        h_inst = 10.0 ** (-self.path_loss_db / 10.0) * self.fading
        sinr, _, _ = ch.network_sinr(h_inst, powers, gain_tensor,
                                     self.noise_power, self.active,
                                     self.assign, cfg.interference_mode)

        dep_vals = np.full(self.n, np.nan)
        outage = np.full(self.n, np.nan)
        act_idx = np.flatnonzero(self.active)
        dep_vals[act_idx] = fbl.dep(cfg.blocklength_n, self.bits[act_idx],
                                    sinr[act_idx])
        mean_gain = 10.0 ** (-self.path_loss_db / 10.0)
        beta = self._expected_interference(mean_gain, gain_tensor) + self.noise_power
        boresight = cfg.antenna.boresight_gain
        for i in act_idx:
            mu = powers[i] * boresight * mean_gain[i]
            mu = mu[self.assign[i] & (mu > POWER_FLOOR)]
            if mu.size == 0:
                outage[i] = 1.0
            else:
                outage[i] = fbl.outage_from_means(mu, float(beta[i]),
                                                  self.gamma_th)

        # Rewards.
        eligible = self.active & ~self.newly_arrived
        changed = np.any(self.assign != self.prev_assign, axis=1) & eligible
        high_reward = self._high_reward(eligible, changed, outage)
        low_rewards = self._low_rewards(powers, dep_vals)

        w1h, w2h = cfg.weights_high
        assert -w2h - 1e-9 <= high_reward <= w1h + 1e-9
        w2l = cfg.weights_low[1]
        assert np.all(low_rewards >= -w2l - 1e-9) and np.all(low_rewards <= 1.0 + 1e-9)

        snapshot = LinkSnapshot(
            theta=self.theta.copy(), phi=self.phi.copy(),
            path_loss_db=self.path_loss_db.copy(), los=self.los.copy(),
            fading=self.fading.copy(), powers=powers.copy(),
            assign=self.assign.copy(), active=self.active.copy(),
            noise_power=self.noise_power, interference_mode=cfg.interference_mode)

        p_max = cfg.radio.p_max
        outcome = StepOutcome(
            t=self.t,
            high_reward=high_reward,
            low_rewards=low_rewards,
            sinr=np.where(self.active, sinr, np.nan),
            dep=dep_vals,
            outage_prob=outage,
            cluster_changed=changed,
            cluster_size=(self.assign & self.active[:, None]).sum(axis=1),
            eligible=eligible,
            active=self.active.copy(),
            user_ids=self.user_ids.copy(),
            bits=self.bits.copy(),
            power_sum=powers.sum(axis=0),
            power_fraction=np.where(self.active,
                                    powers.sum(axis=1) / (self.k * p_max),
                                    np.nan),
            repair_fired=self._repair_fired,
            done=False,
            links=snapshot,
        )

        # State transition: arrivals of this step are the next step's
        # first-step users.
        self.prev_assign = self.assign.copy()
        self.newly_arrived[:] = False
        self._advance_users()
        self._update_geometry()
        self._los_age += 1
        if self._los_age >= self._los_period:
            self._resample_los()
            self._los_age = 0
        if cfg.position_noise_std > 0.0:
            noise = self.rng.normal(0.0, cfg.position_noise_std, size=(self.n, 3))
            self._obs_positions = self.positions + noise
        else:
            self._obs_positions = self.positions.copy()
        self._invalidate_obs_cache()

        self.t += 1
        outcome.done = self.t >= cfg.episode_len
        self._phase = "await_high"
        return outcome, self.high_obs()

    def _expected_interference(self, mean_gain, gain_tensor) -> np.ndarray:
        """Fading-averaged interference power per user (unit-mean fading)."""
        if self.cfg.interference_mode == "steered":
            g_int = gain_tensor
        else:
            diag = np.einsum("iik->ik", gain_tensor)
            g_int = np.broadcast_to(diag[None, :, :], gain_tensor.shape)
        contribution = np.einsum("ik,nk,ink->in", mean_gain, self.powers, g_int)
        np.fill_diagonal(contribution, 0.0)
        return contribution @ self.active.astype(float)

    def _high_reward(self, eligible, changed, outage) -> float:
        n_elig = int(eligible.sum())
        if n_elig == 0:
            return 0.0
        w1, w2 = self.cfg.weights_high
        stable = int((eligible & ~changed).sum())
        violations = int((eligible & (outage > self.cfg.targets.outage_max)).sum())
        return w1 * (stable / n_elig) - w2 * (violations / n_elig)

    def _low_rewards(self, powers, dep_vals) -> np.ndarray:
        w1, w2 = self.cfg.weights_low
        eps_max = self.cfg.targets.eps_max
        p_max = self.cfg.radio.p_max
        rewards = np.empty(self.k)
        served_matrix = self.assign & self.active[:, None]
        for k in range(self.k):
            served = served_matrix[:, k]
            n_k = int(served.sum())
            if n_k == 0:
                rewards[k] = 1.0
                continue
            power_term = 1.0 - w1 * (powers[served, k].sum() / (n_k * p_max))
            violations = int((dep_vals[served] > eps_max).sum())
            rewards[k] = power_term - w2 * (violations / n_k)
        return rewards

    def _advance_users(self):
        cfg = self.cfg
        # Mobility for active users.
        for i in np.flatnonzero(self.active):
            user = UserState(id=int(self.user_ids[i]),
                             position=self.positions[i],
                             velocity=self.velocities[i])
            moved = step_mobility(user, cfg.mobility, cfg.area, self.rng)
            self.positions[i] = moved.position
            self.velocities[i] = moved.velocity
        # Departures: the user's own row is cleared, nobody else's changes.
        if cfg.departure_prob > 0.0:
            for i in np.flatnonzero(self.active):
                if self.rng.random() < cfg.departure_prob:
                    self.active[i] = False
                    self.assign[i] = False
                    self.prev_assign[i] = False
                    self.powers[i] = 0.0
        # At most one arrival per step, into a free slot.
        if cfg.arrival_prob > 0.0 and self.rng.random() < cfg.arrival_prob:
            free = np.flatnonzero(~self.active)
            if free.size:
                i = int(free[0])
                self.positions[i] = cfg.area.sample_position(self.rng)
                self.velocities[i] = np.asarray(cfg.mobility.mean_velocity, float)
                self.active[i] = True
                self.newly_arrived[i] = True
                self.user_ids[i] = self._next_id
                self._next_id += 1
                self.bits[i] = cfg.bits_b
                # Fresh geometry for the new slot, then a closest-AP seed so
                # the minimum-cluster-size constraint holds from birth.
                delta = self.positions[i] - self.ap_positions
                d3d = np.linalg.norm(delta, axis=1)
                self.assign[i] = False
                self.assign[i, int(np.argmin(d3d))] = True
                self.prev_assign[i] = self.assign[i]
                p = ch.los_probability(np.hypot(delta[:, 0], delta[:, 1]),
                                       self.positions[i, 2])
                self.los[i] = self.rng.random(self.k) < p


def recompute_step_sinr(snapshot: LinkSnapshot, cfg: EnvConfig):
    """Independent SINR recomputation from a frozen step snapshot."""
    gain_tensor = ch.steering_gain_tensor(snapshot.theta, snapshot.phi,
                                          cfg.antenna)
    h_inst = 10.0 ** (-snapshot.path_loss_db / 10.0) * snapshot.fading
    sinr, _, _ = ch.network_sinr(h_inst, snapshot.powers, gain_tensor,
                                 snapshot.noise_power, snapshot.active,
                                 snapshot.assign, snapshot.interference_mode)
    return sinr


def objective_value(outcomes, eps_max: float, blocklength_n: int) -> float:
    """Scalarized episode objective.

    Per step: the fraction of stable clusters plus the successfully-
    delivered-bits-per-energy term sum(b_i) * (1 - eps_max) / (n * P_total);
    steps that transmitted no power contribute only the stability term.
    The per-step values are averaged over the episode.
    """
    if not outcomes:
        raise ValueError("objective_value needs at least one step")
    total = 0.0
    for out in outcomes:
        n_elig = int(out.eligible.sum())
        if n_elig:
            stable = int((out.eligible & ~out.cluster_changed).sum())
            value = stable / n_elig
        else:
            value = 0.0
        p_total = float(out.power_sum.sum())
        if p_total > 0.0:
            bits_sum = float(out.bits[out.active].sum())
            value += bits_sum * (1.0 - eps_max) / (blocklength_n * p_total)
        total += value
    return total / len(outcomes)
