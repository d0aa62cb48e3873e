"""Non-learning comparison policies: nearest-AP at full power, gain-margin
opportunistic clustering at full power, and a uniform random policy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import path_loss_los_db
from .env import ClusteringStrategy, NetworkEnv, PowerAllocation


@dataclass
class OpportunisticParams:
    """APs within ``gain_margin_db`` of a user's best long-term gain join
    its cluster.  Admission uses the distance-driven (LOS-formula) path
    loss, the slow-timescale channel knowledge such a scheme reconfigures
    on; per-slot LOS states and fading do not enter."""

    gain_margin_db: float = 20.0

    def __post_init__(self):
        if self.gain_margin_db < 0.0:
            raise ValueError("gain margin must be nonnegative")


def closest_policy(env: NetworkEnv):
    """Serve each active user from its nearest AP only, at full power.

    Distance ties break toward the lowest AP id (argmin picks the first).
    """
    assign = np.zeros((env.n, env.k), dtype=bool)
    nearest = np.argmin(env.d3d, axis=1)
    idx = np.flatnonzero(env.active)
    assign[idx, nearest[idx]] = True
    power = np.where(assign, env.cfg.radio.p_max, 0.0)
    return ClusteringStrategy(assign), PowerAllocation(power)


def opportunistic_policy(env: NetworkEnv, params: OpportunisticParams):
    """Admit every AP whose long-term channel gain is within the margin of
    the user's best AP; all serving links transmit at full power."""
    gain_db = -path_loss_los_db(env.d3d, env.cfg.antenna.carrier_freq / 1e9)
    best = gain_db.max(axis=1, keepdims=True)
    assign = (gain_db >= best - params.gain_margin_db) & env.active[:, None]
    power = np.where(assign, env.cfg.radio.p_max, 0.0)
    return ClusteringStrategy(assign), PowerAllocation(power)


def random_policy(env: NetworkEnv, rng: np.random.Generator):
    """Uniform random clustering bits and power levels (repair in the
    environment handles empty rows)."""
    bits = rng.random((env.n, env.k)) < 0.5
    raw_power = rng.random((env.k, env.n))
    return bits, raw_power
