"""Service-area geometry, the stochastic 3D UAV mobility model, and the
user arrival/departure lifecycle.

Velocities follow a discrete-time Gauss-Markov (AR(1)) process whose
stationary per-axis variance equals ``sigma**2``; positions reflect off the
area walls and the altitude band.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


@dataclass
class ServiceArea:
    """Box-shaped service volume: ground extents plus a UAV altitude band."""

    x_extent: float = 3000.0
    y_extent: float = 3000.0
    z_min: float = 60.0
    z_max: float = 120.0

    def __post_init__(self):
        if self.x_extent <= 0 or self.y_extent <= 0:
            raise ValueError("area extents must be positive")
        if not self.z_min < self.z_max:
            raise ValueError("z_min must be strictly below z_max")

    def contains(self, position) -> bool:
        x, y, z = position
        return (0.0 <= x <= self.x_extent
                and 0.0 <= y <= self.y_extent
                and self.z_min <= z <= self.z_max)

    def sample_position(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform position inside the service volume."""
        u = rng.uniform(size=3)
        return np.array([u[0] * self.x_extent,
                         u[1] * self.y_extent,
                         self.z_min + u[2] * (self.z_max - self.z_min)])


@dataclass
class MobilityParams:
    """Parameters of the AR(1) velocity process.

    ``memory_a`` is the velocity correlation coefficient: 1 keeps the
    current velocity, 0 resets to ``mean_velocity`` every step.  The noise
    is scaled by ``sigma * sqrt(1 - memory_a**2)`` so that the stationary
    per-axis velocity standard deviation is exactly ``sigma``.
    """

    mean_velocity: tuple = (0.0, 0.0, 0.0)
    memory_a: float = 0.9
    sigma: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.memory_a <= 1.0:
            raise ValueError("memory_a must lie in [0, 1]")
        if self.sigma < 0.0:
            raise ValueError("sigma must be nonnegative")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")


@dataclass
class UserState:
    """One aerial user: kinematic state plus its traffic demand."""

    id: int
    position: np.ndarray
    velocity: np.ndarray
    active: bool = True
    bits_b: int = 256
    blocklength_n: int = 400

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.bits_b < 1:
            raise ValueError("bits_b must be at least 1")
        if self.blocklength_n < 1:
            raise ValueError("blocklength_n must be at least 1")


def _reflect(x: float, lo: float, hi: float) -> tuple[float, float]:
    """Fold ``x`` into [lo, hi] by mirror reflection.

    Returns the folded coordinate and the velocity sign (-1 if the fold
    crossed an odd number of walls).
    """
    span = hi - lo
    t = (x - lo) % (2.0 * span)
    if t <= span:
        return lo + t, 1.0
    return hi - (t - span), -1.0


def step_mobility(user: UserState, params: MobilityParams, area: ServiceArea,
                  rng: np.random.Generator) -> UserState:
    """Advance one user by one time step of the Gauss-Markov model.

    Velocity update: v' = a*v + (1-a)*v_mean + sigma*sqrt(1-a^2)*w with w a
    standard normal per axis.  The position advances by v'*dt and reflects
    at the area boundaries, negating the corresponding velocity component;
    the altitude is finally clamped to the [z_min, z_max] band.
    """
    if not user.active:
        raise ValueError("cannot step an inactive user")
    a = params.memory_a
    noise_scale = params.sigma * np.sqrt(max(0.0, 1.0 - a * a))
    w = rng.standard_normal(3)
    mean_v = np.asarray(params.mean_velocity, dtype=float)
    velocity = a * user.velocity + (1.0 - a) * mean_v + noise_scale * w

    raw = user.position + velocity * params.dt
    bounds = ((0.0, area.x_extent), (0.0, area.y_extent),
              (area.z_min, area.z_max))
    position = np.empty(3)
    for axis, (lo, hi) in enumerate(bounds):
        position[axis], sign = _reflect(raw[axis], lo, hi)
        velocity[axis] *= sign
    position[2] = min(max(position[2], area.z_min), area.z_max)

    return dataclasses.replace(user, position=position, velocity=velocity)


def angles_to(ap_position, user_position) -> tuple[float, float, float, float]:
    """Elevation/azimuth geometry from an AP toward a user.

    Returns (theta, phi, d3d, d2d) where theta is the polar angle from the
    +z axis at the AP (0 for a user straight above), phi = atan2(dy, dx),
    and d3d/d2d are the 3D / horizontal distances in meters.
    """
    ap = np.asarray(ap_position, dtype=float)
    user = np.asarray(user_position, dtype=float)
    delta = user - ap
    d3d = float(np.linalg.norm(delta))
    if d3d == 0.0:
        raise ValueError("coincident AP and user positions: angles undefined")
    d2d = float(np.hypot(delta[0], delta[1]))
    theta = float(np.arctan2(d2d, delta[2]))
    phi = float(np.arctan2(delta[1], delta[0]))
    return theta, phi, d3d, d2d


def user_lifecycle(users: list[UserState], arrival_prob: float,
                   departure_prob: float, area: ServiceArea,
                   rng: np.random.Generator, *,
                   mean_velocity=(0.0, 0.0, 0.0),
                   bits_b: int = 256,
                   blocklength_n: int = 400) -> list[UserState]:
    """One arrival/departure round.

    Each currently active user departs (active -> False) with probability
    ``departure_prob``; afterwards, with probability ``arrival_prob`` a
    single new active user spawns uniformly in the area under a fresh id.
    Surviving users are returned untouched (same objects).
    """
    if not 0.0 <= arrival_prob <= 1.0 or not 0.0 <= departure_prob <= 1.0:
        raise ValueError("arrival/departure probabilities must lie in [0, 1]")

    out: list[UserState] = []
    for user in users:
        if user.active and rng.random() < departure_prob:
            out.append(dataclasses.replace(user, active=False))
        else:
            out.append(user)

    if rng.random() < arrival_prob:
        next_id = max((u.id for u in users), default=-1) + 1
        out.append(UserState(
            id=next_id,
            position=area.sample_position(rng),
            velocity=np.asarray(mean_velocity, dtype=float),
            active=True,
            bits_b=bits_b,
            blocklength_n=blocklength_n,
        ))
    return out
