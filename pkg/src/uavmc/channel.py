"""Aerial downlink radio model: probabilistic-LOS path loss, Rayleigh
fading, uniform-planar-array beam gains, received power, and SINR.

Path loss follows the UMa aerial-vehicle style model for user heights in
(22.5, 300] m; all constants are configurable through the experiment
config.  Beam gains are the normalized squared magnitude of the planar
array factor, so a beam evaluated at its own steering direction has gain
``g0 * m_z * n_y``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Validity band of the aerial path-loss model (user height, meters).
MIN_USER_HEIGHT = 22.5
MAX_USER_HEIGHT = 300.0


@dataclass
class AntennaConfig:
    """Uniform planar array at each AP: m_z x n_y elements.

    Spacings default to half a wavelength at the carrier frequency.
    ``g0`` is the constant per-element gain factor.
    """

    m_z: int = 4
    n_y: int = 4
    d_z: float | None = None
    d_y: float | None = None
    g0: float = 1.0
    carrier_freq: float = 2.0e9

    def __post_init__(self):
        if self.m_z < 1 or self.n_y < 1:
            raise ValueError("array dimensions must be at least 1")
        if self.g0 <= 0.0:
            raise ValueError("g0 must be positive")
        if self.carrier_freq <= 0.0:
            raise ValueError("carrier frequency must be positive")
        half_wave = 0.5 * self.wavelength
        if self.d_z is None:
            self.d_z = half_wave
        if self.d_y is None:
            self.d_y = half_wave
        if self.d_z <= 0.0 or self.d_y <= 0.0:
            raise ValueError("element spacings must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi * self.carrier_freq / SPEED_OF_LIGHT

    @property
    def n_elements(self) -> int:
        return self.m_z * self.n_y

    @property
    def boresight_gain(self) -> float:
        return self.g0 * self.m_z * self.n_y


@dataclass
class RadioParams:
    """System-level radio constants."""

    bandwidth: float = 10e6
    noise_density_dbm_hz: float = -174.0
    p_max: float = 1.0

    def __post_init__(self):
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")
        if self.p_max <= 0.0:
            raise ValueError("p_max must be positive")

    def noise_power(self) -> float:
        """Thermal noise power sigma^2 = N0 * B in watts."""
        return 10.0 ** ((self.noise_density_dbm_hz - 30.0) / 10.0) * self.bandwidth


@dataclass
class LinkState:
    """Channel state of one (user, AP) link."""

    path_loss_db: float
    los: bool
    fading_power: float
    theta: float
    phi: float
    d3d: float

    def mean_gain(self) -> float:
        """Expected linear power gain (unit-mean fading)."""
        return 10.0 ** (-self.path_loss_db / 10.0)

    def gain(self) -> float:
        """Instantaneous linear power gain including the fading draw."""
        return self.mean_gain() * self.fading_power


def _check_user_height(user_height):
    h = np.asarray(user_height, dtype=float)
    if np.any(h <= MIN_USER_HEIGHT) or np.any(h > MAX_USER_HEIGHT):
        raise ValueError(
            f"user height outside aerial model validity "
            f"({MIN_USER_HEIGHT} m < h <= {MAX_USER_HEIGHT} m)")
    return h


def los_probability(d2d, user_height):
    """LOS probability for an aerial user at horizontal distance d2d."""
    h = _check_user_height(user_height)
    log_h = np.log10(h)
    d1 = np.maximum(294.05 * log_h - 432.94, 18.0)
    p1 = 233.98 * log_h - 0.95
    d2d = np.asarray(d2d, dtype=float)
    ratio = np.divide(d1, d2d, out=np.ones_like(d1 * d2d, dtype=float),
                      where=d2d > 0)
    prob = ratio + np.exp(-d2d / p1) * (1.0 - ratio)
    return np.where(d2d <= d1, 1.0, prob)


def path_loss_los_db(d3d, freq_ghz):
    """LOS path loss in dB for an aerial user."""
    return 28.0 + 22.0 * np.log10(np.asarray(d3d, dtype=float)) \
        + 20.0 * np.log10(freq_ghz)


def path_loss_nlos_db(d3d, user_height, freq_ghz):
    """NLOS path loss in dB for an aerial user."""
    h = np.asarray(user_height, dtype=float)
    return -17.5 + (46.0 - 7.0 * np.log10(h)) * np.log10(np.asarray(d3d, dtype=float)) \
        + 20.0 * np.log10(40.0 * np.pi * freq_ghz / 3.0)


def link_loss(d2d, d3d, ap_height, user_height, cfg: AntennaConfig,
              rng: np.random.Generator):
    """Sample the LOS state and return (path_loss_db, los).

    Accepts scalars or broadcastable arrays; one LOS Bernoulli draw is
    consumed per link.
    """
    d2d = np.asarray(d2d, dtype=float)
    d3d = np.asarray(d3d, dtype=float)
    if np.any(d2d < 0) or np.any(d3d <= 0) or np.any(d3d < d2d):
        raise ValueError("require d3d >= d2d > 0 (after broadcasting)")
    if np.any(np.asarray(ap_height, dtype=float) <= 0):
        raise ValueError("AP height must be positive")
    p = los_probability(d2d, user_height)
    los = rng.random(size=np.broadcast(d2d, d3d).shape) < p
    freq_ghz = cfg.carrier_freq / 1e9
    pl = np.where(los,
                  path_loss_los_db(d3d, freq_ghz),
                  path_loss_nlos_db(d3d, user_height, freq_ghz))
    if np.ndim(los) == 0:
        return float(pl), bool(los)
    return pl, los


def sample_fading(rng: np.random.Generator, size=None):
    """Rayleigh fading power gain: exponential with unit mean."""
    draw = rng.exponential(1.0, size=size)
    return float(draw) if size is None else draw


def array_gain(theta, phi, steer_theta, steer_phi, cfg: AntennaConfig):
    """Planar-array power gain toward (theta, phi) for a beam steered at
    (steer_theta, steer_phi).

    gain = g0 * |AF_z|^2 * |AF_y|^2 / (m_z * n_y), where AF_z and AF_y are
    the elevation and azimuth array-factor sums.  Broadcasts over all angle
    arguments.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    steer_theta = np.asarray(steer_theta, dtype=float)
    steer_phi = np.asarray(steer_phi, dtype=float)

    psi_z = cfg.wavenumber * cfg.d_z * (np.cos(theta) - np.cos(steer_theta))
    psi_y = cfg.wavenumber * cfg.d_y * (
        np.sin(theta) * np.sin(phi) - np.sin(steer_theta) * np.sin(steer_phi))

    af_z = _array_factor_mag2(psi_z, cfg.m_z)
    af_y = _array_factor_mag2(psi_y, cfg.n_y)
    gain = cfg.g0 * af_z * af_y / (cfg.m_z * cfg.n_y)
    if gain.ndim == 0:
        return float(gain)
    return gain


def _array_factor_mag2(psi, count: int):
    """|sum_{m=0}^{count-1} exp(j*m*psi)|^2, vectorized over psi."""
    psi = np.asarray(psi, dtype=float)
    m = np.arange(count).reshape((count,) + (1,) * psi.ndim)
    af = np.exp(1j * m * psi).sum(axis=0)
    return np.abs(af) ** 2


def steering_gain_tensor(theta: np.ndarray, phi: np.ndarray,
                         cfg: AntennaConfig) -> np.ndarray:
    """Gain tensor G[i, n, k]: AP k's beam steered at user n, evaluated at
    user i's direction.  theta/phi have shape (N, K)."""
    return array_gain(theta[:, None, :], phi[:, None, :],
                      theta[None, :, :], phi[None, :, :], cfg)


def rx_power(cluster_mask, channel_gain, power_row, beam_gain) -> float:
    """Total received power at one user from its serving cluster.

    All arguments are length-K arrays over the APs; ``cluster_mask`` marks
    the serving set.  Raises if the cluster is empty (minimum cluster size
    constraint).
    """
    mask = np.asarray(cluster_mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty serving cluster (minimum cluster size is 1)")
    h = np.asarray(channel_gain, dtype=float)
    p = np.asarray(power_row, dtype=float)
    g = np.asarray(beam_gain, dtype=float)
    return float(np.sum(h * p * g * mask))


def network_sinr(channel_gains: np.ndarray, powers: np.ndarray,
                 gain_tensor: np.ndarray, noise_power: float,
                 active: np.ndarray, assign: np.ndarray,
                 mode: str = "steered"):
    """SINR for every user of the network in one shot.

    channel_gains: (N, K) instantaneous linear gains h[i, k].
    powers:        (N, K) transmit powers, already masked by the clustering.
    gain_tensor:   (N, N, K) beam gains G[i, n, k] (steered at n, seen by i).
    mode:          'steered' uses the victim-direction gain G[i, n, k] for
                   interference; 'paper' uses the served-user gain
                   G[n, n, k] (the printed form, boresight).

    Returns (sinr, signal, interference) arrays of length N; inactive users
    get zeros.
    """
    if mode not in ("steered", "paper"):
        raise ValueError(f"unknown interference mode: {mode!r}")
    n_users = channel_gains.shape[0]
    active = np.asarray(active, dtype=bool)

    signal_gain = np.einsum("iik->ik", gain_tensor)
    signal = np.sum(assign * channel_gains * powers * signal_gain, axis=1)

    if mode == "steered":
        g_int = gain_tensor
    else:
        g_int = np.broadcast_to(signal_gain[None, :, :],
                                gain_tensor.shape)
    # contribution[i, n] = sum_k h[i, k] * P[n, k] * g_int[i, n, k]
    contribution = np.einsum("ik,nk,ink->in", channel_gains, powers, g_int)
    np.fill_diagonal(contribution, 0.0)
    interference = contribution @ active.astype(float)

    sinr = np.where(active, signal / (noise_power + interference), 0.0)
    return sinr, np.where(active, signal, 0.0), np.where(active, interference, 0.0)
