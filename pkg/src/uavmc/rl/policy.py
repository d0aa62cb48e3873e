"""Stochastic policy heads: a sigmoid-squashed diagonal Gaussian for
continuous [0, 1] actions, independent Bernoulli bits for set-membership
actions, and their concatenation for the non-hierarchical mode.

Raw actions (the Gaussian pre-squash sample, the sampled bits) are what
gets stored in rollout buffers so that log-probabilities can be recomputed
exactly under updated parameters.
"""

from __future__ import annotations

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_GAUSS_ENTROPY_CONST = 0.5 * np.log(2.0 * np.pi * np.e)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_finite(head_out):
    if not np.all(np.isfinite(head_out)):
        raise ValueError("non-finite policy head outputs")


def _as_batch(arr):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


class GaussianHead:
    """Diagonal Gaussian squashed through the unit sigmoid to [0, 1].

    Head outputs are (mean, log_std) per action dimension; the log density
    carries the exact change-of-variables correction for the squash.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.out_dim = 2 * dim
        self.act_dim = dim

    def _split(self, head_out):
        mean = head_out[:, :self.dim]
        log_std = np.clip(head_out[:, self.dim:], LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std

    def sample(self, head_out, rng: np.random.Generator):
        actions, raws, logps = self.sample_batch(
            np.asarray(head_out, dtype=float)[None, :], rng)
        return actions[0], raws[0], float(logps[0])

    def sample_batch(self, head_out, rng: np.random.Generator):
        """Vectorized sampling: one row per independent decision."""
        _check_finite(head_out)
        mean, log_std = self._split(head_out)
        std = np.exp(log_std)
        z = mean + std * rng.standard_normal(mean.shape)
        unit = (z - mean) / std
        base = -0.5 * unit ** 2 - log_std - _HALF_LOG_2PI
        squash = _softplus(z) + _softplus(-z)
        logp = np.sum(base + squash, axis=1)
        return _sigmoid(z), z, logp

    def env_action(self, raw):
        return _sigmoid(np.asarray(raw, dtype=float))

    def deterministic(self, head_out):
        _check_finite(head_out)
        out, single = _as_batch(head_out)
        mean, _ = self._split(out)
        action = _sigmoid(mean)
        return action[0] if single else action

    def log_prob(self, head_out, raw):
        lp, _ = self.log_prob_grad(head_out, raw)
        return lp

    def log_prob_grad(self, head_out, raw):
        """Log density of the squashed action (identified by its pre-squash
        sample ``raw``) and its gradient w.r.t. the head outputs."""
        _check_finite(head_out)
        out, _ = _as_batch(head_out)
        z, _ = _as_batch(raw)
        mean = out[:, :self.dim]
        log_std_raw = out[:, self.dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        std = np.exp(log_std)
        unit = (z - mean) / std

        base = -0.5 * unit ** 2 - log_std - _HALF_LOG_2PI
        squash = _softplus(z) + _softplus(-z)   # -log a(1-a)
        lp = np.sum(base + squash, axis=1)

        grad = np.empty_like(out)
        grad[:, :self.dim] = unit / std
        in_range = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        grad[:, self.dim:] = (unit ** 2 - 1.0) * in_range
        return lp, grad

    def entropy_grad(self, head_out):
        """Base-distribution entropy and its gradient."""
        out, _ = _as_batch(head_out)
        log_std_raw = out[:, self.dim:]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        ent = np.sum(log_std + _GAUSS_ENTROPY_CONST, axis=1)
        grad = np.zeros_like(out)
        in_range = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        grad[:, self.dim:] = 1.0 * in_range
        return ent, grad


class BernoulliHead:
    """Independent per-bit Bernoulli head over logits."""

    def __init__(self, dim: int):
        self.dim = dim
        self.out_dim = dim
        self.act_dim = dim

    def sample(self, head_out, rng: np.random.Generator):
        actions, raws, logps = self.sample_batch(
            np.asarray(head_out, dtype=float)[None, :], rng)
        return actions[0], raws[0], float(logps[0])

    def sample_batch(self, head_out, rng: np.random.Generator):
        _check_finite(head_out)
        p = _sigmoid(head_out)
        bits = (rng.random(p.shape) < p).astype(float)
        logp = np.sum(-bits * _softplus(-head_out)
                      - (1.0 - bits) * _softplus(head_out), axis=1)
        return bits, bits, logp

    def env_action(self, raw):
        return np.asarray(raw, dtype=float)

    def deterministic(self, head_out):
        _check_finite(head_out)
        out, single = _as_batch(head_out)
        bits = (out > 0.0).astype(float)
        return bits[0] if single else bits

    def log_prob(self, head_out, raw):
        lp, _ = self.log_prob_grad(head_out, raw)
        return lp

    def log_prob_grad(self, head_out, raw):
        _check_finite(head_out)
        out, _ = _as_batch(head_out)
        bits, _ = _as_batch(raw)
        lp = np.sum(-bits * _softplus(-out) - (1.0 - bits) * _softplus(out),
                    axis=1)
        grad = bits - _sigmoid(out)
        return lp, grad

    def entropy_grad(self, head_out):
        out, _ = _as_batch(head_out)
        p = _sigmoid(out)
        ent = np.sum(p * _softplus(-out) + (1.0 - p) * _softplus(out), axis=1)
        grad = -out * p * (1.0 - p)
        return ent, grad


class BernoulliGaussianHead:
    """Concatenated Bernoulli bits and squashed-Gaussian levels, used by the
    non-hierarchical agents that decide cluster membership and power at
    once.  Raw action layout: [bits, pre-squash samples]."""

    def __init__(self, n_bits: int, n_gauss: int):
        self.bernoulli = BernoulliHead(n_bits)
        self.gaussian = GaussianHead(n_gauss)
        self.n_bits = n_bits
        self.n_gauss = n_gauss
        self.out_dim = self.bernoulli.out_dim + self.gaussian.out_dim
        self.act_dim = n_bits + n_gauss

    def _split_out(self, out):
        return out[:, :self.n_bits], out[:, self.n_bits:]

    def _split_raw(self, raw):
        return raw[:, :self.n_bits], raw[:, self.n_bits:]

    def sample(self, head_out, rng: np.random.Generator):
        actions, raws, logps = self.sample_batch(
            np.asarray(head_out, dtype=float)[None, :], rng)
        return actions[0], raws[0], float(logps[0])

    def sample_batch(self, head_out, rng: np.random.Generator):
        _check_finite(head_out)
        b_out, g_out = self._split_out(head_out)
        bits, raw_b, lp_b = self.bernoulli.sample_batch(b_out, rng)
        levels, raw_g, lp_g = self.gaussian.sample_batch(g_out, rng)
        return (np.concatenate([bits, levels], axis=1),
                np.concatenate([raw_b, raw_g], axis=1), lp_b + lp_g)

    def env_action(self, raw):
        raw = np.asarray(raw, dtype=float)
        return np.concatenate([raw[:self.n_bits],
                               _sigmoid(raw[self.n_bits:])])

    def deterministic(self, head_out):
        _check_finite(head_out)
        out, single = _as_batch(head_out)
        b_out, g_out = self._split_out(out)
        action = np.concatenate([self.bernoulli.deterministic(b_out),
                                 self.gaussian.deterministic(g_out)], axis=-1)
        return action[0] if single and action.ndim > 1 else action

    def log_prob(self, head_out, raw):
        lp, _ = self.log_prob_grad(head_out, raw)
        return lp

    def log_prob_grad(self, head_out, raw):
        out, _ = _as_batch(head_out)
        raw2, _ = _as_batch(raw)
        b_out, g_out = self._split_out(out)
        raw_b, raw_g = self._split_raw(raw2)
        lp_b, grad_b = self.bernoulli.log_prob_grad(b_out, raw_b)
        lp_g, grad_g = self.gaussian.log_prob_grad(g_out, raw_g)
        return lp_b + lp_g, np.concatenate([grad_b, grad_g], axis=1)

    def entropy_grad(self, head_out):
        out, _ = _as_batch(head_out)
        b_out, g_out = self._split_out(out)
        ent_b, grad_b = self.bernoulli.entropy_grad(b_out)
        ent_g, grad_g = self.gaussian.entropy_grad(g_out)
        return ent_b + ent_g, np.concatenate([grad_b, grad_g], axis=1)
