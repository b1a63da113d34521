"""Confidence-aware age regression loss.

The model predicts a mean ``mu`` and a spread ``sigma`` per sample. The
objective combines three age-weighted terms::

    total = alpha * reg + beta * std + delta * dist

    reg  = mean(|mu - y| * AD**r)
    std  = mean(sigma * AD**s)
    dist = mean(((mu - y) / (sigma + c))**2 * AD**d)
    AD   = (1 - y / M)**2

``AD`` depends on the true age only, so it carries no gradient. All
arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0
    beta: float = 1.0
    delta: float = 1.5
    r: float = 1.0
    s: float = 1.5
    d: float = 2.0
    max_age_m: float = 115.0
    c: float = 1e-3

    def __post_init__(self):
        for name in ("alpha", "beta", "delta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")
        for name in ("r", "s", "d"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not self.max_age_m > 0:
            raise ValueError(f"max_age_m must be positive, got {self.max_age_m}")
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")


@dataclass(frozen=True)
class PredictionBatch:
    """Per-sample predicted mean, predicted spread and true age, in years."""

    mu: np.ndarray
    sigma: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=np.float64))
        target = np.atleast_1d(np.asarray(self.target, dtype=np.float64))
        if mu.ndim != 1 or not (mu.shape == sigma.shape == target.shape):
            raise ValueError(
                f"mu, sigma and target must be 1-d of equal length, got "
                f"{mu.shape}, {sigma.shape}, {target.shape}"
            )
        if mu.size == 0:
            raise ValueError("empty batch")
        for name, arr in (("mu", mu), ("sigma", sigma), ("target", target)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite value in {name}")
        if np.any(sigma <= 0):
            raise ValueError(f"sigma must be positive, got min {sigma.min()}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "target", target)

    def __len__(self):
        return self.mu.size


@dataclass(frozen=True)
class LossBreakdown:
    l_reg: float
    l_std: float
    l_dist: float
    l_total: float


def age_decay(target_age, cfg: LossConfig = LossConfig()):
    """Age weight ``(1 - age / M)**2``; scalar in, scalar out."""
    a = np.asarray(target_age, dtype=np.float64)
    bad = ~np.isfinite(a) | (a < 0) | (a > cfg.max_age_m)
    if np.any(bad):
        raise ValueError(
            f"target age {a[bad].flat[0] if a.ndim else float(a)} outside "
            f"[0, {cfg.max_age_m}]"
        )
    ad = (1.0 - a / cfg.max_age_m) ** 2
    return float(ad) if ad.ndim == 0 else ad


def _batch_decay(batch: PredictionBatch, cfg: LossConfig) -> np.ndarray:
    t = batch.target
    if np.any((t < 0) | (t >= cfg.max_age_m)):
        bad = t[(t < 0) | (t >= cfg.max_age_m)][0]
        raise ValueError(f"target age {bad} outside [0, {cfg.max_age_m})")
    return (1.0 - t / cfg.max_age_m) ** 2


def loss_terms(batch: PredictionBatch, cfg: LossConfig):
    """Per-sample (reg, std, dist) contributions before averaging."""
    ad = _batch_decay(batch, cfg)
    err = batch.mu - batch.target
    reg = np.abs(err) * ad**cfg.r
    std = batch.sigma * ad**cfg.s
    dist = (err / (batch.sigma + cfg.c)) ** 2 * ad**cfg.d
    return reg, std, dist


def loss_forward(batch: PredictionBatch, cfg: LossConfig = LossConfig()) -> LossBreakdown:
    reg, std, dist = loss_terms(batch, cfg)
    n = len(batch)
    l_reg = float(np.sum(reg) / n)
    l_std = float(np.sum(std) / n)
    l_dist = float(np.sum(dist) / n)
    l_total = cfg.alpha * l_reg + cfg.beta * l_std + cfg.delta * l_dist
    return LossBreakdown(l_reg, l_std, l_dist, l_total)


def loss_backward(batch: PredictionBatch, cfg: LossConfig = LossConfig()):
    """Analytic gradient of ``l_total`` w.r.t. ``mu`` and ``sigma``.

    The L1 kink uses the subgradient ``sign(0) = 0``.

    Returns
    -------
    grad_mu, grad_sigma : np.ndarray, shape (N,)
    """
    ad = _batch_decay(batch, cfg)
    n = len(batch)
    err = batch.mu - batch.target
    denom = batch.sigma + cfg.c
    ad_d = ad**cfg.d
    grad_mu = (cfg.alpha * np.sign(err) * ad**cfg.r + cfg.delta * 2.0 * err / denom**2 * ad_d) / n
    grad_sigma = (cfg.beta * ad**cfg.s - cfg.delta * 2.0 * err**2 / denom**3 * ad_d) / n
    return grad_mu, grad_sigma
