"""DDPM noise schedule and forward noising."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, InputError


@dataclass(frozen=True)
class DiffusionSchedule:
    K: int
    betas: np.ndarray
    alpha_bar: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return np.sqrt(self.alpha_bar)

    @property
    def sigma(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_bar)

    @property
    def posterior_variance(self) -> np.ndarray:
        """beta_tilde_k = beta_k (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k), with alpha_bar_{-1} = 1."""
        prev = np.concatenate([[1.0], self.alpha_bar[:-1]])
        return self.betas * (1.0 - prev) / (1.0 - self.alpha_bar)


def make_schedule(K: int = 100, beta_min: float = 1e-4, beta_max: float = 0.02) -> DiffusionSchedule:
    """Linear betas from ``beta_min`` to ``beta_max`` over K steps (float64)."""
    if K < 1:
        raise ConfigError("K must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    if K > 1 and beta_min == beta_max:
        raise ConfigError("beta_min must be < beta_max when K > 1")
    betas = np.linspace(beta_min, beta_max, K, dtype=np.float64)
    return DiffusionSchedule(K, betas, np.cumprod(1.0 - betas))


def add_noise(A, k: int, eps, schedule: DiffusionSchedule):
    """alpha_k A + sigma_k eps, elementwise (numpy or torch)."""
    if not 0 <= int(k) < schedule.K:
        raise InputError(f"step {k} outside [0, {schedule.K})")
    if tuple(np.shape(A)) != tuple(np.shape(eps)):
        raise InputError(f"noise shape {tuple(np.shape(eps))} != chunk shape {tuple(np.shape(A))}")
    return schedule.alpha[k] * A + schedule.sigma[k] * eps


def predict_x0(noised, k: int, eps_hat, schedule: DiffusionSchedule):
    """One-step clean estimate (noised - sigma_k eps_hat) / alpha_k."""
    return (noised - schedule.sigma[k] * eps_hat) / schedule.alpha[k]
