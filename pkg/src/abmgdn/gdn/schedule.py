"""Cosine variance schedule and the forward noising map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SIGMA_MODES = ("posterior", "beta")


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed by diffusion step tau; index 0 is the clean-data end.

    ``beta[0] = 0`` and ``alpha_bar[0] = 1`` are conventions, not schedule
    values; ``beta[1..tau_max]`` follow the cosine formula.
    """

    tau_max: int
    beta_start: float
    beta_end: float
    sigma_mode: str
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def describe(self) -> dict:
        return {"tau_max": self.tau_max, "beta_start": self.beta_start,
                "beta_end": self.beta_end, "sigma_mode": self.sigma_mode}


def cosine_beta(tau, tau_max: int, beta_start: float = 1e-4, beta_end: float = 0.02):
    tau = np.asarray(tau, dtype=np.float64)
    return beta_start + 0.5 * (beta_end - beta_start) * (1.0 - np.cos(tau / tau_max * np.pi))


def cosine_schedule(tau_max: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02,
                    sigma_mode: str = "posterior") -> NoiseSchedule:
    if tau_max < 1:
        raise ValueError("tau_max must be >= 1")
    if not beta_end > beta_start:
        raise ValueError("beta_end must exceed beta_start")
    if not (0 < beta_start and beta_end < 1):
        raise ValueError("betas must lie in (0, 1)")
    if sigma_mode not in SIGMA_MODES:
        raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
    beta = np.concatenate([[0.0], cosine_beta(np.arange(1, tau_max + 1), tau_max, beta_start, beta_end)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.zeros(tau_max + 1)
    if sigma_mode == "posterior":
        # variance of q(z_{tau-1} | z_tau, z_0); zero at tau = 1 since alpha_bar[0] = 1
        sigma[1:] = np.sqrt((1.0 - alpha_bar[:-1]) / (1.0 - alpha_bar[1:]) * beta[1:])
    else:
        sigma[1:] = np.sqrt(beta[1:])
    return NoiseSchedule(tau_max, beta_start, beta_end, sigma_mode, beta, alpha, alpha_bar, sigma)


def forward_noise(z0: np.ndarray, tau: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    if not 0 <= tau <= schedule.tau_max:
        raise ValueError(f"tau={tau} outside 0..{schedule.tau_max}")
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} != data shape {z0.shape}")
    ab = schedule.alpha_bar[tau]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
