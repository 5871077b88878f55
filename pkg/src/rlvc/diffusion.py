"""Linear-beta diffusion schedule over feature vectors.

Indexing convention: states are x_0 (clean) through x_T; betas[t] is the
noise rate of the step that produces x_t, so betas[1..T] are meaningful and
alpha_bar[0] == 1 exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, UsageError


class DiffusionSchedule:
    def __init__(self, timesteps: int, betas: np.ndarray):
        self.timesteps = int(timesteps)
        self.betas = betas  # shape (T+1,), betas[0] unused (0.0)
        self.alphas = 1.0 - betas
        self.alphas[0] = 1.0
        self.alpha_bars = np.cumprod(self.alphas)


def build_schedule(timesteps: int, beta_min: float, beta_max: float) -> DiffusionSchedule:
    if timesteps < 1:
        raise ConfigurationError(f"timesteps must be >= 1, got {timesteps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ConfigurationError(
            f"betas must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )
    betas = np.zeros(timesteps + 1)
    betas[1:] = np.linspace(beta_min, beta_max, timesteps)
    return DiffusionSchedule(timesteps, betas)


def _check_t(t, lo: int, hi: int, what: str) -> np.ndarray:
    t = np.asarray(t)
    if not np.issubdtype(t.dtype, np.integer):
        raise UsageError(f"{what}: timesteps must be integers")
    if t.size == 0 or np.any(t < lo) or np.any(t > hi):
        raise UsageError(f"{what}: timestep out of range [{lo}, {hi}]")
    return t.reshape(-1)


def forward_noise(
    x0: np.ndarray, t, sched: DiffusionSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Draw x_t ~ q(x_t | x_0) = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    t = _check_t(t, 0, sched.timesteps, "forward_noise")
    if t.size == 1:
        t = np.full(x0.shape[0], int(t[0]))
    abar = sched.alpha_bars[t][:, None]
    eps = rng.standard_normal(x0.shape)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def forward_transition(
    x_t: np.ndarray, t, sched: DiffusionSchedule, rng: np.random.Generator
) -> np.ndarray:
    """One forward chain step: x_{t+1} ~ q(x_{t+1} | x_t)."""
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.float64))
    t = _check_t(t, 0, sched.timesteps - 1, "forward_transition")
    if t.size == 1:
        t = np.full(x_t.shape[0], int(t[0]))
    a_next = sched.alphas[t + 1][:, None]
    b_next = sched.betas[t + 1][:, None]
    eps = rng.standard_normal(x_t.shape)
    return np.sqrt(a_next) * x_t + np.sqrt(b_next) * eps


def posterior_coeffs(sched: DiffusionSchedule, t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coefficients (c1, c2, sigma2) of q(x_t | x_{t+1}, x_0), each shape (B, 1).

    mean = c1 * x0_hat + c2 * x_next; variance sigma2. At t = 0 the variance
    is exactly zero and c2 vanishes, so the output is the clean prediction.
    """
    t = _check_t(t, 0, sched.timesteps - 1, "posterior_coeffs")
    abar_t = sched.alpha_bars[t]
    abar_next = sched.alpha_bars[t + 1]
    beta_next = sched.betas[t + 1]
    alpha_next = sched.alphas[t + 1]
    denom = 1.0 - abar_next
    c1 = np.sqrt(abar_t) * beta_next / denom
    c2 = np.sqrt(alpha_next) * (1.0 - abar_t) / denom
    sigma2 = beta_next * (1.0 - abar_t) / denom
    return c1[:, None], c2[:, None], sigma2[:, None]


def posterior_sample(
    x0_hat: np.ndarray,
    x_next: np.ndarray,
    t,
    sched: DiffusionSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw x_t ~ q(x_t | x_{t+1}, x0_hat); deterministic where t = 0."""
    x0_hat = np.atleast_2d(np.asarray(x0_hat, dtype=np.float64))
    x_next = np.atleast_2d(np.asarray(x_next, dtype=np.float64))
    if x0_hat.shape != x_next.shape:
        raise UsageError("posterior_sample: state shapes differ")
    t = np.asarray(t)
    if t.size == 1:
        t = np.full(x0_hat.shape[0], int(t.reshape(-1)[0]))
    c1, c2, sigma2 = posterior_coeffs(sched, t)
    mean = c1 * x0_hat + c2 * x_next
    eps = rng.standard_normal(x0_hat.shape)
    return mean + np.sqrt(sigma2) * eps
