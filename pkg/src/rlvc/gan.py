"""Diffusion-conditioned feature generator and its two WGAN-GP critics.

The generator consumes (noise, semantic prototype, noisy state, timestep
embedding) and predicts the clean feature vector. One critic scores clean
features against prototypes; the other scores denoising transitions
(state_t, state_{t+1}) so the chain itself is adversarially supervised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion, engine
from .engine import Tensor
from .errors import UsageError
from .nets import DenseNet, timestep_embedding

_NORM_FLOOR = 1e-200  # keeps the norm's subgradient finite at exactly zero


@dataclass
class GpConfig:
    lambda_gp: float = 10.0


class Generator:
    def __init__(
        self,
        feat_dim: int,
        sem_dim: int,
        rng: np.random.Generator,
        hidden_mult: int = 4,
        temb_dim: int = 16,
        slope: float = 0.2,
    ):
        self.feat_dim = int(feat_dim)
        self.sem_dim = int(sem_dim)
        self.temb_dim = int(temb_dim)
        in_dim = feat_dim + sem_dim + feat_dim + temb_dim
        hidden = hidden_mult * feat_dim
        self.net = DenseNet([in_dim, hidden, hidden, feat_dim], rng, slope=slope)

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def synthesize(self, eps, z, x_noisy, t) -> Tensor:
        """Predict clean features from noise, prototype, noisy state, and the
        timestep index of that state. Row-wise: batched calls equal stacked
        single-row calls."""
        eps = np.atleast_2d(np.asarray(eps, dtype=np.float64))
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        xn = x_noisy if isinstance(x_noisy, Tensor) else Tensor(np.atleast_2d(np.asarray(x_noisy, dtype=np.float64)))
        if xn.ndim != 2:
            xn = engine.reshape(xn, (1, xn.size))
        rows = eps.shape[0]
        if not (z.shape[0] == rows and xn.shape[0] == rows):
            raise UsageError("synthesize: batch sizes differ")
        t = np.asarray(t)
        if t.size == 1:
            t = np.full(rows, int(t.reshape(-1)[0]))
        temb = timestep_embedding(t, self.temb_dim)
        inp = engine.concat([Tensor(eps), Tensor(z), xn, Tensor(temb)], axis=1)
        return self.net.forward(inp)


class CriticX0:
    """Scores (clean feature, prototype) pairs; scalar output per row."""

    def __init__(self, feat_dim: int, sem_dim: int, rng, hidden_mult: int = 4, slope: float = 0.2):
        hidden = hidden_mult * feat_dim
        self.feat_dim = int(feat_dim)
        self.net = DenseNet([feat_dim + sem_dim, hidden, hidden, 1], rng, slope=slope)

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def score(self, x, z) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(np.asarray(z, dtype=np.float64)))
        return self.net.forward(engine.concat([x, z], axis=1))


class CriticXt:
    """Scores denoising transitions (state_t, state_{t+1}, prototype, t)."""

    def __init__(
        self,
        feat_dim: int,
        sem_dim: int,
        rng,
        hidden_mult: int = 4,
        temb_dim: int = 16,
        slope: float = 0.2,
    ):
        hidden = hidden_mult * feat_dim
        self.feat_dim = int(feat_dim)
        self.temb_dim = int(temb_dim)
        self.net = DenseNet(
            [feat_dim + feat_dim + sem_dim + temb_dim, hidden, hidden, 1], rng, slope=slope
        )

    @property
    def params(self) -> list[Tensor]:
        return self.net.params

    def score(self, x_t, x_next, z, t) -> Tensor:
        x_t = x_t if isinstance(x_t, Tensor) else Tensor(np.atleast_2d(np.asarray(x_t, dtype=np.float64)))
        x_next = x_next if isinstance(x_next, Tensor) else Tensor(np.atleast_2d(np.asarray(x_next, dtype=np.float64)))
        z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(np.asarray(z, dtype=np.float64)))
        t = np.asarray(t)
        if t.size == 1:
            t = np.full(x_t.shape[0], int(t.reshape(-1)[0]))
        temb = Tensor(timestep_embedding(t, self.temb_dim))
        return self.net.forward(engine.concat([x_t, x_next, z, temb], axis=1))


def gradient_norms(score_of, x_hat: Tensor) -> Tensor:
    """Per-row L2 norm of d score / d x_hat, as a differentiable node."""
    s = engine.tsum(score_of(x_hat))
    g = engine.grad(s, [x_hat])[0]
    return engine.sqrt(engine.maximum_const(engine.tsum(g * g, axis=1), _NORM_FLOOR))


def _gradient_penalty(score_of, real: np.ndarray, fake: np.ndarray, rng) -> Tensor:
    u = rng.uniform(size=(real.shape[0], 1))
    x_hat = Tensor(u * real + (1.0 - u) * fake, requires_grad=True)
    norms = gradient_norms(score_of, x_hat)
    return engine.tmean((norms - 1.0) ** 2.0)


def _as_const_batch(x, what: str) -> np.ndarray:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    data = np.atleast_2d(data)
    if data.shape[0] < 1:
        raise UsageError(f"{what}: empty batch")
    return data


def critic_x0_terms(critic: CriticX0, real_x0, fake_x0, z, gp: GpConfig, rng) -> Tensor:
    real = _as_const_batch(real_x0, "critic_x0_loss real")
    fake = _as_const_batch(fake_x0, "critic_x0_loss fake")
    z = _as_const_batch(z, "critic_x0_loss z")
    if not (real.shape == fake.shape and real.shape[0] == z.shape[0]):
        raise UsageError("critic_x0_loss: batch shapes disagree")
    z_t = Tensor(z)
    wass = -engine.tmean(critic.score(Tensor(real), z_t)) + engine.tmean(
        critic.score(Tensor(fake), z_t)
    )
    penalty = _gradient_penalty(lambda xh: critic.score(xh, z_t), real, fake, rng)
    return wass + gp.lambda_gp * penalty


def critic_x0_loss(critic, real_x0, fake_x0, z, gp: GpConfig, rng):
    """Clean-feature critic loss; fakes are constants (no generator grad).

    Returns the scalar loss node and gradients w.r.t. the critic parameters.
    """
    loss = critic_x0_terms(critic, real_x0, fake_x0, z, gp, rng)
    return loss, engine.backward(loss, critic.params)


def critic_xt_terms(critic: CriticXt, real_xt, fake_xt, x_next, z, t, gp: GpConfig, rng) -> Tensor:
    real = _as_const_batch(real_xt, "critic_xt_loss real")
    fake = _as_const_batch(fake_xt, "critic_xt_loss fake")
    x_next = _as_const_batch(x_next, "critic_xt_loss x_next")
    z = _as_const_batch(z, "critic_xt_loss z")
    if not (real.shape == fake.shape == x_next.shape and real.shape[0] == z.shape[0]):
        raise UsageError("critic_xt_loss: batch shapes disagree")
    xn_t, z_t = Tensor(x_next), Tensor(z)
    wass = -engine.tmean(critic.score(Tensor(real), xn_t, z_t, t)) + engine.tmean(
        critic.score(Tensor(fake), xn_t, z_t, t)
    )
    # Interpolation (and the norm) run over the discriminated argument only;
    # the conditioning stays fixed.
    penalty = _gradient_penalty(
        lambda xh: critic.score(xh, xn_t, z_t, t), real, fake, rng
    )
    return wass + gp.lambda_gp * penalty


def critic_xt_loss(critic, real_xt, fake_xt, x_next, z, t, gp: GpConfig, rng):
    """Transition critic loss; same contract as critic_x0_loss."""
    loss = critic_xt_terms(critic, real_xt, fake_xt, x_next, z, t, gp, rng)
    return loss, engine.backward(loss, critic.params)


def generator_adv_terms(
    gen: Generator,
    critic_x0: CriticX0,
    critic_xt: CriticXt,
    z: np.ndarray,
    x_next: np.ndarray,
    t: np.ndarray,
    sched: diffusion.DiffusionSchedule,
    eps_gen: np.ndarray,
    eps_post: np.ndarray,
) -> tuple[Tensor, Tensor]:
    """Adversarial generator objective as a graph node, plus the synthesized
    clean features (for composing distillation terms on the same batch).

    The transition sample is reparameterized (posterior mean + sigma * eps
    with eps fixed), so gradient reaches the generator through both critics.
    """
    z = _as_const_batch(z, "generator_adv_loss z")
    x_next = _as_const_batch(x_next, "generator_adv_loss x_next")
    t = np.asarray(t).reshape(-1)
    x0_tilde = gen.synthesize(eps_gen, z, x_next, t + 1)
    c1, c2, sigma2 = diffusion.posterior_coeffs(sched, t)
    xt_tilde = Tensor(c1) * x0_tilde + Tensor(c2 * x_next + np.sqrt(sigma2) * eps_post)
    loss = -engine.tmean(critic_x0.score(x0_tilde, Tensor(z))) - engine.tmean(
        critic_xt.score(xt_tilde, Tensor(x_next), Tensor(z), t)
    )
    return loss, x0_tilde


def generator_adv_loss(gen, critic_x0, critic_xt, z, x_next, t, sched, eps_gen, eps_post):
    """Adversarial generator loss with gradients w.r.t. generator parameters.

    Critics are frozen here: their parameters receive no update from this
    loss (gradients are taken for the generator only).
    """
    loss, _ = generator_adv_terms(
        gen, critic_x0, critic_xt, z, x_next, t, sched, eps_gen, eps_post
    )
    return loss, engine.backward(loss, gen.params)
