"""Generator/critic losses: exact gradient-penalty cases, constant-critic
cancellation, and the reparameterized generator objective."""

from __future__ import annotations

import numpy as np
import pytest

from rlvc import diffusion, engine, gan
from rlvc.engine import Tensor
from rlvc.errors import UsageError
from rlvc.gan import CriticX0, CriticXt, Generator, GpConfig


def _zero_net(net) -> None:
    net.set_params([np.zeros_like(p.data) for p in net.params])


def _constant_critic_x0(c: float, d=3, dz=2) -> CriticX0:
    critic = CriticX0(d, dz, np.random.default_rng(0))
    _zero_net(critic.net)
    arrays = [p.data.copy() for p in critic.net.params]
    arrays[-1][:] = c  # output bias
    critic.net.set_params(arrays)
    return critic


def _unit_linear_critic_x0(w: np.ndarray, dz=2) -> CriticX0:
    """D(x, z) = w . x exactly, despite the leaky-relu hidden layers.

    Uses the identity (leaky(a) - leaky(-a)) / (1 + slope) = a: two mirrored
    units per layer reconstruct the linear pre-activation.
    """
    d = w.size
    critic = CriticX0(d, dz, np.random.default_rng(0), slope=0.2)
    dims = critic.net.layer_dims
    W1 = np.zeros((dims[1], dims[0]))
    W1[0, :d] = w
    W1[1, :d] = -w
    W2 = np.zeros((dims[2], dims[1]))
    W2[0, 0], W2[0, 1] = 1 / 1.2, -1 / 1.2
    W2[1, 0], W2[1, 1] = -1 / 1.2, 1 / 1.2
    W3 = np.zeros((1, dims[2]))
    W3[0, 0], W3[0, 1] = 1 / 1.2, -1 / 1.2
    critic.net.set_params(
        [W1, np.zeros(dims[1]), W2, np.zeros(dims[2]), W3, np.zeros(1)]
    )
    return critic


def test_synthesize_deterministic_and_zero_net():
    gen = Generator(3, 2, np.random.default_rng(1), hidden_mult=2, temb_dim=4)
    eps = np.random.default_rng(2).normal(size=(4, 3))
    z = np.random.default_rng(3).normal(size=(4, 2))
    xn = np.random.default_rng(4).normal(size=(4, 3))
    a = gen.synthesize(eps, z, xn, 2).data
    b = gen.synthesize(eps, z, xn, 2).data
    np.testing.assert_array_equal(a, b)

    _zero_net(gen.net)
    np.testing.assert_array_equal(gen.synthesize(eps, z, xn, 2).data, np.zeros((4, 3)))


def test_synthesize_batched_equals_stacked():
    gen = Generator(3, 2, np.random.default_rng(5), hidden_mult=2, temb_dim=4)
    rng = np.random.default_rng(6)
    eps, z, xn = rng.normal(size=(5, 3)), rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    t = np.array([1, 2, 3, 4, 1])
    batched = gen.synthesize(eps, z, xn, t).data
    rows = [
        gen.synthesize(eps[i : i + 1], z[i : i + 1], xn[i : i + 1], t[i : i + 1]).data
        for i in range(5)
    ]
    np.testing.assert_allclose(batched, np.concatenate(rows), rtol=1e-13, atol=1e-15)


def test_synthesize_rejects_mismatched_batches():
    gen = Generator(3, 2, np.random.default_rng(0), hidden_mult=2, temb_dim=4)
    with pytest.raises(UsageError):
        gen.synthesize(np.zeros((2, 3)), np.zeros((3, 2)), np.zeros((2, 3)), 1)


def test_zero_critic_loss_is_lambda_gp():
    critic = _constant_critic_x0(0.0)
    rng = np.random.default_rng(7)
    real = rng.normal(size=(8, 3))
    fake = rng.normal(size=(8, 3))
    z = rng.normal(size=(8, 2))
    for lam in (10.0, 3.5):
        loss, grads = gan.critic_x0_loss(critic, real, fake, z, GpConfig(lam), rng)
        assert abs(loss.item() - lam) < 1e-12
        assert len(grads) == len(critic.params)


def test_constant_critic_wasserstein_cancels():
    critic = _constant_critic_x0(4.2)
    rng = np.random.default_rng(8)
    real = rng.normal(size=(6, 3))
    fake = rng.normal(size=(6, 3))
    z = rng.normal(size=(6, 2))
    loss, _ = gan.critic_x0_loss(critic, real, fake, z, GpConfig(10.0), rng)
    # constant output: wasserstein terms cancel, gradient norm is 0 -> GP = 1
    assert abs(loss.item() - 10.0) < 1e-12


def test_unit_linear_critic_gp_vanishes():
    w = np.array([0.6, 0.0, 0.8])  # unit norm
    critic = _unit_linear_critic_x0(w)
    rng = np.random.default_rng(9)
    real = rng.normal(size=(16, 3))
    fake = rng.normal(size=(16, 3))
    z = rng.normal(size=(16, 2))
    score = critic.score(real, z).data[:, 0]
    np.testing.assert_allclose(score, real @ w, atol=1e-12)
    loss, _ = gan.critic_x0_loss(critic, real, fake, z, GpConfig(10.0), rng)
    wass = -np.mean(real @ w) + np.mean(fake @ w)
    assert abs(loss.item() - wass) < 1e-10  # the whole penalty is ~0


def test_gradient_norms_of_linear_critic():
    w = np.array([3.0, 0.0, 4.0])  # norm 5
    critic = _unit_linear_critic_x0(w)
    x_hat = Tensor(np.random.default_rng(1).normal(size=(4, 3)), requires_grad=True)
    z = Tensor(np.zeros((4, 2)))
    norms = gan.gradient_norms(lambda xh: critic.score(xh, z), x_hat)
    np.testing.assert_allclose(norms.data, np.full(4, 5.0), atol=1e-12)


def test_gp_swap_invariance_when_real_equals_fake():
    critic = CriticX0(3, 2, np.random.default_rng(10))
    batch = np.random.default_rng(11).normal(size=(5, 3))
    z = np.random.default_rng(12).normal(size=(5, 2))
    gp = GpConfig(10.0)
    a, _ = gan.critic_x0_loss(critic, batch, batch, z, gp, np.random.default_rng(0))
    b, _ = gan.critic_x0_loss(critic, batch.copy(), batch.copy(), z, gp, np.random.default_rng(99))
    # the interpolation point is the shared point for every u, so even a
    # different rng stream cannot change the value
    assert a.item() == b.item()


def test_critic_x0_loss_rejects_bad_batches():
    critic = CriticX0(3, 2, np.random.default_rng(0))
    gp = GpConfig(10.0)
    rng = np.random.default_rng(0)
    with pytest.raises(UsageError):
        gan.critic_x0_loss(critic, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 2)), gp, rng)
    with pytest.raises(UsageError):
        gan.critic_x0_loss(critic, np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 2)), gp, rng)


def test_critic_xt_zero_net_loss_is_lambda_gp():
    critic = CriticXt(3, 2, np.random.default_rng(0), temb_dim=4)
    _zero_net(critic.net)
    rng = np.random.default_rng(13)
    shape = (6, 3)
    loss, grads = gan.critic_xt_loss(
        critic,
        rng.normal(size=shape),
        rng.normal(size=shape),
        rng.normal(size=shape),
        rng.normal(size=(6, 2)),
        np.array([0, 1, 2, 3, 0, 1]),
        GpConfig(10.0),
        rng,
    )
    assert abs(loss.item() - 10.0) < 1e-12
    assert len(grads) == len(critic.params)


def test_critic_fd_spot_check():
    rng = np.random.default_rng(20)
    critic = CriticX0(2, 2, rng, hidden_mult=1)
    real = rng.normal(size=(3, 2))
    fake = rng.normal(size=(3, 2))
    z = rng.normal(size=(3, 2))

    def loss_fn():
        return gan.critic_x0_terms(critic, real, fake, z, GpConfig(10.0), np.random.default_rng(55))

    assert engine.finite_difference_check(loss_fn, critic.params) < 1e-4


def test_generator_adv_loss_constant_critics():
    gen = Generator(3, 2, np.random.default_rng(1), hidden_mult=1, temb_dim=4)
    sched = diffusion.build_schedule(4, 0.1, 0.4)
    rng = np.random.default_rng(2)
    z = rng.normal(size=(4, 2))
    x_next = rng.normal(size=(4, 3))
    t = np.array([0, 1, 2, 3])
    eps_g = rng.normal(size=(4, 3))
    eps_p = rng.normal(size=(4, 3))

    cx0 = _constant_critic_x0(1.25, d=3, dz=2)
    cxt = CriticXt(3, 2, np.random.default_rng(0), temb_dim=16)
    _zero_net(cxt.net)
    arrays = [p.data.copy() for p in cxt.net.params]
    arrays[-1][:] = -0.75
    cxt.net.set_params(arrays)

    loss, grads = gan.generator_adv_loss(gen, cx0, cxt, z, x_next, t, sched, eps_g, eps_p)
    assert abs(loss.item() - (-1.25 + 0.75)) < 1e-12

    _zero_net(cx0.net)
    _zero_net(cxt.net)
    loss0, grads0 = gan.generator_adv_loss(gen, cx0, cxt, z, x_next, t, sched, eps_g, eps_p)
    assert loss0.item() == 0.0
    for g in grads0:
        np.testing.assert_array_equal(g, np.zeros_like(g))


def test_generator_adv_fd_through_posterior_path():
    # gradient flows through both critics, including the reparameterized
    # x_t sample; all noise is held fixed so the loss is a pure function
    gen = Generator(2, 2, np.random.default_rng(3), hidden_mult=1, temb_dim=4)
    cx0 = CriticX0(2, 2, np.random.default_rng(4), hidden_mult=1)
    cxt = CriticXt(2, 2, np.random.default_rng(5), hidden_mult=1, temb_dim=4)
    sched = diffusion.build_schedule(4, 0.1, 0.4)
    rng = np.random.default_rng(6)
    z = rng.normal(size=(3, 2))
    x_next = rng.normal(size=(3, 2))
    t = np.array([0, 1, 3])
    eps_g = rng.normal(size=(3, 2))
    eps_p = rng.normal(size=(3, 2))

    def loss_fn():
        loss, _ = gan.generator_adv_terms(gen, cx0, cxt, z, x_next, t, sched, eps_g, eps_p)
        return loss

    assert engine.finite_difference_check(loss_fn, gen.params) < 1e-4


def test_summed_critic_objective_zero_nets():
    # the trainer adds the two scalar losses; with both critics zeroed each
    # term reduces to its gradient penalty, so the sum is exactly 2 * lambda
    rng = np.random.default_rng(30)
    cx0 = CriticX0(2, 2, rng, hidden_mult=1)
    cxt = CriticXt(2, 2, rng, hidden_mult=1, temb_dim=4)
    _zero_net(cx0.net)
    _zero_net(cxt.net)
    real = rng.normal(size=(4, 2))
    fake = rng.normal(size=(4, 2))
    xn = rng.normal(size=(4, 2))
    z = rng.normal(size=(4, 2))
    t = np.array([0, 1, 2, 3])
    gp = GpConfig(10.0)
    l0, _ = gan.critic_x0_loss(cx0, real, fake, z, gp, np.random.default_rng(70))
    lt, _ = gan.critic_xt_loss(cxt, real, fake, xn, z, t, gp, np.random.default_rng(71))
    assert abs((l0.item() + lt.item()) - 20.0) < 1e-12
