"""Frozen linear reward model, EMA baseline, and the policy-gradient loss.

The reward of a synthesized feature is the log-probability the frozen
classifier assigns to its intended class. Advantages are centered by an
exponential-moving-average baseline and pass a stop-gradient barrier, so the
policy update weighs log-likelihood gradients by plain numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigurationError, NumericFailure, UsageError


class RewardModel:
    """Linear softmax classifier over seen classes, frozen after training.

    Parameters are numpy arrays marked read-only; any in-place write attempt
    raises. They are wrapped as non-gradient graph leaves, so gradients flow
    through the model into its inputs but never into it.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.asarray(weight, dtype=np.float64).copy()
        bias = np.asarray(bias, dtype=np.float64).copy()
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ConfigurationError("reward model shape mismatch")
        weight.setflags(write=False)
        bias.setflags(write=False)
        self.weight = weight
        self.bias = bias
        self.frozen = True

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.weight.shape[1]

    def logits(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return x @ Tensor(self.weight).T + Tensor(self.bias)

    def log_probs(self, x) -> Tensor:
        return engine.log_softmax(self.logits(x), axis=1)


def pretrain_reward(
    features: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    epochs: int = 50,
    lr: float = 1e-2,
    batch_size: int = 128,
    rng: np.random.Generator | None = None,
    beta1: float = 0.5,
    beta2: float = 0.999,
) -> RewardModel:
    """Train the linear reward classifier by softmax cross-entropy, then
    freeze it. Labels must be 0..n_classes-1 with every class present."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ConfigurationError("pretrain_reward: features/labels mismatch")
    present = np.unique(labels)
    if present.min() < 0 or present.max() >= n_classes or len(present) != n_classes:
        raise ConfigurationError(
            f"pretrain_reward: labels must cover 0..{n_classes - 1}, saw {len(present)} classes"
        )
    if rng is None:
        rng = np.random.default_rng(0)

    from .nets import AdamState  # local import avoids a cycle at module load

    d = features.shape[1]
    w = Tensor(np.zeros((n_classes, d)), requires_grad=True)
    b = Tensor(np.zeros(n_classes), requires_grad=True)
    opt = AdamState([w, b], lr=lr, beta1=beta1, beta2=beta2)
    n = features.shape[0]
    onehot = np.eye(n_classes)[labels]
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x = Tensor(features[idx])
            lp = engine.log_softmax(x @ w.T + b, axis=1)
            loss = -engine.tmean(engine.tsum(lp * Tensor(onehot[idx]), axis=1))
            opt.step(engine.backward(loss, [w, b]))
    return RewardModel(w.data, b.data)


def reward_train_accuracy(model: RewardModel, features, labels) -> float:
    pred = np.argmax(model.logits(features).data, axis=1)
    return float(np.mean(pred == np.asarray(labels)))


def class_log_probs(model: RewardModel, x, y) -> Tensor:
    """log p(y_i | x_i) per row, differentiable w.r.t. x only."""
    y = np.asarray(y).reshape(-1)
    if np.any(y < 0) or np.any(y >= model.n_classes):
        raise UsageError("class index outside the reward model's class set")
    lp = model.log_probs(x)
    pick = Tensor(np.eye(model.n_classes)[y])
    return engine.tsum(lp * pick, axis=1)


def reward(model: RewardModel, x, y: int) -> float:
    """Outcome reward of a single feature vector: log p(y | x)."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return float(class_log_probs(model, x, [int(y)]).data[0])


@dataclass
class EmaBaseline:
    """Scalar exponential moving average of batch-mean rewards.

    The first update adopts the batch mean outright; afterwards
    b <- alpha * b + (1 - alpha) * mean. `writes` counts updates so callers
    can assert the baseline was never touched before its activation epoch.
    """

    alpha: float = 0.9
    value: float = 0.0
    initialized: bool = False
    writes: int = field(default=0, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.alpha < 1.0):
            raise ConfigurationError(f"ema alpha must be in [0, 1), got {self.alpha}")

    def update(self, rewards: np.ndarray) -> float:
        rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
        if rewards.size == 0:
            raise UsageError("ema update with an empty batch")
        if not np.all(np.isfinite(rewards)):
            raise NumericFailure("non-finite rewards in ema update")
        m = float(np.mean(rewards))
        if self.initialized:
            self.value = self.alpha * self.value + (1.0 - self.alpha) * m
        else:
            self.value = m
            self.initialized = True
        self.writes += 1
        return self.value


def ema_update(baseline: EmaBaseline, batch_rewards) -> float:
    return baseline.update(batch_rewards)


@dataclass
class AdvantageBatch:
    """Rewards and centered advantages, detached from any graph."""

    rewards: np.ndarray
    advantages: np.ndarray
    gradient_barrier: bool = True


def advantage(batch_rewards: np.ndarray, baseline: EmaBaseline) -> AdvantageBatch:
    """Center rewards by the baseline's current (post-update) value."""
    r = np.asarray(batch_rewards, dtype=np.float64).reshape(-1)
    if not baseline.initialized:
        raise UsageError("advantage before any baseline update")
    return AdvantageBatch(rewards=r, advantages=r - baseline.value)


def rl_loss(advantages: AdvantageBatch, log_probs: Tensor, params) -> tuple[Tensor, list[np.ndarray]]:
    """Policy-gradient surrogate: -(1/B) sum_i A_i * log p(y_i | x_i).

    Advantages enter as constants (the stop-gradient barrier); gradients flow
    only through the log-probabilities into the given parameters.
    """
    if not advantages.gradient_barrier:
        raise UsageError("advantages must pass the stop-gradient barrier")
    if log_probs.ndim != 1 or log_probs.shape[0] != advantages.advantages.shape[0]:
        raise UsageError("rl_loss: batch sizes disagree")
    loss = -engine.tmean(Tensor(advantages.advantages) * log_probs)
    return loss, engine.backward(loss, params)
