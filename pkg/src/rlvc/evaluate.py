"""Unseen-class synthesis and CZSL/GZSL evaluation heads.

CZSL trains a linear softmax head on synthesized unseen features only and
reports macro top-1 over real unseen test rows. GZSL trains on real seen
training features plus synthesized unseen features, reports macro accuracy
separately over unseen (U) and seen (S) test rows, and the harmonic mean
H = 2SU / (S + U).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion, engine
from .engine import Tensor
from .errors import ConfigurationError, UsageError
from .gan import Generator
from .nets import AdamState


@dataclass
class ClassifierConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 128
    beta1: float = 0.5
    beta2: float = 0.999


@dataclass
class EvalReport:
    czsl_acc: float
    gzsl_u: float
    gzsl_s: float
    gzsl_h: float

    def format_line(self) -> str:
        return (
            f"acc={self.czsl_acc:.6f} u={self.gzsl_u:.6f} "
            f"s={self.gzsl_s:.6f} h={self.gzsl_h:.6f}"
        )


def harmonic_mean(s: float, u: float) -> float:
    """H = 2SU / (S + U); zero when both accuracies vanish."""
    if s < 0 or u < 0:
        raise UsageError("accuracies must be nonnegative")
    if s + u == 0.0:
        return 0.0
    return 2.0 * s * u / (s + u)


class ClassifierHead:
    """Linear softmax head over an explicit class-id set."""

    def __init__(self, class_ids, feat_dim: int):
        self.class_ids = np.asarray(sorted(int(c) for c in class_ids), dtype=np.int64)
        if len(set(self.class_ids.tolist())) != len(self.class_ids):
            raise ConfigurationError("duplicate class ids in head")
        self.index_of = {int(c): i for i, c in enumerate(self.class_ids)}
        self.weight = np.zeros((len(self.class_ids), feat_dim))
        self.bias = np.zeros(len(self.class_ids))

    def predict(self, features: np.ndarray) -> np.ndarray:
        logits = features @ self.weight.T + self.bias
        return self.class_ids[np.argmax(logits, axis=1)]


def train_head(
    features: np.ndarray,
    labels: np.ndarray,
    class_ids,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
) -> ClassifierHead:
    """Softmax cross-entropy with Adam over shuffled minibatches."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    head = ClassifierHead(class_ids, features.shape[1])
    unknown = [y for y in labels if int(y) not in head.index_of]
    if unknown:
        raise ConfigurationError(f"training label {unknown[0]} outside head classes")
    rows = np.asarray([head.index_of[int(y)] for y in labels])
    n_cls = len(head.class_ids)
    w = Tensor(head.weight, requires_grad=True)
    b = Tensor(head.bias, requires_grad=True)
    opt = AdamState([w, b], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    onehot = np.eye(n_cls)[rows]
    n = features.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            lp = engine.log_softmax(Tensor(features[idx]) @ w.T + b, axis=1)
            loss = -engine.tmean(engine.tsum(lp * Tensor(onehot[idx]), axis=1))
            opt.step(engine.backward(loss, [w, b]))
    head.weight = w.data
    head.bias = b.data
    return head


def macro_accuracy(head: ClassifierHead, features: np.ndarray, labels: np.ndarray) -> float:
    """Per-class top-1 accuracy averaged uniformly over the classes present."""
    labels = np.asarray(labels).reshape(-1)
    if labels.size == 0:
        raise UsageError("macro_accuracy over an empty set")
    missing = [y for y in np.unique(labels) if int(y) not in head.index_of]
    if missing:
        raise ConfigurationError(f"test label {int(missing[0])} outside head classes")
    preds = head.predict(np.asarray(features, dtype=np.float64))
    return macro_accuracy_from_predictions(preds, labels)


def macro_accuracy_from_predictions(preds: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels).reshape(-1)
    accs = []
    for c in np.unique(labels):
        mask = labels == c
        accs.append(float(np.mean(preds[mask] == c)))
    return float(np.mean(accs))


def synthesize_unseen(
    gen: Generator,
    prototypes: np.ndarray,
    unseen_classes,
    n_per_class: int,
    sched: diffusion.DiffusionSchedule,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Full iterative denoising from pure noise, per unseen class.

    Starts at x_T ~ N(0, I); for t = T-1 .. 0 predicts the clean features
    from the current state (fresh generator noise each step) and draws the
    next state from the posterior. Returns the final clean prediction.
    """
    if n_per_class < 1:
        raise UsageError("n_per_class must be >= 1")
    unseen_classes = [int(c) for c in unseen_classes]
    feats, labels = [], []
    for c in unseen_classes:
        z = np.tile(prototypes[c], (n_per_class, 1))
        x = rng.standard_normal((n_per_class, gen.feat_dim))
        x0_pred = None
        for t in range(sched.timesteps - 1, -1, -1):
            eps = rng.standard_normal((n_per_class, gen.feat_dim))
            x0_pred = gen.synthesize(eps, z, x, t + 1).data
            x = diffusion.posterior_sample(x0_pred, x, t, sched, rng)
        feats.append(x0_pred)
        labels.extend([c] * n_per_class)
    return np.concatenate(feats, axis=0), np.asarray(labels, dtype=np.int64)


def train_czsl_head(
    synth_features: np.ndarray,
    synth_labels: np.ndarray,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
) -> ClassifierHead:
    """Head over unseen classes only, trained purely on synthesized rows."""
    return train_head(synth_features, synth_labels, np.unique(synth_labels), cfg, rng)


def train_gzsl_head(
    seen_features: np.ndarray,
    seen_labels: np.ndarray,
    synth_features: np.ndarray,
    synth_labels: np.ndarray,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
) -> ClassifierHead:
    """Head over all classes: real seen training rows + synthesized unseen."""
    x = np.concatenate([seen_features, synth_features], axis=0)
    y = np.concatenate([np.asarray(seen_labels), np.asarray(synth_labels)])
    return train_head(x, y, np.unique(y), cfg, rng)


def full_report(
    gen: Generator,
    dataset,
    n_per_class: int,
    sched: diffusion.DiffusionSchedule,
    cfg: ClassifierConfig,
    rng: np.random.Generator,
) -> EvalReport:
    """Synthesize unseen features once, then run both protocols."""
    synth_x, synth_y = synthesize_unseen(
        gen, dataset.prototypes, dataset.unseen_classes, n_per_class, sched, rng
    )
    czsl = train_czsl_head(synth_x, synth_y, cfg, rng)
    tu_x, tu_y = dataset.test_unseen
    acc = macro_accuracy(czsl, tu_x, tu_y)

    tr_x, tr_y = dataset.train
    gzsl = train_gzsl_head(tr_x, tr_y, synth_x, synth_y, cfg, rng)
    u = macro_accuracy(gzsl, tu_x, tu_y)
    ts_x, ts_y = dataset.test_seen
    s = macro_accuracy(gzsl, ts_x, ts_y)
    return EvalReport(czsl_acc=acc, gzsl_u=u, gzsl_s=s, gzsl_h=harmonic_mean(s, u))
