"""Class-wise visual prototypes and the distillation losses built on them.

Prototypes are per-class means of real training features, mined once before
training starts. The default distillation term pulls each synthesized
feature toward its class prototype in cosine distance; KL and L1 variants
exist for ablations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigurationError, UsageError

log = logging.getLogger(__name__)

_NORM_FLOOR = 1e-200

CUE_VARIANTS = ("pd", "kl", "l1")


@dataclass
class CueConfig:
    lambda_pd: float = 5.0
    variant: str = "pd"

    def __post_init__(self):
        if self.variant not in CUE_VARIANTS:
            raise ConfigurationError(f"unknown cue variant {self.variant!r}")
        if self.lambda_pd < 0:
            raise ConfigurationError("lambda_pd must be >= 0")


class VisualPrototypeTable:
    """Maps class id -> mean feature vector (plus the contributing count)."""

    def __init__(self, prototypes: dict[int, np.ndarray], counts: dict[int, int]):
        self.prototypes = {int(c): np.asarray(v, dtype=np.float64) for c, v in prototypes.items()}
        self.counts = {int(c): int(n) for c, n in counts.items()}

    def __contains__(self, class_id: int) -> bool:
        return int(class_id) in self.prototypes

    def class_ids(self) -> list[int]:
        return sorted(self.prototypes)

    def lookup(self, labels) -> np.ndarray:
        """Stack prototypes for a label vector; unknown label is a hard error."""
        rows = []
        for y in np.asarray(labels).reshape(-1):
            v = self.prototypes.get(int(y))
            if v is None:
                raise UsageError(f"no visual prototype for class {int(y)}")
            rows.append(v)
        return np.stack(rows, axis=0)

    def export_text(self, path) -> None:
        """One row per class: class id, then the prototype reals."""
        with open(path, "w", newline="\n") as fh:
            for c in self.class_ids():
                cells = [str(c)] + [repr(float(v)) for v in self.prototypes[c]]
                fh.write(",".join(cells) + "\n")


def mine_prototypes(features: np.ndarray, labels: np.ndarray, seen_classes) -> VisualPrototypeTable:
    """Per-class means over real training features.

    Every seen class must contribute at least one sample, and no mean may be
    the zero vector (cosine distance to it is undefined).
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if features.ndim != 2 or features.shape[0] != labels.shape[0]:
        raise ConfigurationError("mine_prototypes: features/labels mismatch")
    prototypes, counts = {}, {}
    for c in sorted(int(c) for c in seen_classes):
        mask = labels == c
        n = int(mask.sum())
        if n == 0:
            raise ConfigurationError(f"seen class {c} has no training samples")
        v = features[mask].mean(axis=0)
        if not np.any(v != 0.0):
            raise ConfigurationError(f"class {c} visual prototype is the zero vector")
        prototypes[c] = v
        counts[c] = n
    return VisualPrototypeTable(prototypes, counts)


def pd_loss(x_batch, labels, table: VisualPrototypeTable) -> Tensor:
    """Mean cosine distance between synthesized rows and their prototypes.

    Bounded in [0, 2]; scale-invariant in both arguments. A synthesized row
    with zero norm contributes the neutral value 1 (and logs a warning), with
    zero gradient through that row.
    """
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(np.atleast_2d(np.asarray(x_batch, dtype=np.float64)))
    v = table.lookup(labels)
    if v.shape != x.shape:
        raise UsageError(f"pd_loss: batch {x.shape} vs prototypes {v.shape}")
    x_sq = engine.tsum(x * x, axis=1)
    nonzero = x_sq.data > 0.0
    if not np.all(nonzero):
        log.warning("pd_loss: %d synthesized row(s) have zero norm", int((~nonzero).sum()))
    mask = Tensor(nonzero.astype(np.float64))
    x_norm = engine.sqrt(engine.maximum_const(x_sq, _NORM_FLOOR))
    v_norm = Tensor(np.linalg.norm(v, axis=1))
    cos = mask * engine.tsum(x * Tensor(v), axis=1) / (x_norm * v_norm)
    return engine.tmean(1.0 - cos)


def kl_cue_loss(x_batch, labels, table: VisualPrototypeTable) -> Tensor:
    """Mean KL(softmax(prototype) || softmax(synthesized)) at temperature 1."""
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(np.atleast_2d(np.asarray(x_batch, dtype=np.float64)))
    v = table.lookup(labels)
    if v.shape != x.shape:
        raise UsageError(f"kl_cue_loss: batch {x.shape} vs prototypes {v.shape}")
    vmax = v.max(axis=1, keepdims=True)
    p = np.exp(v - vmax)
    p /= p.sum(axis=1, keepdims=True)
    log_p = np.log(p)
    lq = engine.log_softmax(x, axis=1)
    per_row = engine.tsum(Tensor(p) * (Tensor(log_p) - lq), axis=1)
    return engine.tmean(per_row)


def l1_cue_loss(x_batch, labels, table: VisualPrototypeTable) -> Tensor:
    """Mean per-coordinate absolute difference to the prototype."""
    x = x_batch if isinstance(x_batch, Tensor) else Tensor(np.atleast_2d(np.asarray(x_batch, dtype=np.float64)))
    v = table.lookup(labels)
    if v.shape != x.shape:
        raise UsageError(f"l1_cue_loss: batch {x.shape} vs prototypes {v.shape}")
    return engine.tmean(engine.absval(x - Tensor(v)))


def cue_loss(x_batch, labels, table: VisualPrototypeTable, variant: str = "pd") -> Tensor:
    if variant == "pd":
        return pd_loss(x_batch, labels, table)
    if variant == "kl":
        return kl_cue_loss(x_batch, labels, table)
    if variant == "l1":
        return l1_cue_loss(x_batch, labels, table)
    raise ConfigurationError(f"unknown cue variant {variant!r}")


def generator_total_loss(adv_loss, cue_term, config: CueConfig) -> Tensor:
    """Composite generator objective: adversarial + lambda * distillation."""
    return engine.as_tensor(adv_loss) + config.lambda_pd * engine.as_tensor(cue_term)
