"""Dense networks, Adam, timestep embeddings, and binary checkpoints."""

from __future__ import annotations

import struct
from typing import Sequence

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigurationError, NumericFailure, UsageError

CHECKPOINT_MAGIC = b"RLVC"
CHECKPOINT_VERSION = 1


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (len(t), dim).

    Parameter-free; treated as constant input by the networks.
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if emb.shape[1] < dim:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], dim - emb.shape[1]))], axis=1)
    return emb


class DenseNet:
    """Multilayer affine network with leaky-relu hidden units, linear output.

    Weight of layer l has shape (layer_dims[l+1], layer_dims[l]); He init
    std sqrt(2/fan_in), zero biases.
    """

    def __init__(self, layer_dims: Sequence[int], rng: np.random.Generator, slope: float = 0.2):
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ConfigurationError(f"bad layer dims {layer_dims}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.slope = float(slope)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))

    @property
    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x) -> Tensor:
        h = engine.as_tensor(x)
        if h.ndim != 2:
            raise UsageError("forward expects a (batch, features) matrix")
        if h.shape[1] != self.layer_dims[0]:
            raise ConfigurationError(
                f"input width {h.shape[1]} != expected {self.layer_dims[0]}"
            )
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = engine.leaky_relu(h, self.slope)
        return h

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        params = self.params
        if len(arrays) != len(params):
            raise ConfigurationError("parameter count mismatch")
        for p, a in zip(params, arrays):
            if p.data.shape != a.shape:
                raise ConfigurationError("parameter shape mismatch")
            p.data = np.asarray(a, dtype=np.float64).copy()


class AdamState:
    """Adam with bias correction over a fixed parameter list."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        beta1: float = 0.5,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise UsageError("gradient list length mismatch")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericFailure("non-finite gradient; update rejected")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NumericFailure("non-finite parameter after update")


def adam_step(state: AdamState, grads: Sequence[np.ndarray]) -> None:
    state.step(grads)


def save_checkpoint(path, net: DenseNet, tag: bytes = b"GNET") -> None:
    """Little-endian binary: magic, u32 version, 4-byte kind tag, u32 layer
    dim count, u32 dims, then raw f64 params (per layer: weight row-major,
    then bias)."""
    if len(tag) != 4:
        raise UsageError("kind tag must be 4 bytes")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += tag
    blob += struct.pack("<I", len(net.layer_dims))
    blob += struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims)
    for p in net.params:
        blob += np.ascontiguousarray(p.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path, expected_tag: bytes | None = None, slope: float = 0.2) -> DenseNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise ConfigurationError(f"truncated checkpoint {path}")
        out = blob[off : off + n]
        off += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise ConfigurationError(f"bad checkpoint magic in {path}")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version}")
    tag = take(4)
    if expected_tag is not None and tag != expected_tag:
        raise ConfigurationError(
            f"checkpoint kind {tag!r} != expected {expected_tag!r}"
        )
    (ndims,) = struct.unpack("<I", take(4))
    if ndims < 2 or ndims > 64:
        raise ConfigurationError("implausible layer count")
    dims = list(struct.unpack(f"<{ndims}I", take(4 * ndims)))
    net = DenseNet(dims, np.random.default_rng(0), slope=slope)
    arrays = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(take(8 * fan_out * fan_in), dtype="<f8").reshape(fan_out, fan_in)
        b = np.frombuffer(take(8 * fan_out), dtype="<f8")
        arrays.extend((w, b))
    if off != len(blob):
        raise ConfigurationError(f"trailing bytes in checkpoint {path}")
    net.set_params(arrays)
    return net
