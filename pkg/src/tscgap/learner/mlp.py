"""Two-hidden-layer tanh policy/value network on a flat float64 parameter vector."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyLayout:
    """Shapes of the shared trunk ``obs -> h1 -> h2`` and the two linear heads.

    The policy head emits ``n_actions`` logits, the value head one scalar.
    """

    obs_dim: int
    hidden: tuple = (128, 128)
    n_actions: int = 8

    @cached_property
    def shapes(self) -> dict:
        h1, h2 = self.hidden
        return {"W1": (self.obs_dim, h1), "b1": (h1,), "W2": (h1, h2), "b2": (h2,),
                "Wp": (h2, self.n_actions), "bp": (self.n_actions,), "Wv": (h2, 1), "bv": (1,)}

    @cached_property
    def slices(self) -> dict:
        out, k = {}, 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape))
            out[name] = slice(k, k + n)
            k += n
        return out

    @property
    def size(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())

    def unpack(self, theta: np.ndarray) -> dict:
        if theta.shape != (self.size,):
            raise ShapeError(f"expected parameter vector of length {self.size}, got {theta.shape}")
        return {name: theta[self.slices[name]].reshape(shape) for name, shape in self.shapes.items()}

    def to_dict(self) -> dict:
        return {"obs_dim": self.obs_dim, "hidden": list(self.hidden), "n_actions": self.n_actions}


def init_params(layout: PolicyLayout, rng: np.random.Generator) -> np.ndarray:
    """Scaled-normal init; the policy head starts near uniform."""
    theta = np.zeros(layout.size)
    p = layout.unpack(theta)
    for name, gain in (("W1", 1.0), ("W2", 1.0), ("Wp", 0.01), ("Wv", 1.0)):
        fan_in = p[name].shape[0]
        p[name][...] = rng.normal(0.0, gain / np.sqrt(fan_in), size=p[name].shape)
    return theta


@dataclass
class ForwardCache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray


def _as_batch(layout: PolicyLayout, obs) -> np.ndarray:
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != layout.obs_dim:
        raise ShapeError(f"observation width {x.shape[-1]} != obs_dim {layout.obs_dim}")
    return x


def forward(theta: np.ndarray, layout: PolicyLayout, obs) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Batched forward pass returning ``(logits[N, A], values[N], cache)``."""
    p = layout.unpack(theta)
    x = _as_batch(layout, obs)
    h1 = np.tanh(x @ p["W1"] + p["b1"])
    h2 = np.tanh(h1 @ p["W2"] + p["b2"])
    logits = h2 @ p["Wp"] + p["bp"]
    values = (h2 @ p["Wv"] + p["bv"])[:, 0]
    return logits, values, ForwardCache(x, h1, h2)


def policy_forward(theta: np.ndarray, layout: PolicyLayout, obs) -> tuple[np.ndarray, float]:
    """Logits and value for a single observation vector."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ShapeError("policy_forward takes one observation; use forward() for batches")
    logits, values, _ = forward(theta, layout, obs)
    return logits[0], float(values[0])


def backward(theta: np.ndarray, layout: PolicyLayout, cache: ForwardCache,
             d_logits: np.ndarray, d_values: np.ndarray) -> np.ndarray:
    """Gradient of a scalar loss given its derivatives w.r.t. the network outputs."""
    p = layout.unpack(theta)
    grad = np.zeros_like(theta)
    g = layout.unpack(grad)
    g["Wp"][...] = cache.h2.T @ d_logits
    g["bp"][...] = d_logits.sum(axis=0)
    dv = d_values[:, None]
    g["Wv"][...] = cache.h2.T @ dv
    g["bv"][...] = dv.sum(axis=0)
    dh2 = (d_logits @ p["Wp"].T + dv @ p["Wv"].T) * (1.0 - cache.h2 ** 2)
    g["W2"][...] = cache.h1.T @ dh2
    g["b2"][...] = dh2.sum(axis=0)
    dh1 = (dh2 @ p["W2"].T) * (1.0 - cache.h1 ** 2)
    g["W1"][...] = cache.x.T @ dh1
    g["b1"][...] = dh1.sum(axis=0)
    return grad


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))
