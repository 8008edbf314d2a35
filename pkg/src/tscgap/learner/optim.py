from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NonFiniteLossError(FloatingPointError):
    """A loss or gradient became NaN/inf."""


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, theta: np.ndarray, **kw) -> "AdamState":
        return cls(np.zeros_like(theta), np.zeros_like(theta), **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """Return updated parameters; ``state`` is updated in place.

    From a fresh state, zero gradients never move ``theta``.
    """
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("non-finite gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_grad_norm(grad: np.ndarray, max_norm) -> np.ndarray:
    if max_norm is None:
        return grad
    n = float(np.linalg.norm(grad))
    return grad * (max_norm / n) if n > max_norm else grad
