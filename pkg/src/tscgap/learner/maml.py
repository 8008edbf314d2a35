"""Model-agnostic meta-learning on top of the policy-gradient machinery.

Objectives are small objects exposing ``value_and_grad(theta)`` and
``hvp(theta, v)``. The meta-gradient of ``L_out(adapt(theta))`` is
computed either first-order (adapted parameters treated as a shift of
``theta``) or fully second-order by a backward recursion through the inner
steps: ``v <- v - alpha * H_k v``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .mlp import PolicyLayout
from .optim import AdamState, NonFiniteLossError, adam_step, clip_grad_norm
from .ppo import Batch, surrogate_loss

GRADIENT_MODES = ("first_order", "full_second_order")


@dataclass(frozen=True)
class MamlHyper:
    inner_lr: float = 0.05
    outer_lr: float = 4e-5
    inner_adaptation_steps: int = 2
    outer_optimizer_steps: int = 20
    tasks_per_meta_batch: int = 4
    gradient_mode: str = "first_order"
    # episodes per rollout (each inner step and the post-adaptation rollout)
    episodes_per_rollout: int = 1
    # clipping of the importance-weighted outer objective; None = plain ratio * A
    outer_clip: Optional[float] = 0.2
    value_coeff: float = 0.5
    entropy_coeff: float = 0.0
    max_grad_norm: Optional[float] = 0.5

    def __post_init__(self):
        if self.inner_adaptation_steps < 1 or self.outer_optimizer_steps < 1:
            raise ValueError("step counts must be >= 1")
        if self.inner_lr <= 0 or self.outer_lr <= 0:
            raise ValueError("learning rates must be > 0")
        if self.tasks_per_meta_batch < 1 or self.episodes_per_rollout < 1:
            raise ValueError("tasks_per_meta_batch and episodes_per_rollout must be >= 1")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")

    def episodes_per_task(self) -> int:
        return (self.inner_adaptation_steps + 1) * self.episodes_per_rollout


class Objective:
    """Differentiable scalar objective; subclasses provide ``value_and_grad``."""

    def value_and_grad(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def hvp(self, theta: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Hessian-vector product by central differences of the exact gradient."""
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return np.zeros_like(theta)
        eps = 1e-5 * max(1.0, float(np.linalg.norm(theta))) / nv
        return (self.grad(theta + eps * v) - self.grad(theta - eps * v)) / (2.0 * eps)


class PolicyGradientObjective(Objective):
    """Policy loss on a fixed rollout batch, importance-weighted against the behaviour policy."""

    def __init__(self, layout: PolicyLayout, batch: Batch, *, clip_epsilon: Optional[float] = None,
                 value_coeff: float = 0.5, entropy_coeff: float = 0.0):
        self.layout = layout
        self.batch = batch
        self.kw = dict(clip_epsilon=clip_epsilon, value_coeff=value_coeff, entropy_coeff=entropy_coeff)

    def value_and_grad(self, theta):
        loss, grad, _ = surrogate_loss(theta, self.layout, self.batch, **self.kw)
        return loss, grad


class QuadraticObjective(Objective):
    """``0.5 * theta' A theta - b' theta`` with symmetric ``A``."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def value_and_grad(self, theta):
        return float(0.5 * theta @ self.A @ theta - self.b @ theta), self.A @ theta - self.b

    def hvp(self, theta, v):
        return self.A @ v

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.A, self.b)


class TanhRegressionObjective(Objective):
    """Mean squared error of the two-parameter model ``y = theta[1] * tanh(theta[0] * x)``."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)

    def _parts(self, theta):
        t = np.tanh(theta[0] * self.x)
        s = 1.0 - t * t
        r = theta[1] * t - self.y
        return t, s, r

    def value_and_grad(self, theta):
        t, s, r = self._parts(theta)
        g = np.array([np.mean(2 * r * theta[1] * s * self.x), np.mean(2 * r * t)])
        return float(np.mean(r * r)), g

    def hessian(self, theta) -> np.ndarray:
        t, s, r = self._parts(theta)
        x, w = self.x, theta[1]
        h00 = np.mean(2 * (w * s * x) ** 2 - 4 * r * w * x * x * t * s)
        h01 = np.mean(2 * t * w * s * x + 2 * r * s * x)
        h11 = np.mean(2 * t * t)
        return np.array([[h00, h01], [h01, h11]])

    def hvp(self, theta, v):
        return self.hessian(theta) @ v


def inner_step(theta: np.ndarray, objective: Objective, alpha: float) -> np.ndarray:
    """One plain gradient step ``theta - alpha * grad``."""
    return theta - alpha * objective.grad(theta)


def adapt(theta: np.ndarray, objectives: Sequence[Objective], alpha: float) -> list[np.ndarray]:
    """Chain of parameters ``[theta_0, ..., theta_k]`` after each inner step."""
    chain = [theta]
    for obj in objectives:
        chain.append(inner_step(chain[-1], obj, alpha))
    return chain


def meta_gradient(theta: np.ndarray, inner_objectives: Sequence[Objective], outer_objective: Objective,
                  alpha: float, mode: str = "first_order"):
    """Gradient of ``outer(adapt(theta))`` w.r.t. ``theta``.

    Returns ``(outer_loss, meta_grad, adapted_theta)``.
    """
    if mode not in GRADIENT_MODES:
        raise ValueError(f"unknown gradient mode {mode!r}")
    chain = adapt(theta, inner_objectives, alpha)
    loss, v = outer_objective.value_and_grad(chain[-1])
    if not np.isfinite(loss):
        raise NonFiniteLossError("non-finite meta loss")
    if mode == "full_second_order" and alpha != 0.0:
        for obj, point in zip(reversed(inner_objectives), reversed(chain[:-1])):
            v = v - alpha * obj.hvp(point, v)
    return loss, v, chain[-1]


def maml_inner_adapt(theta: np.ndarray, rollout: Callable[[np.ndarray, int], Objective], alpha: float,
                     steps: int):
    """``steps`` gradient steps, each on a fresh rollout of the current parameters.

    ``rollout(params, k)`` collects data with ``params`` and returns the
    objective for inner step ``k``. Returns ``(adapted, objectives)``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    objectives = []
    for k in range(steps):
        obj = rollout(theta, k)
        objectives.append(obj)
        theta = inner_step(theta, obj, alpha)
    return theta, objectives


@dataclass
class TaskData:
    """Everything one task contributes to an outer update."""

    inner: list
    outer: Objective


def maml_outer_update(theta: np.ndarray, tasks: Sequence[TaskData], hyper: MamlHyper, adam: AdamState):
    """``outer_optimizer_steps`` Adam steps on the mean post-adaptation loss.

    Each step re-runs the inner adaptation from the current parameters on
    the stored inner rollouts. Returns ``(theta', mean outer losses per step)``.
    """
    if not tasks:
        raise ValueError("need at least one task")
    losses = []
    for _ in range(hyper.outer_optimizer_steps):
        total = np.zeros_like(theta)
        step_loss = 0.0
        for task in tasks:
            loss, g, _ = meta_gradient(theta, task.inner, task.outer, hyper.inner_lr, hyper.gradient_mode)
            total += g
            step_loss += loss
        total /= len(tasks)
        theta = adam_step(theta, clip_grad_norm(total, hyper.max_grad_norm), adam, hyper.outer_lr)
        losses.append(step_loss / len(tasks))
    return theta, losses


def fine_tune(theta: np.ndarray, rollout: Callable[[np.ndarray, int], Objective], alpha: float,
              episodes: int = 5, steps: Optional[int] = None) -> np.ndarray:
    """Inner-style adaptation on target rollouts; ``rollout(params, k)`` plays episode batch ``k``.

    The caller's ``rollout`` decides how many episodes each step plays;
    ``episodes`` must split evenly over ``steps`` (default: one step per
    episode). ``theta`` itself is never modified.
    """
    steps = episodes if steps is None else steps
    if steps < 1 or episodes % steps:
        raise ValueError(f"{episodes} episodes do not split evenly into {steps} steps")
    adapted, _ = maml_inner_adapt(theta.copy(), rollout, alpha, steps)
    return adapted
