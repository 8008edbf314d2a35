"""Rollouts, generalized advantage estimation and the clipped-surrogate update."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mlp import PolicyLayout, backward, forward, log_softmax
from .optim import AdamState, NonFiniteLossError, adam_step, clip_grad_norm


@dataclass(frozen=True)
class PpoHyper:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_epsilon: float = 0.2
    batch_size: int = 2048
    minibatch_size: int = 512
    learning_rate: float = 4e-5
    epochs_per_batch: int = 4
    value_coeff: float = 0.5
    entropy_coeff: float = 0.01
    max_grad_norm: Optional[float] = 0.5
    # rewards are multiplied by this before advantage estimation
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if not 0 < self.minibatch_size <= self.batch_size:
            raise ValueError("need 0 < minibatch_size <= batch_size")
        if self.learning_rate <= 0 or self.epochs_per_batch < 1:
            raise ValueError("learning_rate and epochs_per_batch must be positive")


@dataclass
class Trajectory:
    """Aligned per-step records; may span several episodes separated by ``dones``.

    ``last_value`` bootstraps the state after the final step when that step
    did not end an episode.
    """

    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float = 0.0

    def __post_init__(self):
        n = len(self.actions)
        for name in ("obs", "logp", "rewards", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        if not np.all(np.isfinite(self.logp)):
            raise ValueError("non-finite log-probabilities")

    def __len__(self) -> int:
        return len(self.actions)


class RolloutBuffer:
    def __init__(self):
        self.clear()

    def clear(self) -> None:
        self._rows: list = []

    def add(self, obs, action: int, logp: float, reward: float, value: float, done: bool) -> None:
        self._rows.append((obs, action, logp, reward, value, done))

    def rows(self) -> list:
        """Pending ``(obs, action, logp, reward, value, done)`` tuples, oldest first."""
        return list(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def finish(self, last_value: float = 0.0) -> Trajectory:
        obs, act, logp, rew, val, done = zip(*self._rows)
        self.clear()
        return Trajectory(np.array(obs, dtype=np.float64), np.array(act, dtype=np.int64),
                          np.array(logp), np.array(rew, dtype=np.float64), np.array(val),
                          np.array(done, dtype=bool), float(last_value))


def compute_gae(rewards, values, dones, last_value: float, gamma: float, lam: float):
    """Return ``(advantages, returns)`` with the standard backward recursion."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    next_value, running = last_value, 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)

    def subset(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.actions[idx], self.logp_old[idx], self.advantages[idx],
                     self.returns[idx])

    @classmethod
    def from_trajectory(cls, traj: Trajectory, gamma: float, lam: float, reward_scale: float = 1.0,
                        normalize: bool = True) -> "Batch":
        adv, ret = compute_gae(traj.rewards * reward_scale, traj.values, traj.dones, traj.last_value,
                               gamma, lam)
        if normalize and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        return cls(traj.obs, traj.actions, traj.logp, adv, ret)


def sample_action(theta, layout: PolicyLayout, obs, rng: np.random.Generator, greedy: bool = False):
    """Return ``(action, log-prob, value)`` for one observation."""
    logits, values, _ = forward(theta, layout, obs)
    lp = log_softmax(logits[0])
    if greedy:
        a = int(np.argmax(lp))
    else:
        a = int(np.searchsorted(np.cumsum(np.exp(lp)), rng.random(), side="right"))
        a = min(a, layout.n_actions - 1)
    return a, float(lp[a]), float(values[0])


def surrogate_loss(theta: np.ndarray, layout: PolicyLayout, batch: Batch, *,
                   clip_epsilon: Optional[float] = 0.2, value_coeff: float = 0.5,
                   entropy_coeff: float = 0.01, loss_scale: float = 1.0):
    """Policy-gradient loss and its exact gradient.

    With ``clip_epsilon=None`` the policy term is the importance-weighted
    vanilla objective ``-mean(ratio * A)``; otherwise the clipped surrogate.
    Returns ``(loss, grad, stats)``.
    """
    n = len(batch)
    logits, values, cache = forward(theta, layout, batch.obs)
    lp_all = log_softmax(logits)
    p = np.exp(lp_all)
    rows = np.arange(n)
    logp = lp_all[rows, batch.actions]
    ratio = np.exp(logp - batch.logp_old)
    A = batch.advantages
    if clip_epsilon is None:
        surr = ratio * A
        active = np.ones(n, dtype=bool)
    else:
        clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon) * A
        unclipped = ratio * A
        surr = np.minimum(unclipped, clipped)
        active = unclipped <= clipped
    entropy = -(p * lp_all).sum(axis=1)
    v_err = values - batch.returns
    loss = (-surr.mean() + value_coeff * np.mean(v_err ** 2) - entropy_coeff * entropy.mean()) * loss_scale
    if not np.isfinite(loss):
        raise NonFiniteLossError("non-finite policy loss")

    onehot = np.zeros_like(p)
    onehot[rows, batch.actions] = 1.0
    coef = np.where(active, ratio * A, 0.0)
    d_logits = -(coef[:, None] * (onehot - p)) / n
    d_logits += entropy_coeff * p * (lp_all + entropy[:, None]) / n
    d_values = 2.0 * value_coeff * v_err / n
    grad = backward(theta, layout, cache, d_logits * loss_scale, d_values * loss_scale)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("non-finite gradient")
    stats = {"loss": float(loss), "entropy": float(entropy.mean()), "value_loss": float(np.mean(v_err ** 2)),
             "approx_kl": float(np.mean(batch.logp_old - logp)), "clip_frac": float(np.mean(~active))}
    return float(loss), grad, stats


def ppo_update(theta: np.ndarray, layout: PolicyLayout, batch: Batch, hyper: PpoHyper, adam: AdamState,
               rng: np.random.Generator):
    """Several epochs of shuffled minibatch Adam steps on the clipped surrogate.

    A final short batch (end of a step budget) is accepted as is.
    Returns ``(theta', stats)``; ``adam`` is updated in place.
    """
    if len(batch) > hyper.batch_size:
        raise ValueError(f"batch of {len(batch)} exceeds batch_size {hyper.batch_size}")
    theta = theta.copy()
    history = []
    for _ in range(hyper.epochs_per_batch):
        order = rng.permutation(len(batch))
        for start in range(0, len(batch), hyper.minibatch_size):
            mb = batch.subset(order[start:start + hyper.minibatch_size])
            _, grad, stats = surrogate_loss(theta, layout, mb, clip_epsilon=hyper.clip_epsilon,
                                            value_coeff=hyper.value_coeff, entropy_coeff=hyper.entropy_coeff)
            theta = adam_step(theta, clip_grad_norm(grad, hyper.max_grad_norm), adam, hyper.learning_rate)
            history.append(stats)
    return theta, {k: float(np.mean([h[k] for h in history])) for k in history[0]}


def run_episodes(env, theta: np.ndarray, layout: PolicyLayout, seeds, rng: np.random.Generator, *,
                 greedy: bool = False, buffer: Optional[RolloutBuffer] = None):
    """Play one full episode per seed; returns ``(trajectory, returns, true_returns)``.

    ``returns`` sums the env reward (true or noisy, per reward mode);
    ``true_returns`` always sums the ground-truth reward.
    """
    buf = buffer if buffer is not None else RolloutBuffer()
    returns, true_returns = [], []
    for seed in seeds:
        obs = env.reset(int(seed))
        total = true_total = 0.0
        while True:
            a, lp, v = sample_action(theta, layout, obs, rng, greedy)
            res = env.step(a)
            buf.add(obs, a, lp, res.reward, v, res.done)
            total += res.reward
            true_total += res.info["true_reward"]
            obs = res.observation
            if res.done:
                break
        returns.append(total)
        true_returns.append(true_total)
    return buf.finish(0.0), returns, true_returns
