import numpy as np
import pytest

from tscgap.learner.mlp import PolicyLayout, forward, init_params, log_softmax
from tscgap.learner.optim import AdamState, NonFiniteLossError
from tscgap.learner.ppo import (Batch, PpoHyper, RolloutBuffer, Trajectory, compute_gae, ppo_update,
                                sample_action, surrogate_loss)

from gradcheck import worst_relative_error

SMALL = PolicyLayout(obs_dim=6, hidden=(8, 8), n_actions=4)


def brute_force_gae(r, v, done, last, gamma, lam):
    n = len(r)
    values = list(v) + [last]
    adv = np.zeros(n)
    for t in range(n):
        total, coef = 0.0, 1.0
        for k in range(t, n):
            live = 0.0 if done[k] else 1.0
            delta = r[k] + gamma * values[k + 1] * live - values[k]
            total += coef * delta
            if done[k]:
                break
            coef *= gamma * lam
        adv[t] = total
    return adv


def test_gae_single_step():
    adv, ret = compute_gae([1.5], [0.3], [False], 2.0, 0.99, 0.7)
    assert adv[0] == pytest.approx(1.5 + 0.99 * 2.0 - 0.3)
    assert ret[0] == pytest.approx(adv[0] + 0.3)


def test_gae_zero_inputs():
    adv, _ = compute_gae(np.zeros(7), np.zeros(7), np.zeros(7, bool), 0.0, 0.99, 0.95)
    assert not adv.any()


@pytest.mark.parametrize("dones", [[False] * 5, [False, True, False, False, False], [False, False, False, False, True]])
def test_gae_matches_brute_force(rng, dones):
    r, v = rng.normal(size=5), rng.normal(size=5)
    adv, _ = compute_gae(r, v, np.array(dones), 0.37, 0.99, 0.95)
    assert np.max(np.abs(adv - brute_force_gae(r, v, dones, 0.37, 0.99, 0.95))) <= 1e-12


def random_batch(rng, layout, n=64, theta=None):
    obs = rng.normal(size=(n, layout.obs_dim))
    actions = rng.integers(0, layout.n_actions, n)
    if theta is None:
        logp_old = np.log(rng.uniform(0.1, 0.5, n))
    else:
        logits, _, _ = forward(theta, layout, obs)
        # behaviour policy close to the current one so some ratios clip and some do not
        logp_old = log_softmax(logits)[np.arange(n), actions] + rng.normal(0, 0.15, n)
    return Batch(obs, actions, logp_old, rng.normal(size=n), rng.normal(size=n))


@pytest.mark.parametrize("clip", [0.2, None])
def test_surrogate_gradient_matches_finite_differences(rng, clip):
    theta = init_params(SMALL, rng) + rng.normal(0, 0.1, SMALL.size)
    batch = random_batch(rng, SMALL, theta=theta)
    kw = dict(clip_epsilon=clip, value_coeff=0.5, entropy_coeff=0.01)
    _, grad, _ = surrogate_loss(theta, SMALL, batch, **kw)
    err, k = worst_relative_error(lambda t: surrogate_loss(t, SMALL, batch, **kw)[0], grad, theta, rng)
    assert k == 10 and err <= 1e-4


def test_zero_signal_gives_zero_policy_head_gradient(rng):
    theta = init_params(SMALL, rng)
    obs = rng.normal(size=(16, 6))
    _, values, _ = forward(theta, SMALL, obs)
    batch = Batch(obs, rng.integers(0, 4, 16), np.log(np.full(16, 0.25)), np.zeros(16), values)
    _, grad, _ = surrogate_loss(theta, SMALL, batch, entropy_coeff=0.0)
    p = SMALL.unpack(grad)
    assert not p["Wp"].any() and not p["bp"].any()


def test_loss_scale_scales_gradient(rng):
    theta = init_params(SMALL, rng)
    batch = random_batch(rng, SMALL)
    l1, g1, _ = surrogate_loss(theta, SMALL, batch)
    l3, g3, _ = surrogate_loss(theta, SMALL, batch, loss_scale=3.0)
    assert l3 == pytest.approx(3 * l1) and np.allclose(g3, 3 * g1, rtol=1e-12)


def test_saturated_clip_has_no_surrogate_gradient(rng):
    theta = init_params(SMALL, rng)
    obs = rng.normal(size=(1, 6))
    logits, values, _ = forward(theta, SMALL, obs)
    a = np.array([1])
    logp = log_softmax(logits)[0, 1]
    eps = 0.2
    # choose logp_old so that ratio = 1 + 2 eps
    batch = Batch(obs, a, np.array([logp - np.log(1 + 2 * eps)]), np.array([1.0]), values.copy())
    _, grad, stats = surrogate_loss(theta, SMALL, batch, clip_epsilon=eps, entropy_coeff=0.0)
    assert stats["clip_frac"] == 1.0
    assert not np.any(grad)


def test_ppo_update_without_signal_keeps_parameters(rng):
    theta = init_params(SMALL, rng)
    obs = rng.normal(size=(32, 6))
    _, values, _ = forward(theta, SMALL, obs)
    batch = Batch(obs, rng.integers(0, 4, 32), np.full(32, np.log(0.25)), np.zeros(32), values)
    hyper = PpoHyper(batch_size=32, minibatch_size=8, entropy_coeff=0.0)
    out, _ = ppo_update(theta, SMALL, batch, hyper, AdamState.zeros_like(theta), np.random.default_rng(0))
    assert np.array_equal(out, theta)


def test_ppo_update_is_deterministic(rng):
    theta = init_params(SMALL, rng)
    batch = random_batch(rng, SMALL, n=32)
    hyper = PpoHyper(batch_size=32, minibatch_size=8)

    def run():
        t, adam, r = theta.copy(), AdamState.zeros_like(theta), np.random.default_rng(4)
        for _ in range(3):
            t, _ = ppo_update(t, SMALL, batch, hyper, adam, r)
        return t

    assert run().tobytes() == run().tobytes()


def test_ppo_update_rejects_oversized_batch(rng):
    theta = init_params(SMALL, rng)
    with pytest.raises(ValueError):
        ppo_update(theta, SMALL, random_batch(rng, SMALL, n=40), PpoHyper(batch_size=32, minibatch_size=8),
                   AdamState.zeros_like(theta), rng)


def test_nonfinite_loss_raises(rng):
    theta = init_params(SMALL, rng)
    batch = random_batch(rng, SMALL)
    batch.advantages[0] = np.inf
    with pytest.raises(NonFiniteLossError):
        surrogate_loss(theta, SMALL, batch)


def test_hyper_validation():
    with pytest.raises(ValueError):
        PpoHyper(gamma=1.0)
    with pytest.raises(ValueError):
        PpoHyper(clip_epsilon=0.0)
    h = PpoHyper()
    assert (h.batch_size, h.minibatch_size, h.learning_rate) == (2048, 512, 4e-5)


def test_sampled_log_prob_matches_recomputation(rng):
    theta = init_params(SMALL, rng) + rng.normal(0, 0.5, SMALL.size)
    for _ in range(50):
        obs = rng.normal(size=6)
        a, lp, v = sample_action(theta, SMALL, obs, rng)
        logits, values, _ = forward(theta, SMALL, obs)
        assert lp == pytest.approx(log_softmax(logits)[0, a], abs=1e-12)
        assert v == values[0]


def test_trajectory_rejects_misaligned_records():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 2)), np.zeros(3, int), np.zeros(2), np.zeros(3), np.zeros(3), np.zeros(3, bool))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 2)), np.zeros(1, int), np.array([np.nan]), np.zeros(1), np.zeros(1),
                   np.zeros(1, bool))


def test_rollout_buffer_round_trip():
    buf = RolloutBuffer()
    for k in range(4):
        buf.add(np.full(2, k), k % 2, -0.5, float(k), 0.1, k == 3)
    traj = buf.finish(0.0)
    assert len(traj) == 4 and len(buf) == 0
    assert traj.dones.tolist() == [False, False, False, True]
