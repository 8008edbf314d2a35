import numpy as np
import pytest

from tscgap.learner.mlp import (PolicyLayout, ShapeError, backward, forward, init_params, log_softmax,
                                policy_forward, softmax)
from tscgap.learner.optim import AdamState, NonFiniteLossError, adam_step, clip_grad_norm

LAYOUT = PolicyLayout(obs_dim=37)


def test_parameter_count():
    n = 37 * 128 + 128 + 128 * 128 + 128 + 128 * 8 + 8 + 128 + 1
    assert LAYOUT.size == n


def test_zero_weights_give_uniform_logits_and_zero_value():
    logits, value = policy_forward(np.zeros(LAYOUT.size), LAYOUT, np.random.default_rng(0).random(37))
    assert np.all(logits == 0) and value == 0


def test_forward_is_pure(rng):
    theta = init_params(LAYOUT, rng)
    x = rng.random(37)
    a, b = policy_forward(theta, LAYOUT, x), policy_forward(theta, LAYOUT, x)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def _reference_forward(theta, layout, x):
    """Plain-loop matrix arithmetic, written without the packed layout helpers."""
    h1n, h2n = layout.hidden
    k = 0

    def take(r, c=None):
        nonlocal k
        n = r * (c or 1)
        block = theta[k:k + n]
        k += n
        return block.reshape(r, c) if c else block

    W1, b1 = take(layout.obs_dim, h1n), take(h1n)
    W2, b2 = take(h1n, h2n), take(h2n)
    Wp, bp = take(h2n, layout.n_actions), take(layout.n_actions)
    Wv, bv = take(h2n, 1), take(1)
    h1 = [np.tanh(sum(x[i] * W1[i, j] for i in range(layout.obs_dim)) + b1[j]) for j in range(h1n)]
    h2 = [np.tanh(sum(h1[i] * W2[i, j] for i in range(h1n)) + b2[j]) for j in range(h2n)]
    logits = [sum(h2[i] * Wp[i, a] for i in range(h2n)) + bp[a] for a in range(layout.n_actions)]
    value = sum(h2[i] * Wv[i, 0] for i in range(h2n)) + bv[0]
    return np.array(logits), value


def test_forward_matches_reference(rng):
    layout = PolicyLayout(obs_dim=7, hidden=(6, 5), n_actions=4)
    theta = rng.normal(0, 0.7, layout.size)
    x = rng.normal(size=7)
    logits, value = policy_forward(theta, layout, x)
    ref_logits, ref_value = _reference_forward(theta, layout, x)
    assert np.max(np.abs(logits - ref_logits)) <= 1e-12
    assert abs(value - ref_value) <= 1e-12


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        policy_forward(np.zeros(LAYOUT.size), LAYOUT, np.zeros(36))
    with pytest.raises(ShapeError):
        forward(np.zeros(LAYOUT.size - 1), LAYOUT, np.zeros(37))


def test_softmax_normalized(rng):
    logits = rng.normal(0, 30, (100, 8))
    assert np.allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-9)
    assert np.all(np.isfinite(log_softmax(logits)))


def test_backward_is_linear_in_output_gradients(rng):
    layout = PolicyLayout(obs_dim=5, hidden=(4, 4), n_actions=3)
    theta = rng.normal(size=layout.size)
    _, _, cache = forward(theta, layout, rng.normal(size=(6, 5)))
    dl, dv = rng.normal(size=(6, 3)), rng.normal(size=6)
    g = backward(theta, layout, cache, dl, dv)
    assert np.allclose(backward(theta, layout, cache, 3 * dl, 3 * dv), 3 * g, rtol=1e-13)


def test_adam_zero_gradient_is_a_fixed_point(rng):
    theta = rng.normal(size=10)
    state = AdamState.zeros_like(theta)
    out = theta
    for _ in range(5):
        out = adam_step(out, np.zeros(10), state, 1e-3)
    assert np.array_equal(out, theta)


def test_adam_first_step_moves_by_lr(rng):
    theta = np.zeros(3)
    out = adam_step(theta, np.array([2.0, -0.5, 1e-3]), AdamState.zeros_like(theta), 0.1)
    assert np.allclose(out, [-0.1, 0.1, -0.1], rtol=1e-4)


def test_adam_rejects_nan():
    with pytest.raises(NonFiniteLossError):
        adam_step(np.zeros(2), np.array([np.nan, 0.0]), AdamState.zeros_like(np.zeros(2)), 0.1)


def test_clip_grad_norm():
    g = np.array([3.0, 4.0])
    assert np.allclose(clip_grad_norm(g, 1.0), [0.6, 0.8])
    assert clip_grad_norm(g, None) is g
    assert clip_grad_norm(g, 10.0) is g
