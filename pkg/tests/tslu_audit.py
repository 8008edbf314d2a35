"""Replay a TSLU under a request sequence and audit the resulting signal timeline."""
import numpy as np

from tscgap.signal import GREEN, TsluState, signal_states, tslu_request, tslu_tick


def replay(plan, requests, dt=1.0):
    """Per-step signal states, active phase and clearance flag for a request sequence."""
    n = len(requests)
    sig = np.empty((n, len(plan.groups)), dtype=np.int8)
    phase = np.empty(n, dtype=np.int64)
    clearing = np.empty(n, dtype=bool)
    state = TsluState()
    for t, a in enumerate(requests):
        state = tslu_request(state, int(a), plan)
        sig[t] = signal_states(state, plan)
        phase[t] = state.current_phase
        clearing[t] = state.in_clearance
        state = tslu_tick(state, dt, plan)
    return sig, phase, clearing


def conflicting_greens(plan, sig):
    g = (sig == GREEN).astype(np.int64)
    both = (g @ plan.conflicts.astype(np.int64)) * g
    return int(np.count_nonzero(both))


def intergreen_violations(plan, sig, dt=1.0):
    g = sig == GREEN
    prev = np.vstack([g[:1], g[:-1]])
    gains = [np.flatnonzero(g[:, k] & ~prev[:, k]) for k in range(g.shape[1])]
    losses = [np.flatnonzero(~g[:, k] & prev[:, k]) for k in range(g.shape[1])]
    bad = 0
    for i, j in zip(*np.nonzero(plan.conflicts)):
        if not len(gains[j]) or not len(losses[i]):
            continue
        k = np.searchsorted(losses[i], gains[j], side="right") - 1
        ok = k >= 0
        gap = (gains[j][ok] - losses[i][k[ok]]) * dt
        bad += int(np.count_nonzero(gap < plan.intergreen[i, j] - 1e-9))
    return bad


def green_runs(phase, clearing, dt=1.0):
    """Lengths of completed green intervals (the last, possibly cut-off one is dropped)."""
    key = np.where(clearing, -1, phase)
    edges = np.flatnonzero(np.diff(key)) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [len(key)]])
    runs = [(key[s], (e - s) * dt) for s, e in zip(starts, ends) if key[s] >= 0]
    return np.array([r for _, r in runs[:-1]])
