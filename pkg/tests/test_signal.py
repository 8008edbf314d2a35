import numpy as np
import pytest

from tscgap.config import load_signal_plan
from tscgap.signal import (AMBER, GREEN, RED, TsluConfig, TsluState, plan_from_dict, signal_states, tslu_request,
                           tslu_tick)

from tslu_audit import conflicting_greens, green_runs, intergreen_violations, replay


@pytest.fixture(scope="module")
def plan():
    return load_signal_plan()


def test_plan_has_eight_conflict_free_phases(plan):
    assert plan.n_phases == 8
    for k in range(8):
        idx = np.flatnonzero(plan.phase_mask[k])
        assert not plan.conflicts[np.ix_(idx, idx)].any()


def test_conflict_matrix_symmetric_zero_diagonal(plan):
    assert np.array_equal(plan.conflicts, plan.conflicts.T)
    assert not plan.conflicts.diagonal().any()


def test_plan_rejects_conflicting_phase(plan):
    d = plan.to_dict()
    d["phases"][0] = ["N_TR", "E_TR"]
    with pytest.raises(ValueError):
        plan_from_dict(d)


def test_round_trip_through_dict(plan):
    again = plan_from_dict(plan.to_dict())
    assert np.array_equal(again.conflicts, plan.conflicts)
    assert np.array_equal(again.intergreen, plan.intergreen)
    assert again.phases == plan.phases


def test_request_current_phase_keeps_state(plan):
    s = TsluState(current_phase=2, elapsed_green=10.0)
    assert tslu_request(s, 2, plan) == s


def test_request_before_min_green_is_ignored(plan):
    s = TsluState(current_phase=0, elapsed_green=3.0)
    assert tslu_request(s, 1, plan) == s


def test_out_of_range_request_rejected(plan):
    with pytest.raises(ValueError):
        tslu_request(TsluState(), 8, plan)


def test_clearance_schedule_amber_then_red_then_green(plan):
    # phase 0 (N/S) -> phase 1 (E/W): vehicle-to-vehicle intergreen 5 s, amber 3 s
    assert plan.clearance[0, 1] == 5.0
    s = tslu_request(TsluState(current_phase=0, elapsed_green=20.0), 1, plan)
    losing = plan.phase_mask[0] & ~plan.phase_mask[1]
    gaining = plan.phase_mask[1] & ~plan.phase_mask[0]
    timeline = []
    for _ in range(7):
        timeline.append(signal_states(s, plan))
        s = tslu_tick(s, 1.0, plan)
    timeline = np.array(timeline)
    for t in range(3):
        assert np.all(timeline[t, losing] == AMBER)
    for t in (3, 4):
        assert np.all(timeline[t, losing] == RED)
    for t in range(5):
        assert np.all(timeline[t, gaining] == RED)
    assert np.all(timeline[5, gaining] == GREEN)
    assert np.flatnonzero(np.all(timeline[:, gaining] == GREEN, axis=1))[0] == 5


def test_tick_finishes_clearance_and_resets_elapsed(plan):
    s = TsluState(current_phase=0, elapsed_green=30.0, pending_target=1, clearance_total=5.0,
                  clearance_remaining=1.0)
    after = tslu_tick(s, 1.0, plan)
    assert after.current_phase == 1 and after.elapsed_green == 0.0 and not after.in_clearance


def test_steady_green_counts_up(plan):
    assert tslu_tick(TsluState(current_phase=3, elapsed_green=7.0), 1.0, plan).elapsed_green == 8.0


def test_forced_transition_at_max_green(plan):
    s = TsluState(current_phase=4, elapsed_green=plan.config.max_green - 1.0)
    s = tslu_tick(s, 1.0, plan)
    assert s.in_clearance and s.pending_target == plan.next_allowed(4) == 5
    # staying requests cannot extend it
    assert tslu_request(s, 4, plan) == s


def test_disallowed_transition_waits_then_moves_to_next_allowed(plan):
    import dataclasses
    cfg = TsluConfig(allowed_transitions=frozenset({(0, 2), (2, 0), (0, 3)}))
    p = dataclasses.replace(plan, config=cfg)
    s = TsluState(current_phase=0, elapsed_green=20.0)
    assert tslu_request(s, 5, p) == s
    s = TsluState(current_phase=0, elapsed_green=cfg.max_green)
    assert tslu_request(s, 5, p).pending_target == 2


def test_invalid_tslu_config():
    with pytest.raises(ValueError):
        TsluConfig(min_green=10.0, max_green=5.0)


def test_random_requests_are_safe(plan):
    rng = np.random.default_rng(0)
    sig, phase, clearing = replay(plan, rng.integers(0, 8, 20_000))
    assert conflicting_greens(plan, sig) == 0
    assert intergreen_violations(plan, sig) == 0
    runs = green_runs(phase, clearing)
    assert runs.min() >= plan.config.min_green
    assert runs.max() <= plan.config.max_green


def test_always_stay_hits_max_green(plan):
    sig, phase, clearing = replay(plan, np.zeros(400, dtype=int))
    runs = green_runs(phase, clearing)
    assert runs[0] == plan.config.max_green


def test_round_robin_liveness(plan):
    requests = np.repeat(np.arange(8), 10)
    requests = np.tile(requests, 3)
    _, phase, clearing = replay(plan, requests)
    served = set(phase[~clearing][: 8 * 10 + 60])
    assert served == set(range(8))
