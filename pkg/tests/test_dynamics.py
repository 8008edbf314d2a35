import copy
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tscgap.dynamics import (COLLISION_TOL, WAITING_SPEED, CollisionError, IDM, Krauss, Traffic, Wiedemann74,
                             advance_vehicles, idm_accel, krauss_safe_speed, krauss_target_speed,
                             substep, vehicle_params_for, wiedemann74_accel)
from tscgap.network import build_network
from tscgap.randomize import mean_domain
from tscgap.scenarios import _grid_network, collision_stress, discharge_headways
from tscgap.signal import GREEN, RED

from reference_substep import reference_substep


# -- Krauss --------------------------------------------------------------------------------

def test_krauss_safe_speed_closed_form():
    b, tau, vl, gap = 4.7, 1.13, 5.0, 20.0
    bt = b * tau
    expected = -bt + math.sqrt(bt * bt + vl * vl + 2 * b * gap)
    assert krauss_safe_speed(vl, gap, b, tau) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(-5.311 + math.sqrt(5.311 ** 2 + 25 + 188), abs=1e-12)


def test_krauss_stopped_leader_zero_gap_gives_zero():
    for v in (0.0, 5.0, 13.0):
        assert krauss_target_speed(v, 2.5, 4.7, 1.13, 13.89, 0.0, 1.0, 0.0, leader_speed=0.0, gap=0.0) == 0.0


def test_krauss_free_acceleration_bound():
    assert krauss_target_speed(10.0, 2.5, 4.7, 1.13, 13.89, 0.0, 1.0, 0.5) == pytest.approx(12.5)


def test_krauss_dawdling_is_bounded_by_sigma():
    v = krauss_target_speed(10.0, 2.5, 4.7, 1.13, 13.89, 0.5, 1.0, 1.0)
    assert v == pytest.approx(12.5 - 0.5 * 2.5)


def test_krauss_negative_gap_aborts():
    with pytest.raises(CollisionError):
        krauss_target_speed(5.0, 2.5, 4.7, 1.13, 13.89, 0.0, 1.0, 0.0, leader_speed=0.0, gap=-0.1)


def test_krauss_sigma_zero_is_deterministic():
    args = (7.0, 2.5, 4.7, 1.13, 13.89, 0.0, 1.0)
    a = krauss_target_speed(*args, np.random.default_rng(1).random(), leader_speed=3.0, gap=8.0)
    b = krauss_target_speed(*args, np.random.default_rng(2).random(), leader_speed=3.0, gap=8.0)
    assert a == b


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0, 20), vl=st.floats(0, 20), g1=st.floats(0, 100), g2=st.floats(0, 100),
       sigma=st.floats(0, 1), u=st.floats(0, 1))
def test_krauss_monotone_in_gap(v, vl, g1, g2, sigma, u):
    lo, hi = sorted((g1, g2))
    a = krauss_target_speed(v, 2.5, 4.7, 1.13, 13.89, sigma, 1.0, u, leader_speed=vl, gap=lo)
    b = krauss_target_speed(v, 2.5, 4.7, 1.13, 13.89, sigma, 1.0, u, leader_speed=vl, gap=hi)
    assert a <= b + 1e-12


# -- IDM -----------------------------------------------------------------------------------

def test_idm_standstill_free_road():
    assert idm_accel(0.0, 13.89, 2.5, 4.7, 1.13, 2.9, 4.0) == pytest.approx(2.5)


def test_idm_at_desired_speed():
    assert idm_accel(13.89, 13.89, 2.5, 4.7, 1.13, 2.9, 4.0) == pytest.approx(0.0, abs=1e-15)


def test_idm_closed_form():
    v, v0, vl, s, delta, a, b, s0, tau = 10.0, 13.89, 10.0, 30.0, 3.97, 2.5, 4.7, 2.9, 1.13
    s_star = s0 + max(0.0, v * tau + v * (v - vl) / (2 * math.sqrt(a * b)))
    assert s_star == pytest.approx(14.2)
    expected = a * (1 - (v / v0) ** delta - (s_star / s) ** 2)
    assert idm_accel(v, v0, a, b, tau, s0, delta, vl, s) == pytest.approx(expected, rel=1e-13)


def test_idm_nonpositive_gap_aborts():
    with pytest.raises(CollisionError):
        idm_accel(5.0, 13.89, 2.5, 4.7, 1.13, 2.9, 4.0, 0.0, 0.0)


# -- Wiedemann-74 --------------------------------------------------------------------------

W74 = Wiedemann74()


def test_wiedemann_free_driving_accelerates():
    assert wiedemann74_accel(5.0, 13.89, 2.5, 4.7, W74, 0.5) > 0


def test_wiedemann_close_equal_speed_does_not_accelerate():
    v = 10.0
    d = W74.ax + (W74.bx_add + W74.bx_mult * 0.5) * math.sqrt(v)
    assert wiedemann74_accel(v, 13.89, 2.5, 4.7, W74, 0.5, v, 0.8 * d) <= 0


def test_wiedemann_standing_leader_brakes_hard_enough():
    v, gap = 10.0, 10.0
    a = wiedemann74_accel(v, 13.89, 2.5, 4.7, W74, 0.5, 0.0, gap)
    # the standstill distance of this model is ax
    assert -a >= v * v / (2 * (gap - W74.ax)) - 1e-12


def test_wiedemann_standing_leader_stops_before_contact():
    net = _grid_network(4)
    tr = Traffic(net.n_lanes)
    params = dataclasses.replace(vehicle_params_for(mean_domain(), "car", np.random.default_rng(0)), min_gap=1.5)
    tr.place(0, params, 100.0, 0.0, max_speed=1e-12)
    front_gap = 10.0
    tr.place(0, params, 100.0 - params.length - front_gap, 10.0, max_speed=13.89)
    sig = np.full(net.n_lanes, GREEN, dtype=np.int8)
    for step in range(30):
        advance_vehicles(net, tr, sig, W74, 1.0, np.random.default_rng(step), t=float(step))
        assert tr.pos[0, 0] - tr.length[0, 0] - tr.pos[0, 1] > 0
    assert tr.speed[0, 1] == 0.0
    assert tr.model_overlaps == 0


def test_wiedemann_nonpositive_gap_aborts():
    with pytest.raises(CollisionError):
        wiedemann74_accel(5.0, 13.89, 2.5, 4.7, W74, 0.5, 0.0, 0.0)


# -- lane updates --------------------------------------------------------------------------

def _one_lane(cf_model="krauss"):
    net = _grid_network(4)
    return net, Traffic(net.n_lanes), mean_domain(cf_model=cf_model)


def test_empty_lane_is_noop():
    net, tr, _ = _one_lane()
    before = {k: v.copy() for k, v in vars(tr).items() if isinstance(v, np.ndarray)}
    out = advance_vehicles(net, tr, np.full(net.n_lanes, GREEN, np.int8), Krauss(0.0), 1.0,
                           np.random.default_rng(0))
    assert out == []
    for k, v in before.items():
        assert np.array_equal(getattr(tr, k), v)


def test_single_vehicle_free_flow_reaches_max_speed_and_exits():
    net, tr, d = _one_lane()
    params = vehicle_params_for(d, "car", np.random.default_rng(0))
    vmax = net.speed_limit[0] * params.speed_factor
    vid = tr.place(0, params, 0.0, 0.0, max_speed=vmax)
    sig = np.full(net.n_lanes, GREEN, np.int8)
    peak, exited = 0.0, []
    for step in range(60):
        exited += advance_vehicles(net, tr, sig, Krauss(0.0), 1.0, np.random.default_rng(step), t=float(step))
        if tr.count[0]:
            peak = max(peak, tr.speed[0, 0])
    assert peak == pytest.approx(vmax)
    assert exited == [vid]
    assert tr.entered == tr.exited + tr.n_present


def test_red_light_holds_vehicle_behind_stop_position():
    net, tr, d = _one_lane()
    params = vehicle_params_for(d, "car", np.random.default_rng(0))
    tr.place(0, params, 0.0, 10.0, max_speed=13.89)
    sig = np.full(net.n_lanes, RED, np.int8)
    for step in range(60):
        advance_vehicles(net, tr, sig, Krauss(0.0), 1.0, np.random.default_rng(step), t=float(step))
    assert tr.pos[0, 0] <= net.stop_pos[0] - params.jm_stopline_gap + 1e-9
    assert tr.speed[0, 0] == 0.0
    assert tr.wait[0, 0] > 0


def test_waiting_time_resets_when_moving():
    net, tr, d = _one_lane()
    params = vehicle_params_for(d, "car", np.random.default_rng(0))
    tr.place(0, params, 50.0, 0.0, max_speed=13.89)
    sig = np.full(net.n_lanes, RED, np.int8)
    advance_vehicles(net, tr, sig, Krauss(0.0), 1.0, np.random.default_rng(0))
    sig[0] = GREEN
    advance_vehicles(net, tr, sig, Krauss(0.0), 1.0, np.random.default_rng(0))
    assert tr.speed[0, 0] >= WAITING_SPEED and tr.wait[0, 0] == 0.0


def _reference_discharge(d, limit, stop_pos, n, h=0.2):
    """Independent scalar re-run of a deterministic Krauss queue leaving a green stop line."""
    b, tau, a, L, g0 = d.decel, d.tau, d.accel, d.length, d.min_gap
    vmax = limit * d.speed_factor_mean
    front = stop_pos - d.jm_stopline_gap
    x = [front - k * (L + g0) for k in range(n)]
    v = [0.0] * n
    crossed = [None] * n
    t = 0.0
    while any(c is None for c in crossed):
        new_v = []
        for i in range(n):
            cap = min(v[i] + a * h, vmax)
            if i > 0:
                gap = max(x[i - 1] - L - x[i] - g0, 0.0)
                cap = min(cap, -b * tau + math.sqrt((b * tau) ** 2 + v[i - 1] ** 2 + 2 * b * gap))
            new_v.append(max(cap, 0.0))
        new_x = []
        for i in range(n):
            xi = x[i] + new_v[i] * h
            if i > 0:
                xi = min(xi, new_x[i - 1] - L - g0)
            new_x.append(max(xi, x[i]))
        v = [(nx - ox) / h for nx, ox in zip(new_x, x)]
        x = new_x
        t += h
        for i in range(n):
            if crossed[i] is None and x[i] > stop_pos:
                crossed[i] = t
    return np.diff(crossed)


def test_discharge_headways_match_scalar_reference():
    d = dataclasses.replace(mean_domain(), sigma=0.0)
    net = _grid_network(4)
    got = discharge_headways(Krauss(0.0), d, 5)
    want = _reference_discharge(d, net.speed_limit[0], net.stop_pos[0], 5)
    assert len(got) == 4
    assert np.allclose(got, want, atol=1e-9)
    # saturation headway: at least the reaction time, plus a short start-up lag
    assert d.tau <= got.mean() <= d.tau + 2.0


@pytest.mark.parametrize("model", ["krauss", "idm", "wiedemann74"])
def test_short_collision_stress(model):
    r = collision_stress(model, n_draws=40, steps=200, seed=3)
    assert r.negative_gaps == 0
    assert r.min_spec_gap >= -COLLISION_TOL
    assert r.model_overlaps == 0
    assert r.vehicles_exited > 0


def test_conservation_in_environment_lanes(source):
    net = build_network(source.network)
    tr = Traffic(net.n_lanes)
    d = mean_domain()
    rng = np.random.default_rng(0)
    sig = np.zeros(net.n_lanes, np.int8)
    for step in range(300):
        for lane in range(net.n_lanes):
            if rng.random() < 0.2:
                tr.add_pending(lane, vehicle_params_for(d, "car", rng), 0.5, float(step))
        sig[:] = GREEN if (step // 30) % 2 else RED
        advance_vehicles(net, tr, sig, Krauss(d.sigma), 1.0, rng, t=float(step))
        assert tr.entered == tr.exited + tr.n_present


def _random_state(rng, n_lanes=24):
    net = _grid_network(n_lanes)
    tr = Traffic(net.n_lanes, capacity=16)
    domain = mean_domain()
    for lane in range(net.n_lanes):
        rear = net.stop_pos[lane] + rng.uniform(-30, 20)
        for _ in range(rng.integers(0, 12)):
            p = dataclasses.replace(vehicle_params_for(domain, "car", rng), length=rng.uniform(2, 12),
                                    min_gap=rng.uniform(1.5, 4), accel=rng.uniform(1, 3.5))
            front = rear - p.min_gap - rng.exponential(4.0)
            vmax = rng.uniform(8, 18)
            tr.place(lane, p, front, rng.uniform(0, vmax), z=rng.uniform(), max_speed=vmax)
            tr.crossed[lane, tr.count[lane] - 1] = front > net.stop_pos[lane]
            tr.committed[lane, tr.count[lane] - 1] = rng.random() < 0.2
            rear = front - p.length
    signals = rng.choice([RED, GREEN], size=net.n_lanes).astype(np.int8)
    return net, tr, signals, rng.random(net.n_lanes) < 0.2


@pytest.mark.parametrize("cf", [Krauss(0.5), IDM(4.0), Wiedemann74()], ids=lambda c: c.name)
def test_compiled_substep_matches_array_reference(cf):
    fields = ("pos", "speed", "wait", "crossed", "committed", "cross_time")
    for seed in range(40):
        rng = np.random.default_rng(seed)
        net, tr, signals, blocked = _random_state(rng)
        twin = copy.deepcopy(tr)
        substep(net, tr, signals, blocked, cf, 0.2, np.random.default_rng(seed), 3.0)
        reference_substep(net, twin, signals, blocked, cf, 0.2, np.random.default_rng(seed), 3.0)
        act = tr.active
        for name in fields:
            got, want = getattr(tr, name)[act], getattr(twin, name)[act]
            assert np.allclose(got, want, rtol=0, atol=1e-9), (seed, name)
        assert tr.model_overlaps == twin.model_overlaps
