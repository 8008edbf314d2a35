"""Scripted traffic scenarios: queue discharge and a batched collision stress run."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (CLASS_SCALING, COLLISION_TOL, IDM, Krauss, Traffic, Wiedemann74, krauss_safe_speed,
                       substep, vehicle_params_for)
from .config import load_source
from .network import Approach, Crosswalk, Lane, NetworkConfig, build_network
from .randomize import RANDOMIZED_PARAMS, UniformDiscrete, sample_domain
from .signal import AMBER, GREEN, RED

_MODELS = ("krauss", "idm", "wiedemann74")


def _grid_network(n_lanes: int, length: float = 150.0, offset: float = 3.0, limit: float = 13.89):
    per = -(-n_lanes // 4)
    lanes = tuple(Lane(length, offset, ("through",)) for _ in range(per))
    ids = ("N", "E", "S", "W")
    cfg = NetworkConfig(tuple(Approach(a, lanes, limit) for a in ids),
                        tuple(Crosswalk(f"cw_{a}", a) for a in ids))
    return build_network(cfg)


def discharge_headways(cf, domain, n_vehicles: int = 5, *, dt: float = 1.0, substeps: int = 5,
                       horizon: float = 60.0, seed: int = 0) -> np.ndarray:
    """Stop-line crossing headways of a standing queue released at t = 0.

    Vehicles share ``domain``'s parameters with speed factor fixed at its
    mean; the queue stands at minimum spacing behind the stop position.
    """
    net = _grid_network(4)
    tr = Traffic(net.n_lanes)
    rng = np.random.default_rng(seed)
    params = vehicle_params_for(domain, "car", rng)
    vmax = float(net.speed_limit[0] * domain.speed_factor_mean)
    front = net.stop_pos[0] - params.jm_stopline_gap
    for k in range(n_vehicles):
        tr.place(0, params, front - k * (params.length + params.min_gap), 0.0, z=0.5, max_speed=vmax)
    signals = np.full(net.n_lanes, RED, dtype=np.int8)
    signals[0] = GREEN
    blocked = np.zeros(net.n_lanes, dtype=bool)
    h = dt / substeps
    crossing = {}
    t = 0.0
    while t < horizon and len(crossing) < n_vehicles:
        substep(net, tr, signals, blocked, cf, h, rng, t)
        t += h
        n = tr.count[0]
        for vid, c, ct in zip(tr.vid[0, :n], tr.crossed[0, :n], tr.cross_time[0, :n]):
            if c and int(vid) not in crossing:
                crossing[int(vid)] = float(ct)
    times = np.array([crossing[k] for k in sorted(crossing)])
    return np.diff(times)


@dataclass
class StressResult:
    model: str
    lanes: int
    steps: int
    vehicles_entered: int
    vehicles_exited: int
    negative_gaps: int
    min_spec_gap: float
    model_overlaps: int
    guard_interventions: int


def _lane_domains(model: str, n: int, rng: np.random.Generator):
    table = dict(RANDOMIZED_PARAMS)
    if model in ("krauss", "idm"):
        table["cf_model"] = UniformDiscrete((model,))
    return [sample_domain(rng, table) for _ in range(n)]


def collision_stress(model: str, n_draws: int = 1000, steps: int = 10_000, *, seed: int = 0,
                     arrival_rate: float = 0.5, dt: float = 1.0, substeps: int = 5,
                     clearance_time: float = 2.0, capacity: int = 40) -> StressResult:
    """Run ``n_draws`` independent lanes, one randomized parameter draw each, in lock-step.

    Each lane sees saturating Poisson arrivals and its own fixed-time
    red/amber/green cycle. After every sub-step all inter-vehicle gaps
    (leader rear minus follower front minus follower min_gap) are checked.
    """
    if model not in _MODELS:
        raise ValueError(f"model must be one of {_MODELS}")
    rng = np.random.default_rng(seed)
    domains = _lane_domains(model, n_draws, rng)
    net = _grid_network(n_draws)
    L = net.n_lanes

    def col(name):
        # padding lanes beyond n_draws repeat the last draw
        return np.array([getattr(d, name) for d in domains] + [getattr(domains[-1], name)] * (L - n_draws))

    if model == "krauss":
        cf = Krauss(col("sigma")[:, None])
    elif model == "idm":
        cf = IDM(col("delta")[:, None])
    else:
        cf = Wiedemann74()
    accel, decel, length, min_gap, tau, jm = (col(n) for n in ("accel", "decel", "length", "min_gap", "tau",
                                                                  "jm_stopline_gap"))
    sf_mean = col("speed_factor_mean")
    sf_std = np.sqrt(col("speed_factor_var"))
    sf_lo, sf_hi = RANDOMIZED_PARAMS["speed_factor"].bounds
    class_mix = load_source().demand.class_mix
    mix = np.array(list(class_mix.values()))
    len_f = np.array([CLASS_SCALING[c][0] for c in class_mix])
    acc_f = np.array([CLASS_SCALING[c][1] for c in class_mix])

    green = rng.uniform(10, 40, L)
    red = rng.uniform(10, 40, L)
    cycle = green + 3.0 + red
    offset = rng.uniform(0, cycle)

    tr = Traffic(L, capacity)
    waiting = np.zeros(L, dtype=np.int64)
    blocked = np.zeros(L, dtype=bool)
    rows = np.arange(L)
    h = dt / substeps
    negative = 0
    min_gap_seen = np.inf

    for step in range(steps):
        t = step * dt
        waiting += rng.poisson(arrival_rate * dt, L)
        ph = (t + offset) % cycle
        sig = np.where(ph < green, GREEN, np.where(ph < green + 3.0, AMBER, RED)).astype(np.int8)
        for k in range(substeps):
            ts = t + k * h
            # at most one entry per lane and sub-step, only when the entry is clear
            n = tr.count
            cls = rng.choice(len(mix), size=L, p=mix)
            v_len = length * len_f[cls]
            last = np.maximum(n - 1, 0)
            gap_in = np.where(n > 0, tr.pos[rows, last] - tr.length[rows, last] - min_gap, np.inf)
            ok = (waiting > 0) & (n < capacity) & (gap_in >= 0)
            if ok.any():
                lanes = rows[ok]
                slot = n[ok]
                sf = np.clip(rng.normal(sf_mean[ok], sf_std[ok]), sf_lo, sf_hi)
                vmax = net.speed_limit[ok] * sf
                lead_v = tr.speed[lanes, np.maximum(slot - 1, 0)]
                with np.errstate(invalid="ignore"):
                    v0 = np.where(slot > 0,
                                  np.minimum(vmax, krauss_safe_speed(lead_v, np.where(slot > 0, gap_in[ok], 0.0),
                                                                     decel[ok], tau[ok])),
                                  vmax)
                vals = dict(pos=0.0, speed=v0, wait=0.0, accel=accel[ok] * acc_f[cls[ok]], decel=decel[ok],
                            length=v_len[ok], min_gap=min_gap[ok], tau=tau[ok], vmax=vmax, jm_gap=jm[ok],
                            z=np.clip(rng.normal(0.5, 0.15, ok.sum()), 0, 1), cross_time=0.0, spawn_time=ts)
                for name, v in vals.items():
                    getattr(tr, name)[lanes, slot] = v
                tr.crossed[lanes, slot] = False
                tr.committed[lanes, slot] = False
                tr.vid[lanes, slot] = tr.next_id + np.arange(ok.sum())
                tr.next_id += int(ok.sum())
                tr.count[ok] += 1
                tr.entered += int(ok.sum())
                waiting[ok] -= 1
            substep(net, tr, sig, blocked, cf, h, rng, ts)
            done = tr.active & tr.crossed & (ts + h - tr.cross_time >= clearance_time - 1e-9)
            k_out = np.where(done.all(axis=1), capacity, np.argmin(done, axis=1))
            tr.pop_fronts(np.where(done.any(axis=1), k_out, 0))
            gaps = tr.spec_gaps()
            if gaps.size:
                negative += int(np.count_nonzero(gaps < -COLLISION_TOL))
                min_gap_seen = min(min_gap_seen, float(gaps.min()))
    return StressResult(model, L, steps, tr.entered, tr.exited, negative, min_gap_seen, tr.model_overlaps,
                        tr.guard_interventions)
