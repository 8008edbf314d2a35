"""Longitudinal vehicle dynamics.

Three car-following models are available: Krauss and IDM (source domain)
and a Wiedemann-74 style psycho-physical model (target domain). The model
functions accept scalars or numpy arrays. :class:`Traffic` keeps all
vehicles in a padded ``(lane, slot)`` layout, slot 0 being the front
vehicle of the lane, so a whole sub-step is a handful of array operations.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np
from numba import njit

from .randomize import DomainSample
from .signal import GREEN

WAITING_SPEED = 0.1  # m/s; below this a vehicle accumulates waiting time
COLLISION_TOL = 1e-9  # m; float round-off allowance on gap checks
PERMISSIVE_BASE_GAP = 4.0  # s
LEFT_MOVEMENT = "left"


class CollisionError(RuntimeError):
    """A gap became negative; the simulation state is invalid."""


@dataclass(frozen=True)
class Krauss:
    sigma: float
    name = "krauss"

    def __post_init__(self):
        # an array (one value per lane) is allowed for batched experiments
        if not np.all((np.asarray(self.sigma) >= 0) & (np.asarray(self.sigma) <= 1)):
            raise ValueError("sigma must lie in [0, 1]")


@dataclass(frozen=True)
class IDM:
    delta: float
    name = "idm"

    def __post_init__(self):
        if not np.all(np.asarray(self.delta) > 0):
            raise ValueError("delta must be > 0")


@dataclass(frozen=True)
class Wiedemann74:
    name = "wiedemann74"
    ax: float = 2.0
    bx_add: float = 2.0
    bx_mult: float = 3.0
    # following-regime speed oscillation and perception constants
    bnull: float = 0.2
    ex: float = 2.0
    cx: float = 40.0


CarFollowingSpec = Union[Krauss, IDM, Wiedemann74]


def car_following_for(domain: DomainSample) -> CarFollowingSpec:
    if domain.cf_model == "krauss":
        return Krauss(domain.sigma)
    if domain.cf_model == "idm":
        return IDM(domain.delta)
    raise ValueError(f"domain sample has no parameters for {domain.cf_model!r}")


def car_following_from_dict(d: Mapping) -> CarFollowingSpec:
    kind = d["model"]
    if kind == "krauss":
        return Krauss(float(d["sigma"]))
    if kind == "idm":
        return IDM(float(d["delta"]))
    if kind == "wiedemann74":
        return Wiedemann74(**{k: float(v) for k, v in d.items() if k != "model"})
    raise ValueError(f"unknown car-following model {kind!r}")


@dataclass(frozen=True)
class VehicleParams:
    accel: float
    decel: float
    length: float
    min_gap: float
    tau: float
    speed_factor: float
    jm_stopline_gap: float
    impatience: float = 0.0
    vehicle_class: str = "car"

    def __post_init__(self):
        for name in ("accel", "decel", "length", "min_gap", "tau", "jm_stopline_gap", "speed_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not -1 <= self.impatience <= 1:
            raise ValueError("impatience must lie in [-1, 1]")


# (length factor, accel factor) relative to class "car"
CLASS_SCALING = {
    "car": (1.0, 1.0),
    "truck": (2.4, 0.5),
    "bus": (2.5, 0.5),
    "truck_trailer": (3.6, 0.5),
    "motorcycle": (0.45, 1.0),
}


def vehicle_params_for(domain: DomainSample, vehicle_class: str, rng: np.random.Generator,
                       min_gap: Optional[float] = None) -> VehicleParams:
    """Per-vehicle parameters: episode-level values scaled by class, own speed factor."""
    length_f, accel_f = CLASS_SCALING[vehicle_class]
    sf = domain.speed_factor_dist()
    speed_factor = float(np.clip(rng.normal(sf.mean, sf.std), sf.low, sf.high))
    return VehicleParams(
        accel=domain.accel * accel_f,
        decel=domain.decel,
        length=domain.length * length_f,
        min_gap=domain.min_gap if min_gap is None else min_gap,
        tau=domain.tau,
        speed_factor=speed_factor,
        jm_stopline_gap=domain.jm_stopline_gap,
        impatience=domain.impatience,
        vehicle_class=vehicle_class,
    )


# -- car-following models ------------------------------------------------------

def krauss_safe_speed(leader_speed, gap, decel, tau):
    """Largest speed from which the follower can still stop behind a braking leader."""
    bt = decel * tau
    return -bt + np.sqrt(bt * bt + np.square(leader_speed) + 2.0 * decel * gap)


def krauss_target_speed(speed, accel, decel, tau, max_speed, sigma, dt, u,
                        leader_speed=None, gap=None):
    """Next-step Krauss speed.

    ``u`` is the uniform [0, 1] dawdling draw(s). ``gap`` is the distance to
    the leader's rear minus the follower's minimum gap.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if gap is None:
        v_safe = np.inf
    else:
        if np.any(np.asarray(gap) < 0):
            raise CollisionError("negative gap passed to krauss_target_speed")
        v_safe = krauss_safe_speed(leader_speed, gap, decel, tau)
    v = np.minimum(np.minimum(v_safe, speed + accel * dt), max_speed)
    return np.maximum(0.0, v - sigma * accel * dt * u)


def idm_accel(speed, desired_speed, accel, decel, tau, min_gap, delta,
              leader_speed=None, gap=None):
    """IDM acceleration. ``gap`` is the bumper-to-bumper distance to the leader."""
    free = 1.0 - np.power(speed / desired_speed, delta)
    if gap is None:
        return accel * free
    if np.any(np.asarray(gap) <= 0):
        raise CollisionError("nonpositive gap passed to idm_accel")
    return accel * (free - idm_interaction(speed, accel, decel, tau, min_gap, leader_speed, gap))


def idm_interaction(speed, accel, decel, tau, min_gap, leader_speed, gap):
    """IDM braking term ``(s*/s)^2`` (dimensionless, before scaling by ``accel``)."""
    dv = speed - leader_speed
    s_star = min_gap + np.maximum(0.0, speed * tau + speed * dv / (2.0 * np.sqrt(accel * decel)))
    return np.square(s_star / gap)


def wiedemann74_accel(speed, desired_speed, accel, decel, spec: Wiedemann74, z,
                      leader_speed=None, gap=None):
    """Psycho-physical regime model.

    ``gap`` is the bumper-to-bumper distance; ``z`` the driver's fixed
    calibration draw in [0, 1]. Regimes, in priority order: emergency
    braking, approaching, following, free driving.
    """
    speed = np.asarray(speed, dtype=float)
    free = accel * (1.0 - speed / desired_speed)
    if gap is None:
        return free
    gap = np.asarray(gap, dtype=float)
    if np.any(gap <= 0):
        raise CollisionError("nonpositive gap passed to wiedemann74_accel")
    bx_coef = spec.bx_add + spec.bx_mult * np.asarray(z)
    abx = spec.ax + bx_coef * np.sqrt(speed)
    # perception limit of the following regime; floored so standing queues stay put
    sdx = spec.ax + spec.ex * bx_coef * np.sqrt(np.maximum(speed, 1.0))
    dv = speed - leader_speed
    sdv = np.square((gap - spec.ax) / spec.cx)
    room = np.maximum(gap - spec.ax, 1e-6)
    b_need = np.maximum(np.square(speed) - np.square(leader_speed), 0.0) / (2.0 * room)
    emergency = (b_need > decel) | ((gap < abx) & (dv >= 0)) | (gap <= spec.ax)
    approaching = dv > sdv
    following = (gap <= sdx) & (dv >= -sdv)
    a_emergency = -np.maximum(b_need, spec.bnull)
    a_emergency = np.where(gap <= spec.ax, -np.inf, a_emergency)
    # close the speed difference by the time the gap reaches the leader's ABX
    abx_lead = spec.ax + bx_coef * np.sqrt(np.maximum(leader_speed, 0.0))
    a_approach = -np.minimum(np.square(dv) / (2.0 * np.maximum(gap - abx_lead, 1e-6)), decel)
    a_follow = np.minimum(-spec.bnull * np.sign(dv), free)
    a_free = np.where(gap < abx, np.minimum(free, spec.bnull), free)
    return np.select([emergency, approaching, following], [a_emergency, a_approach, a_follow], a_free)


# -- traffic state -------------------------------------------------------------

_FLOAT_FIELDS = ("pos", "speed", "wait", "accel", "decel", "length", "min_gap", "tau", "vmax",
                 "jm_gap", "z", "cross_time", "spawn_time")
_OTHER_FIELDS = (("vid", np.int64), ("crossed", bool), ("committed", bool))
_FILL = {"length": 1.0, "decel": 1.0, "accel": 1.0, "min_gap": 1.0, "tau": 1.0, "vmax": 1.0,
         "jm_gap": 1.0, "pos": -1e6}


class Traffic:
    """All vehicles of one intersection, one row per lane, front vehicle first.

    Arrivals that cannot enter (entry blocked) wait in ``pending[lane]``.
    """

    def __init__(self, n_lanes: int, capacity: int = 64):
        self.n_lanes = n_lanes
        self.capacity = capacity
        for name in _FLOAT_FIELDS:
            setattr(self, name, np.full((n_lanes, capacity), _FILL.get(name, 0.0)))
        for name, dtype in _OTHER_FIELDS:
            setattr(self, name, np.zeros((n_lanes, capacity), dtype=dtype))
        self.count = np.zeros(n_lanes, dtype=np.int64)
        self.pending: list[deque] = [deque() for _ in range(n_lanes)]
        self.entered = 0
        self.exited = 0
        self.next_id = 0
        self.guard_interventions = 0
        # proposals that would have overlapped the leader without the guard
        self.model_overlaps = 0
        self.max_overshoot = -np.inf
        self._cols = np.arange(capacity)

    @property
    def active(self) -> np.ndarray:
        return self._cols[None, :] < self.count[:, None]

    @property
    def n_present(self) -> int:
        return int(self.count.sum())

    @property
    def n_pending(self) -> int:
        return sum(len(q) for q in self.pending)

    def lane_vehicles(self, lane: int) -> dict:
        n = self.count[lane]
        return {name: getattr(self, name)[lane, :n].copy() for name in _FLOAT_FIELDS + ("vid", "crossed", "committed")}

    def snapshot(self) -> dict:
        act = self.active
        out = {name: getattr(self, name)[act] for name in _FLOAT_FIELDS + ("vid", "crossed", "committed")}
        out["lane"] = np.nonzero(act)[0]
        return out

    def spec_gaps(self) -> np.ndarray:
        """Gaps (leader rear minus follower front minus follower min_gap) of all follower pairs."""
        act = self.active
        has_lead = act.copy()
        has_lead[:, 0] = False
        gap = np.full(self.pos.shape, np.inf)
        gap[:, 1:] = self.pos[:, :-1] - self.length[:, :-1] - self.pos[:, 1:] - self.min_gap[:, 1:]
        return gap[has_lead]

    def add_pending(self, lane: int, params: VehicleParams, z: float, t: float) -> None:
        self.pending[lane].append((params, z, t))

    def place(self, lane: int, params: VehicleParams, pos: float, speed: float, z: float = 0.5,
              t: float = 0.0, max_speed: Optional[float] = None) -> int:
        """Put a vehicle directly on a lane behind the current last vehicle (tests, scenarios)."""
        k = int(self.count[lane])
        if k >= self.capacity:
            raise RuntimeError(f"lane {lane} is full")
        if k and pos > self.pos[lane, k - 1]:
            raise ValueError("vehicles must be placed front to back")
        vid = self.next_id
        self.next_id += 1
        vals = dict(pos=pos, speed=speed, wait=0.0, accel=params.accel, decel=params.decel,
                    length=params.length, min_gap=params.min_gap, tau=params.tau,
                    vmax=speed if max_speed is None else max_speed, jm_gap=params.jm_stopline_gap,
                    z=z, cross_time=0.0, spawn_time=t)
        for name, v in vals.items():
            getattr(self, name)[lane, k] = v
        self.vid[lane, k] = vid
        self.crossed[lane, k] = False
        self.committed[lane, k] = False
        self.count[lane] = k + 1
        self.entered += 1
        return vid

    def try_insert(self, speed_limit: np.ndarray, t: float) -> int:
        """Insert the head of every pending queue whose lane entry is free."""
        inserted = 0
        for lane in range(self.n_lanes):
            q = self.pending[lane]
            if not q:
                continue
            params, z, t_arr = q[0]
            k = int(self.count[lane])
            vmax = speed_limit[lane] * params.speed_factor
            if k:
                if k >= self.capacity:
                    continue
                gap = self.pos[lane, k - 1] - self.length[lane, k - 1] - params.min_gap
                if gap < 0:
                    continue
                speed = min(vmax, float(krauss_safe_speed(self.speed[lane, k - 1], gap,
                                                          params.decel, params.tau)))
            else:
                speed = vmax
            q.popleft()
            self.place(lane, params, 0.0, speed, z=z, t=t_arr, max_speed=vmax)
            inserted += 1
        return inserted

    def pop_fronts(self, k: np.ndarray) -> np.ndarray:
        """Remove the first ``k[lane]`` vehicles of every lane; returns their ids in lane order."""
        k = np.asarray(k, dtype=np.int64)
        lanes = np.flatnonzero(k > 0)
        if lanes.size == 0:
            return np.zeros(0, dtype=np.int64)
        kk = k[lanes]
        ids = self.vid[lanes][self._cols[None, :] < kk[:, None]]
        idx = np.minimum(self._cols[None, :] + kk[:, None], self.capacity - 1)
        tail = self._cols[None, :] >= (self.count[lanes] - kk)[:, None]
        for name in _FLOAT_FIELDS + ("vid", "crossed", "committed"):
            arr = getattr(self, name)
            arr[lanes] = np.where(tail, _FILL.get(name, 0), np.take_along_axis(arr[lanes], idx, axis=1))
        self.count[lanes] -= kk
        self.exited += int(kk.sum())
        return ids


def _permissive_blocked(network, traffic: Traffic, signals: np.ndarray, yields: Mapping[int, tuple],
                        impatience: float, t: float) -> np.ndarray:
    """Per lane: True when a permissive left must wait for opposing traffic."""
    blocked = np.zeros(network.n_lanes, dtype=bool)
    accepted = PERMISSIVE_BASE_GAP * (1.0 - 0.5 * max(0.0, impatience))
    for g, others in yields.items():
        if g >= network.n_lanes or signals[g] != GREEN:
            continue
        for m in others:
            if signals[m] == 0:  # opposing stream red: nothing to yield to
                continue
            n = traffic.count[m]
            if not n:
                continue
            pos = traffic.pos[m, :n]
            crossed = traffic.crossed[m, :n]
            dist = network.stop_pos[m] - pos
            eta = dist / np.maximum(traffic.speed[m, :n], 1.0)
            in_conflict = crossed & (t - traffic.cross_time[m, :n] < 1.5)
            if np.any((~crossed & (eta < accepted)) | in_conflict):
                blocked[g] = True
                break
    return blocked


def advance_vehicles(network, traffic: Traffic, signals: np.ndarray, cf: CarFollowingSpec, dt: float,
                     rng: np.random.Generator, *, t: float = 0.0, substeps: int = 5,
                     yields: Mapping[int, tuple] = None, impatience: float = 0.0,
                     clearance_time: float = 2.0, speed_limit: Optional[np.ndarray] = None) -> list:
    """Advance all vehicles by ``dt`` in ``substeps`` equal sub-steps.

    ``signals`` holds RED/AMBER/GREEN per signal group; group ``l`` is lane
    ``l``. A vehicle stops at ``stop line - jm_stopline_gap`` on a non-green
    signal unless it can no longer stop with its normal deceleration. Returns
    the ids of vehicles that left the network.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    h = dt / substeps
    lane_sig = np.asarray(signals[: network.n_lanes])
    limit = network.speed_limit if speed_limit is None else speed_limit
    exited = []
    for k in range(substeps):
        ts = t + k * h
        traffic.try_insert(limit, ts)
        if not traffic.count.any():
            continue
        blocked = _permissive_blocked(network, traffic, signals, yields or {}, impatience, ts)
        substep(network, traffic, lane_sig, blocked, cf, h, rng, ts)
        exited.extend(_exit(traffic, ts + h, clearance_time))
    return exited


_KRAUSS, _IDM, _W74 = 0, 1, 2


@njit(cache=True)
def _w74_scalar(v, vmax, accel, decel, z, lv, gap, w):
    ax, bx_add, bx_mult, bnull, ex, cx = w[0], w[1], w[2], w[3], w[4], w[5]
    free = accel * (1.0 - v / vmax)
    bx = bx_add + bx_mult * z
    abx = ax + bx * np.sqrt(v)
    sdx = ax + ex * bx * np.sqrt(max(v, 1.0))
    dv = v - lv
    sdv = ((gap - ax) / cx) ** 2
    room = max(gap - ax, 1e-6)
    b_need = max(v * v - lv * lv, 0.0) / (2.0 * room)
    if b_need > decel or (gap < abx and dv >= 0) or gap <= ax:
        if gap <= ax:
            return -np.inf
        return -max(b_need, bnull)
    if dv > sdv:
        abx_lead = ax + bx * np.sqrt(max(lv, 0.0))
        return -min(dv * dv / (2.0 * max(gap - abx_lead, 1e-6)), decel)
    if gap <= sdx and dv >= -sdv:
        return min(-bnull * np.sign(dv), free)
    if gap < abx:
        return min(free, bnull)
    return free


@njit(cache=True)
def _idm_interaction_scalar(v, accel, decel, tau, min_gap, lv, gap):
    s_star = min_gap + max(0.0, v * tau + v * (v - lv) / (2.0 * np.sqrt(accel * decel)))
    return (s_star / gap) ** 2


@njit(cache=True)
def _substep_kernel(count, pos, speed, length, min_gap, accel, decel, tau, vmax, jm_gap, z, wait, crossed,
                    committed, cross_time, stop_pos, stop_lane, model, lane_param, w74, u, h, t):
    """Advance every lane in place. Returns (negative_gap, guard, overlaps, max_overshoot).

    Mirrors the array formulation: car-following proposal, stop-line cap,
    then a running minimum that keeps each vehicle behind its leader's new rear.
    """
    n_lanes = count.shape[0]
    for lane in range(n_lanes):
        for j in range(1, count[lane]):
            gap = pos[lane, j - 1] - length[lane, j - 1] - pos[lane, j] - min_gap[lane, j]
            if gap < -COLLISION_TOL:
                return True, 0, 0, 0.0
    guard = 0
    overlaps = 0
    overshoot = -np.inf
    m = u.shape[1]
    x_new = np.empty(m)
    raw = np.empty(m)
    v_new = np.empty(m)
    for lane in range(n_lanes):
        n = count[lane]
        if n == 0:
            continue
        obstacle_base = stop_pos[lane]
        for j in range(n):
            v = speed[lane, j]
            obstacle = obstacle_base - jm_gap[lane, j]
            dist = max(obstacle - pos[lane, j], 0.0)
            if not stop_lane[lane]:
                committed[lane, j] = v * v > 2.0 * decel[lane, j] * dist
            must_stop = (not crossed[lane, j]) and stop_lane[lane] and not committed[lane, j]
            lead = j > 0
            if lead:
                lv = speed[lane, j - 1]
                net = pos[lane, j - 1] - length[lane, j - 1] - pos[lane, j]
            else:
                lv = 0.0
                net = np.inf
            a_v = accel[lane, j]
            d_v = decel[lane, j]
            if model == _KRAUSS:
                bt = d_v * tau[lane, j]
                vs = np.inf
                if lead:
                    g = max(net - min_gap[lane, j], 0.0)
                    vs = -bt + np.sqrt(bt * bt + lv * lv + 2.0 * d_v * g)
                if must_stop:
                    vs = min(vs, -bt + np.sqrt(bt * bt + 2.0 * d_v * dist))
                vn = min(min(vs, v + a_v * h), vmax[lane, j])
                vn = max(0.0, vn - lane_param[lane] * a_v * h * u[lane, j])
            else:
                if model == _IDM:
                    free = 1.0 - (v / vmax[lane, j]) ** lane_param[lane]
                    a = a_v * free
                    if lead:
                        a = min(a, a_v * (free - _idm_interaction_scalar(v, a_v, d_v, tau[lane, j], min_gap[lane, j],
                                                                         lv, max(net, 1e-6))))
                    if must_stop:
                        a = min(a, a_v * (free - _idm_interaction_scalar(v, a_v, d_v, tau[lane, j], min_gap[lane, j],
                                                                         0.0, max(dist + min_gap[lane, j], 1e-6))))
                else:
                    a = a_v * (1.0 - v / vmax[lane, j])
                    if lead:
                        a = min(a, _w74_scalar(v, vmax[lane, j], a_v, d_v, z[lane, j], lv, max(net, 1e-6), w74))
                    if must_stop:
                        a = min(a, _w74_scalar(v, vmax[lane, j], a_v, d_v, z[lane, j], 0.0,
                                               max(dist + min_gap[lane, j], 1e-6), w74))
                if np.isnan(a):
                    a = 0.0
                elif a == -np.inf:
                    a = -1e9
                vn = max(0.0, v + a * h)
                if model == _W74 and v <= vmax[lane, j]:
                    # the linear free-road term overshoots the desired speed when it is tiny
                    vn = min(vn, vmax[lane, j])
            v_new[j] = vn
            # hard kinematic guard: never pass the stop position or the leader's new rear
            xp = pos[lane, j] + vn * h
            raw[j] = xp
            if must_stop:
                xp = min(xp, max(obstacle, pos[lane, j]))
            x_new[j] = xp
        cum = 0.0
        run = np.inf
        for j in range(n):
            if j > 0:
                cum += length[lane, j - 1] + min_gap[lane, j]
            run = min(run, x_new[j] + cum)
            x_new[j] = max(run - cum, pos[lane, j])
        for j in range(n):
            if x_new[j] < raw[j] - 1e-9:
                guard += 1
            if j > 0:
                lead_rear = x_new[j - 1] - length[lane, j - 1]
                if raw[j] > lead_rear + COLLISION_TOL:
                    overlaps += 1
                overshoot = max(overshoot, raw[j] - lead_rear)
            vf = (x_new[j] - pos[lane, j]) / h
            pos[lane, j] = x_new[j]
            speed[lane, j] = vf
            wait[lane, j] = wait[lane, j] + h if vf < WAITING_SPEED else 0.0
            if not crossed[lane, j] and x_new[j] > stop_pos[lane]:
                crossed[lane, j] = True
                cross_time[lane, j] = t + h
    return False, guard, overlaps, overshoot


def _lane_values(value, n_lanes: int) -> np.ndarray:
    return np.ascontiguousarray(np.broadcast_to(np.asarray(value, dtype=float).reshape(-1), (n_lanes,)))


def substep(network, tr: Traffic, lane_sig, blocked, cf, h, rng, t):
    """One integration sub-step of all lanes; ``lane_sig`` is the per-lane signal.

    Krauss draws its dawdling numbers as one ``(lanes, occupied slots)``
    block per sub-step.
    """
    m = int(tr.count.max()) if tr.count.size else 0
    if m == 0:
        return
    n = tr.n_lanes
    stop_lane = np.asarray((lane_sig != GREEN) | blocked, dtype=np.bool_)
    w74 = np.zeros(6)
    if isinstance(cf, Krauss):
        model, lane_param = _KRAUSS, _lane_values(cf.sigma, n)
        u = rng.random((n, m))
    elif isinstance(cf, IDM):
        model, lane_param = _IDM, _lane_values(cf.delta, n)
        u = np.zeros((n, m))
    elif isinstance(cf, Wiedemann74):
        model, lane_param = _W74, np.zeros(n)
        w74[:] = (cf.ax, cf.bx_add, cf.bx_mult, cf.bnull, cf.ex, cf.cx)
        u = np.zeros((n, m))
    else:
        raise TypeError(f"unknown car-following spec {cf!r}")
    bad, guard, overlaps, overshoot = _substep_kernel(
        tr.count, tr.pos, tr.speed, tr.length, tr.min_gap, tr.accel, tr.decel, tr.tau, tr.vmax, tr.jm_gap, tr.z,
        tr.wait, tr.crossed, tr.committed, tr.cross_time, np.asarray(network.stop_pos, dtype=float), stop_lane,
        model, lane_param, w74, u, float(h), float(t))
    if bad:
        raise CollisionError("negative gap before sub-step")
    tr.guard_interventions += guard
    tr.model_overlaps += overlaps
    tr.max_overshoot = max(tr.max_overshoot, overshoot)


def _exit(tr: Traffic, t: float, clearance_time: float) -> list:
    done = tr.active & tr.crossed & (t - tr.cross_time >= clearance_time - 1e-9)
    if not done.any():
        return []
    # vehicles cross in order, so the finished ones form a prefix of each lane
    k = np.where(done.all(axis=1), tr.capacity, np.argmin(done, axis=1))
    return tr.pop_fronts(np.where(done.any(axis=1), k, 0)).tolist()
