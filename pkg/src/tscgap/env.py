"""Traffic signal control MDP: one intersection, one agent, 1 s decisions."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import (CarFollowingSpec, Traffic, advance_vehicles, car_following_for,
                       vehicle_params_for)
from .network import DemandProfile, InvalidConfigError, NetworkConfig, ArrivalSampler, build_network
from .randomize import DomainSample
from .sensing import DetectorLayout, NoiseParams, Observation, Pedestrians, apply_noise, measure_true
from .signal import GREEN, SignalPlan, TsluState, signal_states, tslu_request, tslu_tick

TIME_NORM = 120.0  # s
OBS_CLIP = 2.0
VEHICLE_SPACING = 7.5  # m of lane per queued car, for zone capacity


class InvariantError(RuntimeError):
    """A simulation invariant (e.g. vehicle conservation) was violated."""


@dataclass(frozen=True)
class RewardCoefficients:
    alpha_q: float = 0.5
    alpha_w_veh: float = 0.05
    alpha_w_ped: float = 0.2

    def __post_init__(self):
        vals = (self.alpha_q, self.alpha_w_veh, self.alpha_w_ped)
        if min(vals) < 0 or not any(vals):
            raise ValueError("reward coefficients must be >= 0 and not all zero")


def compute_reward(obs: Observation, coeffs: RewardCoefficients) -> float:
    """Negative weighted sum of queues, vehicle waiting and pedestrian waiting."""
    return -(coeffs.alpha_w_ped * float(np.sum(obs.wait_ped))
             + float(np.sum(coeffs.alpha_q * obs.queue + coeffs.alpha_w_veh * obs.wait_veh)))


@dataclass(frozen=True)
class EnvConfig:
    network: NetworkConfig
    demand: DemandProfile
    domain: DomainSample
    plan: SignalPlan
    episode_length: float = 3600.0
    decision_dt: float = 1.0
    substeps: int = 5
    start_time_randomization: bool = False
    reward: RewardCoefficients = RewardCoefficients()
    reward_mode: str = "true_sensor"
    detector_length: float = 50.0
    # overrides the model named by ``domain`` (the target domain uses this)
    car_following: Optional[CarFollowingSpec] = None
    observe_phase: bool = True
    clearance_time: float = 2.0

    def validate(self) -> None:
        if not self.episode_length > 0:
            raise InvalidConfigError("episode_length", "must be > 0")
        if not self.decision_dt > 0:
            raise InvalidConfigError("decision_dt", "must be > 0")
        if self.substeps < 1:
            raise InvalidConfigError("substeps", "must be >= 1")
        if self.reward_mode not in ("true_sensor", "noisy_sensor"):
            raise InvalidConfigError("reward_mode", f"unknown mode {self.reward_mode!r}")
        if self.start_time_randomization and self.demand.span < self.episode_length:
            raise InvalidConfigError("start_time_randomization",
                                     "demand profile is shorter than one episode")
        self.network.validate()

    def replace(self, **kw) -> "EnvConfig":
        return dataclasses.replace(self, **kw)

    @property
    def cf(self) -> CarFollowingSpec:
        return self.car_following if self.car_following is not None else car_following_for(self.domain)

    @property
    def steps_per_episode(self) -> int:
        return int(round(self.episode_length / self.decision_dt))


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


TRACE_METRICS = ("queue", "wave", "wait_veh", "wait_ped", "reward")


class TscEnv:
    """Gym-style environment; ``reset(seed)`` then ``step(phase)`` until done.

    Each reset derives independent streams for demand, vehicle parameters,
    sensor noise and the start-time draw from ``seed``.
    """

    def __init__(self, config: EnvConfig, record: bool = False):
        config.validate()
        self.config = config
        self.network = build_network(config.network)
        self.plan = config.plan
        if len(self.plan.groups) != self.network.n_lanes + self.network.n_crosswalks:
            raise InvalidConfigError("plan.groups", "need one group per lane plus one per crosswalk")
        self.layout = DetectorLayout.uniform(self.network, config.detector_length)
        self.layout.validate(self.network)
        self.sampler = ArrivalSampler(self.network, config.demand)
        self.noise = NoiseParams.from_domain(config.domain)
        self.cf = config.cf
        self.n_phases = self.plan.n_phases
        self.zone_capacity = np.array([b - a for a, b in self.layout.zones]) / VEHICLE_SPACING
        self.record = record
        self.obs_dim = 3 * self.network.n_lanes + self.network.n_crosswalks
        if config.observe_phase:
            self.obs_dim += self.n_phases + 1
        self.done = True

    # -- API ---------------------------------------------------------------
    def reset(self, seed: int) -> np.ndarray:
        cfg = self.config
        ss = np.random.SeedSequence(seed)
        demand_ss, vehicle_ss, noise_ss, start_ss, dyn_ss = ss.spawn(5)
        self.rng_demand = np.random.default_rng(demand_ss)
        self.rng_vehicle = np.random.default_rng(vehicle_ss)
        self.rng_noise = np.random.default_rng(noise_ss)
        self.rng_dynamics = np.random.default_rng(dyn_ss)
        if cfg.start_time_randomization:
            self.start_time = float(np.random.default_rng(start_ss).uniform(
                0.0, cfg.demand.span - cfg.episode_length))
        else:
            self.start_time = 0.0
        self.t = 0.0
        self.steps = 0
        self.traffic = Traffic(self.network.n_lanes)
        self.pedestrians = Pedestrians(self.network.n_crosswalks)
        self.tslu = TsluState()
        self.signals = signal_states(self.tslu, self.plan)
        self.true_obs = measure_true(self.network, self.traffic, self.pedestrians, self.layout,
                                     self.noise.speed_threshold)
        self.noisy_obs = self.true_obs
        self.trace = []
        self.done = False
        return self._vector(self.noisy_obs)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        cfg = self.config
        dt = cfg.decision_dt
        requested = tslu_request(self.tslu, int(action), self.plan)
        self.signals = signal_states(requested, self.plan)
        self.tslu = tslu_tick(requested, dt, self.plan)

        vehicles, peds = self.sampler.sample(cfg.domain.scale, self.start_time + self.t, dt, self.rng_demand)
        for arr in vehicles:
            params = vehicle_params_for(cfg.domain, arr.vehicle_class, self.rng_vehicle)
            z = float(np.clip(self.rng_vehicle.normal(0.5, 0.15), 0.0, 1.0))
            self.traffic.add_pending(arr.lane, params, z, self.t)
        for p in peds:
            self.pedestrians.press(p.crosswalk, self.t)
        n_l = self.network.n_lanes
        self.pedestrians.serve(self.signals[n_l:] == GREEN)

        advance_vehicles(self.network, self.traffic, self.signals, self.cf, dt, self.rng_dynamics,
                         t=self.t, substeps=cfg.substeps, yields=self.plan.yields,
                         impatience=cfg.domain.impatience, clearance_time=cfg.clearance_time)
        tr = self.traffic
        if tr.entered != tr.exited + tr.n_present:
            raise InvariantError("vehicle conservation violated")

        self.t += dt
        self.steps += 1
        self.pedestrians.t = self.t
        self.true_obs = measure_true(self.network, tr, self.pedestrians, self.layout,
                                     self.noise.speed_threshold)
        self.noisy_obs = apply_noise(self.true_obs, self.noise, self.rng_noise)
        true_reward = compute_reward(self.true_obs, cfg.reward)
        if cfg.reward_mode == "true_sensor":
            reward = true_reward
        else:
            reward = compute_reward(self.noisy_obs, cfg.reward)
        self.done = self.steps >= cfg.steps_per_episode
        if self.record:
            self.trace.append(self._trace_row(int(action), true_reward))
        info = {
            "true_observation": self.true_obs,
            "noisy_observation": self.noisy_obs,
            "true_reward": true_reward,
            "current_phase": self.tslu.current_phase,
            "elapsed_green": self.tslu.elapsed_green,
            "queue": self.true_obs.queue,
            "wait_veh": self.true_obs.wait_veh,
            "wait_ped": self.true_obs.wait_ped,
        }
        return StepResult(self._vector(self.noisy_obs), reward, self.done, info)

    # -- helpers -----------------------------------------------------------
    def _vector(self, obs: Observation) -> np.ndarray:
        cap = self.zone_capacity
        parts = [obs.wave / cap, obs.queue / cap, obs.wait_veh / TIME_NORM, obs.wait_ped / TIME_NORM]
        vec = np.clip(np.concatenate(parts), 0.0, OBS_CLIP)
        if self.config.observe_phase:
            onehot = np.zeros(self.n_phases)
            onehot[self.tslu.current_phase] = 1.0
            vec = np.concatenate([vec, onehot, [self.tslu.elapsed_green / self.plan.config.max_green]])
        return vec

    def _trace_row(self, action: int, reward: float) -> tuple:
        o = self.true_obs
        return ((self.t, self.tslu.current_phase, action, reward)
                + tuple(o.queue) + tuple(o.wave) + tuple(o.wait_veh) + tuple(o.wait_ped))

    def trace_columns(self) -> list[str]:
        n_l, n_c = self.network.n_lanes, self.network.n_crosswalks
        return (["t", "phase", "action", "reward"]
                + [f"queue_{i}" for i in range(n_l)] + [f"wave_{i}" for i in range(n_l)]
                + [f"wait_veh_{i}" for i in range(n_l)] + [f"wait_ped_{c}" for c in range(n_c)])

    def trace_array(self) -> np.ndarray:
        return np.array(self.trace, dtype=float).reshape(len(self.trace), len(self.trace_columns()))


def write_trace_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(x)) for x in row])


def read_trace_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        columns = next(r)
        data = np.array([[float(x) for x in row] for row in r], dtype=float)
    return columns, data.reshape(-1, len(columns))
