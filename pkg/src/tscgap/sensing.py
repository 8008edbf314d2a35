"""Camera-style lane detectors and their noise model."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

WAIT_REDUCTIONS = np.array([2.0, 6.0, 10.0])  # s


@dataclass(frozen=True)
class NoiseParams:
    eta_queue: float = 0.0
    eta_queue_pos: float = 0.0
    eta_wave: float = 0.0
    eta_wait_veh: float = 0.0
    speed_threshold: float = 5 / 3.6

    def __post_init__(self):
        for name in ("eta_queue", "eta_queue_pos", "eta_wave", "eta_wait_veh"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")
        if not self.speed_threshold > 0:
            raise ValueError("speed_threshold must be > 0")

    @property
    def silent(self) -> bool:
        return not (self.eta_queue or self.eta_queue_pos or self.eta_wave or self.eta_wait_veh)

    @classmethod
    def from_domain(cls, domain) -> "NoiseParams":
        return cls(**domain.noise())


@dataclass(frozen=True)
class DetectorLayout:
    """Detection zone per lane, as [start, end] metres upstream of the stop line."""

    zones: tuple[tuple[float, float], ...]

    @classmethod
    def uniform(cls, network, length: float = 50.0) -> "DetectorLayout":
        return cls(tuple((0.0, min(length, float(sp))) for sp in network.stop_pos))

    def validate(self, network) -> None:
        if len(self.zones) != network.n_lanes:
            raise ValueError("need one detection zone per lane")
        for (a, b), sp in zip(self.zones, network.stop_pos):
            if not 0 <= a < b <= sp + 1e-9:
                raise ValueError(f"zone {(a, b)} outside lane bounds")

    def bounds(self, network) -> tuple[np.ndarray, np.ndarray]:
        """Zone as absolute lane positions ``(lo, hi)``."""
        z = np.asarray(self.zones)
        return network.stop_pos - z[:, 1], network.stop_pos - z[:, 0]


@dataclass(frozen=True)
class Observation:
    """Per-lane wave/queue/wait_veh and per-crosswalk wait_ped.

    ``vehicle_lane``/``vehicle_wait``/``vehicle_queued`` describe the
    individual vehicles currently inside detection zones; the noise model
    works on them.
    """

    wave: np.ndarray
    queue: np.ndarray
    wait_veh: np.ndarray
    wait_ped: np.ndarray
    vehicle_lane: np.ndarray = field(repr=False)
    vehicle_wait: np.ndarray = field(repr=False)
    vehicle_queued: np.ndarray = field(repr=False)

    @property
    def n_lanes(self) -> int:
        return len(self.wave)


def _aggregate(n_lanes, lane, wait, queued):
    wave = np.bincount(lane, minlength=n_lanes).astype(float)
    queue = np.bincount(lane[queued], minlength=n_lanes).astype(float) if lane.size else np.zeros(n_lanes)
    wait_veh = np.zeros(n_lanes)
    if lane.size:
        np.maximum.at(wait_veh, lane, wait)
    return wave, queue, wait_veh


def measure_true(network, traffic, pedestrians, layout: DetectorLayout, speed_threshold: float) -> Observation:
    lo, hi = layout.bounds(network)
    act = traffic.active
    inside = act & ~traffic.crossed & (traffic.pos >= lo[:, None]) & (traffic.pos <= hi[:, None])
    lane = np.nonzero(inside)[0]
    wait = traffic.wait[inside]
    queued = traffic.speed[inside] < speed_threshold
    wave, queue, wait_veh = _aggregate(network.n_lanes, lane, wait, queued)
    return Observation(wave, queue, wait_veh, pedestrians.waiting_times(), lane, wait, queued)


def apply_noise(obs: Observation, noise: NoiseParams, rng: np.random.Generator) -> Observation:
    """Missed detections, false "queued" classifications and shortened waiting times.

    wait_ped passes through untouched; wait_veh is the maximum over the
    vehicles that were actually detected.
    """
    if noise.silent:
        return obs
    n = obs.vehicle_lane.size
    queued = obs.vehicle_queued
    u = rng.random(n)
    keep = np.where(queued, u >= noise.eta_queue, u >= noise.eta_wave)
    false_queue = keep & ~queued & (rng.random(n) < noise.eta_queue_pos)
    lane = obs.vehicle_lane[keep]
    wait = obs.vehicle_wait[keep]
    q = (queued | false_queue)[keep]
    wave, queue, wait_veh = _aggregate(obs.n_lanes, lane, wait, q)
    reduce = rng.random(obs.n_lanes) < noise.eta_wait_veh
    amount = WAIT_REDUCTIONS[rng.integers(len(WAIT_REDUCTIONS), size=obs.n_lanes)]
    wait_veh = np.where(reduce, np.maximum(wait_veh - amount, 0.0), wait_veh)
    return replace(obs, wave=wave, queue=np.minimum(queue, wave), wait_veh=wait_veh,
                   vehicle_lane=lane, vehicle_wait=wait, vehicle_queued=q)


class Pedestrians:
    """Button presses waiting per crosswalk; a green crosswalk serves everyone."""

    def __init__(self, n_crosswalks: int):
        self.first_press = np.full(n_crosswalks, np.nan)
        self.waiting = np.zeros(n_crosswalks, dtype=np.int64)
        self.served = 0
        self.t = 0.0

    def press(self, crosswalk: int, t: float) -> None:
        if self.waiting[crosswalk] == 0:
            self.first_press[crosswalk] = t
        self.waiting[crosswalk] += 1

    def serve(self, green: np.ndarray) -> None:
        g = np.asarray(green, dtype=bool) & (self.waiting > 0)
        self.served += int(self.waiting[g].sum())
        self.waiting[g] = 0
        self.first_press[g] = np.nan

    def waiting_times(self) -> np.ndarray:
        return np.where(self.waiting > 0, self.t - np.nan_to_num(self.first_press, nan=self.t), 0.0)
