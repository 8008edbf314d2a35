"""Intersection layout and traffic demand.

The network is a single four-arm intersection. Each approach has incoming
lanes measured from the upstream boundary (position 0) to the junction edge
(position ``length``); a lane's stop line sits ``stop_line_offset`` metres
before the junction edge.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

MOVEMENTS = ("left", "through", "right")
VEHICLE_CLASSES = ("car", "truck", "bus", "motorcycle", "truck_trailer")


class InvalidConfigError(ValueError):
    """A configuration violates an invariant. ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Lane:
    length: float
    stop_line_offset: float
    movements: tuple[str, ...]


@dataclass(frozen=True)
class Approach:
    id: str
    lanes: tuple[Lane, ...]
    speed_limit: float


@dataclass(frozen=True)
class Crosswalk:
    id: str
    approach: str
    demand_button: bool = True


@dataclass(frozen=True)
class GeometryPerturbation:
    stop_line_shift: Mapping[str, float] = field(default_factory=dict)
    lane_length_scale: float = 1.0


@dataclass(frozen=True)
class NetworkConfig:
    approaches: tuple[Approach, ...]
    crosswalks: tuple[Crosswalk, ...]
    perturbation: GeometryPerturbation = GeometryPerturbation()

    def validate(self) -> None:
        if len(self.approaches) != 4:
            raise InvalidConfigError("approaches", f"need exactly 4, got {len(self.approaches)}")
        if len(self.crosswalks) != 4:
            raise InvalidConfigError("crosswalks", f"need exactly 4, got {len(self.crosswalks)}")
        ids = [a.id for a in self.approaches]
        if len(set(ids)) != 4:
            raise InvalidConfigError("approaches", "approach ids must be unique")
        p = self.perturbation
        if not p.lane_length_scale > 0:
            raise InvalidConfigError("perturbation.lane_length_scale", "must be > 0")
        for key in p.stop_line_shift:
            if key not in ids:
                raise InvalidConfigError(f"perturbation.stop_line_shift.{key}", "unknown approach")
        for i, a in enumerate(self.approaches):
            if not a.lanes:
                raise InvalidConfigError(f"approaches[{i}].lanes", "need at least one lane")
            if not a.speed_limit > 0:
                raise InvalidConfigError(f"approaches[{i}].speed_limit", "must be > 0")
            for j, lane in enumerate(a.lanes):
                path = f"approaches[{i}].lanes[{j}]"
                if not lane.length > 0:
                    raise InvalidConfigError(f"{path}.length", "must be > 0")
                if not 0 <= lane.stop_line_offset < lane.length:
                    raise InvalidConfigError(f"{path}.stop_line_offset", "must lie in [0, length)")
                if not lane.movements or set(lane.movements) - set(MOVEMENTS):
                    raise InvalidConfigError(f"{path}.movements", f"must be a subset of {MOVEMENTS}")
                eff_len = lane.length * p.lane_length_scale
                eff_off = lane.stop_line_offset + p.stop_line_shift.get(a.id, 0.0)
                if not 0 <= eff_off < eff_len:
                    raise InvalidConfigError(f"perturbation.stop_line_shift.{a.id}",
                                             "shifted stop line leaves the lane")
        for k, c in enumerate(self.crosswalks):
            if c.approach not in ids:
                raise InvalidConfigError(f"crosswalks[{k}].approach", f"unknown approach {c.approach!r}")
        if len({c.approach for c in self.crosswalks}) != 4:
            raise InvalidConfigError("crosswalks", "each approach needs exactly one crosswalk")


@dataclass(frozen=True, eq=False)
class Network:
    """Resolved geometry, flattened to per-lane arrays.

    Lanes are numbered approach-major in config order. ``movement_lane``
    maps (approach index, movement) to the lane that serves it.
    """

    config: NetworkConfig
    lane_length: np.ndarray
    stop_offset: np.ndarray
    stop_pos: np.ndarray
    speed_limit: np.ndarray
    lane_approach: np.ndarray
    lane_index_in_approach: np.ndarray
    movement_lane: Mapping[tuple[int, str], int]
    crosswalk_approach: np.ndarray

    @property
    def n_lanes(self) -> int:
        return len(self.lane_length)

    @property
    def n_crosswalks(self) -> int:
        return len(self.crosswalk_approach)

    @property
    def approach_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.config.approaches)


def build_network(config: NetworkConfig) -> Network:
    config.validate()
    p = config.perturbation
    lengths, offsets, limits, app, idx = [], [], [], [], []
    movement_lane = {}
    for ai, a in enumerate(config.approaches):
        for li, lane in enumerate(a.lanes):
            lane_no = len(lengths)
            lengths.append(lane.length * p.lane_length_scale)
            offsets.append(lane.stop_line_offset + p.stop_line_shift.get(a.id, 0.0))
            limits.append(a.speed_limit)
            app.append(ai)
            idx.append(li)
            for m in lane.movements:
                movement_lane.setdefault((ai, m), lane_no)
    ids = [a.id for a in config.approaches]
    lane_length = np.array(lengths)
    stop_offset = np.array(offsets)
    arrays = dict(
        lane_length=lane_length,
        stop_offset=stop_offset,
        stop_pos=lane_length - stop_offset,
        speed_limit=np.array(limits),
        lane_approach=np.array(app),
        lane_index_in_approach=np.array(idx),
        crosswalk_approach=np.array([ids.index(c.approach) for c in config.crosswalks]),
    )
    for arr in arrays.values():
        arr.setflags(write=False)
    return Network(config=config, movement_lane=dict(movement_lane), **arrays)


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-constant arrival rates.

    ``vehicle_rates[(approach_id, movement)]`` is a base rate in veh/s which
    is multiplied by ``multipliers[k]`` while ``segment_ends[k-1] <= t <
    segment_ends[k]``. Past the last segment the last multiplier holds.
    """

    vehicle_rates: Mapping[tuple[str, str], float]
    pedestrian_rates: Mapping[str, float]
    segment_ends: tuple[float, ...]
    multipliers: tuple[float, ...]
    class_mix: Mapping[str, float]

    def __post_init__(self):
        if len(self.segment_ends) != len(self.multipliers) or not self.segment_ends:
            raise InvalidConfigError("demand.segment_ends", "must match multipliers and be nonempty")
        if any(np.diff((0.0,) + tuple(self.segment_ends)) <= 0):
            raise InvalidConfigError("demand.segment_ends", "must be strictly increasing and positive")
        if min(self.multipliers) < 0:
            raise InvalidConfigError("demand.multipliers", "must be >= 0")
        for k, r in self.vehicle_rates.items():
            if r < 0:
                raise InvalidConfigError(f"demand.vehicle_rates.{k}", "must be >= 0")
            if k[1] not in MOVEMENTS:
                raise InvalidConfigError(f"demand.vehicle_rates.{k}", "unknown movement")
        for k, r in self.pedestrian_rates.items():
            if r < 0:
                raise InvalidConfigError(f"demand.pedestrian_rates.{k}", "must be >= 0")
        if set(self.class_mix) - set(VEHICLE_CLASSES):
            raise InvalidConfigError("demand.class_mix", f"classes must be among {VEHICLE_CLASSES}")
        if min(self.class_mix.values()) < 0 or abs(sum(self.class_mix.values()) - 1.0) > 1e-9:
            raise InvalidConfigError("demand.class_mix", "weights must be >= 0 and sum to 1")

    @property
    def span(self) -> float:
        return float(self.segment_ends[-1])

    def multiplier(self, t: float) -> float:
        k = int(np.searchsorted(self.segment_ends, t, side="right"))
        return self.multipliers[min(k, len(self.multipliers) - 1)]

    def rescaled(self, span: float) -> "DemandProfile":
        """Same shape compressed or stretched onto ``[0, span]``."""
        f = span / self.span
        return DemandProfile(self.vehicle_rates, self.pedestrian_rates,
                             tuple(e * f for e in self.segment_ends), self.multipliers, self.class_mix)


@dataclass(frozen=True)
class VehicleArrival:
    lane: int
    approach: int
    movement: str
    vehicle_class: str
    time: float


@dataclass(frozen=True)
class PedestrianArrival:
    crosswalk: int
    time: float


class ArrivalSampler:
    """Caches the rate vectors of a profile for repeated sampling."""

    def __init__(self, network: Network, profile: DemandProfile):
        ids = network.approach_ids
        self.keys = []
        rates = []
        for (aid, m), r in sorted(profile.vehicle_rates.items()):
            ai = ids.index(aid)
            if (ai, m) not in network.movement_lane:
                raise InvalidConfigError(f"demand.vehicle_rates.{aid}.{m}", "no lane serves this movement")
            self.keys.append((network.movement_lane[(ai, m)], ai, m))
            rates.append(r)
        self.rates = np.array(rates, dtype=float)
        cw_ids = [c.id for c in network.config.crosswalks]
        self.ped_rates = np.array([profile.pedestrian_rates.get(c, 0.0) for c in cw_ids])
        self.classes = tuple(profile.class_mix)
        self.class_p = np.array([profile.class_mix[c] for c in self.classes])
        self.profile = profile

    def sample(self, scale: float, t: float, dt: float, rng: np.random.Generator):
        if not scale >= 0:
            raise ValueError("scale must be >= 0")
        if not dt > 0:
            raise ValueError("dt must be > 0")
        f = self.profile.multiplier(t) * scale * dt
        counts = rng.poisson(self.rates * f)
        vehicles = []
        n = int(counts.sum())
        if n:
            cls = rng.choice(len(self.classes), size=n, p=self.class_p)
            j = 0
            for k in np.flatnonzero(counts):
                lane, ai, m = self.keys[k]
                for _ in range(counts[k]):
                    vehicles.append(VehicleArrival(lane, ai, m, self.classes[cls[j]], t))
                    j += 1
        peds = []
        ped_counts = rng.poisson(self.ped_rates * scale * dt)
        for c in np.flatnonzero(ped_counts):
            peds.extend(PedestrianArrival(int(c), t) for _ in range(ped_counts[c]))
        return vehicles, peds


def spawn_arrivals(network: Network, profile: DemandProfile, scale: float, t: float, dt: float,
                   rng: np.random.Generator):
    """Poisson arrivals over ``[t, t + dt)``: ``(vehicle_arrivals, pedestrian_arrivals)``.

    Arrival records only; inserting them into lanes (and holding them at the
    boundary when the entry is blocked) is the traffic state's job.
    """
    return ArrivalSampler(network, profile).sample(scale, t, dt, rng)


# -- config (de)serialization -------------------------------------------------

def network_from_dict(d: Mapping) -> NetworkConfig:
    approaches = tuple(
        Approach(id=a["id"], speed_limit=float(a["speed_limit"]),
                 lanes=tuple(Lane(float(l["length"]), float(l["stop_line_offset"]), tuple(l["movements"]))
                             for l in a["lanes"]))
        for a in d["approaches"])
    crosswalks = tuple(Crosswalk(c["id"], c["approach"], bool(c.get("demand_button", True)))
                       for c in d["crosswalks"])
    p = d.get("perturbation", {})
    pert = GeometryPerturbation({k: float(v) for k, v in p.get("stop_line_shift", {}).items()},
                                float(p.get("lane_length_scale", 1.0)))
    return NetworkConfig(approaches, crosswalks, pert)


def network_to_dict(cfg: NetworkConfig) -> dict:
    return {
        "approaches": [
            {"id": a.id, "speed_limit": a.speed_limit,
             "lanes": [{"length": l.length, "stop_line_offset": l.stop_line_offset,
                        "movements": list(l.movements)} for l in a.lanes]}
            for a in cfg.approaches],
        "crosswalks": [{"id": c.id, "approach": c.approach, "demand_button": c.demand_button}
                       for c in cfg.crosswalks],
        "perturbation": {"stop_line_shift": dict(cfg.perturbation.stop_line_shift),
                         "lane_length_scale": cfg.perturbation.lane_length_scale},
    }


def demand_from_dict(d: Mapping) -> DemandProfile:
    rates = {}
    for aid, per_move in d["vehicle_rates"].items():
        for m, r in per_move.items():
            rates[(aid, m)] = float(r)
    return DemandProfile(
        vehicle_rates=rates,
        pedestrian_rates={k: float(v) for k, v in d["pedestrian_rates"].items()},
        segment_ends=tuple(float(x) for x in d["segment_ends"]),
        multipliers=tuple(float(x) for x in d["multipliers"]),
        class_mix={k: float(v) for k, v in d["class_mix"].items()},
    )


def demand_to_dict(p: DemandProfile) -> dict:
    rates: dict = {}
    for (aid, m), r in p.vehicle_rates.items():
        rates.setdefault(aid, {})[m] = r
    return {"vehicle_rates": rates, "pedestrian_rates": dict(p.pedestrian_rates),
            "segment_ends": list(p.segment_ends), "multipliers": list(p.multipliers),
            "class_mix": dict(p.class_mix)}


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def perturbation_from_dict(d: Mapping) -> GeometryPerturbation:
    return GeometryPerturbation({k: float(v) for k, v in d.get("stop_line_shift", {}).items()},
                                float(d.get("lane_length_scale", 1.0)))


def with_perturbation(cfg: NetworkConfig, pert: GeometryPerturbation) -> NetworkConfig:
    return NetworkConfig(cfg.approaches, cfg.crosswalks, pert)


def movement_counts(arrivals: Sequence[VehicleArrival]) -> dict:
    out: dict = {}
    for a in arrivals:
        out[(a.approach, a.movement)] = out.get((a.approach, a.movement), 0) + 1
    return out
