"""Loading of the shipped JSON configs (network, signal plan, target domain, settings)."""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .dynamics import CarFollowingSpec, car_following_from_dict
from .network import (DemandProfile, GeometryPerturbation, InvalidConfigError, NetworkConfig,
                      demand_from_dict, network_from_dict, perturbation_from_dict)
from .randomize import NOISE_FIELDS, RANDOMIZED_PARAMS, DomainSample
from .signal import SignalPlan, plan_from_dict


def read_config(name_or_path) -> dict:
    """Read a JSON config, either a shipped name like ``"network.json"`` or a path."""
    p = Path(name_or_path)
    if p.exists():
        return json.loads(p.read_text())
    ref = resources.files("tscgap.configs").joinpath(str(name_or_path))
    if not ref.is_file():
        raise FileNotFoundError(f"no such config: {name_or_path}")
    return json.loads(ref.read_text())


def config_text(name_or_path) -> str:
    p = Path(name_or_path)
    if p.exists():
        return p.read_text()
    return resources.files("tscgap.configs").joinpath(str(name_or_path)).read_text()


@dataclass(frozen=True)
class SourceConfig:
    network: NetworkConfig
    demand: DemandProfile
    detector_length: float


def load_source(path=None) -> SourceConfig:
    d = read_config(path or "network.json")
    try:
        return SourceConfig(network_from_dict(d["network"]), demand_from_dict(d["demand"]),
                            float(d.get("detector_length", 50.0)))
    except KeyError as exc:
        raise InvalidConfigError(str(exc.args[0]), "missing key") from None


def load_signal_plan(path=None) -> SignalPlan:
    return plan_from_dict(read_config(path or "signal_plan.json"))


@dataclass(frozen=True)
class TargetConfig:
    """Held-out evaluation domain: its own car-following model, vehicles and geometry."""

    perturbation: GeometryPerturbation
    car_following: CarFollowingSpec
    vehicle: Mapping[str, float]
    scale: float

    def domain(self, noise: Mapping[str, float]) -> DomainSample:
        """Domain sample for the target with the given sensor-noise values."""
        missing = set(NOISE_FIELDS) - set(noise)
        if missing:
            raise InvalidConfigError("noise", f"missing {sorted(missing)}")
        return DomainSample(cf_model=self.car_following.name, sigma=None, delta=None,
                            scale=self.scale, **self.vehicle,
                            **{k: float(noise[k]) for k in NOISE_FIELDS})


def load_target(path=None) -> TargetConfig:
    d = read_config(path or "target.json")
    return TargetConfig(perturbation=perturbation_from_dict(d["perturbation"]),
                        car_following=car_following_from_dict(d["car_following"]),
                        vehicle={k: float(v) for k, v in d["vehicle"].items()},
                        scale=float(d.get("scale", 1.0)))


@dataclass(frozen=True)
class EvaluationSetting:
    label: str
    seed: int
    noise: Mapping[str, float]

    def __post_init__(self):
        for name in NOISE_FIELDS:
            lo, hi = RANDOMIZED_PARAMS[name].bounds
            v = self.noise[name]
            if not lo <= v <= hi:
                raise InvalidConfigError(f"{self.label}.{name}", f"{v} outside [{lo}, {hi}]")


def load_eval_settings(path=None, labels: Optional[list] = None) -> dict[str, EvaluationSetting]:
    d = read_config(path or "eval_settings.json")
    out = {}
    for label, row in d.items():
        if label.startswith("_") or (labels and label not in labels):
            continue
        out[label] = EvaluationSetting(label, int(row["seed"]), {k: float(row[k]) for k in NOISE_FIELDS})
    return out


def zero_noise_setting(label: str = "zero", speed_threshold: Optional[float] = None) -> EvaluationSetting:
    lo, hi = RANDOMIZED_PARAMS["speed_threshold"].bounds
    st = 0.5 * (lo + hi) if speed_threshold is None else speed_threshold
    return EvaluationSetting(label, -1, {"eta_queue": 0.0, "eta_queue_pos": 0.0, "eta_wave": 0.0,
                                         "eta_wait_veh": 0.0, "speed_threshold": st})
