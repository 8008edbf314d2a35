"""Parameter distributions for domain randomization.

Every randomized simulation parameter has a distribution spec. A complete
draw of all of them is a :class:`DomainSample`, which fully determines one
source-domain MDP instance. MAML uses fixed, pre-sampled :class:`TaskSet`s.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class ClippedNormal:
    """``clip(N(mean, var), low, high)``. ``var`` is a variance."""

    mean: float
    var: float
    low: float = -math.inf
    high: float = math.inf

    def __post_init__(self):
        if self.var < 0:
            raise ValueError(f"variance must be >= 0, got {self.var}")
        if self.low > self.high:
            raise ValueError(f"min {self.low} > max {self.high}")

    @property
    def std(self) -> float:
        return math.sqrt(self.var)

    @property
    def bounds(self) -> tuple[float, float]:
        return self.low, self.high


@dataclass(frozen=True)
class UniformContinuous:
    a: float
    b: float

    def __post_init__(self):
        if self.a > self.b:
            raise ValueError(f"a {self.a} > b {self.b}")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.a, self.b


@dataclass(frozen=True)
class UniformDiscrete:
    choices: tuple

    def __post_init__(self):
        if len(self.choices) == 0:
            raise ValueError("choices must be nonempty")


DistSpec = Union[ClippedNormal, UniformContinuous, UniformDiscrete]


def sample_dist(spec: DistSpec, rng: np.random.Generator, size=None):
    """Draw from ``spec``. Returns a Python scalar when ``size`` is None."""
    if isinstance(spec, ClippedNormal):
        x = rng.normal(spec.mean, spec.std, size)
        x = np.clip(x, spec.low, spec.high)
    elif isinstance(spec, UniformContinuous):
        x = rng.uniform(spec.a, spec.b, size)
    elif isinstance(spec, UniformDiscrete):
        idx = rng.integers(len(spec.choices), size=size)
        if size is None:
            return spec.choices[int(idx)]
        return np.asarray(spec.choices, dtype=object)[idx]
    else:
        raise TypeError(f"unknown distribution spec {spec!r}")
    return float(x) if size is None else x


def dist_from_dict(d: Mapping) -> DistSpec:
    kind = d["kind"]
    if kind == "clipped_normal":
        return ClippedNormal(float(d["mean"]), float(d["var"]),
                             float(d.get("min", -math.inf)), float(d.get("max", math.inf)))
    if kind == "uniform":
        return UniformContinuous(float(d["a"]), float(d["b"]))
    if kind == "discrete":
        return UniformDiscrete(tuple(d["choices"]))
    raise ValueError(f"unknown distribution kind {kind!r}")


def dist_to_dict(spec: DistSpec) -> dict:
    if isinstance(spec, ClippedNormal):
        out = {"kind": "clipped_normal", "mean": spec.mean, "var": spec.var}
        if math.isfinite(spec.low):
            out["min"] = spec.low
        if math.isfinite(spec.high):
            out["max"] = spec.high
        return out
    if isinstance(spec, UniformContinuous):
        return {"kind": "uniform", "a": spec.a, "b": spec.b}
    return {"kind": "discrete", "choices": list(spec.choices)}


# Randomized parameters and their ranges (vehicle rows are for class "car").
RANDOMIZED_PARAMS: dict[str, DistSpec] = {
    "cf_model": UniformDiscrete(("krauss", "idm")),
    "tau": ClippedNormal(1.13, 0.1**2, 1.0, 1.2),
    "sigma": ClippedNormal(0.59, 0.23**2, 0.0, 1.0),
    "delta": ClippedNormal(3.97, 0.05**2, 3.7, 4.3),
    "speed_factor": ClippedNormal(1.06, 0.11**2, 0.6, 1.4),
    "min_gap": ClippedNormal(2.9, 0.36**2, 1.5, 4.0),
    "jm_stopline_gap": ClippedNormal(0.94, 0.26**2, 0.5, 2.0),
    "impatience": ClippedNormal(0.29, 0.15**2, -0.1, 0.5),
    "accel": ClippedNormal(2.5, 0.21**2),
    "decel": ClippedNormal(4.7, 0.21**2),
    "length": ClippedNormal(5.0, 0.64**2, 4.7, 5.0),
    "scale": UniformContinuous(0.85, 1.18),
    "speed_threshold": UniformContinuous(3 / 3.6, 10 / 3.6),
    "eta_queue": UniformContinuous(0.0, 0.06),
    "eta_queue_pos": UniformContinuous(0.0, 0.06),
    "eta_wave": UniformContinuous(0.0, 0.06),
    "eta_wait_veh": UniformContinuous(0.0, 0.1),
}

NOISE_FIELDS = ("eta_queue", "eta_queue_pos", "eta_wave", "eta_wait_veh", "speed_threshold")

# Episode-level jitter of the per-vehicle speedFactor mean.
SPEED_FACTOR_MEAN_JITTER = 0.05


@dataclass(frozen=True)
class DomainSample:
    """One complete draw of the randomized parameters.

    ``speed_factor_mean``/``speed_factor_var`` parametrize the per-vehicle
    speed factor distribution used inside the episode; the clip bounds are
    always those of the ``speed_factor`` row.
    """

    cf_model: str
    tau: float
    sigma: Optional[float]
    delta: Optional[float]
    speed_factor_mean: float
    speed_factor_var: float
    min_gap: float
    jm_stopline_gap: float
    impatience: float
    accel: float
    decel: float
    length: float
    scale: float
    speed_threshold: float
    eta_queue: float
    eta_queue_pos: float
    eta_wave: float
    eta_wait_veh: float

    def __post_init__(self):
        if self.cf_model == "krauss" and (self.sigma is None or self.delta is not None):
            raise ValueError("krauss sample needs sigma and no delta")
        if self.cf_model == "idm" and (self.delta is None or self.sigma is not None):
            raise ValueError("idm sample needs delta and no sigma")
        for name in ("tau", "min_gap", "jm_stopline_gap", "accel", "decel", "length",
                     "scale", "speed_threshold", "speed_factor_mean"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")

    def speed_factor_dist(self) -> ClippedNormal:
        row = RANDOMIZED_PARAMS["speed_factor"]
        return ClippedNormal(self.speed_factor_mean, self.speed_factor_var, row.low, row.high)

    def noise(self) -> dict:
        return {k: getattr(self, k) for k in NOISE_FIELDS}

    def with_noise(self, **noise) -> "DomainSample":
        return dataclasses.replace(self, **noise)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DomainSample":
        return cls(**{f.name: d.get(f.name) for f in dataclasses.fields(cls)})


def sample_domain(rng: np.random.Generator,
                  table: Mapping[str, DistSpec] = RANDOMIZED_PARAMS) -> DomainSample:
    """Draw one domain sample. The draw order is fixed so streams are reproducible."""
    cf_model = sample_dist(table["cf_model"], rng)
    sigma = delta = None
    if cf_model == "krauss":
        sigma = sample_dist(table["sigma"], rng)
    else:
        delta = sample_dist(table["delta"], rng)
    sf = table["speed_factor"]
    sf_mean = sf.mean + rng.uniform(-SPEED_FACTOR_MEAN_JITTER, SPEED_FACTOR_MEAN_JITTER)
    values = {name: sample_dist(table[name], rng) for name in (
        "tau", "min_gap", "jm_stopline_gap", "impatience", "accel", "decel", "length",
        "scale", "speed_threshold", "eta_queue", "eta_queue_pos", "eta_wave", "eta_wait_veh")}
    return DomainSample(cf_model=cf_model, sigma=sigma, delta=delta,
                        speed_factor_mean=float(sf_mean), speed_factor_var=sf.var, **values)


def mean_domain(table: Mapping[str, DistSpec] = RANDOMIZED_PARAMS,
                cf_model: str = "krauss") -> DomainSample:
    """The nominal domain: distribution means and zero sensor noise."""

    def center(spec):
        if isinstance(spec, ClippedNormal):
            return spec.mean
        return 0.5 * (spec.a + spec.b)

    values = {name: center(table[name]) for name in (
        "tau", "min_gap", "jm_stopline_gap", "impatience", "accel", "decel", "length",
        "scale", "speed_threshold")}
    sf = table["speed_factor"]
    return DomainSample(
        cf_model=cf_model,
        sigma=center(table["sigma"]) if cf_model == "krauss" else None,
        delta=center(table["delta"]) if cf_model == "idm" else None,
        speed_factor_mean=sf.mean, speed_factor_var=sf.var,
        eta_queue=0.0, eta_queue_pos=0.0, eta_wave=0.0, eta_wait_veh=0.0, **values)


def sample_noise(rng: np.random.Generator, table: Mapping[str, DistSpec] = RANDOMIZED_PARAMS) -> dict:
    """Draw only the sensor-noise parameters."""
    return {name: sample_dist(table[name], rng) for name in NOISE_FIELDS}


def in_range(sample: DomainSample, table: Mapping[str, DistSpec] = RANDOMIZED_PARAMS) -> bool:
    """True iff every field of ``sample`` lies in its distribution's support."""
    if sample.cf_model not in table["cf_model"].choices:
        return False
    for name, spec in table.items():
        if name in ("cf_model", "speed_factor"):
            continue
        value = getattr(sample, name)
        if value is None:
            continue
        lo, hi = spec.bounds
        if not lo <= value <= hi:
            return False
    sf = table["speed_factor"]
    return abs(sample.speed_factor_mean - sf.mean) <= SPEED_FACTOR_MEAN_JITTER + 1e-12


@dataclass(frozen=True)
class TaskSet:
    seed: int
    tasks: tuple[DomainSample, ...]

    def __len__(self):
        return len(self.tasks)

    def __getitem__(self, task_id: int) -> DomainSample:
        return self.tasks[task_id]


def make_task_set(n: int, seed: int, table: Mapping[str, DistSpec] = RANDOMIZED_PARAMS) -> TaskSet:
    if n <= 0:
        raise ValueError("task set size must be positive")
    rng = np.random.default_rng(seed)
    return TaskSet(seed=seed, tasks=tuple(sample_domain(rng, table) for _ in range(n)))


def table_from_overrides(overrides: Mapping[str, Mapping] | None) -> dict[str, DistSpec]:
    """RANDOMIZED_PARAMS with rows replaced by config-file entries."""
    table = dict(RANDOMIZED_PARAMS)
    for name, d in (overrides or {}).items():
        if name not in table:
            raise ValueError(f"unknown randomized parameter {name!r}")
        table[name] = dist_from_dict(d)
    return table


def _norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi) if math.isfinite(x) else 0.0


def clipped_normal_moments(spec: ClippedNormal) -> tuple[float, float]:
    """Exact mean and variance of ``clip(N(mean, var), low, high)``."""
    mu, s = spec.mean, spec.std
    if s == 0:
        v = min(max(mu, spec.low), spec.high)
        return v, 0.0
    a = (spec.low - mu) / s
    b = (spec.high - mu) / s
    Pa, Pb = _norm_cdf(a), _norm_cdf(b)
    pa, pb = _norm_pdf(a), _norm_pdf(b)
    lo_term = spec.low * Pa if math.isfinite(spec.low) else 0.0
    hi_term = spec.high * (1 - Pb) if math.isfinite(spec.high) else 0.0
    mid = mu * (Pb - Pa) + s * (pa - pb)
    mean = lo_term + mid + hi_term
    # second moment of the truncated middle part
    a_pa = a * pa if math.isfinite(a) else 0.0
    b_pb = b * pb if math.isfinite(b) else 0.0
    mid2 = (mu**2 + s**2) * (Pb - Pa) + 2 * mu * s * (pa - pb) + s**2 * (a_pa - b_pb)
    lo2 = spec.low**2 * Pa if math.isfinite(spec.low) else 0.0
    hi2 = spec.high**2 * (1 - Pb) if math.isfinite(spec.high) else 0.0
    second = lo2 + mid2 + hi2
    return float(mean), float(max(second - mean**2, 0.0))


def samples_to_rows(samples: Sequence[DomainSample]) -> list[dict]:
    return [s.to_dict() for s in samples]
