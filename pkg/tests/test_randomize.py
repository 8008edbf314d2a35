import math

import numpy as np
import pytest

from tscgap.randomize import (RANDOMIZED_PARAMS, ClippedNormal, DomainSample, UniformContinuous, UniformDiscrete,
                              clipped_normal_moments, dist_from_dict, dist_to_dict, in_range, make_task_set,
                              mean_domain, sample_dist, sample_domain, table_from_overrides)

from oracles import clipped_normal_mean_var, uniform_mean_var


# Published rows, spelled out once more so a typo in the table cannot hide.
PUBLISHED = {
    "tau": ("N", 1.13, 0.1, 1.0, 1.2),
    "sigma": ("N", 0.59, 0.23, 0.0, 1.0),
    "delta": ("N", 3.97, 0.05, 3.7, 4.3),
    "speed_factor": ("N", 1.06, 0.11, 0.6, 1.4),
    "min_gap": ("N", 2.9, 0.36, 1.5, 4.0),
    "jm_stopline_gap": ("N", 0.94, 0.26, 0.5, 2.0),
    "impatience": ("N", 0.29, 0.15, -0.1, 0.5),
    "accel": ("N", 2.5, 0.21, -math.inf, math.inf),
    "decel": ("N", 4.7, 0.21, -math.inf, math.inf),
    "length": ("N", 5.0, 0.64, 4.7, 5.0),
    "scale": ("U", 0.85, 1.18),
    "speed_threshold": ("U", 3 / 3.6, 10 / 3.6),
    "eta_queue": ("U", 0.0, 0.06),
    "eta_queue_pos": ("U", 0.0, 0.06),
    "eta_wave": ("U", 0.0, 0.06),
    "eta_wait_veh": ("U", 0.0, 0.1),
}


@pytest.mark.parametrize("name", sorted(PUBLISHED))
def test_table_rows_match_published_values(name):
    row, spec = PUBLISHED[name], RANDOMIZED_PARAMS[name]
    if row[0] == "N":
        assert isinstance(spec, ClippedNormal)
        assert (spec.mean, spec.std, spec.low, spec.high) == pytest.approx(row[1:])
    else:
        assert isinstance(spec, UniformContinuous)
        assert (spec.a, spec.b) == pytest.approx(row[1:])
    assert RANDOMIZED_PARAMS["cf_model"].choices == ("krauss", "idm")


def test_tau_draws_stay_in_range(rng):
    x = sample_dist(RANDOMIZED_PARAMS["tau"], rng, 10_000)
    assert x.min() >= 1.0 and x.max() <= 1.2


def test_zero_variance_returns_mean(rng):
    spec = ClippedNormal(1.1, 0.0, 1.0, 1.2)
    assert np.all(sample_dist(spec, rng, 100) == 1.1)


def test_clipping_pulls_tau_mean_below_nominal(rng):
    x = sample_dist(RANDOMIZED_PARAMS["tau"], rng, 100_000)
    m, v = clipped_normal_mean_var(1.13, 0.1, 1.0, 1.2)
    assert m < 1.13
    assert abs(x.mean() - m) <= 3 * math.sqrt(v / x.size)


def test_closed_form_moments_agree_with_integration():
    for name, spec in RANDOMIZED_PARAMS.items():
        if isinstance(spec, ClippedNormal):
            assert clipped_normal_moments(spec) == pytest.approx(
                clipped_normal_mean_var(spec.mean, spec.std, spec.low, spec.high), rel=1e-7, abs=1e-10)


def test_invalid_specs():
    with pytest.raises(ValueError):
        ClippedNormal(0.0, -1.0)
    with pytest.raises(ValueError):
        ClippedNormal(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        UniformContinuous(2.0, 1.0)
    with pytest.raises(ValueError):
        UniformDiscrete(())


def test_model_split_is_even():
    rng = np.random.default_rng(8)
    n = 10_000
    k = sum(sample_domain(rng).cf_model == "krauss" for _ in range(n))
    assert abs(k / n - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_samples_in_range_and_exclusive_variants():
    rng = np.random.default_rng(9)
    for _ in range(2000):
        s = sample_domain(rng)
        assert in_range(s)
        assert 0.85 <= s.scale <= 1.18
        if s.cf_model == "krauss":
            assert s.delta is None and s.sigma is not None
        else:
            assert s.sigma is None and s.delta is not None


def test_domain_sample_rejects_mixed_variant():
    d = mean_domain().to_dict()
    d["delta"] = 4.0
    with pytest.raises(ValueError):
        DomainSample.from_dict(d)


def test_task_sets_are_reproducible():
    a, b = make_task_set(40, 3), make_task_set(40, 3)
    assert a.tasks == b.tasks
    assert make_task_set(1, 3).tasks[0] == sample_domain(np.random.default_rng(3))


def test_large_task_set_in_range():
    ts = make_task_set(1000, 17)
    assert all(in_range(s) for s in ts.tasks)


def test_per_vehicle_speed_factor_within_clip_bounds():
    from tscgap.dynamics import vehicle_params_for
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = sample_domain(rng)
        sf = [vehicle_params_for(d, "car", rng).speed_factor for _ in range(200)]
        assert 0.6 <= min(sf) and max(sf) <= 1.4


def test_dist_dict_round_trip():
    for spec in RANDOMIZED_PARAMS.values():
        assert dist_from_dict(dist_to_dict(spec)) == spec


def test_table_override():
    t = table_from_overrides({"scale": {"kind": "uniform", "a": 1.0, "b": 1.0}})
    assert sample_domain(np.random.default_rng(0), t).scale == 1.0
    with pytest.raises(ValueError):
        table_from_overrides({"bogus": {"kind": "uniform", "a": 0, "b": 1}})


def test_sampling_is_pure_function_of_stream():
    a = sample_domain(np.random.default_rng(123))
    b = sample_domain(np.random.default_rng(123))
    assert a == b


@pytest.mark.parametrize("name", [n for n, s in RANDOMIZED_PARAMS.items() if isinstance(s, UniformContinuous)])
def test_uniform_rows_match_moments(name):
    spec = RANDOMIZED_PARAMS[name]
    draws = sample_dist(spec, np.random.default_rng(5), size=100_000)
    mean, var = uniform_mean_var(spec.a, spec.b)
    assert abs(draws.mean() - mean) <= 3 * np.sqrt(var / draws.size)
    assert spec.a <= draws.min() and draws.max() <= spec.b
