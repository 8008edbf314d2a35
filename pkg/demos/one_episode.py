"""Play one source-domain episode with a random and a fixed-cycle controller and compare returns."""
import numpy as np

from tscgap import harness
from tscgap.env import TscEnv
from tscgap.randomize import mean_domain, sample_domain

exp = harness.load_experiment("desk.json")
scenario = harness.Scenario.load(exp)
rng = np.random.default_rng(0)


def play(env, choose):
    env.reset(seed=7)
    total, done, t = 0.0, False, 0
    while not done:
        res = env.step(choose(t))
        total += res.reward
        done = res.done
        t += 1
    return total


for label, domain in (("mean parameters", mean_domain()), ("one randomized draw", sample_domain(rng))):
    env = TscEnv(scenario.source_env(exp, domain, episode_length=exp.episode_length))
    n = scenario.plan.n_phases
    random_ret = play(env, lambda t: int(rng.integers(n)))
    cycle_ret = play(env, lambda t: (t // 10) % n)
    print(f"{label}: random {random_ret:.0f}, 10 s fixed cycle {cycle_ret:.0f}")
