"""Training regimes, target-domain evaluation, reports and time series."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .config import (EvaluationSetting, SourceConfig, TargetConfig, load_signal_plan, load_source,
                     load_target, read_config)
from .env import EnvConfig, InvariantError, RewardCoefficients, TscEnv, read_trace_csv, write_trace_csv
from .learner.maml import MamlHyper, PolicyGradientObjective, TaskData, maml_inner_adapt, maml_outer_update
from .learner.maml import fine_tune as maml_fine_tune
from .learner.mlp import PolicyLayout, forward, init_params
from .learner.optim import AdamState, NonFiniteLossError
from .learner.ppo import Batch, PpoHyper, RolloutBuffer, ppo_update, run_episodes, sample_action
from .network import with_perturbation
from .randomize import DomainSample, make_task_set, mean_domain, sample_domain
from .signal import SignalPlan

REGIMES = ("ppo_fixed", "dr", "maml")
CHECKPOINT_VERSION = 1
_ZIP_DATE = (2020, 1, 1, 0, 0, 0)


class BudgetError(ValueError):
    """The configured step budgets cannot be matched exactly."""


class IncompatibleCheckpointError(ValueError):
    pass


# -- experiment config ---------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    regime: str = "ppo_fixed"
    seed: int = 0
    episodes: int = 300
    episode_length: float = 600.0
    # demand profile is stretched or squeezed to this span (None: as shipped)
    demand_span: Optional[float] = 600.0
    ppo: PpoHyper = PpoHyper()
    maml: MamlHyper = MamlHyper()
    maml_episode_length: float = 300.0
    maml_task_count: int = 40
    maml_task_seed: int = 7
    eval_episode_length: float = 600.0
    eval_seeds: tuple = (1001, 1002, 1003, 1004, 1005)
    fine_tune_episodes: int = 5
    fine_tune_seeds: tuple = (2001, 2002, 2003, 2004, 2005)
    checkpoint_every: int = 50
    hidden: tuple = (128, 128)
    reward: RewardCoefficients = RewardCoefficients()
    network: str = "network.json"
    signal_plan: str = "signal_plan.json"
    target: str = "target.json"
    eval_settings: str = "eval_settings.json"

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.episodes <= 0 or self.episode_length <= 0 or self.maml_episode_length <= 0:
            raise BudgetError("budgets must be > 0")
        if self.maml_task_count < self.maml.tasks_per_meta_batch:
            raise ValueError("maml_task_count smaller than tasks_per_meta_batch")

    @property
    def total_steps(self) -> int:
        """Environment-step budget shared by all regimes."""
        return self.episodes * _steps(self.episode_length)

    def maml_iterations(self) -> int:
        per_iter = self.maml.tasks_per_meta_batch * self.maml.episodes_per_task() * _steps(self.maml_episode_length)
        if self.total_steps % per_iter:
            raise BudgetError(f"budget of {self.total_steps} steps is not a multiple of the "
                              f"{per_iter} steps one meta-iteration consumes")
        return self.total_steps // per_iter

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eval_seeds"] = list(self.eval_seeds)
        d["fine_tune_seeds"] = list(self.fine_tune_seeds)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        d = {k: v for k, v in d.items() if not k.startswith("_")}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        kw = dict(d)
        if "ppo" in kw:
            kw["ppo"] = PpoHyper(**kw["ppo"])
        if "maml" in kw:
            kw["maml"] = MamlHyper(**kw["maml"])
        if "reward" in kw:
            kw["reward"] = RewardCoefficients(**kw["reward"])
        for name in ("eval_seeds", "fine_tune_seeds", "hidden"):
            if name in kw:
                kw[name] = tuple(kw[name])
        return cls(**kw)

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def load_experiment(path_or_name="desk.json", **overrides) -> ExperimentConfig:
    return ExperimentConfig.from_dict({**read_config(path_or_name), **overrides})


def _steps(length: float, dt: float = 1.0) -> int:
    n = length / dt
    if abs(n - round(n)) > 1e-9:
        raise BudgetError(f"episode length {length} is not a whole number of steps")
    return int(round(n))


def episode_seed(train_seed: int, index: int, stream: int = 0) -> int:
    return int(np.random.SeedSequence([train_seed, stream, index]).generate_state(1)[0])


# -- environment factories -------------------------------------------------------

@dataclass
class Scenario:
    source: SourceConfig
    plan: SignalPlan
    target: TargetConfig

    @classmethod
    def load(cls, exp: ExperimentConfig) -> "Scenario":
        return cls(load_source(exp.network), load_signal_plan(exp.signal_plan), load_target(exp.target))

    def _demand(self, exp):
        d = self.source.demand
        return d if exp.demand_span is None else d.rescaled(exp.demand_span)

    def source_env(self, exp: ExperimentConfig, domain: DomainSample, *, episode_length: float,
                   start_time_randomization: bool = False, reward_mode: str = "true_sensor") -> EnvConfig:
        return EnvConfig(self.source.network, self._demand(exp), domain, self.plan,
                         episode_length=episode_length, start_time_randomization=start_time_randomization,
                         reward=exp.reward, reward_mode=reward_mode,
                         detector_length=self.source.detector_length)

    def target_env(self, exp: ExperimentConfig, setting: EvaluationSetting, *, episode_length: float,
                   start_time_randomization: bool = False, reward_mode: str = "true_sensor") -> EnvConfig:
        net = with_perturbation(self.source.network, self.target.perturbation)
        return EnvConfig(net, self._demand(exp), self.target.domain(setting.noise), self.plan,
                         episode_length=episode_length, start_time_randomization=start_time_randomization,
                         reward=exp.reward, reward_mode=reward_mode,
                         detector_length=self.source.detector_length,
                         car_following=self.target.car_following)


def obs_dim_for(scenario: Scenario, exp: ExperimentConfig) -> int:
    return TscEnv(scenario.source_env(exp, mean_domain(), episode_length=exp.episode_length)).obs_dim


# -- checkpoints -------------------------------------------------------------------

@dataclass
class Checkpoint:
    regime: str
    layout: PolicyLayout
    theta: np.ndarray
    adam: AdamState
    fingerprint: str
    counters: dict
    rng_state: dict = field(default_factory=dict)
    buffer: Optional[dict] = None
    config: Optional[dict] = None

    def save(self, path) -> None:
        """Write a byte-deterministic zip of ``.npy`` arrays plus a JSON header."""
        meta = {"version": CHECKPOINT_VERSION, "regime": self.regime, "layout": self.layout.to_dict(),
                "fingerprint": self.fingerprint, "counters": self.counters, "rng_state": self.rng_state,
                "adam": {"t": self.adam.t, "beta1": self.adam.beta1, "beta2": self.adam.beta2,
                         "eps": self.adam.eps},
                "config": self.config}
        arrays = {"theta": self.theta, "adam_m": self.adam.m, "adam_v": self.adam.v}
        for k, v in (self.buffer or {}).items():
            arrays[f"buffer_{k}"] = v
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            zf.writestr(zipfile.ZipInfo("meta.json", _ZIP_DATE), json.dumps(meta, sort_keys=True))
            for name in sorted(arrays):
                bio = io.BytesIO()
                np.save(bio, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{name}.npy", _ZIP_DATE), bio.getvalue())
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {n[:-4]: np.load(io.BytesIO(zf.read(n)), allow_pickle=False)
                      for n in zf.namelist() if n.endswith(".npy")}
        if meta.get("version") != CHECKPOINT_VERSION:
            raise IncompatibleCheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        lay = meta["layout"]
        a = meta["adam"]
        buffer = {k[len("buffer_"):]: v for k, v in arrays.items() if k.startswith("buffer_")} or None
        return cls(regime=meta["regime"],
                   layout=PolicyLayout(lay["obs_dim"], tuple(lay["hidden"]), lay["n_actions"]),
                   theta=arrays["theta"],
                   adam=AdamState(arrays["adam_m"], arrays["adam_v"], a["t"], a["beta1"], a["beta2"], a["eps"]),
                   fingerprint=meta["fingerprint"], counters=meta["counters"], rng_state=meta["rng_state"],
                   buffer=buffer, config=meta.get("config"))


def _rng_from(state: Optional[dict], seed_words) -> np.random.Generator:
    rng = np.random.default_rng(np.random.SeedSequence(seed_words))
    if state:
        rng.bit_generator.state = state
    return rng


# -- training -----------------------------------------------------------------------

class TrainingLog:
    """JSON-lines log; one record per episode plus update and budget records."""

    def __init__(self, path: Optional[Path], resume: bool = False):
        self.path = path
        self.records: list = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            if resume and path.exists():
                self.records = [json.loads(line) for line in path.read_text().splitlines() if line]
            else:
                path.write_text("")

    def write(self, **rec) -> None:
        self.records.append(rec)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def truncate_to(self, episodes_done: int) -> None:
        """Drop records written after the checkpoint being resumed from."""
        keep = []
        for r in self.records:
            if r["kind"] == "episode" and r["episode"] >= episodes_done:
                continue
            # PPO updates fire mid-episode; meta-updates after their episodes
            if r["kind"] == "update" and r["episodes_done"] >= episodes_done:
                continue
            if r["kind"] == "meta_update" and r["episodes_done"] > episodes_done:
                continue
            if r["kind"] == "budget":
                continue
            keep.append(r)
        self.records = keep
        if self.path is not None:
            self.path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in keep))


def read_training_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    checkpoint_path: Optional[Path]
    log: list


def train(exp: ExperimentConfig, out_dir=None, *, resume: bool = False,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train one agent under ``exp.regime`` and write ``checkpoint.npz`` plus ``train_log.jsonl``."""
    out = Path(out_dir) if out_dir is not None else None
    scenario = Scenario.load(exp)
    layout = PolicyLayout(obs_dim_for(scenario, exp), exp.hidden, scenario.plan.n_phases)
    if exp.regime == "maml":
        exp.maml_iterations()  # budget check before any work
    tlog = TrainingLog(out / "train_log.jsonl" if out else None, resume=resume)
    ckpt_path = out / "checkpoint.npz" if out else None
    start = None
    if resume and ckpt_path is not None and ckpt_path.exists():
        start = Checkpoint.load(ckpt_path)
        if start.fingerprint != exp.fingerprint():
            raise IncompatibleCheckpointError("checkpoint was written by a different experiment config")
        tlog.truncate_to(start.counters["episodes"])
    runner = _train_maml if exp.regime == "maml" else _train_ppo
    ckpt = runner(exp, scenario, layout, tlog, ckpt_path, start, progress)
    steps = sum(r["steps"] for r in tlog.records if r["kind"] == "episode")
    if steps != exp.total_steps:
        raise InvariantError(f"consumed {steps} environment steps, budget is {exp.total_steps}")
    tlog.write(kind="budget", regime=exp.regime, configured_steps=exp.total_steps, consumed_steps=steps)
    if ckpt_path is not None:
        ckpt.save(ckpt_path)
    return TrainResult(ckpt, ckpt_path, tlog.records)


def _fresh_state(exp, layout):
    theta = init_params(layout, np.random.default_rng(np.random.SeedSequence([exp.seed, 10])))
    return theta, AdamState.zeros_like(theta)


def _save_progress(ckpt: Checkpoint, path: Optional[Path]) -> None:
    if path is not None:
        ckpt.save(path)


def _train_ppo(exp, scenario, layout, tlog, ckpt_path, start, progress) -> Checkpoint:
    hyper = exp.ppo
    if start is None:
        theta, adam = _fresh_state(exp, layout)
        counters = {"episodes": 0, "steps": 0, "updates": 0}
        rng_state = {}
        rows = []
    else:
        theta, adam, counters, rng_state = start.theta, start.adam, dict(start.counters), start.rng_state
        b = start.buffer or {}
        rows = list(zip(b["obs"], b["actions"].tolist(), b["logp"].tolist(), b["rewards"].tolist(),
                        b["values"].tolist(), b["dones"].tolist())) if b else []
    rng_policy = _rng_from(rng_state.get("policy"), [exp.seed, 11])
    rng_domain = _rng_from(rng_state.get("domain"), [exp.seed, 12])
    rng_update = _rng_from(rng_state.get("update"), [exp.seed, 13])
    buf = RolloutBuffer()
    for o, a, lp, r, v, d in rows:
        buf.add(np.asarray(o), int(a), float(lp), float(r), float(v), bool(d))
    total = exp.total_steps

    def checkpoint() -> Checkpoint:
        rows_now = buf.rows()
        buffer = None
        if rows_now:
            obs, act, logp, rew, val, done = zip(*rows_now)
            buffer = {"obs": np.array(obs), "actions": np.array(act, dtype=np.int64), "logp": np.array(logp),
                      "rewards": np.array(rew), "values": np.array(val), "dones": np.array(done, dtype=bool)}
        return Checkpoint(exp.regime, layout, theta, adam, exp.fingerprint(), dict(counters),
                          {"policy": rng_policy.bit_generator.state, "domain": rng_domain.bit_generator.state,
                           "update": rng_update.bit_generator.state}, buffer, exp.to_dict())

    for ep in range(counters["episodes"], exp.episodes):
        domain = mean_domain() if exp.regime == "ppo_fixed" else sample_domain(rng_domain)
        env = TscEnv(scenario.source_env(exp, domain, episode_length=exp.episode_length))
        seed = episode_seed(exp.seed, ep)
        obs = env.reset(seed)
        ep_return = ep_true = 0.0
        ep_steps = 0
        while not env.done:
            a, lp, v = sample_action(theta, layout, obs, rng_policy)
            res = env.step(a)
            buf.add(obs, a, lp, res.reward, v, res.done)
            ep_return += res.reward
            ep_true += res.info["true_reward"]
            ep_steps += 1
            counters["steps"] += 1
            obs = res.observation
            if len(buf) == hyper.batch_size or counters["steps"] == total:
                last_v = 0.0 if res.done else float(forward(theta, layout, obs)[1][0])
                batch = Batch.from_trajectory(buf.finish(last_v), hyper.gamma, hyper.gae_lambda,
                                              hyper.reward_scale)
                try:
                    theta, stats = ppo_update(theta, layout, batch, hyper, adam, rng_update)
                except NonFiniteLossError:
                    if ckpt_path is not None:
                        checkpoint().save(ckpt_path.with_name("last_good.npz"))
                    raise
                counters["updates"] += 1
                tlog.write(kind="update", update=counters["updates"], batch=len(batch),
                           episodes_done=counters["episodes"], **stats)
        counters["episodes"] += 1
        rec = dict(kind="episode", episode=ep, env_seed=seed, steps=ep_steps, ret=ep_return,
                   true_ret=ep_true, domain=domain.to_dict())
        tlog.write(**rec)
        if progress:
            progress(rec)
        if exp.checkpoint_every and counters["episodes"] % exp.checkpoint_every == 0:
            _save_progress(checkpoint(), ckpt_path)
    return checkpoint()


def _train_maml(exp, scenario, layout, tlog, ckpt_path, start, progress) -> Checkpoint:
    hyper = exp.maml
    ppo = exp.ppo
    iterations = exp.maml_iterations()
    tasks = make_task_set(exp.maml_task_count, exp.maml_task_seed)
    if start is None:
        theta, adam = _fresh_state(exp, layout)
        counters = {"episodes": 0, "steps": 0, "meta_iterations": 0}
        rng_state = {}
    else:
        theta, adam, counters, rng_state = start.theta, start.adam, dict(start.counters), start.rng_state
    rng_policy = _rng_from(rng_state.get("policy"), [exp.seed, 11])
    rng_task = _rng_from(rng_state.get("task"), [exp.seed, 14])
    per_rollout = hyper.episodes_per_rollout

    def checkpoint() -> Checkpoint:
        return Checkpoint(exp.regime, layout, theta, adam, exp.fingerprint(), dict(counters),
                          {"policy": rng_policy.bit_generator.state, "task": rng_task.bit_generator.state},
                          None, exp.to_dict())

    for it in range(counters["meta_iterations"], iterations):
        task_ids = rng_task.choice(len(tasks), size=hyper.tasks_per_meta_batch, replace=False)
        task_data = []
        for tid in task_ids:
            tid = int(tid)
            domain = tasks[tid]
            env = TscEnv(scenario.source_env(exp, domain, episode_length=exp.maml_episode_length,
                                             start_time_randomization=True))

            def rollout(params, k, clip=None, _env=env, _tid=tid):
                seeds = [episode_seed(exp.seed, counters["episodes"] + j) for j in range(per_rollout)]
                traj, rets, trues = run_episodes(_env, params, layout, seeds, rng_policy)
                for j, s in enumerate(seeds):
                    tlog.write(kind="episode", episode=counters["episodes"], env_seed=s,
                               steps=_env.steps, ret=rets[j], true_ret=trues[j], task_id=_tid,
                               phase="outer" if k == "outer" else f"inner{k}", domain=domain.to_dict())
                    counters["episodes"] += 1
                    counters["steps"] += _env.steps
                    if progress:
                        progress({"episode": counters["episodes"], "ret": rets[j], "true_ret": trues[j]})
                batch = Batch.from_trajectory(traj, ppo.gamma, ppo.gae_lambda, ppo.reward_scale)
                return PolicyGradientObjective(layout, batch, clip_epsilon=clip, value_coeff=hyper.value_coeff,
                                               entropy_coeff=hyper.entropy_coeff)

            adapted, inner = maml_inner_adapt(theta, rollout, hyper.inner_lr, hyper.inner_adaptation_steps)
            outer = rollout(adapted, "outer", clip=hyper.outer_clip)
            task_data.append(TaskData(inner, outer))
        try:
            theta, losses = maml_outer_update(theta, task_data, hyper, adam)
        except NonFiniteLossError:
            if ckpt_path is not None:
                checkpoint().save(ckpt_path.with_name("last_good.npz"))
            raise
        counters["meta_iterations"] += 1
        tlog.write(kind="meta_update", iteration=it, tasks=[int(t) for t in task_ids],
                   episodes_done=counters["episodes"], first_loss=losses[0], last_loss=losses[-1])
        if exp.checkpoint_every and (it + 1) % max(1, exp.checkpoint_every // hyper.episodes_per_task()
                                                   // hyper.tasks_per_meta_batch) == 0:
            _save_progress(checkpoint(), ckpt_path)
    return checkpoint()


# -- evaluation ----------------------------------------------------------------------

@dataclass(frozen=True)
class MetricsRow:
    setting: str
    algorithm: str
    queue: float
    wait_veh: float
    wait_ped: float
    cum_reward: float
    seed_count: int

    CSV_COLUMNS = ("setting", "algorithm", "queue_m", "wait_veh_s", "wait_ped_s", "cum_reward", "seed_count")

    def csv_row(self) -> list:
        return [self.setting, self.algorithm, repr(self.queue), repr(self.wait_veh), repr(self.wait_ped),
                repr(self.cum_reward), str(self.seed_count)]


@dataclass
class EpisodeTrace:
    seed: int
    columns: list
    data: np.ndarray

    def metric(self, name: str) -> np.ndarray:
        """Per-step value of ``name`` averaged over lanes (or crosswalks)."""
        if name == "reward":
            return self.data[:, self.columns.index("reward")]
        cols = [i for i, c in enumerate(self.columns) if c.startswith(name + "_") and c[len(name) + 1:].isdigit()]
        if not cols:
            raise KeyError(f"unknown metric {name!r}")
        return self.data[:, cols].mean(axis=1)

    @property
    def cum_reward(self) -> float:
        return float(self.data[:, self.columns.index("reward")].sum())


@dataclass
class EvalResult:
    row: MetricsRow
    returns: list
    traces: list

    @property
    def median_return(self) -> float:
        return float(np.median(self.returns))


def metrics_from_traces(setting: str, algorithm: str, traces: Sequence[EpisodeTrace]) -> MetricsRow:
    return MetricsRow(setting, algorithm,
                      queue=float(np.mean([t.metric("queue").mean() for t in traces])),
                      wait_veh=float(np.mean([t.metric("wait_veh").mean() for t in traces])),
                      wait_ped=float(np.mean([t.metric("wait_ped").mean() for t in traces])),
                      cum_reward=float(np.mean([t.cum_reward for t in traces])),
                      seed_count=len(traces))


def run_policy(env_config: EnvConfig, act: Callable[[TscEnv, np.ndarray], int], seeds: Sequence[int]) -> list:
    """Play one episode per seed and return the recorded traces."""
    env = TscEnv(env_config, record=True)
    traces = []
    for seed in seeds:
        obs = env.reset(int(seed))
        while not env.done:
            obs = env.step(act(env, obs)).observation
        traces.append(EpisodeTrace(int(seed), env.trace_columns(), env.trace_array()))
    return traces


def greedy_actor(theta, layout):
    def act(env, obs):
        return int(np.argmax(forward(theta, layout, obs)[0][0]))
    return act


def random_actor(seed: int):
    rng = np.random.default_rng(seed)

    def act(env, obs):
        return int(rng.integers(env.n_phases))
    return act


def check_compatible(ckpt: Checkpoint, obs_dim: int, n_actions: int) -> None:
    if ckpt.layout.obs_dim != obs_dim or ckpt.layout.n_actions != n_actions:
        raise IncompatibleCheckpointError(
            f"checkpoint expects obs_dim={ckpt.layout.obs_dim}, n_actions={ckpt.layout.n_actions}; "
            f"environment has {obs_dim}, {n_actions}")


def fine_tune_on_target(theta, layout, exp: ExperimentConfig, scenario: Scenario, setting: EvaluationSetting,
                        alpha: Optional[float] = None, episodes: Optional[int] = None) -> tuple[np.ndarray, int]:
    """Adapt ``theta`` on the target with noisy rewards; returns ``(theta_ft, env steps used)``."""
    episodes = exp.fine_tune_episodes if episodes is None else episodes
    alpha = exp.maml.inner_lr if alpha is None else alpha
    if len(exp.fine_tune_seeds) < episodes:
        raise ValueError("not enough fine_tune_seeds for the requested episodes")
    cfg = scenario.target_env(exp, setting, episode_length=exp.maml_episode_length,
                              start_time_randomization=True, reward_mode="noisy_sensor")
    env = TscEnv(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([setting.seed & 0xFFFFFFFF, 31]))
    used = [0]

    def rollout(params, k):
        traj, _, _ = run_episodes(env, params, layout, [exp.fine_tune_seeds[k]], rng)
        used[0] += len(traj)
        batch = Batch.from_trajectory(traj, exp.ppo.gamma, exp.ppo.gae_lambda, exp.ppo.reward_scale)
        return PolicyGradientObjective(layout, batch, value_coeff=exp.maml.value_coeff,
                                       entropy_coeff=exp.maml.entropy_coeff)

    theta_ft = maml_fine_tune(theta, rollout, alpha, episodes=episodes)
    return theta_ft, used[0]


def evaluate(ckpt: Checkpoint, exp: ExperimentConfig, setting: EvaluationSetting,
             seeds: Optional[Sequence[int]] = None, *, fine_tune: bool = False, algorithm: Optional[str] = None,
             out_dir=None, scenario: Optional[Scenario] = None) -> EvalResult:
    """Greedy evaluation on the target domain under one noise setting.

    Metric columns come from the true sensor values; noise only changes what
    the policy sees. Traces and ``metrics.csv`` go to ``out_dir`` if given.
    """
    scenario = scenario or Scenario.load(exp)
    seeds = list(exp.eval_seeds if seeds is None else seeds)
    cfg = scenario.target_env(exp, setting, episode_length=exp.eval_episode_length)
    probe = TscEnv(cfg)
    check_compatible(ckpt, probe.obs_dim, probe.n_phases)
    theta = ckpt.theta
    if fine_tune:
        theta, _ = fine_tune_on_target(theta, ckpt.layout, exp, scenario, setting)
    algorithm = algorithm or (ckpt.regime + ("_ft" if fine_tune else ""))
    traces = run_policy(cfg, greedy_actor(theta, ckpt.layout), seeds)
    row = metrics_from_traces(setting.label, algorithm, traces)
    result = EvalResult(row, [t.cum_reward for t in traces], traces)
    if out_dir is not None:
        write_eval_outputs(result, Path(out_dir))
    return result


def write_eval_outputs(result: EvalResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", [result.row])
    with open(out / "returns.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "cum_reward"])
        for t in result.traces:
            w.writerow([t.seed, repr(t.cum_reward)])
    for t in result.traces:
        write_trace_csv(out / f"trace_seed{t.seed}.csv", t.columns, t.data)


def load_traces(directory) -> list[EpisodeTrace]:
    out = []
    for p in sorted(Path(directory).glob("trace_seed*.csv")):
        cols, data = read_trace_csv(p)
        out.append(EpisodeTrace(int(p.stem[len("trace_seed"):]), cols, data))
    return out


def write_metrics_csv(path, rows: Sequence[MetricsRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MetricsRow.CSV_COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow(r["setting"], r["algorithm"], float(r["queue_m"]), float(r["wait_veh_s"]),
                           float(r["wait_ped_s"]), float(r["cum_reward"]), int(r["seed_count"]))
                for r in csv.DictReader(fh)]


# -- report and time series -------------------------------------------------------------

class MissingBaselineError(ValueError):
    pass


METRIC_FIELDS = ("queue", "wait_veh", "wait_ped", "cum_reward")


@dataclass
class Report:
    rows: list          # per-setting rows followed by "Avg." rows
    relative: dict      # algorithm -> metric -> % of the baseline's Avg.

    def to_text(self) -> str:
        head = f"{'setting':<8}{'algorithm':<14}{'queue':>10}{'wait_veh':>10}{'wait_ped':>10}{'cum_reward':>13}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.setting:<8}{r.algorithm:<14}{r.queue:>10.2f}{r.wait_veh:>10.2f}"
                         f"{r.wait_ped:>10.2f}{r.cum_reward:>13.1f}")
        lines.append("")
        lines.append(f"{'relative':<22}" + "".join(f"{m:>12}" for m in METRIC_FIELDS))
        for alg, rel in self.relative.items():
            lines.append(f"{alg:<22}" + "".join(f"{rel[m]:>11.1f}%" for m in METRIC_FIELDS))
        return "\n".join(lines)


def relative_percent(value: float, baseline: float) -> float:
    return 100.0 * value / baseline if baseline != 0 else float("nan")


def report(rows: Sequence[MetricsRow], baseline: str = "ppo_fixed") -> Report:
    """Per-setting rows, an ``Avg.`` row per algorithm, and each average as % of the baseline's."""
    settings = sorted({r.setting for r in rows if r.setting != "Avg."})
    algorithms = list(dict.fromkeys(r.algorithm for r in rows))
    if baseline not in algorithms:
        raise MissingBaselineError(f"no rows for baseline {baseline!r}")
    for s in settings:
        if not any(r.setting == s and r.algorithm == baseline for r in rows):
            raise MissingBaselineError(f"setting {s} has no {baseline!r} row")
    ordered = [r for s in settings for a in algorithms for r in rows if r.setting == s and r.algorithm == a]
    avgs = {}
    for a in algorithms:
        mine = [r for r in ordered if r.algorithm == a]
        avgs[a] = MetricsRow("Avg.", a, *(float(np.mean([getattr(r, m) for r in mine])) for m in METRIC_FIELDS),
                             seed_count=sum(r.seed_count for r in mine))
    base = avgs[baseline]
    relative = {a: {m: relative_percent(getattr(avgs[a], m), getattr(base, m)) for m in METRIC_FIELDS}
                for a in algorithms}
    return Report(ordered + list(avgs.values()), relative)


TIMESERIES_METRICS = ("queue", "wave", "wait_veh", "wait_ped", "reward")


def timeseries(traces_by_algorithm: Mapping[str, Sequence[EpisodeTrace]], metric: str) -> tuple[np.ndarray, dict]:
    """Per-step mean over episodes of ``metric`` for each algorithm; returns ``(t, {alg: series})``."""
    if metric not in TIMESERIES_METRICS:
        raise KeyError(f"unknown metric {metric!r}; choose from {TIMESERIES_METRICS}")
    series, t = {}, None
    for alg, traces in traces_by_algorithm.items():
        if not traces:
            raise ValueError(f"no traces for {alg}")
        n = min(len(tr.data) for tr in traces)
        series[alg] = np.mean([tr.metric(metric)[:n] for tr in traces], axis=0)
        t_alg = traces[0].data[:n, 0]
        t = t_alg if t is None or len(t_alg) < len(t) else t
    n = len(t)
    return t, {a: s[:n] for a, s in series.items()}


def emit_timeseries(traces_by_algorithm: Mapping[str, Sequence[EpisodeTrace]], metric: str, path) -> Path:
    t, series = timeseries(traces_by_algorithm, metric)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(series))
        for i in range(len(t)):
            w.writerow([repr(float(t[i]))] + [repr(float(s[i])) for s in series.values()])
    return path


# -- bookkeeping checks ------------------------------------------------------------------

def training_steps(records: Sequence[Mapping]) -> int:
    return sum(r["steps"] for r in records if r["kind"] == "episode")


def withheld_violations(records: Sequence[Mapping], settings: Mapping[str, EvaluationSetting],
                        eval_seeds: Sequence[int]) -> list[str]:
    """Evaluation noise values or seeds that show up in a training log."""
    problems = []
    targets = {label: tuple(s.noise[k] for k in sorted(s.noise)) for label, s in settings.items()}
    train_seeds = {r["env_seed"] for r in records if r["kind"] == "episode"}
    for seed in eval_seeds:
        if seed in train_seeds:
            problems.append(f"evaluation seed {seed} used in training")
    for label, s in settings.items():
        if s.seed in train_seeds:
            problems.append(f"setting {label} seed used in training")
    for r in records:
        if r["kind"] != "episode":
            continue
        d = r["domain"]
        noise = tuple(d[k] for k in sorted(settings[next(iter(settings))].noise)) if settings else ()
        for label, vals in targets.items():
            if noise == vals:
                problems.append(f"setting {label} noise used in training episode {r['episode']}")
    return problems


def source_returns(theta, layout, exp: ExperimentConfig, domain: DomainSample, seeds: Sequence[int], *,
                   greedy: bool = True, rng_seed: int = 0, scenario: Optional[Scenario] = None,
                   episode_length: Optional[float] = None) -> list[float]:
    """True-reward returns of a policy on a source-domain instance."""
    scenario = scenario or Scenario.load(exp)
    cfg = scenario.source_env(exp, domain, episode_length=episode_length or exp.eval_episode_length)
    env = TscEnv(cfg)
    rng = np.random.default_rng(rng_seed)
    _, _, trues = run_episodes(env, theta, layout, seeds, rng, greedy=greedy)
    return trues


def random_policy_returns(exp: ExperimentConfig, domain: DomainSample, seeds: Sequence[int], *,
                          rng_seed: int = 0, scenario: Optional[Scenario] = None) -> list[float]:
    scenario = scenario or Scenario.load(exp)
    cfg = scenario.source_env(exp, domain, episode_length=exp.eval_episode_length)
    return [t.cum_reward for t in run_policy(cfg, random_actor(rng_seed), seeds)]


def adaptation_gain(theta, layout, exp: ExperimentConfig, domain: DomainSample, *, eval_seeds: Sequence[int],
                    adapt_seeds: Sequence[int], rng_seed: int = 0,
                    scenario: Optional[Scenario] = None) -> tuple[float, float]:
    """Mean true return of the sampling policy on ``domain`` before and after inner adaptation.

    Both evaluations replay the same episode seeds and action-sampling
    stream, so the difference reflects the parameter change only.
    """
    hyper = exp.maml
    need = hyper.inner_adaptation_steps * hyper.episodes_per_rollout
    if len(adapt_seeds) < need:
        raise ValueError(f"need {need} adaptation seeds, got {len(adapt_seeds)}")
    scenario = scenario or Scenario.load(exp)
    env = TscEnv(scenario.source_env(exp, domain, episode_length=exp.maml_episode_length,
                                     start_time_randomization=True))

    def mean_return(params) -> float:
        _, _, trues = run_episodes(env, params, layout, eval_seeds, np.random.default_rng(rng_seed))
        return float(np.mean(trues))

    rng_adapt = np.random.default_rng(np.random.SeedSequence([rng_seed, 41]))

    def rollout(params, k):
        seeds = adapt_seeds[k * hyper.episodes_per_rollout:(k + 1) * hyper.episodes_per_rollout]
        traj, _, _ = run_episodes(env, params, layout, seeds, rng_adapt)
        batch = Batch.from_trajectory(traj, exp.ppo.gamma, exp.ppo.gae_lambda, exp.ppo.reward_scale)
        return PolicyGradientObjective(layout, batch, value_coeff=hyper.value_coeff,
                                       entropy_coeff=hyper.entropy_coeff)

    before = mean_return(theta)
    adapted, _ = maml_inner_adapt(theta, rollout, hyper.inner_lr, hyper.inner_adaptation_steps)
    return before, mean_return(adapted)
