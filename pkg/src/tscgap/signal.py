"""Safe phase action space and the traffic signal logic unit (TSLU).

Signal groups are the incoming vehicle lanes (one group per lane, in network
lane order) followed by the crosswalks. A phase is a set of green groups.
Agent phase requests go through :func:`tslu_request`; time advances with
:func:`tslu_tick`. The automaton never lets two conflicting groups be green
at once and enforces minimum green, maximum green and intergreen times.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Mapping, Optional, Sequence

import numpy as np

RED, AMBER, GREEN = 0, 1, 2


@dataclass(frozen=True)
class TsluConfig:
    min_green: float = 5.0
    max_green: float = 60.0
    amber_time: float = 3.0
    # None means every transition between distinct phases is allowed
    allowed_transitions: Optional[frozenset] = None

    def __post_init__(self):
        if not 0 < self.min_green <= self.max_green:
            raise ValueError("need 0 < min_green <= max_green")
        if self.amber_time < 0:
            raise ValueError("amber_time must be >= 0")

    def allowed(self, src: int, dst: int) -> bool:
        if src == dst:
            return False
        return self.allowed_transitions is None or (src, dst) in self.allowed_transitions


@dataclass(frozen=True, eq=False)
class SignalPlan:
    """Phase table plus the conflict and intergreen matrices.

    ``yields[g]`` lists groups that ``g`` may be green together with but must
    give way to (permissive left turns against opposing through traffic).
    """

    groups: tuple[str, ...]
    phases: tuple[frozenset, ...]
    conflicts: np.ndarray
    intergreen: np.ndarray
    yields: Mapping[int, tuple[int, ...]]
    config: TsluConfig

    def __post_init__(self):
        n = len(self.groups)
        c = self.conflicts
        if c.shape != (n, n) or self.intergreen.shape != (n, n):
            raise ValueError("matrix shapes must match the number of groups")
        if not np.array_equal(c, c.T) or c.diagonal().any():
            raise ValueError("conflict matrix must be symmetric with zero diagonal")
        if (self.intergreen < 0).any():
            raise ValueError("intergreen entries must be >= 0")
        for k, ph in enumerate(self.phases):
            idx = sorted(ph)
            if c[np.ix_(idx, idx)].any():
                raise ValueError(f"phase {k} contains conflicting groups")

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    @cached_property
    def phase_mask(self) -> np.ndarray:
        m = np.zeros((self.n_phases, len(self.groups)), dtype=bool)
        for k, ph in enumerate(self.phases):
            m[k, sorted(ph)] = True
        return m

    @cached_property
    def clearance(self) -> np.ndarray:
        """Clearance duration for every ordered phase pair."""
        n = self.n_phases
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                losing = self.phase_mask[i] & ~self.phase_mask[j]
                gaining = self.phase_mask[j] & ~self.phase_mask[i]
                ig = self.intergreen[np.ix_(losing, gaining)] * self.conflicts[np.ix_(losing, gaining)]
                c = ig.max() if ig.size else 0.0
                if losing.any():
                    c = max(c, self.config.amber_time)
                out[i, j] = c
        return out

    def next_allowed(self, phase: int) -> int:
        """First allowed successor in cyclic id order after ``phase``; ``phase`` if none."""
        n = self.n_phases
        for k in range(1, n):
            cand = (phase + k) % n
            if self.config.allowed(phase, cand):
                return cand
        return phase

    def to_dict(self) -> dict:
        n = len(self.groups)
        cfg = self.config
        return {
            "groups": list(self.groups),
            "phases": [sorted(self.groups[g] for g in ph) for ph in self.phases],
            "conflicts": [[self.groups[i], self.groups[j]] for i in range(n) for j in range(i + 1, n)
                          if self.conflicts[i, j]],
            "intergreen": {self.groups[i]: {self.groups[j]: float(self.intergreen[i, j])
                                            for j in range(n) if self.conflicts[i, j]}
                           for i in range(n)},
            "yields": {self.groups[g]: [self.groups[h] for h in hs] for g, hs in self.yields.items()},
            "tslu": {"min_green": cfg.min_green, "max_green": cfg.max_green, "amber_time": cfg.amber_time,
                     "allowed_transitions": None if cfg.allowed_transitions is None
                     else sorted([list(t) for t in cfg.allowed_transitions])},
        }


def plan_from_dict(d: Mapping) -> SignalPlan:
    groups = tuple(d["groups"])
    gi = {g: k for k, g in enumerate(groups)}
    n = len(groups)
    conflicts = np.zeros((n, n), dtype=bool)
    for a, b in d["conflicts"]:
        conflicts[gi[a], gi[b]] = conflicts[gi[b], gi[a]] = True
    intergreen = np.zeros((n, n))
    for a, row in d.get("intergreen", {}).items():
        for b, v in row.items():
            intergreen[gi[a], gi[b]] = float(v)
    t = d.get("tslu", {})
    allowed = t.get("allowed_transitions")
    cfg = TsluConfig(min_green=float(t.get("min_green", 5.0)), max_green=float(t.get("max_green", 60.0)),
                     amber_time=float(t.get("amber_time", 3.0)),
                     allowed_transitions=None if allowed is None else frozenset(tuple(x) for x in allowed))
    return SignalPlan(
        groups=groups,
        phases=tuple(frozenset(gi[g] for g in ph) for ph in d["phases"]),
        conflicts=conflicts,
        intergreen=intergreen,
        yields={gi[g]: tuple(gi[h] for h in hs) for g, hs in d.get("yields", {}).items()},
        config=cfg,
    )


def load_plan(path) -> SignalPlan:
    with open(path) as fh:
        return plan_from_dict(json.load(fh))


def default_plan_for_four_arms(approach_ids: Sequence[str], *, veh_intergreen: float = 5.0,
                               ped_intergreen: float = 6.0, config: TsluConfig = TsluConfig()) -> SignalPlan:
    """Eight-phase plan for four arms listed clockwise, two lanes each (left | through+right).

    Phases 0-1: opposing through+right pairs (with permissive lefts);
    2-3: opposing protected left pairs; 4-7: one protected left together
    with the two crosswalks it does not cross.
    """
    if len(approach_ids) != 4:
        raise ValueError("need four approaches")
    L = lambda a: 2 * (a % 4)  # noqa: E731
    TR = lambda a: 2 * (a % 4) + 1  # noqa: E731
    CW = lambda a: 8 + (a % 4)  # noqa: E731
    groups = tuple([f"{approach_ids[a]}_{k}" for a in range(4) for k in ("L", "TR")]
                   + [f"cw_{approach_ids[a]}" for a in range(4)])
    n = len(groups)
    conflicts = np.zeros((n, n), dtype=bool)

    def conflict(i, j):
        conflicts[i, j] = conflicts[j, i] = True

    for a in range(4):
        # crossing or merging vehicle streams
        for d in (1, 3):
            conflict(TR(a), TR(a + d))
            conflict(L(a), L(a + d))
            conflict(L(a), TR(a + d))
        # through+right leaves via arm a+2 (through) and a+3 (right); left via a+1
        for c in (a, a + 2, a + 3):
            conflict(TR(a), CW(c))
        for c in (a, a + 1):
            conflict(L(a), CW(c))
    yields = {L(a): (TR(a + 2),) for a in range(4)}
    phases = (
        frozenset({TR(0), TR(2), L(0), L(2)}),
        frozenset({TR(1), TR(3), L(1), L(3)}),
        frozenset({L(0), L(2)}),
        frozenset({L(1), L(3)}),
    ) + tuple(frozenset({L(a), CW(a + 2), CW(a + 3)}) for a in range(4))
    intergreen = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if conflicts[i, j]:
                intergreen[i, j] = ped_intergreen if j >= 8 else veh_intergreen
    return SignalPlan(groups, phases, conflicts, intergreen, yields, config)


# -- automaton -------------------------------------------------------------

@dataclass(frozen=True)
class TsluState:
    current_phase: int = 0
    elapsed_green: float = 0.0
    pending_target: Optional[int] = None
    clearance_total: float = 0.0
    clearance_remaining: float = 0.0

    @property
    def in_clearance(self) -> bool:
        return self.pending_target is not None


_EPS = 1e-9


def _begin_clearance(state: TsluState, target: int, plan: SignalPlan) -> TsluState:
    if target == state.current_phase:
        return state
    c = float(plan.clearance[state.current_phase, target])
    if c <= _EPS:
        return TsluState(current_phase=target)
    return replace(state, pending_target=target, clearance_total=c, clearance_remaining=c)


def tslu_request(state: TsluState, requested: int, plan: SignalPlan) -> TsluState:
    """Filter a phase request through the safety rules.

    Requests arriving during a clearance are absorbed. After max green the
    unit moves on even if the agent asks to stay.
    """
    if not 0 <= requested < plan.n_phases:
        raise ValueError(f"phase request {requested} outside 0..{plan.n_phases - 1}")
    if state.in_clearance:
        return state
    cfg = plan.config
    cur = state.current_phase
    if state.elapsed_green >= cfg.max_green - _EPS:
        target = requested if cfg.allowed(cur, requested) else plan.next_allowed(cur)
        return _begin_clearance(state, target, plan)
    if requested == cur or state.elapsed_green < cfg.min_green - _EPS:
        return state
    if cfg.allowed(cur, requested):
        return _begin_clearance(state, requested, plan)
    return state


def tslu_tick(state: TsluState, dt: float, plan: SignalPlan) -> TsluState:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if state.in_clearance:
        remaining = state.clearance_remaining - dt
        if remaining <= _EPS:
            return TsluState(current_phase=state.pending_target)
        return replace(state, clearance_remaining=remaining)
    cfg = plan.config
    elapsed = min(state.elapsed_green + dt, cfg.max_green)
    state = replace(state, elapsed_green=elapsed)
    if elapsed >= cfg.max_green - _EPS:
        state = _begin_clearance(state, plan.next_allowed(state.current_phase), plan)
    return state


def signal_states(state: TsluState, plan: SignalPlan) -> np.ndarray:
    """Per-group RED/AMBER/GREEN for the interval starting at ``state``."""
    cur = plan.phase_mask[state.current_phase]
    if not state.in_clearance:
        return np.where(cur, GREEN, RED).astype(np.int8)
    tgt = plan.phase_mask[state.pending_target]
    since = state.clearance_total - state.clearance_remaining
    out = np.full(len(plan.groups), RED, dtype=np.int8)
    out[cur & tgt] = GREEN
    if since < plan.config.amber_time - _EPS:
        out[cur & ~tgt] = AMBER
    return out
