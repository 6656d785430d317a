"""Discrete-event engine: FCFS arrival queue, arrival/departure (and quota)
events, the dispatch loop and reward accumulation between decisions.

Between consecutive events powers are constant and the thermal field is
advanced exactly to the next event time. Random streams are split by purpose
(arrivals and per-task draws, pairing partner choice, scheduler, thermal
noise) so schedulers that place tasks differently still see the same task
stream.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .schedulers import Action, Scheduler
from .thermal import PowerParams, RCLattice, ThermalParams
from .topology import Mesh, build_mesh
from .workload import (DEFAULT_FIXED_LEVEL, TaskInstance, TaskTypeTable, exec_time, next_arrival,
                       sample_task, total_service_time, try_pair)


class SimulationError(RuntimeError):
    pass


class IllegalActionError(SimulationError):
    pass


class EventKind(IntEnum):
    TASK_ARRIVAL = 0
    TASK_DEPARTURE = 1
    QUOTA_TICK = 2
    PAIRING_END = 3  # internal: a pairing's route stops injecting


@dataclass(frozen=True)
class SystemState:
    temps: np.ndarray
    busy: np.ndarray
    kappa: int

    def __post_init__(self) -> None:
        if self.kappa < int(np.count_nonzero(self.busy)):
            raise SimulationError("task count below number of busy cores")

    @property
    def queue_len(self) -> int:
        return self.kappa - int(np.count_nonzero(self.busy))


@dataclass(frozen=True)
class TransitionRecord:
    s: SystemState
    a: Action
    s_next: SystemState
    reward: float  # K*s
    elapsed: float  # s


@dataclass
class DecisionView:
    """What a scheduler sees at a decision epoch."""

    time: float
    temps: np.ndarray
    busy: np.ndarray
    kappa: int
    actions: list[Action]
    partner_cores: list[int]
    utilization: np.ndarray
    state_id: int | None = None

    @property
    def queue_len(self) -> int:
        return self.kappa - int(np.count_nonzero(self.busy))


@dataclass
class SimConfig:
    rows: int = 4
    cols: int = 4
    table: TaskTypeTable = field(default_factory=TaskTypeTable.default)
    lam: float | None = None  # None keeps the table's own rates
    fixed_level: int = DEFAULT_FIXED_LEVEL
    thermal: ThermalParams = field(default_factory=ThermalParams)
    power: PowerParams = field(default_factory=PowerParams)
    t_th: float = 358.0
    p_pair: float = 0.5
    comm_mean: float | None = None  # None: mean execution time at the fixed level
    horizon: float = 300.0
    warmup_frac: float = 0.1
    quota: float = 0.1
    reward_mode: str = "integral"  # integral | point
    queue_bin: float = 1.0
    heatmap_every: float | None = None

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        if self.quota <= 0:
            raise ValueError("quota must be positive")
        if self.reward_mode not in ("integral", "point"):
            raise ValueError(f"unknown reward_mode {self.reward_mode!r}")
        if not 0 <= self.p_pair <= 1:
            raise ValueError("p_pair must lie in [0, 1]")
        if self.lam is not None:
            self.table = self.table.with_total_rate(self.lam)
        self.thermal.validate()

    @property
    def mesh(self) -> Mesh:
        return build_mesh(self.rows, self.cols)

    @property
    def n_levels(self) -> int:
        return len(self.power.levels)

    def resolved_comm_mean(self) -> float:
        if self.comm_mean is not None:
            return self.comm_mean
        f = [lv.freq for lv in self.power.levels]
        return self.table.mean_base_time() * max(f) / f[self.fixed_level]


@dataclass
class TraceRow:
    k: int
    time_s: float
    event_kind: str
    action_core: int | None
    action_level: int
    reward_Ks: float
    dt_s: float
    peak_K: float
    queue_len: int


TRACE_COLUMNS = ("k", "time_s", "event_kind", "action_core", "action_level",
                 "reward_Ks", "dt_s", "peak_K", "queue_len")


@dataclass
class RunStats:
    """Raw accumulators of one run; ``metrics.summarize`` turns them into a summary."""

    horizon: float
    warmup: float
    n_tiles: int
    peak_integral: float = 0.0  # K*s over [warmup, end]
    max_peak: float = 0.0
    service_times: list[float] = field(default_factory=list)
    exec_times: list[float] = field(default_factory=list)
    core_dyn_energy: np.ndarray | None = None  # J per tile over [warmup, end]
    rtr_dyn_energy: np.ndarray | None = None
    queue_integral: float = 0.0
    queue_bins: np.ndarray | None = None  # integral of q per bin over the whole run
    system_bins: np.ndarray | None = None  # integral of kappa (queued + in service) per bin
    queue_bin: float = 1.0
    decisions: int = 0
    arrived: int = 0
    departed: int = 0
    end_time: float = 0.0

    @property
    def window(self) -> float:
        return max(self.end_time - self.warmup, 0.0)


@dataclass
class RunResult:
    trace: list[TraceRow]
    stats: RunStats
    heatmaps: list[np.ndarray]
    final_temps: np.ndarray


def integrated_reward(times: Sequence[float], margins: Sequence[float]) -> float:
    """Trapezoidal integral of margin samples; fewer than two samples give 0."""
    if len(times) < 2:
        return 0.0
    return float(np.trapezoid(np.asarray(margins, dtype=float), np.asarray(times, dtype=float)))


def queue_length_stats(times: Sequence[float], qlens: Sequence[int], t_end: float) -> float:
    """Time average of a piecewise-constant queue length starting at ``times[0]``."""
    if len(times) == 0 or t_end <= times[0]:
        return 0.0
    t = np.append(np.asarray(times, dtype=float), t_end)
    return float(np.sum(np.diff(t) * np.asarray(qlens, dtype=float)) / (t_end - t[0]))


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("arrivals", "pairing", "scheduler", "thermal")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


class Simulator:
    def __init__(self, cfg: SimConfig, scheduler: Scheduler, seed: int = 0,
                 backend: str | None = None, record_trace: bool = True):
        self.cfg = cfg
        self.mesh = cfg.mesh
        self.scheduler = scheduler
        self.seed = seed
        self.lattice = RCLattice.for_mesh(self.mesh, cfg.thermal, backend)
        self.rngs = make_streams(seed)
        self.record_trace = record_trace
        M = self.mesh.size
        self.temps = np.full(M, cfg.thermal.t_amb)
        self.busy = np.zeros(M, dtype=bool)
        self.core_level = np.full(M, cfg.fixed_level, dtype=np.intp)
        self.injection = np.zeros(M)
        self.busy_time = np.zeros(M)
        self.on_core: list[TaskInstance | None] = [None] * M
        self.queue: deque[TaskInstance] = deque()
        self.kappa = 0
        self.now = 0.0
        self._events: list[tuple[float, int, int, int]] = []
        self._seq = 0
        self._next_id = 0
        self._pairings: dict[int, tuple[list[int], float]] = {}
        p = cfg.power
        self._dyn = np.array([p.dyn_power(l) for l in range(len(p.levels))])
        self._comm_mean = cfg.resolved_comm_mean()
        self._dvfs_levels = list(range(cfg.n_levels)) if scheduler.dvfs else [cfg.fixed_level]
        warm = cfg.warmup_frac * cfg.horizon
        n_bins = int(np.ceil(cfg.horizon / cfg.queue_bin))
        self.stats = RunStats(horizon=cfg.horizon, warmup=warm, n_tiles=M,
                              core_dyn_energy=np.zeros(M), rtr_dyn_energy=np.zeros(M),
                              queue_bins=np.zeros(n_bins), system_bins=np.zeros(n_bins),
                              queue_bin=cfg.queue_bin)
        self.trace: list[TraceRow] = []
        self.heatmaps: list[np.ndarray] = []
        self._next_snap = 0.0 if cfg.heatmap_every else np.inf
        # open transition
        self._acc_margin = 0.0
        self._last_decision: tuple[float, SystemState, Action, float] | None = None

    # -- events -------------------------------------------------------------
    def _push(self, time: float, kind: EventKind, task_id: int = -1) -> None:
        heapq.heappush(self._events, (time, self._seq, int(kind), task_id))
        self._seq += 1

    def _schedule_arrival(self) -> None:
        gap, kind = next_arrival(self.cfg.table, self.rngs["arrivals"])
        task = sample_task(self._next_id, kind, self.now + gap, self.rngs["arrivals"], self._comm_mean)
        self._next_id += 1
        self._pending_arrival = task
        self._push(task.arrival, EventKind.TASK_ARRIVAL, task.id)

    # -- physics between events --------------------------------------------
    def powers(self) -> np.ndarray:
        p = self.cfg.power
        dyn = np.where(self.busy, self._dyn[self.core_level], 0.0)
        return p.p_static + dyn + p.p_rtr_static + p.p_rtr_dyn * np.minimum(self.injection, 1.0)

    def _advance_to(self, t: float) -> None:
        if t < self.now - 1e-12:
            raise SimulationError(f"event at {t} precedes clock {self.now}")
        warm = self.stats.warmup
        if self.now < warm < t:
            self._advance_to(warm)
        dur = t - self.now
        if dur <= 0:
            return
        q = self.kappa - int(np.count_nonzero(self.busy))
        self._bin(self.stats.queue_bins, self.now, t, q)
        self._bin(self.stats.system_bins, self.now, t, self.kappa)
        powers = self.powers()
        int_m, int_p, peak = self.lattice.advance_time(self.temps, powers, dur, self.rngs["thermal"],
                                                       self.cfg.t_th)
        self._acc_margin += int_m
        self.busy_time += self.busy * dur
        if self.now >= warm:
            st = self.stats
            st.peak_integral += int_p
            st.max_peak = max(st.max_peak, peak)
            st.core_dyn_energy += np.where(self.busy, self._dyn[self.core_level], 0.0) * dur
            st.rtr_dyn_energy += self.cfg.power.p_rtr_dyn * np.minimum(self.injection, 1.0) * dur
            st.queue_integral += q * dur
        self.now = t

    def _bin(self, bins: np.ndarray, t0: float, t1: float, q: int) -> None:
        if q == 0:
            return
        w = self.stats.queue_bin
        b = int(t0 / w)
        while t0 < t1 and b < len(bins):
            edge = min((b + 1) * w, t1)
            bins[b] += q * (edge - t0)
            t0 = edge
            b += 1

    # -- decisions -----------------------------------------------------------
    def snapshot(self) -> SystemState:
        return SystemState(self.temps.copy(), self.busy.copy(), self.kappa)

    def feasible_actions(self) -> list[Action]:
        idle = np.flatnonzero(~self.busy)
        return [Action(int(m), l) for m in idle for l in self._dvfs_levels]

    def view(self) -> DecisionView:
        running = sorted((t for t in self.on_core if t is not None), key=lambda t: t.id)
        partners = [t.core for t in running if not t.is_paired]
        util = self.busy_time / self.now if self.now > 0 else np.zeros(self.mesh.size)
        return DecisionView(self.now, self.temps, self.busy, self.kappa, self.feasible_actions(),
                            partners, util)

    def _close_transition(self) -> TransitionRecord | None:
        if self._last_decision is None:
            return None
        t0, s0, a0, m0 = self._last_decision
        elapsed = self.now - t0
        if self.cfg.reward_mode == "integral":
            reward = self._acc_margin
        else:
            reward = m0 * elapsed
        rec = TransitionRecord(s0, a0, self.snapshot(), reward, elapsed)
        if self.record_trace and self.trace:
            row = self.trace[-1]
            row.reward_Ks, row.dt_s = reward, elapsed
        return rec

    def decide(self, kind: EventKind) -> None:
        record = self._close_transition()
        view = self.view()
        action = self.scheduler.decide(view, record)
        peak = float(self.temps.max())
        if self.record_trace:
            self.trace.append(TraceRow(self.stats.decisions, self.now, kind.name, action.core,
                                       action.level, 0.0, 0.0, peak, view.queue_len))
        state = self.snapshot()
        self.assign_task(action)
        self._acc_margin = 0.0
        self._last_decision = (self.now, state, action, max(self.cfg.t_th - peak, 0.0))
        self.stats.decisions += 1

    def assign_task(self, action: Action) -> TaskInstance:
        """Bind the head-of-line task to ``action.core`` at ``action.level``."""
        m = action.core
        if m is None:
            raise IllegalActionError("nil action with a waiting task and an idle core")
        if self.busy[m]:
            raise IllegalActionError(f"core {m} is busy")
        if not self.queue:
            raise IllegalActionError("no waiting task")
        if action.level not in self._dvfs_levels:
            raise IllegalActionError(f"level {action.level} not allowed for this scheduler")
        task = self.queue.popleft()
        task.core, task.level, task.assigned = m, action.level, self.now
        task.exec_time = exec_time(self.cfg.table, task.type_index, action.level,
                                   self.cfg.power.levels)
        running = sorted((t for t in self.on_core if t is not None), key=lambda t: t.id)
        pairing = try_pair(task, running, self.mesh, self.rngs["pairing"], self.cfg.p_pair)
        if pairing is not None:
            task.pairing = pairing
            task.partner_id = pairing.partner_id
            partner = next(t for t in running if t.id == pairing.partner_id)
            partner.partner_id = task.id
            self.injection[pairing.route] += pairing.injection
            self._pairings[task.id] = (pairing.route, pairing.injection)
            self._push(self.now + pairing.duration, EventKind.PAIRING_END, task.id)
        self.busy[m] = True
        self.core_level[m] = action.level
        self.on_core[m] = task
        self._push(self.now + total_service_time(task.exec_time, pairing), EventKind.TASK_DEPARTURE, task.id)
        return task

    def _depart(self, task_id: int) -> None:
        m = next(i for i, t in enumerate(self.on_core) if t is not None and t.id == task_id)
        task = self.on_core[m]
        task.departure = self.now
        self.on_core[m] = None
        self.busy[m] = False
        self.kappa -= 1
        self.stats.departed += 1
        if task.arrival >= self.stats.warmup:
            self.stats.service_times.append(task.departure - task.arrival)
            self.stats.exec_times.append(task.exec_time)

    # -- main loop -------------------------------------------------------------
    def run(self, max_decisions: int | None = None) -> RunResult:
        cfg = self.cfg
        self.scheduler.start_run(self.rngs["scheduler"])
        quota_mode = self.scheduler.decision == "quota"
        self._schedule_arrival()
        if quota_mode:
            self._push(cfg.quota, EventKind.QUOTA_TICK)
        while self._events:
            t, _, kind, tid = self._events[0]
            if t > cfg.horizon:
                break
            heapq.heappop(self._events)
            self._advance_to(t)
            kind = EventKind(kind)
            while self.now >= self._next_snap:
                self.heatmaps.append(self.temps.reshape(self.mesh.rows, self.mesh.cols).copy())
                self._next_snap += cfg.heatmap_every
            if kind is EventKind.TASK_ARRIVAL:
                self.queue.append(self._pending_arrival)
                self.kappa += 1
                self.stats.arrived += 1
                self._schedule_arrival()
            elif kind is EventKind.TASK_DEPARTURE:
                self._depart(tid)
            elif kind is EventKind.PAIRING_END:
                route, inj = self._pairings.pop(tid)
                self.injection[route] -= inj
                np.maximum(self.injection, 0.0, out=self.injection)
            else:
                self._push(self.now + cfg.quota, EventKind.QUOTA_TICK)
            trigger = (kind is EventKind.QUOTA_TICK) if quota_mode else kind in (
                EventKind.TASK_ARRIVAL, EventKind.TASK_DEPARTURE)
            # a quota tick drains the queue onto idle cores, one decision per task
            stop = False
            while trigger and self.queue and not self.busy.all():
                self.decide(kind)
                if max_decisions is not None and self.stats.decisions >= max_decisions:
                    stop = True
                    break
                trigger = quota_mode
            if stop:
                break
            self._check_invariants()
        else:
            raise SimulationError("event queue ran dry")
        if max_decisions is None or self.stats.decisions < max_decisions:
            self._advance_to(cfg.horizon)
        self._close_transition()
        self.scheduler.end_run()
        self.stats.end_time = self.now
        return RunResult(self.trace, self.stats, self.heatmaps, self.temps.copy())

    def _check_invariants(self) -> None:
        in_service = int(np.count_nonzero(self.busy))
        if self.kappa != in_service + len(self.queue):
            raise SimulationError("task conservation violated")
        if self.stats.arrived != self.stats.departed + self.kappa:
            raise SimulationError("arrivals do not match departures plus tasks in system")


def run(cfg: SimConfig, scheduler: Scheduler, seed: int = 0, max_decisions: int | None = None,
        backend: str | None = None, record_trace: bool = True) -> RunResult:
    return Simulator(cfg, scheduler, seed, backend, record_trace).run(max_decisions)
