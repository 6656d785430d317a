"""Stochastic task stream: Poisson arrivals over the task-type table, V-F scaled
execution times, and random pairings that load the routers on their xy route."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .topology import Mesh, xy_route


@dataclass(frozen=True)
class VFLevel:
    voltage: float  # V
    freq: float  # GHz


# default operating points, lowest first; action level indices refer to this order
DEFAULT_LEVELS = (
    VFLevel(0.9, 2.7),
    VFLevel(1.0, 3.0),
    VFLevel(1.1, 3.3),
    VFLevel(1.2, 3.6),
)
DEFAULT_FIXED_LEVEL = 2  # 1.1 V / 3.3 GHz for the schemes without DVFS


@dataclass(frozen=True)
class TaskTypeTable:
    type_ids: np.ndarray
    subtype_ids: np.ndarray
    names: tuple[str, ...]
    base_times: np.ndarray  # seconds at the maximum frequency
    rates: np.ndarray  # tasks/s per (type, subtype)

    def __post_init__(self) -> None:
        n = len(self.base_times)
        if not (len(self.type_ids) == len(self.subtype_ids) == len(self.rates) == n):
            raise ValueError("task table columns differ in length")
        if n == 0 or np.any(self.base_times <= 0) or np.any(self.rates < 0):
            raise ValueError("task table needs positive base times and nonnegative rates")
        if self.total_rate <= 0:
            raise ValueError("task table aggregate arrival rate must be positive")

    def __len__(self) -> int:
        return len(self.base_times)

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    @cached_property
    def probabilities(self) -> np.ndarray:
        return self.rates / self.rates.sum()

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probabilities)
        c[-1] = 1.0
        return c

    def with_total_rate(self, lam: float) -> "TaskTypeTable":
        """Same type mix, per-type rates rescaled so they sum to ``lam``."""
        if lam <= 0:
            raise ValueError(f"arrival rate must be positive, got {lam}")
        return TaskTypeTable(self.type_ids, self.subtype_ids, self.names,
                             self.base_times, self.rates * (lam / self.total_rate))

    def mean_base_time(self) -> float:
        return float(self.probabilities @ self.base_times)

    @classmethod
    def load(cls, path: str | Path) -> "TaskTypeTable":
        with open(path, newline="") as fh:
            rows = [r for r in csv.DictReader(line for line in fh if not line.startswith("#"))]
        return cls._from_rows(rows)

    @classmethod
    def default(cls) -> "TaskTypeTable":
        text = resources.files("thermsched").joinpath("data/task_types.csv").read_text()
        rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
        return cls._from_rows(rows)

    @classmethod
    def _from_rows(cls, rows) -> "TaskTypeTable":
        try:
            return cls(
                type_ids=np.array([int(r["type_id"]) for r in rows]),
                subtype_ids=np.array([int(r["subtype_id"]) for r in rows]),
                names=tuple(r.get("name") or f"type{r['type_id']}" for r in rows),
                base_times=np.array([float(r["base_time_s"]) for r in rows]),
                rates=np.array([float(r["arrival_rate"]) for r in rows]),
            )
        except KeyError as exc:
            raise ValueError(f"task table missing column {exc}") from None


@dataclass
class Pairing:
    partner_id: int
    duration: float  # s
    injection: float  # normalized, [0, 1]
    route: list[int]


@dataclass
class TaskInstance:
    id: int
    type_index: int
    arrival: float
    # per-task random draws, fixed at arrival so every scheduler sees the same stream
    pair_u: float = 1.0
    comm_time: float = 0.0
    injection: float = 0.0
    core: int | None = None
    level: int | None = None
    assigned: float | None = None
    departure: float | None = None
    exec_time: float = 0.0
    pairing: Pairing | None = None
    partner_id: int | None = None  # set on both ends while a pairing is active

    @property
    def is_paired(self) -> bool:
        return self.partner_id is not None


def next_arrival(table: TaskTypeTable, rng: np.random.Generator,
                 rate: float | None = None) -> tuple[float, int]:
    """Interarrival gap ~ Exp(rate) and a type index drawn with probability lambda_in / lambda."""
    lam = table.total_rate if rate is None else rate
    if lam <= 0:
        raise ValueError(f"arrival rate must be positive, got {lam}")
    gap = rng.exponential(1.0 / lam)
    kind = int(np.searchsorted(table.cdf, rng.random(), side="right"))
    return float(gap), min(kind, len(table) - 1)


def sample_task(task_id: int, type_index: int, now: float, rng: np.random.Generator,
                comm_mean: float) -> TaskInstance:
    pair_u, comm, inj = rng.random(), rng.exponential(comm_mean), rng.random()
    return TaskInstance(id=task_id, type_index=type_index, arrival=now,
                        pair_u=float(pair_u), comm_time=float(comm), injection=float(inj))


def exec_time(table: TaskTypeTable, type_index: int, level: int,
              levels: Sequence[VFLevel] = DEFAULT_LEVELS) -> float:
    try:
        f = levels[level].freq
    except (IndexError, TypeError):
        raise KeyError(f"unknown V-F level {level!r}") from None
    f_max = max(lv.freq for lv in levels)
    return float(table.base_times[type_index] * (f_max / f))


def try_pair(task: TaskInstance, running: Sequence[TaskInstance], mesh: Mesh,
             rng: np.random.Generator, p_pair: float) -> Pairing | None:
    """Pair a freshly placed task with a uniformly chosen unpaired running task.

    The attempt succeeds with probability ``p_pair`` (decided by the task's own
    ``pair_u`` draw) and only if some candidate exists. Candidates are taken
    in ``running`` order so a seeded ``rng`` picks deterministically.
    """
    if task.core is None:
        raise ValueError("task must be placed on a core before pairing")
    candidates = [t for t in running if t.id != task.id and not t.is_paired]
    if not candidates or task.pair_u >= p_pair:
        return None
    partner = candidates[int(rng.integers(len(candidates)))]
    return Pairing(partner_id=partner.id, duration=task.comm_time, injection=task.injection,
                   route=xy_route(mesh, task.core, partner.core))


def total_service_time(exec_s: float, pairing: Pairing | None) -> float:
    return exec_s + (pairing.duration if pairing is not None else 0.0)
