"""Task-to-core schedulers: the SMDP Q-learning agent (DVFS-Enabled and IR
feature layouts, plus the LCT/LDT temperature-only learners) and the RAND and
TBO heuristics.

Every scheduler exposes ``decide(view, record)``; the simulator calls it at
each decision epoch with the transition that ended there (``None`` on the
first epoch) and applies the returned :class:`Action`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .features import (RBF_MODES, BlockFeatures, FeatureVector, IRFeatures, RbfBank, grid_rbf, q_hat)
from .topology import Mesh, dist_from_point


@dataclass(frozen=True, order=True)
class Action:
    core: int | None
    level: int


@dataclass(frozen=True)
class LearnerConfig:
    mode: str = "dvfs"  # dvfs | ir | lct | ldt | tabular
    A: float = 50.0
    B: float = 1000.0
    eps_min: float = 0.05
    eps_decay: float = 500.0
    fixed_level: int = 2
    centers: int = 2
    rbf_centers: tuple[float, ...] | None = None  # overrides the default bank for ``centers``
    rbf_sigma: float | None = None
    rbf_mode: str = "raw"  # raw | scaled | normalized
    decision: str = "event"  # event | quota
    ref_delay: int = 250  # decisions observed before the reference pair is fixed
    t_range: tuple[float, float] = (318.0, 358.0)

    def __post_init__(self) -> None:
        if self.A <= 0 or self.B < 1:
            raise ValueError("learning-rate constants need A > 0 and B >= 1")
        if not 0.0 <= self.eps_min <= 1.0:
            raise ValueError("eps_min must lie in [0, 1]")
        if self.ref_delay < 0:
            raise ValueError("ref_delay must be nonnegative")
        if self.rbf_mode not in RBF_MODES:
            raise ValueError(f"unknown RBF mode {self.rbf_mode!r}")
        if self.decision not in ("event", "quota"):
            raise ValueError(f"unknown decision mode {self.decision!r}")
        self.bank()

    def bank(self) -> RbfBank:
        if self.rbf_centers is None and self.rbf_sigma is None:
            return RbfBank.default(self.centers)
        if self.rbf_centers is None or self.rbf_sigma is None:
            base = RbfBank.default(self.centers)
            return RbfBank(tuple(self.rbf_centers or base.centers), self.rbf_sigma or base.sigma)
        if len(self.rbf_centers) != self.centers:
            raise ValueError(f"{len(self.rbf_centers)} RBF centres given but centers={self.centers}")
        return RbfBank(tuple(self.rbf_centers), self.rbf_sigma)


def learning_rate(k: int, A: float = 50.0, B: float = 1000.0) -> float:
    if k < 0:
        raise ValueError("stage index must be nonnegative")
    return A / (B + k)


def epsilon(k: int, eps_min: float = 0.05, decay: float = 500.0) -> float:
    return max(eps_min, 1.0 / (1.0 + k / decay))


def smdp_target(reward: float, elapsed: float, q_ref: float, next_q: Sequence[float]) -> float:
    """Sampled average-reward Bellman target; an empty next action set continues with 0."""
    cont = float(np.max(next_q)) if len(next_q) else 0.0
    return reward - q_ref * elapsed + cont


def smdp_update(theta: np.ndarray, fv: FeatureVector, target: float, alpha: float) -> np.ndarray:
    """Semi-gradient step on ``(target - theta.phi)^2``; updates ``theta`` in place and returns it."""
    sl = slice(fv.offset, fv.offset + len(fv.values))
    err = target - float(theta[sl] @ fv.values)
    theta[sl] += alpha * err * fv.values
    return theta


def greedy_index(q: np.ndarray) -> int:
    """Index of the largest value; ties go to the first (lowest core, level)."""
    return int(np.argmax(q))


def select_index(q: np.ndarray, eps: float, rng: np.random.Generator) -> int:
    if len(q) == 0:
        raise AssertionError("select_action called with no feasible action")
    if eps > 0 and rng.random() < eps:
        return int(rng.integers(len(q)))
    return greedy_index(q)


@dataclass
class LearningHistory:
    k: list[int] = field(default_factory=list)
    alpha: list[float] = field(default_factory=list)
    q_ref: list[float] = field(default_factory=list)
    q_probe: list[list[float]] = field(default_factory=list)
    theta_tracked: list[list[float]] = field(default_factory=list)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: np.asarray(getattr(self, name), dtype=float)
                for name in ("k", "alpha", "q_ref", "q_probe", "theta_tracked")}


class Scheduler:
    name = "base"
    dvfs = False
    decision = "event"
    learns = False

    def start_run(self, rng: np.random.Generator) -> None:
        self.rng = rng

    def decide(self, view, record) -> Action:
        raise NotImplementedError

    def end_run(self) -> None:
        pass


class SMDPAgent(Scheduler):
    """Average-reward SMDP Q-learning with a linear value approximation.

    The unknown gain is replaced by the current value estimate at a reference
    pair: after ``ref_delay`` observed decisions (no learning meanwhile), the
    visited pair with the largest feature norm is frozen as the reference.
    """

    learns = True

    def __init__(self, features, cfg: LearnerConfig, name: str | None = None,
                 probes: Sequence[FeatureVector] = (), track_history: bool = True):
        self.features = features
        self.cfg = cfg
        self.name = name or cfg.mode
        self.dvfs = cfg.mode == "dvfs"
        self.decision = cfg.decision
        self.theta = np.zeros(features.dim)
        self.k = 0
        self.ref_fv: FeatureVector | None = None
        self.tracked: np.ndarray | None = None
        self.probes = list(probes)
        self.history = LearningHistory() if track_history else None
        self._prev_fv: FeatureVector | None = None
        self._seen = 0
        self._ref_cand: tuple[float, FeatureVector] | None = None
        self.eps_floor: float | None = None  # raised during training runs
        self.rng = np.random.default_rng(0)

    @property
    def q_ref(self) -> float:
        return q_hat(self.theta, self.ref_fv) if self.ref_fv is not None else 0.0

    def start_run(self, rng: np.random.Generator) -> None:
        self.rng = rng
        self._prev_fv = None

    def decide(self, view, record) -> Action:
        batch = self.features.batch(view, view.actions)
        if record is not None and self._prev_fv is not None and self.ref_fv is not None:
            self.learn(self._prev_fv, record.reward, record.elapsed, batch.q(self.theta))
        q = batch.q(self.theta)
        eps = epsilon(self.k, self.cfg.eps_min, self.cfg.eps_decay)
        if self.eps_floor is not None:
            eps = max(eps, self.eps_floor)
        i = select_index(q, eps, self.rng)
        fv = batch[i]
        self._seen += 1
        if self.ref_fv is None:
            self._offer_reference(fv)
        self._prev_fv = fv
        return view.actions[i]

    def _offer_reference(self, fv: FeatureVector) -> None:
        # keep the most strongly represented pair of the warm-in window; a pair
        # with near-zero features would pin the gain estimate near zero
        norm = float(fv.values @ fv.values)
        if self._ref_cand is None or norm > self._ref_cand[0]:
            self._ref_cand = (norm, FeatureVector(fv.offset, fv.values.copy(), fv.dim))
        if self._seen > self.cfg.ref_delay:
            self.ref_fv = self._ref_cand[1]
            top = np.argsort(-self.ref_fv.values, kind="stable")[:3]
            self.tracked = self.ref_fv.offset + np.sort(top)

    def learn(self, fv: FeatureVector, reward: float, elapsed: float, next_q: Sequence[float]) -> float:
        alpha = learning_rate(self.k, self.cfg.A, self.cfg.B)
        target = smdp_target(reward, elapsed, self.q_ref, next_q)
        smdp_update(self.theta, fv, target, alpha)
        self.k += 1
        if self.history is not None:
            h = self.history
            h.k.append(self.k)
            h.alpha.append(alpha)
            h.q_ref.append(self.q_ref)
            h.q_probe.append([q_hat(self.theta, p) for p in self.probes])
            h.theta_tracked.append(list(self.theta[self.tracked]))
        return target

    def end_run(self) -> None:
        self._prev_fv = None


def rand_select(idle_cores: Sequence[int], rng: np.random.Generator) -> int:
    if not idle_cores:
        raise AssertionError("no idle core")
    return int(idle_cores[int(rng.integers(len(idle_cores)))])


def tbo_select(idle_cores: Sequence[int], utilization, temps, mesh: Mesh) -> int:
    """Minimum of ``utilization / (1 + distance to centre)``; equal cost goes to the cooler core."""
    if not idle_cores:
        raise AssertionError("no idle core")
    center = mesh.center

    def key(m: int):
        weight = 1.0 / (1.0 + dist_from_point(mesh, m, center))
        return (weight * float(utilization[m]), float(temps[m]), m)

    return min(idle_cores, key=key)


class RandScheduler(Scheduler):
    name = "rand"

    def decide(self, view, record) -> Action:
        i = int(self.rng.integers(len(view.actions)))
        return view.actions[i]


class TBOScheduler(Scheduler):
    name = "tbo"

    def __init__(self, mesh: Mesh):
        self.mesh = mesh

    def decide(self, view, record) -> Action:
        idle = [a.core for a in view.actions]
        core = tbo_select(idle, view.utilization, view.temps, self.mesh)
        return view.actions[idle.index(core)]


def baseline_learner_config(mode: str, **overrides) -> LearnerConfig:
    """Temperature-only, core-only learner of the LCT (event-driven) / LDT (quota-driven) baselines."""
    mode = mode.lower()
    if mode not in ("lct", "ldt"):
        raise ValueError(f"baseline learner mode must be lct or ldt, got {mode!r}")
    return LearnerConfig(mode=mode, decision="quota" if mode == "ldt" else "event", **overrides)


def block_probes(feats: BlockFeatures, state9=(0.4,) + (0.6,) * 8, n: int = 4) -> list[FeatureVector]:
    phi = grid_rbf(np.asarray(state9), feats.bank, feats.mode)
    return [FeatureVector(a * feats.g, phi, feats.dim) for a in range(min(n, feats.n_actions))]


IR_PROBE_STATES = ((0.1, 0.5, 0.5, 0.0), (0.5, 0.5, 0.5, 0.0), (0.8, 0.5, 0.5, 1.0))


def ir_probes(feats: IRFeatures) -> list[FeatureVector]:
    rows = feats.from_descriptors(np.asarray(IR_PROBE_STATES))
    return [FeatureVector(0, r, feats.dim) for r in rows]


SCHEDULERS = ("dvfs", "ir", "lct", "ldt", "rand", "tbo")


def parameter_count(mode: str, mesh: Mesh, centers: int, n_levels: int = 4) -> int:
    """Length of the weight vector for a learner mode with ``centers`` RBF centres per dimension."""
    if centers < 1:
        raise ValueError("need at least one centre per dimension")
    x = centers
    if mode == "dvfs":
        return x ** 9 * mesh.size * n_levels
    if mode in ("lct", "ldt"):
        return x ** 9 * mesh.size
    if mode == "ir":
        return x ** 4
    raise ValueError(f"{mode!r} has no weight vector")


def make_scheduler(name: str, mesh: Mesh, n_levels: int = 4, cfg: LearnerConfig | None = None,
                   **cfg_overrides) -> Scheduler:
    name = name.lower()
    if name == "rand":
        return RandScheduler()
    if name == "tbo":
        return TBOScheduler(mesh)
    if name in ("lct", "ldt"):
        cfg = cfg or baseline_learner_config(name, **cfg_overrides)
        feats = BlockFeatures(mesh, cfg.bank(), 1, cfg.rbf_mode, cfg.t_range)
        return SMDPAgent(feats, cfg, name, probes=block_probes(feats))
    if name == "dvfs":
        cfg = cfg or LearnerConfig(mode="dvfs", **cfg_overrides)
        feats = BlockFeatures(mesh, cfg.bank(), n_levels, cfg.rbf_mode, cfg.t_range)
        return SMDPAgent(feats, cfg, name, probes=block_probes(feats))
    if name == "ir":
        cfg = cfg or LearnerConfig(mode="ir", **cfg_overrides)
        bank = cfg.bank()
        feats = IRFeatures(mesh, [bank] * 4, cfg.rbf_mode, cfg.t_range)
        return SMDPAgent(feats, cfg, name, probes=ir_probes(feats))
    raise ValueError(f"unknown scheduler {name!r}; choose from {', '.join(SCHEDULERS)}")
