"""Training/evaluation protocol shared by the CLI and the acceptance checks.

A learning scheduler is trained once on its own seed stream with uniform
exploration, then each evaluation seed runs a private copy of the trained
agent (learning stays on, with the regular epsilon schedule). Baselines skip
training. Evaluation seeds drive the same common random numbers for every
scheduler, so paired differences between schedulers are meaningful.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import RunSummary, summarize
from .schedulers import LearnerConfig, Scheduler, SMDPAgent, make_scheduler
from .simcore import RunResult, SimConfig, run

TRAIN_EXPLORATION = 1.0


def training_seeds(seed: int, n: int) -> list[int]:
    """Seeds for training runs, drawn from a stream disjoint from evaluation seeds."""
    ss = np.random.SeedSequence([int(seed), 0x747261696E])
    return [int(s) for s in ss.generate_state(n, dtype=np.uint32)]


def train(sim: SimConfig, sched: Scheduler, n_runs: int, seed: int = 0,
          exploration: float = TRAIN_EXPLORATION, backend: str | None = None) -> Scheduler:
    """Run ``n_runs`` training episodes in place; a no-op for non-learning schedulers."""
    if not isinstance(sched, SMDPAgent) or n_runs <= 0:
        return sched
    sched.eps_floor = exploration
    try:
        for s in training_seeds(seed, n_runs):
            run(sim, sched, seed=s, record_trace=False, backend=backend)
    finally:
        sched.eps_floor = None
    return sched


@dataclass
class Outcome:
    seed: int
    result: RunResult
    summary: RunSummary
    scheduler: Scheduler


def evaluate(sim: SimConfig, trained: Scheduler, seed: int, lam: float, record_trace: bool = True,
             backend: str | None = None) -> Outcome:
    agent = copy.deepcopy(trained)
    res = run(sim, agent, seed=seed, record_trace=record_trace, backend=backend)
    summ = summarize(res.stats, trained.name, sim.mesh, lam, seed)
    return Outcome(seed, res, summ, agent)


def prepare(sim: SimConfig, name: str, learner: LearnerConfig | None, train_runs: int,
            train_seed: int = 0, backend: str | None = None) -> Scheduler:
    sched = make_scheduler(name, sim.mesh, sim.n_levels, cfg=learner)
    return train(sim, sched, train_runs, train_seed, backend=backend)


# -- theta checkpoints ----------------------------------------------------------

CHECKPOINT_MAGIC = "# thermsched-theta v1"


def save_checkpoint(path: str | Path, agent: SMDPAgent, config_header: str = "") -> None:
    """Plain-text weights: a commented header (mode, dims, bank), then one value per line."""
    cfg = agent.cfg
    bank = cfg.bank()
    ref = "none" if agent.ref_fv is None else str(agent.ref_fv.offset)
    lines = [CHECKPOINT_MAGIC,
             f"# mode: {cfg.mode}",
             f"# dims: {len(agent.theta)}",
             f"# bank: x={bank.x} centers={','.join(f'{c:g}' for c in bank.centers)} "
             f"sigma={bank.sigma:g} rbf_mode={cfg.rbf_mode}",
             f"# updates: {agent.k}",
             f"# reference_offset: {ref}",
             f"# q_ref: {agent.q_ref!r}"]
    text = "\n".join(lines) + "\n" + config_header
    text += "".join(f"{v!r}\n" for v in agent.theta.tolist())
    Path(path).write_text(text)


def load_checkpoint(path: str | Path) -> tuple[dict[str, str], np.ndarray]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a theta checkpoint")
    meta = {}
    values = []
    for line in text[1:]:
        if line.startswith("#"):
            key, sep, val = line[1:].partition(":")
            if sep and key.strip() in ("mode", "dims", "bank", "updates", "reference_offset", "q_ref"):
                meta[key.strip()] = val.strip()
        elif line.strip():
            values.append(float(line))
    theta = np.asarray(values)
    if int(meta.get("dims", -1)) != len(theta):
        raise ValueError(f"{path}: header says {meta.get('dims')} weights, found {len(theta)}")
    return meta, theta
