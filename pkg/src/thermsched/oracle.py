"""Exact solution of a tiny scheduling SMDP, used as ground truth for the learner.

The toy chip has ``n_cores`` cores, each with a discrete heat level
``0..temp_levels-1`` and a busy flag, plus a capped count of waiting tasks.
At every state the scheduler places the head task on an idle core (if a task
waits and a core is idle) or otherwise takes the single nil action. The system
then sits in the post-decision configuration until the first of several exponential clocks
fires: an arrival (dropped when the queue is full), a completion, a busy core
heating one level or an idle core cooling one level. The reward rate is a
margin ``temp_levels - max(heat) - queue_cost * queue``.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from types import SimpleNamespace

import numpy as np

from .features import OneHotFeatures
from .schedulers import LearnerConfig, SMDPAgent

MAX_PAIRS = 10_000


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToyParams:
    n_cores: int = 2
    temp_levels: int = 3
    max_queue: int = 2
    lam: float = 2.0
    mu: float = 1.0  # completion rate
    heat_up: tuple[float, ...] = (0.3, 1.5)  # per busy core
    cool_down: float = 1.5
    queue_cost: float = 0.5


@dataclass
class ToyModel:
    params: ToyParams
    states: list[tuple]  # (heat..., busy..., queue)
    actions: list[list[int]]  # per state; action id = core, nil = n_cores
    P: list[np.ndarray]  # per state, (n_actions_s, S)
    T: list[np.ndarray]  # expected sojourn, (n_actions_s,)
    R: list[np.ndarray]  # expected one-stage reward, (n_actions_s,)
    index: dict[tuple, int] = field(default_factory=dict)
    # generative description of each (s, a): next-state ids, rates, reward rate
    _races: list[list[tuple[np.ndarray, np.ndarray, float]]] = field(default_factory=list)
    # set on a decision-epoch model: the underlying every-jump model and its state ids
    base: "ToyModel | None" = None
    base_ids: np.ndarray | None = None

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return self.params.n_cores + 1

    @property
    def nil(self) -> int:
        return self.params.n_cores

    def step(self, s: int, ai: int, rng: np.random.Generator) -> tuple[int, float, float]:
        """Sample (next state, sojourn, accumulated reward) for the ``ai``-th action of ``s``."""
        if self.base is not None:
            return self._step_epochs(s, ai, rng)
        u = rng.random(2)
        return self._jump(s, ai, float(u[0]), float(u[1]))

    def _jump(self, s: int, ai: int, u_time: float, u_next: float) -> tuple[int, float, float]:
        nxt, cum, total, rrate = self._tables[s][ai]
        if total == 0:
            return s, 1.0, rrate
        t = -math.log1p(-u_time) / total
        j = bisect.bisect_right(cum, u_next)
        return nxt[min(j, len(nxt) - 1)], t, rrate * t

    @cached_property
    def _tables(self) -> list[list[tuple[list[int], list[float], float, float]]]:
        # plain-Python race tables: sampling stays out of numpy's per-call overhead
        out = []
        for races in self._races:
            row = []
            for nxt, rates, rrate in races:
                total = float(np.sum(rates))
                cum = (np.cumsum(rates) / total).tolist() if total > 0 else []
                row.append(([int(x) for x in nxt], cum, total, float(rrate)))
            out.append(row)
        return out

    def _step_epochs(self, s: int, ai: int, rng: np.random.Generator) -> tuple[int, float, float]:
        base, local = self.base, self._local_list
        u = rng.random(64).tolist()
        x, elapsed, reward = base._jump(int(self.base_ids[s]), ai, u.pop(), u.pop())
        while local[x] < 0:  # no choice here: follow the single action until the next epoch
            if len(u) < 2:
                u = rng.random(64).tolist()
            x, t, r = base._jump(x, 0, u.pop(), u.pop())
            elapsed += t
            reward += r
        return local[x], elapsed, reward

    @cached_property
    def _local_list(self) -> list[int]:
        return self._local.tolist()

    @cached_property
    def _local(self) -> np.ndarray:
        loc = np.full(self.base.n_states, -1, dtype=np.intp)
        loc[self.base_ids] = np.arange(len(self.base_ids))
        return loc


def _post_action(p: ToyParams, s: tuple, a: int) -> tuple:
    n = p.n_cores
    heat, run, q = list(s[:n]), list(s[n:2 * n]), s[-1]
    if a != n:
        if run[a] or q == 0:
            raise OracleError(f"illegal toy action {a} in {s}")
        run[a] = 1
        q -= 1
    return tuple(heat) + tuple(run) + (q,)


def _race(p: ToyParams, y: tuple) -> tuple[list[tuple], list[float], float]:
    n = p.n_cores
    heat, run, q = list(y[:n]), list(y[n:2 * n]), y[-1]
    nxt: list[tuple] = []
    rates: list[float] = []

    def add(h, r, qq, rate):
        if rate > 0:
            nxt.append(tuple(h) + tuple(r) + (qq,))
            rates.append(rate)

    add(heat, run, min(q + 1, p.max_queue), p.lam)
    for c in range(n):
        if run[c]:
            r2 = list(run)
            r2[c] = 0
            add(heat, r2, q, p.mu)
            if heat[c] < p.temp_levels - 1:
                h2 = list(heat)
                h2[c] += 1
                add(h2, run, q, p.heat_up[c])
        elif heat[c] > 0:
            h2 = list(heat)
            h2[c] -= 1
            add(h2, run, q, p.cool_down)
    rrate = p.temp_levels - max(heat) - p.queue_cost * q
    return nxt, rates, float(rrate)


def build_toy_ctmc(params: ToyParams = ToyParams()) -> ToyModel:
    """Toy model with a decision epoch at every jump (forced and nil steps included)."""
    p = params
    if len(p.heat_up) != p.n_cores:
        raise OracleError("heat_up needs one rate per core")
    if p.temp_levels - (p.temp_levels - 1) - p.queue_cost * p.max_queue < 0:
        raise OracleError("queue_cost too large: rewards would go negative")
    n = p.n_cores
    states = [h + r + (q,) for h in itertools.product(range(p.temp_levels), repeat=n)
              for r in itertools.product(range(2), repeat=n) for q in range(p.max_queue + 1)]
    n_act = n + 1
    if len(states) * n_act > MAX_PAIRS:
        raise OracleError(f"toy model too large: {len(states)} states x {n_act} actions > {MAX_PAIRS}")
    index = {s: i for i, s in enumerate(states)}
    S = len(states)
    actions, Ps, Ts, Rs, races = [], [], [], [], []
    for s in states:
        run, q = s[n:2 * n], s[-1]
        acts = [c for c in range(n) if run[c] == 0] if q > 0 else []
        acts = acts or [n]
        P = np.zeros((len(acts), S))
        T = np.zeros(len(acts))
        R = np.zeros(len(acts))
        rs = []
        for i, a in enumerate(acts):
            y = _post_action(p, s, a)
            nxt, rates, rrate = _race(p, y)
            total = sum(rates)
            ids = np.array([index[z] for z in nxt], dtype=np.intp)
            if total == 0:  # nothing can happen: absorbing
                P[i, index[s]] = 1.0
                T[i] = 1.0
            else:
                np.add.at(P[i], ids, np.asarray(rates) / total)
                T[i] = 1.0 / total
            R[i] = rrate * T[i]
            rs.append((ids, np.asarray(rates, dtype=float), rrate))
        actions.append(acts)
        Ps.append(P)
        Ts.append(T)
        Rs.append(R)
        races.append(rs)
    return ToyModel(p, states, actions, Ps, Ts, Rs, index, races)


def restrict_to_choices(full: ToyModel) -> ToyModel:
    """Embed the jump model at its choice states (more than one action).

    Between two choice epochs the process follows the single available action;
    the accumulated time, reward and landing distribution come from the
    first-passage equations of that absorbing chain.
    """
    live = set(reachable_states(full).tolist())
    choice = np.array([i for i, a in enumerate(full.actions) if len(a) > 1 and i in live], dtype=np.intp)
    if len(choice) == 0:
        raise OracleError("the model has no decision epoch with a real choice")
    other = np.array([i for i, a in enumerate(full.actions) if len(a) == 1], dtype=np.intp)
    P1 = np.array([full.P[i][0] for i in other])
    A = np.eye(len(other)) - P1[:, other]
    try:
        hit = np.linalg.solve(A, P1[:, choice])
        r_acc = np.linalg.solve(A, np.array([full.R[i][0] for i in other]))
        t_acc = np.linalg.solve(A, np.array([full.T[i][0] for i in other]))
    except np.linalg.LinAlgError:
        raise OracleError("some forced path never reaches a choice state") from None
    Ps, Ts, Rs = [], [], []
    for i in choice:
        p_all = full.P[i]
        Ps.append(p_all[:, choice] + p_all[:, other] @ hit)
        Ts.append(full.T[i] + p_all[:, other] @ t_acc)
        Rs.append(full.R[i] + p_all[:, other] @ r_acc)
    states = [full.states[i] for i in choice]
    return ToyModel(full.params, states, [list(full.actions[i]) for i in choice], Ps, Ts, Rs,
                    {s: k for k, s in enumerate(states)}, [], base=full, base_ids=choice)


def build_toy_smdp(params: ToyParams = ToyParams(), epochs: str = "choice") -> ToyModel:
    """Toy scheduling SMDP; ``epochs="choice"`` keeps only states with a real decision."""
    full = build_toy_ctmc(params)
    if epochs == "all":
        return full
    if epochs != "choice":
        raise OracleError(f"unknown epoch rule {epochs!r}")
    return restrict_to_choices(full)


def single_state_model(R: float, T: float) -> ToyModel:
    """One state, one action: the renewal-reward case."""
    return ToyModel(ToyParams(), [(0,)], [[0]], [np.ones((1, 1))], [np.array([T])], [np.array([R])],
                    {(0,): 0}, [[(np.array([0]), np.array([1.0 / T]), R / T)]])


@dataclass
class RVIResult:
    rho: float
    h: np.ndarray  # relative values, h[ref] = 0
    Q: list[np.ndarray]  # per state, aligned with model.actions
    policy: list[int]  # greedy action id per state
    iterations: int


def relative_value_iteration(model: ToyModel, tol: float = 1e-8, max_iter: int = 1_000_000,
                             ref_state: int = 0) -> RVIResult:
    """Average-reward SMDP solved through the uniformized MDP.

    With ``tau`` below every mean sojourn, ``r~ = R/T`` and
    ``P~ = (tau/T) P + (1 - tau/T) I`` define an aperiodic MDP whose gain is
    the SMDP's ``rho*``; its relative values times ``tau`` are the SMDP's.
    """
    tau = 0.5 * min(float(T.min()) for T in model.T)
    S = model.n_states
    owner = np.concatenate([[s] * len(a) for s, a in enumerate(model.actions)]).astype(np.intp)
    starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
    Tall = np.concatenate(model.T)
    w = tau / Tall
    rt = np.concatenate(model.R) / Tall
    Pt = w[:, None] * np.vstack(model.P)
    Pt[np.arange(len(owner)), owner] += 1 - w
    h = np.zeros(S)
    span = np.inf
    for it in range(1, max_iter + 1):
        new = np.maximum.reduceat(rt + Pt @ h, starts)
        diff = new - h
        span = diff.max() - diff.min()
        h = new - new[ref_state]
        if span < tol:
            gain = float(0.5 * (diff.max() + diff.min()))
            break
    else:
        raise OracleError(f"relative value iteration did not converge in {max_iter} sweeps (span {span:.3g})")
    hv = tau * h
    Q = [R - gain * T + P @ hv for R, T, P in zip(model.R, model.T, model.P)]
    policy = [model.actions[s][int(np.argmax(q))] for s, q in enumerate(Q)]
    return RVIResult(gain, hv, Q, policy, it)


def bellman_residual(model: ToyModel, res: RVIResult) -> float:
    """max |Q - (R - rho T + P max Q)| over all pairs."""
    V = np.array([q.max() for q in res.Q])
    return max(float(np.abs(q - (R - res.rho * T + P @ V)).max())
               for q, R, T, P in zip(res.Q, model.R, model.T, model.P))


def reachable_states(model: ToyModel, start: int = 0) -> np.ndarray:
    seen = np.zeros(model.n_states, dtype=bool)
    stack = [start]
    seen[start] = True
    while stack:
        s = stack.pop()
        for row in model.P[s]:
            for z in np.flatnonzero(row):
                if not seen[z]:
                    seen[z] = True
                    stack.append(int(z))
    return np.flatnonzero(seen)


@dataclass
class LearningResult:
    agent: SMDPAgent
    rho_hat: float
    policy: list[int]
    visits: np.ndarray


TOY_EXPLORATION = 1.0


def train_tabular(model: ToyModel, n_updates: int = 200_000, seed: int = 0,
                  cfg: LearnerConfig | None = None, start: int = 0) -> LearningResult:
    """Run the SMDP Q-learning agent with one-hot features on the toy model's generative process.

    The default behaviour policy explores uniformly (off-policy Q-learning):
    the hottest states are visited rarely, and a greedy-leaning behaviour
    leaves their action gaps under-sampled.
    """
    cfg = cfg or LearnerConfig(mode="tabular", ref_delay=0, eps_min=TOY_EXPLORATION)
    agent = SMDPAgent(OneHotFeatures(model.n_states, model.n_actions), cfg, "tabular",
                      track_history=False)
    rng = np.random.default_rng(seed)
    agent.start_run(np.random.default_rng(rng.integers(2 ** 63)))
    env_rng = np.random.default_rng(rng.integers(2 ** 63))
    visits = np.zeros(model.n_states, dtype=np.int64)
    s = start
    record = None
    for _ in range(n_updates + 1):
        view = SimpleNamespace(state_id=s, actions=model.actions[s])
        a = agent.decide(view, record)
        visits[s] += 1
        s2, t, r = model.step(s, model.actions[s].index(a), env_rng)
        record = SimpleNamespace(reward=r, elapsed=t)
        s = s2
    theta = agent.theta.reshape(model.n_states, model.n_actions)
    policy = [acts[int(np.argmax(theta[st, acts]))] for st, acts in enumerate(model.actions)]
    return LearningResult(agent, agent.q_ref, policy, visits)


def policy_agreement(model: ToyModel, oracle: RVIResult, learned: list[int],
                     states: np.ndarray | None = None) -> float:
    """Share of decision states (more than one action) where the greedy actions match."""
    states = reachable_states(model) if states is None else states
    choice = [s for s in states if len(model.actions[s]) > 1]
    if not choice:
        return 1.0
    return float(np.mean([oracle.policy[s] == learned[s] for s in choice]))
