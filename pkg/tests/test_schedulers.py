from types import SimpleNamespace

import numpy as np
import pytest
from scipy import stats

from thermsched.features import FeatureVector, OneHotFeatures
from thermsched.schedulers import (Action, LearnerConfig, SMDPAgent, baseline_learner_config, epsilon,
                                   greedy_index, learning_rate, make_scheduler, parameter_count,
                                   rand_select, select_index, smdp_target, smdp_update, tbo_select)
from thermsched.topology import build_mesh


def test_learning_rate():
    assert learning_rate(0) == pytest.approx(0.05)
    assert learning_rate(10 ** 9) < 1e-7
    rates = [learning_rate(k) for k in range(100)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    with pytest.raises(ValueError):
        learning_rate(-1)


def test_epsilon_schedule():
    assert epsilon(0) == 1.0
    assert epsilon(500) == pytest.approx(0.5)
    assert epsilon(10 ** 6) == 0.05


def test_target_and_empty_continuation():
    assert smdp_target(5.0, 2.0, 1.5, [3.0, 4.0]) == pytest.approx(5 - 3 + 4)
    assert smdp_target(5.0, 2.0, 1.5, []) == pytest.approx(2.0)


def test_tabular_arithmetic():
    theta = np.zeros(4)
    fv = FeatureVector(2, np.ones(1), 4)
    smdp_update(theta, fv, smdp_target(5.0, 1.0, 0.0, [0.0]), 0.05)
    assert theta[2] == pytest.approx(0.25)
    assert theta[[0, 1, 3]].tolist() == [0, 0, 0]


def test_update_direction_is_half_negative_gradient():
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = rng.normal(size=6)
        phi = rng.normal(size=6)
        target = rng.normal()
        step = smdp_update(theta.copy(), FeatureVector(0, phi, 6), target, 1.0) - theta

        def E(th):
            return (target - th @ phi) ** 2

        h = 1e-6
        grad = np.array([(E(theta + h * e) - E(theta - h * e)) / (2 * h) for e in np.eye(6)])
        np.testing.assert_allclose(step, -0.5 * grad, rtol=1e-6, atol=1e-8)


def test_q_hat_linear_and_zero_init():
    agent = make_scheduler("ir", build_mesh(4, 4))
    assert np.all(agent.theta == 0) and agent.q_ref == 0.0


def test_select_greedy_and_ties():
    rng = np.random.default_rng(0)
    assert greedy_index(np.array([1.0, 3.0, 3.0])) == 1
    q = np.array([0.0, 2.0, 1.0])
    assert select_index(q, 0.0, rng) == 1
    assert select_index(3.7 * q, 0.0, rng) == 1
    with pytest.raises(AssertionError):
        select_index(np.array([]), 0.5, rng)


def test_select_uniform_under_full_exploration():
    rng = np.random.default_rng(1)
    picks = [select_index(np.array([5.0, 0.0, 0.0, 0.0]), 1.0, rng) for _ in range(8000)]
    assert stats.chisquare(np.bincount(picks, minlength=4)).pvalue > 1e-3


def test_rand_select():
    rng = np.random.default_rng(2)
    assert rand_select([7], rng) == 7
    draws = [rand_select(list(range(5)), rng) for _ in range(10_000)]
    assert stats.chisquare(np.bincount(draws)).pvalue > 1e-3
    a = [rand_select(list(range(5)), np.random.default_rng(3)) for _ in range(3)]
    assert len(set(a)) == 1


def test_tbo_select(mesh4):
    util = np.full(16, 0.5)
    temps = np.full(16, 330.0)
    assert tbo_select([0, 5], util, temps, mesh4) == 0  # corner beats centre
    temps[3] = 320.0
    assert tbo_select([0, 3], util, temps, mesh4) == 3  # same weight, cooler wins
    assert tbo_select([9], util, temps, mesh4) == 9


def test_parameter_counts():
    m = build_mesh(5, 5)
    assert [parameter_count("dvfs", m, x) for x in (2, 3, 5)] == [51200, 1968300, 195312500]
    assert [parameter_count("ir", m, x) for x in (2, 3, 5)] == [16, 81, 625]
    assert [parameter_count("lct", m, x) for x in (2, 3)] == [12800, 492075]
    assert parameter_count("ldt", m, 2) == 12800
    with pytest.raises(ValueError):
        parameter_count("rand", m, 2)


def test_built_agents_match_counts():
    m = build_mesh(5, 5)
    assert len(make_scheduler("dvfs", m).theta) == 51200
    assert len(make_scheduler("lct", m).theta) == 12800
    assert len(make_scheduler("ir", m, centers=5).theta) == 625


def test_baseline_configs():
    assert baseline_learner_config("LCT").decision == "event"
    ldt = baseline_learner_config("ldt")
    assert ldt.decision == "quota" and ldt.mode == "ldt"
    with pytest.raises(ValueError):
        baseline_learner_config("dvfs")


def test_learner_config_validation():
    with pytest.raises(ValueError):
        LearnerConfig(A=0)
    with pytest.raises(ValueError):
        LearnerConfig(rbf_mode="cubic")
    with pytest.raises(ValueError):
        LearnerConfig(centers=3, rbf_centers=(0.1, 0.9), rbf_sigma=0.1)
    assert LearnerConfig(centers=2, rbf_centers=(0.2, 0.8), rbf_sigma=0.1).bank().centers == (0.2, 0.8)


def test_unknown_scheduler():
    with pytest.raises(ValueError):
        make_scheduler("greedy", build_mesh(2, 2))


def tabular_agent(n_states=5, n_actions=3, ref_delay=0):
    cfg = LearnerConfig(mode="tabular", ref_delay=ref_delay, eps_min=1.0)
    agent = SMDPAgent(OneHotFeatures(n_states, n_actions), cfg, track_history=False)
    agent.start_run(np.random.default_rng(0))
    return agent


def test_reference_fixed_after_delay():
    agent = tabular_agent(ref_delay=3)
    rec = None
    for k in range(6):
        agent.decide(SimpleNamespace(state_id=k % 5, actions=[0, 1, 2]), rec)
        rec = SimpleNamespace(reward=1.0, elapsed=1.0)
        if k < 3:
            assert agent.ref_fv is None and agent.k == 0
    assert agent.ref_fv is not None and agent.k > 0


def test_agent_matches_direct_tabular_rule():
    agent = tabular_agent()
    rng = np.random.default_rng(5)
    Q = np.zeros((5, 3))
    ref = None
    s, rec, prev, k = 0, None, None, 0
    for _ in range(2000):
        acts = [0, 1, 2]
        a = agent.decide(SimpleNamespace(state_id=s, actions=acts), rec)
        if prev is not None:
            ps, pa, r, t = prev
            alpha = 50 / (1000 + k)
            Q[ps, pa] = (1 - alpha) * Q[ps, pa] + alpha * (r - Q[ref] * t + Q[s].max())
            k += 1
        if ref is None:
            ref = (s, a)
        r, t = float(rng.random() * 3), float(rng.exponential())
        prev = (s, a, r, t)
        rec = SimpleNamespace(reward=r, elapsed=t)
        s = int(rng.integers(5))
    np.testing.assert_allclose(agent.theta.reshape(5, 3), Q, rtol=1e-12, atol=1e-12)


def test_history_tracks_alpha():
    from thermsched.simcore import SimConfig, run
    cfg = SimConfig(rows=2, cols=2, horizon=40.0, lam=3.0)
    agent = make_scheduler("lct", cfg.mesh, ref_delay=10)
    run(cfg, agent, seed=0)
    h = agent.history.arrays()
    assert len(h["k"]) == agent.k > 0
    np.testing.assert_allclose(h["alpha"], 50 / (1000 + h["k"] - 1))
    assert np.all(np.isfinite(h["q_ref"]))
    assert h["theta_tracked"].shape == (agent.k, 3)


def test_feasible_actions_only_idle_cores():
    from thermsched.simcore import SimConfig, run
    seen = []

    class Spy(SMDPAgent):
        def decide(self, view, record):
            seen.append(all(not view.busy[a.core] for a in view.actions))
            return super().decide(view, record)

    cfg = SimConfig(rows=2, cols=2, horizon=20.0, lam=4.0)
    base = make_scheduler("dvfs", cfg.mesh)
    spy = Spy(base.features, base.cfg, "dvfs")
    run(cfg, spy, seed=1)
    assert seen and all(seen)


def test_action_ordering():
    assert sorted([Action(2, 0), Action(1, 3), Action(1, 1)]) == [Action(1, 1), Action(1, 3), Action(2, 0)]
