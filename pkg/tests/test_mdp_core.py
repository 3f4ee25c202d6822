import math

import numpy as np
import pytest

from exomdp.bounds import state_cropping_bound
from exomdp.event_process import DecayKernel, EventHistory, HawkesParams
from exomdp.mdp_core import (AugmentedState, FiniteChainEnv, HawkesSource, PendulumEnv, exact_truncation_gap,
                             pendulum_dynamics, read_trajectory_csv, step, truncate, wrap_angle,
                             write_trajectory_csv)
from exomdp.oracle import decode_window, tv_distance


def test_truncate_examples():
    assert truncate(EventHistory(), 0, 2).window == (0.0, 0.0, 0.0)
    h = EventHistory((1, 1, 0, 1, 1), (1.0, 2.0, 0.0, 4.0, 5.0))
    assert truncate(h, "s", 2) == AugmentedState("s", (5.0, 4.0, 0.0))
    assert truncate([0.5], 1, 3).window == (0.5, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        truncate(h, 0, -1)


def test_truncate_idempotent_on_short_histories():
    marks = [0.3, -1.0]
    once = truncate(marks, 0, 4).window
    again = truncate(list(reversed(once)), 0, 4).window
    assert once == again


def test_finite_env_rows_sum_to_one_for_every_window():
    env = FiniteChainEnv.random(3, n_states=4, n_actions=3, window=3, m_scale=0.1)
    for code in range(3 ** env.W):
        w = decode_window(code, env.W)
        Q = env.kernel_tensor(w)
        assert np.allclose(Q.sum(axis=2), 1.0, atol=1e-12, rtol=0)
        assert Q.min() >= 0
        q = env.mark_law(w)
        assert abs(q.sum() - 1.0) < 1e-12 and q.min() >= 0


def test_zero_window_is_base_kernel():
    env = FiniteChainEnv.random(1)
    assert np.array_equal(env.kernel_tensor((0, 0, 0)), env.base)


def test_single_event_shift_is_exact():
    env = FiniteChainEnv.random(2, window=3, m_scale=0.08, m_rate=0.5)
    for t in range(env.W):
        w1 = [0, 0, 0]
        w1[t] = 1
        d = 0.5 * np.abs(env.kernel_tensor(w1) - env.base).sum(axis=2)
        assert np.allclose(d, env.m[t], atol=1e-15)


def test_finite_env_validation():
    env = FiniteChainEnv.random(0)
    with pytest.raises(ValueError):
        FiniteChainEnv(env.base, env.reward * 2, env.m, env.n, env.shift_to, env.shift_from, env.mark_base)
    with pytest.raises(ValueError):
        FiniteChainEnv(env.base, env.reward, env.m, env.n, env.shift_to, env.shift_to, env.mark_base)
    with pytest.raises(ValueError):
        FiniteChainEnv(env.base, env.reward, env.m, env.n, env.shift_to, env.shift_from, env.mark_base, gamma=1.0)
    with pytest.raises(ValueError):
        env.step(AugmentedState(0, (0, 0, 0)), 5, np.random.default_rng(0))


def test_step_without_events_matches_base_kernel():
    env = FiniteChainEnv.random(5).without_events()
    rng = np.random.default_rng(0)
    aug = AugmentedState(1, (0, 0, 0))
    counts = np.zeros(env.n_states)
    for _ in range(100_000):
        res = env.step(aug, 0, rng)
        counts[res.aug.state] += 1
    assert tv_distance(counts / counts.sum(), env.base[1, 0]) < 0.01


def test_events_are_exogenous():
    env = FiniteChainEnv.random(8, m_scale=0.1)
    rng = np.random.default_rng(1)
    freq = {}
    for s in range(env.n_states):
        for a in range(env.n_actions):
            marks = [step(env, AugmentedState(s, (0, 0, 0)), a, rng=rng).mark for _ in range(20_000)]
            freq[s, a] = np.array([np.mean(np.array(marks) == m) for m in (-1, 0, 1)])
    pooled = np.mean(list(freq.values()), axis=0)
    n = 20_000
    # chi-square statistic per stratum, 2 degrees of freedom; 13.8 is the 0.999 quantile
    for f in freq.values():
        stat = n * np.sum((f - pooled) ** 2 / pooled)
        assert stat < 13.8


def test_rewards_in_unit_interval_under_fuzzing():
    env = FiniteChainEnv.random(4)
    rng = np.random.default_rng(2)
    aug = AugmentedState(0, (0, 0, 0))
    for _ in range(20_000):
        res = env.step(aug, int(rng.integers(env.n_actions)), rng)
        assert 0.0 <= res.reward <= 1.0
        aug = res.aug
    pend = PendulumEnv()
    th = rng.uniform(-10, 10, 10 ** 6)
    om = rng.uniform(-8, 8, 10 ** 6)
    a = rng.uniform(-2, 2, 10 ** 6)
    r = pend.reward(th, om, a)
    assert r.min() >= 0.0 and r.max() <= 1.0


def test_wrap_angle_range():
    x = np.array([-math.pi, math.pi, 3 * math.pi, -3 * math.pi + 1e-9, 0.0, 7.0])
    w = wrap_angle(x)
    assert np.all(w > -math.pi) and np.all(w <= math.pi)
    assert np.allclose(np.cos(w), np.cos(x)) and np.allclose(np.sin(w), np.sin(x), atol=1e-9)


def test_pendulum_rest_upright():
    env = PendulumEnv()
    nt, nd, r = env.transition(0.0, 0.0, 0.0, np.zeros(env.W))
    assert abs(nt) < 1e-12 and abs(nd) < 1e-12 and r == 1.0


def test_pendulum_injection_traced_by_hand():
    env = PendulumEnv(gain=0.5, injection=(1.0, 0.5))
    window = np.array([2.0, -1.0])
    torque = 0.3 + 0.5 * (1.0 * 2.0 + 0.5 * -1.0)
    nt, nd, _ = env.transition(0.2, 0.1, 0.3, window)
    ref_nd = 0.1 + (3 * 10.0 / 2 * math.sin(0.2) + 3.0 * torque) * 0.05
    assert nd == pytest.approx(ref_nd, abs=1e-15)
    assert nt == pytest.approx(wrap_angle(0.2 + ref_nd * 0.05), abs=1e-15)


def test_pendulum_speed_clipped():
    nt, nd = pendulum_dynamics(0.5, 7.9, 2.0 + 50.0)
    assert nd == 8.0


def test_pendulum_step_with_event_source():
    env = PendulumEnv()
    params = HawkesParams(0.5, DecayKernel.exponential(0.2, 1.0), DecayKernel.polynomial(1.0, 2.0))
    src = HawkesSource(params)
    rng = np.random.default_rng(3)
    aug = AugmentedState((0.1, 0.0), (0.0,) * env.W)
    for _ in range(50):
        res = step(env, aug, 0.0, src, rng)
        assert res.aug.window[0] == res.mark and res.aug.window[1:] == aug.window[:-1]
        aug = res.aug
    assert len(src.history) == 50
    with pytest.raises(ValueError):
        env.step(aug, 3.0, src, rng)
    with pytest.raises(ValueError):
        step(env, aug, 0.0, None, rng)


def test_truncation_gap_examples():
    env = FiniteChainEnv.random(6, n_states=2, window=3, m_scale=0.1)
    pol = np.zeros(2 * 27, dtype=np.int64)
    assert exact_truncation_gap(env.without_events(), pol, 0) == pytest.approx(0.0, abs=1e-12)
    assert exact_truncation_gap(env, pol, env.W - 1) == 0.0
    # one nonzero lag
    m = np.array([0.1, 0.0, 0.0])
    one = FiniteChainEnv(env.base, env.reward, m, np.zeros(3), env.shift_to, env.shift_from, env.mark_base, 0.9)
    gap = exact_truncation_gap(one, pol, 0)
    assert gap <= state_cropping_bound(one.decay_spec(), 0.9, 0) + 1e-12


def test_trajectory_csv_round_trip(tmp_path):
    states = np.array([[0.1, 0.2], [0.3, -0.4], [0.5, 0.6]])
    p = tmp_path / "traj.csv"
    write_trajectory_csv(p, states, [0.0, 1.0, -1.0], [0.5, 0.25, 1.0], [1, 0, 1], [0.7, 0.0, -2.0])
    assert p.read_text().splitlines()[0] == "t,state_0,state_1,action,reward,indicator,mark"
    s, a, r, e, x = read_trajectory_csv(p)
    assert np.array_equal(s, states) and np.array_equal(x, [0.7, 0.0, -2.0]) and np.array_equal(e, [1, 0, 1])
