import math

import mpmath
import numpy as np
import pytest

from exomdp.event_process import (DecayKernel, EventHistory, HawkesBatch, HawkesParams, empirical_tv, erf,
                                  erfc, intensity, mark_mean, mark_tv_bound, read_history_csv,
                                  rollout_events, sample_next_marks, sample_step, write_history_csv)


def exp_params(a0=0.1, c=0.1, rate=1.0, beta=None, **kw):
    return HawkesParams(a0, DecayKernel.exponential(c, rate), beta or DecayKernel.zero(), **kw)


@pytest.mark.parametrize("x", [0.0, 1e-8, 0.1, 0.5, 1.0, 1.5, 2.0, 2.7, 3.5, 5.0, 6.5, -0.3, -2.2])
def test_erf_matches_arbitrary_precision(x):
    with mpmath.workdps(40):
        ref_erf = float(mpmath.erf(x))
        ref_erfc = float(mpmath.erfc(x))
    assert abs(erf(x) - ref_erf) <= 1e-12
    assert abs(erfc(x) - ref_erfc) <= 1e-12 * max(ref_erfc, 1e-300) + 1e-300


def test_kernel_values():
    assert DecayKernel.exponential(2.0, 0.5).value(3) == pytest.approx(2.0 * math.exp(-1.5), rel=1e-15)
    assert DecayKernel.polynomial(1.0, 2.0).value(3) == pytest.approx(0.1, rel=1e-15)
    tab = DecayKernel.tabulated([0.5, 0.25])
    assert tab.value(1) == 0.5 and tab.value(2) == 0.25 and tab.value(3) == 0.0
    assert DecayKernel.zero().table(4).tolist() == [0.0] * 4


def test_kernel_validation():
    with pytest.raises(ValueError):
        DecayKernel.tabulated([0.1, -0.2])
    with pytest.raises(ValueError):
        HawkesParams(1.2)
    with pytest.raises(ValueError):
        HawkesParams(0.1, DecayKernel.tabulated([0.1, 0.2]))


def test_stability_flag():
    assert exp_params(0.1, 0.1).stable
    assert not exp_params(0.9, 1.0).stable


def test_intensity_examples():
    p = exp_params(0.1, 0.1, 1.0)
    assert intensity(p, EventHistory()) == 0.1
    assert intensity(p, EventHistory((1,), (0.7,))) == pytest.approx(0.1 + 0.1 * math.exp(-1), abs=1e-15)
    hot = exp_params(0.9, 1.0, 0.1)
    assert intensity(hot, EventHistory((1,) * 10, (1.0,) * 10)) == 1.0


def test_mark_mean_examples():
    p = HawkesParams(0.1, mark_coupling=DecayKernel.tabulated([0.5]))
    assert mark_mean(p, EventHistory()) == 0.0
    assert mark_mean(p, EventHistory((1,), (2.0,))) == 1.0
    assert mark_mean(p, EventHistory((0, 0, 0), (0.0, 0.0, 0.0))) == 0.0


def test_history_rejects_marked_non_event():
    with pytest.raises(ValueError):
        EventHistory((0,), (0.3,))


def test_sample_step_zero_intensity():
    rng = np.random.default_rng(0)
    p = HawkesParams(0.0)
    assert all(sample_step(p, EventHistory(), rng) == (0, 0.0) for _ in range(100))


def test_sample_step_standard_normal_marks():
    p = HawkesParams(1.0)
    rng = np.random.default_rng(1)
    draws = [sample_step(p, EventHistory(), rng) for _ in range(100_000)]
    assert all(e == 1 for e, _ in draws)
    assert abs(np.mean([x for _, x in draws])) < 0.02


def test_sample_step_deterministic():
    p = exp_params(0.3, 0.2, beta=DecayKernel.polynomial(1.0, 2.0))
    h = EventHistory((1, 0, 1), (0.4, 0.0, -1.0))
    a = sample_step(p, h, np.random.default_rng(7))
    b = sample_step(p, h, np.random.default_rng(7))
    assert a == b


def test_mark_tv_bound_examples():
    z = HawkesParams(0.1)
    assert mark_tv_bound(z, 1) == 0.0
    p = HawkesParams(0.1, DecayKernel.exponential(1.0, 1.0), DecayKernel.exponential(1.0, 1.0))
    with mpmath.workdps(40):
        ref = float(mpmath.e ** -1 + mpmath.erf(mpmath.e ** -1 / (2 * mpmath.sqrt(2))))
    assert mark_tv_bound(p, 1) == pytest.approx(ref, rel=1e-12)
    assert mark_tv_bound(p, 800) <= 1e-15
    with pytest.raises(ValueError):
        mark_tv_bound(p, 0)


def test_mark_tv_bound_monotone_and_summable():
    for beta in (DecayKernel.exponential(0.5, 0.7), DecayKernel.polynomial(1.0, 2.0)):
        p = HawkesParams(0.1, DecayKernel.exponential(0.5, 1.0), beta)
        vals = [mark_tv_bound(p, t) for t in range(1, 400)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
        assert sum(vals[200:]) < 0.01 * sum(vals)


def test_rollout_examples():
    assert len(rollout_events(exp_params(), 0, 0)) == 0
    assert set(rollout_events(HawkesParams(1.0), 50, 0).indicators) == {1}
    h = rollout_events(HawkesParams(0.3), 100_000, 3)
    assert abs(np.mean(h.indicators) - 0.3) < 0.01


def test_rollout_matches_sample_step_on_prefixes():
    p = exp_params(0.2, 0.3, beta=DecayKernel.polynomial(1.0, 2.0), horizon_cap=16)
    h = rollout_events(p, 200, 11)
    rng = np.random.default_rng(11)
    grown = EventHistory()
    for _ in range(200):
        grown = grown.append(*sample_step(p, grown, rng))
    assert grown == h


def test_rollout_non_events_zero_and_deterministic():
    p = exp_params(0.2, 0.5, beta=DecayKernel.polynomial(1.0, 2.0), mark_clip=4.0)
    a = rollout_events(p, 3000, 5)
    assert a == rollout_events(p, 3000, 5)
    ind = np.array(a.indicators)
    marks = np.array(a.marks)
    assert np.all(marks[ind == 0] == 0.0)
    assert np.all(np.abs(marks) <= 4.0)


def test_batch_matches_scalar_step_law():
    p = exp_params(0.2, 0.3, beta=DecayKernel.polynomial(1.0, 2.0), horizon_cap=8)
    h = EventHistory((1, 0, 1), (0.5, 0.0, -0.25))
    hb = HawkesBatch.from_history(p, h, B=4)
    assert np.allclose(hb.intensity(), intensity(p, h))
    assert np.allclose(hb.mark_mean(), mark_mean(p, h))
    e, x = hb.step(np.random.default_rng(0))
    assert np.all(x[e == 0] == 0.0)
    assert np.array_equal(hb.e[:, 0], e.astype(float)) and np.array_equal(hb.x[:, 1], np.full(4, -0.25))


def test_sample_next_marks_rate():
    p = exp_params(0.25, 0.0)
    x = sample_next_marks(p, EventHistory(), 200_000, np.random.default_rng(2))
    assert abs(np.mean(x != 0) - 0.25) < 0.005


def test_empirical_tv_basic():
    a = np.zeros(1000)
    assert empirical_tv(a, a) == 0.0
    assert empirical_tv(np.zeros(100), np.full(100, 3.0)) == 1.0


def test_history_csv_round_trip(tmp_path):
    h = EventHistory((1, 0, 1), (0.1234567890123, 0.0, -2.5))
    path = tmp_path / "h.csv"
    write_history_csv(h, path)
    assert path.read_text().splitlines()[0] == "t,indicator,mark"
    assert read_history_csv(path) == h
