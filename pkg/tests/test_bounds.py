import math

import mpmath
import numpy as np
import pytest

from exomdp.bounds import (DecaySpec, InfeasibleHorizon, LstdBoundInputs, MixingParams, bellman_error_threshold,
                           bound_table, burn_in_length, gram_bound_feasible, gram_eigenvalue_lower_bound,
                           horizon_for_epsilon, lambda_markov, lambda_single, kernel_truncation_bound,
                           lstd_error_terms, lstd_expected_error_bound, mixing_epsilons,
                           policy_improvement_slack, state_cropping_bound, suboptimality_epsilon,
                           summed_tail, tail_sum, total_tail)
from exomdp.event_process import DecayKernel

ZERO = DecaySpec(DecayKernel.zero(), DecayKernel.zero())


def rel_close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


# --- independent oracles -----------------------------------------------------

def mp_tail(kernel, T):
    with mpmath.workdps(40):
        if kernel.kind == "exponential":
            f = lambda t: kernel.c * mpmath.e ** (-kernel.rate * t)
            return float(mpmath.nsum(f, [T + 1, mpmath.inf]))
        if kernel.kind == "polynomial":
            p = kernel.power
            f = lambda t: kernel.c / (1 + mpmath.mpf(t) ** p)
            return float(mpmath.nsum(f, [T + 1, mpmath.inf], method="euler-maclaurin"))
        return float(mpmath.fsum(kernel.values[T:]))


def mp_lambda1(N, d, delta, beta_bar, const):
    with mpmath.workdps(30):
        a = const * (6 * mpmath.e) ** (2 * (d + 1))
        m = max(a, beta_bar)
        return 2 * (d + 1) * mpmath.log(N) + mpmath.log(mpmath.e / delta) + max(mpmath.log(m), 0)


def mp_lambda2(N, delta, beta_bar):
    with mpmath.workdps(30):
        return mpmath.log(mpmath.e / delta) + mpmath.log(max(6, N * beta_bar))


def mp_root(lam, N, b, kappa):
    return mpmath.sqrt(2 * lam / N * max(lam / b, 1) ** (mpmath.mpf(1) / kappa))


def mp_eps(N, d, delta, mix, L, gamma, astar):
    with mpmath.workdps(30):
        l1 = mp_lambda1(N, d, delta, mix.beta_bar, 16)
        l2 = mp_lambda2(N, delta, mix.beta_bar)
        e1 = 24 / (1 - mpmath.mpf(gamma)) * mp_root(l1, N, mix.b, mix.kappa)
        e2 = 12 * (1 / (1 - mpmath.mpf(gamma)) + L * astar) * mp_root(l2, N, mix.b, mix.kappa)
        return float(e1), float(e2)


# --- tails ---------------------------------------------------------------------

def test_tail_examples():
    assert tail_sum(DecayKernel.zero(), 3).exact == 0.0
    ts = tail_sum(DecayKernel.exponential(1.0, 1.0), 3)
    assert rel_close(ts.exact, mp_tail(DecayKernel.exponential(1.0, 1.0), 3))
    assert rel_close(ts.integral_bound, math.exp(-3))
    assert tail_sum(DecayKernel.tabulated([0.5, 0.25]), 1).exact == 0.25


@pytest.mark.parametrize("kernel", [
    DecayKernel.exponential(0.5, 1.0), DecayKernel.exponential(2.0, 0.1), DecayKernel.exponential(0.01, 3.0),
    DecayKernel.polynomial(1.0, 2.0), DecayKernel.polynomial(0.3, 1.5), DecayKernel.polynomial(2.0, 3.5),
    DecayKernel.tabulated([0.3, 0.2, 0.1, 0.05]),
])
@pytest.mark.parametrize("T", [0, 1, 2, 5, 10, 40])
def test_tail_matches_arbitrary_precision_sum(kernel, T):
    assert rel_close(tail_sum(kernel, T).exact, mp_tail(kernel, T)) or mp_tail(kernel, T) == 0.0


def test_summed_tail_agrees_with_closed_form():
    for k in (DecayKernel.exponential(0.5, 1.0), DecayKernel.exponential(1.0, 0.2),
              DecayKernel.tabulated([0.4, 0.1])):
        for T in (0, 3, 7):
            assert rel_close(summed_tail(k, T), tail_sum(k, T).exact, 1e-12) or tail_sum(k, T).exact == 0


def test_polynomial_integral_bound_dominates():
    for c, p in ((1.0, 2.0), (0.5, 1.3), (3.0, 4.0)):
        k = DecayKernel.polynomial(c, p)
        for T in (1, 2, 5, 20):
            assert tail_sum(k, T).integral_bound >= tail_sum(k, T).exact


def test_non_summable_rejected():
    with pytest.raises(ValueError):
        tail_sum(DecayKernel.polynomial(1.0, 1.0), 2)
    with pytest.raises(ValueError):
        DecaySpec(DecayKernel.polynomial(1.0, 0.5), DecayKernel.zero())


# --- horizon -------------------------------------------------------------------

def scan_horizon(spec, gamma, eps):
    target = eps * (1 - gamma) ** 2 / 4
    T = 0
    while not (mp_tail(spec.m_kernel, T) < target and mp_tail(spec.n_kernel, T) < target):
        T += 1
    return T


def test_horizon_examples():
    assert horizon_for_epsilon(ZERO, 0.9, 0.1) == 0
    e = DecayKernel.exponential(1.0, 1.0)
    spec = DecaySpec(e, e)
    assert horizon_for_epsilon(spec, 0.9, 1.0) == scan_horizon(spec, 0.9, 1.0)


@pytest.mark.parametrize("gamma,eps", [(0.5, 0.3), (0.8, 0.1), (0.9, 1.0), (0.95, 0.05), (0.99, 2.0)])
def test_horizon_matches_linear_scan(gamma, eps):
    spec = DecaySpec(DecayKernel.exponential(0.7, 0.4), DecayKernel.polynomial(0.5, 2.5))
    assert horizon_for_epsilon(spec, gamma, eps) == scan_horizon(spec, gamma, eps)


def test_horizon_monotone_and_consistent():
    spec = DecaySpec(DecayKernel.exponential(0.5, 1.0), DecayKernel.polynomial(1.0, 2.0))
    prev = 0
    for eps in (1.0, 0.5, 0.25, 0.125, 0.0625):
        T = horizon_for_epsilon(spec, 0.9, eps)
        assert T >= prev
        prev = T
        assert suboptimality_epsilon(spec, 0.9, T) <= 2 * eps


def test_horizon_infeasible_at_cap():
    spec = DecaySpec(DecayKernel.polynomial(1.0, 1.01), DecayKernel.zero())
    with pytest.raises(InfeasibleHorizon):
        horizon_for_epsilon(spec, 0.99, 1e-6, cap=1000)
    with pytest.raises(ValueError):
        horizon_for_epsilon(spec, 0.9, 0.0)


def test_integral_bound_horizon_is_conservative():
    spec = DecaySpec(DecayKernel.exponential(0.5, 1.0), DecayKernel.exponential(0.5, 1.0))
    assert horizon_for_epsilon(spec, 0.9, 0.1, use_integral_bound=True) >= horizon_for_epsilon(spec, 0.9, 0.1)


# --- constant-factor bounds --------------------------------------------------------

def tail_spec(total):
    return DecaySpec(DecayKernel.tabulated([total / 2]), DecayKernel.tabulated([total / 2]))


def test_factor_bound_examples():
    s = tail_spec(0.01)
    assert rel_close(suboptimality_epsilon(s, 0.9, 0), 2.0)
    assert rel_close(state_cropping_bound(s, 0.9, 0), 1.0)
    assert rel_close(policy_improvement_slack(tail_spec(0.1), 0.5, 0), 1.8)
    assert rel_close(bellman_error_threshold(tail_spec(0.001), 0.9, 0), 11.0)
    for f in (suboptimality_epsilon, state_cropping_bound, policy_improvement_slack, bellman_error_threshold):
        assert f(ZERO, 0.9, 3) == 0.0


def test_factor_bounds_linear_and_limits():
    k = DecayKernel.exponential(0.3, 0.8)
    s1 = DecaySpec(k, k)
    s2 = DecaySpec(k.scaled(2.0), k.scaled(2.0))
    for f in (suboptimality_epsilon, state_cropping_bound, policy_improvement_slack, bellman_error_threshold):
        assert rel_close(f(s2, 0.7, 2), 2 * f(s1, 0.7, 2), 1e-12)
    assert rel_close(policy_improvement_slack(s1, 1e-12, 2), 2 * total_tail(s1, 2), 1e-9)
    with pytest.raises(ValueError):
        state_cropping_bound(s1, 1.0, 2)


def test_kernel_truncation_bound_formula():
    s = tail_spec(0.02)
    assert rel_close(kernel_truncation_bound(s, 0.8, 0, 1.0, 3.0), (1.0 + 0.8 * 3.0) * 0.02 / 0.2)


# --- sample-complexity terms ---------------------------------------------------------

def test_burn_in_examples():
    assert burn_in_length(1000, 0.1, MixingParams(beta_bar=0.0)) == 0
    assert burn_in_length(math.e, 2.0, MixingParams(1.0, 1.0, 1.0)) == 2
    vals = [burn_in_length(n, 0.05, MixingParams(1.0, 0.1, 0.5)) for n in (10, 100, 1000, 10 ** 6)]
    assert vals == sorted(vals)


def test_burn_in_duplicate_formula():
    for N, delta, mix in ((10_000, 0.1, MixingParams(1.0, 0.05, 1.0)), (500, 0.3, MixingParams(2.0, 0.5, 0.5))):
        with mpmath.workdps(30):
            ref = int(mpmath.ceil((mpmath.log(2 * mpmath.e * mix.beta_bar * N / delta) / mix.b)
                                  ** (mpmath.mpf(1) / mix.kappa)))
        assert burn_in_length(N, delta, mix) == ref


def test_lambdas_duplicate_formula():
    for N, d, delta, bb in ((10_000, 8, 0.05, 1.0), (100, 1, 0.5, 1e30), (10 ** 6, 21, 0.01, 0.0)):
        for const in (16.0, 18.0):
            assert rel_close(lambda_markov(N, d, delta, bb, const), float(mp_lambda1(N, d, delta, bb, const)))
        if bb > 0:
            assert rel_close(lambda_single(N, delta, bb), float(mp_lambda2(N, delta, bb)))


def test_mixing_epsilons_point_and_trends():
    mix = MixingParams(1.0, 1.0, 1.0)
    e1, e2 = mixing_epsilons(10_000, 8, 0.05, mix, 1.0, 0.9, 1.0)
    r1, r2 = mp_eps(10_000, 8, 0.05, mix, 1.0, 0.9, 1.0)
    assert rel_close(e1, r1) and rel_close(e2, r2)
    big = mixing_epsilons(10 ** 8, 8, 0.05, mix, 1.0, 0.9, 1.0)
    assert big[0] < e1 and big[1] < e2
    assert mixing_epsilons(10_000, 8, 0.05, mix, 1.0, 0.9, 2.0)[1] > e2
    kappa = MixingParams(1.0, 0.2, 0.5)
    assert all(rel_close(a, b) for a, b in zip(mixing_epsilons(5000, 3, 0.1, kappa, 2.0, 0.8, 0.5),
                                               mp_eps(5000, 3, 0.1, kappa, 2.0, 0.8, 0.5)))


def test_gram_eigenvalue_bound():
    mix = MixingParams(1.0, 1.0, 1.0)
    omega, d, L = 0.5, 4, 1.0
    with mpmath.workdps(30):
        lam = mp_lambda1(10 ** 12, d, 0.05, 1.0, 18)
        ref = (mpmath.sqrt(omega) / 2 - 6 * L * mp_root(lam, 10 ** 12, 1.0, 1.0)) ** 2
    assert rel_close(gram_eigenvalue_lower_bound(omega, 10 ** 12, d, 0.05, mix, L), float(ref))
    assert gram_eigenvalue_lower_bound(omega, 10 ** 40, d, 0.05, mix, L) == pytest.approx(omega / 4, rel=1e-9)
    assert gram_eigenvalue_lower_bound(omega, 1000, d, 0.05, mix, L) == 0.0
    assert not gram_bound_feasible(omega, 1000, d, 0.05, mix, L)
    assert gram_bound_feasible(omega, 10 ** 12, d, 0.05, mix, L)


def mp_lstd_bound(inp, tail, mix):
    with mpmath.workdps(30):
        g = mpmath.mpf(inp.gamma)
        lead = 4 * mpmath.sqrt(2) / mpmath.sqrt(1 - g * g)
        first = lead * (3 / (1 - g * g) * tail + inp.inherent_error)
        stoch = (2 * inp.L / (1 - g) ** 2 * mpmath.sqrt(inp.d / mpmath.mpf(inp.nu))
                 * (mpmath.sqrt(2 * mpmath.log(8 * inp.d / mpmath.mpf(inp.delta)) / inp.N) + mpmath.mpf(1) / inp.N))
        e1, e2 = mp_eps(inp.N, inp.d, inp.delta / 4, mix, inp.L, inp.gamma, inp.alpha_star_norm)
        return float(first + stoch + e1 + 2 * mpmath.sqrt(2) * e2)


def test_lstd_bound_duplicate_formula():
    mix = MixingParams(1.0, 0.05, 1.0)
    spec = DecaySpec(DecayKernel.exponential(1.0, 1.0), DecayKernel.polynomial(1.0, 2.0))
    for T in (0, 2, 5):
        d = 8 + 2 * (T + 1) + 1
        inp = LstdBoundInputs(10_000, d, 64.0, 0.9, 0.1, 1e-3, 0.01, 3.0, 0.05)
        assert rel_close(lstd_expected_error_bound(inp, spec, T, mix),
                         mp_lstd_bound(inp, mp_tail(spec.m_kernel, T) + mp_tail(spec.n_kernel, T), mix))


def test_lstd_bound_trends():
    mix = MixingParams(1.0, 1.0, 1.0)
    inp = LstdBoundInputs(10_000, 5, 1.0, 0.9, 0.1, 0.1)
    small = DecaySpec(DecayKernel.exponential(0.1, 1.0), DecayKernel.zero())
    large = DecaySpec(DecayKernel.exponential(0.2, 1.0), DecayKernel.zero())
    assert lstd_expected_error_bound(inp, large, 1, mix) > lstd_expected_error_bound(inp, small, 1, mix)
    terms = lstd_error_terms(inp, ZERO, 1, mix)
    assert terms["truncation"] == 0.0 and terms["inherent"] == 0.0
    with pytest.raises(ValueError):
        LstdBoundInputs(100, 2, 1.0, 0.9, 1.5, 0.1)
    with pytest.raises(ValueError):
        LstdBoundInputs(100, 2, 1.0, 0.9, 0.1, 0.0)


def test_bound_table_keys():
    spec = DecaySpec(DecayKernel.exponential(0.5, 1.0), DecayKernel.exponential(0.5, 1.0))
    tab = bound_table(spec, 0.9, 3, epsilon=0.1, mixing=MixingParams())
    for key in ("tail_M", "tail_N", "tail_M_integral", "suboptimality_epsilon", "state_cropping_bound",
                "policy_improvement_slack", "bellman_error_threshold", "horizon_for_epsilon", "burn_in_length"):
        assert key in tab
    assert np.isfinite(list(tab.values())).all()
