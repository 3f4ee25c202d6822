"""Closed-form error bounds for truncating the event history.

Every function here is pure. ``tail`` below always means
``sum_{t > T} (M_t + N_t)``, the influence mass of events older than the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from .event_process import DecayKernel

__all__ = [
    "TailSum",
    "DecaySpec",
    "MixingParams",
    "LstdBoundInputs",
    "InfeasibleHorizon",
    "tail_sum",
    "summed_tail",
    "total_tail",
    "horizon_for_epsilon",
    "suboptimality_epsilon",
    "state_cropping_bound",
    "kernel_truncation_bound",
    "policy_improvement_slack",
    "bellman_error_threshold",
    "burn_in_length",
    "lambda_markov",
    "lambda_single",
    "mixing_epsilons",
    "gram_eigenvalue_lower_bound",
    "gram_bound_feasible",
    "lstd_error_terms",
    "lstd_expected_error_bound",
    "bound_table",
]


class InfeasibleHorizon(ValueError):
    """No window up to the cap brings the tails under the target."""

    def __init__(self, cap: int, target: float):
        super().__init__(f"tail sums stay >= {target:.3g} for every T <= {cap} (infeasible at cap)")
        self.cap = cap
        self.target = target


@dataclass(frozen=True)
class TailSum:
    exact: float
    # Integral upper bound (exponential: c/rate * exp(-rate T); polynomial: c T^(1-p)/(p-1)).
    integral_bound: Optional[float] = None


@dataclass(frozen=True)
class DecaySpec:
    m_kernel: DecayKernel
    n_kernel: DecayKernel

    def __post_init__(self):
        for k in (self.m_kernel, self.n_kernel):
            if not k.summable:
                raise ValueError(f"kernel {k.describe()} is not summable")


@dataclass(frozen=True)
class MixingParams:
    beta_bar: float = 1.0
    b: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.beta_bar < 0:
            raise ValueError("beta_bar must be >= 0")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")


@dataclass(frozen=True)
class LstdBoundInputs:
    N: int
    d: int
    L: float
    gamma: float
    delta: float
    nu: float
    omega: float = 0.0
    alpha_star_norm: float = 0.0
    inherent_error: float = 0.0

    def __post_init__(self):
        if self.N <= 0 or self.d < 1:
            raise ValueError("need N > 0 and d >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        _check_gamma(self.gamma)
        if not self.nu > 0:
            raise ValueError("nu must be positive")


def _check_gamma(gamma: float) -> None:
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")


# ---------------------------------------------------------------------------
# Tail sums
# ---------------------------------------------------------------------------

def _poly_tail(c: float, p: float, T: int) -> float:
    """sum_{t > T} c / (1 + t^p): direct sum to K, Euler-Maclaurin beyond."""
    K = max(T + 1, 2048)
    t = np.arange(T + 1, K, dtype=float)
    head = math.fsum(c / (1.0 + t ** p)) if t.size else 0.0
    # int_K^inf dt/(1+t^p) = sum_j (-1)^(j-1) K^(1-jp)/(jp-1)
    integral = 0.0
    j = 1
    while True:
        term = K ** (1.0 - j * p) / (j * p - 1.0)
        integral += term if j % 2 else -term
        if term < 1e-18 * abs(integral) or j > 200:
            break
        j += 1
    fK = 1.0 / (1.0 + K ** p)
    d1 = -p * K ** (p - 1.0) / (1.0 + K ** p) ** 2
    d3 = -p * (p + 1.0) * (p + 2.0) * K ** (-p - 3.0)
    tail = integral + fK / 2.0 - d1 / 12.0 + d3 / 720.0
    return head + c * tail


def tail_sum(kernel: DecayKernel, T: int) -> TailSum:
    """sum_{t >= T+1} kernel(t)."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if not kernel.summable:
        raise ValueError(f"kernel {kernel.describe()} is not summable")
    if kernel.kind == "tabulated":
        return TailSum(math.fsum(kernel.values[T:]))
    if kernel.c == 0:
        return TailSum(0.0, 0.0)
    if kernel.kind == "exponential":
        lam = kernel.rate
        exact = kernel.c * math.exp(-lam * (T + 1)) / -math.expm1(-lam)
        return TailSum(exact, kernel.c / lam * math.exp(-lam * T))
    p = kernel.power
    bound = kernel.c * T ** (1.0 - p) / (p - 1.0) if T >= 1 else None
    return TailSum(_poly_tail(kernel.c, p, T), bound)


def summed_tail(kernel: DecayKernel, T: int, max_terms: int = 10_000_000) -> float:
    """Term-by-term tail; stops once an increment drops below 1e-16 of the running sum."""
    acc = 0.0
    t = T + 1
    for _ in range(max_terms):
        v = kernel.value(t)
        acc += v
        if v == 0.0 and (kernel.kind != "tabulated" or t > len(kernel.values)):
            break
        if v < 1e-16 * acc:
            break
        t += 1
    return acc


def total_tail(spec: DecaySpec, T: int) -> float:
    return tail_sum(spec.m_kernel, T).exact + tail_sum(spec.n_kernel, T).exact


def horizon_for_epsilon(spec: DecaySpec, gamma: float, epsilon: float,
                        cap: int = 100_000, use_integral_bound: bool = False) -> int:
    """Smallest T whose M- and N-tails are each below epsilon (1 - gamma)^2 / 4."""
    _check_gamma(gamma)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    target = epsilon * (1.0 - gamma) ** 2 / 4.0

    def tail(kernel, T):
        ts = tail_sum(kernel, T)
        if use_integral_bound and ts.integral_bound is not None:
            return ts.integral_bound
        return ts.exact

    def ok(T):
        return tail(spec.m_kernel, T) < target and tail(spec.n_kernel, T) < target

    if ok(0):
        return 0
    lo, hi = 0, 1
    while not ok(hi):
        if hi >= cap:
            raise InfeasibleHorizon(cap, target)
        lo, hi = hi, min(2 * hi, cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def suboptimality_epsilon(spec: DecaySpec, gamma: float, T: int) -> float:
    _check_gamma(gamma)
    return 2.0 / (1.0 - gamma) ** 2 * total_tail(spec, T)


def state_cropping_bound(spec: DecaySpec, gamma: float, T: int) -> float:
    """Largest value change from zeroing events older than T, for a window-T policy."""
    _check_gamma(gamma)
    return total_tail(spec, T) / (1.0 - gamma) ** 2


def kernel_truncation_bound(spec: DecaySpec, gamma: float, T: int, r_sup: float, v_trunc_sup: float) -> float:
    """Value gap between the true and the window-T kernels for an arbitrary policy."""
    _check_gamma(gamma)
    return (r_sup + gamma * v_trunc_sup) * total_tail(spec, T) / (1.0 - gamma)


def policy_improvement_slack(spec: DecaySpec, gamma: float, T: int) -> float:
    _check_gamma(gamma)
    return (2.0 + 5.0 * gamma) / (1.0 - gamma) ** 2 * total_tail(spec, T)


def bellman_error_threshold(spec: DecaySpec, gamma: float, T: int) -> float:
    _check_gamma(gamma)
    return 11.0 / (1.0 - gamma) ** 3 * total_tail(spec, T)


# ---------------------------------------------------------------------------
# beta-mixing sample complexity
# ---------------------------------------------------------------------------

def burn_in_length(N: int, delta: float, mixing: MixingParams) -> int:
    """Samples to discard: ceil((ln(2 e beta_bar N / delta) / b)^(1/kappa)), never negative."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    if mixing.beta_bar == 0 or N <= 0:
        return 0
    x = math.log(2.0 * math.e * mixing.beta_bar * N / delta) / mixing.b
    if x <= 0:
        return 0
    return math.ceil(x ** (1.0 / mixing.kappa))


def _log_plus(log_values) -> float:
    return max(0.0, *log_values)


def lambda_markov(N: int, d: int, delta: float, beta_bar: float, const: float = 16.0) -> float:
    """Lambda(N, d, delta) = 2(d+1) ln N + ln(e/delta) + ln+ max(const (6e)^(2(d+1)), beta_bar).

    ``const`` is 16 for the generalization terms and 18 for the Gram-eigenvalue bound.
    """
    log_a = math.log(const) + 2.0 * (d + 1) * math.log(6.0 * math.e)
    logs = [log_a]
    if beta_bar > 0:
        logs.append(math.log(beta_bar))
    return 2.0 * (d + 1) * math.log(N) + 1.0 - math.log(delta) + _log_plus(logs)


def lambda_single(N: int, delta: float, beta_bar: float) -> float:
    return 1.0 - math.log(delta) + math.log(max(6.0, N * beta_bar))


def _mixing_root(lam: float, N: int, mixing: MixingParams) -> float:
    return math.sqrt(2.0 * lam / N * max(lam / mixing.b, 1.0) ** (1.0 / mixing.kappa))


def mixing_epsilons(N: int, d: int, delta: float, mixing: MixingParams, L: float,
                    gamma: float, alpha_star_norm: float) -> Tuple[float, float]:
    """(eps_1, eps_2) generalization terms, with the Lambdas evaluated at ``delta`` as given."""
    _check_gamma(gamma)
    if N <= 0 or d < 1 or not 0 < delta < 1:
        raise ValueError("need N > 0, d >= 1, 0 < delta < 1")
    lam1 = lambda_markov(N, d, delta, mixing.beta_bar, const=16.0)
    lam2 = lambda_single(N, delta, mixing.beta_bar)
    eps1 = 24.0 / (1.0 - gamma) * _mixing_root(lam1, N, mixing)
    eps2 = 12.0 * (1.0 / (1.0 - gamma) + L * alpha_star_norm) * _mixing_root(lam2, N, mixing)
    return eps1, eps2


def gram_eigenvalue_lower_bound(omega: float, N: int, d: int, delta: float,
                                mixing: MixingParams, L: float) -> float:
    """High-probability lower bound nu on the smallest sample-Gram eigenvalue (0 if vacuous)."""
    lam = lambda_markov(N, d, delta, mixing.beta_bar, const=18.0)
    root = math.sqrt(omega) / 2.0 - 6.0 * L * _mixing_root(lam, N, mixing)
    return root * root if root > 0 else 0.0


def gram_bound_feasible(omega: float, N: int, d: int, delta: float,
                        mixing: MixingParams, L: float) -> bool:
    lam = lambda_markov(N, d, delta, mixing.beta_bar, const=18.0)
    need = 288.0 * L * L * lam / omega * max(lam / mixing.b, 1.0) ** (1.0 / mixing.kappa)
    return N > need


def lstd_error_terms(inputs: LstdBoundInputs, spec: DecaySpec, T: int,
                     mixing: MixingParams) -> Dict[str, float]:
    """Each additive term of the expected-error bound for clipped pathwise LSTD."""
    g = inputs.gamma
    one_m_g2 = 1.0 - g * g
    lead = 4.0 * math.sqrt(2.0) / math.sqrt(one_m_g2)
    tail = total_tail(spec, T)
    eps1, eps2 = mixing_epsilons(inputs.N, inputs.d, inputs.delta / 4.0, mixing, inputs.L,
                                 g, inputs.alpha_star_norm)
    stoch = (2.0 * inputs.L / (1.0 - g) ** 2 * math.sqrt(inputs.d / inputs.nu)
             * (math.sqrt(2.0 * math.log(8.0 * inputs.d / inputs.delta) / inputs.N) + 1.0 / inputs.N))
    return {
        "truncation": lead * 3.0 / one_m_g2 * tail,
        "inherent": lead * inputs.inherent_error,
        "stochastic": stoch,
        "eps1": eps1,
        "eps2": 2.0 * math.sqrt(2.0) * eps2,
    }


def lstd_expected_error_bound(inputs: LstdBoundInputs, spec: DecaySpec, T: int,
                              mixing: MixingParams) -> float:
    terms = lstd_error_terms(inputs, spec, T, mixing)
    return math.fsum(terms.values())


def bound_table(spec: DecaySpec, gamma: float, T: int, epsilon: Optional[float] = None,
                lstd: Optional[LstdBoundInputs] = None,
                mixing: Optional[MixingParams] = None) -> Dict[str, float]:
    """Every bound for one configuration, keyed by name."""
    tm = tail_sum(spec.m_kernel, T)
    tn = tail_sum(spec.n_kernel, T)
    out = {
        "tail_M": tm.exact,
        "tail_N": tn.exact,
    }
    if tm.integral_bound is not None:
        out["tail_M_integral"] = tm.integral_bound
    if tn.integral_bound is not None:
        out["tail_N_integral"] = tn.integral_bound
    out.update({
        "suboptimality_epsilon": suboptimality_epsilon(spec, gamma, T),
        "state_cropping_bound": state_cropping_bound(spec, gamma, T),
        "policy_improvement_slack": policy_improvement_slack(spec, gamma, T),
        "bellman_error_threshold": bellman_error_threshold(spec, gamma, T),
    })
    if epsilon is not None:
        try:
            out["horizon_for_epsilon"] = float(horizon_for_epsilon(spec, gamma, epsilon))
        except InfeasibleHorizon:
            out["horizon_for_epsilon"] = math.inf
    if mixing is not None:
        n = lstd.N if lstd is not None else 10_000
        delta = lstd.delta if lstd is not None else 0.05
        out["burn_in_length"] = float(burn_in_length(n, delta, mixing))
    if lstd is not None and mixing is not None:
        for k, v in lstd_error_terms(lstd, spec, T, mixing).items():
            out[f"lstd_{k}"] = v
        out["lstd_expected_error_bound"] = lstd_expected_error_bound(lstd, spec, T, mixing)
        if lstd.omega > 0:
            out["gram_eigenvalue_lower_bound"] = gram_eigenvalue_lower_bound(
                lstd.omega, lstd.N, lstd.d, lstd.delta, mixing, lstd.L)
    return out
