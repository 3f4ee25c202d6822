"""Policy iteration over window policies.

A window policy sees the current state and the T+1 most recent marks. Each
iteration evaluates the policy's true value with the older marks averaged out
under a completion law (``mu``), then acts greedily on one-step lookahead in
which older marks are again drawn from a completion law.

Two variants:

* exact, on :class:`FiniteChainEnv` -- completions are enumerated and values come
  from the oracle; this is the object the improvement guarantees talk about;
* Monte Carlo, for any environment -- completions and returns are sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import oracle
from .event_process import EventHistory, HawkesParams, rollout_events, sample_next_marks
from .mdp_core import AugmentedState, FiniteChainEnv, HawkesSource, PendulumEnv

__all__ = [
    "McConfig",
    "WindowPolicy",
    "completion_law",
    "lift_policy",
    "window_value",
    "lookahead_values",
    "evaluate_policy",
    "improve_policy",
    "run_policy_iteration",
    "bellman_error_map",
    "IterationRecord",
    "IterationReport",
    "check_improvement_guarantees",
    "mc_window_value",
    "pendulum_evaluate",
    "pendulum_greedy_policy",
]

TIE_TOL = 1e-12


@dataclass(frozen=True)
class McConfig:
    n_completions: int = 8
    n_transition_samples: int = 8
    rollout_horizon: Optional[int] = None
    tolerance: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_completions < 1 or self.n_transition_samples < 1:
            raise ValueError("sample counts must be >= 1")
        if self.rollout_horizon is not None and self.rollout_horizon < 0:
            raise ValueError("rollout_horizon must be >= 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")

    def horizon(self, gamma: float) -> int:
        """Rollout length H with gamma^H / (1 - gamma) <= tolerance."""
        if gamma == 0:
            return 1 if self.rollout_horizon is None else max(1, self.rollout_horizon)
        need = math.ceil(math.log(self.tolerance * (1 - gamma)) / math.log(gamma))
        need = max(need, 1)
        if self.rollout_horizon is None:
            return need
        if gamma ** self.rollout_horizon / (1 - gamma) > self.tolerance:
            raise ValueError(f"rollout_horizon {self.rollout_horizon} leaves a tail above "
                             f"{self.tolerance}; need at least {need}")
        return self.rollout_horizon

    def tail(self, gamma: float) -> float:
        H = self.horizon(gamma)
        return gamma ** H / (1 - gamma)


@dataclass(frozen=True)
class WindowPolicy:
    """Deterministic policy on (state, most recent T+1 marks).

    Either ``table`` (finite env; indexed by ``s * 3**(T+1) + code``) or ``rule``
    (a callable ``(state, window) -> action`` given only the first T+1 marks).
    """

    T: int
    table: Optional[np.ndarray] = None
    rule: Optional[Callable] = None
    name: str = "policy"

    def __post_init__(self):
        if (self.table is None) == (self.rule is None):
            raise ValueError("give exactly one of table or rule")
        if self.table is not None:
            t = np.array(self.table, dtype=np.int64)
            t.setflags(write=False)
            object.__setattr__(self, "table", t)

    def __call__(self, state, window):
        recent = tuple(window[: self.T + 1])
        if self.table is not None:
            n_codes = 3 ** (self.T + 1)
            return int(self.table[int(state) * n_codes + oracle.encode_window(recent)])
        return self.rule(state, recent)

    def same_as(self, other: "WindowPolicy") -> bool:
        return (self.table is not None and other.table is not None
                and self.T == other.T and np.array_equal(self.table, other.table))


# ---------------------------------------------------------------------------
# Exact variant
# ---------------------------------------------------------------------------

def _effective_T(env: FiniteChainEnv, T: int) -> int:
    if T < 0:
        raise ValueError("T must be >= 0")
    return min(T, env.W - 1)


def completion_law(env: FiniteChainEnv, T: int) -> np.ndarray:
    """mu(older | recent): (3**(T+1), 3**(W-T-1)) conditional law of the older marks.

    The law is the stationary distribution of the mark-window chain conditioned
    on the recent T+1 marks, i.e. older events drawn from the event process itself.
    Rows with zero stationary mass fall back to uniform.
    """
    T = _effective_T(env, T)
    W = env.W
    nw = 3 ** W
    low = 3 ** (W - 1) if W > 1 else 1
    P = np.zeros((nw, nw))
    for code in range(nw):
        q = env.mark_law(oracle.decode_window(code, W))
        base = 3 * (code % low) if W > 1 else 0
        for d in range(3):
            P[code, d + base] += q[d]
    # stationary law: left eigenvector via a linear solve with the normalisation row
    A = np.vstack([P.T - np.eye(nw), np.ones((1, nw))])
    rhs = np.zeros(nw + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    n_recent = 3 ** (T + 1)
    mu = pi.reshape(3 ** (W - T - 1), n_recent).T  # code = recent + n_recent * older
    tot = mu.sum(axis=1, keepdims=True)
    uniform = np.full_like(mu, 1.0 / mu.shape[1])
    return np.where(tot > 0, mu / np.where(tot > 0, tot, 1.0), uniform)


def lift_policy(env: FiniteChainEnv, policy: WindowPolicy) -> np.ndarray:
    """Window policy as an action array over the full augmented chain."""
    if policy.table is None:
        raise ValueError("exact variant needs a table policy")
    T = _effective_T(env, policy.T)
    nw = 3 ** env.W
    idx = np.arange(env.n_states * nw)
    s, code = np.divmod(idx, nw)
    return policy.table[s * 3 ** (T + 1) + code % 3 ** (T + 1)]


def window_value(env: FiniteChainEnv, v_full: np.ndarray, T: int, mu: Optional[np.ndarray] = None) -> np.ndarray:
    """V_hat(s, recent) = sum_older mu(older | recent) V(s, recent + older); shape (S, 3**(T+1))."""
    T = _effective_T(env, T)
    mu = completion_law(env, T) if mu is None else mu
    n_recent = 3 ** (T + 1)
    V = v_full.reshape(env.n_states, mu.shape[1], n_recent)
    return np.einsum("sor,ro->sr", V, mu)


def lookahead_values(env: FiniteChainEnv, vhat: np.ndarray, T: int, mu: Optional[np.ndarray] = None) -> np.ndarray:
    """(A, S * 3**(T+1)) expected r + gamma V_hat(s', (x', recent[:T])) with older marks ~ mu."""
    T = _effective_T(env, T)
    mu = completion_law(env, T) if mu is None else mu
    S, A, W = env.n_states, env.n_actions, env.W
    n_recent = 3 ** (T + 1)
    keep = 3 ** T
    out = np.zeros((A, S * n_recent))
    for r_code in range(n_recent):
        nxt = np.arange(3) + 3 * (r_code % keep) if T > 0 else np.arange(3)
        acc = np.zeros((S, A))
        for o_code in range(mu.shape[1]):
            w = mu[r_code, o_code]
            if w == 0.0:
                continue
            window = oracle.decode_window(r_code + n_recent * o_code, W)
            Q = env.kernel_tensor(window)                     # (S, A, S')
            q = env.mark_law(window)                          # (3,)
            er = np.einsum("ijk,ijk->ij", Q, env.reward)
            cont = vhat[:, nxt] @ q                           # (S',)
            acc += w * (er + env.gamma * Q @ cont)
        out[:, np.arange(S) * n_recent + r_code] = acc.T
    return out


def _argmax_low(q: np.ndarray) -> np.ndarray:
    if q.shape[0] == 0:
        raise ValueError("empty action grid")
    best = q.max(axis=0)
    return np.argmax(q >= best - TIE_TOL, axis=0)


def bellman_error_map(env: FiniteChainEnv, policy, chain: Optional[oracle.FiniteAugmentedChain] = None) -> np.ndarray:
    """|T V^pi - V^pi| on every augmented state, T the optimal Bellman operator."""
    chain = oracle.build_chain(env) if chain is None else chain
    pol = lift_policy(env, policy) if isinstance(policy, WindowPolicy) else chain.policy_array(policy)
    v = oracle.exact_policy_value(chain, pol)
    return np.abs(oracle.bellman_backup(chain, v).max(axis=0) - v)


def evaluate_policy(env, policy: WindowPolicy, T: int, mc: Optional[McConfig] = None,
                    exact: bool = False, chain=None, states=None):
    """Window value of ``policy``.

    Exact (FiniteChainEnv only): returns the (S, 3**(T+1)) table of E_mu V^pi.
    Monte Carlo on a FiniteChainEnv: same table shape, each entry estimated from
    sampled completions and rollouts. For the pendulum use :func:`pendulum_evaluate`.
    """
    if not isinstance(env, FiniteChainEnv):
        raise TypeError("use pendulum_evaluate for continuous environments")
    if exact:
        chain = oracle.build_chain(env) if chain is None else chain
        v = oracle.exact_policy_value(chain, lift_policy(env, policy))
        return window_value(env, v, T)
    mc = McConfig() if mc is None else mc
    T_eff = _effective_T(env, T)
    n_recent = 3 ** (T_eff + 1)
    rng = np.random.default_rng(mc.seed)
    mu = completion_law(env, T_eff)
    out = np.zeros((env.n_states, n_recent))
    for s in range(env.n_states):
        for r_code in range(n_recent):
            out[s, r_code] = mc_window_value(env, policy, s, r_code, T_eff, mc, rng, mu)
    return out


def mc_window_value(env: FiniteChainEnv, policy: WindowPolicy, s: int, r_code: int, T: int,
                    mc: McConfig, rng: np.random.Generator, mu: Optional[np.ndarray] = None) -> float:
    """Monte Carlo estimate of E_mu V^pi(s, recent + older) at one window state."""
    mu = completion_law(env, T) if mu is None else mu
    H = mc.horizon(env.gamma)
    n_recent = 3 ** (T + 1)
    total = 0.0
    for _ in range(mc.n_completions):
        o_code = int(rng.choice(mu.shape[1], p=mu[r_code]))
        window = oracle.decode_window(r_code + n_recent * o_code, env.W)
        for _ in range(mc.n_transition_samples):
            aug = AugmentedState(s, window)
            ret, disc = 0.0, 1.0
            for _ in range(H):
                res = env.step(aug, policy(aug.state, aug.window), rng)
                ret += disc * res.reward
                disc *= env.gamma
                aug = res.aug
            total += ret
    return total / (mc.n_completions * mc.n_transition_samples)


def improve_policy(env, vhat: np.ndarray, T: int, action_grid: Optional[Sequence[int]] = None,
                   mc: Optional[McConfig] = None) -> WindowPolicy:
    """Greedy window policy w.r.t. ``vhat`` with exact expectations (FiniteChainEnv)."""
    if not isinstance(env, FiniteChainEnv):
        raise TypeError("use pendulum_greedy_policy for continuous environments")
    grid = list(range(env.n_actions)) if action_grid is None else list(action_grid)
    if not grid:
        raise ValueError("empty action grid")
    q = lookahead_values(env, vhat, T)[grid]
    T_eff = _effective_T(env, T)
    return WindowPolicy(T_eff, table=np.asarray(grid)[_argmax_low(q)])


@dataclass
class IterationRecord:
    k: int
    policy: WindowPolicy
    value: np.ndarray              # exact V^{pi_k} on the full chain
    window_value: np.ndarray       # V_hat_k
    bellman_error: np.ndarray      # |T V^{pi_k} - V^{pi_k}|


@dataclass
class IterationReport:
    T: int
    records: List[IterationRecord] = field(default_factory=list)
    final_policy: Optional[WindowPolicy] = None
    final_value: Optional[np.ndarray] = None
    converged: bool = False

    @property
    def n_improvements(self) -> int:
        return len(self.records)

    def values(self) -> List[np.ndarray]:
        """V^{pi_0}, ..., V^{pi_K} where pi_K is the final policy."""
        return [r.value for r in self.records] + [self.final_value]

    def rows(self) -> List[Dict[str, float]]:
        vals = self.values()
        out = []
        for i, rec in enumerate(self.records):
            delta = vals[i + 1] - vals[i]
            out.append({
                "k": rec.k,
                "mean_value": float(rec.value.mean()),
                "min_value": float(rec.value.min()),
                "max_bellman_error": float(rec.bellman_error.max()),
                "min_value_change": float(delta.min()),
                "n_policy_changes": int(np.sum(rec.policy.table != (self.records[i + 1].policy.table
                                                                     if i + 1 < len(self.records)
                                                                     else self.final_policy.table))),
            })
        return out


def run_policy_iteration(env: FiniteChainEnv, T: int, k_max: int, mc: Optional[McConfig] = None,
                         exact: bool = True, initial: Optional[WindowPolicy] = None) -> IterationReport:
    """Alternate window evaluation and greedy improvement.

    Stops when the policy is unchanged by an improvement step or after ``k_max``
    improvement steps. Values and Bellman errors are always exact (oracle); ``exact``
    selects whether the window evaluation inside the loop is exact or Monte Carlo.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    T_eff = _effective_T(env, T)
    chain = oracle.build_chain(env)
    mu = completion_law(env, T_eff)
    n_recent = 3 ** (T_eff + 1)
    pol = initial or WindowPolicy(T_eff, table=np.zeros(env.n_states * n_recent, dtype=np.int64))
    report = IterationReport(T_eff)
    v = oracle.exact_policy_value(chain, lift_policy(env, pol))
    for k in range(k_max):
        if exact:
            vhat = window_value(env, v, T_eff, mu)
        else:
            cfg = mc or McConfig()
            vhat = evaluate_policy(env, pol, T_eff, McConfig(cfg.n_completions, cfg.n_transition_samples,
                                                            cfg.rollout_horizon, cfg.tolerance, cfg.seed + k))
        berr = np.abs(oracle.bellman_backup(chain, v).max(axis=0) - v)
        report.records.append(IterationRecord(k, pol, v, vhat, berr))
        new = improve_policy(env, vhat, T_eff)
        v_new = oracle.exact_policy_value(chain, lift_policy(env, new))
        unchanged = new.same_as(pol)
        pol, v = new, v_new
        if unchanged:
            report.converged = True
            break
    report.final_policy = pol
    report.final_value = v
    return report


def check_improvement_guarantees(report: IterationReport, bellman_threshold: float,
                                 slack: float, tol: float = 1e-10) -> Dict[str, int]:
    """Count violations of the per-state improvement-or-small-Bellman-error property
    and of the bounded value decrease across every iteration of ``report``."""
    vals = report.values()
    either = 0
    decrease = 0
    for i, rec in enumerate(report.records):
        delta = vals[i + 1] - vals[i]
        improved = delta >= -tol
        small = rec.bellman_error < bellman_threshold + tol
        either += int(np.sum(~(improved | small)))
        decrease += int(np.sum(delta < -slack - tol))
    return {"improvement_or_small_error": either, "bounded_decrease": decrease}


# ---------------------------------------------------------------------------
# Monte Carlo variant for the pendulum
# ---------------------------------------------------------------------------

def _completed_history(params: HawkesParams, recent: Sequence[float], rng: np.random.Generator) -> EventHistory:
    """Unconditional event history of length ``horizon_cap`` with the newest marks overwritten."""
    cap = params.horizon_cap
    seed = int(rng.integers(0, 2 ** 63 - 1))
    h = rollout_events(params, cap, seed)
    ind = list(h.indicators)
    marks = list(h.marks)
    for i, x in enumerate(recent):
        ind[cap - 1 - i] = int(x != 0.0)
        marks[cap - 1 - i] = float(x)
    return EventHistory(tuple(ind), tuple(marks))


def pendulum_evaluate(env: PendulumEnv, params: HawkesParams, policy: Callable, T: int,
                      states: Sequence[AugmentedState], mc: McConfig) -> np.ndarray:
    """Monte Carlo window values at the given (state, recent marks) points.

    ``policy(state, window)`` sees the recent T+1 marks.
    """
    rng = np.random.default_rng(mc.seed)
    H = mc.horizon(env.gamma)
    out = np.zeros(len(states))
    for j, aug in enumerate(states):
        recent = tuple(aug.window[: T + 1])
        total = 0.0
        for _ in range(mc.n_completions):
            hist = _completed_history(params, recent, rng)
            for _ in range(mc.n_transition_samples):
                src = HawkesSource(params, hist)
                cur = AugmentedState(aug.state, tuple(src.recent_marks(max(env.W, T + 1))))
                ret, disc = 0.0, 1.0
                for _ in range(H):
                    a = policy(cur.state, cur.window[: T + 1])
                    res = env.step(cur, a, src, rng)
                    ret += disc * res.reward
                    disc *= env.gamma
                    cur = res.aug
                total += ret
        out[j] = total / (mc.n_completions * mc.n_transition_samples)
    return out


def pendulum_greedy_policy(env: PendulumEnv, params: HawkesParams, vhat: Callable, T: int,
                           mc: McConfig, action_grid: Optional[Sequence[float]] = None) -> WindowPolicy:
    """Greedy grid policy: argmax_a mean over completions and next marks of r + gamma V_hat.

    ``vhat(state, window)`` receives the T+1 marks of the successor window.
    Completions are drawn with a generator seeded from ``mc.seed`` and the query,
    so the rule is deterministic.
    """
    grid = np.asarray(env.actions if action_grid is None else action_grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty action grid")
    for a in grid:
        env.check_action(float(a))

    def rule(state, recent):
        key = [mc.seed] + [int(round(v * 1e6)) & 0xFFFFFFFF for v in (*state, *recent)]
        rng = np.random.default_rng(key)
        theta, thetadot = state
        q = np.zeros(grid.size)
        for _ in range(mc.n_completions):
            hist = _completed_history(params, recent, rng)
            full = np.asarray(hist.recent(max(env.W, T + 1))[1])
            nt, nd, r = env.transition(theta, thetadot, grid, np.broadcast_to(full[: env.W], (grid.size, env.W)))
            nxt = sample_next_marks(params, hist, mc.n_transition_samples, rng)
            cont = np.zeros(grid.size)
            for x in nxt:
                w = (float(x),) + tuple(recent[:T])
                cont += np.array([vhat((nt[i], nd[i]), w) for i in range(grid.size)])
            q += r + env.gamma * cont / mc.n_transition_samples
        q /= mc.n_completions
        best = q.max()
        return float(grid[int(np.argmax(q >= best - TIE_TOL))])

    return WindowPolicy(T, rule=rule, name="greedy-grid")
