"""Exact dynamic programming on the enumerated augmented chain of a FiniteChainEnv.

Augmented states are ``(s, window)`` with window marks in {-1, 0, +1}. The index is
``s * 3**W + code`` where ``code = sum_i (x_i + 1) * 3**i`` and ``i = 0`` is the most
recent mark, so dropping the oldest mark and pushing a new one is
``code' = (x' + 1) + 3 * (code % 3**(W-1))``.

Every augmented state has at most ``3 * n_states`` successors, so transitions are
stored as (successor index, probability) arrays; :meth:`FiniteAugmentedChain.dense`
materialises the dense matrix for small chains.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .mdp_core import MARKS, FiniteChainEnv

__all__ = [
    "FiniteAugmentedChain",
    "build_chain",
    "decode_window",
    "encode_window",
    "exact_policy_value",
    "exact_optimal",
    "bellman_backup",
    "tv_distance",
    "single_event_perturbation",
    "single_event_mark_perturbation",
    "save_chain",
    "load_chain",
]

DEFAULT_CAP = 100_000
DENSE_SOLVE_LIMIT = 3000


def encode_window(window) -> int:
    code = 0
    for i, x in enumerate(window):
        code += (int(round(x)) + 1) * 3 ** i
    return code


def decode_window(code: int, W: int) -> Tuple[int, ...]:
    out = []
    for _ in range(W):
        out.append(code % 3 - 1)
        code //= 3
    return tuple(out)


@dataclass(frozen=True)
class FiniteAugmentedChain:
    n_states: int
    n_actions: int
    W: int
    gamma: float
    succ: np.ndarray        # (A, n_aug, K) successor indices
    prob: np.ndarray        # (A, n_aug, K) probabilities
    rbar: np.ndarray        # (A, n_aug) expected one-step reward

    @property
    def n_aug(self) -> int:
        return self.succ.shape[1]

    @property
    def n_windows(self) -> int:
        return 3 ** self.W

    def split(self, idx):
        return np.divmod(idx, self.n_windows)

    def index(self, s: int, window) -> int:
        return s * self.n_windows + encode_window(window)

    def zeroed_index(self, T: int) -> np.ndarray:
        """For each augmented state, the index with marks older than lag T set to 0."""
        s, code = self.split(np.arange(self.n_aug))
        keep = 3 ** min(T + 1, self.W)
        # digit 1 encodes mark 0; fill the dropped positions with ones
        fill = sum(3 ** i for i in range(min(T + 1, self.W), self.W))
        return s * self.n_windows + code % keep + fill

    def apply(self, a: int, v: np.ndarray) -> np.ndarray:
        """(P_a v) for one action."""
        return np.einsum("ik,ik->i", self.prob[a], v[self.succ[a]])

    def policy_array(self, policy) -> np.ndarray:
        """Accepts an index array over augmented states or a callable ``(s, window) -> a``."""
        if callable(policy):
            out = np.empty(self.n_aug, dtype=np.int64)
            for i in range(self.n_aug):
                s, code = divmod(i, self.n_windows)
                out[i] = policy(s, decode_window(code, self.W))
            policy = out
        pol = np.asarray(policy, dtype=np.int64)
        if pol.shape != (self.n_aug,):
            raise ValueError(f"policy must have one action per augmented state ({self.n_aug})")
        if pol.min() < 0 or pol.max() >= self.n_actions:
            raise ValueError("policy action out of range")
        return pol

    def dense(self, a: int) -> np.ndarray:
        P = np.zeros((self.n_aug, self.n_aug))
        rows = np.repeat(np.arange(self.n_aug), self.succ.shape[2])
        np.add.at(P, (rows, self.succ[a].ravel()), self.prob[a].ravel())
        return P

    def row_sums(self) -> np.ndarray:
        return self.prob.sum(axis=2)


def build_chain(env: FiniteChainEnv, horizon: Optional[int] = None,
                max_states: int = DEFAULT_CAP) -> FiniteAugmentedChain:
    """Exact closure of ``env`` over windows of length W.

    With ``horizon`` set, marks older than that lag are ignored by both kernels while
    the state still carries the full window (the truncated process).
    """
    S, A, W = env.n_states, env.n_actions, env.W
    nw = 3 ** W
    n_aug = S * nw
    if n_aug > max_states:
        raise ValueError(f"augmented chain has {n_aug} states, above the cap of {max_states}")
    K = 3 * S
    succ = np.empty((A, n_aug, K), dtype=np.int64)
    prob = np.empty((A, n_aug, K))
    rbar = np.empty((A, n_aug))
    low = 3 ** (W - 1) if W > 1 else 1
    sp = np.arange(S)
    for code in range(nw):
        window = decode_window(code, W)
        Q = env.kernel_tensor(window, horizon)           # (S, A, S)
        q = env.mark_law(window, horizon)                # (3,)
        er = np.einsum("ijk,ijk->ij", Q, env.reward)     # (S, A)
        shifted = code % low if W > 1 else 0
        next_codes = np.arange(3) + 3 * shifted if W > 1 else np.arange(3)
        # successor layout: k = s' * 3 + mark digit
        nxt = (sp[:, None] * nw + next_codes[None, :]).ravel()
        for s in range(S):
            i = s * nw + code
            for a in range(A):
                succ[a, i] = nxt
                prob[a, i] = (Q[s, a][:, None] * q[None, :]).ravel()
                rbar[a, i] = er[s, a]
    return FiniteAugmentedChain(S, A, W, env.gamma, succ, prob, rbar)


def _policy_system(chain: FiniteAugmentedChain, pol: np.ndarray):
    idx = np.arange(chain.n_aug)
    return chain.succ[pol, idx], chain.prob[pol, idx], chain.rbar[pol, idx]


def exact_policy_value(chain: FiniteAugmentedChain, policy, tol: float = 1e-10) -> np.ndarray:
    """Solve V = r_pi + gamma P_pi V."""
    pol = chain.policy_array(policy)
    succ, prob, r = _policy_system(chain, pol)
    n = chain.n_aug
    g = chain.gamma
    if n <= DENSE_SOLVE_LIMIT:
        P = np.zeros((n, n))
        np.add.at(P, (np.repeat(np.arange(n), succ.shape[1]), succ.ravel()), prob.ravel())
        v = np.linalg.solve(np.eye(n) - g * P, r)
    else:
        # fixed-point iteration; the error after the stopping test is <= g/(1-g) * step
        v = r / (1 - g)
        while True:
            nv = r + g * np.einsum("ik,ik->i", prob, v[succ])
            step = np.max(np.abs(nv - v))
            v = nv
            if step * g / (1 - g) < tol * 1e-2:
                break
    resid = np.max(np.abs(r + g * np.einsum("ik,ik->i", prob, v[succ]) - v))
    if resid > tol:
        raise ArithmeticError(f"policy evaluation residual {resid:.3e} above {tol}")
    return v


def bellman_backup(chain: FiniteAugmentedChain, v: np.ndarray) -> np.ndarray:
    """(A, n_aug) one-step lookahead values r_a + gamma P_a v."""
    return np.stack([chain.rbar[a] + chain.gamma * chain.apply(a, v) for a in range(chain.n_actions)])


def _greedy(q: np.ndarray, tie_tol: float = 1e-12) -> np.ndarray:
    best = q.max(axis=0)
    return np.argmax(q >= best - tie_tol, axis=0)


def exact_optimal(chain: FiniteAugmentedChain, span_tol: float = 1e-12,
                  max_iter: int = 100_000) -> Tuple[np.ndarray, np.ndarray]:
    """Value iteration to a span of 1e-12, then exact policy-iteration polish.

    Returns (V*, pi*) with ties broken toward the lowest action index.
    """
    g = chain.gamma
    v = np.zeros(chain.n_aug)
    for _ in range(max_iter):
        nv = bellman_backup(chain, v).max(axis=0)
        diff = nv - v
        v = nv
        if diff.max() - diff.min() <= span_tol:
            # bracket the fixed point with the span certificate
            v = v + g / (1 - g) * 0.5 * (diff.max() + diff.min())
            break
    else:
        raise ArithmeticError("value iteration did not converge")
    pol = _greedy(bellman_backup(chain, v))
    for _ in range(chain.n_aug * chain.n_actions + 1):
        v = exact_policy_value(chain, pol)
        q = bellman_backup(chain, v)
        new = _greedy(q)
        # only switch where the gain is real; avoids cycling on ties
        gain = q[new, np.arange(chain.n_aug)] - q[pol, np.arange(chain.n_aug)]
        new = np.where(gain > 1e-12, new, pol)
        if np.array_equal(new, pol):
            break
        pol = new
    return v, _greedy(bellman_backup(chain, v))


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions must have the same support")
    return 0.5 * float(np.abs(p - q).sum())


def _window_pairs(W: int, lag: int):
    """Pairs of windows that differ only at ``lag`` (one side with no event there)."""
    others = [i for i in range(W) if i != lag]
    for rest in itertools.product(MARKS, repeat=len(others)):
        base = [0] * W
        for i, x in zip(others, rest):
            base[i] = x
        for x in (-1, 1):
            alt = list(base)
            alt[lag] = x
            yield tuple(base), tuple(alt)


def single_event_perturbation(env: FiniteChainEnv, lag: int) -> float:
    """max over (s, a, window) of the kernel TV when one event at ``lag`` is toggled."""
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if lag >= env.W:
        return 0.0
    worst = 0.0
    for w0, w1 in _window_pairs(env.W, lag):
        d = 0.5 * np.abs(env.kernel_tensor(w0) - env.kernel_tensor(w1)).sum(axis=2)
        worst = max(worst, float(d.max()))
    return worst


def single_event_mark_perturbation(env: FiniteChainEnv, lag: int) -> float:
    """Same as :func:`single_event_perturbation` for the next-mark law."""
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if lag >= env.W:
        return 0.0
    return max(tv_distance(env.mark_law(w0), env.mark_law(w1)) for w0, w1 in _window_pairs(env.W, lag))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------
#
#   # exomdp-chain
#   n_states n_actions W gamma
#   then for each action a: one block "succ a" (n_aug x K ints),
#   "prob a" (n_aug x K floats), and one "rbar a" row.

def save_chain(chain: FiniteAugmentedChain, path) -> None:
    with open(path, "w") as fh:
        fh.write("# exomdp-chain\n")
        fh.write(f"{chain.n_states} {chain.n_actions} {chain.W} {chain.gamma!r}\n")
        for a in range(chain.n_actions):
            fh.write(f"succ {a}\n")
            np.savetxt(fh, chain.succ[a], fmt="%d")
            fh.write(f"prob {a}\n")
            np.savetxt(fh, chain.prob[a], fmt="%.17g")
            fh.write(f"rbar {a}\n")
            np.savetxt(fh, chain.rbar[a][None, :], fmt="%.17g")


def load_chain(path) -> FiniteAugmentedChain:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "# exomdp-chain":
        raise ValueError("not a chain file")
    S, A, W, g = lines[1].split()
    S, A, W, g = int(S), int(A), int(W), float(g)
    n_aug = S * 3 ** W
    pos = 2
    succ, prob, rbar = [], [], []
    for a in range(A):
        assert lines[pos] == f"succ {a}"
        succ.append(np.array([[int(v) for v in ln.split()] for ln in lines[pos + 1: pos + 1 + n_aug]]))
        pos += 1 + n_aug
        assert lines[pos] == f"prob {a}"
        prob.append(np.array([[float(v) for v in ln.split()] for ln in lines[pos + 1: pos + 1 + n_aug]]))
        pos += 1 + n_aug
        assert lines[pos] == f"rbar {a}"
        rbar.append(np.array([float(v) for v in lines[pos + 1].split()]))
        pos += 2
    return FiniteAugmentedChain(S, A, W, g, np.array(succ), np.array(prob), np.array(rbar))
