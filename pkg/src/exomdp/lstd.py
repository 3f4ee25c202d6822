"""Pathwise LSTD on truncated augmented states.

Given one sample path x_1..x_N with rewards r_1..r_N, the pathwise Bellman
operator uses the shift (P v)_t = v_{t+1} with a zero last row. The fixed point of
the projected operator in span(Phi) solves

    A alpha = b,   A = Phi^T (Phi - gamma Phi'),   b = Phi^T r

where Phi' holds the features of the successor sample (zero on the last row).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np

__all__ = [
    "FeatureMap",
    "SamplePath",
    "LinearValueFunction",
    "LstdSolution",
    "build_design",
    "lstd_solve",
    "fixed_point_residual",
    "projected_fixed_point",
    "empirical_norm",
    "column_basis",
    "jacobi_eigenvalues",
    "gram_min_eigenvalue",
    "default_pendulum_features",
    "tabular_features",
    "write_record",
    "read_record",
]

RCOND = 1e-10
# Feature directions with s / s_max below sqrt(RCOND) are dropped: the Gram matrix
# Phi^T Phi scales as s^2, so this is the same 1e-10 cutoff at the level of A.
PHI_RCOND = RCOND ** 0.5


@dataclass(frozen=True)
class FeatureMap:
    """Batch feature map ``fn(states (N, k), windows (N, T+1)) -> (N, d)``."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d: int
    L: float
    names: Tuple[str, ...] = ()

    def __call__(self, states, windows) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        windows = np.asarray(windows, dtype=float)
        single = windows.ndim == 1
        if single:
            states = states[None, ...] if states.ndim <= 1 else states
            windows = windows[None, :]
        out = np.asarray(self.fn(states, windows), dtype=float)
        if out.ndim != 2 or out.shape[1] != self.d:
            raise ValueError(f"feature map returned shape {out.shape}, expected (*, {self.d})")
        return out[0] if single else out


@dataclass(frozen=True)
class SamplePath:
    states: np.ndarray              # (N, k) or (N,)
    windows: np.ndarray             # (N, T+1)
    rewards: np.ndarray             # (N,)
    seed: Optional[int] = None
    policy_id: str = ""
    burn_in: int = 0

    def __post_init__(self):
        r = np.asarray(self.rewards, dtype=float)
        if not (len(self.states) == len(self.windows) == len(r)):
            raise ValueError("states, windows and rewards must have equal length")
        if r.size and (r.min() < 0 or r.max() > 1):
            raise ValueError("rewards must lie in [0, 1]")

    @property
    def N(self) -> int:
        return len(self.rewards)

    def prefix(self, n: int) -> "SamplePath":
        return SamplePath(self.states[:n], self.windows[:n], self.rewards[:n], self.seed,
                          self.policy_id, self.burn_in)

    @classmethod
    def from_trajectory_csv(cls, path, T: int, burn_in: int = 0, policy_id: str = "") -> "SamplePath":
        """Build a path from the trajectory CSV: the window at row t holds the marks of
        rows t-1, t-2, ... (events drawn during earlier steps)."""
        from .mdp_core import read_trajectory_csv

        states, _, rewards, _, marks = read_trajectory_csv(path)
        n = len(rewards)
        windows = np.zeros((n, T + 1))
        for lag in range(T + 1):
            windows[lag + 1:, lag] = marks[: max(n - lag - 1, 0)]
        return cls(states[burn_in:], windows[burn_in:], rewards[burn_in:], None, policy_id, burn_in)


def build_design(path: SamplePath, features: FeatureMap):
    """Phi (N, d), Phi' (N, d) with zero last row, r (N,)."""
    Phi = features(path.states, path.windows)
    if Phi.ndim == 1:
        Phi = Phi[None, :]
    if not np.all(np.isfinite(Phi)):
        raise ValueError("non-finite feature values")
    N, d = Phi.shape
    if N < d:
        warnings.warn(f"only {N} samples for {d} features", RuntimeWarning, stacklevel=2)
    Phi_next = np.zeros_like(Phi)
    Phi_next[:-1] = Phi[1:]
    return Phi, Phi_next, np.asarray(path.rewards, dtype=float)


@dataclass(frozen=True)
class LstdSolution:
    weights: np.ndarray
    rank: int
    singular_values: np.ndarray


def lstd_solve(Phi: np.ndarray, Phi_next: np.ndarray, r: np.ndarray, gamma: float) -> LstdSolution:
    """Minimum-norm solution of Phi^T (Phi - gamma Phi') alpha = Phi^T r.

    Solved in the orthonormal basis from ``column_basis``, which avoids squaring
    the conditioning of Phi. When A = Phi^T (Phi - gamma Phi') is invertible this equals A^{-1} b.
    ``singular_values`` are those of the reduced system I - gamma U^T Phi' V S^-1.
    """
    Phi = np.asarray(Phi, dtype=float)
    Phi_next = np.asarray(Phi_next, dtype=float)
    r = np.asarray(r, dtype=float)
    if not (np.all(np.isfinite(Phi)) and np.all(np.isfinite(Phi_next)) and np.all(np.isfinite(r))):
        raise ValueError("inputs must be finite")
    d = Phi.shape[1]
    U, s, V = column_basis(Phi)
    if not s.size:
        return LstdSolution(np.zeros(d), 0, np.zeros(0))
    # Phi alpha = U beta with alpha = V S^-1 beta
    M = np.eye(len(s)) - gamma * (U.T @ Phi_next @ (V / s))
    sv = np.linalg.svd(M, compute_uv=False)
    rank = int(np.sum(sv > RCOND * sv[0])) if sv[0] > 0 else 0
    Minv = np.linalg.pinv(M, rcond=RCOND)
    alpha = V @ ((Minv @ (U.T @ r)) / s)
    for _ in range(2):  # iterative refinement against roundoff in Phi alpha
        g = U.T @ (r + gamma * (Phi_next @ alpha) - Phi @ alpha)
        alpha = alpha + V @ ((Minv @ g) / s)
    return LstdSolution(alpha, rank, sv)


def column_basis(Phi: np.ndarray):
    """Thin SVD of Phi restricted to singular values above PHI_RCOND * s_max: (U, s, V)."""
    U, s, Vt = np.linalg.svd(np.asarray(Phi, dtype=float), full_matrices=False)
    keep = s > PHI_RCOND * s[0] if s.size and s[0] > 0 else np.zeros(s.size, dtype=bool)
    return U[:, keep], s[keep], Vt[keep].T


def _project(U: np.ndarray, y: np.ndarray) -> np.ndarray:
    return U @ (U.T @ y)


def empirical_norm(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(v * v)))


def fixed_point_residual(weights, Phi, Phi_next, r, gamma) -> float:
    """|| Phi alpha - Proj(r + gamma Phi' alpha) ||_N, projecting onto ``column_basis(Phi)``."""
    v = Phi @ weights
    U = column_basis(Phi)[0]
    return empirical_norm(v - _project(U, r + gamma * (Phi_next @ weights)))


def projected_fixed_point(Phi, r, gamma, tol: float = 1e-13, max_iter: int = 100_000) -> np.ndarray:
    """Iterate v <- Proj(r + gamma P v) from v = 0; P is the path shift with zero last row."""
    U = column_basis(Phi)[0]
    v = np.zeros(len(r))
    for _ in range(max_iter):
        shifted = np.zeros_like(v)
        shifted[:-1] = v[1:]
        nv = _project(U, r + gamma * shifted)
        if np.max(np.abs(nv - v)) <= tol:
            return nv
        v = nv
    raise ArithmeticError("projected iteration did not converge")


# ---------------------------------------------------------------------------
# Symmetric eigenvalues
# ---------------------------------------------------------------------------

def jacobi_eigenvalues(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.

    Stops when the off-diagonal Frobenius norm is at most ``tol`` times the
    Frobenius norm of the matrix.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError("matrix must be symmetric")
    A = 0.5 * (A + A.T)
    scale = np.linalg.norm(A)
    if n <= 1 or scale == 0.0:
        return np.sort(np.diag(A))
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A[~np.eye(n, dtype=bool)]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                cp = A[:, p].copy()
                cq = A[:, q].copy()
                A[:, p] = c * cp - s * cq
                A[:, q] = s * cp + c * cq
                A[p, q] = A[q, p] = 0.0
    else:
        raise ArithmeticError("Jacobi iteration did not converge")
    return np.sort(np.diag(A))


def gram_min_eigenvalue(Phi: np.ndarray, rel_tol: float = 1e-10) -> float:
    """Smallest positive eigenvalue of Phi^T Phi / N.

    Eigenvalues at or below ``rel_tol`` times the largest are treated as zero.
    Returns 0.0 when the Gram matrix is zero.
    """
    Phi = np.asarray(Phi, dtype=float)
    G = Phi.T @ Phi / Phi.shape[0]
    ev = jacobi_eigenvalues(G)
    top = ev[-1] if ev.size else 0.0
    if top <= 0:
        return 0.0
    pos = ev[ev > rel_tol * top]
    return float(pos[0])


# ---------------------------------------------------------------------------
# Value functions and features
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearValueFunction:
    weights: np.ndarray
    features: FeatureMap
    gamma: float
    clip: bool = True

    @property
    def bound(self) -> float:
        return 1.0 / (1.0 - self.gamma)

    def raw(self, states, windows) -> np.ndarray:
        return self.features(states, windows) @ self.weights

    def __call__(self, states, windows):
        v = self.raw(states, windows)
        if self.clip:
            v = np.clip(v, -self.bound, self.bound)
        return v


def default_pendulum_features(T: int, max_speed: float = 8.0, mark_clip: float = 4.0) -> FeatureMap:
    """cos, sin, thetadot, theta and their squares; T+1 marks and their squares; constant.

    Marks are clipped to ``[-mark_clip, mark_clip]`` so every feature is bounded by
    ``L = max(pi**2, max_speed**2, mark_clip**2, 1)``.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    k = T + 1

    def fn(states, windows):
        states = np.atleast_2d(states)
        th = states[:, 0]
        om = states[:, 1]
        x = np.clip(windows[:, :k], -mark_clip, mark_clip)
        base = np.stack([np.cos(th), np.sin(th), om, th], axis=1)
        return np.hstack([base, base ** 2, x, x ** 2, np.ones((len(th), 1))])

    names = ("cos", "sin", "thetadot", "theta", "cos^2", "sin^2", "thetadot^2", "theta^2") \
        + tuple(f"x{i}" for i in range(k)) + tuple(f"x{i}^2" for i in range(k)) + ("const",)
    L = max(math.pi ** 2, max_speed ** 2, mark_clip ** 2, 1.0)
    return FeatureMap(fn, 8 + 2 * k + 1, L, names)


def tabular_features(n_states: int) -> FeatureMap:
    """One-hot on an integer state (the window is ignored)."""

    def fn(states, windows):
        s = np.asarray(states).reshape(-1).astype(np.int64)
        out = np.zeros((s.size, n_states))
        out[np.arange(s.size), s] = 1.0
        return out

    return FeatureMap(fn, n_states, 1.0, tuple(f"s{i}" for i in range(n_states)))


# ---------------------------------------------------------------------------
# Plain-text record
# ---------------------------------------------------------------------------
#
#   key = value lines; weights are space-separated floats written with repr.

def write_record(path, weights, nu: float, residual: float, rank: int, extra: Optional[Dict] = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"d = {len(weights)}\n")
        fh.write("weights = " + " ".join(repr(float(w)) for w in weights) + "\n")
        fh.write(f"nu_N = {float(nu)!r}\n")
        fh.write(f"residual = {float(residual)!r}\n")
        fh.write(f"rank = {int(rank)}\n")
        for k, v in (extra or {}).items():
            fh.write(f"{k} = {v}\n")


def read_record(path) -> Dict[str, object]:
    out: Dict[str, object] = {}
    with open(path) as fh:
        for line in fh:
            if "=" not in line:
                continue
            k, v = (s.strip() for s in line.split("=", 1))
            if k == "weights":
                out[k] = np.array([float(x) for x in v.split()]) if v else np.zeros(0)
            elif k in ("d", "rank"):
                out[k] = int(v)
            elif k in ("nu_N", "residual"):
                out[k] = float(v)
            else:
                out[k] = v
    return out
