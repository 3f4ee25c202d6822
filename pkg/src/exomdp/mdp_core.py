"""Environments perturbed by an exogenous event stream.

The augmented state is ``(state, window)`` where ``window`` holds the most
recent marks, most recent first. Two environments are provided:

* :class:`FiniteChainEnv` -- a small tabular MDP whose marks live in {-1, 0, +1},
  so the whole augmented chain can be enumerated exactly.
* :class:`PendulumEnv` -- the classic torque-limited pendulum with event marks
  injected into the applied torque.

Rewards always lie in [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from .bounds import DecaySpec
from .event_process import DecayKernel, EventHistory, HawkesParams, _Stepper

__all__ = [
    "MARKS",
    "AugmentedState",
    "StepResult",
    "FiniteChainEnv",
    "PendulumEnv",
    "HawkesSource",
    "truncate",
    "step",
    "exact_truncation_gap",
    "wrap_angle",
    "pendulum_dynamics",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

MARKS = (-1, 0, 1)


@dataclass(frozen=True)
class AugmentedState:
    state: Any
    window: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(float(x) for x in self.window))

    @property
    def W(self) -> int:
        return len(self.window)


@dataclass(frozen=True)
class StepResult:
    aug: AugmentedState
    reward: float
    indicator: int
    mark: float


def truncate(full_history: Union[EventHistory, Sequence[float]], state, T: int) -> AugmentedState:
    """Keep the T+1 most recent marks (most recent first), zero padded."""
    if T < 0:
        raise ValueError("T must be >= 0")
    marks = full_history.marks if isinstance(full_history, EventHistory) else tuple(full_history)
    recent = list(marks[::-1][: T + 1])
    recent += [0.0] * (T + 1 - len(recent))
    return AugmentedState(state, tuple(recent))


# ---------------------------------------------------------------------------
# Finite chain
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteChainEnv:
    """Tabular MDP whose kernel is shifted by recent events.

    With window ``x_0..x_{W-1}`` (marks in {-1, 0, +1}) the transition row is

        Q_x(.|s, a) = Q(.|s, a) + sum_t x_t * m_t * (e_to[s,a,t] - e_from[s,a,t])

    so switching one event on or off at lag ``t`` moves exactly ``m_t`` of mass:
    the total-variation influence of that lag is ``m_t`` by construction. The mark
    law works the same way: an event of mark x at lag t moves ``n_t`` of probability
    from "no event" to "mark x".
    """

    base: np.ndarray            # (S, A, S)
    reward: np.ndarray          # (S, A, S), values in [0, 1]
    m: np.ndarray               # (W,) kernel influence per lag
    n: np.ndarray               # (W,) mark-law influence per lag
    shift_to: np.ndarray        # (S, A, W) int
    shift_from: np.ndarray      # (S, A, W) int
    mark_base: np.ndarray       # (3,) law of the next mark over MARKS when the window is empty
    gamma: float = 0.9

    def __post_init__(self):
        for name in ("base", "reward", "m", "n", "mark_base"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("shift_to", "shift_from"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        S, A, S2 = self.base.shape
        W = self.m.shape[0]
        if S != S2 or self.reward.shape != self.base.shape:
            raise ValueError("base and reward must have shape (S, A, S)")
        if self.n.shape != (W,) or self.shift_to.shape != (S, A, W) or self.shift_from.shape != (S, A, W):
            raise ValueError("inconsistent window length")
        if np.any(self.shift_to == self.shift_from):
            raise ValueError("shift directions need distinct endpoints")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if np.any(self.reward < 0) or np.any(self.reward > 1):
            raise ValueError("rewards must lie in [0, 1]")
        if np.any(self.m < 0) or np.any(self.n < 0):
            raise ValueError("influence weights must be non-negative")
        if not np.allclose(self.base.sum(axis=2), 1.0, atol=1e-12, rtol=0):
            raise ValueError("base rows must be probability vectors")
        if self.base.min() < self.m.sum():
            raise ValueError("base kernel entries must be >= sum(m) so perturbed rows stay non-negative")
        if abs(self.mark_base.sum() - 1.0) > 1e-12 or self.mark_base.min() < 0:
            raise ValueError("mark_base must be a probability vector")
        if self.mark_base[1] < self.n.sum():
            raise ValueError("mark_base[0-mark] must be >= sum(n)")

    @property
    def n_states(self) -> int:
        return self.base.shape[0]

    @property
    def n_actions(self) -> int:
        return self.base.shape[1]

    @property
    def W(self) -> int:
        return self.m.shape[0]

    @property
    def actions(self) -> Tuple[int, ...]:
        return tuple(range(self.n_actions))

    def decay_spec(self) -> DecaySpec:
        # lag t of the window maps to kernel index t (t >= 1); lag 0 is never truncated
        return DecaySpec(DecayKernel.tabulated(self.m[1:]), DecayKernel.tabulated(self.n[1:]))

    def _effective(self, window, horizon: Optional[int]) -> np.ndarray:
        x = np.asarray(window, dtype=float)
        if x.shape != (self.W,):
            raise ValueError(f"window must have length {self.W}")
        if horizon is not None and horizon + 1 < self.W:
            x = x.copy()
            x[horizon + 1:] = 0.0
        return x

    def kernel_tensor(self, window, horizon: Optional[int] = None) -> np.ndarray:
        """(S, A, S) transition tensor under ``window``; ``horizon`` zeroes lags > horizon."""
        x = self._effective(window, horizon)
        Q = np.array(self.base)
        S, A = self.n_states, self.n_actions
        si, ai = np.meshgrid(np.arange(S), np.arange(A), indexing="ij")
        for t in range(self.W):
            w = x[t] * self.m[t]
            if w == 0.0:
                continue
            np.add.at(Q, (si, ai, self.shift_to[:, :, t]), w)
            np.add.at(Q, (si, ai, self.shift_from[:, :, t]), -w)
        return Q

    def kernel(self, s: int, a: int, window, horizon: Optional[int] = None) -> np.ndarray:
        return self.kernel_tensor(window, horizon)[s, a]

    def mark_law(self, window, horizon: Optional[int] = None) -> np.ndarray:
        """Probabilities of the next mark over MARKS = (-1, 0, +1)."""
        x = self._effective(window, horizon)
        q = np.array(self.mark_base)
        for t in range(self.W):
            if x[t] != 0.0:
                q[int(x[t]) + 1] += self.n[t]
                q[1] -= self.n[t]
        return q

    def expected_reward(self, window, horizon: Optional[int] = None) -> np.ndarray:
        """(S, A) expected one-step reward."""
        return np.einsum("ijk,ijk->ij", self.kernel_tensor(window, horizon), self.reward)

    def step(self, aug: AugmentedState, action: int, rng: np.random.Generator) -> StepResult:
        if action not in range(self.n_actions):
            raise ValueError(f"action {action!r} out of range")
        q = self.mark_law(aug.window)
        mark = MARKS[int(rng.choice(3, p=q))]
        row = self.kernel(aug.state, action, aug.window)
        s_next = int(rng.choice(self.n_states, p=row))
        r = float(self.reward[aug.state, action, s_next])
        window = (float(mark),) + aug.window[:-1]
        return StepResult(AugmentedState(s_next, window), r, int(mark != 0), float(mark))

    @classmethod
    def random(cls, seed, n_states: int = 3, n_actions: int = 2, window: int = 3,
               m_scale: float = 0.05, m_rate: float = 1.0, n_scale: float = 0.05,
               n_rate: float = 1.0, gamma: float = 0.9) -> "FiniteChainEnv":
        """Random instance with exponential influence m_t = m_scale * exp(-m_rate t)."""
        rng = np.random.default_rng(seed)
        lags = np.arange(window)
        m = m_scale * np.exp(-m_rate * lags)
        n = n_scale * np.exp(-n_rate * lags)
        floor = m.sum()
        if n_states * floor >= 1:
            raise ValueError("sum(m) too large for this many states")
        base = floor + (1.0 - n_states * floor) * rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        reward = rng.random((n_states, n_actions, n_states))
        shift_to = rng.integers(0, n_states, size=(n_states, n_actions, window))
        offs = rng.integers(1, n_states, size=(n_states, n_actions, window))
        shift_from = (shift_to + offs) % n_states
        p_event = rng.uniform(0.1, 0.5) * (1.0 - n.sum())
        split = rng.uniform(0.3, 0.7)
        mark_base = np.array([p_event * split, 1.0 - p_event, p_event * (1 - split)])
        return cls(base, reward, m, n, shift_to, shift_from, mark_base, gamma)

    def without_events(self) -> "FiniteChainEnv":
        """Same base MDP with both influence series set to zero."""
        z = np.zeros_like(self.m)
        return FiniteChainEnv(self.base, self.reward, z, z, self.shift_to, self.shift_from,
                              self.mark_base, self.gamma)


# ---------------------------------------------------------------------------
# Pendulum
# ---------------------------------------------------------------------------

def wrap_angle(theta):
    """Map angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - theta, 2.0 * np.pi)


def pendulum_dynamics(theta, thetadot, torque, g=10.0, m=1.0, l=1.0, dt=0.05, max_speed=8.0):
    """One integration step of the classic pendulum (velocity first, then angle)."""
    acc = 3.0 * g / (2.0 * l) * np.sin(theta) + 3.0 / (m * l * l) * torque
    new_dot = np.clip(thetadot + acc * dt, -max_speed, max_speed)
    new_theta = wrap_angle(theta + new_dot * dt)
    return new_theta, new_dot


@dataclass(frozen=True)
class PendulumEnv:
    """Pendulum whose applied torque is ``action + gain * sum_k injection[k] * x_k``.

    ``x_k`` is the mark k steps back (x_0 the most recent). Angle 0 is upright.
    """

    mass: float = 1.0
    length: float = 1.0
    gravity: float = 10.0
    dt: float = 0.05
    max_torque: float = 2.0
    max_speed: float = 8.0
    gain: float = 1.0
    injection: Tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)
    gamma: float = 0.9
    n_actions: int = 17

    def __post_init__(self):
        object.__setattr__(self, "injection", tuple(float(v) for v in self.injection))
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if len(self.injection) < 1:
            raise ValueError("injection needs at least one lag")

    @property
    def W(self) -> int:
        return len(self.injection)

    @property
    def cost_max(self) -> float:
        return math.pi ** 2 + 0.1 * self.max_speed ** 2 + 0.001 * self.max_torque ** 2

    @property
    def actions(self) -> np.ndarray:
        return np.linspace(-self.max_torque, self.max_torque, self.n_actions)

    def injected_torque(self, windows) -> np.ndarray:
        """Event torque for one window (shape (W,)) or a batch (shape (B, >=W))."""
        w = np.asarray(windows, dtype=float)
        return self.gain * (w[..., : self.W] @ np.asarray(self.injection))

    def reward(self, theta, thetadot, action):
        cost = wrap_angle(theta) ** 2 + 0.1 * thetadot ** 2 + 0.001 * action ** 2
        return 1.0 - cost / self.cost_max

    def transition(self, theta, thetadot, action, windows):
        """Deterministic next (theta, thetadot) and reward; works on scalars or batches."""
        torque = action + self.injected_torque(windows)
        r = self.reward(theta, thetadot, action)
        nt, nd = pendulum_dynamics(theta, thetadot, torque, g=self.gravity, m=self.mass,
                                   l=self.length, dt=self.dt, max_speed=self.max_speed)
        return nt, nd, r

    def check_action(self, action: float) -> None:
        if not (-self.max_torque - 1e-12 <= action <= self.max_torque + 1e-12):
            raise ValueError(f"action {action} outside [-{self.max_torque}, {self.max_torque}]")

    def step(self, aug: AugmentedState, action: float, events: "HawkesSource",
             rng: np.random.Generator) -> StepResult:
        self.check_action(action)
        theta, thetadot = aug.state
        ind, mark = events.sample(rng)
        nt, nd, r = self.transition(theta, thetadot, action, np.asarray(aug.window))
        window = (mark,) + aug.window[:-1]
        return StepResult(AugmentedState((float(nt), float(nd)), window), float(r), ind, mark)


class HawkesSource:
    """Stateful exogenous event source: draws the next event and records it."""

    def __init__(self, params: HawkesParams, history: Optional[EventHistory] = None):
        self.params = params
        self._stepper = _Stepper(params, history)

    def sample(self, rng: np.random.Generator) -> Tuple[int, float]:
        return self._stepper.step(rng)

    @property
    def history(self) -> EventHistory:
        return self._stepper.history()

    def recent_marks(self, n: int) -> np.ndarray:
        marks = self._stepper.marks
        out = np.zeros(n)
        k = min(n, len(marks))
        if k:
            out[:k] = marks[-1:-k - 1:-1]
        return out


def step(env, aug: AugmentedState, action, events=None, rng: Optional[np.random.Generator] = None) -> StepResult:
    """Advance one step: draw the next event (independent of state and action), then the next state.

    For a :class:`FiniteChainEnv` the event law is part of the environment and
    ``events`` is ignored; a :class:`PendulumEnv` needs a :class:`HawkesSource`.
    """
    if rng is None:
        raise ValueError("a seeded random generator is required")
    if isinstance(env, FiniteChainEnv):
        return env.step(aug, action, rng)
    if events is None:
        raise ValueError("pendulum steps need an event source")
    return env.step(aug, action, events, rng)


def exact_truncation_gap(env: FiniteChainEnv, policy, T: int, max_states: int = 100_000) -> float:
    """max |V(s, x_{0:inf}) - V(s, x_{0:T}, 0...)| for a policy on the full augmented chain."""
    from .oracle import build_chain, exact_policy_value

    chain = build_chain(env, max_states=max_states)
    pol = chain.policy_array(policy)
    v = exact_policy_value(chain, pol)
    zeroed = chain.zeroed_index(T)
    return float(np.max(np.abs(v - v[zeroed])))


# ---------------------------------------------------------------------------
# Trajectory CSV
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, states: np.ndarray, actions: Sequence[float], rewards: Sequence[float],
                         indicators: Sequence[int], marks: Sequence[float]) -> None:
    """Columns: t, state_0..state_{k-1}, action, reward, indicator, mark.

    Row t holds the state at step t, the action taken there, the resulting reward,
    and the event drawn during that step.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 1 and len(actions) != 1:
        states = states.T
    k = states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"state_{i}" for i in range(k)] + ["action", "reward", "indicator", "mark"])
        for t in range(len(actions)):
            w.writerow([t] + [repr(float(v)) for v in states[t]]
                       + [repr(float(actions[t])), repr(float(rewards[t])), int(indicators[t]), repr(float(marks[t]))])


def read_trajectory_csv(path):
    """Returns (states, actions, rewards, indicators, marks) as arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    k = sum(1 for h in header if h.startswith("state_"))
    data = np.array([[float(v) for v in r] for r in rows]) if rows else np.zeros((0, k + 5))
    return (data[:, 1:1 + k], data[:, 1 + k], data[:, 2 + k],
            data[:, 3 + k].astype(int), data[:, 4 + k])
