"""Discrete-time marked Hawkes process.

Events ``E_t`` are Bernoulli with intensity

    p_t = clamp(alpha_0 + sum_{t' < t} alpha_{t - t'} E_{t'}, 0, 1)

and an event carries a Gaussian mark centred on ``sum beta_{t - t'} E_{t'} X_{t'}``.
A non-event carries the mark 0, so "mark == 0" and "no event" are the same thing
downstream.

Kernels are truncated at ``horizon_cap`` lags so each step costs O(cap).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "DecayKernel",
    "HawkesParams",
    "EventHistory",
    "erf",
    "erfc",
    "intensity",
    "mark_mean",
    "sample_step",
    "sample_next_marks",
    "mark_tv_bound",
    "rollout_events",
    "HawkesBatch",
    "empirical_tv",
    "write_history_csv",
    "read_history_csv",
]

_SQRT_PI = math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# erf / erfc
# ---------------------------------------------------------------------------

def _erf_series(x: float) -> float:
    # erf(x) = 2/sqrt(pi) * exp(-x^2) * sum_n 2^n x^(2n+1) / (1*3*...*(2n+1)); all terms positive
    term = x
    total = x
    x2 = x * x
    n = 0
    while True:
        n += 1
        term *= 2.0 * x2 / (2 * n + 1)
        total += term
        if term < 1e-17 * total:
            break
    return 2.0 / _SQRT_PI * math.exp(-x2) * total


def _erfc_contfrac(x: float) -> float:
    # erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), modified Lentz
    tiny = 1e-300
    f = x
    c = x
    d = 0.0
    k = 0
    while True:
        k += 1
        a = 0.5 * k
        d = x + a * d
        d = tiny if d == 0.0 else d
        c = x + a / c
        c = tiny if c == 0.0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16 or k > 500:
            break
    return math.exp(-x * x) / _SQRT_PI / f


def erf(x: float) -> float:
    """Error function, absolute accuracy better than 1e-12 on the real line."""
    if math.isnan(x):
        return x
    if x < 0:
        return -erf(-x)
    if x == 0:
        return 0.0
    if x < 3.0:
        return _erf_series(x)
    if x > 6.0:
        return 1.0
    return 1.0 - _erfc_contfrac(x)


def erfc(x: float) -> float:
    """Complementary error function, relative accuracy about 1e-15 for x >= 0."""
    if x < 2.0:
        return 1.0 - erf(x)
    return _erfc_contfrac(x)


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayKernel:
    """A non-negative decay sequence indexed by lag ``t``.

    ``exponential``: c * exp(-rate * t); ``polynomial``: c / (1 + t**power);
    ``tabulated``: ``values[t - 1]`` for t >= 1 and 0 beyond the table (and at t = 0).
    """

    kind: str
    c: float = 0.0
    rate: float = 0.0
    power: float = 0.0
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("exponential", "polynomial", "tabulated"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "tabulated":
            vals = tuple(float(v) for v in self.values)
            object.__setattr__(self, "values", vals)
            if any(not math.isfinite(v) or v < 0 for v in vals):
                raise ValueError("tabulated kernel values must be finite and non-negative")
        else:
            for name in ("c", "rate" if self.kind == "exponential" else "power"):
                v = getattr(self, name)
                if not math.isfinite(v) or v < 0:
                    raise ValueError(f"kernel parameter {name} must be finite and >= 0, got {v}")

    @classmethod
    def exponential(cls, c: float, rate: float) -> "DecayKernel":
        return cls("exponential", c=float(c), rate=float(rate))

    @classmethod
    def polynomial(cls, c: float, power: float) -> "DecayKernel":
        return cls("polynomial", c=float(c), power=float(power))

    @classmethod
    def tabulated(cls, values: Iterable[float]) -> "DecayKernel":
        return cls("tabulated", values=tuple(values))

    @classmethod
    def zero(cls) -> "DecayKernel":
        return cls("tabulated", values=())

    def value(self, t: int) -> float:
        if t < 0:
            raise ValueError("lag must be non-negative")
        if self.kind == "exponential":
            return self.c * math.exp(-self.rate * t)
        if self.kind == "polynomial":
            if t == 0:
                return self.c if self.power > 0 else self.c / 2.0
            log_tp = self.power * math.log(t)
            if log_tp > 700.0:
                return 0.0
            return self.c / (1.0 + math.exp(log_tp))
        if t == 0 or t > len(self.values):
            return 0.0
        return self.values[t - 1]

    def table(self, n: int) -> np.ndarray:
        """Values at lags 1..n."""
        return np.array([self.value(t) for t in range(1, n + 1)], dtype=float)

    @property
    def summable(self) -> bool:
        if self.kind == "exponential":
            return self.rate > 0 or self.c == 0
        if self.kind == "polynomial":
            return self.power > 1 or self.c == 0
        return True

    def total(self) -> float:
        """Sum over lags t >= 1 (inf when not summable)."""
        if not self.summable:
            return math.inf
        if self.kind == "exponential":
            if self.c == 0:
                return 0.0
            q = math.exp(-self.rate)
            return self.c * q / (1.0 - q)
        if self.kind == "tabulated":
            return math.fsum(self.values)
        from .bounds import tail_sum  # polynomial tails live with the other tail sums

        return tail_sum(self, 0).exact

    def is_nonincreasing(self) -> bool:
        if self.kind != "tabulated":
            return True
        return all(a >= b for a, b in zip(self.values, self.values[1:]))

    def scaled(self, k: float) -> "DecayKernel":
        if self.kind == "tabulated":
            return DecayKernel.tabulated(k * v for v in self.values)
        return DecayKernel(self.kind, c=self.c * k, rate=self.rate, power=self.power)

    def describe(self) -> str:
        if self.kind == "exponential":
            return f"exponential(c={self.c:g}, rate={self.rate:g})"
        if self.kind == "polynomial":
            return f"polynomial(c={self.c:g}, power={self.power:g})"
        return "tabulated(" + ", ".join(f"{v:g}" for v in self.values) + ")"


# ---------------------------------------------------------------------------
# Process parameters and histories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HawkesParams:
    base_intensity: float
    excitation: DecayKernel = field(default_factory=DecayKernel.zero)
    mark_coupling: DecayKernel = field(default_factory=DecayKernel.zero)
    mark_std: float = 1.0
    horizon_cap: int = 64
    # Optional symmetric clip on sampled marks; None keeps the marks exactly Gaussian.
    mark_clip: Optional[float] = None

    alpha_table: np.ndarray = field(init=False, repr=False, compare=False)
    beta_table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 <= self.base_intensity <= 1.0):
            raise ValueError("base_intensity must lie in [0, 1]")
        if not self.mark_std > 0:
            raise ValueError("mark_std must be positive")
        if self.horizon_cap < 1:
            raise ValueError("horizon_cap must be >= 1")
        if self.mark_clip is not None and not self.mark_clip > 0:
            raise ValueError("mark_clip must be positive")
        alpha = self.excitation.table(self.horizon_cap)
        beta = self.mark_coupling.table(self.horizon_cap)
        for name, tab in (("excitation", alpha), ("mark_coupling", beta)):
            if not np.all(np.isfinite(tab)):
                raise ValueError(f"{name} kernel has non-finite values")
            if np.any(tab < 0):
                raise ValueError(f"{name} kernel must be non-negative")
            if np.any(np.diff(tab) > 0):
                raise ValueError(f"{name} kernel must be non-increasing")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha_table", alpha)
        object.__setattr__(self, "beta_table", beta)

    @property
    def stable(self) -> bool:
        """True iff alpha_0 + sum_t alpha_t <= 1, so the intensity never needs clamping."""
        return self.base_intensity + self.excitation.total() <= 1.0

    @property
    def truncation_residue(self) -> Tuple[float, float]:
        """Kernel mass beyond ``horizon_cap`` that the simulator drops (alpha, beta)."""
        from .bounds import tail_sum

        return (tail_sum(self.excitation, self.horizon_cap).exact,
                tail_sum(self.mark_coupling, self.horizon_cap).exact)

    def with_(self, **changes) -> "HawkesParams":
        kw = dict(base_intensity=self.base_intensity, excitation=self.excitation,
                  mark_coupling=self.mark_coupling, mark_std=self.mark_std,
                  horizon_cap=self.horizon_cap, mark_clip=self.mark_clip)
        kw.update(changes)
        return HawkesParams(**kw)


@dataclass(frozen=True)
class EventHistory:
    """Event indicators and marks for steps 1..length, oldest first."""

    indicators: Tuple[int, ...] = ()
    marks: Tuple[float, ...] = ()

    def __post_init__(self):
        ind = tuple(int(e) for e in self.indicators)
        mk = tuple(float(x) for x in self.marks)
        if len(ind) != len(mk):
            raise ValueError("indicators and marks must have equal length")
        for e, x in zip(ind, mk):
            if e not in (0, 1):
                raise ValueError("indicators must be 0 or 1")
            if not math.isfinite(x):
                raise ValueError("marks must be finite")
            if e == 0 and x != 0.0:
                raise ValueError("a non-event must carry the zero mark")
        object.__setattr__(self, "indicators", ind)
        object.__setattr__(self, "marks", mk)

    def __len__(self) -> int:
        return len(self.indicators)

    @property
    def length(self) -> int:
        return len(self.indicators)

    def append(self, indicator: int, mark: float) -> "EventHistory":
        return EventHistory(self.indicators + (indicator,), self.marks + (mark,))

    def recent(self, n: int) -> Tuple[np.ndarray, np.ndarray]:
        """Most-recent-first indicator and mark arrays of length ``n`` (zero padded)."""
        return _recent_first(self.indicators, self.marks, n)

    @classmethod
    def from_events(cls, events: Iterable[Tuple[int, float]]) -> "EventHistory":
        events = list(events)
        return cls(tuple(e for e, _ in events), tuple(x for _, x in events))


def _recent_first(indicators: Sequence[int], marks: Sequence[float], n: int):
    e = np.zeros(n)
    x = np.zeros(n)
    k = min(n, len(indicators))
    if k:
        e[:k] = indicators[-1:-k - 1:-1]
        x[:k] = marks[-1:-k - 1:-1]
    return e, x


def _intensity_from(params: HawkesParams, e_recent: np.ndarray) -> float:
    p = params.base_intensity + float(np.dot(params.alpha_table, e_recent))
    if not math.isfinite(p):
        raise ValueError("non-finite intensity")
    return min(max(p, 0.0), 1.0)


def _mark_mean_from(params: HawkesParams, x_recent: np.ndarray) -> float:
    return float(np.dot(params.beta_table, x_recent))


def intensity(params: HawkesParams, history: EventHistory) -> float:
    e, _ = history.recent(params.horizon_cap)
    return _intensity_from(params, e)


def mark_mean(params: HawkesParams, history: EventHistory) -> float:
    # marks of non-events are 0, so beta . X equals beta . (E * X)
    _, x = history.recent(params.horizon_cap)
    m = _mark_mean_from(params, x)
    if not math.isfinite(m):
        raise ValueError("non-finite mark mean")
    return m


def _draw(params: HawkesParams, p: float, mu: float, rng: np.random.Generator) -> Tuple[int, float]:
    if rng.random() < p:
        mark = mu + params.mark_std * rng.standard_normal()
        if params.mark_clip is not None:
            mark = min(max(mark, -params.mark_clip), params.mark_clip)
        return 1, float(mark)
    return 0, 0.0


def sample_step(params: HawkesParams, history: EventHistory,
                rng: np.random.Generator) -> Tuple[int, float]:
    """Draw the next (indicator, mark). ``history`` is left untouched."""
    e, x = history.recent(params.horizon_cap)
    return _draw(params, _intensity_from(params, e), _mark_mean_from(params, x), rng)


def sample_next_marks(params: HawkesParams, history: EventHistory, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    """``n`` independent draws of the next mark given ``history`` (0 for non-events)."""
    p = intensity(params, history)
    mu = mark_mean(params, history)
    hit = rng.random(n) < p
    marks = mu + params.mark_std * rng.standard_normal(n)
    if params.mark_clip is not None:
        np.clip(marks, -params.mark_clip, params.mark_clip, out=marks)
    return np.where(hit, marks, 0.0)


def mark_tv_bound(params: HawkesParams, T: int) -> float:
    """N_T = alpha_T + erf(beta_T / (2 sqrt 2)): TV influence on the next mark of a
    unit-mark event T steps old."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return params.excitation.value(T) + erf(params.mark_coupling.value(T) / (2.0 * math.sqrt(2.0)))


class _Stepper:
    """Growing Hawkes state with recent-first buffers; draws match ``sample_step``."""

    def __init__(self, params: HawkesParams, history: Optional[EventHistory] = None):
        self.params = params
        cap = params.horizon_cap
        history = history or EventHistory()
        self.e, self.x = history.recent(cap)
        self.indicators = list(history.indicators)
        self.marks = list(history.marks)

    def step(self, rng: np.random.Generator) -> Tuple[int, float]:
        ind, mark = _draw(self.params, _intensity_from(self.params, self.e),
                          _mark_mean_from(self.params, self.x), rng)
        self.e[1:] = self.e[:-1]
        self.x[1:] = self.x[:-1]
        self.e[0] = ind
        self.x[0] = mark
        self.indicators.append(ind)
        self.marks.append(mark)
        return ind, mark

    def history(self) -> EventHistory:
        return EventHistory(tuple(self.indicators), tuple(self.marks))


class HawkesBatch:
    """``B`` independent chains advanced in lockstep (recent-first buffers, shape (B, cap)).

    Every step draws one uniform and one normal per chain, so a chain's path depends
    only on the generator stream, not on which branch its draws take.
    """

    def __init__(self, params: HawkesParams, e: np.ndarray, x: np.ndarray):
        cap = params.horizon_cap
        e = np.array(e, dtype=float)
        x = np.array(x, dtype=float)
        if e.ndim != 2 or e.shape[1] != cap or x.shape != e.shape:
            raise ValueError(f"buffers must have shape (B, {cap})")
        self.params = params
        self.e = e
        self.x = x

    @classmethod
    def empty(cls, params: HawkesParams, B: int) -> "HawkesBatch":
        z = np.zeros((B, params.horizon_cap))
        return cls(params, z, z.copy())

    @classmethod
    def from_history(cls, params: HawkesParams, history: EventHistory, B: int = 1) -> "HawkesBatch":
        e, x = history.recent(params.horizon_cap)
        return cls(params, np.tile(e, (B, 1)), np.tile(x, (B, 1)))

    @property
    def B(self) -> int:
        return self.e.shape[0]

    def take(self, idx) -> "HawkesBatch":
        return HawkesBatch(self.params, self.e[idx], self.x[idx])

    def intensity(self) -> np.ndarray:
        p = self.params
        return np.clip(p.base_intensity + self.e @ p.alpha_table, 0.0, 1.0)

    def mark_mean(self) -> np.ndarray:
        return self.x @ self.params.beta_table

    def step(self, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        p = self.params
        hit = rng.random(self.B) < self.intensity()
        marks = self.mark_mean() + p.mark_std * rng.standard_normal(self.B)
        if p.mark_clip is not None:
            np.clip(marks, -p.mark_clip, p.mark_clip, out=marks)
        marks = np.where(hit, marks, 0.0)
        self.e[:, 1:] = self.e[:, :-1]
        self.x[:, 1:] = self.x[:, :-1]
        self.e[:, 0] = hit
        self.x[:, 0] = marks
        return hit.astype(np.int64), marks


def rollout_events(params: HawkesParams, length: int, seed) -> EventHistory:
    if length < 0:
        raise ValueError("length must be >= 0")
    rng = np.random.default_rng(seed)
    st = _Stepper(params)
    for _ in range(length):
        st.step(rng)
    return st.history()


# ---------------------------------------------------------------------------
# Empirical total variation
# ---------------------------------------------------------------------------

def empirical_tv(a: np.ndarray, b: np.ndarray, lo: float = -8.0, hi: float = 8.0,
                 bins: int = 201, zero_atom: bool = True) -> float:
    """Binned TV distance between two samples.

    Equal-width bins on [lo, hi]; values outside land in the edge bins. With
    ``zero_atom`` exact zeros (non-events) get a bin of their own.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def hist(v):
        counts = np.zeros(bins + 1)
        if zero_atom:
            z = v == 0.0
            counts[bins] = z.sum()
            v = v[~z]
        idx = np.floor((v - lo) / (hi - lo) * bins).astype(np.int64)
        np.clip(idx, 0, bins - 1, out=idx)
        counts[:bins] += np.bincount(idx, minlength=bins)
        return counts

    pa = hist(a) / a.size
    pb = hist(b) / b.size
    return 0.5 * float(np.abs(pa - pb).sum())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_history_csv(history: EventHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "indicator", "mark"])
        for t, (e, x) in enumerate(zip(history.indicators, history.marks), start=1):
            w.writerow([t, e, repr(x)])


def read_history_csv(path) -> EventHistory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for i, row in enumerate(rows, start=1):
        if int(row["t"]) != i:
            raise ValueError(f"row {i}: time steps must run 1..n in order")
    return EventHistory(tuple(int(r["indicator"]) for r in rows),
                        tuple(float(r["mark"]) for r in rows))
