"""Pendulum policy-evaluation sweep under Hawkes event perturbations.

For every trial and excitation decay rate ``lambda_alpha`` one long path is
simulated under a fixed controller; pathwise LSTD is fitted on burn-in-discarded
prefixes of that path for every (N, T) on the grid, and the fitted values are
compared with Monte Carlo ground truth at states taken from the continuation of
the same path.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bounds import MixingParams, burn_in_length
from .event_process import DecayKernel, HawkesBatch, HawkesParams
from .lstd import (build_design, default_pendulum_features, fixed_point_residual, gram_min_eigenvalue,
                   lstd_solve, SamplePath)
from .mdp_core import PendulumEnv

__all__ = [
    "EnergyShapingPolicy",
    "ExperimentConfig",
    "TrialResult",
    "hawkes_for",
    "simulate_path",
    "ground_truth_values",
    "run_trial",
    "run_sweep",
    "nearest_rank",
    "median",
    "aggregate",
    "emit_report",
    "RAW_COLUMNS",
    "AGG_COLUMNS",
]


@dataclass(frozen=True)
class EnergyShapingPolicy:
    """Energy pumping towards the upright energy, linear feedback near the top.

    With theta = 0 upright the free motion conserves E = thetadot^2 / 2 + w2 cos(theta),
    w2 = 3 g / (2 l). Away from the top the torque is ``k_energy (E_up - E) thetadot``;
    within ``switch`` radians of upright it is ``-kp theta - kd thetadot``. Output is
    clipped to the torque limit.
    """

    k_energy: float = 0.1
    kp: float = 10.0
    kd: float = 2.0
    switch: float = 0.6
    w2: float = 15.0
    max_torque: float = 2.0

    def __call__(self, theta, thetadot):
        theta = np.asarray(theta, dtype=float)
        thetadot = np.asarray(thetadot, dtype=float)
        energy = 0.5 * thetadot ** 2 + self.w2 * np.cos(theta)
        pump = self.k_energy * (self.w2 - energy) * thetadot
        hold = -self.kp * theta - self.kd * thetadot
        u = np.where(np.abs(theta) < self.switch, hold, pump)
        return np.clip(u, -self.max_torque, self.max_torque)


@dataclass(frozen=True)
class ExperimentConfig:
    # environment
    gamma: float = 0.9
    gain: float = 0.5
    injection: Tuple[float, ...] = (1.0, 0.5)
    # event process
    base_intensity: float = 0.1
    alpha_scale: float = 1.0
    beta_scale: float = 1.0
    beta_power: float = 2.0
    mark_std: float = 1.0
    mark_clip: float = 4.0
    horizon_cap: int = 64
    # policy
    policy: EnergyShapingPolicy = EnergyShapingPolicy()
    # grid
    T_values: Tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6)
    N_values: Tuple[int, ...] = (500, 2000, 10000)
    lambdas: Tuple[float, ...] = (0.5, 1.0, 2.0)
    default_T: int = 5
    default_N: int = 10000
    default_lambda: float = 1.0
    trials: int = 20
    percentiles: Tuple[Tuple[float, float], ...] = ((40.0, 60.0), (20.0, 80.0))
    base_seed: int = 0
    # ground truth
    gt_rollouts: int = 128
    gt_tolerance: float = 1e-3
    n_eval: int = 100
    eval_spacing: int = 10
    # burn-in
    delta: float = 0.1
    mixing: MixingParams = MixingParams(beta_bar=1.0, b=0.05, kappa=1.0)

    def __post_init__(self):
        for name in ("T_values", "N_values", "lambdas", "injection"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "percentiles", tuple(tuple(float(v) for v in p) for p in self.percentiles))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not (self.T_values and self.N_values and self.lambdas):
            raise ValueError("grid lists must be non-empty")
        if min(self.T_values) < 0 or min(self.N_values) < 1 or min(self.lambdas) <= 0:
            raise ValueError("invalid grid values")
        if self.gt_rollouts < 64:
            raise ValueError("ground truth needs at least 64 rollouts per state")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        for lo, hi in self.percentiles:
            if not 0 <= lo <= hi <= 100:
                raise ValueError("percentile pairs must satisfy 0 <= lo <= hi <= 100")

    @property
    def env(self) -> PendulumEnv:
        return PendulumEnv(gain=self.gain, injection=self.injection, gamma=self.gamma)

    @property
    def gt_horizon(self) -> int:
        return math.ceil(math.log(self.gt_tolerance * (1 - self.gamma)) / math.log(self.gamma))

    @property
    def T_max(self) -> int:
        return max(max(self.T_values), self.env.W - 1)

    def seed(self, trial: int) -> int:
        return self.base_seed + trial

    def with_(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def describe(self) -> Dict[str, object]:
        out = dataclasses.asdict(self)
        out["gt_horizon"] = self.gt_horizon
        return out


@dataclass(frozen=True)
class TrialResult:
    N: int
    T: int
    lambda_alpha: float
    trial: int
    mse: float
    nu: float
    residual: float
    wall_time: float = 0.0
    status: str = "ok"


def hawkes_for(cfg: ExperimentConfig, lam: float) -> HawkesParams:
    return HawkesParams(
        base_intensity=cfg.base_intensity,
        excitation=DecayKernel.exponential(cfg.alpha_scale, lam),
        mark_coupling=DecayKernel.polynomial(cfg.beta_scale, cfg.beta_power),
        mark_std=cfg.mark_std,
        horizon_cap=cfg.horizon_cap,
        mark_clip=cfg.mark_clip,
    )


def _transition(env: PendulumEnv, theta, thetadot, action, x):
    return env.transition(theta, thetadot, action, x[:, : env.W])


def simulate_path(cfg: ExperimentConfig, lam: float, seed: int, length: int, n_eval: int, spacing: int):
    """Simulate ``length`` steps, then snapshot ``n_eval`` states every ``spacing`` steps.

    Returns a dict with per-step arrays ``theta``, ``thetadot``, ``windows``
    (most recent first, T_max+1 wide), ``rewards``, ``marks`` (the event drawn during
    each step) and the snapshots ``eval_theta``,
    ``eval_thetadot``, ``eval_e``, ``eval_x`` (full event buffers).
    """
    env = cfg.env
    rng = np.random.default_rng(seed)
    params = hawkes_for(cfg, lam)
    hb = HawkesBatch.empty(params, 1)
    k = cfg.T_max + 1
    theta = np.array([rng.uniform(-np.pi, np.pi)])
    thetadot = np.array([rng.uniform(-1.0, 1.0)])
    th = np.empty(length)
    om = np.empty(length)
    win = np.empty((length, k))
    rew = np.empty(length)
    mk = np.empty(length)
    for t in range(length):
        th[t] = theta[0]
        om[t] = thetadot[0]
        win[t] = hb.x[0, :k]
        a = cfg.policy(theta, thetadot)
        theta, thetadot, r = _transition(env, theta, thetadot, a, hb.x)
        rew[t] = r[0]
        mk[t] = hb.step(rng)[1][0]
    ev_th = np.empty(n_eval)
    ev_om = np.empty(n_eval)
    ev_e = np.empty((n_eval, params.horizon_cap))
    ev_x = np.empty((n_eval, params.horizon_cap))
    for j in range(n_eval):
        for _ in range(spacing):
            a = cfg.policy(theta, thetadot)
            theta, thetadot, _ = _transition(env, theta, thetadot, a, hb.x)
            hb.step(rng)
        ev_th[j], ev_om[j] = theta[0], thetadot[0]
        ev_e[j], ev_x[j] = hb.e[0], hb.x[0]
    return {"theta": th, "thetadot": om, "windows": win, "rewards": rew, "marks": mk,
            "eval_theta": ev_th, "eval_thetadot": ev_om, "eval_e": ev_e, "eval_x": ev_x}


def ground_truth_values(env: PendulumEnv, policy, params: HawkesParams, theta, thetadot,
                        e_buf, x_buf, rollouts: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Mean discounted return over ``rollouts`` continuations from each full augmented state."""
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    if rollouts < 1 or horizon < 1:
        raise ValueError("rollouts and horizon must be >= 1")
    rep = np.repeat(np.arange(n), rollouts)
    th = theta[rep].copy()
    om = np.asarray(thetadot, dtype=float)[rep].copy()
    hb = HawkesBatch(params, np.asarray(e_buf)[rep], np.asarray(x_buf)[rep])
    ret = np.zeros(n * rollouts)
    disc = 1.0
    for _ in range(horizon):
        a = policy(th, om)
        th, om, r = _transition(env, th, om, a, hb.x)
        ret += disc * r
        disc *= env.gamma
        hb.step(rng)
    return ret.reshape(n, rollouts).mean(axis=1)


def run_trial(cfg: ExperimentConfig, lam: float, trial: int) -> List[TrialResult]:
    """Every (N, T) grid point for one (trial, lambda) pair."""
    seed = cfg.seed(trial)
    t0 = time.perf_counter()
    burn = {N: burn_in_length(N, cfg.delta, cfg.mixing) for N in cfg.N_values}
    length = max(burn[N] + N for N in cfg.N_values)
    out: List[TrialResult] = []
    try:
        path = simulate_path(cfg, lam, seed, length, cfg.n_eval, cfg.eval_spacing)
        env = cfg.env
        params = hawkes_for(cfg, lam)
        gt_rng = np.random.default_rng([seed, 1])
        truth = ground_truth_values(env, cfg.policy, params, path["eval_theta"], path["eval_thetadot"],
                                    path["eval_e"], path["eval_x"], cfg.gt_rollouts, cfg.gt_horizon, gt_rng)
        eval_states = np.stack([path["eval_theta"], path["eval_thetadot"]], axis=1)
        states = np.stack([path["theta"], path["thetadot"]], axis=1)
    except Exception as exc:  # recorded, sweep continues
        return [TrialResult(N, T, lam, trial, float("nan"), float("nan"), float("nan"),
                            0.0, f"error: {type(exc).__name__}: {exc}")
                for N in cfg.N_values for T in cfg.T_values]
    setup = time.perf_counter() - t0
    for N in cfg.N_values:
        lo = burn[N]
        for T in cfg.T_values:
            t1 = time.perf_counter()
            try:
                feats = default_pendulum_features(T, env.max_speed, cfg.mark_clip)
                sp = SamplePath(states[lo:lo + N], path["windows"][lo:lo + N, : T + 1],
                                path["rewards"][lo:lo + N], seed, "energy-shaping", lo)
                Phi, Phi_next, r = build_design(sp, feats)
                sol = lstd_solve(Phi, Phi_next, r, cfg.gamma)
                vhat = np.clip(feats(eval_states, path["eval_x"][:, : T + 1]) @ sol.weights,
                               -1 / (1 - cfg.gamma), 1 / (1 - cfg.gamma))
                mse = float(np.mean((vhat - truth) ** 2))
                nu = gram_min_eigenvalue(Phi)
                res = fixed_point_residual(sol.weights, Phi, Phi_next, r, cfg.gamma)
                status = "ok"
            except Exception as exc:
                mse = nu = res = float("nan")
                status = f"error: {type(exc).__name__}: {exc}"
            out.append(TrialResult(N, T, lam, trial, mse, nu, res,
                                   time.perf_counter() - t1 + setup / (len(cfg.N_values) * len(cfg.T_values)),
                                   status))
    return out


def _run_job(args):
    cfg, lam, trial = args
    return run_trial(cfg, lam, trial)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> List[TrialResult]:
    """All trials and grid points, ordered by (lambda, N, T, trial) regardless of ``jobs``."""
    tasks = [(cfg, lam, trial) for lam in cfg.lambdas for trial in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_job, tasks))
    else:
        chunks = [_run_job(t) for t in tasks]
    results = [r for chunk in chunks for r in chunk]
    lam_pos = {lam: i for i, lam in enumerate(cfg.lambdas)}
    return sorted(results, key=lambda r: (lam_pos[r.lambda_alpha], r.N, r.T, r.trial))


# ---------------------------------------------------------------------------
# Aggregation and reports
# ---------------------------------------------------------------------------

def nearest_rank(values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * n)-th smallest value (first for pct = 0)."""
    v = sorted(values)
    if not v:
        raise ValueError("no values")
    if not 0 <= pct <= 100:
        raise ValueError("percentile must lie in [0, 100]")
    rank = max(1, math.ceil(pct / 100.0 * len(v)))
    return v[rank - 1]


def median(values: Sequence[float]) -> float:
    v = sorted(values)
    if not v:
        raise ValueError("no values")
    mid = len(v) // 2
    return v[mid] if len(v) % 2 else 0.5 * (v[mid - 1] + v[mid])


def aggregate(results: Sequence[TrialResult], percentiles=((40.0, 60.0), (20.0, 80.0))) -> List[Dict[str, object]]:
    """One row per (lambda, N, T) in first-seen order, over successful trials."""
    groups: Dict[Tuple[float, int, int], List[float]] = {}
    counts: Dict[Tuple[float, int, int], int] = {}
    for r in results:
        key = (r.lambda_alpha, r.N, r.T)
        groups.setdefault(key, [])
        counts[key] = counts.get(key, 0) + 1
        if r.status == "ok" and math.isfinite(r.mse):
            groups[key].append(r.mse)
    rows = []
    for key, vals in groups.items():
        row: Dict[str, object] = {"lambda_alpha": key[0], "N": key[1], "T": key[2],
                                  "n_trials": counts[key], "n_ok": len(vals)}
        row["median_mse"] = median(vals) if vals else float("nan")
        for lo, hi in percentiles:
            row[f"p{lo:g}_mse"] = nearest_rank(vals, lo) if vals else float("nan")
            row[f"p{hi:g}_mse"] = nearest_rank(vals, hi) if vals else float("nan")
        rows.append(row)
    return rows


RAW_COLUMNS = ("lambda_alpha", "N", "T", "trial", "mse", "nu_N", "residual", "status")
AGG_COLUMNS = ("lambda_alpha", "N", "T", "n_trials", "n_ok", "median_mse")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_report(results: Sequence[TrialResult], out_dir, cfg: Optional[ExperimentConfig] = None,
                extra_manifest: Optional[Dict[str, object]] = None) -> Dict[str, str]:
    """Write raw.csv, aggregate.csv, timing.csv and manifest.txt into ``out_dir``.

    raw.csv and aggregate.csv contain no timing, so identical runs give identical bytes.
    """
    os.makedirs(out_dir, exist_ok=True)
    percentiles = cfg.percentiles if cfg is not None else ((40.0, 60.0), (20.0, 80.0))
    paths = {k: os.path.join(out_dir, f) for k, f in
             (("raw", "raw.csv"), ("aggregate", "aggregate.csv"), ("timing", "timing.csv"),
              ("manifest", "manifest.txt"))}
    with open(paths["raw"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RAW_COLUMNS)
        for r in results:
            w.writerow([_fmt(r.lambda_alpha), r.N, r.T, r.trial, _fmt(r.mse), _fmt(r.nu),
                        _fmt(r.residual), r.status])
    pct_cols = []
    for lo, hi in percentiles:
        pct_cols += [f"p{lo:g}_mse", f"p{hi:g}_mse"]
    with open(paths["aggregate"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(AGG_COLUMNS) + pct_cols)
        for row in aggregate(results, percentiles):
            w.writerow([_fmt(row[c]) for c in list(AGG_COLUMNS) + pct_cols])
    with open(paths["timing"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("lambda_alpha", "N", "T", "trial", "wall_time"))
        for r in results:
            w.writerow([_fmt(r.lambda_alpha), r.N, r.T, r.trial, f"{r.wall_time:.6f}"])
    with open(paths["manifest"], "w") as fh:
        fh.write("# exomdp experiment manifest\n")
        fh.write(f"python = {sys.version.split()[0]}\n")
        fh.write(f"numpy = {np.__version__}\n")
        fh.write(f"platform = {platform.platform()}\n")
        if cfg is not None:
            for k, v in cfg.describe().items():
                fh.write(f"config.{k} = {v}\n")
            for note in INTERPRETATIONS:
                fh.write(f"interpretation = {note}\n")
        for k, v in (extra_manifest or {}).items():
            fh.write(f"{k} = {v}\n")
    return paths


INTERPRETATIONS = (
    "fixed policy: energy pumping with linear feedback near upright (no trained network)",
    "event injection: torque = action + gain * sum_k injection[k] * x_k over the most recent marks",
    "marks clipped to +-mark_clip so the explosive mark recursion stays bounded",
    "ground truth: mean discounted Monte Carlo return from the full augmented state",
    "evaluation states: snapshots every eval_spacing steps after the training path",
    "burn-in: burn_in_length(N, delta, mixing) steps discarded before each prefix of length N",
    "one continuous path per (trial, lambda); no episode resets",
)
