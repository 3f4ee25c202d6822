"""Command line entry point: ``exomdp <command> [options]``.

Exit status is 1 when an invariant checked during the run fails, 2 on usage
errors, and 0 otherwise.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time
from typing import List, Optional, Tuple

import numpy as np

from . import config as cfgmod
from .bounds import bound_table
from .event_process import rollout_events, write_history_csv
from .experiment import (ExperimentConfig, aggregate, emit_report, ground_truth_values, hawkes_for,
                         run_sweep, simulate_path)
from .lstd import (SamplePath, build_design, default_pendulum_features, fixed_point_residual,
                   gram_min_eigenvalue, lstd_solve, write_record)
from .bounds import burn_in_length, bellman_error_threshold, policy_improvement_slack
from .mdp_core import FiniteChainEnv, write_trajectory_csv
from .policy_iter import McConfig, check_improvement_guarantees, run_policy_iteration

RESIDUAL_TOL = 1e-8


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _report(checks: List[Tuple[str, bool]]) -> int:
    for name, ok in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return 0 if all(ok for _, ok in checks) else 1


def cmd_simulate_hawkes(args) -> int:
    sections = cfgmod.load_sections(args.config)
    params = cfgmod.hawkes_from(sections)
    seed = 0 if args.seed is None else args.seed
    hist = rollout_events(params, args.length, seed)
    path = os.path.join(_out_dir(args), "hawkes.csv")
    write_history_csv(hist, path)
    ind = np.array(hist.indicators)
    marks = np.array(hist.marks)
    print(f"steps = {len(hist)}")
    print(f"event_rate = {ind.mean() if len(ind) else 0.0:.6f}")
    print(f"mean_abs_mark = {np.abs(marks[ind == 1]).mean() if ind.any() else 0.0:.6f}")
    print(f"stable = {params.stable}")
    print(f"written = {path}")
    return _report([("non-events carry mark 0", bool(np.all(marks[ind == 0] == 0.0)))])


def cmd_bounds(args) -> int:
    sections = cfgmod.load_sections(args.config)
    bs = cfgmod.bounds_from(sections)
    spec = bs.spec
    rows = []
    for T in bs.T_values:
        row = {"T": T}
        row.update(bound_table(spec, bs.gamma, T, epsilon=bs.epsilon))
        rows.append(row)
    cols = list(rows[0].keys())
    checks = []
    for row in rows:
        for k in ("M", "N"):
            ib = row.get(f"tail_{k}_integral")
            if ib is not None:
                checks.append((f"T={row['T']} integral bound >= exact tail ({k})", ib >= row[f"tail_{k}"]))
    if args.format == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(row.get(c, "")) if isinstance(row.get(c), float) else row.get(c, "") for c in cols])
    else:
        widths = [max(len(c), 12) for c in cols]
        print("  ".join(c.rjust(w) for c, w in zip(cols, widths)))
        for row in rows:
            cells = []
            for c, w in zip(cols, widths):
                v = row.get(c, "")
                cells.append((f"{v:.6g}" if isinstance(v, float) else str(v)).rjust(w))
            print("  ".join(cells))
    if args.out:
        with open(os.path.join(_out_dir(args), "bounds.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for row in rows:
                w.writerow([repr(row.get(c)) if isinstance(row.get(c), float) else row.get(c, "") for c in cols])
    failed = [c for c in checks if not c[1]]
    for name, _ in failed:
        print(f"[FAIL] {name}", file=sys.stderr)
    return 1 if failed else 0


def _experiment_config(args) -> ExperimentConfig:
    cfg = cfgmod.experiment_from(cfgmod.load_sections(args.config))
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    return cfg.with_(**changes) if changes else cfg


def cmd_evaluate(args) -> int:
    cfg = _experiment_config(args)
    env = cfg.env
    lam, T, N = cfg.default_lambda, cfg.default_T, cfg.default_N
    seed = cfg.seed(0)
    burn = burn_in_length(N, cfg.delta, cfg.mixing)
    path = simulate_path(cfg, lam, seed, burn + N, cfg.n_eval, cfg.eval_spacing)
    states = np.stack([path["theta"], path["thetadot"]], axis=1)
    feats = default_pendulum_features(T, env.max_speed, cfg.mark_clip)
    sp = SamplePath(states[burn:], path["windows"][burn:, : T + 1], path["rewards"][burn:], seed,
                    "energy-shaping", burn)
    Phi, Phi_next, r = build_design(sp, feats)
    sol = lstd_solve(Phi, Phi_next, r, cfg.gamma)
    nu = gram_min_eigenvalue(Phi)
    res = fixed_point_residual(sol.weights, Phi, Phi_next, r, cfg.gamma)
    truth = ground_truth_values(env, cfg.policy, hawkes_for(cfg, lam), path["eval_theta"],
                                path["eval_thetadot"], path["eval_e"], path["eval_x"], cfg.gt_rollouts,
                                cfg.gt_horizon, np.random.default_rng([seed, 1]))
    ev = np.stack([path["eval_theta"], path["eval_thetadot"]], axis=1)
    vhat = np.clip(feats(ev, path["eval_x"][:, : T + 1]) @ sol.weights, -1 / (1 - cfg.gamma), 1 / (1 - cfg.gamma))
    mse = float(np.mean((vhat - truth) ** 2))
    out = _out_dir(args)
    write_record(os.path.join(out, "lstd.txt"), sol.weights, nu, res, sol.rank,
                 {"N": N, "T": T, "lambda_alpha": lam, "burn_in": burn, "mse": repr(mse)})
    marks = path["marks"]
    actions = cfg.policy(path["theta"], path["thetadot"])
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), states, actions, path["rewards"],
                         (marks != 0).astype(int), marks)
    print(f"N = {N}  T = {T}  lambda_alpha = {lam}  burn_in = {burn}")
    print(f"rank = {sol.rank}/{feats.d}  nu_N = {nu:.6g}  residual = {res:.3g}  mse = {mse:.6g}")
    return _report([("fixed-point residual <= 1e-8", res <= RESIDUAL_TOL),
                    ("mse finite", math.isfinite(mse)),
                    ("rewards in [0, 1]", bool(np.all((path["rewards"] >= 0) & (path["rewards"] <= 1))))])


def cmd_policy_iter(args) -> int:
    fs = cfgmod.finite_from(cfgmod.load_sections(args.config))
    seed = fs.seed if args.seed is None else args.seed
    env = FiniteChainEnv.random(seed, fs.n_states, fs.n_actions, fs.window, fs.m_scale, fs.m_rate,
                                fs.n_scale, fs.n_rate, fs.gamma)
    mc = McConfig(fs.n_completions, fs.n_transition_samples, None, fs.tolerance, seed)
    rep = run_policy_iteration(env, fs.T, fs.k_max, mc, exact=fs.exact)
    spec = env.decay_spec()
    thr = bellman_error_threshold(spec, env.gamma, rep.T)
    slack = policy_improvement_slack(spec, env.gamma, rep.T)
    counts = check_improvement_guarantees(rep, thr, slack)
    out = _out_dir(args)
    rows = rep.rows()
    with open(os.path.join(out, "policy_iter.csv"), "w", newline="") as fh:
        cols = ["k", "mean_value", "min_value", "max_bellman_error", "min_value_change", "n_policy_changes"]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
    with open(os.path.join(out, "policy_iter_summary.txt"), "w") as fh:
        fh.write(f"states = {env.n_states}\nactions = {env.n_actions}\nwindow = {env.W}\nT = {rep.T}\n")
        fh.write(f"iterations = {rep.n_improvements}\nconverged = {rep.converged}\n")
        fh.write(f"bellman_error_threshold = {thr!r}\nimprovement_slack = {slack!r}\n")
        fh.write(f"final_policy = {' '.join(str(int(a)) for a in rep.final_policy.table)}\n")
        fh.write(f"final_mean_value = {float(rep.final_value.mean())!r}\n")
    print(f"iterations = {rep.n_improvements}  converged = {rep.converged}  "
          f"final mean value = {rep.final_value.mean():.6f}")
    return _report([("improvement or small Bellman error at every state",
                     counts["improvement_or_small_error"] == 0),
                    ("value decrease within slack", counts["bounded_decrease"] == 0)])


def trend_checks(results, cfg: ExperimentConfig) -> List[Tuple[str, bool]]:
    """The three qualitative MSE trends, for the grid points the config contains."""
    med = {(r["lambda_alpha"], r["N"], r["T"]): r["median_mse"] for r in aggregate(results, cfg.percentiles)}
    checks = []
    lam0, T0, N0 = cfg.default_lambda, cfg.default_T, cfg.default_N
    ns = sorted(cfg.N_values)
    if len(ns) > 1:
        m = [med.get((lam0, n, T0), math.nan) for n in ns]
        checks.append((f"median MSE strictly decreasing in N {ns}: {[f'{v:.4g}' for v in m]}",
                       all(a > b for a, b in zip(m, m[1:]))))
    ts = sorted(cfg.T_values)
    if len(ts) > 2:
        m = [med.get((lam0, N0, t), math.nan) for t in ts]
        finite = all(math.isfinite(v) for v in m)
        k = int(np.argmin(m)) if finite else -1
        checks.append((f"median MSE over T {ts} has an interior minimum at T={ts[k] if k >= 0 else '?'} in [1, 4]",
                       finite and 0 < k < len(ts) - 1 and 1 <= ts[k] <= 4))
    ls = sorted(cfg.lambdas)
    if len(ls) > 1:
        m = [med.get((l, N0, T0), math.nan) for l in ls]
        checks.append((f"median MSE non-increasing in lambda_alpha {ls}: {[f'{v:.4g}' for v in m]}",
                       all(a >= b for a, b in zip(m, m[1:]))))
    return checks


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    t0 = time.perf_counter()
    results = run_sweep(cfg, jobs=max(1, args.jobs))
    elapsed = time.perf_counter() - t0
    paths = emit_report(results, _out_dir(args), cfg, {"total_wall_time": f"{elapsed:.1f}"})
    n_fail = sum(1 for r in results if r.status != "ok")
    print(f"{len(results)} results ({n_fail} failed) in {elapsed:.1f}s -> {paths['raw']}")
    checks = [("every trial finished", n_fail == 0)]
    if not args.no_trend_check:
        checks += trend_checks(results, cfg)
    return _report(checks)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="plain-text config file")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--trials", type=int, help="number of trials")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = argparse.ArgumentParser(prog="exomdp", description="MDPs perturbed by exogenous event streams")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate-hawkes", parents=[common], help="simulate the event process to CSV")
    s.add_argument("--length", type=int, default=1000)
    s.set_defaults(func=cmd_simulate_hawkes)
    s = sub.add_parser("bounds", parents=[common], help="tabulate truncation bounds")
    s.add_argument("--format", choices=("text", "csv"), default="text")
    s.set_defaults(func=cmd_bounds)
    s = sub.add_parser("evaluate", parents=[common], help="one pathwise LSTD evaluation on the pendulum")
    s.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("policy-iter", parents=[common], help="window policy iteration on a finite chain")
    s.set_defaults(func=cmd_policy_iter)
    s = sub.add_parser("experiment", parents=[common], help="full LSTD sweep over N, T and lambda_alpha")
    s.add_argument("--no-trend-check", action="store_true", help="skip the MSE trend checks")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"exomdp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
