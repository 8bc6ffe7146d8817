"""Experiment orchestration: coupled N-body vs mean-field runs sharing
Brownian streams, Monte Carlo statistics, and convergence sweeps.

Repetitions are the unit of parallelism.  Every task is a pure function of
(config, master seed, N, repetition); results are aggregated in fixed
(N, repetition) order, so output bytes are identical for any worker count.
"""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as cfg
from .density import pure_state_density
from .grid import GridFunctionReal
from .indicators import delta_stats, pickl_hat, sandwich_check, trace_distance
from .meanfield import (
    NumericalAbortError,
    XiPath,
    ensemble_meanfield,
    picard_meanfield,
    solve_intermediate,
)
from .nbody import NBodyIntegrator, first_marginal, tensor_power
from .streams import (
    DOMAIN_DELTA_SWEEP,
    DOMAIN_EXPERIMENT,
    DOMAIN_XI_PRECOMPUTE,
    BrownianDriver,
)

INDICATORS_HEADER = "t,N,rep,i_hat,r_trace"
DELTA_HEADER = "t,N,rep,delta_l1,delta_l2"
NORM_DRIFT_HEADER = "t,N,rep,norm_drift"
H1_HEADER = "t,h1_moment"
RESIDUALS_HEADER = "iteration,residual"


@dataclass
class ExperimentResult:
    """Rows plus per-(N, t) statistics and the run manifest."""

    indicator_rows: list = field(default_factory=list)
    indicator_summary: dict = field(default_factory=dict)  # (N, t) -> (mean, se)
    delta_rows: list = field(default_factory=list)
    delta_summary: dict = field(default_factory=dict)  # (N, t) -> (l1 mean, l1 se, l2 mean, l2 se)
    norm_drift_rows: list = field(default_factory=list)
    h1_moments: list = field(default_factory=list)  # (t, value)
    picard_residuals: list = field(default_factory=list)
    slope: float | None = None
    slope_ci: float | None = None
    slope_intercept: float | None = None
    manifest: dict = field(default_factory=dict)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def write_atomic(path: str, data: str):
    """Write text atomically: temp file in the target directory + rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: str, rows):
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(x) if isinstance(x, float) else str(x) for x in row))
    write_atomic(path, "\n".join(lines) + "\n")


def _sample_indices(n_steps: int, stride: int):
    idx = list(range(0, n_steps + 1, stride))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return idx


def precompute_xi(config: dict, master_seed: int, threads: int = 1) -> tuple:
    """Frozen mean-field law for the coupled experiments (high-M estimate)."""
    grid = cfg.build_grid(config)
    L = cfg.build_coupling(grid, config)
    V = cfg.build_potential(grid, config)
    u0 = cfg.build_initial(grid, config)
    params = cfg.build_params(config)
    mf = config["meanfield"]
    driver = BrownianDriver(master_seed, params.dt, domain=DOMAIN_XI_PRECOMPUTE)
    T = float(config["time"]["T"])
    if mf["mode"] == "picard":
        result = picard_meanfield(
            u0, driver, params, L, V, T=T, M=int(mf["M"]),
            picard_tol=float(mf["picard_tol"]), max_iters=int(mf["max_iters"]),
            threads=threads,
        )
    else:
        result = ensemble_meanfield(u0, driver, params, L, V, T=T, M=int(mf["M"]))
    return result.xi, result


def _convergence_task(args):
    """One (N, repetition) of the coupled experiment; pure function of args."""
    config, xi_values, n_particles, rep, master_seed = args
    grid = cfg.build_grid(config)
    L = cfg.build_coupling(grid, config)
    V = cfg.build_potential(grid, config)
    u0 = cfg.build_initial(grid, config)
    params = cfg.build_params(config)
    dt = params.dt
    K = int(round(float(config["time"]["T"]) / dt))
    times = np.arange(K + 1) * dt
    xi = XiPath(grid, times, xi_values)
    stride = int(config["output"]["sample_stride"])
    samples = _sample_indices(K, stride)

    driver = BrownianDriver(master_seed, dt, domain=DOMAIN_EXPERIMENT)
    # the mean-field trajectory consumes stream (rep, particle=0): bitwise
    # identical increments to particle 0 of the N-body run (the coupling)
    mf_traj = solve_intermediate(u0, xi, driver.stream(rep, 0), params, L, V)

    budget = float(config["nbody"]["memory_budget_mb"])
    integ = NBodyIntegrator(grid, n_particles, params, L, V, budget_mb=budget)
    Psi = tensor_power(u0, n_particles, budget_mb=budget)
    dWs = np.stack(
        [driver.increments(rep, j, K) for j in range(n_particles)]
    )
    rows = []
    drift_rows = []
    next_sample = 0
    for k in range(K + 1):
        if k == samples[next_sample]:
            marginal = first_marginal(Psi)
            phi = mf_traj.state_at(k)
            i_hat = pickl_hat(marginal, phi)
            r = trace_distance(marginal, pure_state_density(phi))
            if not sandwich_check(i_hat, r):
                raise NumericalAbortError(
                    f"sandwich violated at (N={n_particles}, rep={rep}, step={k})",
                    step=k,
                )
            rows.append((float(times[k]), n_particles, rep, float(i_hat), float(r)))
            drift_rows.append(
                (float(times[k]), n_particles, rep, float(Psi.l2_norm() - 1.0))
            )
            next_sample += 1
            if next_sample >= len(samples):
                break
        try:
            Psi = integ.step(Psi, dWs[:, k])
        except ValueError as exc:
            raise NumericalAbortError(
                f"N-body abort at (N={n_particles}, rep={rep}, step={k}): {exc}",
                step=k,
            ) from exc
    return rows, drift_rows


def _delta_task(args):
    """One (N, repetition) of the mean-field-only delta sweep."""
    config, xi_values, n_particles, rep, master_seed = args
    grid = cfg.build_grid(config)
    L = cfg.build_coupling(grid, config)
    V = cfg.build_potential(grid, config)
    u0 = cfg.build_initial(grid, config)
    params = cfg.build_params(config)
    dt = params.dt
    K = int(round(float(config["time"]["T"]) / dt))
    times = np.arange(K + 1) * dt
    xi = XiPath(grid, times, xi_values)
    stride = int(config["output"]["sample_stride"])
    samples = _sample_indices(K, stride)

    driver = BrownianDriver(master_seed, dt, domain=DOMAIN_DELTA_SWEEP)
    trajs = [
        solve_intermediate(u0, xi, driver.stream(rep, j), params, L, V)
        for j in range(n_particles)
    ]
    rows = []
    for k in samples:
        xi_t = GridFunctionReal(grid, xi_values[k])
        # particles 2..N (indices 1..N-1); particle 0 is always excluded
        stats = delta_stats([t.state_at(k) for t in trajs[1:]], xi_t)
        rows.append(
            (float(times[k]), n_particles, rep, stats.l1_norm, stats.l2_norm)
        )
    h1_fourth = np.stack([t.h1_series for t in trajs]) ** 4
    return rows, h1_fourth[:, samples], [float(times[k]) for k in samples]


def _run_tasks(task_fn, payloads, threads: int):
    if threads <= 1:
        return [task_fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task_fn, payloads))


def _mean_se(values: np.ndarray) -> tuple:
    mean = float(np.mean(values))
    if values.size < 2:
        return mean, 0.0
    se = float(np.std(values, ddof=1) / np.sqrt(values.size))
    return mean, se


def run_convergence(config: dict, threads: int = 1,
                    master_seed: int | None = None) -> ExperimentResult:
    """Coupled N-body vs mean-field experiment over the configured N sweep."""
    cfg.validate_config(config)
    config = cfg.with_defaults(config)
    seed = int(config["mc"]["master_seed"] if master_seed is None else master_seed)
    xi, mf_result = precompute_xi(config, seed, threads=threads)
    reps = int(config["mc"]["repetitions"])
    n_list = sorted(int(n) for n in config["nbody"]["N_list"])

    payloads = [
        (config, xi.values, n, rep, seed) for n in n_list for rep in range(reps)
    ]
    outputs = _run_tasks(_convergence_task, payloads, threads)

    result = ExperimentResult()
    result.picard_residuals = list(getattr(mf_result, "residuals", []))
    for rows, drift_rows in outputs:
        result.indicator_rows.extend(rows)
        result.norm_drift_rows.extend(drift_rows)
    by_nt = {}
    for t, n, rep, i_hat, r in result.indicator_rows:
        by_nt.setdefault((n, t), []).append((i_hat, r))
    for key in sorted(by_nt):
        vals = np.asarray(by_nt[key])
        mean_i, se_i = _mean_se(vals[:, 0])
        mean_r, se_r = _mean_se(vals[:, 1])
        result.indicator_summary[key] = (mean_i, se_i, mean_r, se_r)
    result.manifest = {
        "experiment": "converge",
        "config": config,
        "config_hash": cfg.config_hash(config),
        "master_seed": seed,
        "version": _version(),
        "picard_residuals": result.picard_residuals,
        "indicator_summary": [
            {"N": n, "t": t, "i_hat_mean": v[0], "i_hat_se": v[1],
             "r_trace_mean": v[2], "r_trace_se": v[3]}
            for (n, t), v in sorted(result.indicator_summary.items())
        ],
    }
    return result


def fit_loglog_slope(n_values, y_values):
    """OLS slope of log(y) on log(N - 1); returns (slope, intercept, ci95)."""
    x = np.log(np.asarray(n_values, dtype=float) - 1.0)
    y = np.log(np.asarray(y_values, dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = y - A @ coef
    dof = max(x.size - 2, 1)
    s2 = float(resid @ resid) / dof
    sxx = float(np.sum((x - x.mean()) ** 2))
    se = np.sqrt(s2 / sxx) if sxx > 0 else 0.0
    return slope, intercept, 1.96 * se


def run_delta_sweep(config: dict, threads: int = 1,
                    master_seed: int | None = None) -> ExperimentResult:
    """Mean-field-only sweep of delta^N statistics over the configured N list."""
    cfg.validate_config(config)
    config = cfg.with_defaults(config)
    seed = int(config["mc"]["master_seed"] if master_seed is None else master_seed)
    xi, mf_result = precompute_xi(config, seed, threads=threads)
    reps = int(config["mc"]["repetitions"])
    n_list = sorted(int(n) for n in config["nbody"]["N_list"])
    if min(n_list) < 2:
        raise ValueError("delta sweep needs N >= 2")

    payloads = [
        (config, xi.values, n, rep, seed) for n in n_list for rep in range(reps)
    ]
    outputs = _run_tasks(_delta_task, payloads, threads)

    result = ExperimentResult()
    result.picard_residuals = list(getattr(mf_result, "residuals", []))
    h1_blocks = []
    sample_times = None
    for rows, h1_fourth, times in outputs:
        result.delta_rows.extend(rows)
        h1_blocks.append(h1_fourth)
        sample_times = times
    by_nt = {}
    for t, n, rep, l1, l2 in result.delta_rows:
        by_nt.setdefault((n, t), []).append((l1, l2))
    for key in sorted(by_nt):
        vals = np.asarray(by_nt[key])
        m1, s1 = _mean_se(vals[:, 0])
        m2, s2 = _mean_se(vals[:, 1])
        result.delta_summary[key] = (m1, s1, m2, s2)

    # slope statistic: per-N mean over positive sample times of E|delta|_L2
    per_n = []
    for n in n_list:
        vals = [v[2] for (nn, t), v in result.delta_summary.items()
                if nn == n and t > 0.0]
        per_n.append(float(np.mean(vals)))
    slope, intercept, ci = fit_loglog_slope(n_list, per_n)
    result.slope, result.slope_intercept, result.slope_ci = slope, intercept, ci

    h1_mean = np.mean(np.concatenate(h1_blocks, axis=0), axis=0)
    result.h1_moments = list(zip(sample_times, h1_mean.tolist()))
    result.manifest = {
        "experiment": "delta-sweep",
        "config": config,
        "config_hash": cfg.config_hash(config),
        "master_seed": seed,
        "version": _version(),
        "picard_residuals": result.picard_residuals,
        "delta_l2_per_N": {str(n): v for n, v in zip(n_list, per_n)},
        "slope": slope,
        "slope_intercept": intercept,
        "slope_ci95": ci,
    }
    return result


def _version() -> str:
    from . import __version__

    return __version__
