"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`.  Tolerances are pinned
here, not configurable.  The heavy criteria (5, 6) run multi-process; set
BELAVKIN_MF_THREADS to bound the worker count.
"""

import json
import os
import sys
import time

import numpy as np
import pytest

from belavkin_mf.cli import main as cli_main
from belavkin_mf.density import pure_state_density
from belavkin_mf.grid import GridSpec, WaveFunction1P, gaussian_packet
from belavkin_mf.harness import run_convergence, run_delta_sweep
from belavkin_mf.meanfield import (
    SchemeParams,
    XiPath,
    ensemble_meanfield,
    evolve_belavkin_density,
    picard_meanfield,
    solve_intermediate,
    step_intermediate,
)
from belavkin_mf.nbody import NBodyIntegrator, tensor_power
from belavkin_mf.operator_lab import crosscheck_nbody_density, run_property_suite
from belavkin_mf.operators import (
    CouplingOperator,
    PotentialSpec,
    TruncationProfile,
    apply_F1,
    apply_F2,
    cosine_symbol,
)
from belavkin_mf.streams import BrownianDriver

THREADS = min(8, os.cpu_count() or 1)

GRID64 = GridSpec(1, 64, 16.0)
L_DEFAULT = CouplingOperator.multiplication(GRID64, cosine_symbol(GRID64, 1.0))
V_DEFAULT = PotentialSpec.gaussian(GRID64, 1.0, 0.5)
U0_DEFAULT = gaussian_packet(GRID64, sigma=1.0 / np.sqrt(2.0))

# Convergence experiment: wide overlapping packets against a resolvable
# interaction so the mean-field gap dominates the scheme noise.
CONVERGENCE_CONFIG = {
    "grid": {"dim": 1, "n": 64, "box_length": 16.0},
    "time": {"T": 0.25, "dt": 1e-3},
    "physics": {
        "H": "laplacian",
        "L": {"kind": "multiplication", "symbol": "cos", "amplitude": 1.0},
        "V": {"kind": "gaussian", "V0": 1.0, "sigma": 1.25},
    },
    "initial": {"kind": "gaussian", "sigma": 2.0, "center": 0.0},
    "meanfield": {"mode": "picard", "M": 100},
    "nbody": {"N_list": [1, 2, 3]},
    "mc": {"repetitions": 100, "master_seed": 20240813},
    "output": {"directory": "/tmp/belavkin-acceptance", "sample_stride": 25},
}

DELTA_CONFIG = {
    "grid": {"dim": 1, "n": 32, "box_length": 16.0},
    "time": {"T": 0.25, "dt": 1e-3},
    "physics": {
        "H": "laplacian",
        "L": {"kind": "multiplication", "symbol": "cos", "amplitude": 1.0},
        "V": {"kind": "gaussian", "V0": 1.0, "sigma": 1.25},
    },
    "initial": {"kind": "gaussian", "sigma": 2.0, "center": 0.0},
    "meanfield": {"mode": "picard", "M": 2048},
    "nbody": {"N_list": [8, 16, 32, 64]},
    "mc": {"repetitions": 32, "master_seed": 555},
    "output": {"directory": "/tmp/belavkin-acceptance", "sample_stride": 50},
}


def _report(criterion, passed, detail):
    line = f"[ACCEPTANCE {criterion}] {'PASS' if passed else 'FAIL'} - {detail}"
    print(line, file=sys.stderr)
    assert passed, line


def test_criterion_1_norm_conservation():
    dt, T = 1e-3, 0.5
    xi = XiPath.constant(U0_DEFAULT.density(), T, dt)
    driver = BrownianDriver(101, dt)
    t0 = time.time()
    off = solve_intermediate(
        U0_DEFAULT, xi, driver.stream(0, 0),
        SchemeParams(dt=dt, renormalize=False), L_DEFAULT, V_DEFAULT,
    )
    per_traj = time.time() - t0
    on = solve_intermediate(
        U0_DEFAULT, xi, driver.stream(0, 0),
        SchemeParams(dt=dt, renormalize=True), L_DEFAULT, V_DEFAULT,
    )
    drift_off = float(np.max(np.abs(off.norm_drift)))
    drift_on = float(np.max(np.abs(on.norm_drift)))
    ok = drift_off <= 1e-3 and drift_on <= 1e-12 and per_traj < 10.0
    _report(1, ok,
            f"max | |u|-1 |: renorm OFF {drift_off:.3e} (<=1e-3), "
            f"ON {drift_on:.3e} (<=1e-12), {per_traj:.2f}s/trajectory (<10s)")


def test_criterion_2_truncation_idempotence():
    dt, T = 1e-3, 0.5
    xi = XiPath.constant(U0_DEFAULT.density(), T, dt)
    params = SchemeParams(dt=dt, renormalize=False)
    driver = BrownianDriver(202, dt)
    plain = solve_intermediate(U0_DEFAULT, xi, driver.stream(0, 0), params,
                               L_DEFAULT, V_DEFAULT)
    trunc = solve_intermediate(U0_DEFAULT, xi, driver.stream(0, 0), params,
                               L_DEFAULT, V_DEFAULT,
                               profile=TruncationProfile(R=1.0))
    differing = int(np.count_nonzero(plain.states != trunc.states))
    _report(2, differing == 0,
            f"truncated (R=1) vs untruncated: {differing} differing entries "
            f"out of {plain.states.size} (bitwise)")


def test_criterion_3_scalar_coupling_degeneracy():
    rng = np.random.default_rng(3)
    lam_op = CouplingOperator.scalar(GRID64, 1.3)
    worst = 0.0
    for _ in range(1000):
        vals = rng.standard_normal(GRID64.shape) + 1j * rng.standard_normal(GRID64.shape)
        u = WaveFunction1P(GRID64, vals).normalized()
        worst = max(worst, apply_F1(lam_op, u).l2_norm(), apply_F2(lam_op, u).l2_norm())
    dt, T = 1e-3, 0.05
    xi = XiPath.constant(U0_DEFAULT.density(), T, dt)
    params = SchemeParams(dt=dt)
    t_a = solve_intermediate(U0_DEFAULT, xi, BrownianDriver(1, dt).stream(0, 0),
                             params, lam_op, V_DEFAULT)
    t_b = solve_intermediate(U0_DEFAULT, xi, BrownianDriver(2, dt).stream(0, 0),
                             params, lam_op, V_DEFAULT)
    seed_dev = float(np.max(np.abs(t_a.states - t_b.states)))
    pic = picard_meanfield(U0_DEFAULT, BrownianDriver(3, dt), params, lam_op,
                           V_DEFAULT, T=T, M=1, picard_tol=1e-8, max_iters=40)
    ens = ensemble_meanfield(U0_DEFAULT, BrownianDriver(3, dt), params, lam_op,
                             V_DEFAULT, T=T, M=1)
    mode_dev = float(np.max(np.abs(pic.xi.values - ens.xi.values)))
    ok = worst <= 1e-12 and seed_dev <= 1e-12 and mode_dev <= 1e-10
    _report(3, ok,
            f"max |F1 u|,|F2 u| on 1e3 unit states: {worst:.2e} (<=1e-12); "
            f"seed dependence {seed_dev:.2e} (<=1e-12); "
            f"picard-vs-ensemble {mode_dev:.2e} (<=1e-10)")


def test_criterion_4_strong_order_trio():
    t_start = time.time()
    # (a) mean-field step against a refined common-path reference
    T = 0.1
    dts = (2e-3, 5e-4)
    dt_f = min(dts) / 64
    steps_f = int(round(T / dt_f))
    errors = {dt: [] for dt in dts}
    for rep in range(4):
        fine = BrownianDriver(77, dt_f).increments(rep, 0, steps_f)
        params_f = SchemeParams(dt=dt_f, renormalize=False)
        xi_t = U0_DEFAULT.density()
        uref = U0_DEFAULT.copy()
        for k in range(steps_f):
            uref = step_intermediate(uref, xi_t, float(fine[k]), params_f,
                                     L_DEFAULT, V_DEFAULT)
        for dt in dts:
            K = int(round(T / dt))
            coarse = fine.reshape(K, int(round(dt / dt_f))).sum(axis=1)
            params = SchemeParams(dt=dt, renormalize=False)
            u = U0_DEFAULT.copy()
            for k in range(K):
                u = step_intermediate(u, xi_t, float(coarse[k]), params,
                                      L_DEFAULT, V_DEFAULT)
            errors[dt].append(
                WaveFunction1P(GRID64, u.values - uref.values).l2_norm())
    ratio_mf = float(np.mean(errors[5e-4]) / np.mean(errors[2e-3]))

    # (b) single-particle wave-vs-density cross-check
    grid = GridSpec(1, 16, 16.0)
    phi0 = gaussian_packet(grid, 1.2)
    Lg = CouplingOperator.multiplication(grid, cosine_symbol(grid, 1.0))
    Vg = PotentialSpec.gaussian(grid, 1.0, 0.5)
    errs = {}
    for dt in (1e-3, 2.5e-4):
        xi = XiPath.constant(phi0.density(), 0.1, dt)
        params = SchemeParams(dt=dt, renormalize=False)
        stream = BrownianDriver(37, dt).stream(0, 0)
        wave = solve_intermediate(phi0, xi, stream, params, Lg, Vg)
        dens = evolve_belavkin_density(pure_state_density(phi0), xi, stream,
                                       params, Lg, Vg)
        diff = dens.density_at(len(dens.times) - 1).weighted() \
            - pure_state_density(wave.final_state()).weighted()
        diff = 0.5 * (diff + diff.conj().T)
        errs[dt] = float(np.sum(np.abs(np.linalg.eigvalsh(diff))))
    ratio_mfdens = errs[2.5e-4] / errs[1e-3]

    # (c) tiny-dimension N-body wave-vs-density cross-check
    report = crosscheck_nbody_density(n=4, n_particles=2, T=0.1,
                                      dts=(1e-3, 2.5e-4), master_seed=7,
                                      n_reps=4)
    ratio_np = report["ratio"]
    elapsed = time.time() - t_start
    ok = all(0.3 <= r <= 0.7 for r in (ratio_mf, ratio_mfdens, ratio_np))
    ok = ok and elapsed < 60.0
    _report(4, ok,
            f"dt-quartering error ratios: mean-field step {ratio_mf:.3f}, "
            f"wave-vs-density {ratio_mfdens:.3f}, N-body density {ratio_np:.3f} "
            f"(all in [0.3, 0.7]); elapsed {elapsed:.1f}s (<60s)")


def test_criterion_5_convergence_experiment():
    t_start = time.time()
    result = run_convergence(CONVERGENCE_CONFIG, threads=THREADS)
    elapsed = time.time() - t_start
    T = CONVERGENCE_CONFIG["time"]["T"]
    i0_worst = max(abs(i) for (t, n, rep, i, r) in result.indicator_rows if t == 0.0)
    sandwich_ok = all(
        i <= r + 1e-6 and r <= 2 * np.sqrt(2 * max(i, 0.0)) + 1e-6
        for (t, n, rep, i, r) in result.indicator_rows
    )
    m2, se2, _, _ = result.indicator_summary[(2, T)]
    m3, se3, _, _ = result.indicator_summary[(3, T)]
    comb = float(np.hypot(se2, se3))
    mono_ok = m3 < m2 + 2.0 * comb
    ok = (i0_worst <= 1e-10) and sandwich_ok and mono_ok and elapsed < 1800.0
    _report(5, ok,
            f"max |I(0)| {i0_worst:.2e} (<=1e-10); sandwich on all "
            f"{len(result.indicator_rows)} samples: {sandwich_ok}; "
            f"I3(T)={m3:.3e} vs I2(T)={m2:.3e} "
            f"(I3-I2)/SE={-(m2 - m3) / comb:.2f} (<2); "
            f"elapsed {elapsed / 60:.1f} min (<30)")


def test_criterion_6_delta_rates_and_h1_moments():
    result = run_delta_sweep(DELTA_CONFIG, threads=THREADS)
    l1_ok = all(v[0] <= 2.0 + 3.0 * v[1] for v in result.delta_summary.values())
    slope_ok = -0.6 <= result.slope <= -0.4
    times = np.array([t for t, _ in result.h1_moments])
    series = np.array([v for _, v in result.h1_moments])
    coef = np.polyfit(times, np.log(series), 1)
    rate = float(coef[0])
    resid = np.log(series) - np.polyval(coef, times)
    envelope_ok = (abs(rate) <= 10.0) and float(np.max(np.abs(resid))) <= 1.0
    ok = l1_ok and slope_ok and envelope_ok
    _report(6, ok,
            f"E|delta|_L1 <= 2 + 3SE at all sample times: {l1_ok}; "
            f"log-log slope {result.slope:.3f} (in [-0.6, -0.4], "
            f"CI +-{result.slope_ci:.3f}); H1^4 envelope growth rate "
            f"{rate:.3f} (finite, residuals within e^1): {envelope_ok}")


def test_criterion_7_operator_property_suite():
    t_start = time.time()
    reports = run_property_suite(
        master_seed=1,
        prodproj_samples=10_000,
        hs_samples=10_000,
        kolokoltsov_samples=100_000,
        p3_samples=10_000,
        norm_chain_samples=10_000,
        dims=(2, 4, 8, 16),
    )
    elapsed = time.time() - t_start
    by_name = {r["check_name"]: r for r in reports}
    failures = {name: r["failures"] for name, r in by_name.items()}
    sde_dev = by_name["scalar_sde_identity"]["worst_ratio"]
    ok = all(f == 0 for f in failures.values()) and sde_dev == 0.0
    ok = ok and elapsed < 120.0
    _report(7, ok,
            f"failures per check: {failures}; scalar SDE deviation {sde_dev} "
            f"(exactly 0); sharp constants: selfadjoint "
            f"{by_name['kolokoltsov_selfadjoint']['empirical_sharp_constant']:.2f}"
            f" (<= {4 + 8 * np.sqrt(2):.2f}), general "
            f"{by_name['kolokoltsov_general']['empirical_sharp_constant']:.2f}"
            f" (<= 32); elapsed {elapsed:.0f}s (<120s)")


def test_criterion_8_determinism_across_threads(tmp_path, capsys):
    config = {
        "grid": {"dim": 1, "n": 32, "box_length": 16.0},
        "time": {"T": 0.05, "dt": 1e-3},
        "physics": {
            "H": "laplacian",
            "L": {"kind": "multiplication", "symbol": "cos", "amplitude": 1.0},
            "V": {"kind": "gaussian", "V0": 1.0, "sigma": 1.25},
        },
        "initial": {"kind": "gaussian", "sigma": 2.0, "center": 0.0},
        "meanfield": {"mode": "picard", "M": 4},
        "nbody": {"N_list": [1, 2]},
        "mc": {"repetitions": 4, "master_seed": 99},
        "output": {"directory": str(tmp_path / "results"), "sample_stride": 10},
    }
    cfg_path = tmp_path / "acc8.json"
    cfg_path.write_text(json.dumps(config))
    assert cli_main(["converge", "--config", str(cfg_path), "--threads", "1",
                     "--out", str(tmp_path / "t1")]) == 0
    dir1 = capsys.readouterr().out.strip().splitlines()[-1]
    assert cli_main(["converge", "--config", str(cfg_path), "--threads", "8",
                     "--out", str(tmp_path / "t8")]) == 0
    dir8 = capsys.readouterr().out.strip().splitlines()[-1]
    identical = all(
        open(os.path.join(dir1, f), "rb").read() == open(os.path.join(dir8, f), "rb").read()
        for f in ("indicators.csv", "norm_drift.csv")
    )
    _report(8, identical,
            "converge at 1 vs 8 threads, same config+seed: CSV bytes identical")
