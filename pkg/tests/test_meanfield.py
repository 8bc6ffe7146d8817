import numpy as np
import pytest

from belavkin_mf.density import pure_state_density
from belavkin_mf.grid import (
    GridFunctionReal,
    GridSpec,
    WaveFunction1P,
    convolve_potential,
    free_propagate,
    gaussian_packet,
)
from belavkin_mf.meanfield import (
    NumericalAbortError,
    PicardNonConvergenceError,
    SchemeParams,
    XiPath,
    ensemble_meanfield,
    evolve_belavkin_density,
    h1_moment_series,
    picard_meanfield,
    solve_intermediate,
    step_intermediate,
)
from belavkin_mf.operators import (
    CouplingOperator,
    PotentialSpec,
    TruncationProfile,
    cosine_symbol,
    expect_L,
)
from belavkin_mf.streams import BrownianDriver

GRID = GridSpec(1, 64, 16.0)
L_COS = CouplingOperator.multiplication(GRID, cosine_symbol(GRID, 1.0))
V_GAUSS = PotentialSpec.gaussian(GRID, 1.0, 0.5)
U0 = gaussian_packet(GRID, sigma=1.0 / np.sqrt(2.0))


def _xi_const(T, dt, u=U0):
    return XiPath.constant(u.density(), T, dt)


def test_step_free_case_equals_propagator():
    params = SchemeParams(dt=1e-3, renormalize=False)
    L0 = CouplingOperator.scalar(GRID, 0.0)
    out = step_intermediate(U0, None, 0.123, params, L0, None)
    ref = free_propagate(U0, params.dt)
    assert np.max(np.abs(out.values - ref.values)) <= 1e-12


def test_step_scalar_coupling_deterministic_hartree():
    params = SchemeParams(dt=1e-3, renormalize=False)
    lam = CouplingOperator.scalar(GRID, 0.8)
    xi_t = U0.density()
    out1 = step_intermediate(U0, xi_t, 0.4, params, lam, V_GAUSS)
    out2 = step_intermediate(U0, xi_t, -1.7, params, lam, V_GAUSS)
    # F2(u)u vanishes only to machine precision (|u|^2 = 1 +- eps), so the
    # dW dependence survives at the 1e-16 level, not bitwise
    assert np.max(np.abs(out1.values - out2.values)) <= 1e-12
    # matches the pure Hartree splitting step (noise and F1 drift vanish)
    half = free_propagate(U0, params.dt / 2)
    conv = convolve_potential(V_GAUSS.samples, xi_t).values
    mid = half.values + params.dt * (-1j) * conv * half.values
    ref = free_propagate(WaveFunction1P(GRID, mid), params.dt / 2)
    assert np.max(np.abs(out1.values - ref.values)) <= 1e-12


def test_step_strong_order_half_vs_refined_path():
    # same refined Brownian path for all resolutions; reference at the finest
    # grid, strong error averaged over repetitions contracts like sqrt(dt)
    T = 0.1
    dts = (2e-3, 5e-4)
    dt_f = min(dts) / 64
    steps_f = int(round(T / dt_f))
    errors = {dt: [] for dt in dts}
    for rep in range(4):
        fine = BrownianDriver(master_seed=77, dt=dt_f).increments(rep, 0, steps_f)
        params_f = SchemeParams(dt=dt_f, renormalize=False)
        xi_t = U0.density()
        uref = U0.copy()
        for k in range(steps_f):
            uref = step_intermediate(uref, xi_t, float(fine[k]), params_f, L_COS, V_GAUSS)
        for dt in dts:
            K = int(round(T / dt))
            factor = int(round(dt / dt_f))
            coarse = fine.reshape(K, factor).sum(axis=1)
            params = SchemeParams(dt=dt, renormalize=False)
            u = U0.copy()
            for k in range(K):
                u = step_intermediate(u, xi_t, float(coarse[k]), params, L_COS, V_GAUSS)
            errors[dt].append(WaveFunction1P(GRID, u.values - uref.values).l2_norm())
    ratio = np.mean(errors[5e-4]) / np.mean(errors[2e-3])
    assert 0.3 <= ratio <= 0.7  # strong order 1/2 under dt quartering


def test_solve_truncation_idempotent_bitwise():
    T, dt = 0.2, 1e-3
    xi = _xi_const(T, dt)
    params = SchemeParams(dt=dt, renormalize=False)
    driver = BrownianDriver(master_seed=3, dt=dt)
    plain = solve_intermediate(U0, xi, driver.stream(0, 0), params, L_COS, V_GAUSS)
    trunc = solve_intermediate(
        U0, xi, driver.stream(0, 0), params, L_COS, V_GAUSS,
        profile=TruncationProfile(R=1.0),
    )
    assert np.array_equal(plain.states, trunc.states)


def test_solve_scalar_coupling_seed_independent():
    T, dt = 0.05, 1e-3
    xi = _xi_const(T, dt)
    params = SchemeParams(dt=dt)
    lam = CouplingOperator.scalar(GRID, 1.0)
    t1 = solve_intermediate(U0, xi, BrownianDriver(1, dt).stream(0, 0), params, lam, V_GAUSS)
    t2 = solve_intermediate(U0, xi, BrownianDriver(999, dt).stream(0, 0), params, lam, V_GAUSS)
    assert np.max(np.abs(t1.states - t2.states)) <= 1e-12


def test_solve_norm_drift_small_and_renormalized_exact():
    T, dt = 0.2, 1e-3
    xi = _xi_const(T, dt)
    driver = BrownianDriver(master_seed=11, dt=dt)
    off = solve_intermediate(
        U0, xi, driver.stream(0, 0), SchemeParams(dt=dt, renormalize=False),
        L_COS, V_GAUSS,
    )
    assert np.max(np.abs(off.norm_drift)) <= 1e-3
    on = solve_intermediate(
        U0, xi, driver.stream(0, 0), SchemeParams(dt=dt, renormalize=True),
        L_COS, V_GAUSS,
    )
    assert np.max(np.abs(on.norm_drift)) <= 1e-12


def test_solve_rejects_unnormalized_initial():
    xi = _xi_const(0.01, 1e-3)
    params = SchemeParams(dt=1e-3)
    bad = WaveFunction1P(GRID, 2.0 * U0.values)
    with pytest.raises(ValueError):
        solve_intermediate(bad, xi, BrownianDriver(1, 1e-3).stream(0, 0), params, L_COS, V_GAUSS)


def test_solve_deterministic_given_seed():
    T, dt = 0.05, 1e-3
    xi = _xi_const(T, dt)
    params = SchemeParams(dt=dt)
    a = solve_intermediate(U0, xi, BrownianDriver(5, dt).stream(3, 1), params, L_COS, V_GAUSS)
    b = solve_intermediate(U0, xi, BrownianDriver(5, dt).stream(3, 1), params, L_COS, V_GAUSS)
    assert np.array_equal(a.states, b.states)


def test_norm_sde_nullity_structure():
    # with renormalization OFF: per-step mean of the |u|^2 increment is tiny,
    # and the martingale coefficient obeys |Theta <L> (1-|u|^2)| <= ||L|| |u|^2 |1-|u|^2|
    T, dt = 0.25, 1e-3
    xi = _xi_const(T, dt)
    params = SchemeParams(dt=dt, renormalize=False)
    increments = []
    for rep in range(8):
        traj = solve_intermediate(
            U0, xi, BrownianDriver(21, dt).stream(rep, 0), params, L_COS, V_GAUSS
        )
        norms_sq = (1.0 + traj.norm_drift) ** 2
        increments.append(np.diff(norms_sq))
        for k in range(0, traj.times.size, 50):
            u = traj.state_at(k)
            nsq = u.l2_norm() ** 2
            coeff = expect_L(L_COS, u) * (1.0 - nsq)
            assert abs(coeff) <= L_COS.norm_bound * nsq * abs(1.0 - nsq) + 1e-12
    mean_inc = np.abs(np.mean(np.stack(increments)))
    assert mean_inc <= 10 * dt**2  # empirical mean of per-step increment is O(dt^2)


def test_picard_no_hartree_residual_exactly_zero():
    driver = BrownianDriver(master_seed=13, dt=1e-3)
    res = picard_meanfield(
        U0, driver, SchemeParams(dt=1e-3), L_COS, PotentialSpec.zero(GRID),
        T=0.05, M=3, picard_tol=1e-10,
    )
    assert len(res.residuals) >= 2
    assert res.residuals[1] == 0.0
    assert res.converged


def test_picard_scalar_coupling_matches_deterministic_hartree():
    dt = 1e-3
    T = 0.1
    lam = CouplingOperator.scalar(GRID, 1.0)
    driver = BrownianDriver(master_seed=17, dt=dt)
    pic = picard_meanfield(U0, driver, SchemeParams(dt=dt), lam, V_GAUSS, T=T, M=1,
                           picard_tol=1e-8, max_iters=40)
    ens = ensemble_meanfield(U0, driver, SchemeParams(dt=dt), lam, V_GAUSS, T=T, M=1)
    # deterministic degeneracy: xi* is the path of |u(t)|^2 itself
    final = pic.trajectories[0].states[-1]
    dens = np.abs(final) ** 2
    assert np.max(np.abs(pic.xi.values[-1] - dens)) <= 1e-10
    assert np.max(np.abs(pic.xi.values - ens.xi.values)) <= 1e-10
    assert np.max(np.abs(pic.trajectories[0].states - ens.trajectories[0].states)) <= 1e-10


def test_picard_xi_l1_normalized():
    driver = BrownianDriver(master_seed=19, dt=1e-3)
    res = picard_meanfield(U0, driver, SchemeParams(dt=1e-3), L_COS, V_GAUSS,
                           T=0.05, M=4)
    res.xi.validate_density(norm_tol=1e-9)
    assert res.converged


def test_picard_nonconvergence_reported():
    driver = BrownianDriver(master_seed=23, dt=1e-3)
    with pytest.raises(PicardNonConvergenceError) as exc:
        picard_meanfield(U0, driver, SchemeParams(dt=1e-3), L_COS, V_GAUSS,
                         T=0.05, M=2, picard_tol=1e-30, max_iters=2)
    assert len(exc.value.residuals) == 2


def test_ensemble_scalar_coupling_all_copies_identical():
    lam = CouplingOperator.scalar(GRID, 0.5)
    driver = BrownianDriver(master_seed=29, dt=1e-3)
    res = ensemble_meanfield(U0, driver, SchemeParams(dt=1e-3), lam, V_GAUSS, T=0.05, M=3)
    for traj in res.trajectories[1:]:
        assert np.max(np.abs(traj.states - res.trajectories[0].states)) <= 1e-12
    assert np.max(np.abs(res.xi.values - np.abs(res.trajectories[0].states) ** 2)) <= 1e-12


def test_belavkin_density_free_case_preserves_spectrum():
    grid = GridSpec(1, 16, 16.0)
    phi0 = gaussian_packet(grid, 1.0)
    p0 = pure_state_density(phi0)
    L0 = CouplingOperator.scalar(grid, 0.0)
    dt = 1e-3
    xi = XiPath.constant(phi0.density(), 0.05, dt)
    path = evolve_belavkin_density(
        p0, xi, BrownianDriver(31, dt).stream(0, 0), SchemeParams(dt=dt), L0, None
    )
    lam0 = np.linalg.eigvalsh(path.density_at(0).weighted())
    lamT = np.linalg.eigvalsh(path.density_at(len(path.times) - 1).weighted())
    assert np.max(np.abs(lam0 - lamT)) <= 1e-10
    assert np.max(np.abs(path.trace_series - 1.0)) <= 1e-10


def test_belavkin_density_matches_wave_with_same_stream():
    grid = GridSpec(1, 16, 16.0)
    phi0 = gaussian_packet(grid, 1.2)
    Lg = CouplingOperator.multiplication(grid, cosine_symbol(grid, 1.0))
    Vg = PotentialSpec.gaussian(grid, 1.0, 0.5)
    T = 0.1
    errors = {}
    for dt in (1e-3, 2.5e-4):
        xi = XiPath.constant(phi0.density(), T, dt)
        params = SchemeParams(dt=dt, renormalize=False)
        stream = BrownianDriver(37, dt).stream(0, 0)
        wave = solve_intermediate(phi0, xi, stream, params, Lg, Vg)
        dens = evolve_belavkin_density(pure_state_density(phi0), xi, stream, params, Lg, Vg)
        final_wave = pure_state_density(wave.final_state()).weighted()
        final_dens = dens.density_at(len(dens.times) - 1).weighted()
        diff = final_dens - final_wave
        diff = 0.5 * (diff + diff.conj().T)
        errors[dt] = np.sum(np.abs(np.linalg.eigvalsh(diff)))
        assert np.max(np.abs(dens.trace_series - 1.0)) <= 5 * dt
    ratio = errors[2.5e-4] / errors[1e-3]
    assert 0.3 <= ratio <= 0.7


def test_h1_moment_series_free_evolution_constant():
    grid = GRID
    L0 = CouplingOperator.scalar(grid, 0.0)
    dt = 1e-3
    xi = _xi_const(0.1, dt)
    params = SchemeParams(dt=dt, renormalize=False)
    trajs = [
        solve_intermediate(U0, xi, BrownianDriver(41, dt).stream(m, 0), params, L0,
                           PotentialSpec.zero(grid))
        for m in range(3)
    ]
    series = h1_moment_series(trajs, p=4)
    assert np.max(np.abs(series - series[0])) <= 1e-9 * series[0]


def test_h1_moment_series_deterministic_pointwise():
    dt = 1e-3
    xi = _xi_const(0.05, dt)
    params = SchemeParams(dt=dt)
    lam = CouplingOperator.scalar(GRID, 1.0)
    traj = solve_intermediate(U0, xi, BrownianDriver(43, dt).stream(0, 0), params, lam, V_GAUSS)
    series = h1_moment_series([traj], p=4)
    assert np.allclose(series, traj.h1_series**4, rtol=1e-12)


def test_h1_moment_series_validates_order():
    with pytest.raises(ValueError):
        h1_moment_series([], p=4)
    dt = 1e-3
    xi = _xi_const(0.01, dt)
    traj = solve_intermediate(U0, xi, BrownianDriver(47, dt).stream(0, 0),
                              SchemeParams(dt=dt), L_COS, V_GAUSS)
    with pytest.raises(ValueError):
        h1_moment_series([traj], p=3)


def test_scheme_params_guards():
    with pytest.raises(ValueError):
        SchemeParams(dt=0.5)
    params = SchemeParams(dt=0.1)
    with pytest.raises(ValueError):
        params.check_stability(3.0)  # dt * ||L||^2 = 0.9 > 0.5


def test_picard_residuals_monotone_after_first():
    grid = GridSpec(1, 32, 16.0)
    L = CouplingOperator.multiplication(grid, cosine_symbol(grid, 1.0))
    V = PotentialSpec.gaussian(grid, 2.0, 1.25)
    u0 = gaussian_packet(grid, 2.0)
    res = picard_meanfield(u0, BrownianDriver(5, 1e-3), SchemeParams(dt=1e-3),
                           L, V, T=0.1, M=6, picard_tol=1e-12, max_iters=12)
    assert len(res.residuals) >= 3
    # contraction: the residual sequence decreases monotonically after the
    # first application of the fixed-point map
    for a, b in zip(res.residuals[1:], res.residuals[2:]):
        assert b <= a


def test_belavkin_density_trace_abort_wiring(monkeypatch):
    import belavkin_mf.meanfield as mf

    monkeypatch.setattr(mf, "DENSITY_TRACE_ABORT", 1e-18)
    grid = GridSpec(1, 8, 8.0)
    phi0 = gaussian_packet(grid, 1.0)
    Lg = CouplingOperator.multiplication(grid, cosine_symbol(grid, 1.0))
    dt = 1e-3
    xi = XiPath.constant(phi0.density(), 0.05, dt)
    with pytest.raises(NumericalAbortError):
        evolve_belavkin_density(
            pure_state_density(phi0), xi, BrownianDriver(3, dt).stream(0, 0),
            SchemeParams(dt=dt, renormalize=False), Lg, None,
        )


def test_solver_runs_in_two_dimensions():
    grid = GridSpec(2, 16, 12.0)
    u0 = gaussian_packet(grid, 1.0)
    x1 = grid.coordinate_mesh()[0]
    sym = np.broadcast_to(
        np.cos(2 * np.pi * x1 / grid.box_length), grid.shape
    ).astype(np.complex128)
    L2d = CouplingOperator.multiplication(grid, sym.copy())
    V2d = PotentialSpec.gaussian(grid, 1.0, 0.5)
    dt = 1e-3
    xi = XiPath.constant(u0.density(), 0.01, dt)
    traj = solve_intermediate(u0, xi, BrownianDriver(8, dt).stream(0, 0),
                              SchemeParams(dt=dt), L2d, V2d)
    assert np.max(np.abs(traj.norm_drift)) <= 1e-12
    assert np.all(np.isfinite(traj.h1_series))
