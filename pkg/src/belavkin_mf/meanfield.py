"""Time integration of the single-particle filtering dynamics.

Covers the frozen-law intermediate equation, its truncated variant, the full
mean-field equation via Picard iteration on the law or via an interacting
ensemble, and the matrix-valued mean-field density equation.

Scheme: Strang splitting with the exact spectral kinetic flow and an Ito
Euler-Maruyama step for the Hartree / measurement drift and the noise
(strong order 1/2).  One trajectory is a pure function of
(u0, xi, stream key, params).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import DensityMatrix
from .grid import (
    GridFunctionReal,
    GridSpec,
    WaveFunction1P,
    convolve_potential,
    free_propagate,
    h1_norm,
)
from .operators import (
    CouplingOperator,
    PotentialSpec,
    TruncationProfile,
    apply_F1_values,
    apply_F2_values,
    theta_R,
)
from .streams import StreamView

DENSITY_DIM_MAX = 64
DENSITY_TRACE_ABORT = 0.1


class NumericalAbortError(RuntimeError):
    """Integration hit non-finite values or a runaway invariant."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PicardNonConvergenceError(RuntimeError):
    """Fixed-point iteration did not reach tolerance; carries the residuals."""

    def __init__(self, residuals):
        super().__init__(
            f"Picard iteration did not converge; residual history {residuals}"
        )
        self.residuals = list(residuals)


@dataclass(frozen=True)
class SchemeParams:
    dt: float
    renormalize: bool = True
    scheme: str = "strang_em"
    norm_drift_log: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.dt > 0.1:
            raise ValueError(f"dt must lie in (0, 0.1], got {self.dt}")
        if self.scheme != "strang_em":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def check_stability(self, L_norm_bound: float):
        if self.dt * L_norm_bound**2 > 0.5:
            raise ValueError(
                f"stability guard violated: dt * ||L||^2 = {self.dt * L_norm_bound ** 2} > 0.5"
            )


@dataclass
class XiPath:
    """Deterministic law path t -> xi_t, piecewise constant (left endpoint)."""

    grid: GridSpec
    times: np.ndarray
    values: np.ndarray  # (len(times), *grid.shape)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.times.ndim != 1 or self.times.size < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if self.times[0] != 0.0 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must increase from 0")
        if self.values.shape != (self.times.size,) + self.grid.shape:
            raise ValueError("xi values shape does not match times x grid")

    def validate_density(self, norm_tol: float = 1e-9, density_tol: float = 1e-12):
        h = self.grid.cell_volume
        l1 = h * np.sum(np.abs(self.values.reshape(self.times.size, -1)), axis=1)
        if np.max(np.abs(l1 - 1.0)) > norm_tol:
            raise ValueError("xi path is not L1-normalized at every knot")
        if np.min(self.values) < -density_tol:
            raise ValueError("xi path has negative values")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def index_at(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        return min(max(idx, 0), self.times.size - 1)

    def function_at(self, t: float) -> GridFunctionReal:
        return GridFunctionReal(self.grid, self.values[self.index_at(t)])

    @classmethod
    def constant(cls, density: GridFunctionReal, T: float, dt: float) -> "XiPath":
        k = int(round(T / dt))
        times = np.arange(k + 1) * dt
        values = np.broadcast_to(density.values, (k + 1,) + density.grid.shape).copy()
        return cls(density.grid, times, values)


@dataclass
class Trajectory:
    """Recorded path of one trajectory: states plus diagnostics per time."""

    grid: GridSpec
    times: np.ndarray
    states: np.ndarray      # (len(times), *grid.shape) complex
    norm_drift: np.ndarray  # |u(t)| - 1
    h1_series: np.ndarray

    def state_at(self, k: int) -> WaveFunction1P:
        return WaveFunction1P(self.grid, self.states[k])

    def final_state(self) -> WaveFunction1P:
        return self.state_at(self.times.size - 1)


def _hartree_field(V, xi_t):
    """V * xi as a raw array, or None when there is no Hartree term."""
    if V is None or xi_t is None or V.family == "zero":
        return None
    return convolve_potential(V.samples, xi_t).values


def _em_mid_step(values, dt, dW, theta, L, conv):
    """The Euler-Maruyama middle of the Strang step, on raw arrays."""
    f1 = apply_F1_values(L, values)
    drift = -0.5 * (theta * theta) * f1
    if conv is not None:
        drift = drift - 1j * (conv * values)
    noise = theta * apply_F2_values(L, values)
    return values + dt * drift + dW * noise


def step_intermediate(
    u: WaveFunction1P,
    xi_t,
    dW: float,
    params: SchemeParams,
    L: CouplingOperator,
    V,
    profile: TruncationProfile | None = None,
    running_sup: float | None = None,
) -> WaveFunction1P:
    """One Strang step: S(dt/2), Ito EM drift/noise step, S(dt/2).

    The drift is -i(V*xi)u - 1/2 Theta^2 F1(u)u and the noise Theta F2(u)u dW,
    with Theta computed from the running sup of the elapsed path's L2 norm.
    No profile means Theta = 1 (untruncated); the code path is identical, so a
    truncation that evaluates to exactly 1.0 reproduces the untruncated step
    bitwise.
    """
    if running_sup is None:
        running_sup = u.l2_norm()
    theta = theta_R(profile, running_sup) if profile is not None else 1.0
    conv = _hartree_field(V, xi_t)
    half = free_propagate(u, 0.5 * params.dt).values
    mid = _em_mid_step(half, params.dt, dW, theta, L, conv)
    out = free_propagate(WaveFunction1P(u.grid, mid), 0.5 * params.dt)
    if params.renormalize:
        out = out.normalized()
    return out


def _steps_for(T: float, dt: float) -> int:
    k = int(round(T / dt))
    if abs(k * dt - T) > 1e-9:
        raise ValueError(f"horizon {T} is not an integer multiple of dt {dt}")
    return k


def solve_intermediate(
    u0: WaveFunction1P,
    xi: XiPath | None,
    stream: StreamView,
    params: SchemeParams,
    L: CouplingOperator,
    V,
    profile: TruncationProfile | None = None,
    n_steps: int | None = None,
) -> Trajectory:
    """Integrate the frozen-law equation over the horizon of `xi`.

    Deterministic given (u0, xi, stream key, params).  With xi=None the
    Hartree term must be absent and n_steps gives the horizon.
    """
    u0.require_normalized()
    params.check_stability(L.norm_bound)
    if xi is None:
        if V is not None and V.family != "zero":
            raise ValueError("xi=None requires a zero Hartree term")
        if n_steps is None:
            raise ValueError("xi=None requires n_steps")
        K = n_steps
    else:
        K = _steps_for(xi.horizon, params.dt)
    dWs = stream.increments(K)
    grid = u0.grid
    times = np.arange(K + 1) * params.dt
    states = np.empty((K + 1,) + grid.shape, dtype=np.complex128)
    norm_drift = np.empty(K + 1)
    h1s = np.empty(K + 1)

    u = u0.copy()
    states[0] = u.values
    norm_drift[0] = u.l2_norm() - 1.0
    h1s[0] = h1_norm(u)
    running_sup = u.l2_norm()
    for k in range(K):
        xi_t = xi.function_at(times[k]) if xi is not None else None
        u = step_intermediate(
            u, xi_t, float(dWs[k]), params, L, V, profile, running_sup
        )
        if not np.all(np.isfinite(u.values)):
            raise NumericalAbortError(f"non-finite state at step {k + 1}", step=k + 1)
        nrm = u.l2_norm()
        running_sup = max(running_sup, nrm)
        states[k + 1] = u.values
        norm_drift[k + 1] = nrm - 1.0
        h1s[k + 1] = h1_norm(u)
    return Trajectory(grid, times, states, norm_drift, h1s)


@dataclass
class MeanFieldResult:
    """Fixed-point law, the trajectories driven by it, and Picard residuals."""

    xi: XiPath
    trajectories: list
    residuals: list = field(default_factory=list)
    converged: bool = True


def _law_from_states(grid, times, all_states) -> XiPath:
    """Empirical law path: mean over trajectories of |u(t, x)|^2."""
    dens = np.mean(np.abs(np.asarray(all_states)) ** 2, axis=0)
    return XiPath(grid, times, dens)


def _solve_task(args):
    u0, xi, stream, params, L, V = args
    return solve_intermediate(u0, xi, stream, params, L, V)


def _solve_ensemble(initials, xi, driver, params, L, V, threads):
    payloads = [
        (initials[m], xi, driver.stream(m, 0), params, L, V)
        for m in range(len(initials))
    ]
    if threads <= 1:
        return [_solve_task(p) for p in payloads]
    from concurrent.futures import ProcessPoolExecutor

    chunk = max(1, len(payloads) // (8 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_solve_task, payloads, chunksize=chunk))


def picard_meanfield(
    u0,
    driver,
    params: SchemeParams,
    L: CouplingOperator,
    V,
    T: float,
    M: int,
    picard_tol: float = 1e-4,
    max_iters: int = 20,
    threads: int = 1,
) -> MeanFieldResult:
    """Fixed-point iteration xi -> E|u(xi)|^2, expectation by an M-sample mean.

    Common random numbers: iteration k reuses the exact streams of iteration
    k-1 (keys (m, 0) of `driver`), so the map is deterministic and the
    residual vanishes after iteration 2 when there is no Hartree term.
    `u0` is a WaveFunction1P or a callable index -> WaveFunction1P.  Results
    do not depend on `threads` (trajectories are independent; the mean is
    taken in fixed index order).
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    sampler = u0 if callable(u0) else (lambda m: u0)
    initials = [sampler(m) for m in range(M)]
    K = _steps_for(T, params.dt)
    times = np.arange(K + 1) * params.dt

    xi0_density = np.mean([np.abs(w.values) ** 2 for w in initials], axis=0)
    grid = initials[0].grid
    xi_prev = XiPath(
        grid, times, np.broadcast_to(xi0_density, (K + 1,) + grid.shape).copy()
    )

    h = grid.cell_volume
    residuals = []
    converged = False
    for _ in range(max_iters):
        trajs = _solve_ensemble(initials, xi_prev, driver, params, L, V, threads)
        xi_next = _law_from_states(grid, times, [t.states for t in trajs])
        diff = np.abs(xi_next.values - xi_prev.values).reshape(K + 1, -1)
        residual = float(np.max(h * diff.sum(axis=1)))
        residuals.append(residual)
        xi_prev = xi_next
        if residual < picard_tol:
            converged = True
            break
    if not converged:
        raise PicardNonConvergenceError(residuals)
    # one more pass so the returned trajectories are driven by the fixed point
    trajs = _solve_ensemble(initials, xi_prev, driver, params, L, V, threads)
    return MeanFieldResult(xi_prev, trajs, residuals, converged=True)


def ensemble_meanfield(
    u0,
    driver,
    params: SchemeParams,
    L: CouplingOperator,
    V,
    T: float,
    M: int,
) -> MeanFieldResult:
    """Interacting-ensemble approximation: the empirical law
    xi_hat_t = (1/M) sum_m |u_m(t)|^2 is recomputed at every step.

    M = 1 is the self-consistent single trajectory (xi_hat = |u_1|^2), which
    is NOT the mean-field law; use it only for deterministic degeneracies.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    sampler = u0 if callable(u0) else (lambda m: u0)
    initials = [sampler(m) for m in range(M)]
    for w in initials:
        w.require_normalized()
    params.check_stability(L.norm_bound)
    grid = initials[0].grid
    K = _steps_for(T, params.dt)
    times = np.arange(K + 1) * params.dt
    dWs = np.stack([driver.increments(m, 0, K) for m in range(M)])

    states = np.empty((M, K + 1) + grid.shape, dtype=np.complex128)
    for m in range(M):
        states[m, 0] = initials[m].values
    xi_values = np.empty((K + 1,) + grid.shape)
    current = [initials[m].copy() for m in range(M)]
    running_sup = [w.l2_norm() for w in current]

    for k in range(K + 1):
        xi_values[k] = np.mean(
            [np.abs(w.values) ** 2 for w in current], axis=0
        )
        if k == K:
            break
        xi_t = GridFunctionReal(grid, xi_values[k])
        for m in range(M):
            u = step_intermediate(
                current[m], xi_t, float(dWs[m, k]), params, L, V, None, running_sup[m]
            )
            if not np.all(np.isfinite(u.values)):
                raise NumericalAbortError(
                    f"non-finite state for copy {m} at step {k + 1}", step=k + 1
                )
            running_sup[m] = max(running_sup[m], u.l2_norm())
            current[m] = u
            states[m, k + 1] = u.values

    xi = XiPath(grid, times, xi_values)
    trajs = []
    for m in range(M):
        norms = np.sqrt(
            grid.cell_volume
            * np.sum(np.abs(states[m].reshape(K + 1, -1)) ** 2, axis=1)
        )
        h1s = np.array(
            [h1_norm(WaveFunction1P(grid, states[m, k])) for k in range(K + 1)]
        )
        trajs.append(Trajectory(grid, times, states[m], norms - 1.0, h1s))
    return MeanFieldResult(xi, trajs)


@dataclass
class DensityPath:
    """Path of the matrix-valued state in kernel convention."""

    times: np.ndarray
    kernels: np.ndarray  # (len(times), m, m)
    quadrature_weight: float
    trace_series: np.ndarray

    def density_at(self, k: int) -> DensityMatrix:
        return DensityMatrix(self.kernels[k], self.quadrature_weight)


def free_unitary(grid: GridSpec, t: float) -> np.ndarray:
    """Dense matrix of exp(i*Laplacian*t) in the orthonormalized grid basis."""
    m = grid.size
    cols = np.eye(m, dtype=np.complex128).reshape((m,) + grid.shape)
    axes = tuple(range(1, grid.dim + 1))
    phase = np.exp(-1j * grid.laplacian_symbol() * t)
    out = np.fft.ifftn(phase * np.fft.fftn(cols, axes=axes), axes=axes)
    return out.reshape(m, m).T


def coupling_matrix(L: CouplingOperator) -> np.ndarray:
    """Matrix of L in the orthonormalized grid basis."""
    grid = L.grid
    if grid.size > 4096:
        raise ValueError("coupling matrix only available on small grids")
    if L.kind == "multiplication":
        return np.diag(L.symbol.reshape(-1))
    if L.kind == "dense":
        return grid.cell_volume * L.kernel
    m = grid.size
    out = np.zeros((m, m), dtype=np.complex128)
    for lam, f, g in L.terms:
        out += lam * grid.cell_volume * np.outer(f.reshape(-1), np.conj(g.reshape(-1)))
    return out


def evolve_belavkin_density(
    p0: DensityMatrix,
    xi: XiPath,
    stream: StreamView,
    params: SchemeParams,
    L: CouplingOperator,
    V,
) -> DensityPath:
    """Integrate the mean-field density equation on a small grid.

    Same Strang layout as the wave solver: exact kinetic conjugation, then an
    Euler-Maruyama step for -i[V*xi, p] + L p L* - 1/2 {L*L, p} plus the
    normalization noise L p + p L* - tr((L + L*) p) p, then kinetic again and
    a Hermitian symmetrization.  With the stream shared with a wave run the
    two paths agree to strong order 1/2.
    """
    grid = L.grid
    if grid.size > DENSITY_DIM_MAX:
        raise ValueError(f"density evolution restricted to n^d <= {DENSITY_DIM_MAX}")
    params.check_stability(L.norm_bound)
    if abs(p0.trace() - 1.0) > 1e-8:
        raise ValueError("initial density must have unit trace")

    K = _steps_for(xi.horizon, params.dt)
    dWs = stream.increments(K)
    U = free_unitary(grid, 0.5 * params.dt)
    Ud = U.conj().T
    Lm = coupling_matrix(L)
    Ld = Lm.conj().T
    LdL = Ld @ Lm

    m = grid.size
    kernels = np.empty((K + 1, m, m), dtype=np.complex128)
    traces = np.empty(K + 1)
    M0 = p0.weighted()
    Mcur = 0.5 * (M0 + M0.conj().T)
    kernels[0] = Mcur / p0.quadrature_weight
    traces[0] = float(np.real(np.trace(Mcur)))

    times = np.arange(K + 1) * params.dt
    for k in range(K):
        Mh = U @ Mcur @ Ud
        conv = _hartree_field(V, xi.function_at(times[k]))
        drift = Lm @ Mh @ Ld - 0.5 * (LdL @ Mh + Mh @ LdL)
        if conv is not None:
            C = conv.reshape(-1)
            drift = drift - 1j * (C[:, None] * Mh - Mh * C[None, :])
        tr_l = float(np.real(np.trace((Lm + Ld) @ Mh)))
        noise = Lm @ Mh + Mh @ Ld - tr_l * Mh
        Mnew = Mh + params.dt * drift + float(dWs[k]) * noise
        Mnew = U @ Mnew @ Ud
        Mcur = 0.5 * (Mnew + Mnew.conj().T)
        tr = float(np.real(np.trace(Mcur)))
        if not np.isfinite(tr) or abs(tr - 1.0) > DENSITY_TRACE_ABORT:
            raise NumericalAbortError(
                f"trace drift {tr - 1.0} at step {k + 1}", step=k + 1
            )
        kernels[k + 1] = Mcur / p0.quadrature_weight
        traces[k + 1] = tr
    return DensityPath(times, kernels, p0.quadrature_weight, traces)


def h1_moment_series(ensemble, p: int = 4) -> np.ndarray:
    """Monte Carlo time series of E[|u(t)|^p_H1] over an ensemble.

    `ensemble` is a list of Trajectory or a MeanFieldResult; p must be an
    even integer >= 4.
    """
    if p < 4 or p % 2 != 0:
        raise ValueError("moment order p must be an even integer >= 4")
    trajs = ensemble.trajectories if isinstance(ensemble, MeanFieldResult) else ensemble
    if not trajs:
        raise ValueError("empty ensemble")
    stacked = np.stack([t.h1_series for t in trajs])
    return np.mean(stacked**p, axis=0)
