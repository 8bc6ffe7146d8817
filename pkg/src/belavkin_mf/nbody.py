"""N-particle filtering dynamics on the tensor-product grid, plus density
operators and reduced marginals.

The state lives on (n^d)^N cells, axes grouped per particle.  One step:
kinetic half-step (single spectral flow over all axes), exact diagonal
interaction phase exp(-i dt (1/N) sum_{i<j} V(x_i - x_j)), Euler-Maruyama
for the per-particle measurement drift and noise with <L_j> computed on the
full state, kinetic half-step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityMatrix
from .grid import GridSpec, WaveFunction1P
from .meanfield import NumericalAbortError, SchemeParams, coupling_matrix
from .operators import CouplingOperator, PotentialSpec

DENSITY_FULL_MAX = 4096
PAIR_MARGINAL_MAX = 4096
DEFAULT_MEMORY_BUDGET_MB = 512


@dataclass
class WaveFunctionNP:
    """N-particle complex field; axis block j*d..(j+1)*d-1 belongs to particle j."""

    grid: GridSpec
    n_particles: int
    values: np.ndarray

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        self.values = np.asarray(self.values, dtype=np.complex128)
        expected = self.grid.shape * self.n_particles
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape} != {expected}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("N-body state contains non-finite values")

    @property
    def weight(self) -> float:
        return self.grid.cell_volume**self.n_particles

    def l2_norm(self) -> float:
        return float(np.sqrt(self.weight * np.sum(np.abs(self.values) ** 2)))

    def require_normalized(self, norm_tol: float = 1e-9):
        if abs(self.l2_norm() - 1.0) > norm_tol:
            raise ValueError(f"N-body state not normalized: {self.l2_norm()}")

    def particle_axes(self, j: int) -> tuple:
        d = self.grid.dim
        return tuple(range(j * d, (j + 1) * d))

    def copy(self) -> "WaveFunctionNP":
        return WaveFunctionNP(self.grid, self.n_particles, self.values.copy())


def check_memory_budget(grid: GridSpec, n_particles: int,
                        budget_mb: float = DEFAULT_MEMORY_BUDGET_MB):
    size_bytes = 16 * grid.size**n_particles
    if size_bytes > budget_mb * 2**20:
        raise MemoryError(
            f"N-body state needs {size_bytes / 2**20:.0f} MiB, budget {budget_mb} MiB"
        )


def tensor_power(phi: WaveFunction1P, n_particles: int,
                 budget_mb: float = DEFAULT_MEMORY_BUDGET_MB) -> WaveFunctionNP:
    """Factorized state phi^(x N)."""
    check_memory_budget(phi.grid, n_particles, budget_mb)
    values = phi.values
    for _ in range(n_particles - 1):
        values = np.tensordot(values, phi.values, axes=0)
    return WaveFunctionNP(phi.grid, n_particles, values)


def _apply_coupling_axis(L: CouplingOperator, Psi: WaveFunctionNP, j: int,
                         conjugate_square: bool = False) -> np.ndarray:
    """Apply L (or L*L for conjugate_square) on particle j's axes."""
    axes = Psi.particle_axes(j)
    if L.kind == "multiplication":
        sym = np.abs(L.symbol) ** 2 if conjugate_square else L.symbol
        d = Psi.values.ndim
        shape = [1] * d
        for a, ax in enumerate(axes):
            shape[ax] = L.grid.shape[a]
        return sym.reshape(shape) * Psi.values
    # generic variants: flatten the particle block and act with the matrix
    mat = coupling_matrix(L)
    if conjugate_square:
        mat = mat.conj().T @ mat
    d = L.grid.dim
    moved = np.moveaxis(Psi.values, axes, tuple(range(d)))
    lead = moved.shape[:d]
    flat = moved.reshape(L.grid.size, -1)
    out = (mat @ flat).reshape(lead + moved.shape[d:])
    return np.moveaxis(out, tuple(range(d)), axes)


def pair_interaction_field(grid: GridSpec, n_particles: int,
                           V: PotentialSpec) -> np.ndarray:
    """(1/N) sum_{i<j} V(x_i - x_j) on the full tensor grid, periodic wrap."""
    if n_particles < 2 or V is None or V.family == "zero":
        return np.zeros(grid.shape * max(n_particles, 1))
    n = grid.points_per_axis
    d = grid.dim
    idx = np.arange(n)
    diff = (idx[:, None] - idx[None, :]) % n
    # sample V on the index-difference grid: each original axis of the V
    # samples is replaced by an (i-index, j-index) axis pair
    take = V.samples.values
    for a in range(d):
        take = np.take(take, diff, axis=2 * a)
    perm = [2 * a for a in range(d)] + [2 * a + 1 for a in range(d)]
    vij = np.ascontiguousarray(np.transpose(take, perm))
    total = np.zeros(grid.shape * n_particles)
    for i in range(n_particles):
        for j in range(i + 1, n_particles):
            shape = [1] * (d * n_particles)
            for a in range(d):
                shape[i * d + a] = n
                shape[j * d + a] = n
            total = total + vij.reshape(shape)
    return total / n_particles


class NBodyIntegrator:
    """Caches the kinetic phase and interaction field for repeated stepping."""

    def __init__(self, grid: GridSpec, n_particles: int, params: SchemeParams,
                 L: CouplingOperator, V: PotentialSpec | None,
                 budget_mb: float = DEFAULT_MEMORY_BUDGET_MB):
        check_memory_budget(grid, n_particles, budget_mb)
        params.check_stability(L.norm_bound)
        self.grid = grid
        self.n_particles = n_particles
        self.params = params
        self.L = L
        self.V = V
        ksq_1p = grid.laplacian_symbol()
        total = np.zeros(grid.shape * n_particles)
        for j in range(n_particles):
            shape = [1] * (grid.dim * n_particles)
            for a in range(grid.dim):
                shape[j * grid.dim + a] = grid.points_per_axis
            total = total + ksq_1p.reshape(shape)
        self.kinetic_half_phase = np.exp(-1j * total * (0.5 * params.dt))
        if n_particles >= 2 and V is not None and V.family != "zero":
            w = pair_interaction_field(grid, n_particles, V)
            self.interaction_phase = np.exp(-1j * params.dt * w)
        else:
            self.interaction_phase = None

    def _kinetic_half(self, values: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(self.kinetic_half_phase * np.fft.fftn(values))

    def expect_full(self, values: np.ndarray, Lpsi: np.ndarray) -> float:
        w = self.grid.cell_volume**self.n_particles
        return float(w * np.real(np.vdot(Lpsi, values)))

    def _bcast_shape(self, j: int):
        d = self.grid.dim
        shape = [1] * (d * self.n_particles)
        for a in range(d):
            shape[j * d + a] = self.grid.points_per_axis
        return tuple(shape)

    def _measurement_update_multiplication(self, v: np.ndarray, dW: np.ndarray) -> np.ndarray:
        """Fused Euler-Maruyama measurement update for a multiplication L.

        All per-particle fields are diagonal, so the whole update collapses
        to one broadcast-assembled factor: v * (1 - dt/2 * sum_j F1_j + sum_j
        dW_j F2_j), with <L_j> from the marginal densities of |v|^2.
        """
        d = self.grid.dim
        sym = self.L.symbol
        sym_sq = np.abs(sym) ** 2
        abs2 = np.abs(v) ** 2
        w = self.grid.cell_volume**self.n_particles
        factor = np.ones_like(v)
        for j in range(self.n_particles):
            other_axes = tuple(
                a for a in range(d * self.n_particles)
                if not j * d <= a < (j + 1) * d
            )
            marginal = np.sum(abs2, axis=other_axes) if other_axes else abs2
            avg = float(w * np.sum(np.real(sym) * marginal))
            field = (-0.5 * self.params.dt) * (
                sym_sq - (2.0 * avg) * sym + avg * avg
            ) + float(dW[j]) * (sym - avg)
            factor += field.reshape(self._bcast_shape(j))
        return v * factor

    def _measurement_update_generic(self, v: np.ndarray, dW: np.ndarray) -> np.ndarray:
        state = WaveFunctionNP(self.grid, self.n_particles, v)
        drift = np.zeros_like(v)
        noise = np.zeros_like(v)
        for j in range(self.n_particles):
            Lj = _apply_coupling_axis(self.L, state, j)
            LLj = _apply_coupling_axis(self.L, state, j, conjugate_square=True)
            avg = self.expect_full(v, Lj)
            drift += -0.5 * (LLj - (2.0 * avg) * Lj + (avg * avg) * v)
            noise += float(dW[j]) * (Lj - avg * v)
        return v + self.params.dt * drift + noise

    def step(self, Psi: WaveFunctionNP, dW: np.ndarray) -> WaveFunctionNP:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (self.n_particles,):
            raise ValueError("need one Brownian increment per particle")
        v = self._kinetic_half(Psi.values)
        if self.interaction_phase is not None:
            v = self.interaction_phase * v
        if self.L.kind == "multiplication":
            v = self._measurement_update_multiplication(v, dW)
        else:
            v = self._measurement_update_generic(v, dW)
        v = self._kinetic_half(v)
        out = WaveFunctionNP(self.grid, self.n_particles, v)
        if self.params.renormalize:
            out = WaveFunctionNP(self.grid, self.n_particles, v / out.l2_norm())
        return out


def step_nbody(Psi: WaveFunctionNP, dW, params: SchemeParams,
               L: CouplingOperator, V: PotentialSpec | None = None,
               integrator: NBodyIntegrator | None = None) -> WaveFunctionNP:
    """Single N-body step; builds a throwaway integrator unless given one."""
    if integrator is None:
        integrator = NBodyIntegrator(Psi.grid, Psi.n_particles, params, L, V)
    if not np.all(np.isfinite(Psi.values)):
        raise NumericalAbortError("non-finite N-body state before step")
    return integrator.step(Psi, dW)


def density_from_wave(Psi: WaveFunctionNP) -> DensityMatrix:
    """Full rank-one density kernel psi(X) conj(psi(Y)); tiny instances only."""
    m = Psi.grid.size**Psi.n_particles
    if m > DENSITY_FULL_MAX:
        raise ValueError(f"full density restricted to dimension <= {DENSITY_FULL_MAX}")
    v = Psi.values.reshape(-1)
    return DensityMatrix(np.outer(v, v.conj()), Psi.weight)


def first_marginal(Psi: WaveFunctionNP) -> DensityMatrix:
    """Partial trace over particles 2..N: kernel
    h^(d(N-1)) sum_rest Psi(x, rest) conj(Psi(y, rest))."""
    m = Psi.grid.size
    a = Psi.values.reshape(m, -1)
    hrest = Psi.grid.cell_volume ** (Psi.n_particles - 1)
    kernel = hrest * (a @ a.conj().T)
    kernel = 0.5 * (kernel + kernel.conj().T)
    return DensityMatrix(kernel, Psi.grid.cell_volume)


def pair_marginal(Psi: WaveFunctionNP, j: int, k: int) -> DensityMatrix:
    """Two-particle reduced marginal for particles (j, k), j < k."""
    if not 0 <= j < k < Psi.n_particles:
        raise ValueError("need particle indices 0 <= j < k < N")
    m2 = Psi.grid.size**2
    if m2 > PAIR_MARGINAL_MAX:
        raise ValueError(f"pair marginal restricted to dimension <= {PAIR_MARGINAL_MAX}")
    front = Psi.particle_axes(j) + Psi.particle_axes(k)
    moved = np.moveaxis(Psi.values, front, tuple(range(len(front))))
    a = moved.reshape(m2, -1)
    hrest = Psi.grid.cell_volume ** (Psi.n_particles - 2)
    kernel = hrest * (a @ a.conj().T)
    kernel = 0.5 * (kernel + kernel.conj().T)
    return DensityMatrix(kernel, Psi.grid.cell_volume**2)


def trace_out_second(pair: DensityMatrix, grid: GridSpec) -> DensityMatrix:
    """Reduce a pair marginal to the first particle (consistency checks)."""
    m = grid.size
    k4 = pair.entries.reshape(m, m, m, m)  # indices (x, a, y, b)
    kernel = grid.cell_volume * np.einsum("xaya->xy", k4)
    return DensityMatrix(kernel, grid.cell_volume)
