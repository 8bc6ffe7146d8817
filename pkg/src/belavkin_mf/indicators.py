"""Convergence metrology: Pickl-style indicator, trace-norm distance,
sandwich inequalities, delta^N statistics and the martingale-coefficient
bound.

The trace norm is restricted to Hermitian differences (always the case here:
marginal minus pure state), so the in-repo Hermitian eigensolver suffices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityMatrix
from .eigh import hermitian_eigenvalues
from .grid import GridFunctionReal, WaveFunction1P

SANDWICH_TOL = 1e-6


@dataclass(frozen=True)
class IndicatorSample:
    """One (time, repetition) sample of the convergence indicators."""

    t: float
    i_hat: float
    r_trace: float
    n_particles: int
    repetition: int

    def __post_init__(self):
        if not -1e-8 <= self.i_hat <= 1.0 + 1e-8:
            raise ValueError(f"indicator {self.i_hat} outside [0, 1]")
        if not sandwich_check(self.i_hat, self.r_trace):
            raise ValueError(
                f"sandwich violated: i_hat={self.i_hat}, r_trace={self.r_trace}"
            )


@dataclass(frozen=True)
class DeltaStats:
    """L1 and L2 norms of the empirical-minus-law density fluctuation."""

    t: float
    n_particles: int
    l1_norm: float
    l2_norm: float


def pickl_hat(rho1: DensityMatrix, phi: WaveFunction1P) -> float:
    """Indicator 1 - (phi, rho phi); zero iff rho is the pure state of phi."""
    val = 1.0 - rho1.expectation(phi)
    return float(val)


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """||a - b||_1 = sum |eigenvalues| of the Hermitian difference."""
    if a.dim != b.dim:
        raise ValueError("trace distance needs equal dimensions")
    if abs(a.quadrature_weight - b.quadrature_weight) > 1e-15 * a.quadrature_weight:
        raise ValueError("trace distance needs matching quadrature weights")
    diff = a.weighted() - b.weighted()
    diff = 0.5 * (diff + diff.conj().T)
    lam = hermitian_eigenvalues(diff)
    return float(np.sum(np.abs(lam)))


def sandwich_check(i_hat: float, r: float, tol: float = SANDWICH_TOL) -> bool:
    """I <= R <= 2 sqrt(2 I), with slack `tol` on both sides."""
    upper = 2.0 * np.sqrt(2.0 * max(i_hat, 0.0))
    return bool(i_hat <= r + tol and r <= upper + tol)


def pair_indicator_bound(i_pair: float, i_single: float, tol: float = SANDWICH_TOL) -> bool:
    """|J| = 2 monotonicity hook: I^{N,{1,2}} <= 2 I^{N,1}."""
    return bool(i_pair <= 2.0 * i_single + tol)


def delta_stats(phis, xi: GridFunctionReal) -> DeltaStats:
    """delta^N = 1/(N-1) sum_{j=2..N} |phi^j|^2 - xi for N-1 supplied states.

    `phis` holds the states of particles 2..N (the first particle is always
    excluded); all must be unit norm on xi's grid.
    """
    phis = list(phis)
    if len(phis) < 1:
        raise ValueError("delta statistics need at least one state (N >= 2)")
    grid = xi.grid
    acc = np.zeros(grid.shape)
    for phi in phis:
        if phi.grid != grid:
            raise ValueError("delta statistics need a common grid")
        acc += np.abs(phi.values) ** 2
    delta = acc / len(phis) - xi.values
    h = grid.cell_volume
    l1 = float(h * np.sum(np.abs(delta)))
    l2 = float(np.sqrt(h * np.sum(delta**2)))
    return DeltaStats(t=np.nan, n_particles=len(phis) + 1, l1_norm=l1, l2_norm=l2)


def p3_coefficient(p: DensityMatrix, rho: DensityMatrix, L) -> float:
    """Martingale coefficient Tr(p L rho + p rho L* - Tr((L+L*) rho) p rho).

    `L` is a matrix in the orthonormalized basis or a CouplingOperator;
    bounded by 4 ||L|| for states p (rank one) and rho.
    """
    if hasattr(L, "kind"):
        from .meanfield import coupling_matrix

        Lm = coupling_matrix(L)
    else:
        Lm = np.asarray(L, dtype=np.complex128)
    P = p.weighted()
    Rho = rho.weighted()
    Ld = Lm.conj().T
    term = np.trace(P @ Lm @ Rho) + np.trace(P @ Rho @ Ld)
    norm_term = np.trace((Lm + Ld) @ Rho) * np.trace(P @ Rho)
    return float(np.real(term - norm_term))
