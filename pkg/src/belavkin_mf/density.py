"""Density matrices in the grid basis.

Entries hold the raw integral kernel rho(x, y); quadrature_weight is
h^(d * particles represented), so the operator matrix in the orthonormalized
basis is weight * entries.  Traces, eigenvalues and quadratic forms all go
through that weighted matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigh import hermitian_eigenvalues
from .grid import WaveFunction1P

HERMITIAN_TOL = 1e-10
EIGENVALUE_TOL = 1e-8
TRACE_TOL = 1e-8


@dataclass
class DensityMatrix:
    """Hermitian kernel matrix with its quadrature weight."""

    entries: np.ndarray
    quadrature_weight: float

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ValueError("density matrix entries must be square")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("density matrix contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def weighted(self) -> np.ndarray:
        """Operator matrix in the orthonormalized basis."""
        return self.quadrature_weight * self.entries

    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)) * self.quadrature_weight)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - self.entries.conj().T)))

    def symmetrized(self) -> "DensityMatrix":
        return DensityMatrix(0.5 * (self.entries + self.entries.conj().T),
                             self.quadrature_weight)

    def eigenvalues(self) -> np.ndarray:
        return hermitian_eigenvalues(self.weighted())

    def expectation(self, phi: WaveFunction1P) -> float:
        """(phi, rho phi) with the real symmetric product; phi on the same grid."""
        if phi.grid.size != self.dim:
            raise ValueError("state dimension does not match density matrix")
        v = phi.values.reshape(-1) * np.sqrt(phi.grid.cell_volume)
        return float(np.real(np.vdot(v, self.weighted() @ v)))

    def require_state(
        self,
        hermitian_tol: float = HERMITIAN_TOL,
        eigenvalue_tol: float = EIGENVALUE_TOL,
        trace_tol: float = TRACE_TOL,
    ):
        """Check the Hermitian / PSD / unit-trace invariants of a state."""
        scale = max(1.0, float(np.max(np.abs(self.weighted()))))
        if self.hermiticity_defect() * self.quadrature_weight > hermitian_tol * scale:
            raise ValueError("density matrix is not Hermitian within tolerance")
        if abs(self.trace() - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {self.trace()} not within {trace_tol} of 1")
        lam = self.eigenvalues()
        if lam[0] < -eigenvalue_tol:
            raise ValueError(f"density matrix has eigenvalue {lam[0]} < -{eigenvalue_tol}")


def pure_state_density(phi: WaveFunction1P) -> DensityMatrix:
    """|phi><phi| as a kernel matrix on phi's grid."""
    v = phi.values.reshape(-1)
    return DensityMatrix(np.outer(v, v.conj()), phi.grid.cell_volume)
