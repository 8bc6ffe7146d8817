"""Coupling operators L, interaction potentials V and the truncation profile.

The coupling operator comes in three variants (multiplication, finite rank,
dense kernel), each with a certified operator-norm upper bound and an adjoint.
The state-dependent maps

    F1(X) X = L*L X - 2 <L>_X L X + <L>_X^2 X
    F2(X) X = L X - <L>_X X

with <L>_X = (X, L X) under the real symmetric product are the drift and
noise coefficients used by every equation in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridFunctionReal,
    GridMismatchError,
    GridSpec,
    WaveFunction1P,
    reflect,
)

# Dense kernels are only allowed at tiny sizes (operator-lab oracles).
DENSE_MAX_DIM = 64

# sup |theta'| of the exp(-1/x) glue bump below; the maximum sits at the
# midpoint x = 3/2 where theta'(3/2) = -2 (verified by the scan test).
THETA_PRIME_SUP = 2.0


def bump_theta(x) -> np.ndarray:
    """C-infinity cutoff: 1 on x <= 1, 0 on x >= 2, exp(-1/t) glue between.

    Evaluated in a numerically stabilized form: near the plateaus one glue
    branch underflows to zero, so theta returns exactly 1.0 / 0.0 there.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    out[x <= 1.0] = 1.0
    mid = (x > 1.0) & (x < 2.0)
    if np.any(mid):
        xm = x[mid]
        a = np.exp(-1.0 / (2.0 - xm))
        b = np.exp(-1.0 / (xm - 1.0))
        out[mid] = a / (a + b)
    return out if out.shape else float(out)


@dataclass(frozen=True)
class TruncationProfile:
    """Smooth truncation Theta_R: theta(running_sup / R)."""

    R: float = 1.0

    def __post_init__(self):
        if self.R < 1.0:
            raise ValueError(f"truncation radius must be >= 1, got {self.R}")

    def theta(self, x) -> float:
        return bump_theta(x)

    def value(self, running_sup: float) -> float:
        if running_sup < 0:
            raise ValueError("running sup of a norm cannot be negative")
        return float(bump_theta(running_sup / self.R))

    @property
    def lipschitz_constant(self) -> float:
        return THETA_PRIME_SUP / self.R


def theta_R(profile: TruncationProfile, running_sup: float) -> float:
    """Truncation factor for the elapsed-path norm sup; in [0, 1]."""
    return profile.value(running_sup)


class CouplingOperator:
    """Bounded operator L with certified norm bound and adjoint.

    Variants:
      - multiplication by a bounded grid symbol (norm bound exact: sup|g|)
      - finite rank sum_k lam_k |f_k><g_k|   (bound: sum |lam| |f| |g|)
      - dense integral kernel, small grids only (bound: certified sigma_max)
    """

    def __init__(self, kind, grid, *, symbol=None, terms=None, kernel=None, norm_bound=None):
        self.kind = kind
        self.grid = grid
        self.symbol = symbol
        self.terms = terms
        self.kernel = kernel
        self.norm_bound = float(norm_bound)

    @classmethod
    def multiplication(cls, grid: GridSpec, symbol: np.ndarray) -> "CouplingOperator":
        symbol = np.asarray(symbol, dtype=np.complex128)
        if symbol.shape != grid.shape:
            raise ValueError("symbol shape does not match grid")
        return cls("multiplication", grid, symbol=symbol,
                   norm_bound=float(np.max(np.abs(symbol))))

    @classmethod
    def scalar(cls, grid: GridSpec, lam: complex) -> "CouplingOperator":
        """L = lam * identity (multiplication by a constant symbol)."""
        return cls.multiplication(grid, np.full(grid.shape, lam, dtype=np.complex128))

    @classmethod
    def finite_rank(cls, grid: GridSpec, terms) -> "CouplingOperator":
        """terms: sequence of (lam, f, g) with f, g WaveFunction1P on `grid`."""
        cleaned = []
        bound = 0.0
        for lam, f, g in terms:
            if f.grid != grid or g.grid != grid:
                raise GridMismatchError("finite-rank factor on wrong grid")
            cleaned.append((complex(lam), f.values.copy(), g.values.copy()))
            bound += abs(lam) * f.l2_norm() * g.l2_norm()
        return cls("finite_rank", grid, terms=cleaned, norm_bound=bound)

    @classmethod
    def dense(cls, grid: GridSpec, kernel: np.ndarray) -> "CouplingOperator":
        """Dense integral kernel l(x, y); action (L u)(x) = h^d sum_y l(x,y) u(y)."""
        if grid.size > DENSE_MAX_DIM:
            raise ValueError(
                f"dense coupling restricted to grids of size <= {DENSE_MAX_DIM}"
            )
        kernel = np.asarray(kernel, dtype=np.complex128)
        if kernel.shape != (grid.size, grid.size):
            raise ValueError("dense kernel must be (n^d, n^d)")
        # operator matrix in the orthonormalized basis is h^d * kernel
        sigma = np.linalg.svd(grid.cell_volume * kernel, compute_uv=False)
        bound = float(sigma[0]) * (1.0 + 1e-12)
        return cls("dense", grid, kernel=kernel, norm_bound=bound)

    def adjoint(self) -> "CouplingOperator":
        if self.kind == "multiplication":
            out = CouplingOperator("multiplication", self.grid,
                                   symbol=np.conj(self.symbol),
                                   norm_bound=self.norm_bound)
            return out
        if self.kind == "finite_rank":
            terms = [(np.conj(lam), g, f) for lam, f, g in self.terms]
            return CouplingOperator("finite_rank", self.grid, terms=terms,
                                    norm_bound=self.norm_bound)
        return CouplingOperator("dense", self.grid,
                                kernel=self.kernel.conj().T,
                                norm_bound=self.norm_bound)

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        """Apply to a raw grid-shaped array."""
        if self.kind == "multiplication":
            return self.symbol * values
        if self.kind == "finite_rank":
            h = self.grid.cell_volume
            out = np.zeros_like(values)
            for lam, f, g in self.terms:
                out += lam * (h * np.vdot(g, values)) * f
            return out
        h = self.grid.cell_volume
        return (h * self.kernel @ values.reshape(-1)).reshape(self.grid.shape)

    def apply(self, u: WaveFunction1P) -> WaveFunction1P:
        if u.grid != self.grid:
            raise GridMismatchError("state and coupling operator on different grids")
        return WaveFunction1P(self.grid, self.apply_values(u.values))

    def lstar_l_values(self, values: np.ndarray) -> np.ndarray:
        """Apply L* L (fast path for the multiplication variant)."""
        if self.kind == "multiplication":
            return (np.abs(self.symbol) ** 2) * values
        return self.adjoint().apply_values(self.apply_values(values))


def expect_L(L: CouplingOperator, psi: WaveFunction1P) -> float:
    """<L>_psi = (psi, L psi) with the real symmetric product."""
    if psi.grid != L.grid:
        raise GridMismatchError("state and coupling operator on different grids")
    Lpsi = L.apply_values(psi.values)
    return float(psi.grid.cell_volume * np.real(np.vdot(Lpsi, psi.values)))


def _expect_values(L: CouplingOperator, values: np.ndarray, Lvalues: np.ndarray) -> float:
    return float(L.grid.cell_volume * np.real(np.vdot(Lvalues, values)))


def apply_F1(L: CouplingOperator, X: WaveFunction1P) -> WaveFunction1P:
    """F1(X) X = L*L X - 2 <L>_X L X + <L>_X^2 X."""
    if X.grid != L.grid:
        raise GridMismatchError("state and coupling operator on different grids")
    return WaveFunction1P(X.grid, apply_F1_values(L, X.values))


def apply_F1_values(L: CouplingOperator, values: np.ndarray) -> np.ndarray:
    Lx = L.apply_values(values)
    avg = _expect_values(L, values, Lx)
    return L.lstar_l_values(values) - (2.0 * avg) * Lx + (avg * avg) * values


def apply_F2(L: CouplingOperator, X: WaveFunction1P) -> WaveFunction1P:
    """F2(X) X = L X - <L>_X X."""
    if X.grid != L.grid:
        raise GridMismatchError("state and coupling operator on different grids")
    return WaveFunction1P(X.grid, apply_F2_values(L, X.values))


def apply_F2_values(L: CouplingOperator, values: np.ndarray) -> np.ndarray:
    Lx = L.apply_values(values)
    avg = _expect_values(L, values, Lx)
    return Lx - avg * values


# Explicit constants from the F1/F2 estimates, for |X|, |Y| <= 2R.
def f1_bound_constant(R: float, L_norm: float) -> float:
    return 2.0 * R * L_norm**2 * (1.0 + 4.0 * R**2) ** 2


def f1_lipschitz_constant(R: float, L_norm: float) -> float:
    return L_norm**2 * (1.0 + 24.0 * R**2 + 80.0 * R**4)


def f2_bound_constant(R: float, L_norm: float) -> float:
    return 2.0 * R * L_norm * (1.0 + 4.0 * R**2)


def f2_lipschitz_constant(R: float, L_norm: float) -> float:
    return (1.0 + 12.0 * R**2) * L_norm


@dataclass
class PotentialSpec:
    """Even bounded interaction potential with sampled values on the grid."""

    family: str
    grid: GridSpec
    samples: GridFunctionReal
    sup_bound: float

    @classmethod
    def gaussian(cls, grid: GridSpec, V0: float, sigma: float) -> "PotentialSpec":
        """V(x) = V0 exp(-|x|^2 / (2 sigma^2)); needs sigma << box_length."""
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        if sigma > grid.box_length / 4.0:
            raise ValueError("gaussian potential width too large for the periodic box")
        xs = grid.coordinate_mesh()
        arg = np.zeros(grid.shape)
        for a in range(grid.dim):
            arg = arg + xs[a] ** 2
        values = V0 * np.exp(-arg / (2.0 * sigma**2))
        return cls("gaussian", grid, GridFunctionReal(grid, values), abs(V0))

    @classmethod
    def cosine(cls, grid: GridSpec, V0: float, mode: int = 1) -> "PotentialSpec":
        xs = grid.coordinate_mesh()
        arg = np.zeros(grid.shape)
        for a in range(grid.dim):
            arg = arg + xs[a]
        values = V0 * np.cos(2.0 * np.pi * mode * arg / grid.box_length)
        return cls("cosine", grid, GridFunctionReal(grid, values), abs(V0))

    @classmethod
    def zero(cls, grid: GridSpec) -> "PotentialSpec":
        return cls("zero", grid, GridFunctionReal(grid, np.zeros(grid.shape)), 0.0)

    def __post_init__(self):
        vals = self.samples.values
        if not np.allclose(vals, reflect(vals), atol=1e-12 * max(1.0, self.sup_bound)):
            raise ValueError("interaction potential must be even on the periodic grid")


def cosine_symbol(grid: GridSpec, amplitude: float = 1.0, mode: int = 1) -> np.ndarray:
    """Default smooth coupling symbol g(x) = amplitude * cos(2 pi mode x_1 / L)."""
    x1 = grid.coordinate_mesh()[0]
    return np.broadcast_to(
        amplitude * np.cos(2.0 * np.pi * mode * x1 / grid.box_length), grid.shape
    ).copy().astype(np.complex128)


def multiplication_commutator_norms(L: CouplingOperator):
    """Analytic commutator norms for a multiplication operator.

    ||[grad, L]|| = sup |grad g|,  ||[grad, L*L]|| = sup |grad |g|^2|,
    with gradients of the symbol computed spectrally.
    """
    if L.kind != "multiplication":
        raise ValueError("commutator norms only available for multiplication operators")
    grid = L.grid

    def sup_grad(field: np.ndarray) -> float:
        fhat = np.fft.fftn(field)
        total = np.zeros(grid.shape)
        for ka in grid.frequency_mesh():
            total = total + np.abs(np.fft.ifftn(1j * ka * fhat)) ** 2
        return float(np.sqrt(np.max(total)))

    return sup_grad(L.symbol), sup_grad(np.abs(L.symbol) ** 2)
