"""Discrete L2 / H1 structure on periodic uniform grids.

All norms, inner products and traces carry the quadrature weight h^d
(h = box_length / n), so discrete quantities approximate their continuum
counterparts.  Derivatives and the free propagator exp(i*Laplacian*t) are
spectral: exact on grid frequencies and exactly commuting with each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Largest number of grid cells a single-particle field may hold.
MAX_GRID_SIZE = 2**24

DEFAULT_NORM_TOL = 1e-9
DEFAULT_DENSITY_TOL = 1e-12


class GridMismatchError(ValueError):
    """Operands live on different grids."""


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Periodic uniform grid on a d-dimensional box of side box_length.

    Axis coordinates are x_j = -box_length/2 + j*h, j = 0..n-1, so the box is
    centered at the origin and x -> -x is the index map j -> (-j) mod n.
    """

    dim: int
    points_per_axis: int
    box_length: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.points_per_axis
        if n < 4 or not _is_power_of_two(n):
            raise ValueError(f"points_per_axis must be a power of two >= 4, got {n}")
        if self.box_length <= 0:
            raise ValueError("box_length must be positive")
        if n**self.dim > MAX_GRID_SIZE:
            raise ValueError(f"grid size {n}^{self.dim} exceeds budget {MAX_GRID_SIZE}")

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    def axis_coordinates(self) -> np.ndarray:
        n = self.points_per_axis
        return -0.5 * self.box_length + self.spacing * np.arange(n)

    def coordinate_mesh(self) -> list:
        """One coordinate array per axis, broadcastable to `shape`."""
        x = self.axis_coordinates()
        return [
            x.reshape((1,) * a + (-1,) + (1,) * (self.dim - a - 1))
            for a in range(self.dim)
        ]

    def axis_frequencies(self) -> np.ndarray:
        """Angular Fourier frequencies of one axis (fftfreq layout)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points_per_axis, d=self.spacing)

    def frequency_mesh(self) -> list:
        k = self.axis_frequencies()
        return [
            k.reshape((1,) * a + (-1,) + (1,) * (self.dim - a - 1))
            for a in range(self.dim)
        ]

    def laplacian_symbol(self) -> np.ndarray:
        """|k|^2 on the full grid, shape = `shape`."""
        ks = self.frequency_mesh()
        out = np.zeros(self.shape)
        for ka in ks:
            out = out + ka**2
        return out


def _check_same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


@dataclass
class WaveFunction1P:
    """Single-particle complex field on a periodic grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("wave function contains non-finite values")

    def l2_norm(self) -> float:
        return float(
            np.sqrt(self.grid.cell_volume * np.sum(np.abs(self.values) ** 2))
        )

    def require_normalized(self, norm_tol: float = DEFAULT_NORM_TOL):
        if abs(self.l2_norm() - 1.0) > norm_tol:
            raise ValueError(f"wave function not normalized: |u| = {self.l2_norm()}")

    def normalized(self) -> "WaveFunction1P":
        return WaveFunction1P(self.grid, self.values / self.l2_norm())

    def copy(self) -> "WaveFunction1P":
        return WaveFunction1P(self.grid, self.values.copy())

    def density(self) -> "GridFunctionReal":
        return GridFunctionReal(self.grid, np.abs(self.values) ** 2)


@dataclass
class GridFunctionReal:
    """Real field on a periodic grid (xi, delta^N, potential samples)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid function contains non-finite values")

    def l1_norm(self) -> float:
        return float(self.grid.cell_volume * np.sum(np.abs(self.values)))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.grid.cell_volume * np.sum(self.values**2)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def require_density(
        self,
        norm_tol: float = DEFAULT_NORM_TOL,
        density_tol: float = DEFAULT_DENSITY_TOL,
    ):
        if np.min(self.values) < -density_tol:
            raise ValueError(f"density has negative values: min = {np.min(self.values)}")
        if abs(self.l1_norm() - 1.0) > norm_tol:
            raise ValueError(f"density L1 norm {self.l1_norm()} not within {norm_tol} of 1")


def reflect(values: np.ndarray) -> np.ndarray:
    """Index map j -> (-j) mod n on every axis (x -> -x on the periodic grid)."""
    out = values
    for axis in range(values.ndim):
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out


def inner_l2(u: WaveFunction1P, v: WaveFunction1P) -> float:
    """Real symmetric scalar product (u, v) = h^d Re sum u conj(v)."""
    _check_same_grid(u, v)
    return float(u.grid.cell_volume * np.real(np.vdot(v.values, u.values)))


def spectral_gradient(u: WaveFunction1P) -> list:
    """Gradient components via Fourier multipliers i*k, one array per axis."""
    uhat = np.fft.fftn(u.values)
    ks = u.grid.frequency_mesh()
    return [np.fft.ifftn(1j * ka * uhat) for ka in ks]


def h1_norm(u: WaveFunction1P) -> float:
    """H1 norm: sqrt(|u|_L2^2 + |grad u|_L2^2), gradient spectral."""
    uhat = np.fft.fftn(u.values)
    ksq = u.grid.laplacian_symbol()
    # Parseval: h^d sum_x |u|^2 = h^d / n_tot * sum_k |uhat|^2
    weight = u.grid.cell_volume / u.grid.size
    return float(np.sqrt(weight * np.sum((1.0 + ksq) * np.abs(uhat) ** 2)))


def free_propagate(u: WaveFunction1P, t: float) -> WaveFunction1P:
    """Free flow S(t) = exp(i*Laplacian*t): Fourier phase exp(-i|k|^2 t)."""
    if t == 0.0:
        return u.copy()
    phase = np.exp(-1j * u.grid.laplacian_symbol() * t)
    return WaveFunction1P(u.grid, np.fft.ifftn(phase * np.fft.fftn(u.values)))


def convolve_potential(V: GridFunctionReal, xi: GridFunctionReal) -> GridFunctionReal:
    """Periodic convolution (V * xi)(x) = h^d sum_y V(x - y) xi(y).

    V must be even under x -> -x on the periodic grid; the output sup norm
    obeys the discrete Young bound |V * xi|_inf <= |V|_inf |xi|_L1.
    """
    _check_same_grid(V, xi)
    scale = max(V.sup_norm(), 1.0)
    if not np.allclose(V.values, reflect(V.values), atol=1e-12 * scale):
        raise ValueError("potential is not even under x -> -x on the periodic grid")
    conv = np.fft.ifftn(np.fft.fftn(V.values) * np.fft.fftn(xi.values)).real
    return GridFunctionReal(V.grid, V.grid.cell_volume * conv)


def gaussian_packet(
    grid: GridSpec, sigma: float, center=0.0, momentum=None
) -> WaveFunction1P:
    """Normalized Gaussian wave packet exp(-|x-c|^2/(4 sigma^2) + i p.x)."""
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    xs = grid.coordinate_mesh()
    arg = np.zeros(grid.shape)
    for a in range(grid.dim):
        arg = arg + (xs[a] - center[a]) ** 2
    values = np.exp(-arg / (4.0 * sigma**2)).astype(np.complex128)
    if momentum is not None:
        momentum = np.broadcast_to(np.asarray(momentum, dtype=float), (grid.dim,))
        phase = np.zeros(grid.shape)
        for a in range(grid.dim):
            phase = phase + momentum[a] * xs[a]
        values = values * np.exp(1j * phase)
    return WaveFunction1P(grid, values).normalized()


def plane_wave(grid: GridSpec, modes) -> WaveFunction1P:
    """Normalized plane wave exp(i k.x) with k = 2 pi m / box_length."""
    modes = np.broadcast_to(np.asarray(modes, dtype=int), (grid.dim,))
    xs = grid.coordinate_mesh()
    phase = np.zeros(grid.shape)
    for a in range(grid.dim):
        phase = phase + (2.0 * np.pi * modes[a] / grid.box_length) * xs[a]
    values = np.exp(1j * phase) / grid.box_length ** (grid.dim / 2.0)
    return WaveFunction1P(grid, values)
