"""Independent oracles used across the test suite.

These deliberately avoid the library's own code paths: naive summation loops,
direct double-loop convolution, central differences, a Jacobi rotation
eigensolver.  Slow and dumb on purpose.
"""

import numpy as np


def naive_inner_l2(u_values, v_values, cell_volume):
    """Real symmetric scalar product by an explicit python loop."""
    acc = 0.0
    for a, b in zip(u_values.ravel(), v_values.ravel()):
        acc += (a * np.conj(b)).real
    return cell_volume * acc


def central_difference_gradient_norm_sq(values, spacing):
    """|grad u|_L2^2 by periodic central differences (O(h^2) accurate)."""
    total = 0.0
    for axis in range(values.ndim):
        d = (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2 * spacing)
        total += np.sum(np.abs(d) ** 2)
    return spacing**values.ndim * total


def naive_periodic_convolution(V_values, xi_values, cell_volume):
    """(V * xi)(x) = h^d sum_y V(x - y) xi(y) by explicit double loop (1-d)."""
    n = V_values.shape[0]
    out = np.zeros(n)
    for x in range(n):
        for y in range(n):
            out[x] += V_values[(x - y) % n] * xi_values[y]
    return cell_volume * out


def dense_matvec(kernel, values, cell_volume):
    """(L u)(x) = h^d sum_y l(x, y) u(y) by explicit loops."""
    m = kernel.shape[0]
    flat = values.ravel()
    out = np.zeros(m, dtype=complex)
    for x in range(m):
        for y in range(m):
            out[x] += kernel[x, y] * flat[y]
    return (cell_volume * out).reshape(values.shape)


def jacobi_hermitian_eigenvalues(matrix, tol=1e-13, max_sweeps=60):
    """Cyclic complex Jacobi eigensolver for Hermitian matrices."""
    a = np.array(matrix, dtype=complex)
    m = a.shape[0]
    for _ in range(max_sweeps):
        off = np.sum(np.abs(a - np.diag(np.diag(a))) ** 2)
        if off < tol**2:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                app = a[p, p].real
                aqq = a[q, q].real
                # unitary 2x2 rotation annihilating a[p, q]
                phi = np.angle(apq)
                tau = (aqq - app) / (2 * abs(apq))
                t = np.sign(tau) / (abs(tau) + np.sqrt(1 + tau**2)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1 + t**2)
                s = t * c
                e = np.exp(1j * phi)
                J = np.eye(m, dtype=complex)
                J[p, p] = c
                J[q, q] = c
                J[p, q] = s * e
                J[q, p] = -s * np.conj(e)
                a = J.conj().T @ a @ J
    return np.sort(np.diag(a).real)


def random_wave(grid, rng, band_limit=None):
    """Random complex field, optionally band-limited to |mode| <= band_limit."""
    values = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    if band_limit is not None:
        spec = np.fft.fftn(values)
        n = grid.points_per_axis
        freq_idx = np.fft.fftfreq(n, d=1.0 / n)
        keep = np.abs(freq_idx) <= band_limit
        for axis in range(grid.dim):
            shape = [1] * grid.dim
            shape[axis] = n
            spec = spec * keep.reshape(shape)
        values = np.fft.ifftn(spec)
    return values
