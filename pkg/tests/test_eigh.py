import numpy as np
import pytest

from belavkin_mf.eigh import EigensolverError, hermitian_eigenvalues

from helpers import jacobi_hermitian_eigenvalues


def _random_hermitian(rng, m):
    g = rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m))
    return 0.5 * (g + g.conj().T)


def test_diagonal_matrix():
    d = np.diag([3.0, -1.0, 2.0, 0.5])
    assert np.allclose(hermitian_eigenvalues(d), sorted([-1.0, 0.5, 2.0, 3.0]), atol=1e-13)


def test_two_by_two_analytic():
    a = np.array([[1.0, 2.0 - 1j], [2.0 + 1j, -1.0]])
    disc = np.sqrt(1.0 + np.abs(2.0 - 1j) ** 2)
    expected = np.array([-disc, disc])
    assert np.allclose(hermitian_eigenvalues(a), expected, atol=1e-12)


def test_matches_jacobi_oracle_random():
    rng = np.random.default_rng(33)
    for m in (3, 5, 8, 16):
        for _ in range(10):
            a = _random_hermitian(rng, m)
            ours = hermitian_eigenvalues(a)
            oracle = jacobi_hermitian_eigenvalues(a)
            scale = max(1.0, np.max(np.abs(oracle)))
            assert np.max(np.abs(ours - oracle)) <= 1e-9 * scale


def test_matches_lapack_cross_check():
    rng = np.random.default_rng(34)
    for m in (16, 32, 64):
        a = _random_hermitian(rng, m)
        ours = hermitian_eigenvalues(a)
        ref = np.linalg.eigvalsh(a)
        assert np.max(np.abs(ours - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))


def test_trace_and_frobenius_invariants():
    rng = np.random.default_rng(35)
    a = _random_hermitian(rng, 24)
    lam = hermitian_eigenvalues(a)
    assert np.sum(lam) == pytest.approx(np.trace(a).real, rel=1e-10, abs=1e-10)
    assert np.sum(lam**2) == pytest.approx(np.sum(np.abs(a) ** 2), rel=1e-10)


def test_degenerate_spectrum():
    rng = np.random.default_rng(36)
    # projector-like matrix with a highly degenerate spectrum
    v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    v /= np.linalg.norm(v)
    p = np.outer(v, v.conj())
    lam = hermitian_eigenvalues(p)
    assert np.max(np.abs(lam[:-1])) <= 1e-12
    assert lam[-1] == pytest.approx(1.0, abs=1e-12)


def test_rejects_non_hermitian():
    a = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        hermitian_eigenvalues(a)


def test_rejects_non_square():
    with pytest.raises(ValueError):
        hermitian_eigenvalues(np.zeros((2, 3)))


def test_iteration_cap_reported(monkeypatch):
    import belavkin_mf.eigh as eig

    monkeypatch.setattr(eig, "QL_MAX_SWEEPS", 0)
    rng = np.random.default_rng(40)
    a = _random_hermitian(rng, 12)
    with pytest.raises(EigensolverError):
        eig.hermitian_eigenvalues(a)
