"""Finite-dimensional randomized verification of the operator estimates:
trace identities for rank-one projectors, Hilbert-Schmidt bounds, the
two-constant trace inequality, the norm chain, the scalar SDE degeneracy,
and the tiny-dimension wave-vs-density cross-check.

Single-sample entry points operate on LabOperator; the high-count property
suite runs the same checks batched (stacked (B, m, m) arrays).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density import DensityMatrix
from .grid import GridSpec, WaveFunction1P, gaussian_packet
from .meanfield import SchemeParams, coupling_matrix, free_unitary
from .nbody import NBodyIntegrator, pair_interaction_field, tensor_power
from .operators import CouplingOperator, PotentialSpec
from .streams import BrownianDriver

LAB_DIM_MAX = 64

# Trace-inequality constants: the self-adjoint constant follows the proof's
# two displayed bounds (|I| <= ||L||^2 a, |II| <= 4 sqrt2 ||L||^2 a combined
# as |-4I + 2II|); the general-mode constant is the safe value 32, with the
# empirical sharp ratio reported separately.
KOL_SELFADJOINT_CONSTANT = 4.0 + 8.0 * np.sqrt(2.0)
KOL_GENERAL_CONSTANT = 32.0


@dataclass
class LabOperator:
    """Dense operator with cached norms (operator <= HS <= trace)."""

    matrix: np.ndarray
    operator_norm: float = None
    hs_norm: float = None
    trace_norm: float = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.complex128)
        m = self.matrix.shape[0]
        if self.matrix.ndim != 2 or self.matrix.shape != (m, m):
            raise ValueError("lab operator must be square")
        if m > LAB_DIM_MAX:
            raise ValueError(f"lab operators restricted to dim <= {LAB_DIM_MAX}")
        if self.operator_norm is None:
            s = np.linalg.svd(self.matrix, compute_uv=False)
            self.operator_norm = float(s[0])
            self.hs_norm = float(np.sqrt(np.sum(s**2)))
            self.trace_norm = float(np.sum(s))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _ginibre(rng, m: int, batch: int | None = None) -> np.ndarray:
    shape = (m, m) if batch is None else (batch, m, m)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_density(m: int, seed) -> LabOperator:
    """Ginibre density: G G^dag / Tr(G G^dag); Hermitian, PSD, trace one."""
    if m < 2:
        raise ValueError("need dimension >= 2")
    g = _ginibre(_rng(seed), m)
    rho = g @ g.conj().T
    rho = rho / np.real(np.trace(rho))
    return LabOperator(0.5 * (rho + rho.conj().T))


def random_rank1_projector(m: int, seed) -> LabOperator:
    """|phi><phi| for a Haar-ish random unit vector phi."""
    if m < 2:
        raise ValueError("need dimension >= 2")
    v = _ginibre(_rng(seed), m)[:, 0]
    v = v / np.linalg.norm(v)
    return LabOperator(np.outer(v, v.conj()))


def random_bounded(m: int, seed, cap: float = 1.0) -> LabOperator:
    """Rescaled Ginibre with operator norm <= cap."""
    if m < 2:
        raise ValueError("need dimension >= 2")
    rng = _rng(seed)
    g = _ginibre(rng, m)
    sigma = np.linalg.svd(g, compute_uv=False)[0]
    scale = cap * rng.uniform(0.2, 1.0) / sigma
    return LabOperator(scale * g)


def _tr(a: np.ndarray) -> complex:
    return complex(np.trace(a))


def check_prodproj(A: LabOperator, B: LabOperator, p: LabOperator) -> float:
    """Deviation |Tr(ApBp) - Tr(Ap) Tr(Bp)| for a rank-one projector p."""
    Ap = A.matrix @ p.matrix
    Bp = B.matrix @ p.matrix
    lhs = _tr(Ap @ Bp)
    rhs = _tr(Ap) * _tr(Bp)
    return float(abs(lhs - rhs))


def check_hs_bound(rho: LabOperator, A: LabOperator) -> float:
    """Slack Tr(rho) Tr(A* rho A) - ||rho A||_2^2 (>= 0 for PSD rho)."""
    ra = rho.matrix @ A.matrix
    lhs = float(np.sum(np.abs(ra) ** 2))
    rhs = float(np.real(_tr(rho.matrix)) * np.real(_tr(A.matrix.conj().T @ rho.matrix @ A.matrix)))
    return rhs - lhs


def _kol_lhs_selfadjoint(Ls, rho, p):
    t_LrLp = _tr(Ls @ rho @ Ls @ p)
    t_rLp = _tr(rho @ Ls @ p)
    t_Lrp = _tr(Ls @ rho @ p)
    t_Lr = _tr(Ls @ rho)
    t_Lp = _tr(Ls @ p)
    t_rp = _tr(rho @ p)
    return -4.0 * t_LrLp + 2.0 * (t_rLp + t_Lrp) * (t_Lr + t_Lp) - 4.0 * t_rp * t_Lp * t_Lr


def _kol_lhs_general(L, rho, p):
    Ld = L.conj().T
    quad = _tr(p @ L @ rho @ Ld) + _tr(p @ Ld @ rho @ L) + _tr(p @ L @ rho @ L) + _tr(p @ Ld @ rho @ Ld)
    t_rp = _tr(rho @ p)
    t_r_sum = _tr(rho @ (L + Ld))
    t_p_sum = _tr(p @ (L + Ld))
    line2 = _tr(p @ rho @ Ld + p @ L @ rho) * t_p_sum
    line3 = _tr(p @ rho @ L + p @ Ld @ rho) * t_r_sum
    return -quad - t_rp * t_r_sum * t_p_sum + line2 + line3


def check_kolokoltsov(L: LabOperator, p: LabOperator, rho: LabOperator,
                      mode: str = "selfadjoint"):
    """Trace-inequality check; returns (|lhs|, bound, passed).

    selfadjoint mode symmetrizes L first and uses C1 = 4 + 8 sqrt2; general
    mode uses the safe constant 32.  alpha = 1 - Tr(rho p).
    """
    alpha = 1.0 - float(np.real(_tr(rho.matrix @ p.matrix)))
    if mode == "selfadjoint":
        Ls = 0.5 * (L.matrix + L.matrix.conj().T)
        norm = float(np.linalg.svd(Ls, compute_uv=False)[0])
        lhs = abs(_kol_lhs_selfadjoint(Ls, rho.matrix, p.matrix))
        bound = KOL_SELFADJOINT_CONSTANT * norm**2 * alpha
    elif mode == "general":
        lhs = abs(_kol_lhs_general(L.matrix, rho.matrix, p.matrix))
        bound = KOL_GENERAL_CONSTANT * L.operator_norm**2 * alpha
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return lhs, bound, bool(lhs <= bound + 1e-9)


def check_scalar_sde(C_fn, seed, dt: float, T: float, m0: float = 1.0) -> float:
    """Euler-Maruyama on dM = C_t (M - 1) dW; returns max_t |M_t - 1|.

    With M_0 = 1 the increment is identically zero, in floating point too.
    """
    driver = BrownianDriver(master_seed=int(seed) % 2**64, dt=dt)
    n = int(round(T / dt))
    dWs = driver.increments(0, 0, n)
    m_val = float(m0)
    worst = abs(m_val - 1.0)
    for k in range(n):
        c = float(C_fn(k * dt, m_val))
        if abs(c) > 1e6 * max(1.0, abs(m_val)):
            raise ValueError("coefficient violates |C_t| <= C |M_t|")
        m_val = m_val + c * (m_val - 1.0) * float(dWs[k])
        worst = max(worst, abs(m_val - 1.0))
    return worst


# ---------------------------------------------------------------------------
# batched property suite
# ---------------------------------------------------------------------------


def _batch_density(rng, B, m):
    g = _ginibre(rng, m, B)
    rho = g @ np.conj(np.swapaxes(g, 1, 2))
    tr = np.real(np.einsum("bii->b", rho))
    rho = rho / tr[:, None, None]
    return 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))


def _batch_projector(rng, B, m):
    v = _ginibre(rng, m, B)[:, :, 0]
    v = v / np.linalg.norm(v, axis=1)[:, None]
    return np.einsum("bi,bj->bij", v, v.conj())


def _batch_bounded(rng, B, m, cap=1.0):
    g = _ginibre(rng, m, B)
    sigma = np.linalg.svd(g, compute_uv=False)[:, 0]
    scale = cap * rng.uniform(0.2, 1.0, size=B) / sigma
    return scale[:, None, None] * g, scale * sigma


def _btr(a):
    return np.einsum("bii->b", a)


def _bmm(*mats):
    out = mats[0]
    for m in mats[1:]:
        out = out @ m
    return out


def _suite_prodproj(rng, samples, dims):
    worst = 0.0
    failures = 0
    per = samples // len(dims)
    for m in dims:
        A = _batch_bounded(rng, per, m, cap=2.0)[0]
        Bop = _batch_bounded(rng, per, m, cap=2.0)[0]
        p = _batch_projector(rng, per, m)
        lhs = _btr(_bmm(A, p, Bop, p))
        rhs = _btr(A @ p) * _btr(Bop @ p)
        dev = np.abs(lhs - rhs)
        normA = np.linalg.svd(A, compute_uv=False)[:, 0]
        normB = np.linalg.svd(Bop, compute_uv=False)[:, 0]
        allow = 1e-10 * (1.0 + normA * normB)
        ratio = dev / allow
        worst = max(worst, float(np.max(ratio)))
        failures += int(np.sum(ratio > 1.0))
    return {"check_name": "prodproj_identity", "samples": per * len(dims),
            "failures": failures, "worst_ratio": worst}


def _suite_hs_bound(rng, samples, dims):
    worst = -np.inf
    failures = 0
    per = samples // len(dims)
    for m in dims:
        rho = _batch_density(rng, per, m)
        A = _batch_bounded(rng, per, m, cap=2.0)[0]
        ra = rho @ A
        lhs = np.sum(np.abs(ra) ** 2, axis=(1, 2))
        rhs = np.real(_btr(rho)) * np.real(_btr(np.conj(np.swapaxes(A, 1, 2)) @ rho @ A))
        slack = rhs - lhs
        ratio = -slack / 1e-10
        worst = max(worst, float(np.max(ratio)))
        failures += int(np.sum(slack < -1e-10))
    return {"check_name": "hs_bound", "samples": per * len(dims),
            "failures": failures, "worst_ratio": worst}


def _suite_kolokoltsov(rng, samples, dims, mode):
    worst = 0.0
    sharp = 0.0
    failures = 0
    per = samples // len(dims)
    const = KOL_SELFADJOINT_CONSTANT if mode == "selfadjoint" else KOL_GENERAL_CONSTANT
    for m in dims:
        L = _batch_bounded(rng, per, m, cap=1.0)[0]
        if mode == "selfadjoint":
            L = 0.5 * (L + np.conj(np.swapaxes(L, 1, 2)))
        rho = _batch_density(rng, per, m)
        p = _batch_projector(rng, per, m)
        Ld = np.conj(np.swapaxes(L, 1, 2))
        alpha = 1.0 - np.real(_btr(rho @ p))
        if mode == "selfadjoint":
            lhs = np.abs(
                -4.0 * _btr(_bmm(L, rho, L, p))
                + 2.0 * (_btr(_bmm(rho, L, p)) + _btr(_bmm(L, rho, p)))
                * (_btr(L @ rho) + _btr(L @ p))
                - 4.0 * _btr(rho @ p) * _btr(L @ p) * _btr(L @ rho)
            )
        else:
            quad = (_btr(_bmm(p, L, rho, Ld)) + _btr(_bmm(p, Ld, rho, L))
                    + _btr(_bmm(p, L, rho, L)) + _btr(_bmm(p, Ld, rho, Ld)))
            t_rp = _btr(rho @ p)
            t_r = _btr(rho @ (L + Ld))
            t_p = _btr(p @ (L + Ld))
            lhs = np.abs(-quad - t_rp * t_r * t_p
                         + (_btr(_bmm(p, rho, Ld)) + _btr(_bmm(p, L, rho))) * t_p
                         + (_btr(_bmm(p, rho, L)) + _btr(_bmm(p, Ld, rho))) * t_r)
        norm = np.linalg.svd(L, compute_uv=False)[:, 0]
        bound = const * norm**2 * alpha
        ratio = lhs / (bound + 1e-9)
        worst = max(worst, float(np.max(ratio)))
        failures += int(np.sum(lhs > bound + 1e-9))
        mask = alpha > 1e-10
        if np.any(mask):
            sharp = max(sharp, float(np.max(lhs[mask] / (norm[mask] ** 2 * alpha[mask]))))
    return {"check_name": f"kolokoltsov_{mode}", "samples": per * len(dims),
            "failures": failures, "worst_ratio": worst,
            "empirical_sharp_constant": sharp}


def _suite_p3(rng, samples, dims):
    worst = 0.0
    failures = 0
    per = samples // len(dims)
    for m in dims:
        L, _ = _batch_bounded(rng, per, m, cap=1.0)
        rho = _batch_density(rng, per, m)
        p = _batch_projector(rng, per, m)
        Ld = np.conj(np.swapaxes(L, 1, 2))
        val = np.real(_btr(_bmm(p, L, rho)) + _btr(_bmm(p, rho, Ld))
                      - _btr((L + Ld) @ rho) * _btr(p @ rho))
        norm = np.linalg.svd(L, compute_uv=False)[:, 0]
        allow = 4.0 * norm + 1e-9
        ratio = np.abs(val) / allow
        worst = max(worst, float(np.max(ratio)))
        failures += int(np.sum(np.abs(val) > allow))
    return {"check_name": "p3_bound", "samples": per * len(dims),
            "failures": failures, "worst_ratio": worst}


def _suite_norm_chain(rng, samples, dims):
    worst = 0.0
    failures = 0
    per = samples // len(dims)
    for m in dims:
        mats = np.concatenate([
            _batch_bounded(rng, per // 3 + 1, m, cap=2.0)[0],
            _batch_density(rng, per // 3 + 1, m),
            _batch_projector(rng, per // 3 + 1, m),
        ])
        s = np.linalg.svd(mats, compute_uv=False)
        op = s[:, 0]
        hs = np.sqrt(np.sum(s**2, axis=1))
        tr = np.sum(s, axis=1)
        tol = 1e-12 * (1.0 + tr)
        bad = (op > hs + tol) | (hs > tr + tol)
        failures += int(np.sum(bad))
        worst = max(worst, float(np.max((op - hs) / tol)), float(np.max((hs - tr) / tol)))
    return {"check_name": "norm_chain", "samples": int(3 * (per // 3 + 1) * len(dims)),
            "failures": failures, "worst_ratio": worst}


def _suite_scalar_sde(seed):
    dev_unit = check_scalar_sde(lambda t, m_val: 0.8 * m_val, seed, dt=1e-3, T=0.5)
    failures = int(dev_unit != 0.0)
    return {"check_name": "scalar_sde_identity", "samples": 1,
            "failures": failures, "worst_ratio": dev_unit}


def run_property_suite(master_seed: int = 1,
                       prodproj_samples: int = 10_000,
                       hs_samples: int = 10_000,
                       kolokoltsov_samples: int = 100_000,
                       p3_samples: int = 10_000,
                       norm_chain_samples: int = 10_000,
                       dims=(2, 4, 8, 16)) -> list:
    """Run all batched operator checks; returns one report dict per check."""
    dims = tuple(dims)
    reports = [
        _suite_prodproj(_rng(master_seed * 7 + 1), prodproj_samples, dims),
        _suite_hs_bound(_rng(master_seed * 7 + 2), hs_samples, dims),
        _suite_kolokoltsov(_rng(master_seed * 7 + 3), kolokoltsov_samples, dims, "selfadjoint"),
        _suite_kolokoltsov(_rng(master_seed * 7 + 4), kolokoltsov_samples, dims, "general"),
        _suite_p3(_rng(master_seed * 7 + 5), p3_samples, dims),
        _suite_norm_chain(_rng(master_seed * 7 + 6), norm_chain_samples, dims),
        _suite_scalar_sde(master_seed * 7 + 7),
    ]
    return reports


# ---------------------------------------------------------------------------
# tiny-dimension N-body wave-vs-density cross-check
# ---------------------------------------------------------------------------


def _nbody_density_em(grid, n_particles, params, L, V, p0_weighted, dWs):
    """Matrix Euler-Maruyama for the N-body density equation, Strang kinetic."""
    m1 = grid.size
    m = m1**n_particles
    U1 = free_unitary(grid, 0.5 * params.dt)
    U = U1
    for _ in range(n_particles - 1):
        U = np.kron(U, U1)
    Ud = U.conj().T
    if n_particles >= 2 and V is not None and V.family != "zero":
        w = pair_interaction_field(grid, n_particles, V).reshape(-1)
        D = np.exp(-1j * params.dt * w)
    else:
        D = None
    L1 = coupling_matrix(L)
    Ljs = []
    for j in range(n_particles):
        mat = np.eye(1, dtype=np.complex128)
        for i in range(n_particles):
            mat = np.kron(mat, L1 if i == j else np.eye(m1, dtype=np.complex128))
        Ljs.append(mat)
    M = p0_weighted.copy()
    K = dWs.shape[1]
    traces = np.empty(K + 1)
    traces[0] = float(np.real(np.trace(M)))
    for k in range(K):
        M = U @ M @ Ud
        if D is not None:
            M = (D[:, None] * M) * np.conj(D)[None, :]
        drift = np.zeros_like(M)
        noise = np.zeros_like(M)
        for j, Lj in enumerate(Ljs):
            Ljd = Lj.conj().T
            LdL = Ljd @ Lj
            drift += Lj @ M @ Ljd - 0.5 * (LdL @ M + M @ LdL)
            tr_l = float(np.real(np.trace((Lj + Ljd) @ M)))
            noise += float(dWs[j, k]) * (Lj @ M + M @ Ljd - tr_l * M)
        M = M + params.dt * drift + noise
        M = U @ M @ Ud
        M = 0.5 * (M + M.conj().T)
        traces[k + 1] = float(np.real(np.trace(M)))
    return M, traces


def crosscheck_nbody_density(n: int = 4, n_particles: int = 2, T: float = 0.1,
                             dts=(1e-3, 2.5e-4), master_seed: int = 7,
                             n_reps: int = 4, box_length: float = 16.0,
                             coupling_amplitude: float = 1.0,
                             V0: float = 1.0) -> dict:
    """Evolve the tiny N-body density by matrix EM and the wave function by
    the split-step integrator under the SAME streams; report the strong
    trace-norm error at T for each dt and their ratio."""
    grid = GridSpec(1, n, box_length)
    m = grid.size**n_particles
    if m > LAB_DIM_MAX:
        raise ValueError("cross-check restricted to (n^d)^N <= 64")
    from .operators import cosine_symbol

    L = CouplingOperator.multiplication(grid, cosine_symbol(grid, coupling_amplitude))
    V = PotentialSpec.gaussian(grid, V0, sigma=box_length / 16.0) if V0 else None
    phi0 = gaussian_packet(grid, sigma=box_length / 8.0)

    errors = {}
    max_trace_drift = {}
    for dt in dts:
        params = SchemeParams(dt=dt, renormalize=False)
        K = int(round(T / dt))
        errs = []
        drifts = []
        for rep in range(n_reps):
            driver = BrownianDriver(master_seed, dt)
            dWs = np.stack([driver.increments(rep, j, K) for j in range(n_particles)])
            integ = NBodyIntegrator(grid, n_particles, params, L, V)
            Psi = tensor_power(phi0, n_particles)
            for k in range(K):
                Psi = integ.step(Psi, dWs[:, k])
            v = Psi.values.reshape(-1) * np.sqrt(Psi.weight)
            wave_density = np.outer(v, v.conj())
            p0 = np.outer(tensor_power(phi0, n_particles).values.reshape(-1),
                          tensor_power(phi0, n_particles).values.conj().reshape(-1))
            p0 *= grid.cell_volume**n_particles
            M, traces = _nbody_density_em(grid, n_particles, params, L, V, p0, dWs)
            diff = M - wave_density
            diff = 0.5 * (diff + diff.conj().T)
            errs.append(float(np.sum(np.abs(np.linalg.eigvalsh(diff)))))
            drifts.append(float(np.max(np.abs(traces - 1.0))))
        errors[dt] = float(np.mean(errs))
        max_trace_drift[dt] = float(np.max(drifts))
    dts_sorted = sorted(errors, reverse=True)
    ratio = None
    if len(dts_sorted) >= 2 and errors[dts_sorted[0]] > 0:
        ratio = float(errors[dts_sorted[1]] / errors[dts_sorted[0]])
    return {"errors": errors, "ratio": ratio,
            "max_trace_drift": max_trace_drift}
