"""Seeded, stream-indexed Gaussian increment source.

Counter-based: increment (repetition, particle, step) is a pure function of
the key (master_seed, domain) and the Philox4x64 counter
(step, particle, repetition, 0).  Each 4-word counter block maps through a
fixed-consumption Box-Muller transform to one N(0, dt) draw, so the value at
a key never depends on how many draws happened before it, on worker count,
or on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_KEY_SALT = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53

# Stream domains keep experiment phases on disjoint key spaces.
DOMAIN_EXPERIMENT = 0
DOMAIN_XI_PRECOMPUTE = 1
DOMAIN_DELTA_SWEEP = 2


class StreamAuditError(RuntimeError):
    """The generator failed its statistical audit."""


def _blocks_to_normals(raw: np.ndarray) -> np.ndarray:
    """Map Philox blocks (n, 4) of uint64 words to n standard normals."""
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53  # (0, 1]
    u2 = (raw[:, 1] >> np.uint64(11)).astype(np.float64) * _INV_2_53  # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class BrownianDriver:
    """Keyed Gaussian increments of variance dt."""

    master_seed: int
    dt: float
    domain: int = DOMAIN_EXPERIMENT

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must fit in 64 bits")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    def _philox(self, repetition: int, particle: int, step: int) -> np.random.Philox:
        # uint64 arrays: plain int lists round-trip through float64 inside
        # numpy and lose low bits of large key words
        key = np.array([self.master_seed, _KEY_SALT ^ self.domain], dtype=np.uint64)
        counter = np.array([step, particle, repetition, 0], dtype=np.uint64)
        return np.random.Philox(counter=counter, key=key)

    def increments(self, repetition: int, particle: int, n_steps: int) -> np.ndarray:
        """Increments for steps 0..n_steps-1 of one stream, each N(0, dt)."""
        raw = self._philox(repetition, particle, 0).random_raw(4 * n_steps)
        z = _blocks_to_normals(raw.reshape(n_steps, 4))
        return np.sqrt(self.dt) * z

    def normal_at(self, repetition: int, particle: int, step: int) -> float:
        """Single increment at an explicit key; equals increments(...)[step]."""
        raw = self._philox(repetition, particle, step).random_raw(4)
        z = _blocks_to_normals(raw.reshape(1, 4))
        return float(np.sqrt(self.dt) * z[0])

    def stream(self, repetition: int, particle: int) -> "StreamView":
        return StreamView(self, repetition, particle)


@dataclass(frozen=True)
class StreamView:
    """One (repetition, particle) stream of a driver."""

    driver: BrownianDriver
    repetition: int
    particle: int

    def increments(self, n_steps: int) -> np.ndarray:
        return self.driver.increments(self.repetition, self.particle, n_steps)

    def normal_at(self, step: int) -> float:
        return self.driver.normal_at(self.repetition, self.particle, step)


def gaussian_stream_audit(driver: BrownianDriver, n_samples: int, n_streams: int = 4) -> dict:
    """Sanity statistics over a few streams; hard error on failure.

    Per stream: |mean| <= 4 sigma / sqrt(n) and variance within 5% of dt.
    Across streams: empirical correlation within 4 / sqrt(n) of 0.
    """
    if n_samples < 10**5:
        raise ValueError("audit needs at least 1e5 samples per stream")
    sigma = np.sqrt(driver.dt)
    draws = np.stack(
        [driver.increments(0, j, n_samples) for j in range(n_streams)]
    )
    means = draws.mean(axis=1)
    variances = draws.var(axis=1)
    mean_band = 4.0 * sigma / np.sqrt(n_samples)
    corr = np.corrcoef(draws)
    off = corr[~np.eye(n_streams, dtype=bool)]
    report = {
        "n_samples": n_samples,
        "n_streams": n_streams,
        "dt": driver.dt,
        "means": means.tolist(),
        "variances": variances.tolist(),
        "mean_band": mean_band,
        "variance_band": [0.95 * driver.dt, 1.05 * driver.dt],
        "max_abs_cross_correlation": float(np.max(np.abs(off))),
        "correlation_band": 4.0 / np.sqrt(n_samples),
    }
    ok = (
        np.all(np.abs(means) <= mean_band)
        and np.all(variances >= 0.95 * driver.dt)
        and np.all(variances <= 1.05 * driver.dt)
        and np.max(np.abs(off)) <= 4.0 / np.sqrt(n_samples)
    )
    report["passed"] = bool(ok)
    if not ok:
        raise StreamAuditError(f"Gaussian stream audit failed: {report}")
    return report
