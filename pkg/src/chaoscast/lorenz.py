"""Lorenz-system trajectory generation and resampling.

Trajectories of the three-variable Lorenz system are integrated with
classical RK4 at a fixed step, resampled every `interval` steps, and
packaged into one-step-ahead training sequences. Everything is a pure
function of (seed, config): per-sequence seeds are derived injectively
from (base_seed, sequence_index), so generation is order-independent
and reproducible bit-for-bit on any number of workers.

The integration hot loop has a numba kernel and a numpy fallback with
identical arithmetic (verified bit-exact in the test suite).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DegenerateSeries, EmptyInput, NonFiniteTrajectory

logger = logging.getLogger(__name__)

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba present in normal installs
    numba = None
    HAVE_NUMBA = False

# Parameter and initial-condition sampling ranges.
SIGMA_RANGE = (9.0, 11.0)
RHO_RANGE = (26.0, 30.0)
BETA_RANGE = (2.3, 3.1)
INIT_RANGE = (0.18, 0.22)

# Resampling intervals used for pretraining horizons.
STANDARD_INTERVALS = (100, 200, 300, 400, 500, 700, 1000)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class LorenzParams:
    """Coefficients of the Lorenz system.

    sigma: reaction-speed coefficient, rho: amplification coefficient,
    beta: decay coefficient. All dimensionless and strictly positive.
    """

    sigma: float
    rho: float
    beta: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.rho > 0 and self.beta > 0):
            raise ValueError(f"Lorenz coefficients must be positive: {self}")


#: Classical representative parameter values and initial state.
REPRESENTATIVE_PARAMS = LorenzParams(sigma=10.0, rho=28.0, beta=8.0 / 3.0)
REPRESENTATIVE_INIT = (0.2, 0.2, 0.2)


@dataclass(frozen=True)
class GenConfig:
    """Generation settings for one resampled sequence."""

    interval: int
    seed: int
    dt: float = 0.01
    warmup_steps: int = 1000
    context_len: int = 512

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        if self.interval < 1:
            raise ValueError("interval must be >= 1")

    @property
    def steps_per_sequence(self) -> int:
        """Post-warmup integration steps consumed per sequence."""
        return (self.context_len + 1) * self.interval


@dataclass(frozen=True)
class TrainingSequence:
    """One-step-ahead training sample: targets[t] is inputs[t] advanced
    by one resample step, so targets[t] == inputs[t+1] for t < len-1."""

    inputs: np.ndarray  # (context_len, 3)
    targets: np.ndarray  # (context_len, 3)
    params: LorenzParams
    seed: int


@dataclass
class GenStats:
    """Instrumentation counters for a generation stream."""

    sequences: int = 0
    integration_steps: int = 0
    skipped_seeds: list = field(default_factory=list)
    retried_steps: int = 0


# ---------------------------------------------------------------------------
# Dynamics and one-step integration
# ---------------------------------------------------------------------------


def lorenz_deriv(state: np.ndarray, params: LorenzParams) -> np.ndarray:
    """Time derivative of the Lorenz system at `state` (shape (..., 3))."""
    state = np.asarray(state, dtype=np.float64)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    return np.stack(
        [
            params.sigma * (y - x),
            x * (params.rho - z) - y,
            x * y - params.beta * z,
        ],
        axis=-1,
    )


def _rk4_arrays(x, y, z, s, r, b, dt):
    # Canonical RK4 arithmetic; the numba kernels repeat these exact
    # expressions so scalar and vectorized paths agree bit-for-bit.
    k1x = s * (y - x)
    k1y = x * (r - z) - y
    k1z = x * y - b * z
    ax = x + 0.5 * dt * k1x
    ay = y + 0.5 * dt * k1y
    az = z + 0.5 * dt * k1z
    k2x = s * (ay - ax)
    k2y = ax * (r - az) - ay
    k2z = ax * ay - b * az
    bx = x + 0.5 * dt * k2x
    by = y + 0.5 * dt * k2y
    bz = z + 0.5 * dt * k2z
    k3x = s * (by - bx)
    k3y = bx * (r - bz) - by
    k3z = bx * by - b * bz
    cx = x + dt * k3x
    cy = y + dt * k3y
    cz = z + dt * k3z
    k4x = s * (cy - cx)
    k4y = cx * (r - cz) - cy
    k4z = cx * cy - b * cz
    nx = x + dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
    ny = y + dt * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
    nz = z + dt * (k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0
    return nx, ny, nz


def rk4_step(state: np.ndarray, params: LorenzParams, dt: float) -> np.ndarray:
    """Advance `state` (shape (..., 3)) by one classical RK4 step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    state = np.asarray(state, dtype=np.float64)
    x, y, z = state[..., 0], state[..., 1], state[..., 2]
    nx, ny, nz = _rk4_arrays(x, y, z, params.sigma, params.rho, params.beta, dt)
    return np.stack([nx, ny, nz], axis=-1)


# ---------------------------------------------------------------------------
# Batched integration kernels (numba + numpy fallback)
# ---------------------------------------------------------------------------


def _resample_numpy(inits, sigmas, rhos, betas, dt, warmup_steps, interval, n_points):
    x = inits[:, 0].copy()
    y = inits[:, 1].copy()
    z = inits[:, 2].copy()
    out = np.empty((inits.shape[0], n_points, 3), dtype=np.float64)
    for _ in range(warmup_steps):
        x, y, z = _rk4_arrays(x, y, z, sigmas, rhos, betas, dt)
    for k in range(n_points):
        for _ in range(interval):
            x, y, z = _rk4_arrays(x, y, z, sigmas, rhos, betas, dt)
        out[:, k, 0] = x
        out[:, k, 1] = y
        out[:, k, 2] = z
    return out


def _bounds_numpy(inits, sigmas, rhos, betas, dt, n_steps):
    x = inits[:, 0].copy()
    y = inits[:, 1].copy()
    z = inits[:, 2].copy()
    lo = inits.copy()
    hi = inits.copy()
    for _ in range(n_steps):
        x, y, z = _rk4_arrays(x, y, z, sigmas, rhos, betas, dt)
        np.minimum(lo[:, 0], x, out=lo[:, 0])
        np.minimum(lo[:, 1], y, out=lo[:, 1])
        np.minimum(lo[:, 2], z, out=lo[:, 2])
        np.maximum(hi[:, 0], x, out=hi[:, 0])
        np.maximum(hi[:, 1], y, out=hi[:, 1])
        np.maximum(hi[:, 2], z, out=hi[:, 2])
    finals = np.stack([x, y, z], axis=-1)
    return lo, hi, finals


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _resample_numba(inits, sigmas, rhos, betas, dt, warmup_steps, interval, n_points):  # pragma: no cover - exercised via dispatcher
        n = inits.shape[0]
        out = np.empty((n, n_points, 3), dtype=np.float64)
        for i in range(n):
            x = inits[i, 0]
            y = inits[i, 1]
            z = inits[i, 2]
            s = sigmas[i]
            r = rhos[i]
            b = betas[i]
            for _ in range(warmup_steps):
                k1x = s * (y - x)
                k1y = x * (r - z) - y
                k1z = x * y - b * z
                ax = x + 0.5 * dt * k1x
                ay = y + 0.5 * dt * k1y
                az = z + 0.5 * dt * k1z
                k2x = s * (ay - ax)
                k2y = ax * (r - az) - ay
                k2z = ax * ay - b * az
                bx = x + 0.5 * dt * k2x
                by = y + 0.5 * dt * k2y
                bz = z + 0.5 * dt * k2z
                k3x = s * (by - bx)
                k3y = bx * (r - bz) - by
                k3z = bx * by - b * bz
                cx = x + dt * k3x
                cy = y + dt * k3y
                cz = z + dt * k3z
                k4x = s * (cy - cx)
                k4y = cx * (r - cz) - cy
                k4z = cx * cy - b * cz
                x = x + dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
                y = y + dt * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
                z = z + dt * (k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0
            for k in range(n_points):
                for _ in range(interval):
                    k1x = s * (y - x)
                    k1y = x * (r - z) - y
                    k1z = x * y - b * z
                    ax = x + 0.5 * dt * k1x
                    ay = y + 0.5 * dt * k1y
                    az = z + 0.5 * dt * k1z
                    k2x = s * (ay - ax)
                    k2y = ax * (r - az) - ay
                    k2z = ax * ay - b * az
                    bx = x + 0.5 * dt * k2x
                    by = y + 0.5 * dt * k2y
                    bz = z + 0.5 * dt * k2z
                    k3x = s * (by - bx)
                    k3y = bx * (r - bz) - by
                    k3z = bx * by - b * bz
                    cx = x + dt * k3x
                    cy = y + dt * k3y
                    cz = z + dt * k3z
                    k4x = s * (cy - cx)
                    k4y = cx * (r - cz) - cy
                    k4z = cx * cy - b * cz
                    x = x + dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
                    y = y + dt * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
                    z = z + dt * (k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0
                out[i, k, 0] = x
                out[i, k, 1] = y
                out[i, k, 2] = z
        return out

    @numba.njit(cache=True)
    def _bounds_numba(inits, sigmas, rhos, betas, dt, n_steps):  # pragma: no cover - exercised via dispatcher
        n = inits.shape[0]
        lo = inits.copy()
        hi = inits.copy()
        finals = np.empty((n, 3), dtype=np.float64)
        for i in range(n):
            x = inits[i, 0]
            y = inits[i, 1]
            z = inits[i, 2]
            s = sigmas[i]
            r = rhos[i]
            b = betas[i]
            for _ in range(n_steps):
                k1x = s * (y - x)
                k1y = x * (r - z) - y
                k1z = x * y - b * z
                ax = x + 0.5 * dt * k1x
                ay = y + 0.5 * dt * k1y
                az = z + 0.5 * dt * k1z
                k2x = s * (ay - ax)
                k2y = ax * (r - az) - ay
                k2z = ax * ay - b * az
                bx = x + 0.5 * dt * k2x
                by = y + 0.5 * dt * k2y
                bz = z + 0.5 * dt * k2z
                k3x = s * (by - bx)
                k3y = bx * (r - bz) - by
                k3z = bx * by - b * bz
                cx = x + dt * k3x
                cy = y + dt * k3y
                cz = z + dt * k3z
                k4x = s * (cy - cx)
                k4y = cx * (r - cz) - cy
                k4z = cx * cy - b * cz
                x = x + dt * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
                y = y + dt * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
                z = z + dt * (k1z + 2.0 * k2z + 2.0 * k3z + k4z) / 6.0
                if x < lo[i, 0]:
                    lo[i, 0] = x
                if y < lo[i, 1]:
                    lo[i, 1] = y
                if z < lo[i, 2]:
                    lo[i, 2] = z
                if x > hi[i, 0]:
                    hi[i, 0] = x
                if y > hi[i, 1]:
                    hi[i, 1] = y
                if z > hi[i, 2]:
                    hi[i, 2] = z
            finals[i, 0] = x
            finals[i, 1] = y
            finals[i, 2] = z
        return lo, hi, finals


def _resample_batch(inits, sigmas, rhos, betas, dt, warmup_steps, interval, n_points, use_numba=True):
    """Integrate a batch of trajectories, returning (B, n_points, 3)
    resampled points (one every `interval` steps, warmup discarded)."""
    if HAVE_NUMBA and use_numba:
        return _resample_numba(inits, sigmas, rhos, betas, dt, warmup_steps, interval, n_points)
    return _resample_numpy(inits, sigmas, rhos, betas, dt, warmup_steps, interval, n_points)


def trajectory_bounds(
    inits: np.ndarray,
    sigmas: np.ndarray,
    rhos: np.ndarray,
    betas: np.ndarray,
    dt: float,
    n_steps: int,
    use_numba: bool = True,
):
    """Per-trajectory coordinate min/max and final states over n_steps."""
    inits = np.ascontiguousarray(inits, dtype=np.float64)
    if HAVE_NUMBA and use_numba:
        return _bounds_numba(inits, sigmas, rhos, betas, float(dt), int(n_steps))
    return _bounds_numpy(inits, sigmas, rhos, betas, float(dt), int(n_steps))


# ---------------------------------------------------------------------------
# Seeding and parameter sampling
# ---------------------------------------------------------------------------


def derive_seed(base_seed: int, index: int) -> int:
    """Injective (for fixed base_seed) 64-bit mix of (base_seed, index).

    splitmix64 finalizer over an odd-multiplier index offset: both stages
    are bijections mod 2^64, so distinct indices never collide.
    """
    z = (base_seed + _GOLDEN * (index + 1)) & _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def sample_params(rng: np.random.Generator) -> tuple[LorenzParams, np.ndarray]:
    """Draw perturbed coefficients and an initial state, uniformly."""
    params = LorenzParams(
        sigma=float(rng.uniform(*SIGMA_RANGE)),
        rho=float(rng.uniform(*RHO_RANGE)),
        beta=float(rng.uniform(*BETA_RANGE)),
    )
    init = rng.uniform(INIT_RANGE[0], INIT_RANGE[1], size=3)
    return params, init


def _sample_batch_params(seeds: Sequence[int]):
    n = len(seeds)
    inits = np.empty((n, 3), dtype=np.float64)
    sigmas = np.empty(n, dtype=np.float64)
    rhos = np.empty(n, dtype=np.float64)
    betas = np.empty(n, dtype=np.float64)
    for i, seed in enumerate(seeds):
        params, init = sample_params(np.random.default_rng(seed))
        sigmas[i] = params.sigma
        rhos[i] = params.rho
        betas[i] = params.beta
        inits[i] = init
    return inits, sigmas, rhos, betas


# ---------------------------------------------------------------------------
# Sequence generation
# ---------------------------------------------------------------------------


def _sequences_for_seeds(seeds: Sequence[int], cfg: GenConfig, use_numba=True):
    """Generate resampled point blocks (B, context_len+1, 3) for seeds.

    Raises nothing; returns (points, finite_mask) so callers choose the
    retry policy.
    """
    inits, sigmas, rhos, betas = _sample_batch_params(seeds)
    points = _resample_batch(
        inits, sigmas, rhos, betas, cfg.dt, cfg.warmup_steps, cfg.interval,
        cfg.context_len + 1, use_numba=use_numba,
    )
    finite = np.isfinite(points).all(axis=(1, 2))
    return points, finite, sigmas, rhos, betas


def generate_sequence(cfg: GenConfig) -> TrainingSequence:
    """Generate one training sequence: params and initial state are drawn
    from cfg.seed, the trajectory resampled every cfg.interval steps."""
    points, finite, sigmas, rhos, betas = _sequences_for_seeds([cfg.seed], cfg)
    if not finite[0]:
        raise NonFiniteTrajectory(f"trajectory diverged for seed {cfg.seed}")
    return TrainingSequence(
        inputs=points[0, : cfg.context_len],
        targets=points[0, 1:],
        params=LorenzParams(float(sigmas[0]), float(rhos[0]), float(betas[0])),
        seed=cfg.seed,
    )


def batch_stream(
    base_seed: int,
    cfg: GenConfig,
    batch_size: int,
    start_index: int = 0,
    stats: GenStats | None = None,
) -> Iterator[list[TrainingSequence]]:
    """Unbounded stream of batches with injectively seeded sequences.

    Sequence index i uses seed derive_seed(base_seed, i); indices are
    consumed in order starting at start_index, so restarting the stream
    reproduces it exactly and no seed is ever repeated. Trajectories
    that leave the finite range are skipped (logged) and the next index
    is substituted.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    index = start_index
    steps_per_seq = cfg.warmup_steps + cfg.steps_per_sequence
    while True:
        indices = list(range(index, index + batch_size))
        index += batch_size
        seeds = [derive_seed(base_seed, i) for i in indices]
        points, finite, sigmas, rhos, betas = _sequences_for_seeds(seeds, cfg)
        while not finite.all():
            bad = np.flatnonzero(~finite)
            for slot in bad:
                logger.warning(
                    "non-finite trajectory for seed %d (index %d); substituting next index",
                    seeds[slot], indices[slot],
                )
                if stats is not None:
                    stats.skipped_seeds.append(seeds[slot])
                    stats.retried_steps += steps_per_seq
                indices[slot] = index
                seeds[slot] = derive_seed(base_seed, index)
                index += 1
            retry = [seeds[slot] for slot in bad]
            pts, fin, sg, rh, bt = _sequences_for_seeds(retry, cfg)
            points[bad] = pts
            finite[bad] = fin
            sigmas[bad] = sg
            rhos[bad] = rh
            betas[bad] = bt
        if stats is not None:
            stats.sequences += batch_size
            stats.integration_steps += batch_size * steps_per_seq
        yield [
            TrainingSequence(
                inputs=points[j, : cfg.context_len],
                targets=points[j, 1:],
                params=LorenzParams(float(sigmas[j]), float(rhos[j]), float(betas[j])),
                seed=seeds[j],
            )
            for j in range(batch_size)
        ]


def stack_batch(seqs: Sequence[TrainingSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (B, context_len, 3) input/target arrays."""
    inputs = np.stack([s.inputs for s in seqs])
    targets = np.stack([s.targets for s in seqs])
    return inputs, targets


def resample_series(cfg: GenConfig, n_points: int) -> np.ndarray:
    """One continuing resampled trajectory of n_points 3-vectors, for
    diagnostics and synthetic series construction."""
    seeds = [cfg.seed]
    inits, sigmas, rhos, betas = _sample_batch_params(seeds)
    points = _resample_batch(
        inits, sigmas, rhos, betas, cfg.dt, cfg.warmup_steps, cfg.interval, n_points
    )
    if not np.isfinite(points).all():
        raise NonFiniteTrajectory(f"trajectory diverged for seed {cfg.seed}")
    return points[0]


def reference_moments(
    cfg: GenConfig, n_sequences: int, base_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std of generated training data at cfg.interval.

    Used to scale market bars onto the training distribution.
    """
    stream = batch_stream(base_seed, cfg, batch_size=min(n_sequences, 64))
    pooled = []
    remaining = n_sequences
    while remaining > 0:
        batch = next(stream)
        take = min(remaining, len(batch))
        pooled.extend(s.inputs for s in batch[:take])
        remaining -= take
    data = np.concatenate(pooled, axis=0)
    return data.mean(axis=0), data.std(axis=0)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def autocorrelation(series: np.ndarray, lag: int) -> float:
    """Pearson correlation between series[:-lag] and series[lag:]."""
    series = np.asarray(series, dtype=np.float64)
    if lag < 1:
        raise ValueError("lag must be >= 1")
    if series.ndim != 1 or series.shape[0] <= lag + 1:
        raise ValueError("series must be 1-D with length > lag + 1")
    a = series[:-lag]
    b = series[lag:]
    if a.std() == 0.0 or b.std() == 0.0:
        raise DegenerateSeries("zero variance in lagged slice")
    return float(np.corrcoef(a, b)[0, 1])


def export_attractor(points: np.ndarray, path: str | Path) -> None:
    """Write state-space points as CSV with header x,y,z."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise EmptyInput("no points to export")
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError("points must have shape (n, 3)")
    lines = ["x,y,z"]
    for row in points:
        lines.append(f"{float(row[0])!r},{float(row[1])!r},{float(row[2])!r}")
    Path(path).write_text("\n".join(lines) + "\n")
