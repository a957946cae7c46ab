"""Monte Carlo walkers: renewal jumps with heavy-tailed waits.

Event-driven and vectorized: particles are processed in fixed-size chunks,
each chunk owning its own counter-based stream, so results are bit-for-bit
reproducible for a given seed no matter how many worker threads run the
chunks.  Between events a walker does not move, so snapshots are captured
with a per-particle pointer sweep -- total capture work is
O(n_particles * n_snapshots) on top of the O(total events) simulation.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import (
    InitialCondition,
    JumpKernel,
    SurvivalModel,
    rng_stream,
    sample_jump,
    sample_waiting_time,
)

__all__ = [
    "CHUNK_SIZE",
    "ParticleSnapshots",
    "MsdEstimate",
    "PowerLawFit",
    "simulate",
    "msd_estimate",
    "fit_power_law",
]

# Fixed chunk width.  The stream id of a particle's chunk is part of the
# sampling layout: changing this constant changes every sample path, so it
# is not a tuning knob.
CHUNK_SIZE = 16384


@dataclass(frozen=True)
class ParticleSnapshots:
    """Positions of every walker at the requested times.

    ``positions[s, i]`` is walker i at ``times[s]`` (right-continuous: a
    jump exactly at a snapshot time is included).  ``origins`` holds the
    t = 0 positions the displacements are measured from.
    """

    times: np.ndarray
    positions: np.ndarray  # (n_snapshots, n_particles, dimension)
    origins: np.ndarray  # (n_particles, dimension)
    seed: int

    @property
    def n_particles(self) -> int:
        return self.origins.shape[0]


@dataclass(frozen=True)
class MsdEstimate:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_particles: int


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    amplitude: float
    n_points: int
    t_min: float
    t_max: float


def _n_workers(n_threads: int | None) -> int:
    if n_threads is None:
        n_threads = int(os.environ.get("SUBDIFF_THREADS", "0") or 0)
    if n_threads < 0:
        raise ValueError("thread count must be nonnegative (0 = auto)")
    if n_threads == 0:
        n_threads = min(8, os.cpu_count() or 1)
    return n_threads


def _sample_initial(rng: np.random.Generator, initial: InitialCondition | None, n: int, dimension: int):
    """Ages and positions of a freshly drawn cohort (one uniform per walker
    decides atom-at-zero versus the smooth age profile)."""
    ages = np.zeros(n)
    positions = np.zeros((n, dimension))
    if initial is None:
        return ages, positions
    atom = initial.age_delta_mass
    smooth = initial.age_mass - atom
    total = atom + smooth
    if total <= 0.0:
        raise ValueError("initial condition carries no age mass")
    if smooth > 0.0:
        u = rng.random(n)
        take_profile = u >= atom / total
        cdf = np.concatenate(([0.0], np.cumsum(np.diff(initial.ages) * 0.5 * (initial.age_profile[1:] + initial.age_profile[:-1]))))
        cdf /= cdf[-1]
        v = (u[take_profile] - atom / total) / (smooth / total)
        ages[take_profile] = np.interp(v, cdf, initial.ages)
    profile = initial.spatial_profile
    if profile is not None:
        values = np.asarray(profile.values, dtype=float).reshape(-1)
        p = values / values.sum()
        flat = rng.choice(values.size, size=n, p=p)
        coords = profile.lattice.coordinates
        if profile.lattice.dimension == 1:
            positions[:, 0] = coords[flat]
        else:
            i, j = np.unravel_index(flat, profile.lattice.shape())
            positions[:, 0] = coords[i]
            positions[:, 1] = coords[j]
    return ages, positions


def _run_chunk(
    model: SurvivalModel,
    kernel: JumpKernel,
    chunk_id: int,
    n: int,
    T: float,
    seed: int,
    snap_times: np.ndarray,
    initial: InitialCondition | None,
):
    rng = rng_stream(seed, chunk_id)
    d = kernel.dimension
    n_snap = snap_times.size
    ages, pos = _sample_initial(rng, initial, n, d)
    origins = pos.copy()
    pos_at = np.empty((n_snap, n, d))
    ptr = np.zeros(n, dtype=np.intp)  # next snapshot slot to fill, per walker
    t_event = np.asarray(sample_waiting_time(model, rng, n, age=ages), dtype=float)
    idx = np.nonzero(t_event <= T)[0]
    while idx.size:
        te = t_event[idx]
        # record the pre-jump position at every snapshot before this event
        fill = idx[(ptr[idx] < n_snap) & (snap_times[np.minimum(ptr[idx], n_snap - 1)] < te)]
        while fill.size:
            pos_at[ptr[fill], fill] = pos[fill]
            ptr[fill] += 1
            keep = ptr[fill] < n_snap
            fill = fill[keep]
            fill = fill[snap_times[ptr[fill]] < t_event[fill]]
        pos[idx] += sample_jump(kernel, rng, idx.size)
        t_event[idx] = te + np.asarray(sample_waiting_time(model, rng, idx.size), dtype=float)
        idx = idx[t_event[idx] <= T]
    for s in range(n_snap):
        done = ptr <= s
        pos_at[s, done] = pos[done]
    return pos_at, origins


def simulate(
    model: SurvivalModel,
    kernel: JumpKernel,
    n_particles: int,
    T: float,
    seed: int,
    snapshot_times=None,
    initial: InitialCondition | None = None,
    n_threads: int | None = None,
) -> ParticleSnapshots:
    """Run ``n_particles`` independent renewal walkers to horizon T.

    Waits are drawn from the model's survival law (walkers from an aged
    ``initial`` draw their first wait from the residual law
    ``psi(a + .) / psi(a)``); displacements from the jump kernel at unit
    scale.  ``snapshot_times`` defaults to 30 geometric times ending at T.
    ``n_threads`` (or SUBDIFF_THREADS; 0 = auto) only distributes chunks
    over threads -- it never changes the sampled paths.
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    if not T > 0.0:
        raise ValueError("horizon must be positive")
    if snapshot_times is None:
        snapshot_times = np.geomspace(T / 1000.0, T, 30)
    snap = np.asarray(snapshot_times, dtype=float)
    if snap.ndim != 1 or snap.size == 0 or np.any(np.diff(snap) <= 0.0):
        raise ValueError("snapshot_times must be strictly increasing")
    if snap[0] < 0.0 or snap[-1] > T * (1.0 + 1e-12):
        raise ValueError("snapshot_times must lie within [0, T]")
    if initial is not None and not isinstance(initial, InitialCondition):
        raise ValueError("initial must be an InitialCondition")

    bounds = list(range(0, n_particles, CHUNK_SIZE)) + [n_particles]
    chunks = [(cid, lo, hi) for cid, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:]))]
    positions = np.empty((snap.size, n_particles, kernel.dimension))
    origins = np.empty((n_particles, kernel.dimension))

    def work(chunk):
        cid, lo, hi = chunk
        pos_at, orig = _run_chunk(model, kernel, cid, hi - lo, T, seed, snap, initial)
        positions[:, lo:hi] = pos_at
        origins[lo:hi] = orig

    workers = _n_workers(n_threads)
    if workers <= 1 or len(chunks) == 1:
        for chunk in chunks:
            work(chunk)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, chunks))
    return ParticleSnapshots(times=snap, positions=positions, origins=origins, seed=seed)


def msd_estimate(snapshots: ParticleSnapshots) -> MsdEstimate:
    """Mean squared displacement from the t = 0 positions, with the
    standard error of the mean at each snapshot."""
    n = snapshots.n_particles
    if n < 2:
        raise ValueError("msd_estimate needs at least two particles")
    sq = np.sum((snapshots.positions - snapshots.origins[None]) ** 2, axis=-1)
    values = sq.mean(axis=1)
    stderr = sq.std(axis=1, ddof=1) / math.sqrt(n)
    return MsdEstimate(times=snapshots.times, values=values, stderr=stderr, n_particles=n)


def fit_power_law(times, values, t_min: float | None = None, t_max: float | None = None) -> PowerLawFit:
    """Least-squares fit of ``values ~ amplitude * t**exponent`` in log-log.

    The window (after ``t_min``/``t_max`` filtering) must hold at least 10
    points spanning at least one decade, and the values must be positive.
    Exact power laws are recovered to round-off.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape or times.ndim != 1:
        raise ValueError("times and values must be matching 1-d arrays")
    mask = np.ones(times.size, dtype=bool)
    if t_min is not None:
        mask &= times >= t_min
    if t_max is not None:
        mask &= times <= t_max
    t, v = times[mask], values[mask]
    if t.size < 10:
        raise ValueError("power-law fit needs at least 10 points in the window")
    if t[0] <= 0.0 or t[-1] / t[0] < 10.0 * (1.0 - 1e-12):
        raise ValueError("power-law fit needs at least one decade of times")
    if np.any(v <= 0.0):
        raise ValueError("power-law fit needs positive values")
    slope, intercept = np.polyfit(np.log(t), np.log(v), 1)
    return PowerLawFit(
        exponent=float(slope),
        amplitude=float(math.exp(intercept)),
        n_points=int(t.size),
        t_min=float(t[0]),
        t_max=float(t[-1]),
    )
