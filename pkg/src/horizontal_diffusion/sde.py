"""Geodesic Euler-Maruyama simulation of L(t) = 1/2 Delta^t + Z(t) diffusions.

One step from ``x`` at time ``t``::

    dm = F(t, x) xi sqrt(dt)          # martingale part, F a g(t)-orthonormal frame
    x' = exp_x(dm + Z(t, x) dt)

Paths are simulated in batches: a trajectory holds ``points`` of shape
``(n_steps + 1, *batch, d)``.  A path whose next point would leave the chart
(or whose step fails the exponential-map guard) is stopped: it stays at its
last valid point and its later increments are zero.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import InvalidStart
from .geometry import ManifoldModel

NOT_STOPPED = -1


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if self.n_steps > 0 and not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")

    @classmethod
    def from_dt(cls, t_end: float, dt: float, t0: float = 0.0) -> "TimeGrid":
        n = int(round((t_end - t0) / dt))
        return cls(t0, t_end, n)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps if self.n_steps else 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def index(self, t: float) -> int:
        """Grid index of time ``t`` (must lie on the grid)."""
        k = int(round((t - self.t0) / self.dt)) if self.n_steps else 0
        if not 0 <= k <= self.n_steps or abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the grid")
        return k

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.t0, self.t_end, self.n_steps * factor)


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments ``dB`` (already scaled by sqrt(dt)).

    ``increments`` has shape ``(n_steps, d)`` for one stream or
    ``(n_steps, B, d)`` for a batch with one stream id per path.
    """

    seed: int
    stream_id: object
    grid: TimeGrid
    increments: np.ndarray

    @property
    def dim(self) -> int:
        return self.increments.shape[-1]

    @property
    def batch_shape(self) -> tuple:
        return self.increments.shape[1:-1]

    def coarsen(self, factor: int) -> "NoisePath":
        """Sum groups of ``factor`` consecutive increments (nested coarser grid)."""
        n = self.grid.n_steps
        if n % factor:
            raise ValueError("factor must divide n_steps")
        inc = self.increments.reshape((n // factor, factor) + self.increments.shape[1:]).sum(axis=1)
        return replace(self, grid=TimeGrid(self.grid.t0, self.grid.t_end, n // factor), increments=inc)


def _generator(seed: int, stream_id: int) -> np.random.Generator:
    # counter-based bit generator keyed by (seed, stream_id)
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def sample_noise(seed: int, stream_id: int, grid: TimeGrid, d: int) -> NoisePath:
    rng = _generator(seed, stream_id)
    xi = rng.standard_normal((grid.n_steps, d))
    return NoisePath(seed, int(stream_id), grid, xi * np.sqrt(grid.dt))


def sample_noise_batch(seed: int, stream_ids, grid: TimeGrid, d: int) -> NoisePath:
    """One independent stream per path; path ``b`` uses ``stream_ids[b]``."""
    ids = np.asarray(stream_ids, dtype=np.int64).ravel()
    inc = np.empty((grid.n_steps, ids.size, d))
    scale = np.sqrt(grid.dt)
    for b, sid in enumerate(ids):
        inc[:, b, :] = _generator(seed, sid).standard_normal((grid.n_steps, d)) * scale
    return NoisePath(seed, ids, grid, inc)


@dataclass
class Trajectory:
    grid: TimeGrid
    points: np.ndarray
    martingale_increments: np.ndarray
    manifold: ManifoldModel
    stopped_at: np.ndarray
    frames: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def batch_shape(self) -> tuple:
        return self.points.shape[1:-1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def alive(self, k: int) -> np.ndarray:
        """Mask of paths whose point ``k`` was produced by a valid step."""
        return (self.stopped_at == NOT_STOPPED) | (k <= self.stopped_at)

    @property
    def ever_stopped(self) -> np.ndarray:
        return self.stopped_at != NOT_STOPPED

    def at(self, t: float) -> np.ndarray:
        return self.points[self.grid.index(t)]


def diffusion_step(m: ManifoldModel, t, x, dt: float, xi):
    """One geodesic Euler-Maruyama step; ``xi`` is a standard Gaussian d-vector."""
    x = np.asarray(x, dtype=float)
    dm = np.einsum("...ij,...j->...i", m.frame(t, x), np.asarray(xi, float) * np.sqrt(dt))
    return _advance(m, t, x, dm, dt), dm


def _advance(m: ManifoldModel, t, x, dm, dt):
    return m.exp(t, x, dm + m.drift(t, x) * dt)


def _step_batch(m, t, x, dm, dt, alive):
    """Advance live paths; returns new points and the updated alive mask."""
    v = dm + m.drift(t, x) * dt
    ok = alive & m.exp_guard(t, x, v)
    y = m.exp(t, x, v)
    ok &= m.contains(y)
    y = np.where(ok[..., None], y, x)
    return y, ok


def simulate(m: ManifoldModel, x0, grid: TimeGrid, noise: NoisePath,
             keep_frames: bool = True) -> Trajectory:
    """Simulate a batch of L(t)-diffusions started at ``x0``.

    ``x0`` broadcasts against the noise batch shape.
    """
    if noise.grid != grid:
        raise ValueError("noise was sampled on a different grid")
    if noise.dim != m.dim:
        raise ValueError("noise dimension does not match the manifold")
    batch = noise.batch_shape
    x = np.broadcast_to(np.asarray(x0, dtype=float), batch + (m.dim,)).copy()
    if not np.all(m.contains(x)):
        raise InvalidStart(f"start point outside the chart domain of {m.name}")
    n = grid.n_steps
    points = np.empty((n + 1,) + x.shape)
    points[0] = x
    dms = np.zeros((n,) + x.shape)
    frames = np.zeros((n,) + x.shape + (m.dim,)) if keep_frames else None
    stopped = np.full(batch, NOT_STOPPED, dtype=np.int64)
    alive = np.ones(batch, dtype=bool)
    times = grid.times
    for k in range(n):
        t = times[k]
        f = m.frame(t, x)
        dm = np.einsum("...ij,...j->...i", f, noise.increments[k])
        dm = np.where(alive[..., None], dm, 0.0)
        x_new, ok = _step_batch(m, t, x, dm, grid.dt, alive)
        newly = alive & ~ok
        stopped[newly] = k
        dm = np.where(ok[..., None], dm, 0.0)
        alive = ok
        if keep_frames:
            frames[k] = f
        dms[k] = dm
        x = x_new
        points[k + 1] = x
    return Trajectory(grid, points, dms, m, stopped, frames,
                      meta={"seed": noise.seed, "stream_id": noise.stream_id})


# -- serialisation --------------------------------------------------------------


def trajectory_to_csv(traj: Trajectory) -> str:
    """Long-format CSV: path, step, t, x0..x{d-1}, stopped."""
    pts = traj.points.reshape(traj.points.shape[0], -1, traj.points.shape[-1])
    stop = traj.stopped_at.reshape(-1)
    d = pts.shape[-1]
    buf = io.StringIO()
    buf.write(",".join(["path", "step", "t"] + [f"x{i}" for i in range(d)] + ["stopped"]) + "\n")
    times = traj.grid.times
    for p in range(pts.shape[1]):
        for k in range(pts.shape[0]):
            flag = int(stop[p] != NOT_STOPPED and k > stop[p])
            coords = ",".join(repr(float(c)) for c in pts[k, p])
            buf.write(f"{p},{k},{float(times[k])!r},{coords},{flag}\n")
    return buf.getvalue()


def save_trajectory(traj: Trajectory, path) -> None:
    arrays = {
        "grid": np.array([traj.grid.t0, traj.grid.t_end, traj.grid.n_steps], dtype=float),
        "points": traj.points,
        "martingale_increments": traj.martingale_increments,
        "stopped_at": traj.stopped_at,
    }
    if traj.frames is not None:
        arrays["frames"] = traj.frames
    np.savez(path, **arrays)


def load_trajectory(path, manifold: ManifoldModel) -> Trajectory:
    with np.load(path) as z:
        t0, t_end, n = z["grid"]
        frames = z["frames"] if "frames" in z.files else None
        return Trajectory(TimeGrid(float(t0), float(t_end), int(n)), z["points"],
                          z["martingale_increments"], manifold, z["stopped_at"], frames)
