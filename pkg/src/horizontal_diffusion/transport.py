"""Parallel and damped parallel translation along sampled diffusion paths.

Both operators are stored as matrices ``A_k`` (chart components) mapping
``T_{X_0}M`` to ``T_{X_{t_k}}M``.  Each step first moves the columns by
Levi-Civita transport along the step's minimal geodesic and then applies the
zero-order correction at the arrival point and time:

* parallel:  ``A <- A - dt/2 g^{-1} g' A``
* damped:    ``A <- A + dt (nabla_A Z - 1/2 g^{-1} Ric A)``
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .sde import Trajectory

PARALLEL = "parallel"
DAMPED = "damped"


@dataclass
class TransportOperator:
    traj: Trajectory
    kind: str
    maps: np.ndarray  # (n_steps + 1, *batch, d, d)

    def apply(self, k: int, v) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.maps[k], np.asarray(v, dtype=float))

    def orthonormal_maps(self) -> np.ndarray:
        """Matrices of the maps in g(t_k)- and g(0)-orthonormal frames."""
        m = self.traj.manifold
        times = self.traj.grid.times
        f0 = m.frame(times[0], self.traj.points[0])
        out = np.empty_like(self.maps)
        for k in range(self.maps.shape[0]):
            fk = m.frame(times[k], self.traj.points[k])
            out[k] = np.linalg.solve(fk, self.maps[k] @ f0)
        return out


def _move_columns(m, t, x, y, a):
    # columns of a are tangent vectors at x; transport each to y
    cols = np.swapaxes(a, -1, -2)
    moved = m.transport(t, x[..., None, :], y[..., None, :], cols)
    return np.swapaxes(moved, -1, -2)


def _integrate(traj: Trajectory, kind: str) -> TransportOperator:
    m = traj.manifold
    grid = traj.grid
    times = grid.times
    dt = grid.dt
    pts = traj.points
    d = m.dim
    batch = traj.batch_shape
    a = np.broadcast_to(np.eye(d), batch + (d, d)).copy()
    maps = np.empty((grid.n_steps + 1,) + a.shape)
    maps[0] = a
    for k in range(grid.n_steps):
        x, y = pts[k], pts[k + 1]
        t_new = times[k + 1]
        moved = _move_columns(m, times[k], x, y, a)
        if kind == PARALLEL:
            corr = -0.5 * m.metric_dt_sharp(t_new, y) @ moved
        else:
            cols = np.swapaxes(moved, -1, -2)
            nabla_z = np.swapaxes(m.drift_covariant_derivative(t_new, y[..., None, :], cols), -1, -2)
            corr = nabla_z - 0.5 * m.ricci_sharp(t_new, y) @ moved
        updated = moved + dt * corr
        live = traj.alive(k + 1)
        a = np.where(live[..., None, None], updated, a)
        maps[k + 1] = a
    return TransportOperator(traj, kind, maps)


def parallel_transport_path(traj: Trajectory) -> TransportOperator:
    """Time-dependent parallel transport P^t(X) solving D^t P = -1/2 g'^# P dt."""
    return _integrate(traj, PARALLEL)


def damped_transport_path(traj: Trajectory) -> TransportOperator:
    """Damped parallel translation W^t(X): D^t W = (nabla_W Z - 1/2 Ric^# W) dt."""
    return _integrate(traj, DAMPED)


def w_norm_profile(op: TransportOperator, probe) -> np.ndarray:
    """Series ``||A_k probe||_{g(t_k)}``, shape ``(n_steps + 1, *batch)``."""
    m = op.traj.manifold
    times = op.traj.grid.times
    probe = np.asarray(probe, dtype=float)
    out = np.empty(op.maps.shape[:-2])
    for k in range(op.maps.shape[0]):
        out[k] = m.norm(times[k], op.traj.points[k], op.apply(k, probe))
    return out


def isometry_defect(op: TransportOperator) -> np.ndarray:
    """Per time, max deviation of the singular values of the map from 1."""
    s = np.linalg.svd(op.orthonormal_maps(), compute_uv=False)
    return np.max(np.abs(s - 1.0), axis=-1)


def operator_norms(op: TransportOperator) -> np.ndarray:
    """Operator norm g(0) -> g(t_k) per time and path."""
    return np.linalg.svd(op.orthonormal_maps(), compute_uv=False)[..., 0]


def operator_gap(a: TransportOperator, b: TransportOperator) -> np.ndarray:
    """Operator norm of ``A_k - B_k`` between the g(0) and g(t_k) norms."""
    diff = TransportOperator(a.traj, "difference", a.maps - b.maps)
    return np.linalg.svd(diff.orthonormal_maps(), compute_uv=False)[..., 0]


def transport_report_csv(op: TransportOperator) -> str:
    """CSV of per-time operator norms and isometry defects (worst path)."""
    norms = operator_norms(op).reshape(op.maps.shape[0], -1)
    defect = isometry_defect(op).reshape(op.maps.shape[0], -1)
    buf = io.StringIO()
    buf.write("t,kind,norm_min,norm_mean,norm_max,isometry_defect_max\n")
    for k, t in enumerate(op.traj.grid.times):
        buf.write(f"{float(t)!r},{op.kind},{float(norms[k].min())!r},{float(norms[k].mean())!r},"
                  f"{float(norms[k].max())!r},{float(defect[k].max())!r}\n")
    return buf.getvalue()
