"""Chart-level Riemannian geometry with a time-dependent metric.

Every method of :class:`ManifoldModel` is vectorised: points have shape
``(..., d)``, metrics ``(..., d, d)`` and Christoffel arrays ``(..., d, d, d)``
indexed ``[i, j, k]`` for the symbol with upper index ``i``.  The time argument
is a scalar or anything broadcastable to the batch shape.

The methods never raise on bad input; they return NaN or out-of-domain
coordinates and leave the decision to the caller.  The module-level functions
(:func:`metric_at`, :func:`exp_map`, ...) are the checked entry points and
raise :class:`DomainError`, :class:`StepTooLarge` or :class:`CutLocusError`.
"""
from __future__ import annotations

import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CutLocusError, DomainError, StepTooLarge

FD_STEP = 1e-4

DriftField = Callable[[object, np.ndarray], np.ndarray]


def _tb(t, x: np.ndarray) -> np.ndarray:
    """Broadcast a time argument against the batch shape of ``x``."""
    return np.broadcast_to(np.asarray(t, dtype=float), np.shape(x)[:-1])


def _solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched ``a^{-1} b`` for matrix ``b``."""
    return np.linalg.solve(a, b)


def _solve_vec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.linalg.solve(a, v[..., None])[..., 0]


class ManifoldModel(ABC):
    """A single-chart Riemannian manifold ``(M, g(t))`` with drift ``Z(t)``.

    Subclasses provide :meth:`metric` and :meth:`contains`; everything else has
    a generic implementation (finite differences for the connection and
    curvature, RK4 and Newton shooting for geodesics) that closed-form
    instances override.
    """

    dim: int
    name: str = "manifold"
    time_dependent: bool = False
    has_closed_form_geodesics: bool = False
    fd_step: float = FD_STEP
    #: lower Bakry-Emery type constant k with Ric - g' >= k g (drift ignored)
    curvature_k: float = 0.0

    def __init__(self, drift: Optional[DriftField] = None):
        self._drift = drift

    # -- construction helpers ------------------------------------------------

    def with_drift(self, drift: Optional[DriftField]) -> "ManifoldModel":
        other = copy.copy(self)
        other._drift = drift
        return other

    @property
    def has_drift(self) -> bool:
        return self._drift is not None

    def describe(self) -> dict:
        return {"name": self.name, "dim": self.dim}

    # -- metric --------------------------------------------------------------

    @abstractmethod
    def metric(self, t, x: np.ndarray) -> np.ndarray:
        """g(t, x) as a ``(..., d, d)`` array."""

    @abstractmethod
    def contains(self, x: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the chart domain."""

    def metric_dt(self, t, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.time_dependent:
            return np.zeros(x.shape + (self.dim,))
        h = 1e-5
        tt = _tb(t, x)
        return (self.metric(tt + h, x) - self.metric(tt - h, x)) / (2 * h)

    def drift(self, t, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._drift is None:
            return np.zeros_like(x)
        return np.broadcast_to(np.asarray(self._drift(t, x), dtype=float), x.shape)

    def inner(self, t, x, v, w) -> np.ndarray:
        g = self.metric(t, x)
        return np.einsum("...i,...ij,...j->...", v, g, w)

    def norm(self, t, x, v) -> np.ndarray:
        return np.sqrt(np.maximum(self.inner(t, x, v, v), 0.0))

    def frame(self, t, x: np.ndarray) -> np.ndarray:
        """g(t)-orthonormal frame from Gram-Schmidt on the coordinate basis.

        With ``g = L L^T`` (Cholesky) the frame is ``F = L^{-T}``, which is
        upper triangular and satisfies ``F^T g F = I``.
        """
        g = self.metric(t, x)
        lower = np.linalg.cholesky(g)
        eye = np.broadcast_to(np.eye(self.dim), g.shape)
        return np.swapaxes(np.linalg.solve(lower, eye), -1, -2)

    # -- connection and curvature --------------------------------------------

    def _metric_gradient(self, t, x: np.ndarray, h: float) -> np.ndarray:
        """``dg[..., a, i, j] = d_a g_ij`` by central differences."""
        x = np.asarray(x, dtype=float)
        tt = _tb(t, x)
        out = np.empty(x.shape[:-1] + (self.dim,) * 3)
        for a in range(self.dim):
            e = np.zeros(self.dim)
            e[a] = h
            out[..., a, :, :] = (self.metric(tt, x + e) - self.metric(tt, x - e)) / (2 * h)
        return out

    def christoffel_fd(self, t, x: np.ndarray, h: Optional[float] = None) -> np.ndarray:
        h = self.fd_step if h is None else h
        dg = self._metric_gradient(t, x, h)
        lowered = 0.5 * (
            np.einsum("...jlk->...ljk", dg)
            + np.einsum("...klj->...ljk", dg)
            - dg
        )
        ginv = np.linalg.inv(self.metric(t, x))
        return np.einsum("...il,...ljk->...ijk", ginv, lowered)

    def christoffel(self, t, x: np.ndarray) -> np.ndarray:
        return self.christoffel_fd(t, x)

    def ricci_fd(self, t, x: np.ndarray, h: Optional[float] = None) -> np.ndarray:
        """Ricci tensor from finite differences of finite-difference Christoffels."""
        h = self.fd_step if h is None else h
        x = np.asarray(x, dtype=float)
        tt = _tb(t, x)
        gam = self.christoffel_fd(tt, x, h)
        dgam = np.empty(x.shape[:-1] + (self.dim,) * 4)
        for a in range(self.dim):
            e = np.zeros(self.dim)
            e[a] = h
            dgam[..., a, :, :, :] = (
                self.christoffel_fd(tt, x + e, h) - self.christoffel_fd(tt, x - e, h)
            ) / (2 * h)
        return (
            np.einsum("...iijk->...jk", dgam)
            - np.einsum("...kiij->...jk", dgam)
            + np.einsum("...iip,...pjk->...jk", gam, gam)
            - np.einsum("...ikp,...pij->...jk", gam, gam)
        )

    def ricci(self, t, x: np.ndarray) -> np.ndarray:
        return self.ricci_fd(t, x)

    def ricci_sharp(self, t, x: np.ndarray) -> np.ndarray:
        """The endomorphism ``g^{-1} Ric``."""
        return _solve(self.metric(t, x), self.ricci(t, x))

    def metric_dt_sharp(self, t, x: np.ndarray) -> np.ndarray:
        return _solve(self.metric(t, x), self.metric_dt(t, x))

    def drift_covariant_derivative(self, t, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        """``nabla_a Z`` at ``x``; ``a`` broadcasts against ``x``."""
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        if self._drift is None:
            return np.zeros(np.broadcast_shapes(x.shape, a.shape))
        h = self.fd_step
        tt = _tb(t, x)
        jac = np.empty(x.shape + (self.dim,))  # jac[..., i, j] = d_j Z^i
        for j in range(self.dim):
            e = np.zeros(self.dim)
            e[j] = h
            jac[..., :, j] = (self.drift(tt, x + e) - self.drift(tt, x - e)) / (2 * h)
        z = self.drift(tt, x)
        gam = self.christoffel(tt, x)
        conn = np.einsum("...ijk,...k->...ij", gam, z)  # Gamma^i_jk Z^k
        return np.einsum("...ij,...j->...i", jac + conn, a)

    # -- geodesics (generic fallbacks) ---------------------------------------

    #: substeps of the RK4 geodesic integrator over unit parameter time
    ode_substeps: int = 64

    def injectivity_bound(self, t) -> float:
        return np.inf

    def _geodesic_rhs(self, t, x, v, w=None):
        gam = self.christoffel(t, x)
        acc = -np.einsum("...ijk,...j,...k->...i", gam, v, v)
        if w is None:
            return v, acc, None
        dw = -np.einsum("...ijk,...j,...k->...i", gam, v, w)
        return v, acc, dw

    def _integrate_geodesic(self, t, x, v, w=None, n: Optional[int] = None):
        n = self.ode_substeps if n is None else n
        h = 1.0 / n
        x = np.array(x, dtype=float)
        v = np.array(v, dtype=float)
        w = None if w is None else np.array(w, dtype=float)
        for _ in range(n):
            k1 = self._geodesic_rhs(t, x, v, w)
            k2 = self._geodesic_rhs(t, x + 0.5 * h * k1[0], v + 0.5 * h * k1[1],
                                    None if w is None else w + 0.5 * h * k1[2])
            k3 = self._geodesic_rhs(t, x + 0.5 * h * k2[0], v + 0.5 * h * k2[1],
                                    None if w is None else w + 0.5 * h * k2[2])
            k4 = self._geodesic_rhs(t, x + h * k3[0], v + h * k3[1],
                                    None if w is None else w + h * k3[2])
            x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
            v = v + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            if w is not None:
                w = w + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        return x, v, w

    def exp(self, t, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
        return self._integrate_geodesic(t, x, v)[0]

    def log(self, t, x: np.ndarray, y: np.ndarray, tol: float = 1e-12,
            max_iter: int = 50) -> np.ndarray:
        """Shooting: damped Newton on ``exp(x, v) = y`` with an FD Jacobian."""
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        v = y - x
        h = 1e-7
        eye = np.eye(self.dim)
        for _ in range(max_iter):
            r = self.exp(t, x, v) - y
            if np.all(np.abs(r) <= tol * (1 + np.abs(y))):
                break
            jac = np.empty(x.shape + (self.dim,))
            for j in range(self.dim):
                jac[..., :, j] = (self.exp(t, x, v + h * eye[j]) - self.exp(t, x, v - h * eye[j])) / (2 * h)
            step = _solve_vec(jac, r)
            v_new = v - step
            r_new = self.exp(t, x, v_new) - y
            # halve the step where the residual does not decrease
            worse = np.linalg.norm(r_new, axis=-1) > np.linalg.norm(r, axis=-1)
            if np.any(worse):
                v_new = np.where(worse[..., None], v - 0.5 * step, v_new)
            v = v_new
        return v

    def transport(self, t, x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Parallel transport of ``w`` along the minimal geodesic x -> y."""
        x, y, w = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(w, float))
        v = self.log(t, x, y)
        return self._integrate_geodesic(t, x, v, w)[2]

    def transport_guarded(self, t, x, y, w):
        """``(transport(x, y, w), injectivity_guard(x, y))`` in one call."""
        return self.transport(t, x, y, w), self.injectivity_guard(t, x, y)

    def distance(self, t, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return self.norm(t, x, self.log(t, x, y))

    def injectivity_guard(self, t, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        d = self.distance(t, x, y)
        return np.isfinite(d) & (d < self.injectivity_bound(t))

    def exp_guard(self, t, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        n = self.norm(t, x, v)
        return np.isfinite(n) & (n < self.injectivity_bound(t))


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------


class Euclidean(ManifoldModel):
    name = "euclidean"
    has_closed_form_geodesics = True
    curvature_k = 0.0

    def __init__(self, dim: int = 2, drift: Optional[DriftField] = None):
        super().__init__(drift)
        self.dim = int(dim)

    def describe(self):
        return {"name": self.name, "dim": self.dim}

    def metric(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape + (self.dim,)).copy()

    def contains(self, x):
        return np.all(np.isfinite(x), axis=-1)

    def frame(self, t, x):
        return self.metric(t, x)

    def christoffel(self, t, x):
        return np.zeros(np.shape(x) + (self.dim, self.dim))

    def ricci(self, t, x):
        return np.zeros(np.shape(x) + (self.dim,))

    def ricci_sharp(self, t, x):
        return self.ricci(t, x)

    def exp(self, t, x, v):
        return np.asarray(x, float) + np.asarray(v, float)

    def log(self, t, x, y, **kw):
        return np.asarray(y, float) - np.asarray(x, float)

    def transport(self, t, x, y, w):
        x, y, w = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(w, float))
        return w.copy()

    def distance(self, t, x, y):
        return np.linalg.norm(np.asarray(y, float) - np.asarray(x, float), axis=-1)


class Sphere(ManifoldModel):
    """Round 2-sphere of radius r in the colatitude/longitude chart.

    The chart excludes polar caps of angular radius ``margin``.  Longitude is
    not wrapped: images of geodesics are unwrapped next to the start point, so
    continuous paths have continuous chart coordinates.
    """

    name = "sphere"
    dim = 2
    has_closed_form_geodesics = True

    def __init__(self, radius: float = 1.0, margin: float = 0.05, guard_margin: float = 0.1,
                 drift: Optional[DriftField] = None):
        super().__init__(drift)
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.radius = float(radius)
        self.margin = float(margin)
        self.guard_margin = float(guard_margin)
        self.curvature_k = 1.0 / self.radius**2

    def describe(self):
        return {"name": self.name, "radius": self.radius}

    def radius_at(self, t):
        return np.asarray(self.radius, dtype=float)

    def _scale(self, t, x):
        """r(t)^2 broadcast to the batch shape."""
        return _tb(self.radius_at(t) ** 2, x)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 0]
        return np.isfinite(th) & np.isfinite(x[..., 1]) & (th >= self.margin) & (th <= np.pi - self.margin)

    def _round(self, x):
        """diag(1, sin^2 theta): the unit round metric in the chart."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = np.sin(x[..., 0]) ** 2
        return out

    def metric(self, t, x):
        return self._scale(t, x)[..., None, None] * self._round(x)

    def frame(self, t, x):
        x = np.asarray(x, dtype=float)
        r = np.sqrt(self._scale(t, x))
        out = np.zeros(x.shape + (2,))
        out[..., 0, 0] = 1.0 / r
        out[..., 1, 1] = 1.0 / (r * np.sin(x[..., 0]))
        return out

    def christoffel(self, t, x):
        x = np.asarray(x, dtype=float)
        th = x[..., 0]
        out = np.zeros(x.shape + (2, 2))
        out[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
        cot = np.cos(th) / np.sin(th)
        out[..., 1, 0, 1] = cot
        out[..., 1, 1, 0] = cot
        return out

    def ricci(self, t, x):
        # Ric = (n-1) K g = g / r^2 = unit round metric, for any radius
        return self._round(x)

    def ricci_sharp(self, t, x):
        x = np.asarray(x, dtype=float)
        s = self._scale(t, x)
        return np.broadcast_to(np.eye(2), x.shape + (2,)) / s[..., None, None]

    def injectivity_bound(self, t):
        return self.radius_at(t) * (np.pi - self.guard_margin)

    # -- embedding in R^3 (unit sphere) ----------------------------------------
    # Vectors in R^3 are kept as tuples of three arrays: the batches are small
    # and per-component ufuncs avoid stacking overhead in the inner loops.

    @staticmethod
    def _frame3(x):
        """Unit-sphere point and unit chart directions e_theta, e_phi in R^3."""
        th, ph = x[..., 0], x[..., 1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        p = (st * cp, st * sp, ct)
        e_th = (ct * cp, ct * sp, -st)
        e_ph = (-sp, cp, 0.0)
        return st, p, e_th, e_ph

    @staticmethod
    def embed(x):
        x = np.asarray(x, dtype=float)
        th, ph = x[..., 0], x[..., 1]
        st = np.sin(th)
        return np.stack([st * np.cos(ph), st * np.sin(ph), np.cos(th)], axis=-1)

    def to_ambient(self, x, v):
        """Chart components at x -> tangent vector of the unit sphere in R^3."""
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        st, _, e_th, e_ph = self._frame3(x)
        b = v[..., 1] * st
        return np.stack([v[..., 0] * e_th[i] + b * e_ph[i] for i in range(3)], axis=-1)

    def from_ambient(self, x, vec):
        x = np.asarray(x, dtype=float)
        st, _, e_th, e_ph = self._frame3(x)
        return self._components(st, e_th, e_ph, tuple(vec[..., i] for i in range(3)))

    @staticmethod
    def _components(st, e_th, e_ph, vec):
        a = vec[0] * e_th[0] + vec[1] * e_th[1] + vec[2] * e_th[2]
        b = (vec[0] * e_ph[0] + vec[1] * e_ph[1]) / st
        return np.stack([a, b], axis=-1)

    @staticmethod
    def chart(p, phi_ref=None):
        p = tuple(p[..., i] for i in range(3)) if isinstance(p, np.ndarray) else p
        th = np.arctan2(np.hypot(p[0], p[1]), p[2])
        ph = np.arctan2(p[1], p[0])
        if phi_ref is not None:
            ph = phi_ref + np.mod(ph - phi_ref + np.pi, 2 * np.pi) - np.pi
        return np.stack([th, ph], axis=-1)

    @staticmethod
    def _angle_dir(p, q):
        """Angle between unit vectors p, q and the unit initial direction at p."""
        c = p[0] * q[0] + p[1] * q[1] + p[2] * q[2]
        cr = (p[1] * q[2] - p[2] * q[1], p[2] * q[0] - p[0] * q[2], p[0] * q[1] - p[1] * q[0])
        a = np.arctan2(np.sqrt(cr[0] ** 2 + cr[1] ** 2 + cr[2] ** 2), c)
        d = tuple(q[i] - c * p[i] for i in range(3))
        s = np.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
        inv = np.where(s > 0, 1.0 / np.where(s > 0, s, 1.0), 0.0)
        return a, tuple(di * inv for di in d)

    def exp(self, t, x, v):
        x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
        st, p, e_th, e_ph = self._frame3(x)
        va, vb = v[..., 0], v[..., 1] * st
        a = np.sqrt(va * va + vb * vb)
        ca, sa = np.cos(a), np.sinc(a / np.pi)
        q = tuple(ca * p[i] + sa * (va * e_th[i] + vb * e_ph[i]) for i in range(3))
        return self.chart(q, phi_ref=x[..., 1])

    def log(self, t, x, y, **kw):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        st, p, e_th, e_ph = self._frame3(x)
        a, u = self._angle_dir(p, self._frame3(y)[1])
        out = self._components(st, e_th, e_ph, tuple(a * ui for ui in u))
        same = np.all(x == y, axis=-1)
        return np.where(same[..., None], 0.0, out)

    def distance(self, t, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        a, _ = self._angle_dir(self._frame3(x)[1], self._frame3(y)[1])
        return np.sqrt(self._scale(t, x)) * a

    def transport_guarded(self, t, x, y, w):
        x, y, w = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(w, float))
        st, p, e_th, e_ph = self._frame3(x)
        st_y, q, e_th_y, e_ph_y = self._frame3(y)
        a, u = self._angle_dir(p, q)
        wa, wb = w[..., 0], w[..., 1] * st
        vec = tuple(wa * e_th[i] + wb * e_ph[i] for i in range(3))
        wu = vec[0] * u[0] + vec[1] * u[1] + vec[2] * u[2]
        ca, sa = np.cos(a) - 1.0, np.sin(a)
        moved = tuple(vec[i] + wu * (ca * u[i] - sa * p[i]) for i in range(3))
        out = self._components(st_y, e_th_y, e_ph_y, moved)
        same = np.all(x == y, axis=-1)
        return np.where(same[..., None], w, out), a < np.pi - self.guard_margin

    def transport(self, t, x, y, w):
        return self.transport_guarded(t, x, y, w)[0]

    def injectivity_guard(self, t, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        a, _ = self._angle_dir(self._frame3(x)[1], self._frame3(y)[1])
        return a < np.pi - self.guard_margin

    def exp_guard(self, t, x, v):
        x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
        a = np.hypot(v[..., 0], v[..., 1] * np.sin(x[..., 0]))
        return np.isfinite(a) & (a < np.pi - self.guard_margin)


class BackwardRicciSphere(Sphere):
    """2-sphere with g(t) = (r0^2 + t) g_round, the solution of g' = Ric.

    Ricci curvature is scale invariant, so Ric(g(t)) = g_round = g'(t).
    """

    name = "brf_sphere"
    time_dependent = True

    def __init__(self, initial_radius: float = 1.0, margin: float = 0.05, guard_margin: float = 0.1,
                 drift: Optional[DriftField] = None):
        super().__init__(initial_radius, margin, guard_margin, drift)
        self.initial_radius = self.radius
        # Ric - g' = 0
        self.curvature_k = 0.0

    def describe(self):
        return {"name": self.name, "initial_radius": self.initial_radius}

    def radius_at(self, t):
        return np.sqrt(self.initial_radius**2 + np.asarray(t, dtype=float))

    def metric_dt(self, t, x):
        return self._round(x)

    def metric_dt_sharp(self, t, x):
        return self.ricci_sharp(t, x)


class HyperbolicPlane(ManifoldModel):
    """Hyperbolic plane of constant curvature ``kappa < 0``.

    Chart: spatial coordinates of the hyperboloid ``<P, P>_L = -R^2`` in
    Minkowski space, ``R = 1/sqrt(-kappa)``.  The metric is
    ``g = I - x x^T / (R^2 + |x|^2)`` and the chart covers the whole plane; the
    domain is the box ``|x_i| <= box``.
    """

    name = "hyperbolic"
    dim = 2
    has_closed_form_geodesics = True

    def __init__(self, curvature: float = -1.0, box: float = 10.0,
                 drift: Optional[DriftField] = None):
        super().__init__(drift)
        if curvature >= 0:
            raise ValueError("curvature must be negative")
        self.curvature = float(curvature)
        self.R = 1.0 / np.sqrt(-self.curvature)
        self.box = float(box)
        self.curvature_k = self.curvature

    def describe(self):
        return {"name": self.name, "curvature": self.curvature}

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all(np.isfinite(x) & (np.abs(x) <= self.box), axis=-1)

    def metric(self, t, x):
        x = np.asarray(x, dtype=float)
        denom = self.R**2 + np.sum(x * x, axis=-1)
        return np.eye(2) - x[..., :, None] * x[..., None, :] / denom[..., None, None]

    def christoffel(self, t, x):
        # graph of f = sqrt(R^2 + |x|^2) in Minkowski space: Gamma^i_jk = -x^i g_jk / R^2
        x = np.asarray(x, dtype=float)
        return -x[..., :, None, None] * self.metric(t, x)[..., None, :, :] / self.R**2

    def ricci(self, t, x):
        return self.curvature * self.metric(t, x)

    def ricci_sharp(self, t, x):
        x = np.asarray(x, dtype=float)
        return self.curvature * np.broadcast_to(np.eye(2), x.shape + (2,)).copy()

    @staticmethod
    def _mink(a, b):
        return -a[..., 0] * b[..., 0] + np.sum(a[..., 1:] * b[..., 1:], axis=-1)

    def _lift(self, x):
        y = np.asarray(x, dtype=float) / self.R
        return np.concatenate([np.sqrt(1 + np.sum(y * y, axis=-1))[..., None], y], axis=-1)

    def _vec(self, x, v):
        """Chart components -> ambient tangent of the unit hyperboloid at x/R."""
        y = np.asarray(x, dtype=float) / self.R
        v = np.asarray(v, dtype=float) / self.R
        p0 = np.sqrt(1 + np.sum(y * y, axis=-1))
        return np.concatenate([(np.sum(y * v, axis=-1) / p0)[..., None], v], axis=-1)

    def _angle_dir(self, x, y):
        p, q = self._lift(x), self._lift(y)
        c = -self._mink(p, q)
        diff = p - q
        a = 2.0 * np.arcsinh(0.5 * np.sqrt(np.maximum(self._mink(diff, diff), 0.0)))
        d = q - c[..., None] * p
        s = np.sqrt(np.maximum(self._mink(d, d), 0.0))
        safe = np.where(s > 0, s, 1.0)
        u = np.where((s > 0)[..., None], d / safe[..., None], 0.0)
        return p, a, u

    def exp(self, t, x, v):
        x, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(v, float))
        p = self._lift(x)
        vec = self._vec(x, v)
        a = np.sqrt(np.maximum(self._mink(vec, vec), 0.0))
        shc = np.where(a > 0, np.sinh(a) / np.where(a > 0, a, 1.0), 1.0)
        q = np.cosh(a)[..., None] * p + shc[..., None] * vec
        return self.R * q[..., 1:]

    def log(self, t, x, y, **kw):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        p, a, u = self._angle_dir(x, y)
        out = self.R * a[..., None] * u[..., 1:]
        same = np.all(x == y, axis=-1)
        return np.where(same[..., None], 0.0, out)

    def distance(self, t, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        return self.R * self._angle_dir(x, y)[1]

    def transport(self, t, x, y, w):
        x, y, w = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(w, float))
        p, a, u = self._angle_dir(x, y)
        vec = self._vec(x, w)
        wu = self._mink(vec, u)
        moved = vec + wu[..., None] * ((np.cosh(a) - 1.0)[..., None] * u + np.sinh(a)[..., None] * p)
        out = self.R * moved[..., 1:]
        same = np.all(x == y, axis=-1)
        return np.where(same[..., None], w, out)

    def injectivity_guard(self, t, x, y):
        d = self.distance(t, x, y)
        return np.isfinite(d)


class ChartManifold(ManifoldModel):
    """Manifold given only by a metric function on a coordinate box.

    Uses the generic finite-difference connection and the RK4/shooting
    geodesic routines; mainly a cross-check for the closed-form instances.
    """

    name = "chart"

    def __init__(self, metric_fn, dim: int, lower=None, upper=None, metric_dt_fn=None,
                 time_dependent: bool = False, injectivity: float = np.inf,
                 drift: Optional[DriftField] = None):
        super().__init__(drift)
        self.dim = int(dim)
        self._metric_fn = metric_fn
        self._metric_dt_fn = metric_dt_fn
        self.time_dependent = time_dependent
        self.lower = -np.inf * np.ones(dim) if lower is None else np.asarray(lower, float)
        self.upper = np.inf * np.ones(dim) if upper is None else np.asarray(upper, float)
        self._inj = injectivity

    def metric(self, t, x):
        return self._metric_fn(t, np.asarray(x, dtype=float))

    def metric_dt(self, t, x):
        if self._metric_dt_fn is not None:
            return self._metric_dt_fn(t, np.asarray(x, dtype=float))
        return super().metric_dt(t, x)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all(np.isfinite(x) & (x >= self.lower) & (x <= self.upper), axis=-1)

    def injectivity_bound(self, t):
        return self._inj


# ---------------------------------------------------------------------------
# drifts
# ---------------------------------------------------------------------------


def gradient_drift(model: ManifoldModel, grad_v: Callable[[np.ndarray], np.ndarray]) -> DriftField:
    """Z = grad_g V = g^{-1} dV for a chart differential ``grad_v``."""

    def field(t, x):
        return _solve_vec(model.metric(t, x), grad_v(np.asarray(x, dtype=float)))

    return field


def constant_drift(coefficients) -> DriftField:
    c = np.asarray(coefficients, dtype=float)

    def field(t, x):
        return np.broadcast_to(c, np.shape(x))

    return field


POTENTIALS = {
    # V(x) = c . x
    "linear": lambda params: (lambda x: np.broadcast_to(np.asarray(params["coefficients"], float), x.shape)),
    # V(x) = c/2 |x - center|^2
    "quadratic": lambda params: (
        lambda x: params.get("strength", 1.0) * (x - np.asarray(params.get("center", 0.0), float))
    ),
}


def build_manifold(name: str, params: Optional[dict] = None) -> ManifoldModel:
    params = dict(params or {})
    if name == "euclidean":
        return Euclidean(dim=params.get("dim", 2))
    if name == "sphere":
        return Sphere(radius=params.get("radius", 1.0))
    if name == "hyperbolic":
        return HyperbolicPlane(curvature=params.get("curvature", -1.0))
    if name == "brf_sphere":
        return BackwardRicciSphere(initial_radius=params.get("initial_radius", 1.0))
    raise ValueError(f"unknown manifold {name!r}")


MANIFOLD_NAMES = ("euclidean", "sphere", "hyperbolic", "brf_sphere")


# ---------------------------------------------------------------------------
# checked entry points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    components: np.ndarray
    time: float = 0.0

    def norm(self, m: ManifoldModel) -> np.ndarray:
        return m.norm(self.time, self.base, self.components)


def _require_domain(m: ManifoldModel, x, what="point"):
    if not np.all(m.contains(x)):
        raise DomainError(f"{what} outside chart domain of {m.name}: {np.asarray(x)!r}")


def metric_at(m: ManifoldModel, t, x) -> np.ndarray:
    _require_domain(m, x)
    return m.metric(t, x)


def _require_stencil(m: ManifoldModel, x):
    x = np.asarray(x, dtype=float)
    h = 2 * m.fd_step
    for a in range(m.dim):
        e = np.zeros(m.dim)
        e[a] = h
        if not (np.all(m.contains(x + e)) and np.all(m.contains(x - e))):
            raise DomainError(f"finite-difference stencil leaves the chart at {x!r}")


def christoffel_at(m: ManifoldModel, t, x) -> np.ndarray:
    _require_domain(m, x)
    _require_stencil(m, x)
    return m.christoffel(t, x)


def ricci_at(m: ManifoldModel, t, x) -> np.ndarray:
    _require_domain(m, x)
    _require_stencil(m, x)
    return m.ricci(t, x)


def exp_map(m: ManifoldModel, t, x, v) -> np.ndarray:
    _require_domain(m, x)
    if not np.all(m.exp_guard(t, x, v)):
        raise StepTooLarge(f"tangent vector too long for a certified geodesic: {np.asarray(v)!r}")
    y = m.exp(t, x, v)
    _require_domain(m, y, "geodesic end point")
    return y


def log_map(m: ManifoldModel, t, x, y) -> np.ndarray:
    _require_domain(m, x)
    _require_domain(m, y)
    if not np.all(m.injectivity_guard(t, x, y)):
        raise CutLocusError("no certified unique minimal geodesic between the points")
    return m.log(t, x, y)


def distance_at(m: ManifoldModel, t, x, y) -> np.ndarray:
    _require_domain(m, x)
    _require_domain(m, y)
    if not np.all(m.injectivity_guard(t, x, y)):
        raise CutLocusError("no certified unique minimal geodesic between the points")
    return m.distance(t, x, y)


def geodesic_transport(m: ManifoldModel, t, x, y, w) -> np.ndarray:
    _require_domain(m, x)
    _require_domain(m, y)
    if not np.all(m.injectivity_guard(t, x, y)):
        raise CutLocusError("no certified unique minimal geodesic between the points")
    return m.transport(t, x, y, w)


def orthonormal_frame(m: ManifoldModel, t, x) -> np.ndarray:
    _require_domain(m, x)
    return m.frame(t, x)
