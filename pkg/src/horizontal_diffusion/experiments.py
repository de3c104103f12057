"""Configured verification scenarios behind the command-line subcommands.

Each ``run_*`` function takes a validated :class:`ExperimentConfig` and an
``emit(name, text)`` callback that receives finished data files in a fixed
order; it returns a list of :class:`Check` results and a JSON-able summary.
Nothing here touches the file system.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, List, Optional

import numpy as np

from . import coupling as cp
from . import ot
from .config import ExperimentConfig, ManifoldSpec
from .geometry import (POTENTIALS, BackwardRicciSphere, Euclidean, HyperbolicPlane, ManifoldModel,
                       Sphere, build_manifold, constant_drift, gradient_drift)
from .sde import NoisePath, TimeGrid, sample_noise_batch, simulate, trajectory_to_csv, _generator
from .transport import (damped_transport_path, isometry_defect, operator_gap,
                        parallel_transport_path, transport_report_csv, w_norm_profile)

Emit = Callable[[str, str], None]

# stream ids at or above this value are reserved for non-path randomness
AUX_STREAM = 2**40


@dataclass
class Check:
    name: str
    value: float
    threshold: object
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.6g} vs {self.threshold} {self.detail}".rstrip()


def _check(name, value, threshold, passed, detail="") -> Check:
    return Check(name, float(value), threshold, bool(passed), detail)


def parallel_map(fn, items, threads: int = 1) -> list:
    """Order-preserving map, optionally on a bounded thread pool."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# -- building blocks -------------------------------------------------------------------


def make_manifold(spec: ManifoldSpec, cfg: ExperimentConfig) -> ManifoldModel:
    m = build_manifold(spec.name, spec.params)
    gen = cfg.generator
    if gen.kind == "gradient":
        return m.with_drift(gradient_drift(m, POTENTIALS[gen.potential](gen.params)))
    if gen.kind == "coefficients":
        if len(gen.coefficients) != m.dim:
            raise ValueError(f"generator.coefficients must have length {m.dim}")
        return m.with_drift(constant_drift(gen.coefficients))
    return m


def default_start(m: ManifoldModel) -> np.ndarray:
    if isinstance(m, Sphere):
        return np.array([np.pi / 2, 0.0])
    return np.zeros(m.dim)


def start_point(m: ManifoldModel, given) -> np.ndarray:
    x = default_start(m) if given is None else np.asarray(given, dtype=float)
    if x.shape != (m.dim,):
        raise ValueError(f"start point must have {m.dim} coordinates")
    return x


def unit_direction(m: ManifoldModel, t, x, given) -> np.ndarray:
    v = np.ones(m.dim) if given is None else np.asarray(given, dtype=float)
    return v / m.norm(t, x, v)


def flat(m: ManifoldModel) -> bool:
    return isinstance(m, Euclidean)


def make_grid(cfg: ExperimentConfig) -> TimeGrid:
    return TimeGrid(0.0, cfg.grid.t_end, cfg.grid.n_steps)


def path_noise(cfg: ExperimentConfig, grid: TimeGrid, d: int, n_paths: Optional[int] = None) -> NoisePath:
    n = cfg.mc.n_paths if n_paths is None else n_paths
    return sample_noise_batch(cfg.seed, np.arange(n), grid, d)


def _fmt(v) -> str:
    return repr(float(v))


def _table(header, rows) -> str:
    out = [",".join(header)]
    for r in rows:
        out.append(",".join(v if isinstance(v, str) else _fmt(v) for v in r))
    return "\n".join(out) + "\n"


# -- simulate ---------------------------------------------------------------------------


def run_simulate(cfg: ExperimentConfig, emit: Emit):
    checks, summary = [], {}
    grid = make_grid(cfg)
    for spec in cfg.manifolds:
        m = make_manifold(spec, cfg)
        x0 = start_point(m, cfg.start)
        traj = simulate(m, x0, grid, path_noise(cfg, grid, m.dim), keep_frames=False)
        emit(f"trajectories_{spec.name}.csv", trajectory_to_csv(traj))
        ok = ~traj.ever_stopped
        sq = m.distance(grid.t_end, x0, traj.points[-1])[ok] ** 2
        stop_frac = float(np.mean(traj.ever_stopped))
        summary[spec.name] = {
            "n_paths": int(traj.stopped_at.size), "stopped_fraction": stop_frac,
            "mean_sq_displacement": float(np.mean(sq)) if sq.size else None,
            "brownian_reference": m.dim * grid.t_end,
        }
        if cfg.checks.max_stop_fraction is not None:
            checks.append(_check(f"{spec.name}.stopped_fraction", stop_frac, cfg.checks.max_stop_fraction,
                                 stop_frac <= cfg.checks.max_stop_fraction))
    return checks, summary


# -- transport --------------------------------------------------------------------------


def run_transport(cfg: ExperimentConfig, emit: Emit):
    checks, summary = [], {}
    grid = make_grid(cfg)
    ck = cfg.checks
    for spec in cfg.manifolds:
        m = make_manifold(spec, cfg)
        x0 = start_point(m, cfg.start)
        traj = simulate(m, x0, grid, path_noise(cfg, grid, m.dim), keep_frames=False)
        par = parallel_transport_path(traj)
        dam = damped_transport_path(traj)
        emit(f"parallel_{spec.name}.csv", transport_report_csv(par))
        emit(f"damped_{spec.name}.csv", transport_report_csv(dam))
        probe = unit_direction(m, 0.0, x0, None)
        live = ~traj.ever_stopped
        prof = w_norm_profile(dam, probe)[:, live]
        expect = np.exp(-m.curvature_k * grid.times / 2)[:, None]
        rel = np.abs(prof / expect - 1.0)
        absdev = np.abs(prof - expect)
        defect = isometry_defect(par)[:, live]
        gap = operator_gap(dam, par)[-1, live]
        rows = [(t, float(expect[k, 0]), prof[k].min(), prof[k].mean(), prof[k].max())
                for k, t in enumerate(grid.times)]
        emit(f"w_norm_{spec.name}.csv", _table(["t", "expected", "w_min", "w_mean", "w_max"], rows))
        summary[spec.name] = {
            "k": m.curvature_k, "live_paths": int(live.sum()),
            "w_norm_max_rel_dev": float(rel.max()), "w_norm_max_abs_dev": float(absdev.max()),
            "parallel_isometry_defect": float(defect.max()), "damped_parallel_gap": float(gap.max()),
        }
        if flat(m) and ck.flat_tol is not None:
            checks.append(_check(f"{spec.name}.w_norm_flat", absdev.max(), ck.flat_tol, absdev.max() <= ck.flat_tol))
        elif not flat(m) and ck.w_norm_rel_tol is not None:
            checks.append(_check(f"{spec.name}.w_norm_vs_exp(-kt/2)", rel.max(), ck.w_norm_rel_tol,
                                 rel.max() <= ck.w_norm_rel_tol))
        if ck.isometry_tol is not None:
            checks.append(_check(f"{spec.name}.parallel_isometry", defect.max(), ck.isometry_tol,
                                 defect.max() <= ck.isometry_tol))
        if ck.gap_tol is not None:
            checks.append(_check(f"{spec.name}.damped_parallel_gap", gap.max(), ck.gap_tol, gap.max() <= ck.gap_tol))
    return checks, summary


# -- family -----------------------------------------------------------------------------


def make_curve(m: ManifoldModel, cfg: ExperimentConfig, u_max: float) -> cp.CurveC1:
    spec = cfg.family.curve
    x0 = start_point(m, spec.start if spec.start is not None else cfg.start)
    v = unit_direction(m, 0.0, x0, spec.direction)
    if spec.kind == "line":
        return cp.CurveC1.line(x0, v, u_max)
    return cp.CurveC1.geodesic(m, x0, v, u_max)


def _u_points(cfg: ExperimentConfig) -> List[float]:
    f = cfg.family
    return [j * f.u0 / f.u_grid_size for j in range(f.u_grid_size)]


def _merge_grid(*parts) -> np.ndarray:
    pts = np.sort(np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts]))
    keep = np.concatenate([[True], np.diff(pts) > 1e-9])
    return pts[keep]


def derivative_study(m, cfg: ExperimentConfig, grid: TimeGrid, noise: NoisePath, level: int):
    """Relative derivative errors at ``t_end`` after ``level`` joint halvings."""
    f = cfg.family
    s = 2**level
    alpha, du = f.alpha / s, f.du / s
    g = TimeGrid(grid.t0, grid.t_end, grid.n_steps * s)
    nz = noise.coarsen(noise.grid.n_steps // g.n_steps)
    us = _u_points(cfg)
    curve = make_curve(m, cfg, f.u0 + du)
    u_grid = _merge_grid(cp.alpha_grid(alpha, f.u0), us, [u + du for u in us])
    fam = cp.build_family(m, curve, u_grid, alpha, nz, g, keep=us + [u + du for u in us])
    errs = np.stack([cp.relative_derivative_error(fam, g.t_end, u, du) for u in us])
    return fam, errs, (g.dt, alpha, du)


def run_family(cfg: ExperimentConfig, emit: Emit):
    checks, summary = [], {}
    grid = make_grid(cfg)
    ck, f = cfg.checks, cfg.family
    for spec in cfg.manifolds:
        m = make_manifold(spec, cfg)
        out = summary.setdefault(spec.name, {})
        want_derivative = ck.derivative_rel_tol is not None or ck.length_tol is not None or (
            ck.alpha_slope is None and ck.translation_tol is None)
        if want_derivative:
            fine = grid.refine(2**f.refinements)
            noise = path_noise(cfg, fine, m.dim)
            levels, errors, per_path = [], [], []
            fam0 = None
            for level in range(f.refinements + 1):
                fam, errs, res = derivative_study(m, cfg, grid, noise, level)
                fam0 = fam0 or fam
                live = np.isfinite(errs)
                per_path.append(np.where(live.any(axis=0), np.nansum(errs, axis=0) / np.maximum(live.sum(axis=0), 1), np.nan))
                errors.append(float(np.nanmean(errs)))
                levels.append({"dt": res[0], "alpha": res[1], "du": res[2], "mean_rel_error": errors[-1]})
            rows = [(lv["dt"], lv["alpha"], lv["du"], lv["mean_rel_error"]) for lv in levels]
            emit(f"derivative_{spec.name}.csv", _table(["dt", "alpha", "du", "mean_rel_error"], rows))
            emit(f"family_{spec.name}.csv", cp.family_to_csv(fam0))
            out["derivative"] = levels
            if ck.derivative_rel_tol is not None:
                checks.append(_check(f"{spec.name}.derivative_rel_error", errors[0], ck.derivative_rel_tol,
                                     errors[0] <= ck.derivative_rel_tol))
                for i in range(1, len(errors)):
                    diff = per_path[i] - per_path[i - 1]
                    diff = diff[np.isfinite(diff)]
                    se = float(np.std(diff, ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
                    checks.append(_check(f"{spec.name}.refinement_{i}_decrease", errors[i],
                                         f"<= {errors[i - 1]:.6g} + 2SE({se:.2g})",
                                         errors[i] <= errors[i - 1] + 2 * se))
            if ck.length_tol is not None:
                dev, fd_dev = length_deviation(m, fam0, _u_points(cfg), f.du)
                out["length_max_dev"] = dev
                out["length_max_dev_fd"] = fd_dev
                checks.append(_check(f"{spec.name}.length_preservation", dev, ck.length_tol, dev <= ck.length_tol,
                                     f"(difference-quotient estimate {fd_dev:.3g})"))
        if ck.alpha_slope is not None or (f.alphas and ck.translation_tol is None):
            alphas = f.alphas or [f.alpha * 2**-i for i in range(4)]
            curve = make_curve(m, cfg, f.u0)
            res = cp.alpha_convergence(m, curve, f.u0, alphas, path_noise(cfg, grid, m.dim), grid)
            emit(f"alpha_order_{spec.name}.csv",
                 _table(["alpha", "l2_sup_distance"], list(zip(res["alphas"], res["errors"]))))
            out["alpha_order"] = res
            if ck.alpha_slope is not None:
                lo, hi = ck.alpha_slope
                checks.append(_check(f"{spec.name}.alpha_order_slope", res["slope"], [lo, hi],
                                     lo <= res["slope"] <= hi))
        if ck.translation_tol is not None:
            dev = translation_defect(m, cfg, grid)
            out["translation_max_dev"] = dev
            checks.append(_check(f"{spec.name}.translation_identity", dev, ck.translation_tol,
                                 dev <= ck.translation_tol))
    return checks, summary


def length_deviation(m, fam: cp.HorizontalFamily, us, du):
    """Max over t, u and live paths of ``| |dX_t(u)|_{g(t)} / |phi'(u)|_{g(0)} - 1 |``.

    Returns the value for the deformed derivative and, for reference, for the
    geodesic difference quotient ``rho(X(u), X(u + du)) / du``.
    """
    times = fam.grid.times
    worst = worst_fd = 0.0
    for u in us:
        mem = fam.member(u)
        op = fam.damped(u)
        ref = m.norm(0.0, fam.curve(u), fam.curve.derivative(u))
        other = fam.member(u + du) if du else None
        live = ~mem.ever_stopped
        if other is not None:
            live &= ~other.ever_stopped
        v = fam.curve.derivative(u)
        for k, t in enumerate(times):
            w = m.norm(t, mem.points[k], op.apply(k, v)) / ref
            worst = max(worst, float(np.max(np.abs(w - 1.0)[live], initial=0.0)))
            if other is not None:
                q = m.distance(t, mem.points[k], other.points[k]) / du / ref
                worst_fd = max(worst_fd, float(np.max(np.abs(q - 1.0)[live], initial=0.0)))
    return worst, worst_fd


def translation_defect(m, cfg: ExperimentConfig, grid: TimeGrid) -> float:
    """Max of ``|(X_t(u) - phi(u)) - (X_t(0) - phi(0))|`` over u, t, paths and alphas."""
    f = cfg.family
    alphas = f.alphas or [f.alpha]
    noise = path_noise(cfg, grid, m.dim)
    curve = make_curve(m, cfg, f.u0)
    worst = 0.0
    for a in alphas:
        fam = cp.build_family(m, curve, cp.alpha_grid(a, f.u0), a, noise, grid)
        base = fam.base.points - curve(0.0)
        for i, traj in fam.members.items():
            shift = traj.points - curve(float(fam.u_grid[i]))
            worst = max(worst, float(np.max(np.abs(shift - base))))
    return worst


# -- coupling ---------------------------------------------------------------------------


def pathwise_max_ratio(a, b) -> tuple:
    """``max`` over live paths of ``rho(t)/rho(0)`` per time, and the live count."""
    rho = cp.pair_distance(a, b)
    alive = cp.both_alive(a, b)
    ratio = np.where(alive, rho / rho[0], -np.inf)
    return ratio.max(axis=1), alive.sum(axis=1)


def run_coupling(cfg: ExperimentConfig, emit: Emit):
    checks, summary = [], {}
    grid = make_grid(cfg)
    ck = cfg.checks
    n, threads = cfg.mc.n_paths, cfg.mc.threads
    for spec in cfg.manifolds:
        m = make_manifold(spec, cfg)
        x0 = start_point(m, cfg.start)
        v = unit_direction(m, 0.0, x0, cfg.coupling.direction)
        y0 = m.exp(0.0, x0, cfg.coupling.separation * v)

        def chunk(ids):
            nz = sample_noise_batch(cfg.seed, ids, grid, m.dim)
            base = simulate(m, x0, grid, nz, keep_frames=False)
            return pathwise_max_ratio(base, cp.simulate_coupled(m, base, y0))

        parts = np.array_split(np.arange(n), max(1, min(threads, n)))
        res = parallel_map(chunk, parts, threads)
        rmax = np.max([r[0] for r in res], axis=0)
        live = np.sum([r[1] for r in res], axis=0)
        c_fit = cp.fit_exponential_rate(grid.times, rmax)
        bound = np.exp(-m.curvature_k * grid.times / 2)
        rows = [(t, rmax[k], bound[k], str(int(live[k]))) for k, t in enumerate(grid.times)]
        emit(f"coupling_{spec.name}.csv", _table(["t", "max_ratio", "exp(-kt/2)", "live_paths"], rows))
        summary[spec.name] = {"rho0": float(m.distance(0.0, x0, y0)), "fitted_rate": c_fit,
                              "max_ratio": float(rmax.max()), "final_live": int(live[-1]), "n_paths": n}
        if ck.max_rate is not None:
            checks.append(_check(f"{spec.name}.fitted_rate", c_fit, ck.max_rate, c_fit <= ck.max_rate))
        if ck.fan_ratio is not None:
            nz = path_noise(cfg, grid, m.dim)
            a, b = ot.evolve_pair_fan(m, x0, y0, grid, nz, cfg.family.alpha)
            rho = cp.pair_distance(a, b)
            live_f = cp.both_alive(a, b)
            r = np.where(live_f, rho / (rho[0] * bound[:, None]), 0.0)
            worst = float(r.max())
            summary[spec.name]["fan_max_ratio_over_bound"] = worst
            checks.append(_check(f"{spec.name}.fan_ratio", worst, ck.fan_ratio, worst <= ck.fan_ratio))
    return checks, summary


# -- optimal transport contraction ------------------------------------------------------


def sample_cloud(m: ManifoldModel, center, spread: float, n: int, seed: int) -> np.ndarray:
    """``n`` chart points ``center + spread * N(0, I)`` inside the chart domain."""
    rng = _generator(seed, AUX_STREAM)
    center = np.asarray(center, dtype=float)
    pts = []
    while len(pts) < n:
        cand = center + spread * rng.standard_normal((n, m.dim))
        pts.extend(cand[m.contains(cand)])
    return np.asarray(pts[:n])


def ot_measures(m: ManifoldModel, cfg: ExperimentConfig):
    o = cfg.ot
    center = start_point(m, o.mu.center if o.mu.center is not None else cfg.start)
    offset = np.asarray(o.nu_offset, dtype=float)
    pts = sample_cloud(m, center, o.mu.spread, o.N, cfg.seed)
    shifted = pts + offset
    if not np.all(m.contains(shifted)):
        raise ValueError("ot.nu_offset moves support points out of the chart")
    return ot.EmpiricalMeasure(pts), ot.EmpiricalMeasure(shifted)


def profile_by_name(name: str) -> ot.CostProfile:
    return ot.CostProfile.power(float(name[len("power_"):]))


def run_ot(cfg: ExperimentConfig, emit: Emit):
    checks, summary = [], {}
    grid = make_grid(cfg)
    ck, o = cfg.checks, cfg.ot
    profiles = [profile_by_name(n) for n in o.profiles]
    for spec in cfg.manifolds:
        m = make_manifold(spec, cfg)
        mu, nu = ot_measures(m, cfg)
        seeds = [cfg.seed + i for i in range(cfg.mc.n_seeds)]

        def one(seed):
            return ot.contraction_experiment(m, mu, nu, profiles, o.p, grid, o.report_times,
                                             cfg.mc.n_paths, seed, cfg.family.alpha)

        reports = parallel_map(one, seeds, cfg.mc.threads)
        for seed, rep in zip(seeds, reports):
            emit(f"ot_{spec.name}_seed{seed}.csv", rep.to_csv())
        rep = ot.merge_reports(reports)
        if ck.monotone_tol is not None:
            rep.mono_tol = ck.monotone_tol
        emit(f"ot_{spec.name}.csv", rep.to_csv())
        info = rep.summary()
        info["ratio"] = [float(r) for r in rep.ratio]
        info["times"] = [float(t) for t in rep.times]
        summary[spec.name] = info
        if flat(m) and ck.rigidity_tol is not None:
            dev = float(np.max(np.abs(rep.ratio - 1.0)))
            checks.append(_check(f"{spec.name}.ratio_rigidity", dev, ck.rigidity_tol, dev <= ck.rigidity_tol))
        elif not flat(m) and ck.ratio_tol is not None:
            worst = rep.max_ratio_over_bound()
            checks.append(_check(f"{spec.name}.ratio_vs_exp(-kt/2)", worst, 1 + ck.ratio_tol,
                                 worst <= 1 + ck.ratio_tol))
        if ck.monotone_tol is not None:
            for name, res in info["monotonicity"].items():
                checks.append(_check(f"{spec.name}.W_c[{name}]_isotone_residual", res["relative"],
                                     ck.monotone_tol, res["ok"]))
        checks.append(_check(f"{spec.name}.plan_certificate", min(rep.certificate_gap.values()), ">= -1e-12",
                             info["certificate_ok"]))
    return checks, summary


# -- self test --------------------------------------------------------------------------


def brute_force_assignment(c) -> float:
    n = c.shape[0]
    return min(sum(c[i, p[i]] for i in range(n)) / n for p in itertools.permutations(range(n)))


def ot_exactness(seed: int, n_instances: int = 100, n_max: int = 6) -> float:
    rng = _generator(seed, AUX_STREAM + 1)
    worst = 0.0
    for i in range(n_instances):
        n = int(rng.integers(1, n_max + 1))
        c = rng.random((n, n))
        if i % 4 == 0:
            c = np.floor(4 * c)  # many ties
        worst = max(worst, abs(ot.solve_exact(c).cost_value - brute_force_assignment(c)))
    return worst


def octant_holonomy(numerical: bool = False) -> float:
    """Rotation angle of a vector transported around a geodesic octant triangle
    on the unit sphere.

    The triangle is rotated so that its centre is the north pole: its edges then
    stay well inside the chart, away from the excluded polar caps.
    """
    s = Sphere(1.0)
    n = np.ones(3) / math.sqrt(3.0)
    e1 = np.array([1.0, -1.0, 0.0]) / math.sqrt(2.0)
    basis = np.stack([e1, np.cross(n, e1), n])  # rows map n to e_z
    verts = basis @ np.eye(3)
    verts = verts.T
    pts = [s.chart(v) for v in verts]
    if numerical:
        move = lambda a, b, w: ManifoldModelTransport(s, a, b, w)  # noqa: E731
    else:
        move = lambda a, b, w: s.transport(0.0, a, b, w)  # noqa: E731
    w0 = unit_direction(s, 0.0, pts[0], [1.0, 0.0])
    w = w0
    for a, b in zip(pts, pts[1:] + pts[:1]):
        w = move(a, b, w)
    f = s.frame(0.0, pts[0])
    a0 = np.linalg.solve(f, w0)
    a1 = np.linalg.solve(f, w)
    ang = math.atan2(a0[0] * a1[1] - a0[1] * a1[0], a0 @ a1)
    return abs(ang)


def ManifoldModelTransport(m, x, y, w):
    """Transport by integrating the parallel-transport ODE along the geodesic."""
    return ManifoldModel.transport(m, 0.0, x, y, w)


def geometry_oracles(seed: int) -> dict:
    rng = _generator(seed, AUX_STREAM + 2)
    models = [Euclidean(2), Sphere(1.0), Sphere(2.0), HyperbolicPlane(-1.0), BackwardRicciSphere(1.0)]
    round_trip = isometry = 0.0
    for m in models:
        x0 = default_start(m)
        x = x0 + 0.4 * rng.uniform(-1, 1, (200, m.dim))
        v = rng.standard_normal((200, m.dim))
        v *= (0.2 + 1.8 * rng.random((200, 1))) / m.norm(0.3, x, v)[:, None]
        y = m.exp(0.3, x, v)
        ok = m.contains(y)
        round_trip = max(round_trip, float(np.max(np.abs(m.log(0.3, x, y) - v)[ok])))
        w = rng.standard_normal((200, m.dim))
        tw = m.transport(0.3, x, y, w)
        isometry = max(isometry, float(np.max(np.abs(m.norm(0.3, y, tw) - m.norm(0.3, x, w))[ok])))
    brf = BackwardRicciSphere(1.0)
    x = np.column_stack([rng.uniform(0.3, np.pi - 0.3, 50), rng.uniform(-3, 3, 50)])
    gdot = ManifoldModel.metric_dt(brf, 0.25, x)  # finite difference in t
    gric = float(np.max(np.abs(gdot - brf.ricci(0.25, x))))
    return {"exp_log_round_trip": round_trip, "transport_isometry": isometry,
            "octant_holonomy_closed_form": octant_holonomy(False),
            "octant_holonomy_ode": octant_holonomy(True), "brf_gdot_minus_ricci": gric}


def run_selftest(cfg: Optional[ExperimentConfig], emit: Emit, seed: int = 0):
    seed = cfg.seed if cfg is not None else seed
    checks = []
    geo = geometry_oracles(seed)
    checks.append(_check("geometry.exp_log_round_trip", geo["exp_log_round_trip"], 1e-6,
                         geo["exp_log_round_trip"] <= 1e-6))
    checks.append(_check("geometry.transport_isometry", geo["transport_isometry"], 1e-8,
                         geo["transport_isometry"] <= 1e-8))
    for key in ("octant_holonomy_closed_form", "octant_holonomy_ode"):
        dev = abs(geo[key] - np.pi / 2)
        checks.append(_check(f"geometry.{key}", geo[key], "pi/2 +- 1e-4", dev <= 1e-4))
    checks.append(_check("geometry.brf_gdot_minus_ricci", geo["brf_gdot_minus_ricci"], 1e-10,
                         geo["brf_gdot_minus_ricci"] <= 1e-10))
    worst = ot_exactness(seed)
    checks.append(_check("ot.exact_vs_brute_force", worst, 1e-12, worst <= 1e-12))
    summary = {"geometry": geo, "ot_exact_max_error": worst}
    emit("selftest.csv", _table(["check", "value", "passed"],
                                [(c.name, c.value, str(int(c.passed))) for c in checks]))
    return checks, summary


RUNNERS = {
    "simulate": run_simulate,
    "transport": run_transport,
    "family": run_family,
    "coupling": run_coupling,
    "ot-contract": run_ot,
}


def checks_as_dicts(checks: List[Check]) -> List[dict]:
    out = []
    for c in checks:
        d = asdict(c)
        if isinstance(d["threshold"], float):
            d["threshold"] = float(d["threshold"])
        out.append(d)
    return out
