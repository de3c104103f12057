import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from horizontal_diffusion.coupling import (
    CurveC1, alpha_convergence, alpha_grid, anchor_of, both_alive, build_family, coupled_step,
    deformed_derivative, derivative_fd, derivative_fd_log, distance_bound_violations,
    family_to_csv, fit_exponential_rate, pair_distance, relative_derivative_error, simulate_coupled,
)
from horizontal_diffusion.errors import ConfigError, CutLocusError, MissingGridPoint
from horizontal_diffusion.geometry import BackwardRicciSphere, Euclidean, HyperbolicPlane, Sphere
from horizontal_diffusion.sde import TimeGrid, diffusion_step, sample_noise_batch, simulate

EQUATOR = np.array([np.pi / 2, 0.0])


def noise(grid, n, d=2, seed=5):
    return sample_noise_batch(seed, range(n), grid, d)


@pytest.fixture(scope="module")
def sphere_pairs():
    """10^4 parallel-coupled pairs at distance 0.5 on the unit sphere."""
    s = Sphere(1.0)
    g = TimeGrid(0, 0.5, 500)
    x0 = np.array([np.pi / 2, -0.25])
    y0 = np.array([np.pi / 2, 0.25])
    base = simulate(s, x0, g, noise(g, 10_000, seed=77), keep_frames=False)
    return s, g, base, simulate_coupled(s, base, y0)


# -- single coupled step -------------------------------------------------------------


def test_euclidean_coupled_step_copies_increment():
    e = Euclidean(2)
    dm = np.array([0.03, -0.01])
    y = np.array([1.0, 2.0])
    assert np.array_equal(coupled_step(e, 0, [0.0, 0.0], y, dm, 1e-3), y + dm)


def test_coupled_step_on_itself_is_a_diffusion_step():
    s = Sphere(1.0)
    x = np.array([1.1, 0.4])
    xi = np.array([0.7, -1.2])
    y, dm = diffusion_step(s, 0.0, x, 1e-3, xi)
    assert np.allclose(coupled_step(s, 0.0, x, x, dm, 1e-3), y, atol=1e-15)


def test_coupled_step_refuses_far_pairs():
    with pytest.raises(CutLocusError):
        coupled_step(Sphere(1.0), 0.0, [np.pi / 2, 0.0], [np.pi / 2, 3.1], np.zeros(2), 1e-3)


def radial_oracle(rho0, t):
    """Distance of parallel-coupled Brownian motions on the unit 2-sphere."""
    sol = solve_ivp(lambda _, r: -np.tan(r / 2), (0, t), [rho0], rtol=1e-12, atol=1e-14)
    return float(sol.y[0, -1])


def test_coupled_distance_matches_radial_oracle(sphere_pairs):
    s, g, base, other = sphere_pairs
    k = g.index(0.2)
    rho = pair_distance(base, other)
    live = both_alive(base, other)[k]
    ratio = rho[k][live] / rho[0][live]
    oracle = radial_oracle(0.5, 0.2) / 0.5
    se = ratio.std(ddof=1) / math.sqrt(ratio.size)
    assert abs(ratio.mean() - oracle) <= 3 * se + 1e-4
    assert oracle == pytest.approx(0.90309, abs=1e-5)


def test_coupled_distance_decreases_in_mean(sphere_pairs):
    s, g, base, other = sphere_pairs
    rho = pair_distance(base, other)
    live = both_alive(base, other)
    bins = [np.mean(rho[k][live[k]]) for k in range(0, g.n_steps + 1, 50)]
    assert np.all(np.diff(bins) < 0)


def test_fitted_rate_is_contractive(sphere_pairs):
    s, g, base, other = sphere_pairs
    rho = pair_distance(base, other)
    live = both_alive(base, other)
    rmax = np.where(live, rho / rho[0], -np.inf).max(axis=1)
    assert fit_exponential_rate(g.times, rmax) <= 0


def test_fit_exponential_rate_recovers_rate():
    t = np.linspace(0, 1, 11)
    assert fit_exponential_rate(t, np.exp(-0.3 * t)) == pytest.approx(-0.3)


# -- coupled trajectories -------------------------------------------------------------


def test_coupling_with_itself_is_bit_exact():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.3, 60)
    base = simulate(s, EQUATOR, g, noise(g, 20))
    assert np.array_equal(simulate_coupled(s, base, EQUATOR).points, base.points)


def test_euclidean_coupling_is_a_translation():
    e = Euclidean(2)
    g = TimeGrid(0, 0.5, 100)
    base = simulate(e, [0.0, 0.0], g, noise(g, 10))
    y0 = np.array([0.4, -1.0])
    other = simulate_coupled(e, base, y0)
    assert np.max(np.abs(other.points - (y0 + base.points - base.points[0]))) <= 1e-12


def test_coupled_path_stops_with_base():
    s = Sphere(1.0)
    g = TimeGrid(0, 2.0, 400)
    base = simulate(s, [0.2, 0.0], g, noise(g, 200, seed=9))
    other = simulate_coupled(s, base, [0.25, 0.05])
    stopped = base.ever_stopped
    assert stopped.any()
    assert np.all(other.ever_stopped[stopped])
    assert np.all(other.stopped_at[stopped] <= base.stopped_at[stopped])


# -- curves and grids ----------------------------------------------------------------


def test_curves_have_correct_derivatives():
    s = Sphere(1.0)
    geo = CurveC1.geodesic(s, EQUATOR, [0.3, 0.4], 1.0)
    assert geo.check_derivative([0.1, 0.5, 0.9]) < 1e-8
    line = CurveC1.line([0.0, 1.0], [2.0, -1.0])
    assert line.check_derivative([0.0, 0.5]) < 1e-9
    between = CurveC1.between(s, EQUATOR, [1.2, 0.7])
    assert np.allclose(between(1.0), [1.2, 0.7], atol=1e-12)
    with pytest.raises(CutLocusError):
        CurveC1.between(s, EQUATOR, [np.pi / 2, 3.1])


def test_alpha_grid_and_anchor():
    assert np.allclose(alpha_grid(0.1, 0.3), [0, 0.1, 0.2, 0.3])
    assert np.allclose(alpha_grid(0.1, 0.25), [0, 0.1, 0.2, 0.25])
    assert np.allclose(alpha_grid(0.5, 0.3), [0, 0.3])
    assert anchor_of(0.1, 0.1) == pytest.approx(0.0)
    assert anchor_of(0.1000001, 0.1) == pytest.approx(0.1)
    assert anchor_of(0.25, 0.1) == pytest.approx(0.2)


# -- families -------------------------------------------------------------------------


def test_family_starts_on_the_curve():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 20)
    curve = CurveC1.geodesic(s, EQUATOR, [1.0, 1.0], 0.3)
    fam = build_family(s, curve, alpha_grid(0.05, 0.3), 0.05, noise(g, 5), g)
    for i, traj in fam.members.items():
        assert np.allclose(traj.points[0], curve(float(fam.u_grid[i])))
    assert fam.base is fam.members[0]


@pytest.mark.parametrize("alpha", [0.5, 0.1, 0.03])
def test_euclidean_family_is_a_translation(alpha):
    e = Euclidean(2)
    g = TimeGrid(0, 0.5, 100)
    curve = CurveC1.line([0.0, 0.0], [1.0, 2.0])
    fam = build_family(e, curve, alpha_grid(alpha, 1.0), alpha, noise(g, 10), g)
    base = fam.base.points - curve(0.0)
    for i, traj in fam.members.items():
        assert np.max(np.abs(traj.points - curve(float(fam.u_grid[i])) - base)) <= 1e-12


def test_single_anchor_family():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 20)
    curve = CurveC1.geodesic(s, EQUATOR, [1.0, 0.0], 0.3)
    fam = build_family(s, curve, [0.0, 0.1, 0.2, 0.3], 0.5, noise(g, 4), g)
    assert set(fam.anchors.values()) == {0}


def test_family_grid_validation():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 10)
    curve = CurveC1.geodesic(s, EQUATOR, [1.0, 0.0], 0.3)
    with pytest.raises(ConfigError):
        build_family(s, curve, [0.0, 0.15, 0.3], 0.1, noise(g, 2), g)  # misses 0.1, 0.2
    with pytest.raises(ConfigError):
        build_family(s, curve, [0.1, 0.2], 0.1, noise(g, 2), g)
    with pytest.raises(ConfigError):
        build_family(s, curve, [0.0, 0.1], 0.0, noise(g, 2), g)


def test_pruned_members_are_missing():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 10)
    curve = CurveC1.geodesic(s, EQUATOR, [1.0, 0.0], 0.3)
    fam = build_family(s, curve, alpha_grid(0.1, 0.3), 0.1, noise(g, 2), g, keep=[0.3])
    assert fam.member(0.3).points.shape[0] == 11
    with pytest.raises(MissingGridPoint):
        fam.member(0.1)
    with pytest.raises(MissingGridPoint):
        fam.member(0.15)


def test_euclidean_derivatives_are_exact():
    e = Euclidean(2)
    g = TimeGrid(0, 0.3, 30)
    curve = CurveC1.line([0.0, 0.0], [1.0, -2.0])
    fam = build_family(e, curve, [0.0, 0.01, 0.1], 0.1, noise(g, 6), g)
    fd = derivative_fd(fam, 0.3, 0.0, 0.01)
    assert np.allclose(fd.components, (curve(0.01) - curve(0.0)) / 0.01, atol=1e-12)
    w = deformed_derivative(fam, 0.0, 0.3)
    assert np.array_equal(w.components, np.broadcast_to(curve.derivative(0.0), w.components.shape))


def test_deformed_derivative_at_time_zero():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 10)
    curve = CurveC1.geodesic(s, EQUATOR, [1.0, 1.0], 0.2)
    fam = build_family(s, curve, alpha_grid(0.1, 0.2), 0.1, noise(g, 3), g)
    w = deformed_derivative(fam, 0.1, 0.0)
    assert np.allclose(w.components, curve.derivative(0.1), atol=1e-15)


def test_difference_quotient_is_first_order_in_du():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 10)
    curve = CurveC1.geodesic(s, [1.0, 0.0], [1.0, 1.0], 0.5)
    dus = [0.04, 0.02, 0.01, 0.005]
    grid_u = sorted({0.0, *dus})
    fam = build_family(s, curve, grid_u, 0.5, noise(g, 2), g)
    est = [derivative_fd(fam, 0.0, 0.0, du).components[0] for du in dus]
    diffs = [np.linalg.norm(a - b) for a, b in zip(est, est[1:])]
    ratios = np.array(diffs[:-1]) / np.array(diffs[1:])
    assert np.allclose(ratios, 2.0, rtol=0.1)


def test_sphere_derivative_identity():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.2, 200)
    curve = CurveC1.geodesic(s, EQUATOR, np.array([1.0, 1.0]) / math.sqrt(2), 0.2)
    us = [0.0, 0.1]
    u_grid = sorted(set(np.round(np.concatenate([alpha_grid(0.01, 0.1), [0.001, 0.101]]), 12)))
    fam = build_family(s, curve, u_grid, 0.01, noise(g, 30), g)
    errs = np.concatenate([relative_derivative_error(fam, 0.2, u, 0.001) for u in us])
    assert np.nanmean(errs) <= 0.05
    log_fd = derivative_fd_log(fam, 0.2, 0.0, 0.001)
    chart_fd = derivative_fd(fam, 0.2, 0.0, 0.001)
    assert np.allclose(log_fd.components, chart_fd.components, rtol=0.05, atol=1e-2)


def test_backward_ricci_length_preservation():
    m = BackwardRicciSphere(1.0)
    g = TimeGrid(0, 0.5, 500)
    curve = CurveC1.geodesic(m, EQUATOR, np.array([1.0, 1.0]) / math.sqrt(2), 0.2)
    fam = build_family(m, curve, alpha_grid(0.02, 0.2), 0.02, noise(g, 20), g)
    for u in (0.0, 0.1, 0.2):
        op = fam.damped(u)
        ref = m.norm(0, curve(u), curve.derivative(u))
        live = ~fam.member(u).ever_stopped
        for k in range(0, 501, 50):
            w = deformed_derivative(fam, u, g.times[k])
            assert np.max(np.abs(m.norm(g.times[k], w.base, w.components)[live] / ref - 1)) <= 0.01
        assert op.kind == "damped"


def test_alpha_error_is_at_least_first_order():
    # the alpha-construction error is bounded by C * alpha
    s = Sphere(1.0)
    g = TimeGrid(0, 0.3, 300)
    curve = CurveC1.geodesic(s, EQUATOR, np.array([1.0, 1.0]) / math.sqrt(2), 0.3)
    res = alpha_convergence(s, curve, 0.3, [0.1, 0.05, 0.025], noise(g, 40), g)
    assert res["slope"] >= 0.7
    assert np.all(np.diff(res["errors"]) < 0)


def test_distance_bound_diagnostic():
    h = HyperbolicPlane(-1.0)
    g = TimeGrid(0, 0.3, 100)
    curve = CurveC1.geodesic(h, [0.0, 0.0], [1.0, 0.0], 0.2)
    fam = build_family(h, curve, alpha_grid(0.05, 0.2), 0.05, noise(g, 20), g)
    rep = distance_bound_violations(fam, rate=abs(h.curvature_k) + 1)
    assert rep["checked"] > 0
    # the Euler scheme overshoots the pathwise bound only rarely and marginally
    assert rep["violation_rate"] <= 0.01
    assert rep["max_ratio"] <= 1.01


def test_family_csv():
    s = Sphere(1.0)
    g = TimeGrid(0, 0.1, 4)
    curve = CurveC1.geodesic(s, EQUATOR, [1.0, 0.0], 0.2)
    fam = build_family(s, curve, alpha_grid(0.1, 0.2), 0.1, noise(g, 2), g)
    lines = family_to_csv(fam).strip().splitlines()
    assert lines[0] == "u,step,t,x0,x1,alive"
    assert len(lines) == 1 + 3 * 5
