"""Entropy machinery: test functions, interface traces, admissibility and
Kato residuals, L1 contraction and cone locality."""
import math

import numpy as np
import pytest

import discflux as dx
from discflux.entropy import ResidualWorkspace, bump_battery, interface_trace, lambda_battery
from conftest import block_field


def _phi(t_center, t_radius, center, radius, label="phi"):
    return dx.TestFunction(
        time_center=t_center,
        time_radius=t_radius,
        space_center=(center,) if np.isscalar(center) else tuple(center),
        space_radius=(radius,) if np.isscalar(radius) else tuple(radius),
        label=label,
    )


def _constant_trajectory(grid, value, times, eps=1e-3):
    states = np.tile(np.full(grid.counts, float(value)), (len(times),) + (1,) * grid.d)
    return dx.Trajectory(grid=grid, times=tuple(times), states=states,
                         manifest={"smoothing_width": eps})


# ---------------------------------------------------------------------------
# test functions


def test_bump_is_nonnegative_and_compact():
    phi = _phi(0.25, 0.2, 0.0, 0.3)
    t = np.linspace(-0.5, 1.0, 41)
    x = np.linspace(-1.0, 1.0, 41)[:, None]
    vals = phi.value(t[:, None], x[None, :, :][0])
    assert np.all(vals >= 0.0)
    assert phi.value(0.25, np.array([0.31])) == 0.0
    assert phi.value(0.5, np.array([0.0])) == 0.0


def test_bump_derivatives_crosscheck():
    phi = _phi(0.3, 0.25, (0.1, -0.2), (0.4, 0.3))
    rng = np.random.default_rng(19)
    t = rng.uniform(0.1, 0.5, 200)
    x = rng.uniform(-0.5, 0.5, (200, 2))
    h = 1e-6
    fd_t = (phi.value(t + h, x) - phi.value(t - h, x)) / (2 * h)
    assert np.all(np.abs(phi.time_derivative(t, x) - fd_t) <= 1e-6 * (1 + np.abs(fd_t)))
    grad = phi.gradient(t, x)
    for k in range(2):
        dxk = np.zeros(2)
        dxk[k] = h
        fd_k = (phi.value(t, x + dxk) - phi.value(t, x - dxk)) / (2 * h)
        assert np.all(np.abs(grad[:, k] - fd_k) <= 1e-6 * (1 + np.abs(fd_k)))


def test_bump_validate_rejects_protruding_support():
    box = dx.Box((-0.5,), (0.5,))
    with pytest.raises(ValueError, match="support"):
        _phi(0.25, 0.3, 0.0, 0.3).validate(box, final_time=0.5)
    with pytest.raises(ValueError, match="axis 0"):
        _phi(0.25, 0.2, 0.4, 0.2).validate(box, final_time=0.5)
    _phi(0.25, 0.2, 0.0, 0.3).validate(box, final_time=0.5)


def test_lambda_battery_layout():
    lams = lambda_battery(0.2, 0.7)
    assert lams.shape == (11,)
    assert lams[0] == 0.2 and lams[-1] == 0.7
    np.testing.assert_allclose(np.diff(lams), 0.05, atol=1e-15)


def test_bump_battery_layout(burgers_model):
    box = burgers_model.domain
    phis = bump_battery(box, final_time=0.5)
    assert len(phis) == 20
    assert phis[0].label == "phi00"
    assert phis[0].time_center == 0.25 and phis[0].time_radius == 0.25
    assert len({p.label for p in phis}) == 20
    for p in phis:
        p.validate(box, 0.5)


# ---------------------------------------------------------------------------
# interface traces


def test_trace_continuous_field(two_flux_model, fine_grid):
    x = fine_grid.points()[..., 0]
    states = np.tile(0.4 + 0.3 * np.sin(2.0 * x), (2, 1))
    traj = dx.Trajectory(fine_grid, (0.0, 0.1), states, {"smoothing_width": 1e-3})
    trace = interface_trace(traj, two_flux_model.interface)
    np.testing.assert_allclose(trace.averaged, 0.4, atol=1e-4)


def test_trace_two_state_average(two_flux_model, fine_grid):
    x = fine_grid.points()[..., 0]
    states = np.tile(np.where(x < 0, 0.2, 0.8), (2, 1))
    traj = dx.Trajectory(fine_grid, (0.0, 0.1), states, {"smoothing_width": 1e-3})
    trace = interface_trace(traj, two_flux_model.interface)
    np.testing.assert_allclose(trace.left, 0.2, atol=1e-13)
    np.testing.assert_allclose(trace.right, 0.8, atol=1e-13)
    np.testing.assert_allclose(trace.averaged, 0.5, atol=1e-13)


def test_trace_viscous_layer_between_sides(two_flux_model, fine_grid):
    eps = 0.01
    x = fine_grid.points()[..., 0]
    profile = 0.1 + 0.8 * dx.smoothstep(x / eps)
    states = np.tile(profile, (2, 1))
    traj = dx.Trajectory(fine_grid, (0.0, 0.1), states, {"smoothing_width": eps})
    trace = interface_trace(traj, two_flux_model.interface)
    assert np.all(trace.left >= 0.1 - 1e-12) and np.all(trace.right <= 0.9 + 1e-12)
    assert np.all(trace.averaged >= 0.1) and np.all(trace.averaged <= 0.9)

    # oracle: linear extrapolation of the analytic layer from the stencil cells
    def extrap(o1, o2):
        v1 = 0.1 + 0.8 * dx.smoothstep(o1 / eps)
        v2 = 0.1 + 0.8 * dx.smoothstep(o2 / eps)
        return v1 - o1 * (v2 - v1) / (o2 - o1)

    h = fine_grid.dx[0]
    np.testing.assert_allclose(trace.left[0], extrap(-1.5 * h, -2.5 * h), atol=1e-12)
    np.testing.assert_allclose(trace.right[0], extrap(1.5 * h, 2.5 * h), atol=1e-12)


def test_trace_clamps_to_bounds(two_flux_model, fine_grid):
    x = fine_grid.points()[..., 0]
    states = np.tile(np.where(x < 0, 0.2, 0.8), (2, 1))
    traj = dx.Trajectory(fine_grid, (0.0, 0.1), states, {"smoothing_width": 1e-3})
    trace = interface_trace(traj, two_flux_model.interface, bounds=(0.4, 0.6))
    np.testing.assert_allclose(trace.left, 0.4, atol=1e-13)
    np.testing.assert_allclose(trace.right, 0.6, atol=1e-13)


def test_trace_unresolved_interface_raises(two_flux_model, fine_grid):
    states = np.zeros((2,) + fine_grid.counts)
    traj = dx.Trajectory(fine_grid, (0.0, 0.1), states, {})
    with pytest.raises(ValueError, match="not resolved"):
        interface_trace(traj, two_flux_model.interface, eps=1e-4)
    with pytest.raises(ValueError, match="smoothing width"):
        interface_trace(traj, two_flux_model.interface)


def test_trace_interface_near_boundary_raises(fine_grid):
    itf = dx.Interface.affine(0, 1, [0.499])
    states = np.zeros((2,) + fine_grid.counts)
    traj = dx.Trajectory(fine_grid, (0.0, 0.1), states, {"smoothing_width": 1e-2})
    with pytest.raises(ValueError, match="boundary"):
        interface_trace(traj, itf, eps=1e-2)


# ---------------------------------------------------------------------------
# admissibility residuals


def test_endpoint_lambdas_reduce_to_weak_form(burgers_shock_traj, burgers_model):
    phi = _phi(0.25, 0.2, 0.0, 0.4)
    ws = ResidualWorkspace(burgers_shock_traj, burgers_model)
    tol = 1e-3 * phi.c1_norm * burgers_model.domain.volume
    assert abs(ws.kruzhkov(0.0, phi)) <= tol
    assert abs(ws.kruzhkov(1.0, phi)) <= tol


def test_kruzhkov_rejects_lambda_outside_interval(burgers_shock_traj, burgers_model):
    phi = _phi(0.25, 0.2, 0.0, 0.4)
    with pytest.raises(ValueError, match="lambda"):
        dx.kruzhkov_residual(burgers_shock_traj, burgers_model, 1.5, phi)


def test_stationary_shock_battery_admissible(burgers_shock_traj, burgers_model):
    report = dx.entropy_battery(burgers_shock_traj, burgers_model)
    assert report.passed
    assert len(report.entries) == 11 * 20
    assert report.min_residual >= -1e-3 * max(e.tol for e in report.entries) / 1e-3


def test_rarefaction_battery_admissible(burgers_rarefaction_traj, burgers_model):
    report = dx.entropy_battery(burgers_rarefaction_traj, burgers_model)
    assert report.passed


def test_expansion_shock_detected(burgers_model, fine_grid):
    # stationary expansion: RH speed is zero but the jump is non-entropic
    x = fine_grid.points()[..., 0]
    times = tuple(np.linspace(0.0, 0.5, 65))
    states = np.tile(np.where(x < 0, 1.0, 0.0), (65, 1))
    traj = dx.Trajectory(fine_grid, times, states, {})
    phi = _phi(0.25, 0.25, 0.0, 0.45)

    # oracle first: E(lam, phi) = -2 f(lam) * integral of phi(t, 0) dt, and the
    # time integral of the quartic bump is r_t * 16/15
    lam = 0.5
    f_lam = lam * (1 - lam)
    oracle = -2.0 * f_lam * 0.25 * 16.0 / 15.0
    np.testing.assert_allclose(oracle, -2.0 / 15.0, rtol=1e-15)

    resid = dx.kruzhkov_residual(traj, burgers_model, lam, phi)
    np.testing.assert_allclose(resid, oracle, rtol=1e-3, atol=1e-5)
    scale = phi.c1_norm * fine_grid.box.volume
    assert resid < -0.01 * scale

    # the same field is still a weak solution: endpoint residuals vanish
    assert abs(dx.kruzhkov_residual(traj, burgers_model, 0.0, phi)) <= 1e-3 * scale


def test_transformed_residual_equals_plain_in_flat_1d(two_flux_block_traj, two_flux_model):
    phi = _phi(0.045, 0.04, 0.05, 0.2)
    for lam in (0.3, 0.6):
        plain = dx.kruzhkov_residual(two_flux_block_traj, two_flux_model, lam, phi)
        transf = dx.transformed_entropy_residual(two_flux_block_traj, two_flux_model, lam, phi)
        assert plain == transf


def test_constant_field_interface_residual_closed_form(two_flux_model, fine_grid):
    c = 0.5
    times = np.linspace(0.0, 0.09, 33)
    traj = _constant_trajectory(fine_grid, c, times)
    phi = _phi(0.045, 0.04, 0.0, 0.3)

    # oracle first: all terms cancel except the interface boundary terms,
    # leaving sgn(c - lam) * (F_L(c) - F_R(c)) * integral phi(t, 0) dt
    tw = np.empty(times.size)
    tw[0] = 0.5 * (times[1] - times[0])
    tw[-1] = 0.5 * (times[-1] - times[-2])
    tw[1:-1] = 0.5 * (times[2:] - times[:-2])
    phi_on_interface = float(tw @ phi.value(times, np.zeros((times.size, 1))))
    fl_c = c * (1 - c)
    fr_c = 2 * c * (1 - c)

    for lam in (0.3, 0.7):
        oracle = np.sign(c - lam) * (fl_c - fr_c) * phi_on_interface
        resid = dx.transformed_entropy_residual(traj, two_flux_model, lam, phi)
        np.testing.assert_allclose(resid, oracle, rtol=1e-3, atol=1e-6)
    assert dx.transformed_entropy_residual(traj, two_flux_model, 0.3, phi) < 0
    assert dx.transformed_entropy_residual(traj, two_flux_model, 0.7, phi) > 0


def test_transformed_residual_change_of_variables_2d():
    # same analytic field expressed in both coordinate systems; the flattening
    # map is volume preserving, so the residuals must agree up to quadrature
    model = dx.preset("tilted_2d")
    itf = model.interface
    T, eps = 0.4, 0.05

    def field(t, pts_flat):
        s = np.clip(np.linalg.norm(pts_flat, axis=-1) / 0.6, 0.0, 1.0)
        return 0.2 + 0.5 * (1.0 - s**2) ** 2 * (1.0 - 0.5 * np.asarray(t) / T)

    times = tuple(np.linspace(0.0, T, 17))
    from discflux.geometry import flattened_box

    fbox = flattened_box(model.domain, itf)
    fgrid = dx.Grid(fbox.lows, fbox.highs, (64, 64))
    ftraj = dx.Trajectory(
        fgrid, times, np.stack([field(t, fgrid.points()) for t in times]), {"smoothing_width": eps}
    )
    ogrid = dx.Grid(model.domain.lows, model.domain.highs, (64, 64))
    opts = ogrid.points()
    otraj = dx.Trajectory(
        ogrid, times, np.stack([field(t, itf.flatten(opts)) for t in times]), {"smoothing_width": eps}
    )

    phi_flat = dx.TestFunction(
        time_center=0.2, time_radius=0.2, space_center=(0.0, 0.0), space_radius=(0.5, 0.5)
    )

    class PhiOriginal:
        """phi_flat composed with the flattening map; chain rule for the
        gradient with d(x1 - 0.2 x2)/dx2 = -0.2."""

        def value(self, t, x):
            return phi_flat.value(t, itf.flatten(x))

        def time_derivative(self, t, x):
            return phi_flat.time_derivative(t, itf.flatten(x))

        def gradient(self, t, x):
            g = phi_flat.gradient(t, itf.flatten(x))
            out = np.array(g, copy=True)
            out[..., 1] = g[..., 1] - 0.2 * g[..., 0]
            return out

    tol = 1e-3 * phi_flat.c1_norm * ogrid.box.volume
    for lam in (0.25, 0.4, 0.6):
        r_flat = dx.transformed_entropy_residual(ftraj, model, lam, phi_flat)
        r_orig = dx.kruzhkov_residual(otraj, model, lam, PhiOriginal())
        assert abs(r_flat) > 1e-4  # comparison is not vacuous
        assert abs(r_flat - r_orig) <= tol


def test_residual_linear_in_phi(two_flux_block_traj, two_flux_model):
    phi1 = _phi(0.045, 0.04, 0.1, 0.2, "p1")
    phi2 = _phi(0.05, 0.035, -0.1, 0.25, "p2")
    alpha, beta = 0.7, 2.3

    class Combo:
        def value(self, t, x):
            return alpha * phi1.value(t, x) + beta * phi2.value(t, x)

        def time_derivative(self, t, x):
            return alpha * phi1.time_derivative(t, x) + beta * phi2.time_derivative(t, x)

        def gradient(self, t, x):
            return alpha * phi1.gradient(t, x) + beta * phi2.gradient(t, x)

    ws = ResidualWorkspace(two_flux_block_traj, two_flux_model)
    lam = 0.4
    combined = ws.kruzhkov(lam, Combo())
    separate = alpha * ws.kruzhkov(lam, phi1) + beta * ws.kruzhkov(lam, phi2)
    np.testing.assert_allclose(combined, separate, atol=1e-12)


def test_entropy_report_json_layout(burgers_shock_traj, burgers_model):
    phi = _phi(0.25, 0.2, 0.0, 0.3)
    report = dx.entropy_battery(burgers_shock_traj, burgers_model, lambdas=[0.5], phis=[phi])
    blob = report.to_json()
    entry = blob["entries"][0]
    assert set(entry) == {"lambda", "phi_id", "residual", "tol", "pass"}
    assert set(blob["summary"]) == {"min_residual", "worst_lambda", "worst_phi", "pass", "count"}


# ---------------------------------------------------------------------------
# Kato residuals


def test_kato_identical_runs_is_exactly_zero(burgers_shock_traj, burgers_model):
    phi = _phi(0.25, 0.2, 0.0, 0.3)
    assert dx.kato_residual(burgers_shock_traj, burgers_shock_traj, burgers_model, phi) == 0.0


def test_kato_grid_mismatch_raises(burgers_shock_traj, burgers_model):
    grid = dx.Grid((-0.5,), (0.5,), (100,))
    other = _constant_trajectory(grid, 0.0, np.asarray(burgers_shock_traj.times))
    phi = _phi(0.25, 0.2, 0.0, 0.3)
    with pytest.raises(ValueError, match="grid"):
        dx.kato_residual(burgers_shock_traj, other, burgers_model, phi)


def test_kato_nested_burgers_battery(burgers_model):
    grid = dx.Grid((-0.5,), (0.5,), (200,))
    x = grid.points()[..., 0]
    s = np.clip(np.abs(x) / 0.2, 0.0, 1.0)
    shape = (1.0 - s**2) ** 2

    def solve(amp):
        config = dx.RunConfig(flux=burgers_model, epsilon=2e-3, final_time=0.2, boundary=0.0)
        return dx.run(dx.Field(grid, amp * shape, 0.0), config)

    report = dx.kato_battery(solve(0.3), solve(0.6), burgers_model)
    assert report.passed
    assert report.min_residual >= -1e-3 * max(e.tol for e in report.entries) / 1e-3


def test_kato_two_flux_shifted_steps(two_flux_block_traj, two_flux_model, fine_grid):
    config = dx.RunConfig(
        flux=two_flux_model,
        epsilon=1e-3,
        final_time=0.09,
        boundary=0.0,
        output_times=tuple(np.linspace(0.0, 0.09, 129)),
    )
    shifted = dx.run(block_field(fine_grid, 0.05, 0.25, 1.0), config)
    report = dx.kato_battery(two_flux_block_traj, shifted, two_flux_model, tol_factor=1e-2)
    assert report.passed


# ---------------------------------------------------------------------------
# distances, contraction, cone locality


def test_l1_distance_examples(fine_grid):
    u1 = dx.Field(fine_grid, np.zeros(fine_grid.counts), 0.0)
    vals = np.zeros(fine_grid.counts)
    vals[7] = 1.0
    u2 = dx.Field(fine_grid, vals, 0.0)
    assert dx.l1_distance(u1, u1) == 0.0
    np.testing.assert_allclose(dx.l1_distance(u1, u2), fine_grid.dx[0], rtol=1e-15)


def test_l1_distance_independent_reduction(fine_grid):
    rng = np.random.default_rng(29)
    a = rng.uniform(0.0, 1.0, fine_grid.counts)
    b = rng.uniform(0.0, 1.0, fine_grid.counts)

    # oracle first: compensated summation in reversed order
    oracle = math.fsum(abs(x - y) for x, y in zip(a[::-1], b[::-1])) * fine_grid.dx[0]

    got = dx.l1_distance(dx.Field(fine_grid, a, 0.0), dx.Field(fine_grid, b, 0.0))
    np.testing.assert_allclose(got, oracle, rtol=1e-14)


def test_l1_distance_grid_mismatch(fine_grid):
    other = dx.Grid((-0.5,), (0.5,), (100,))
    with pytest.raises(ValueError, match="grid"):
        dx.l1_distance(
            dx.Field(fine_grid, np.zeros(fine_grid.counts), 0.0),
            dx.Field(other, np.zeros(other.counts), 0.0),
        )


def test_contraction_equal_data_passes(burgers_shock_traj):
    report = dx.contraction_check([(burgers_shock_traj, burgers_shock_traj)])
    assert report.passed
    assert report.worst_ratio == 0.0


def test_contraction_nested_and_symmetric(burgers_model):
    grid = dx.Grid((-0.5,), (0.5,), (200,))
    x = grid.points()[..., 0]
    s = np.clip(np.abs(x) / 0.2, 0.0, 1.0)
    shape = (1.0 - s**2) ** 2
    config = dx.RunConfig(flux=burgers_model, epsilon=2e-3, final_time=0.2, boundary=0.0)
    t1 = dx.run(dx.Field(grid, 0.3 * shape, 0.0), config)
    t2 = dx.run(dx.Field(grid, 0.6 * shape, 0.0), config)
    fwd = dx.contraction_check([(t1, t2)])
    rev = dx.contraction_check([(t2, t1)])
    assert fwd.passed
    assert fwd.worst_ratio <= 1.05
    assert fwd.worst_ratio == rev.worst_ratio


def test_cone_locality_identical_and_inversion(burgers_model):
    grid = dx.Grid((-0.5,), (0.5,), (100,))
    x = grid.points()[..., 0]
    s = np.clip(np.abs(x) / 0.15, 0.0, 1.0)
    base = 0.25 + 0.5 * (1.0 - s**2) ** 2
    config = dx.RunConfig(flux=burgers_model, epsilon=4e-3, final_time=0.05, boundary=0.25)
    cone = dx.Cone(center=(0.0,), radius=0.25, speed=1.0)

    ta = dx.run(dx.Field(grid, base, 0.0), config)
    same = dx.cone_locality_check(ta, ta, cone)
    assert same.passed and same.kappa == 0.0

    # perturbation inside the base must be flagged as non-local
    inside = np.array(base)
    s2 = np.clip(np.abs(x - 0.05) / 0.05, 0.0, 1.0)
    inside += 0.2 * (1.0 - s2**2) ** 2
    tb = dx.run(dx.Field(grid, np.clip(inside, 0.0, 1.0), 0.0), config)
    report = dx.cone_locality_check(ta, tb, cone)
    assert not report.passed
    assert report.kappa > report.tol
