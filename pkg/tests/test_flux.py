"""Flux evaluation, smoothing profile, mollification and the two structural
checkers (zero boundary flux, non-degeneracy)."""
import numpy as np
import pytest

import discflux as dx
from discflux.flux import FluxComponent, GeneralBVFlux, poly_component


# ---------------------------------------------------------------------------
# smoothstep profile


def test_smoothstep_saturates_and_is_symmetric():
    assert dx.smoothstep(-2.0) == 0.0
    assert dx.smoothstep(2.0) == 1.0
    assert dx.smoothstep(0.0) == 0.5
    assert dx.smoothstep(-1.0) == 0.0
    assert dx.smoothstep(1.0) == 1.0


def test_smoothstep_monotone_on_sorted_sample():
    rng = np.random.default_rng(11)
    z = np.sort(rng.uniform(-2.0, 2.0, 10_000))
    w = dx.smoothstep(z)
    assert np.all(np.diff(w) >= 0.0)
    assert np.all((w >= 0.0) & (w <= 1.0))


def test_profile_weights_partition_unity():
    prof = dx.DEFAULT_PROFILE
    offs = np.linspace(-3e-3, 3e-3, 101)
    wl, wr = prof.weights(offs, 1e-3)
    np.testing.assert_allclose(wl + wr, 1.0, atol=1e-14)


# ---------------------------------------------------------------------------
# sharp evaluation


def test_burgers_pointwise_value(burgers_model):
    val = burgers_model.evaluate(np.array([0.3]), 0.5)
    np.testing.assert_allclose(val, [0.25], atol=1e-15)


def test_two_flux_sides_and_interface_mean(two_flux_model):
    # left piece lam(1-lam), right piece 2 lam(1-lam), jump at x = 0
    left = two_flux_model.evaluate(np.array([-0.1]), 0.5)
    right = two_flux_model.evaluate(np.array([0.1]), 0.5)
    on = two_flux_model.evaluate(np.array([0.0]), 0.5)
    np.testing.assert_allclose(left, [0.25], atol=1e-15)
    np.testing.assert_allclose(right, [0.5], atol=1e-15)
    np.testing.assert_allclose(on, [0.375], atol=1e-15)


def test_x_ramp_modulation():
    model = dx.preset("x_ramp")
    val = model.evaluate(np.array([0.5]), 0.5)
    np.testing.assert_allclose(val, [(1.0 + 0.3 * 0.5) * 0.25], atol=1e-15)


def test_endpoint_states_give_zero_flux():
    for name in dx.PRESET_NAMES:
        model = dx.preset(name)
        xs = model.domain.sample(64)
        for state in (model.a, model.b):
            np.testing.assert_allclose(model.evaluate(xs, state), 0.0, atol=1e-14)


def test_state_outside_interval_rejected(burgers_model):
    with pytest.raises(ValueError, match="outside"):
        burgers_model.evaluate(np.array([0.0]), 1.1)


# ---------------------------------------------------------------------------
# smoothed evaluation


def test_smoothed_weights_at_two_eps(two_flux_model):
    eps = 1e-3
    pure_left = two_flux_model.evaluate_smoothed(np.array([-2 * eps]), 0.5, eps)
    pure_right = two_flux_model.evaluate_smoothed(np.array([2 * eps]), 0.5, eps)
    mid = two_flux_model.evaluate_smoothed(np.array([0.0]), 0.5, eps)
    np.testing.assert_allclose(pure_left, [0.25], atol=1e-15)
    np.testing.assert_allclose(pure_right, [0.5], atol=1e-15)
    np.testing.assert_allclose(mid, [0.375], atol=1e-15)


def test_smoothed_matches_sharp_off_the_layer(two_flux_model):
    eps = 0.05
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.5, 0.5, (500, 1))
    x = x[np.abs(x[:, 0]) >= eps]
    lam = rng.uniform(0.0, 1.0, x.shape[0])
    smoothed = two_flux_model.evaluate_smoothed(x, lam, eps)
    sharp = two_flux_model.evaluate(x, lam)
    np.testing.assert_array_equal(smoothed, sharp)


def test_lambda_derivative_crosscheck(two_flux_model):
    eps = 0.05
    h = 1e-6
    rng = np.random.default_rng(5)
    x = rng.uniform(-0.5, 0.5, (1000, 1))
    lam = rng.uniform(0.01, 0.99, 1000)
    analytic = two_flux_model.component_lambda_derivative_smoothed(0, x, lam, eps)
    fd = (
        two_flux_model.evaluate_component_smoothed(0, x, lam + h, eps)
        - two_flux_model.evaluate_component_smoothed(0, x, lam - h, eps)
    ) / (2 * h)
    assert np.all(np.abs(analytic - fd) <= 1e-6 * (1.0 + np.abs(analytic)))


# ---------------------------------------------------------------------------
# mollification of rough fluxes


def _step_flux(vl: float, vr: float) -> GeneralBVFlux:
    def comp(x, lam):
        x1 = np.asarray(x)[..., 0]
        lam = np.asarray(lam, dtype=float)
        base = np.where(x1 < 0, vl, np.where(x1 > 0, vr, 0.5 * (vl + vr)))
        return base * lam * (1.0 - lam)

    return GeneralBVFlux(d=1, components=(comp,), a=0.0, b=1.0, domain=dx.Box((-1.0,), (1.0,)))


def test_mollify_constant_flux_unchanged():
    rough = GeneralBVFlux(
        d=1,
        components=(lambda x, lam: np.broadcast_to(np.asarray(lam) * (1 - np.asarray(lam)), np.asarray(x)[..., 0].shape),),
        a=0.0,
        b=1.0,
        domain=dx.Box((-1.0,), (1.0,)),
    )
    smooth = dx.mollify_flux(rough, eps=0.1)
    xs = np.linspace(-0.9, 0.9, 19)[:, None]
    np.testing.assert_allclose(smooth.evaluate(xs, 0.3)[..., 0], 0.21, atol=1e-13)


def test_mollify_away_from_jump_keeps_side_value():
    eps = 0.05
    rough = _step_flux(1.0, 3.0)
    smooth = dx.mollify_flux(rough, eps)
    # kernel support has radius eps, so 2 eps inside the left region the
    # convolution never sees the jump
    val = smooth.evaluate(np.array([-2 * eps]), 0.5)[..., 0]
    np.testing.assert_allclose(val, 1.0 * 0.25, atol=1e-12)


def test_mollify_at_jump_gives_mean_of_sides():
    eps = 0.05
    vl, vr = 1.0, 3.0

    # oracle first: brute-force quadrature of the kernel against the step
    s = np.linspace(-eps, eps, 20_001)
    kern = (1.0 - (s / eps) ** 2) ** 2
    raw = np.where(-s < 0, vl, np.where(-s > 0, vr, 0.5 * (vl + vr)))
    oracle = np.trapezoid(raw * kern, s) / np.trapezoid(kern, s) * 0.25

    smooth = dx.mollify_flux(_step_flux(vl, vr), eps)
    val = float(smooth.evaluate(np.array([0.0]), 0.5)[..., 0])
    np.testing.assert_allclose(val, oracle, atol=1e-6)
    np.testing.assert_allclose(val, 0.5 * (vl + vr) * 0.25, atol=1e-12)


def test_mollify_preserves_zero_boundary_flux():
    smooth = dx.mollify_flux(_step_flux(1.0, 3.0), eps=0.05)
    assert dx.check_boundary_zero(smooth).passed


def test_mollify_rejects_bad_width():
    with pytest.raises(ValueError):
        dx.mollify_flux(_step_flux(1.0, 3.0), eps=0.0)


# ---------------------------------------------------------------------------
# structural checkers


def test_boundary_zero_passes_on_presets(burgers_model, two_flux_model):
    assert dx.check_boundary_zero(burgers_model).passed
    assert dx.check_boundary_zero(two_flux_model).passed


def test_boundary_zero_fails_with_witness():
    linear = dx.PiecewiseFlux(
        d=1,
        left=(poly_component(0, [0.0, 1.0]),),
        right=(poly_component(0, [0.0, 1.0]),),
        interface=None,
        a=0.0,
        b=1.0,
        domain=dx.Box((-1.0,), (1.0,)),
    )
    report = dx.check_boundary_zero(linear)
    assert not report.passed
    assert report.witness_state == 1.0
    np.testing.assert_allclose(report.max_abs, 1.0, atol=1e-15)


def test_nondegeneracy_burgers_with_analytic_oracle(burgers_model):
    subintervals, n_lambda = 8, 33

    # oracle first: per subinterval the sampled max of |1 - 2 lam|
    edges = np.linspace(0.0, 1.0, subintervals + 1)
    per_sub = []
    for s in range(subintervals):
        lam = np.linspace(edges[s], edges[s + 1], n_lambda)
        per_sub.append(np.max(np.abs(1.0 - 2.0 * lam)))
    oracle_worst = min(per_sub)
    assert oracle_worst == 0.25  # the subintervals adjacent to the root 1/2

    report = dx.check_nondegeneracy(burgers_model, subintervals=subintervals, n_lambda=n_lambda)
    assert report.passed
    np.testing.assert_allclose(report.worst_max, oracle_worst, atol=1e-14)


def test_nondegeneracy_fails_on_locally_flat_flux():
    # derivative vanishes identically for lam <= 0.4, so the subintervals
    # below 0.4 must be flagged
    def value(x, lam):
        lam = np.asarray(lam, dtype=float)
        return np.maximum(lam - 0.4, 0.0) ** 2 * np.ones(np.asarray(x)[..., 0].shape)

    def deriv(x, lam):
        lam = np.asarray(lam, dtype=float)
        return 2.0 * np.maximum(lam - 0.4, 0.0) * np.ones(np.asarray(x)[..., 0].shape)

    comp = FluxComponent(axis=0, value=value, lambda_derivative=deriv)
    model = dx.PiecewiseFlux(
        d=1, left=(comp,), right=(comp,), interface=None, a=0.0, b=1.0, domain=dx.Box((-1.0,), (1.0,))
    )
    report = dx.check_nondegeneracy(model, subintervals=5)
    assert not report.passed
    assert report.worst_max == 0.0
    lo, hi = report.witness["subinterval"]
    assert hi <= 0.4 + 1e-12


def test_nondegeneracy_2d_direction_sweep():
    directions, subintervals, n_lambda = 64, 8, 33
    model = dx.PiecewiseFlux(
        d=2,
        left=(poly_component(0, [0.0, 1.0]), poly_component(1, [0.0, 0.0, 1.0])),
        right=(poly_component(0, [0.0, 1.0]), poly_component(1, [0.0, 0.0, 1.0])),
        interface=None,
        a=0.0,
        b=1.0,
        domain=dx.Box((-1.0, -1.0), (1.0, 1.0)),
    )

    # oracle first: xi . d_lam f = xi_1 + 2 xi_2 lam over the same sweep
    theta = np.linspace(0.0, np.pi, directions, endpoint=False)
    dirs = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    edges = np.linspace(0.0, 1.0, subintervals + 1)
    worst = np.inf
    for s in range(subintervals):
        lam = np.linspace(edges[s], edges[s + 1], n_lambda)
        proj = np.abs(dirs[:, 0][None, :] + 2.0 * lam[:, None] * dirs[:, 1][None, :])
        worst = min(worst, float(proj.max(axis=0).min()))
    assert worst > 1e-3  # no direction kills both components on a subinterval

    report = dx.check_nondegeneracy(model, directions=directions, subintervals=subintervals, n_lambda=n_lambda)
    assert report.passed
    np.testing.assert_allclose(report.worst_max, worst, rtol=1e-12)
