import numpy as np
import pytest

from cnlab import ConfigurationError, ConstructionError, DomainError, make_model
from cnlab import tensor as ta
from cnlab.geometry import (
    ChartKind,
    ChartSpec,
    TensorField,
    Valence,
    bump_matrix,
    christoffel_symbols,
    convention_pin,
    convergence_slope,
    curvature,
    differentiate,
    second_kind_apply,
    second_kind_spectrum,
)
from cnlab.operators import nabla
from cnlab.random_fields import band_limited_sym2

from conftest import sin_field


# -- ChartSpec ---------------------------------------------------------------

@pytest.mark.parametrize(
    "kwargs",
    [
        dict(dim=1, resolution=17),
        dict(dim=2, resolution=16),
        dict(dim=2, resolution=11),
        dict(dim=2, resolution=17, stencil_order=5),
        dict(dim=2, resolution=17, interior_margin=0.1),
    ],
)
def test_chartspec_rejects_torus(kwargs):
    with pytest.raises(ConfigurationError):
        ChartSpec(ChartKind.PERIODIC_TORUS, **kwargs)


@pytest.mark.parametrize("margin", [0.0, 0.5, 0.7])
def test_chartspec_open_margin(margin):
    with pytest.raises(ConfigurationError):
        ChartSpec(ChartKind.OPEN_BALL_CHART, 2, 17, interior_margin=margin)


def test_fourier_only_on_tori():
    with pytest.raises(ConfigurationError):
        ChartSpec(ChartKind.OPEN_BALL_CHART, 2, 17, interior_margin=0.2, derivative="fourier")


def test_unknown_model_and_dim():
    with pytest.raises(ConfigurationError):
        make_model("klein_bottle", 2, 17)
    with pytest.raises(ConfigurationError):
        make_model("flat_torus", 5, 17)


# -- make_model examples -------------------------------------------------------

def test_flat_identity():
    ctx = make_model("flat_torus", 2, 33)
    assert np.array_equal(ctx.g, np.broadcast_to(np.eye(2)[:, :, None, None], ctx.g.shape))
    assert np.all(ctx.metric.sqrt_det.components == 1.0)
    assert ctx.volume() == pytest.approx(1.0, abs=1e-14)


def test_hyperbolic_origin():
    ctx = make_model("hyperbolic_ball", 3, 33, {"scale": 1})
    g0 = ctx.g[(Ellipsis,) + ctx.center_index()]
    np.testing.assert_allclose(g0, 4 * np.eye(3), atol=1e-14)


def test_bumpy_positive_definite():
    ctx = make_model("bumpy_torus", 3, 33, {"a": 0.1})
    ev = ta.eigvalsh_pointwise(ctx.g)
    assert ev.min() >= 1 - 0.1 * np.linalg.norm(bump_matrix(3), 2) - 1e-12


def test_metric_inverse_and_det(sphere3):
    prod = np.einsum("ij...,jk...->ik...", sphere3.g, sphere3.g_inv)
    eye = np.eye(3).reshape(3, 3, 1, 1, 1)
    assert np.abs(prod - eye).max() < 1e-12
    assert np.all(sphere3.metric.sqrt_det.components > 0)


def test_non_positive_metric_names_sample():
    with pytest.raises(ConstructionError, match="sample"):
        make_model("flat_torus", 2, 17, {"G": [[1.0, 2.0], [2.0, 1.0]]})


def test_sym2_round_trip(flat2, rng):
    full = rng.standard_normal((2, 2) + flat2.grid_shape)
    full = full + np.swapaxes(full, 0, 1)
    assert np.array_equal(flat2.sym2(full).full(), full)


# -- differentiate ------------------------------------------------------------

def test_fourier_derivative(flat2):
    f = flat2.scalar(sin_field(flat2))
    df = differentiate(flat2, f, 0).components
    assert np.abs(df - 2 * np.pi * np.cos(2 * np.pi * flat2.coords[0])).max() < 1e-12
    assert flat2.engine.kind == "fourier"


def test_constant_derivative_zero(bumpy2):
    f = bumpy2.scalar(3.0)
    assert np.all(differentiate(bumpy2, f, 1).components == 0.0)


def test_open_chart_polynomial_exact():
    ctx = make_model("sphere_stereo", 2, 17, stencil_order=4)
    f = ctx.scalar(ctx.coords[0] * ctx.coords[1])
    df = differentiate(ctx, f, 0).components
    inside = ctx.interior
    assert np.abs(df - ctx.coords[1])[inside].max() < 1e-12


def test_value_at_outside_interior(sphere3):
    f = sphere3.scalar(1.0)
    with pytest.raises(DomainError):
        sphere3.value_at(f, (0, 0, 0))
    assert sphere3.value_at(f, sphere3.center_index()) == 1.0


# -- connection and curvature --------------------------------------------------

def test_christoffel_flat_zero(flat3_aniso):
    assert np.all(christoffel_symbols(flat3_aniso) == 0.0)


def test_christoffel_bumpy_a0():
    ctx = make_model("bumpy_torus", 2, 17, {"a": 0.0})
    assert np.abs(christoffel_symbols(ctx)).max() < 1e-12


def test_christoffel_half_space_closed_form():
    ctx = make_model("hyperbolic_half", 2, 25)
    gam = christoffel_symbols(ctx)[(Ellipsis,) + ctx.center_index()]
    assert ctx.coords[(slice(None),) + ctx.center_index()] == pytest.approx([0.0, 1.0])
    assert gam[1, 0, 0] == pytest.approx(1.0, abs=1e-6)
    assert gam[0, 0, 1] == pytest.approx(-1.0, abs=1e-6)
    assert gam[1, 1, 1] == pytest.approx(-1.0, abs=1e-6)


def test_christoffel_symmetric(sphere3):
    gam = christoffel_symbols(sphere3)
    assert np.array_equal(gam, np.swapaxes(gam, 1, 2), equal_nan=True)


@pytest.mark.parametrize("model", ["bumpy_torus", "sphere_stereo", "hyperbolic_half"])
def test_metric_compatibility_slope(model):
    res, hs = [], []
    for n in (17, 21, 25):
        ctx = make_model(model, 2, n)
        g = ctx.g
        # the covariant derivative of g uses the same discrete nabla as every operator
        res.append(ctx.sup(np.abs(nabla(ctx, g, 2)).max(axis=(0, 1, 2))))
        hs.append(ctx.spacing)
    # covariant form: exact to roundoff or converging at the stencil order
    assert res[-1] < 1e-10 or convergence_slope(hs, res) >= 5.5


def test_flat_curvature_zero(flat3_aniso):
    b = curvature(flat3_aniso)
    assert np.abs(b.riemann).max() < 1e-12
    assert b.lambda_hat == pytest.approx(0.0, abs=1e-12)
    assert b.einstein_residual_sup < 1e-12


def test_riemann_symmetries(bumpy2):
    R = curvature(bumpy2).riemann
    assert np.abs(R + np.swapaxes(R, 0, 1)).max() < 1e-10
    assert np.abs(R + np.swapaxes(R, 2, 3)).max() < 1e-10
    assert np.abs(R - np.transpose(R, (2, 3, 0, 1, 4, 5))).max() < 1e-10


def test_ricci_symmetric(bumpy2):
    ric = curvature(bumpy2).ricci.full()
    assert np.array_equal(ric, np.swapaxes(ric, 0, 1))


@pytest.mark.parametrize("model,expected", [("sphere_stereo", 2.0), ("hyperbolic_ball", -2.0)])
def test_lambda_hat_space_forms(model, expected):
    lams, resid, hs = [], [], []
    for n in (17, 21, 25):
        b = curvature(make_model(model, 3, n))
        lams.append(b.lambda_hat)
        resid.append(b.einstein_residual_sup)
        hs.append(1.0 / n)
    assert abs(lams[-1] - expected) < 1e-5
    assert abs(lams[-1] - expected) < abs(lams[0] - expected)
    assert convergence_slope(hs, resid) >= 5.5


# -- second-kind operator -----------------------------------------------------

def test_second_kind_flat_zero(flat2, rng):
    h = band_limited_sym2(flat2, rng)
    assert np.abs(second_kind_apply(flat2, h).components).max() < 1e-12
    assert np.allclose(second_kind_spectrum(flat2, (3, 4)), 0.0, atol=1e-12)


@pytest.mark.parametrize("model", ["sphere_stereo", "hyperbolic_ball"])
def test_second_kind_of_metric_is_ricci(model):
    ctx = make_model(model, 3, 17)
    r = second_kind_apply(ctx, ctx.sym2(ctx.g)) - curvature(ctx).ricci
    assert ctx.sup(r) < 1e-4


def test_second_kind_spectra_opposite_signs(sphere3, hyper3):
    s = second_kind_spectrum(sphere3, sphere3.center_index())
    h = second_kind_spectrum(hyper3, hyper3.center_index())
    assert len(s) == len(h) == 5
    assert np.allclose(np.abs(s), 1.0, atol=1e-4) and np.allclose(np.abs(h), 1.0, atol=1e-4)
    assert np.sign(s[0]) == -np.sign(h[0])
    assert np.ptp(s) < 1e-4 and np.ptp(h) < 1e-4


def test_second_kind_spectrum_domain(sphere3):
    with pytest.raises(DomainError):
        second_kind_spectrum(sphere3, (0, 0, 0))


def test_second_kind_pointwise_self_adjoint(bumpy2, rng):
    h = band_limited_sym2(bumpy2, rng)
    k = band_limited_sym2(bumpy2, rng)
    a = ta.inner(second_kind_apply(bumpy2, h).full(), k.full(), bumpy2.g_inv, 2)
    b = ta.inner(h.full(), second_kind_apply(bumpy2, k).full(), bumpy2.g_inv, 2)
    assert np.abs(a - b).max() < 1e-10


# -- convention pin ------------------------------------------------------------

def test_pin_record():
    pin = convention_pin()
    assert pin["second_kind_sign"] in (-1, 1)
    assert pin["pin_slopes"][str(pin["second_kind_sign"])] >= 5.5


def test_pin_stable_across_models():
    base = convention_pin()["second_kind_sign"]
    assert convention_pin("hyperbolic_ball", 2)["second_kind_sign"] == base
    assert convention_pin("sphere_stereo", 3)["second_kind_sign"] == base
