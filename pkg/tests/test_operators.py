import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnlab import PreconditionError, make_model
from cnlab.geometry import Valence, curvature
from cnlab.operators import (
    OperatorId,
    OperatorName,
    apply_operator,
    codifferential,
    divergence,
    exterior_d,
    gauge_term,
    hessian,
    hodge_1form,
    input_valence,
    lichnerowicz,
    linearized_ricci_formula,
    linearized_ricci_gateaux,
    ricci_composition,
    rough_laplacian,
    scalar_laplacian,
    second_kind_apply,
    sym_derivative,
    trace,
    trace_split,
)
from cnlab.random_fields import band_limited_one_form, band_limited_scalar, band_limited_sym2
from cnlab.gauge import synthesize_tt_torus

from conftest import counterexample, sin_field

FLAT = make_model("flat_torus", 2, 17)
BUMPY = make_model("bumpy_torus", 2, 17)
TWO_PI = 2 * np.pi


def test_operator_id_parse():
    assert OperatorId.parse("lichnerowicz") == OperatorId(OperatorName.LICHNEROWICZ, "general")
    assert str(OperatorId.parse("lichnerowicz:einstein_reduced")) == "lichnerowicz:einstein_reduced"
    with pytest.raises(ValueError):
        OperatorId.parse("trace:general")
    with pytest.raises(ValueError):
        OperatorId.parse("laplace_beltrami")


# -- trace split --------------------------------------------------------------

@pytest.mark.parametrize("model", ["flat_torus", "bumpy_torus", "sphere_stereo"])
def test_trace_split_metric(model):
    ctx = make_model(model, 3, 17)
    h0, u = trace_split(ctx, ctx.sym2(ctx.g))
    assert np.abs(h0.components).max() < 1e-12
    assert np.abs(u.components - 3).max() < 1e-12


def test_trace_split_pure_trace(rng):
    f = band_limited_scalar(BUMPY, rng)
    h0, u = trace_split(BUMPY, BUMPY.sym2(f.components * BUMPY.g))
    assert np.abs(h0.components).max() < 1e-12
    assert np.abs(u.components - 2 * f.components).max() < 1e-12


def test_trace_split_hand_example():
    s = sin_field(FLAT)
    full = np.zeros((2, 2) + FLAT.grid_shape)
    full[0, 0] = s
    h0, u = trace_split(FLAT, FLAT.sym2(full))
    assert np.abs(u.components - s).max() < 1e-15
    assert np.abs(h0.full()[0, 0] - s / 2).max() < 1e-15
    assert np.abs(h0.full()[1, 1] + s / 2).max() < 1e-15


def test_trace_free_part_orthogonal_to_metric(rng):
    h = band_limited_sym2(BUMPY, rng)
    h0, _ = trace_split(BUMPY, h)
    assert np.abs(trace(BUMPY, h0).components).max() < 1e-12


# -- divergence, sym_derivative --------------------------------------------------

def test_divergence_of_pure_trace(rng):
    f = band_limited_scalar(FLAT, rng)
    r = divergence(FLAT, FLAT.sym2(f.components * FLAT.g)) + exterior_d(FLAT, f)
    assert FLAT.sup(r) < 1e-10


def test_divergence_hand_example():
    d = divergence(FLAT, counterexample(FLAT)).components
    assert np.abs(d[0] + TWO_PI * np.cos(TWO_PI * FLAT.coords[0])).max() < 1e-12
    assert np.abs(d[1]).max() < 1e-12


def test_contracted_bianchi_bumpy():
    res = []
    for n in (17, 21, 25):
        ctx = make_model("bumpy_torus", 2, n)
        b = curvature(ctx)
        res.append(ctx.sup(divergence(ctx, b.ricci) + 0.5 * exterior_d(ctx, b.scalar)))
    assert res[2] < res[1] < res[0] and res[2] < 1e-3


def test_sym_derivative_of_exact_form(rng):
    f = band_limited_scalar(BUMPY, rng)
    r = sym_derivative(BUMPY, exterior_d(BUMPY, f)) - hessian(BUMPY, f)
    assert BUMPY.sup(r) < 1e-10


def test_sym_derivative_zero_and_hand():
    z = FLAT.one_form(np.zeros((2,) + FLAT.grid_shape))
    assert np.all(sym_derivative(FLAT, z).components == 0)
    w = np.zeros((2,) + FLAT.grid_shape)
    w[0] = np.sin(TWO_PI * FLAT.coords[1])
    s = sym_derivative(FLAT, FLAT.one_form(w)).full()
    assert np.abs(s[0, 1] - np.pi * np.cos(TWO_PI * FLAT.coords[1])).max() < 1e-12
    assert np.abs(s[0, 0]).max() < 1e-12 and np.abs(s[1, 1]).max() < 1e-12


@pytest.mark.parametrize("ctx", [FLAT, make_model("flat_torus", 3, 9, {"G": [[2, 0.3, 0], [0.3, 1, 0], [0, 0, 0.5]]})])
def test_adjointness(ctx, rng):
    h = band_limited_sym2(ctx, rng)
    w = band_limited_one_form(ctx, rng)
    lhs = ctx.l2_inner(divergence(ctx, h), w)
    rhs = ctx.l2_inner(h, sym_derivative(ctx, w))
    assert abs(lhs - rhs) <= 1e-9 * ctx.l2_norm(h) * ctx.l2_norm(w)


# -- Laplacians ---------------------------------------------------------------

def test_rough_laplacian_fourier():
    s = sin_field(FLAT)
    full = np.stack([np.stack([s, 0.3 * s]), np.stack([0.3 * s, -s])])
    h = FLAT.sym2(full)
    r = rough_laplacian(FLAT, h) - (4 * np.pi**2) * h
    assert FLAT.sup(r) < 1e-10


def test_rough_laplacian_constant_and_metric():
    c = FLAT.sym2(np.broadcast_to(np.array([[1.0, 2.0], [2.0, 3.0]])[:, :, None, None], (2, 2) + FLAT.grid_shape))
    assert FLAT.sup(rough_laplacian(FLAT, c)) < 1e-10
    assert BUMPY.sup(rough_laplacian(BUMPY, BUMPY.sym2(BUMPY.g))) < 1e-10


def test_scalar_laplacian_examples():
    f = FLAT.scalar(sin_field(FLAT))
    assert FLAT.sup(scalar_laplacian(FLAT, f) - 4 * np.pi**2 * f) < 1e-10
    assert FLAT.sup(scalar_laplacian(FLAT, FLAT.scalar(2.0))) < 1e-10
    ctx = make_model("flat_torus", 3, 9, {"G": np.diag([1.0, 4.0, 1.0])})
    g = ctx.scalar(np.sin(TWO_PI * ctx.coords[1]))
    assert ctx.sup(scalar_laplacian(ctx, g) - np.pi**2 * g) < 1e-10


def test_scalar_laplacian_nonnegative(rng):
    for ctx in (FLAT, BUMPY):
        f = band_limited_scalar(ctx, rng)
        assert ctx.l2_inner(scalar_laplacian(ctx, f), f) >= -1e-9


def test_hodge_examples(rng):
    df = exterior_d(FLAT, FLAT.scalar(sin_field(FLAT)))
    assert FLAT.sup(hodge_1form(FLAT, df) - 4 * np.pi**2 * df) < 1e-9
    const = FLAT.one_form(np.stack([np.full(FLAT.grid_shape, 1.5), np.full(FLAT.grid_shape, -0.5)]))
    assert FLAT.sup(hodge_1form(FLAT, const)) < 1e-10
    f = band_limited_scalar(BUMPY, rng)
    assert BUMPY.sup(hodge_1form(BUMPY, exterior_d(BUMPY, f)) - exterior_d(BUMPY, scalar_laplacian(BUMPY, f))) < 1e-9


def test_codifferential_sign():
    w = FLAT.one_form(np.stack([np.sin(TWO_PI * FLAT.coords[0]), np.zeros(FLAT.grid_shape)]))
    d = codifferential(FLAT, w).components
    assert np.abs(d + TWO_PI * np.cos(TWO_PI * FLAT.coords[0])).max() < 1e-12


# -- Lichnerowicz ----------------------------------------------------------------

def test_lichnerowicz_flat_eigentensor():
    h0 = counterexample(FLAT)
    assert FLAT.sup(lichnerowicz(FLAT, h0) - 4 * np.pi**2 * h0) < 1e-10


def test_lichnerowicz_metric_on_einstein(sphere3):
    lg = lichnerowicz(sphere3, sphere3.sym2(sphere3.g))
    assert sphere3.sup(trace(sphere3, lg)) < 1e-3
    assert sphere3.sup(lg) < 1e-3


def test_lichnerowicz_general_split(rng):
    h = band_limited_sym2(BUMPY, rng)
    manual = rough_laplacian(BUMPY, h) - 2 * second_kind_apply(BUMPY, h) + ricci_composition(BUMPY, h)
    assert np.array_equal(lichnerowicz(BUMPY, h).components, manual.components)


def test_einstein_reduced_refused_on_bumpy(rng):
    h = band_limited_sym2(BUMPY, rng)
    with pytest.raises(PreconditionError, match="not Einstein"):
        lichnerowicz(BUMPY, h, "einstein_reduced")


@pytest.mark.parametrize("variant", ["einstein_reduced", "connection"])
def test_lichnerowicz_variants_agree_on_sphere(sphere3, rng, variant):
    h = band_limited_sym2(sphere3, rng)
    assert sphere3.sup(lichnerowicz(sphere3, h) - lichnerowicz(sphere3, h, variant)) < 5e-2 * sphere3.sup(h)


def test_trace_identity_flat(rng):
    h = band_limited_sym2(FLAT, rng)
    r = trace(FLAT, lichnerowicz(FLAT, h)) - scalar_laplacian(FLAT, trace(FLAT, h))
    assert FLAT.sup(r) < 1e-10


# -- linearized Ricci -------------------------------------------------------------

def test_linearized_ricci_tt_is_half_lichnerowicz():
    ctx = make_model("flat_torus", 3, 9)
    h = synthesize_tt_torus(ctx, seed=4)
    assert ctx.sup(linearized_ricci_formula(ctx, h) - 0.5 * lichnerowicz(ctx, h)) < 1e-10
    assert ctx.sup(gauge_term(ctx, h)) < 1e-10


def test_gateaux_trivial_cases(rng):
    zero = FLAT.sym2(np.zeros((2, 2) + FLAT.grid_shape))
    assert np.all(linearized_ricci_gateaux(FLAT, zero).components == 0)
    cg = FLAT.sym2(0.7 * FLAT.g)
    assert FLAT.sup(linearized_ricci_gateaux(FLAT, cg)) < 1e-9


def test_gateaux_eps_slope(rng):
    ctx = make_model("bumpy_torus", 2, 25)
    h = band_limited_sym2(ctx, rng)
    h = h * (1 / ctx.sup(h))
    exact = linearized_ricci_formula(ctx, h)
    errs = [ctx.sup(linearized_ricci_gateaux(ctx, h, e) - exact) for e in (1e-1, 5e-2)]
    assert np.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.3)


def test_gateaux_refuses_indefinite_perturbation():
    h = FLAT.sym2(-2.0 * FLAT.g)
    with pytest.raises(PreconditionError, match="smaller eps"):
        linearized_ricci_gateaux(FLAT, h, eps=1.0)


def test_gateaux_formula_sphere_chart(rng):
    ctx = make_model("sphere_stereo", 2, 25)
    h = band_limited_sym2(ctx, rng)
    h = h * (1 / ctx.sup(h))
    assert ctx.sup(linearized_ricci_formula(ctx, h) - linearized_ricci_gateaux(ctx, h)) < 1e-4


# -- properties --------------------------------------------------------------------

LINEAR_OPS = [
    "divergence",
    "rough_laplacian",
    "lichnerowicz:general",
    "lichnerowicz:connection",
    "ricci_composition",
    "linearized_ricci:formula",
    "scalar_laplacian",
    "hessian",
    "exterior_d",
    "hodge_1form",
    "sym_derivative",
]


def _random_input(ctx, op, rng):
    v = input_valence(OperatorId.parse(op))
    if v is Valence.SCALAR:
        return band_limited_scalar(ctx, rng)
    if v is Valence.ONE_FORM:
        return band_limited_one_form(ctx, rng)
    return band_limited_sym2(ctx, rng)


@settings(max_examples=25, deadline=None)
@given(
    op=st.sampled_from(LINEAR_OPS),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    seed=st.integers(0, 2**32 - 1),
)
def test_linearity(op, a, b, seed):
    rng = np.random.default_rng(seed)
    h, k = _random_input(BUMPY, op, rng), _random_input(BUMPY, op, rng)
    lhs = apply_operator(BUMPY, op, a * h + b * k)
    rhs = a * apply_operator(BUMPY, op, h) + b * apply_operator(BUMPY, op, k)
    scale = max(1.0, np.abs(lhs.components).max())
    assert np.abs((lhs - rhs).components).max() <= 1e-12 * scale * (1 + abs(a) + abs(b))


@settings(max_examples=15, deadline=None)
@given(op=st.sampled_from(["rough_laplacian", "lichnerowicz:general", "scalar_laplacian", "hodge_1form"]), seed=st.integers(0, 2**32 - 1))
def test_self_adjoint_on_flat_torus(op, seed):
    rng = np.random.default_rng(seed)
    h, k = _random_input(FLAT, op, rng), _random_input(FLAT, op, rng)
    lhs = FLAT.l2_inner(apply_operator(FLAT, op, h), k)
    rhs = FLAT.l2_inner(h, apply_operator(FLAT, op, k))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))
