import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cnlab import PreconditionError, UnsupportedBackendError, make_model
from cnlab.flow import (
    OPERATOR_FLOW_LABEL,
    RK4_STABILITY,
    FlowTrajectory,
    exact_trajectory,
    fit_decay_rate,
    flow_exact,
    flow_rk4,
    spectral_radius,
    theorem51_check,
)
from cnlab.gauge import synthesize_cn_torus, synthesize_tt_torus
from cnlab.random_fields import band_limited_scalar, band_limited_sym2
from cnlab.spectral import assemble, eigensolve

from conftest import counterexample

MU = 4 * np.pi**2
FLAT = make_model("flat_torus", 2, 17)
FLAT3 = make_model("flat_torus", 3, 9)


@pytest.fixture(scope="module")
def eigentensor():
    dec = eigensolve(assemble(FLAT, "lichnerowicz", backend="fourier_block"), 12, target=MU)
    return dec.eigenpairs[0].eigenvector


def test_exact_eigentensor_decay(eigentensor):
    for t in (0.01, 0.1):
        ratio = FLAT.l2_norm(flow_exact(FLAT, eigentensor, t)) / FLAT.l2_norm(eigentensor)
        assert abs(ratio - np.exp(-MU * t)) <= 1e-12


def test_exact_trivial_cases(eigentensor):
    assert flow_exact(FLAT, eigentensor, 0.0) is eigentensor
    const = synthesize_tt_torus(FLAT3, seed=1, modes=[(0, 0, 0)])
    out = flow_exact(FLAT3, const, 5.0)
    assert np.abs(out.components - const.components).max() < 1e-12


def test_exact_preconditions(bumpy2, eigentensor):
    with pytest.raises(UnsupportedBackendError):
        flow_exact(bumpy2, bumpy2.sym2(bumpy2.g), 0.1)
    with pytest.raises(ValueError):
        flow_exact(FLAT, eigentensor, -1.0)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.floats(0.0, 0.05), t=st.floats(0.0, 0.05))
def test_semigroup(seed, s, t):
    h = band_limited_sym2(FLAT, np.random.default_rng(seed))
    a = flow_exact(FLAT, flow_exact(FLAT, h, s), t)
    b = flow_exact(FLAT, h, s + t)
    assert np.abs(a.components - b.components).max() <= 1e-12 * max(1.0, np.abs(h.components).max())


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_monotone_decay_and_conservation(seed):
    rng = np.random.default_rng(seed)
    h = band_limited_sym2(FLAT, rng)
    traj = exact_trajectory(FLAT, h, np.linspace(0, 0.2, 21), thin=True)
    assert traj.states is None
    assert all(b <= a * (1 + 1e-14) for a, b in zip(traj.l2_norms, traj.l2_norms[1:]))
    assert max(abs(m - traj.mean_traces[0]) for m in traj.mean_traces) <= 1e-9


def test_trajectory_times_must_increase(eigentensor):
    with pytest.raises(ValueError):
        exact_trajectory(FLAT, eigentensor, [0.0, 0.1, 0.1])


def test_rk4_eigentensor(eigentensor):
    traj = flow_rk4(FLAT, eigentensor, 1e-4, 1000, thin=True)
    ratio = traj.l2_norms[-1] / traj.l2_norms[0]
    assert abs(ratio / np.exp(-MU * 0.1) - 1) <= 1e-6
    rate, r2 = fit_decay_rate(traj)
    assert abs(rate - MU) / MU <= 1e-6
    assert r2 >= 1 - 1e-10
    assert len(traj.times) == 1001 and traj.times[-1] == pytest.approx(0.1)


def test_rk4_zero_initial_data():
    zero = FLAT.sym2(np.zeros((2, 2) + FLAT.grid_shape))
    traj = flow_rk4(FLAT, zero, 1e-4, 5)
    assert all(n == 0.0 for n in traj.l2_norms)
    assert all(np.all(s.components == 0) for s in traj.states)


def test_rk4_order():
    h = band_limited_sym2(FLAT, np.random.default_rng(3))
    T = 0.02
    ref = flow_exact(FLAT, h, T)
    errs = []
    for dt in (4e-4, 2e-4, 1e-4):
        traj = flow_rk4(FLAT, h, dt, int(round(T / dt)), thin=True)
        errs.append(FLAT.sup(traj.meta["final"] - ref))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.8


def test_rk4_conservation_and_gauge_cn():
    u = band_limited_scalar(FLAT3, np.random.default_rng(8))
    h = synthesize_cn_torus(FLAT3, u, seed=8)
    traj = flow_rk4(FLAT3, h, 2e-4, 200, thin=True)
    assert max(abs(m - traj.mean_traces[0]) for m in traj.mean_traces) <= 1e-9
    assert max(traj.cn_residual_norms) <= traj.cn_residual_norms[0] + 1e-8
    assert max(traj.cn_residual_norms) <= 1e-8


def test_rk4_stability_refusal(eigentensor):
    rho = spectral_radius(FLAT)
    with pytest.raises(PreconditionError, match="use dt <="):
        flow_rk4(FLAT, eigentensor, 1.01 * RK4_STABILITY / rho, 1)
    flow_rk4(FLAT, eigentensor, 0.99 * RK4_STABILITY / rho, 1)


def test_rk4_argument_errors(eigentensor, sphere3):
    with pytest.raises(ValueError):
        flow_rk4(FLAT, eigentensor, 0.0, 3)
    with pytest.raises(UnsupportedBackendError):
        flow_rk4(sphere3, sphere3.sym2(sphere3.g), 1e-6, 1)


def test_bumpy_flow_is_labeled_operator_flow():
    ctx = make_model("bumpy_torus", 2, 13)
    h = band_limited_sym2(ctx, np.random.default_rng(1))
    rho = spectral_radius(ctx)
    traj = flow_rk4(ctx, h, 0.5 * RK4_STABILITY / rho, 3, thin=True)
    assert traj.label == OPERATOR_FLOW_LABEL
    assert "not geometric" in traj.to_dict()["label"]


def test_fit_examples(eigentensor):
    times = np.linspace(0, 0.1, 11)
    rate, r2 = fit_decay_rate(exact_trajectory(FLAT, eigentensor, times, thin=True))
    assert abs(rate - MU) <= 1e-9 and r2 >= 1 - 1e-10
    const = synthesize_tt_torus(FLAT3, seed=1, modes=[(0, 0, 0)])
    rate0, _ = fit_decay_rate(exact_trajectory(FLAT3, const, times, thin=True))
    assert abs(rate0) <= 1e-10


def test_fit_mixture():
    dec = eigensolve(assemble(FLAT, "lichnerowicz", backend="fourier_block"), 40, target=MU)
    h1 = next(p.eigenvector for p in dec.eigenpairs if abs(p.eigenvalue - MU) < 1e-6)
    h2 = next(p.eigenvector for p in dec.eigenpairs if abs(p.eigenvalue - 2 * MU) < 1e-6)
    h = h1 + h2
    early = exact_trajectory(FLAT, h, np.linspace(0, 0.05, 11), thin=True)
    _, r2_early = fit_decay_rate(early)
    assert r2_early < 1 - 1e-10
    late = exact_trajectory(FLAT, h, np.linspace(0.3, 0.5, 11), thin=True)
    rate, _ = fit_decay_rate(late)
    assert abs(rate - MU) / MU < 1e-4


def test_fit_floor_error(eigentensor):
    traj = exact_trajectory(FLAT, eigentensor, np.linspace(0, 2.0, 11), thin=True)
    with pytest.raises(PreconditionError, match="shorten"):
        fit_decay_rate(traj)


def test_theorem51_check():
    rep = theorem51_check(FLAT, MU)
    assert rep["decay_verified"]
    assert rep["eigentensors"] and all(r["rate_residual"] <= 1e-9 for r in rep["eigentensors"])
    assert all(v <= 1e-12 for r in rep["eigentensors"] for v in r["norm_residuals"].values())
    assert rep["excluded"] and all(e["reason"] == "mu > 0 required" for e in rep["excluded"])
    assert rep["window"]["empty"] and "lambda = 0" in rep["window"]["note"]


def test_csv_and_dict(eigentensor):
    traj = exact_trajectory(FLAT, eigentensor, [0.0, 0.01], thin=True)
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,l2_norm,cn_residual,mean_trace" and len(lines) == 3
    d = traj.to_dict()
    assert d["integrator"] == "spectral_exact" and d["dt"] is None
    assert isinstance(traj, FlowTrajectory)
