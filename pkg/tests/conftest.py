import sys

import numpy as np
import pytest

from cnlab import make_model


@pytest.fixture(scope="session")
def flat2():
    return make_model("flat_torus", 2, 17)


@pytest.fixture(scope="session")
def flat3_aniso():
    G = [[1.0, 0.2, 0.0], [0.2, 1.5, -0.1], [0.0, -0.1, 0.8]]
    return make_model("flat_torus", 3, 11, {"G": G})


@pytest.fixture(scope="session")
def bumpy2():
    return make_model("bumpy_torus", 2, 21)


@pytest.fixture(scope="session")
def sphere3():
    return make_model("sphere_stereo", 3, 17)


@pytest.fixture(scope="session")
def hyper3():
    return make_model("hyperbolic_ball", 3, 17)


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


def sin_field(ctx, k=1, axis=0):
    return np.sin(2 * np.pi * k * ctx.coords[axis])


def counterexample(ctx):
    n = ctx.dim
    full = np.zeros((n, n) + ctx.grid_shape)
    s = sin_field(ctx)
    full[0, 0], full[1, 1] = s, -s
    return ctx.sym2(full)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
