"""Model manifolds, tensor fields and metric-derived curvature.

A :class:`ManifoldContext` is a single coordinate chart sampled on a
tensor-product grid.  Tori are periodic unit cells; the open charts
(stereographic sphere, Poincare ball, upper half space) are cubes around a
chart centre, padded with ghost layers where the closed-form metric is still
evaluated so that nested central stencils never reach the grid edge inside
the evaluation region.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Mapping, Optional

import numpy as np

from . import tensor as ta
from .derivatives import Engine, FourierEngine, OpenFD, PeriodicFD
from .errors import ConfigurationError, ConstructionError, DomainError

logger = logging.getLogger(__name__)

# Deepest composition of first derivatives used by any operator in the
# package (e.g. delta(Delta_L h) = three derivatives of h and of g).
NEST_DEPTH = 3

MODELS = ("flat_torus", "bumpy_torus", "sphere_stereo", "hyperbolic_ball", "hyperbolic_half")

_DEFAULT_EXTENT = {"sphere_stereo": 0.5, "hyperbolic_ball": 0.15, "hyperbolic_half": 0.25}


class ChartKind(str, Enum):
    PERIODIC_TORUS = "periodic_torus"
    OPEN_BALL_CHART = "open_ball_chart"
    HALF_SPACE_CHART = "half_space_chart"


class Valence(str, Enum):
    SCALAR = "scalar"
    ONE_FORM = "one_form"
    SYM2 = "sym2"


@dataclass(frozen=True)
class ChartSpec:
    kind: ChartKind
    dim: int
    resolution: int
    stencil_order: int = 6
    interior_margin: float = 0.0
    derivative: str = "fd"  # "fd" or "fourier" (periodic only)
    extent: float = 0.5  # half-width of an open chart

    def __post_init__(self):
        if self.dim < 2:
            raise ConfigurationError(f"dim must be >= 2, got {self.dim}")
        if self.stencil_order not in (2, 4, 6, 8):
            raise ConfigurationError(f"stencil_order must be one of 2, 4, 6, 8, got {self.stencil_order}")
        if self.resolution % 2 == 0:
            raise ConfigurationError(f"resolution must be odd, got {self.resolution}")
        if self.derivative == "fourier":
            if self.resolution < 5:
                raise ConfigurationError(f"Fourier backend needs resolution >= 5, got {self.resolution}")
        elif self.resolution < 2 * self.stencil_order + 1:
            raise ConfigurationError(
                f"resolution {self.resolution} below stencil requirement "
                f"2*{self.stencil_order}+1 = {2 * self.stencil_order + 1}"
            )
        if self.derivative not in ("fd", "fourier"):
            raise ConfigurationError(f"unknown derivative backend {self.derivative!r}")
        if self.kind is ChartKind.PERIODIC_TORUS:
            if self.interior_margin != 0:
                raise ConfigurationError("periodic charts have interior_margin = 0")
        else:
            if not 0 < self.interior_margin < 0.5:
                raise ConfigurationError("open charts need 0 < interior_margin < 0.5")
            if self.derivative == "fourier":
                raise ConfigurationError("Fourier differentiation is only available on tori")

    @property
    def periodic(self) -> bool:
        return self.kind is ChartKind.PERIODIC_TORUS

    @property
    def ghost(self) -> int:
        return 0 if self.periodic else (self.stencil_order // 2) * NEST_DEPTH


@dataclass(frozen=True, eq=False)
class TensorField:
    """Component arrays over grid samples; ``sym2`` stores the upper triangle."""

    valence: Valence
    components: np.ndarray
    context_id: int

    def full(self) -> np.ndarray:
        if self.valence is Valence.SYM2:
            return ta.unpack(self.components)
        return self.components

    def _check(self, other: "TensorField"):
        if other.valence is not self.valence or other.context_id != self.context_id:
            raise ValueError("fields belong to different valences or contexts")

    def __add__(self, other):
        self._check(other)
        return TensorField(self.valence, self.components + other.components, self.context_id)

    def __sub__(self, other):
        self._check(other)
        return TensorField(self.valence, self.components - other.components, self.context_id)

    def __neg__(self):
        return TensorField(self.valence, -self.components, self.context_id)

    def __mul__(self, c):
        return TensorField(self.valence, self.components * c, self.context_id)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class MetricField:
    g: TensorField
    g_inv: TensorField
    sqrt_det: TensorField

    @property
    def g_full(self) -> np.ndarray:
        return self.g.full()

    @property
    def g_inv_full(self) -> np.ndarray:
        return self.g_inv.full()


_uid = itertools.count(1)


@dataclass(frozen=True, eq=False)
class ManifoldContext:
    chart: ChartSpec
    metric: MetricField
    model_name: str
    params: Mapping[str, Any]
    coords: np.ndarray
    engine: Engine
    interior: np.ndarray
    quadrature_weights: Optional[np.ndarray]
    uid: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def grid_shape(self) -> tuple[int, ...]:
        return self.coords.shape[1:]

    @property
    def spacing(self) -> float:
        return self.engine.spacing[0]

    @property
    def is_torus(self) -> bool:
        return self.chart.periodic

    @property
    def is_flat(self) -> bool:
        return self.model_name == "flat_torus" and "metric_source" not in self.params

    @property
    def is_einstein(self) -> bool:
        if "metric_source" in self.params:
            return False
        return self.model_name in ("flat_torus", "sphere_stereo", "hyperbolic_ball", "hyperbolic_half")

    @property
    def g(self) -> np.ndarray:
        return self._cached("g", self.metric.g_full)

    @property
    def g_inv(self) -> np.ndarray:
        return self._cached("g_inv", self.metric.g_inv_full)

    def _cached(self, key, value):
        return self._cache.setdefault(key, value)

    def volume(self) -> float:
        return float(np.sum(self.require_quadrature()))

    def require_quadrature(self) -> np.ndarray:
        if self.quadrature_weights is None:
            raise DomainError(f"{self.model_name}: open charts carry no global quadrature")
        return self.quadrature_weights

    # field constructors -------------------------------------------------
    def scalar(self, values) -> TensorField:
        values = np.asarray(values, dtype=float)
        values = np.broadcast_to(values, self.grid_shape).copy()
        return TensorField(Valence.SCALAR, values, self.uid)

    def one_form(self, comps) -> TensorField:
        comps = np.asarray(comps, dtype=float)
        if comps.shape != (self.dim,) + self.grid_shape:
            raise ValueError(f"one-form components must have shape {(self.dim,) + self.grid_shape}")
        return TensorField(Valence.ONE_FORM, comps, self.uid)

    def sym2(self, full) -> TensorField:
        full = np.asarray(full, dtype=float)
        if full.shape != (self.dim, self.dim) + self.grid_shape:
            raise ValueError(f"sym2 components must have shape {(self.dim, self.dim) + self.grid_shape}")
        asym = full - np.swapaxes(full, 0, 1)
        scale = max(float(np.nanmax(np.abs(full), initial=0.0)), 1.0)
        if np.nanmax(np.abs(asym), initial=0.0) > 1e-12 * scale:
            raise ValueError("sym2 input is not symmetric")
        return TensorField(Valence.SYM2, ta.pack(full, self.dim), self.uid)

    def check(self, f: TensorField, valence: Optional[Valence] = None) -> TensorField:
        if f.context_id != self.uid:
            raise ValueError("field does not belong to this context")
        if valence is not None and f.valence is not valence:
            raise ValueError(f"expected a {valence.value} field, got {f.valence.value}")
        return f

    # reductions ---------------------------------------------------------
    def pointwise_norm(self, f: TensorField) -> np.ndarray:
        rank = {Valence.SCALAR: 0, Valence.ONE_FORM: 1, Valence.SYM2: 2}[f.valence]
        if rank == 0:
            return np.abs(f.components)
        return ta.pointwise_norm(f.full(), self.g_inv, rank)

    def sup(self, f_or_values) -> float:
        """Max over interior samples of the pointwise metric norm."""
        vals = self.pointwise_norm(f_or_values) if isinstance(f_or_values, TensorField) else np.abs(f_or_values)
        inside = vals[self.interior]
        if np.isnan(inside).any():
            raise DomainError("operator nesting reached the interior region of an open chart")
        return float(inside.max()) if inside.size else 0.0

    def integrate(self, values: np.ndarray) -> float:
        # numpy's pairwise summation over a fixed shape is reproducible
        return float(np.sum(self.require_quadrature() * values))

    def l2_inner(self, a: TensorField, b: TensorField) -> float:
        rank = {Valence.SCALAR: 0, Valence.ONE_FORM: 1, Valence.SYM2: 2}[a.valence]
        return self.integrate(ta.inner(a.full(), b.full(), self.g_inv, rank))

    def l2_norm(self, f: TensorField) -> float:
        return float(np.sqrt(max(self.l2_inner(f, f), 0.0)))

    def mean(self, values: np.ndarray) -> float:
        if self.is_torus:
            w = self.require_quadrature()
            return float(np.sum(w * values) / np.sum(w))
        return float(np.mean(values[self.interior]))

    def value_at(self, f: TensorField, index) -> np.ndarray:
        """Components of ``f`` at a grid sample, refusing samples outside the interior."""
        index = tuple(int(i) for i in index)
        if not self.interior[index]:
            raise DomainError(f"sample {index} lies outside the interior of {self.model_name}")
        return f.full()[(Ellipsis,) + index]

    def with_metric(self, g_full: np.ndarray, label: str = "perturbed") -> "ManifoldContext":
        """Same chart and grid, different metric (used by the Gateaux oracle)."""
        uid = next(_uid)
        metric = _metric_field(g_full, self.chart, uid, self.coords)
        weights = None
        if self.quadrature_weights is not None:
            weights = np.prod(self.engine.spacing) * metric.sqrt_det.components
        return ManifoldContext(
            chart=self.chart,
            metric=metric,
            model_name=self.model_name,
            params=dict(self.params, metric_source=label),
            coords=self.coords,
            engine=self.engine,
            interior=self.interior,
            quadrature_weights=weights,
            uid=uid,
        )

    def center_index(self) -> tuple[int, ...]:
        return tuple(s // 2 for s in self.grid_shape)

    def descriptor(self) -> dict:
        return {
            "model": self.model_name,
            "dim": self.dim,
            "resolution": self.chart.resolution,
            "stencil_order": self.chart.stencil_order,
            "interior_margin": self.chart.interior_margin,
            "derivative": self.engine.kind,
            "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
        }


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# ---------------------------------------------------------------------------
# model catalogue


def bump_matrix(dim: int) -> np.ndarray:
    """Fixed symmetric direction of the bumpy-torus perturbation, spectral norm 1."""
    base = np.array(
        [
            [1.0, 0.5, 0.0, 0.25],
            [0.5, -0.5, 0.5, 0.0],
            [0.0, 0.5, 0.75, -0.5],
            [0.25, 0.0, -0.5, -1.0],
        ]
    )[:dim, :dim]
    return base / np.max(np.abs(np.linalg.eigvalsh(base)))


def make_model(
    name: str,
    dim: int,
    resolution: int,
    params: Optional[Mapping[str, Any]] = None,
    *,
    stencil_order: int = 6,
    interior_margin: Optional[float] = None,
    derivative: Optional[str] = None,
) -> ManifoldContext:
    """Sample one of the closed-form model metrics on a chart grid."""
    params = dict(params or {})
    if name not in MODELS:
        raise ConfigurationError(f"unknown model {name!r}; choose from {', '.join(MODELS)}")
    if not 2 <= dim <= 4:
        raise ConfigurationError(f"dim must lie in [2, 4], got {dim}")

    if name in ("flat_torus", "bumpy_torus"):
        kind = ChartKind.PERIODIC_TORUS
        margin = 0.0 if interior_margin is None else interior_margin
        if derivative is None:
            derivative = "fourier" if name == "flat_torus" else "fd"
        extent = 0.5
    else:
        kind = ChartKind.HALF_SPACE_CHART if name == "hyperbolic_half" else ChartKind.OPEN_BALL_CHART
        margin = 0.2 if interior_margin is None else interior_margin
        derivative = derivative or "fd"
        extent = float(params.get("extent", _DEFAULT_EXTENT[name]))

    chart = ChartSpec(kind, dim, resolution, stencil_order, margin, derivative, extent)
    coords, spacing, interior = _grid(chart, name)
    if chart.periodic:
        engine = (FourierEngine if derivative == "fourier" else _periodic_fd(stencil_order))(
            dim, coords.shape[1:], spacing
        )
    else:
        engine = OpenFD(dim, coords.shape[1:], spacing, stencil_order)

    g = _closed_form_metric(name, dim, coords, params)
    uid = next(_uid)
    metric = _metric_field(g, chart, uid, coords)
    weights = None
    if chart.periodic:
        weights = float(np.prod(spacing)) * metric.sqrt_det.components
    ctx = ManifoldContext(
        chart=chart,
        metric=metric,
        model_name=name,
        params=params,
        coords=coords,
        engine=engine,
        interior=interior,
        quadrature_weights=weights,
        uid=uid,
    )
    logger.debug("built %s dim=%d res=%d (%s)", name, dim, resolution, engine.kind)
    return ctx


def _periodic_fd(order):
    def build(dim, shape, spacing):
        return PeriodicFD(dim, shape, spacing, order)

    return build


def _grid(chart: ChartSpec, name: str):
    n, N = chart.dim, chart.resolution
    if chart.periodic:
        axis = np.arange(N) / N
        axes = [axis] * n
        spacing = tuple([1.0 / N] * n)
        interior = np.ones((N,) * n, dtype=bool)
    else:
        L = chart.extent
        h = 2 * L / (N - 1)
        gh = chart.ghost
        local = (np.arange(-gh, N + gh) - (N - 1) / 2) * h
        axes = [local.copy() for _ in range(n)]
        if name == "hyperbolic_half":
            axes[-1] = axes[-1] + 1.0
        spacing = tuple([h] * n)
        inner = np.abs(local) <= (1 - chart.interior_margin) * L + 1e-12 * L
        interior = np.ones((len(local),) * n, dtype=bool)
        for a in range(n):
            shape = [1] * n
            shape[a] = len(local)
            interior = interior & inner.reshape(shape)
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    return coords, spacing, interior


def _closed_form_metric(name, dim, x, params) -> np.ndarray:
    shape = x.shape[1:]
    eye = np.eye(dim).reshape((dim, dim) + (1,) * dim)
    if name == "flat_torus":
        G = np.asarray(params.get("G", np.eye(dim)), dtype=float)
        if G.shape != (dim, dim):
            raise ConfigurationError(f"flat_torus parameter G must be {dim}x{dim}")
        if not np.allclose(G, G.T):
            raise ConfigurationError("flat_torus parameter G must be symmetric")
        return np.broadcast_to(G.reshape((dim, dim) + (1,) * dim), (dim, dim) + shape).copy()
    if name == "bumpy_torus":
        a = float(params.get("a", 0.1))
        freq = int(params.get("frequency", 1))
        B = bump_matrix(dim).reshape((dim, dim) + (1,) * dim)
        bump = np.sin(2 * np.pi * freq * x[0]) * np.cos(2 * np.pi * freq * x[1])
        return eye + a * bump * B
    scale = float(params.get("scale", 1.0))
    r2 = np.sum(x**2, axis=0)
    if name == "sphere_stereo":
        factor = 4 * scale**2 / (1 + r2) ** 2
    elif name == "hyperbolic_ball":
        if np.any(r2 >= 1):
            raise ConstructionError("hyperbolic_ball grid leaves the unit ball; reduce params.extent")
        factor = 4 * scale**2 / (1 - r2) ** 2
    else:
        if np.any(x[-1] <= 0):
            raise ConstructionError("hyperbolic_half grid reaches x_n <= 0; reduce params.extent")
        factor = scale**2 / x[-1] ** 2
    return eye * factor


def _metric_field(g: np.ndarray, chart: ChartSpec, uid: int, coords: np.ndarray) -> MetricField:
    if not np.all(np.isfinite(g)):
        bad = np.argwhere(~np.isfinite(g).all(axis=(0, 1)))[0]
        raise ConstructionError(f"metric is not finite at sample {tuple(bad)} (x = {coords[(slice(None),) + tuple(bad)]})")
    eig = ta.eigvalsh_pointwise(g)
    lo = eig[0]
    if np.any(lo <= 0):
        bad = tuple(int(i) for i in np.unravel_index(np.argmin(lo), lo.shape))
        raise ConstructionError(
            f"metric not positive-definite at sample {bad} "
            f"(x = {coords[(slice(None),) + bad].tolist()}, min eigenvalue {lo[bad]:.3e})"
        )
    g_inv = ta.inv_pointwise(g)
    g_inv = ta.sym(g_inv)
    sqrt_det = np.sqrt(ta.det_pointwise(g))
    n = chart.dim
    return MetricField(
        g=TensorField(Valence.SYM2, ta.pack(g, n), uid),
        g_inv=TensorField(Valence.SYM2, ta.pack(g_inv, n), uid),
        sqrt_det=TensorField(Valence.SCALAR, sqrt_det, uid),
    )


# ---------------------------------------------------------------------------
# differentiation and connection


def differentiate(ctx: ManifoldContext, f: TensorField, axis: int) -> TensorField:
    """Componentwise partial derivative along a coordinate axis."""
    ctx.check(f)
    return TensorField(f.valence, ctx.engine.d(f.components, axis), f.context_id)


def _partials(ctx: ManifoldContext, arr: np.ndarray) -> np.ndarray:
    return ctx.engine.grad(arr)


def christoffel_symbols(ctx: ManifoldContext) -> np.ndarray:
    """``gamma[k, i, j]`` = Gamma^k_{ij}, symmetric in (i, j) exactly."""
    if "christoffel" in ctx._cache:
        return ctx._cache["christoffel"]
    n = ctx.dim
    if ctx.is_flat:
        gamma = np.zeros((n, n, n) + ctx.grid_shape)
        ctx._cache["christoffel"] = gamma
        return gamma
    dg = _partials(ctx, ctx.g)  # dg[a, i, j] = d_a g_ij
    # first kind: Gamma_{l,ij} = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    first = 0.5 * (
        np.transpose(dg, (2, 0, 1) + tuple(range(3, dg.ndim)))
        + np.transpose(dg, (2, 1, 0) + tuple(range(3, dg.ndim)))
        - dg
    )
    gamma = np.einsum("kl...,lij...->kij...", ctx.g_inv, first)
    gamma = 0.5 * (gamma + np.swapaxes(gamma, 1, 2))
    ctx._cache["christoffel"] = gamma
    return gamma


@dataclass(frozen=True, eq=False)
class CurvatureBundle:
    christoffel: np.ndarray
    riemann: Optional[np.ndarray] = None
    riemann_raw: Optional[np.ndarray] = None
    ricci: Optional[TensorField] = None
    scalar: Optional[TensorField] = None
    lambda_hat: Optional[float] = None
    lambda_max_deviation: Optional[float] = None
    einstein_residual_sup: Optional[float] = None
    second_kind_sign: Optional[int] = None


def christoffel(ctx: ManifoldContext) -> CurvatureBundle:
    return CurvatureBundle(christoffel=christoffel_symbols(ctx))


def _riemann_base(ctx: ManifoldContext) -> tuple[np.ndarray, np.ndarray]:
    """Lowered R_{abcd} = <R(d_a, d_b) d_c, d_d> with R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y].

    Returns (raw, ricci) where ricci is the symmetrised contraction g^{ad} R_{abcd}.
    """
    key = "riemann_base"
    if key in ctx._cache:
        return ctx._cache[key]
    gam = christoffel_symbols(ctx)
    dgam = _partials(ctx, gam)  # dgam[a, l, j, k] = d_a Gamma^l_jk
    gg = np.einsum("lim...,mjk...->lijk...", gam, gam)  # Gamma^l_im Gamma^m_jk
    # R^l_{ijk} = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik, stored as up[l, i, j, k]
    d_term = np.transpose(dgam, (1, 0, 2, 3) + tuple(range(4, dgam.ndim)))
    up = d_term - np.swapaxes(d_term, 1, 2) + gg - np.swapaxes(gg, 1, 2)
    raw = np.einsum("lm...,mijk...->ijkl...", ctx.g, up)
    ricci = np.einsum("ad...,abcd...->bc...", ctx.g_inv, raw)
    ricci = ta.sym(ricci)
    ctx._cache[key] = (raw, ricci)
    return raw, ricci


def curvature(ctx: ManifoldContext, sign: Optional[int] = None) -> CurvatureBundle:
    """Full curvature bundle with the second-kind sign fixed by :func:`convention_pin`."""
    if sign is None:
        sign = convention_pin()["second_kind_sign"]
    key = ("curvature", sign)
    if key in ctx._cache:
        return ctx._cache[key]
    raw, ric = _riemann_base(ctx)
    pinned = sign * ta.project_algebraic_curvature(raw)
    s = np.einsum("ij...,ij...->...", ctx.g_inv, ric)
    n = ctx.dim
    inside = (s / n)[ctx.interior]
    lam = float(np.mean(inside))
    dev = float(np.max(np.abs(inside - lam))) if inside.size else 0.0
    resid = ctx.sup(ctx.sym2(ric - lam * ctx.g))
    bundle = CurvatureBundle(
        christoffel=christoffel_symbols(ctx),
        riemann=pinned,
        riemann_raw=raw,
        ricci=ctx.sym2(ric),
        scalar=ctx.scalar(s),
        lambda_hat=lam,
        lambda_max_deviation=dev,
        einstein_residual_sup=resid,
        second_kind_sign=sign,
    )
    ctx._cache[key] = bundle
    return bundle


def ricci_base(ctx: ManifoldContext) -> np.ndarray:
    """Ricci tensor (positive on spheres); independent of the second-kind sign pin."""
    return _riemann_base(ctx)[1]


def second_kind_apply(ctx: ManifoldContext, h: TensorField, sign: Optional[int] = None) -> TensorField:
    """(R(h))_ij = R_ikjl h^kl with the pinned Riemann convention."""
    ctx.check(h, Valence.SYM2)
    R = curvature(ctx, sign).riemann
    h_up = ta.raise_all(h.full(), ctx.g_inv, 2)
    out = np.einsum("ikjl...,kl...->ij...", R, h_up)
    return ctx.sym2(ta.sym(out))


def _tracefree_basis(dim: int) -> np.ndarray:
    """Frobenius-orthonormal basis of trace-free symmetric dim x dim matrices."""
    mats = []
    for i in range(dim):
        for j in range(i + 1, dim):
            e = np.zeros((dim, dim))
            e[i, j] = e[j, i] = 1 / np.sqrt(2)
            mats.append(e)
    for k in range(1, dim):
        e = np.zeros((dim, dim))
        e[np.arange(k), np.arange(k)] = 1.0
        e[k, k] = -k
        mats.append(e / np.sqrt(k * (k + 1)))
    return np.array(mats)


def second_kind_matrix(ctx: ManifoldContext, index, sign: Optional[int] = None) -> np.ndarray:
    """Matrix of the second-kind operator on trace-free sym2 in an orthonormal frame at a sample."""
    index = tuple(int(i) for i in index)
    if not ctx.interior[index]:
        raise DomainError(f"sample {index} lies outside the interior of {ctx.model_name}")
    R = curvature(ctx, sign).riemann[(Ellipsis,) + index]
    g = ctx.g[(Ellipsis,) + index]
    # E columns form a g-orthonormal frame
    E = np.linalg.inv(np.linalg.cholesky(g)).T
    Rf = np.einsum("abcd,ai,bj,ck,dl->ijkl", R, E, E, E, E)
    basis = _tracefree_basis(ctx.dim)
    images = np.einsum("ikjl,mkl->mij", Rf, basis)
    mat = np.einsum("pij,qij->pq", basis, images)
    return 0.5 * (mat + mat.T)


def second_kind_spectrum(ctx: ManifoldContext, point, sign: Optional[int] = None) -> list[float]:
    """Eigenvalues (ascending) of the second-kind operator restricted to trace-free tensors."""
    return [float(v) for v in np.linalg.eigvalsh(second_kind_matrix(ctx, point, sign))]


# ---------------------------------------------------------------------------
# convention pin


PIN_RESOLUTIONS = (17, 25, 33)


@lru_cache(maxsize=None)
def convention_pin(model: str = "sphere_stereo", dim: int = 2, order: int = 6) -> dict:
    """Choose the sign of the second-kind operator by Weitzenboeck closure.

    For each candidate sign the residual
    ``Delta_L^conn h - (rough h - 2 sign*R_base(h) + 2 lambda h)`` is computed on an
    Einstein chart, where ``Delta_L^conn`` is the connection (commutator) form of
    the Lichnerowicz Laplacian, which involves no Riemann tensor.  The sign whose
    residual converges at the stencil order is kept.
    """
    from .operators import rough_laplacian, lichnerowicz_connection
    from .random_fields import band_limited_sym2

    residuals = {+1: [], -1: []}
    spacings = []
    for res in PIN_RESOLUTIONS:
        ctx = make_model(model, dim, res, stencil_order=order)
        raw, ric = _riemann_base(ctx)
        rb = ta.project_algebraic_curvature(raw)
        s = np.einsum("ij...,ij...->...", ctx.g_inv, ric)
        lam = float(np.mean((s / dim)[ctx.interior]))
        h = band_limited_sym2(ctx, np.random.default_rng(12345), bandwidth=1)
        conn = lichnerowicz_connection(ctx, h).full()
        rough = rough_laplacian(ctx, h).full()
        h_up = ta.raise_all(h.full(), ctx.g_inv, 2)
        ring_base = ta.sym(np.einsum("ikjl...,kl...->ij...", rb, h_up))
        for sgn in (+1, -1):
            weitz = rough - 2 * sgn * ring_base + 2 * lam * h.full()
            residuals[sgn].append(ctx.sup(ctx.sym2(ta.sym(conn - weitz))))
        spacings.append(ctx.spacing)

    slopes = {sgn: convergence_slope(spacings, residuals[sgn]) for sgn in (+1, -1)}
    winners = [
        sgn
        for sgn in (+1, -1)
        if slopes[sgn] >= order - 0.5 and residuals[sgn][-1] < 1e-3 * residuals[-sgn][-1]
    ]
    if len(winners) != 1:
        raise RuntimeError(f"Riemann sign pin failed: residuals={residuals}, slopes={slopes}")
    sign = winners[0]
    description = (
        "R_ikjl = <R(e_i,e_k)e_l, e_j>" if sign == -1 else "R_ikjl = <R(e_i,e_k)e_j, e_l>"
    )
    return {
        "second_kind_sign": sign,
        "riemann_convention": description + ", R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]",
        "ricci": "Ric_jk = g^il <R(e_i,e_j)e_k, e_l> (positive on spheres)",
        "codifferential": "(delta h)_j = -nabla^i h_ij, (delta w) = -nabla^i w_i",
        "pin_model": model,
        "pin_dim": dim,
        "pin_resolutions": list(PIN_RESOLUTIONS),
        "pin_residuals": {str(k): v for k, v in residuals.items()},
        "pin_slopes": {str(k): v for k, v in slopes.items()},
    }


def convergence_slope(spacings, residuals) -> float:
    """Least-squares slope of log(residual) against log(spacing)."""
    x = np.log(np.asarray(spacings, dtype=float))
    y = np.log(np.maximum(np.asarray(residuals, dtype=float), 1e-300))
    return float(np.polyfit(x, y, 1)[0])
