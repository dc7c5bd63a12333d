"""Chen-Nagano and transverse-traceless gauge residuals and Fourier synthesis."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as ta
from .errors import PreconditionError
from .geometry import ManifoldContext, TensorField, Valence
from .operators import divergence, exterior_d, trace, trace_split
from .random_fields import band_limited_sym2

SPECTRAL_TOL = 1e-8


@dataclass(frozen=True)
class GaugeReport:
    cn_residual_norm: float
    cn_residual_l2: Optional[float]
    tt_divergence_norm: float
    tt_trace_norm: float
    coupling_residual_norm: float
    mean_trace: Optional[float]
    classification: Optional[str]  # "TT", "CN_strict", "neither"; None on open charts
    tolerance_used: float

    def to_dict(self) -> dict:
        return asdict(self)


def coupling_coefficient(dim: int) -> float:
    return (dim - 2) / (2 * dim)


def cn_residual(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """delta h + d(tr h) / 2."""
    return divergence(ctx, h) + 0.5 * exterior_d(ctx, trace(ctx, h))


def coupling_residual(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """delta h0 + (n-2)/(2n) d(tr h); equals :func:`cn_residual` for every h."""
    h0, u = trace_split(ctx, h)
    return divergence(ctx, h0) + coupling_coefficient(ctx.dim) * exterior_d(ctx, u)


def default_tolerance(ctx: ManifoldContext) -> float:
    if ctx.engine.kind == "fourier":
        return SPECTRAL_TOL
    return 10.0 * ctx.spacing ** ctx.chart.stencil_order


def classify(ctx: ManifoldContext, h: TensorField, tol: Optional[float] = None) -> GaugeReport:
    """Relative sup-norm tests for TT (tr h = 0, delta h = 0) and Chen-Nagano gauge.

    Open charts get the residual norms but no classification or mean trace.
    """
    if tol is None:
        tol = default_tolerance(ctx)
    if tol <= 0:
        raise ValueError("tol must be positive")
    scale = ctx.sup(h)
    if scale == 0.0:
        scale = 1.0
    cn = cn_residual(ctx, h)
    cn_sup = ctx.sup(cn)
    div_sup = ctx.sup(divergence(ctx, h))
    tr = trace(ctx, h)
    tr_sup = ctx.sup(tr)
    coup_sup = ctx.sup(coupling_residual(ctx, h))
    if not ctx.is_torus:
        return GaugeReport(cn_sup, None, div_sup, tr_sup, coup_sup, None, None, tol)
    cn_l2 = ctx.l2_norm(cn)
    mean_trace = ctx.mean(tr.components)
    is_cn = cn_sup / scale <= tol
    is_tt = is_cn and div_sup / scale <= tol and tr_sup / scale <= tol
    label = "TT" if is_tt else ("CN_strict" if is_cn else "neither")
    return GaugeReport(cn_sup, cn_l2, div_sup, tr_sup, coup_sup, mean_trace, label, tol)


# ---------------------------------------------------------------------------
# Fourier synthesis on constant-metric tori


def _packed_basis(dim: int) -> np.ndarray:
    iu = np.triu_indices(dim)
    basis = np.zeros((len(iu[0]), dim, dim))
    for p, (i, j) in enumerate(zip(*iu)):
        basis[p, i, j] = basis[p, j, i] = 1.0
    return basis


def packed_gram(g_inv: np.ndarray) -> np.ndarray:
    """Gram matrix of the packed sym2 basis under <h, k> = g^ia g^jb h_ij k_ab."""
    basis = _packed_basis(g_inv.shape[0])
    raised = np.einsum("ia,jb,pab->pij", g_inv, g_inv, basis)
    return np.einsum("pij,qij->pq", basis, raised)


def _require_flat(ctx: ManifoldContext):
    if not ctx.is_flat:
        raise PreconditionError("Fourier synthesis needs a constant-metric (flat_torus) context")


def _symbols(ctx: ManifoldContext) -> np.ndarray:
    """kappa[a, *grid] with D_a e_k = i kappa_a(k) e_k."""
    n = ctx.dim
    out = np.zeros((n,) + ctx.grid_shape)
    for a in range(n):
        shape = [1] * n
        shape[a] = ctx.grid_shape[a]
        out[a] = ctx.engine.symbol(a).reshape(shape)
    return out


def _constraint_rows(ctx: ManifoldContext, kappa: np.ndarray) -> np.ndarray:
    """A[mode, row, p]: rows 0..n-1 are (G^-1 kappa)^b H_bj, row n is tr_G H."""
    n = ctx.dim
    G_inv = ctx.g_inv[(Ellipsis,) + (0,) * n]
    basis = _packed_basis(n)
    v = np.einsum("ab,b...->a...", G_inv, kappa).reshape(n, -1).T  # (modes, n)
    div_rows = np.einsum("pjb,mb->mjp", basis, v)
    tr_row = np.einsum("ij,pij->p", G_inv, basis)
    modes = v.shape[0]
    return np.concatenate([div_rows, np.broadcast_to(tr_row, (modes, 1, len(tr_row)))], axis=1)


def _min_norm_solve(A: np.ndarray, b: np.ndarray, M_inv: np.ndarray) -> np.ndarray:
    """Per-mode minimal M-norm solution of A x = b (A real, b complex)."""
    AMi = np.einsum("mrp,pq->mrq", A, M_inv)
    S = np.einsum("mrq,msq->mrs", AMi, A)
    y = np.einsum("mrs,ms->mr", np.linalg.pinv(S, rcond=1e-12, hermitian=True), b)
    return np.einsum("mrq,mr->mq", AMi, y)


def _to_fourier(ctx: ManifoldContext, packed: np.ndarray) -> np.ndarray:
    axes = tuple(range(1, 1 + ctx.dim))
    hat = np.fft.fftn(packed, axes=axes)
    return hat.reshape(packed.shape[0], -1).T  # (modes, m)


def _from_fourier(ctx: ManifoldContext, xhat: np.ndarray) -> np.ndarray:
    m = xhat.shape[1]
    hat = xhat.T.reshape((m,) + ctx.grid_shape)
    out = np.fft.ifftn(hat, axes=tuple(range(1, 1 + ctx.dim)))
    return out.real


def _mode_mask(ctx: ManifoldContext, modes: Sequence[Sequence[int]]) -> np.ndarray:
    mask = np.zeros(ctx.grid_shape, dtype=bool)
    for k in modes:
        mask[tuple(int(c) % s for c, s in zip(k, ctx.grid_shape))] = True
        mask[tuple(-int(c) % s for c, s in zip(k, ctx.grid_shape))] = True
    return mask.reshape(-1)


def synthesize_tt_torus(
    ctx: ManifoldContext,
    seed: int,
    bandwidth: int = 2,
    modes: Optional[Sequence[Sequence[int]]] = None,
) -> TensorField:
    """Random transverse-traceless tensor on a flat torus.

    A seeded band-limited field is projected mode by mode onto
    ``{G^-1 kappa . H = 0, tr_G H = 0}`` using the discrete derivative symbol,
    so the result is TT for the discrete operators to roundoff.  ``modes``
    restricts the content to the listed wavevectors (and their negatives).
    """
    _require_flat(ctx)
    rng = np.random.default_rng(seed)
    raw = band_limited_sym2(ctx, rng, bandwidth).components
    xhat = _to_fourier(ctx, raw)
    if modes is not None:
        xhat[~_mode_mask(ctx, modes)] = 0.0
    A = _constraint_rows(ctx, _symbols(ctx))
    M = packed_gram(ctx.g_inv[(Ellipsis,) + (0,) * ctx.dim])
    M_inv = np.linalg.inv(M)
    correction = _min_norm_solve(A, np.einsum("mrp,mp->mr", A, xhat), M_inv)
    packed = _from_fourier(ctx, xhat - correction)
    if not np.any(np.abs(packed) > 1e-14):
        raise PreconditionError("TT projection produced the zero field; raise resolution or bandwidth")
    return TensorField(Valence.SYM2, packed, ctx.uid)


def synthesize_cn_torus(
    ctx: ManifoldContext,
    u: TensorField,
    seed: Optional[int] = None,
    bandwidth: int = 2,
) -> TensorField:
    """Chen-Nagano tensor with prescribed trace ``u`` on a flat torus.

    Per mode, the minimal-norm trace-free ``H0`` solving
    ``delta h0 = -(n-2)/(2n) du`` is computed; the zero mode of ``h0`` is 0.
    With a ``seed``, a random TT tensor is added (which keeps the gauge).
    """
    _require_flat(ctx)
    ctx.check(u, Valence.SCALAR)
    n = ctx.dim
    kappa = _symbols(ctx)
    A = _constraint_rows(ctx, kappa)
    uhat = np.fft.fftn(u.components).reshape(-1)
    c = coupling_coefficient(n)
    b = np.zeros((A.shape[0], n + 1), dtype=complex)
    b[:, :n] = c * kappa.reshape(n, -1).T * uhat[:, None]
    M_inv = np.linalg.inv(packed_gram(ctx.g_inv[(Ellipsis,) + (0,) * n]))
    xhat = _min_norm_solve(A, b, M_inv)
    xhat[0] = 0.0
    resid = np.abs(np.einsum("mrp,mp->mr", A, xhat) - b).max(initial=0.0)
    scale = max(np.abs(b).max(initial=0.0), 1.0)
    if resid > 1e-9 * scale:
        raise RuntimeError(f"Chen-Nagano mode solve is inconsistent (residual {resid:.2e})")
    h0 = ta.unpack(_from_fourier(ctx, xhat))
    if seed is not None:
        h0 = h0 + synthesize_tt_torus(ctx, seed, bandwidth).full()
    h = h0 + (u.components / n) * ctx.g
    return ctx.sym2(ta.sym(h))


def wavevectors(ctx: ManifoldContext) -> list[tuple[int, ...]]:
    """Integer wavevectors of the grid in lexicographic order."""
    ranges = [sorted(int(k) for k in np.fft.fftfreq(s) * s) for s in ctx.grid_shape]
    return list(itertools.product(*ranges))
