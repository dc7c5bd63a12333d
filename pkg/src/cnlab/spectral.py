"""Torus eigenproblems and the spectral statements built on them.

Operators are realised as matrices on degrees of freedom ``component x
sample`` (sym2 uses packed components).  Symmetry is with respect to the
discrete L2 pairing ``sum_x w(x) <u, v>_g``; the symmetric form handed to the
eigensolvers is ``S = W^{1/2} A W^{-1/2}`` where ``W`` collects quadrature
weights and the pointwise component Gram matrix.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import tensor as ta
from .errors import ConvergenceError, DomainError, PreconditionError, UnsupportedBackendError
from .gauge import packed_gram
from .geometry import ManifoldContext, TensorField, Valence, curvature, second_kind_apply
from .operators import (
    OperatorId,
    OperatorName,
    apply_operator,
    divergence,
    input_valence,
    nabla,
    rough_laplacian,
    scalar_laplacian,
    trace,
)

logger = logging.getLogger(__name__)

DENSE_DOF_LIMIT = 4000
SYMMETRY_TOL = 1e-12
SYMMETRIC_OPERATORS = (
    OperatorName.SCALAR_LAPLACIAN,
    OperatorName.ROUGH_LAPLACIAN,
    OperatorName.HODGE_1FORM,
    OperatorName.LICHNEROWICZ,
)


def _ncomp(ctx: ManifoldContext, valence: Valence) -> int:
    return {Valence.SCALAR: 1, Valence.ONE_FORM: ctx.dim, Valence.SYM2: ta.n_packed(ctx.dim)}[valence]


def component_gram(ctx: ManifoldContext, valence: Valence) -> np.ndarray:
    """M[p, q, *grid]: pointwise Gram matrix of the component basis."""
    shape = ctx.grid_shape
    if valence is Valence.SCALAR:
        return np.ones((1, 1) + shape)
    if valence is Valence.ONE_FORM:
        return ctx.g_inv.copy()
    moved = np.moveaxis(ctx.g_inv, (0, 1), (-2, -1)).reshape((-1, ctx.dim, ctx.dim))
    grams = np.array([packed_gram(gi) for gi in moved])
    m = grams.shape[-1]
    return np.moveaxis(grams.reshape(shape + (m, m)), (-2, -1), (0, 1))


def _field(ctx, valence, comps) -> TensorField:
    return TensorField(valence, comps, ctx.uid)


def _as_vec(f: TensorField) -> np.ndarray:
    comps = f.components
    return comps.reshape(-1) if f.valence is not Valence.SCALAR else comps.reshape(-1)


def _from_vec(ctx, valence, vec) -> TensorField:
    m = _ncomp(ctx, valence)
    if valence is Valence.SCALAR:
        return _field(ctx, valence, vec.reshape(ctx.grid_shape))
    return _field(ctx, valence, vec.reshape((m,) + ctx.grid_shape))


@dataclass
class AssembledOperator:
    """Handle returned by :func:`assemble`."""

    ctx: ManifoldContext
    op: OperatorId
    backend: str
    valence: Valence
    ndof: int
    matrix: Optional[np.ndarray] = None  # symmetric form S (dense backend)
    raw: Optional[np.ndarray] = None  # unsymmetrised columns (dense backend)
    asymmetry: Optional[float] = None
    symbol: Optional[np.ndarray] = None  # B[mode, d, c] (fourier_block backend)
    weight_half: Optional[np.ndarray] = None  # per-sample W^{1/2}, shape (samples, m, m)
    weight_half_inv: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def apply(self, f: TensorField) -> TensorField:
        return apply_operator(self.ctx, self.op, f)

    # y-space (orthonormalised) <-> DOF vectors
    def to_dofs(self, y: np.ndarray) -> np.ndarray:
        return _blockmul(self.weight_half_inv, y, self.ctx, self.valence)

    def from_dofs(self, x: np.ndarray) -> np.ndarray:
        return _blockmul(self.weight_half, x, self.ctx, self.valence)

    def matvec(self, y: np.ndarray) -> np.ndarray:
        x = self.to_dofs(y)
        out = _as_vec(self.apply(_from_vec(self.ctx, self.valence, x)))
        return self.from_dofs(out)


def _blockmul(blocks: np.ndarray, vec: np.ndarray, ctx, valence) -> np.ndarray:
    m = _ncomp(ctx, valence)
    comps = vec.reshape(m, -1)
    return np.einsum("spq,qs->ps", blocks, comps).reshape(-1)


def _weight_roots(ctx: ManifoldContext, valence: Valence):
    w = ctx.require_quadrature().reshape(-1)
    M = component_gram(ctx, valence)
    m = M.shape[0]
    blocks = np.moveaxis(M.reshape(m, m, -1), -1, 0) * w[:, None, None]
    evals, evecs = np.linalg.eigh(blocks)
    half = np.einsum("spk,sk,sqk->spq", evecs, np.sqrt(evals), evecs)
    half_inv = np.einsum("spk,sk,sqk->spq", evecs, 1 / np.sqrt(evals), evecs)
    return half, half_inv


def assemble(ctx: ManifoldContext, op: OperatorId | str, backend: Optional[str] = None) -> AssembledOperator:
    """Finite-dimensional symmetric realisation of a torus operator."""
    if isinstance(op, str):
        op = OperatorId.parse(op)
    if not ctx.is_torus:
        raise UnsupportedBackendError(f"{ctx.model_name}: spectra are only assembled on tori")
    if op.name not in SYMMETRIC_OPERATORS:
        raise ValueError(f"{op} is not a symmetric operator")
    valence = input_valence(op)
    m = _ncomp(ctx, valence)
    ndof = m * int(np.prod(ctx.grid_shape))
    if backend is None:
        backend = "dense" if ndof <= DENSE_DOF_LIMIT else "iterative"
    handle = AssembledOperator(ctx, op, backend, valence, ndof)
    handle.weight_half, handle.weight_half_inv = _weight_roots(ctx, valence)
    handle.meta["derivative"] = ctx.engine.kind
    if backend == "dense":
        cols = np.empty((ndof, ndof))
        for j in range(ndof):
            e = np.zeros(ndof)
            e[j] = 1.0
            cols[:, j] = handle.matvec(e)
        scale = max(np.abs(cols).max(), 1e-300)
        handle.asymmetry = float(np.abs(cols - cols.T).max() / scale)
        handle.matrix = 0.5 * (cols + cols.T)
        handle.raw = cols
    elif backend == "fourier_block":
        handle.symbol = fourier_symbol(ctx, op)
    elif backend != "iterative":
        raise ValueError(f"unknown backend {backend!r}")
    return handle


def fourier_symbol(ctx: ManifoldContext, op: OperatorId | str) -> np.ndarray:
    """Per-mode blocks ``B[mode, d, c]`` of a translation-invariant operator.

    Obtained from impulse responses: the operator applied to a unit component
    at the origin, Fourier transformed.
    """
    if isinstance(op, str):
        op = OperatorId.parse(op)
    if not ctx.is_flat:
        raise UnsupportedBackendError("Fourier-block realisation needs a constant-metric torus")
    key = ("symbol", str(op))
    if key in ctx._cache:
        return ctx._cache[key]
    valence = input_valence(op)
    m = _ncomp(ctx, valence)
    shape = ctx.grid_shape
    kernel = np.empty((m, m) + shape)
    for c in range(m):
        comps = np.zeros((m,) + shape)
        comps[(c,) + (0,) * ctx.dim] = 1.0
        f = _field(ctx, valence, comps[0] if valence is Valence.SCALAR else comps)
        out = apply_operator(ctx, op, f).components
        kernel[:, c] = out.reshape((m,) + shape)
    hat = np.fft.fftn(kernel, axes=tuple(range(2, 2 + ctx.dim)))
    blocks = np.moveaxis(hat.reshape(m, m, -1), -1, 0)
    ctx._cache[key] = blocks
    return blocks


def symbol_eigensystem(ctx: ManifoldContext, op: OperatorId | str):
    """Eigenvalues/eigenvectors of the M-symmetrised symbol blocks (cached)."""
    if isinstance(op, str):
        op = OperatorId.parse(op)
    key = ("symbol_eig", str(op))
    if key in ctx._cache:
        return ctx._cache[key]
    B = fourier_symbol(ctx, op)
    valence = input_valence(op)
    M = component_gram(ctx, valence)[(Ellipsis,) + (0,) * ctx.dim]
    ev, U = np.linalg.eigh(M)
    Mh = U @ np.diag(np.sqrt(ev)) @ U.T
    Mhi = U @ np.diag(1 / np.sqrt(ev)) @ U.T
    S = np.einsum("pq,mqr,rs->mps", Mh, B, Mhi)
    S = 0.5 * (S + np.conj(np.swapaxes(S, 1, 2)))
    lam, V = np.linalg.eigh(S)
    out = (lam, V, Mh, Mhi)
    ctx._cache[key] = out
    return out


# ---------------------------------------------------------------------------
# eigenpairs


@dataclass
class Eigenpair:
    eigenvalue: float
    eigenvector: TensorField
    label: tuple
    residual: float


@dataclass
class SpectralDecomposition:
    operator: str
    backend: str
    eigenpairs: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.eigenpairs)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.eigenvalue for p in self.eigenpairs])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "eigenvalue", "label", "residual"])
        for i, p in enumerate(self.eigenpairs):
            w.writerow([i, repr(p.eigenvalue), " ".join(str(c) for c in p.label), repr(p.residual)])
        return buf.getvalue()


def _canonical(k: Sequence[int]) -> tuple:
    k = tuple(int(c) for c in k)
    for c in k:
        if c != 0:
            return k if c > 0 else tuple(-x for x in k)
    return k


def _signed_modes(ctx: ManifoldContext) -> np.ndarray:
    grids = np.meshgrid(*[np.rint(np.fft.fftfreq(s) * s).astype(int) for s in ctx.grid_shape], indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def dominant_label(ctx: ManifoldContext, f: TensorField) -> tuple:
    comps = f.components.reshape((-1,) + ctx.grid_shape)
    power = np.sum(np.abs(np.fft.fftn(comps, axes=tuple(range(1, 1 + ctx.dim)))) ** 2, axis=0).reshape(-1)
    modes = _signed_modes(ctx)
    best = np.flatnonzero(power >= power.max() * (1 - 1e-9))
    return min(_canonical(modes[i]) for i in best)


def eigen_residual(ctx: ManifoldContext, op: OperatorId, mu: float, h: TensorField) -> float:
    r = apply_operator(ctx, op, h) - mu * h
    return ctx.l2_norm(r)


def _residual_limit(mu: float) -> float:
    return 1e-8 * abs(mu) + 1e-10


def _sort_pairs(pairs: list) -> list:
    pairs.sort(key=lambda p: p.label)
    pairs.sort(key=lambda p: round(p.eigenvalue, 7))
    return pairs


def eigensolve(handle: AssembledOperator, k: int, target: float = 0.0, *, tol: float = 1e-12) -> SpectralDecomposition:
    """``k`` eigenpairs nearest ``target``, L2-normalised, deterministically ordered."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ctx, op = handle.ctx, handle.op
    k = min(k, handle.ndof)
    pairs = []
    if handle.backend == "fourier_block":
        pairs = _fourier_pairs(handle, k, target)
    elif handle.backend == "dense":
        if handle.asymmetry <= SYMMETRY_TOL:
            lam, Y = np.linalg.eigh(handle.matrix)
        else:
            lam, Y = _real_eig(*np.linalg.eig(handle.raw), target, min(handle.ndof, k + 8))
        order = _nearest(lam, target, k)
        pairs = _pairs_from_columns(handle, lam[order], Y[:, order])
    elif handle.backend == "iterative":
        pairs = _iterative_pairs(handle, k, target, tol)
    else:
        raise ValueError(f"unknown backend {handle.backend!r}")
    worst = []
    for p in pairs:
        p.residual = eigen_residual(ctx, op, p.eigenvalue, p.eigenvector)
        if p.residual > _residual_limit(p.eigenvalue):
            worst.append((p.eigenvalue, p.residual))
    if worst:
        raise ConvergenceError(f"eigenpair residuals above contract: {worst[:5]}", residuals=worst)
    return SpectralDecomposition(str(op), handle.backend, _sort_pairs(pairs))


def _nearest(lam: np.ndarray, target: float, k: int) -> np.ndarray:
    order = np.argsort(np.abs(lam - target), kind="stable")
    return order[:k]


def _fourier_pairs(handle: AssembledOperator, k: int, target: float) -> list:
    ctx = handle.ctx
    lam, V, Mh, Mhi = symbol_eigensystem(ctx, handle.op)
    modes = _signed_modes(ctx)
    nm, m = lam.shape
    flat_lam = lam.reshape(-1)
    keys = [(round(abs(flat_lam[i] - target), 7), _canonical(modes[i // m]), i) for i in range(nm * m)]
    keys.sort()
    x = ctx.coords
    pairs = []
    for _, label, i in keys[:k]:
        mode, col = divmod(i, m)
        kvec = modes[mode]
        comps = Mhi @ V[mode, :, col]
        phase = np.exp(2j * np.pi * np.tensordot(kvec.astype(float), x, axes=(0, 0)))
        raw = comps.reshape((m,) + (1,) * ctx.dim) * phase
        use_sin = tuple(kvec) != _canonical(kvec)
        real = raw.imag if use_sin else raw.real
        if not np.any(np.abs(real) > 1e-12):
            real = raw.real if use_sin else raw.imag
        f = _field(ctx, handle.valence, real[0] if handle.valence is Valence.SCALAR else real)
        f = f * (1.0 / ctx.l2_norm(f))
        pairs.append(Eigenpair(float(flat_lam[i]), f, label, 0.0))
    return pairs


def _real_eig(lam: np.ndarray, V: np.ndarray, target: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The ``k`` eigenpairs nearest ``target`` of a nearly symmetric system, as real vectors.

    Complex conjugate pairs can appear far from the target; only the selected
    eigenvalues must be real.
    """
    order = _nearest(lam.real, target, k)
    lam, V = lam[order], V[:, order]
    bad = np.abs(lam.imag) > 1e-8 * max(1.0, np.abs(lam.real).max())
    if np.any(bad):
        raise ConvergenceError(f"{int(bad.sum())} selected eigenvalues have a non-negligible imaginary part")
    idx = np.argmax(np.abs(V), axis=0)
    V = V * np.exp(-1j * np.angle(V[idx, np.arange(V.shape[1])]))
    Y = V.real
    return lam.real, Y / np.linalg.norm(Y, axis=0)


def _ritz(handle: AssembledOperator, Y: np.ndarray, symmetric: bool) -> tuple[np.ndarray, np.ndarray]:
    """Rayleigh-Ritz on span(Y) with the true operator."""
    Q, _ = np.linalg.qr(Y)
    AQ = np.stack([handle.matvec(Q[:, j]) for j in range(Q.shape[1])], axis=1)
    H = Q.T @ AQ
    if symmetric:
        lam, Z = np.linalg.eigh(0.5 * (H + H.T))
    else:
        lam, Z = _real_eig(*np.linalg.eig(H), 0.0, H.shape[0])
    return lam, Q @ Z


def _iterative_pairs(handle: AssembledOperator, k: int, target: float, tol: float) -> list:
    n = handle.ndof
    symmetric = handle.ctx.is_flat
    A = spla.LinearOperator((n, n), matvec=handle.matvec, dtype=float)
    # keep the shift off the target itself, which is often an exact eigenvalue (kernels)
    sigma = target - 1e-3 * max(1.0, abs(target))
    shifted = spla.LinearOperator((n, n), matvec=lambda v: handle.matvec(v) - sigma * v, dtype=float)

    def solve(b):
        # approximate inverse is enough; Rayleigh-Ritz below restores accuracy
        if symmetric:
            x, _ = spla.minres(shifted, b, rtol=1e-12, maxiter=20 * n)
        else:
            x, _ = spla.gmres(shifted, b, rtol=1e-12, atol=0.0, restart=min(n, 300), maxiter=20)
        return x

    opinv = spla.LinearOperator((n, n), matvec=solve, dtype=float)
    extra = min(n - 2, 2 * k + 8)
    ncv = min(n - 1, max(2 * extra + 1, 60))
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        if symmetric:
            lam, Y = spla.eigsh(A, k=extra, sigma=sigma, which="LM", OPinv=opinv, tol=tol, v0=v0, ncv=ncv, maxiter=10 * n)
        else:
            lam, Y = spla.eigs(A, k=extra, sigma=sigma, which="LM", OPinv=opinv, tol=tol, v0=v0, ncv=ncv, maxiter=10 * n)
            lam, Y = _real_eig(lam, Y, target, len(lam))
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("shift-invert Arnoldi did not converge", residuals=list(exc.eigenvalues)) from exc
    lam, Y = _ritz(handle, Y, symmetric)
    keep = _nearest(lam, target, k)
    return _pairs_from_columns(handle, lam[keep], Y[:, keep])


def _clusters(lam: np.ndarray, rel: float = 1e-9) -> list:
    order = np.argsort(lam, kind="stable")
    groups, cur = [], [order[0]]
    for i in order[1:]:
        if abs(lam[i] - lam[cur[-1]]) <= rel * max(1.0, abs(lam[i])):
            cur.append(i)
        else:
            groups.append(cur)
            cur = [i]
    groups.append(cur)
    return groups


def _align_to_modes(handle: AssembledOperator, X: np.ndarray) -> np.ndarray:
    """Rotate a degenerate eigenbasis so each vector lives on one wavevector pair.

    Only valid where the weight is constant (flat tori): Fourier filtering then
    commutes with the weighting and preserves orthonormality.
    """
    ctx = handle.ctx
    m = _ncomp(ctx, handle.valence)
    axes = tuple(range(1, 1 + ctx.dim))
    hats = np.fft.fftn(X.T.reshape((-1, m) + ctx.grid_shape), axes=tuple(a + 1 for a in axes))
    modes = _signed_modes(ctx)
    canon = [_canonical(k) for k in modes]
    power = np.sum(np.abs(hats) ** 2, axis=(0, 1)).reshape(-1)
    labels = sorted({canon[i] for i in np.flatnonzero(power > 1e-12 * power.max())})
    out = []
    for lab in labels:
        keep = np.array([c == lab for c in canon]).reshape(ctx.grid_shape)
        filt = np.fft.ifftn(hats * keep, axes=tuple(a + 1 for a in axes)).real
        Z = np.stack([handle.from_dofs(f.reshape(-1)) for f in filt], axis=1)
        U, sv, _ = np.linalg.svd(Z, full_matrices=False)
        out.append(U[:, sv > 1e-6 * max(sv.max(), 1e-300)])
    Q = np.concatenate(out, axis=1) if out else np.zeros((X.shape[0], 0))
    return Q if Q.shape[1] == X.shape[1] else None


def _pairs_from_columns(handle: AssembledOperator, lam: np.ndarray, Y: np.ndarray) -> list:
    ctx = handle.ctx
    pairs = []
    for group in _clusters(lam):
        block = Y[:, group]
        if ctx.is_flat and len(group) > 1:
            X = np.stack([handle.to_dofs(block[:, j]) for j in range(len(group))], axis=1)
            aligned = _align_to_modes(handle, X)
            if aligned is not None:
                block = aligned
        mu = float(np.mean(lam[group]))
        for j in range(block.shape[1]):
            h = _from_vec(ctx, handle.valence, handle.to_dofs(block[:, j]))
            h = h * (1.0 / ctx.l2_norm(h))
            pairs.append(Eigenpair(mu, h, dominant_label(ctx, h), 0.0))
    return pairs


def rayleigh(ctx: ManifoldContext, op: OperatorId | str, h: TensorField) -> float:
    """<Op h, h> / <h, h> in the metric L2 pairing."""
    if isinstance(op, str):
        op = OperatorId.parse(op)
    nrm = ctx.l2_inner(h, h)
    if nrm == 0.0:
        raise ValueError("Rayleigh quotient of the zero field")
    return ctx.l2_inner(apply_operator(ctx, op, h), h) / nrm


# ---------------------------------------------------------------------------
# spectral window


@dataclass
class SpectralWindowReport:
    lam: float
    window_lo: float
    window_hi: float
    classified: list
    note: Optional[str] = None

    @property
    def empty(self) -> bool:
        return not self.window_lo < self.window_hi

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "window_lo": self.window_lo,
            "window_hi": self.window_hi,
            "empty": self.empty,
            "classified": [{"mu": mu, "zone": zone} for mu, zone in self.classified],
            "note": self.note,
        }


def spectral_window(lam: float, mus: Sequence[float]) -> SpectralWindowReport:
    """Classify eigenvalues against the half-open window [3 lambda, -2 lambda)."""
    lo, hi = 3.0 * lam, -2.0 * lam
    out = []
    for mu in mus:
        if lo <= mu < hi:
            zone = "in_window"
        elif mu >= hi:
            zone = "at_or_above_threshold"
        else:
            zone = "below_window"
        out.append((float(mu), zone))
    note = None
    if lam == 0:
        note = "window empty at lambda = 0: [0, 0) contains no eigenvalue"
    elif lam > 0:
        note = "window empty for lambda > 0"
    return SpectralWindowReport(float(lam), lo, hi, out, note)


# ---------------------------------------------------------------------------
# integral ledgers


@dataclass
class IntegralLedger:
    grad_energy: float
    grad_energy_ibp: float
    div_energy: float
    curvature_pairing: float
    l2_norm_sq: float
    lam: float
    mu: Optional[float] = None
    stated_identity_residual: float = 0.0
    derived_identity_residual: Optional[float] = None
    weitzenbock_residual: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "grad_energy": self.grad_energy,
            "grad_energy_ibp": self.grad_energy_ibp,
            "div_energy": self.div_energy,
            "curvature_pairing": self.curvature_pairing,
            "l2_norm_sq": self.l2_norm_sq,
            "lambda": self.lam,
            "mu": self.mu,
            "stated_identity_residual": self.stated_identity_residual,
            "derived_identity_residual": self.derived_identity_residual,
            "weitzenbock_residual": self.weitzenbock_residual,
        }


def _require_tracefree(ctx, h0):
    tr = ctx.sup(trace(ctx, h0))
    if tr > 1e-8 * max(ctx.sup(h0), 1e-300):
        raise PreconditionError(f"input is not trace-free (sup |tr h0| = {tr:.3e})")


def bochner_koiso_report(ctx: ManifoldContext, h0: TensorField, mu: Optional[float] = None) -> IntegralLedger:
    """Both sides of the quoted Bochner-Koiso identity, and of its consequence when ``mu`` is given.

    Residual conventions: ``stated = grad - (div + pairing + lambda |h0|^2)``,
    ``derived = (mu - 3 lambda)|h0|^2 - (div - pairing)``,
    ``weitzenbock = mu |h0|^2 - (grad - 2 pairing + 2 lambda |h0|^2)``.
    Nothing is asserted here.
    """
    if not ctx.is_torus:
        raise UnsupportedBackendError("integral ledgers need a compact (torus) backend")
    ctx.check(h0, Valence.SYM2)
    _require_tracefree(ctx, h0)
    bundle = curvature(ctx)
    lam = bundle.lambda_hat if abs(bundle.lambda_hat) > 1e-12 else 0.0
    grad = nabla(ctx, h0.full(), 2)
    grad_energy = ctx.integrate(ta.inner(grad, grad, ctx.g_inv, 3))
    grad_ibp = ctx.l2_inner(rough_laplacian(ctx, h0), h0)
    div = divergence(ctx, h0)
    div_energy = ctx.l2_inner(div, div)
    pairing = ctx.l2_inner(second_kind_apply(ctx, h0), h0)
    l2 = ctx.l2_inner(h0, h0)
    ledger = IntegralLedger(grad_energy, grad_ibp, div_energy, pairing, l2, lam, mu)
    ledger.stated_identity_residual = grad_energy - (div_energy + pairing + lam * l2)
    if mu is not None:
        ledger.derived_identity_residual = (mu - 3 * lam) * l2 - (div_energy - pairing)
        ledger.weitzenbock_residual = mu * l2 - (grad_energy - 2 * pairing + 2 * lam * l2)
    return ledger


def second_kind_extremes(ctx: ManifoldContext) -> tuple[float, float]:
    """Min and max pointwise eigenvalues of the second-kind operator on trace-free tensors."""
    from .geometry import second_kind_matrix

    lo, hi = np.inf, -np.inf
    for index in np.argwhere(ctx.interior):
        ev = np.linalg.eigvalsh(second_kind_matrix(ctx, index))
        lo, hi = min(lo, ev[0]), max(hi, ev[-1])
    return float(lo), float(hi)


def cor42_report(ctx: ManifoldContext, h0: TensorField, mu: float) -> dict:
    """Evaluate mu >= 3 lambda together with the sign data of the second-kind operator."""
    if not ctx.is_torus:
        raise UnsupportedBackendError("no global report on open charts; use second_kind_spectrum pointwise")
    op = OperatorId(OperatorName.LICHNEROWICZ, "general")
    resid = eigen_residual(ctx, op, mu, h0) / max(ctx.l2_norm(h0), 1e-300)
    if resid > 1e-6 * max(1.0, abs(mu)):
        raise PreconditionError(f"(mu, h0) is not an eigenpair: relative residual {resid:.3e}")
    lam = curvature(ctx).lambda_hat
    lam = lam if abs(lam) > 1e-12 else 0.0
    lo, hi = second_kind_extremes(ctx)
    return {
        "mu": float(mu),
        "three_lambda": 3 * lam,
        "second_kind_min": lo,
        "second_kind_max": hi,
        "second_kind_nonpositive": hi <= 1e-12,
        "mu_ge_3lambda": bool(mu >= 3 * lam - 1e-12),
        "eigen_residual": resid,
    }


# ---------------------------------------------------------------------------
# scalar rigidity step


def rigidity_solve(ctx: ManifoldContext, a: float, C) -> tuple[TensorField, float]:
    """Solve (Delta + a) u = C on the torus; returns (u, sup |u - C/a|).

    ``C`` may be a constant or a scalar field; the deviation is measured
    against ``C/a`` only for constant right-hand sides.
    """
    if a <= 0:
        raise PreconditionError("rigidity_solve needs a > 0 (Delta + a may be singular otherwise)")
    if not ctx.is_torus:
        raise UnsupportedBackendError("rigidity_solve is a torus computation")
    rhs = C.components if isinstance(C, TensorField) else np.full(ctx.grid_shape, float(C))
    if ctx.is_flat:
        sym = fourier_symbol(ctx, OperatorId(OperatorName.SCALAR_LAPLACIAN))[:, 0, 0]
        uhat = np.fft.fftn(rhs).reshape(-1) / (sym + a)
        u = np.fft.ifftn(uhat.reshape(ctx.grid_shape)).real
    else:
        n = rhs.size
        A = spla.LinearOperator(
            (n, n),
            matvec=lambda v: (scalar_laplacian(ctx, ctx.scalar(v.reshape(ctx.grid_shape))).components + a * v.reshape(ctx.grid_shape)).reshape(-1),
            dtype=float,
        )
        sol, info = spla.gmres(A, rhs.reshape(-1), rtol=1e-14, atol=0.0, restart=200, maxiter=50)
        if info != 0:
            raise ConvergenceError(f"GMRES failed for Delta + {a} (info={info})")
        u = sol.reshape(ctx.grid_shape)
    dev = float(np.max(np.abs(u - float(C) / a))) if not isinstance(C, TensorField) else float("nan")
    return ctx.scalar(u), dev
