"""Differential operators on scalars, 1-forms and symmetric 2-tensors.

Every operator is built from one discrete covariant derivative
(:func:`nabla`), so discrete metric compatibility ``nabla g = 0`` and
``d(df) = 0`` hold to roundoff and identities that rely only on them
(``delta(f g) = -df``, ``Delta_H d = d Delta``) are exact on every model.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from . import tensor as ta
from .errors import ConstructionError, PreconditionError
from .geometry import (
    ManifoldContext,
    TensorField,
    Valence,
    christoffel_symbols,
    curvature,
    ricci_base,
    second_kind_apply,
)

DEFAULT_EINSTEIN_TOL = 1e-3


class OperatorName(str, Enum):
    TRACE = "trace"
    DIVERGENCE = "divergence"
    SYM_DERIVATIVE = "sym_derivative"
    EXTERIOR_D = "exterior_d"
    HESSIAN = "hessian"
    ROUGH_LAPLACIAN = "rough_laplacian"
    SCALAR_LAPLACIAN = "scalar_laplacian"
    HODGE_1FORM = "hodge_1form"
    LICHNEROWICZ = "lichnerowicz"
    RICCI_COMPOSITION = "ricci_composition"
    LINEARIZED_RICCI = "linearized_ricci"


_VARIANTS = {
    OperatorName.LICHNEROWICZ: ("general", "einstein_reduced", "connection"),
    OperatorName.LINEARIZED_RICCI: ("formula", "gateaux"),
}


@dataclass(frozen=True)
class OperatorId:
    name: OperatorName
    variant: Optional[str] = None

    def __post_init__(self):
        allowed = _VARIANTS.get(self.name, ())
        if self.variant is not None and self.variant not in allowed:
            raise ValueError(f"variant {self.variant!r} invalid for {self.name.value}")

    @classmethod
    def parse(cls, text: str) -> "OperatorId":
        """``"lichnerowicz:general"`` or ``"scalar_laplacian"``."""
        name, _, variant = text.partition(":")
        op = OperatorName(name)
        if not variant and op in _VARIANTS:
            variant = _VARIANTS[op][0]
        return cls(op, variant or None)

    def __str__(self):
        return self.name.value + (f":{self.variant}" if self.variant else "")


# ---------------------------------------------------------------------------
# covariant derivative


def nabla(ctx: ManifoldContext, t: np.ndarray, rank: int) -> np.ndarray:
    """(nabla T)_{a i1..ir} with the derivative index first."""
    gam = christoffel_symbols(ctx)
    out = ctx.engine.grad(t)
    idx = string.ascii_lowercase[1 : rank + 1]
    for slot in range(rank):
        src = idx[:slot] + "z" + idx[slot + 1 :]
        spec = f"za{idx[slot]}...,{src}...->a{idx}..."
        out = out - np.einsum(spec, gam, t)
    return out


def trace(ctx: ManifoldContext, h: TensorField) -> TensorField:
    ctx.check(h, Valence.SYM2)
    return ctx.scalar(np.einsum("ij...,ij...->...", ctx.g_inv, h.full()))


def trace_split(ctx: ManifoldContext, h: TensorField) -> tuple[TensorField, TensorField]:
    """``h = h0 + (u/n) g`` with ``tr h0 = 0``; returns ``(h0, u)``."""
    u = trace(ctx, h)
    h0 = h.full() - (u.components / ctx.dim) * ctx.g
    return ctx.sym2(ta.sym(h0)), u


def exterior_d(ctx: ManifoldContext, f: TensorField) -> TensorField:
    ctx.check(f, Valence.SCALAR)
    return ctx.one_form(ctx.engine.grad(f.components))


def divergence(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """(delta h)_j = -nabla^i h_ij."""
    ctx.check(h, Valence.SYM2)
    nh = nabla(ctx, h.full(), 2)
    return ctx.one_form(-np.einsum("ab...,abj...->j...", ctx.g_inv, nh))


def codifferential(ctx: ManifoldContext, w: TensorField) -> TensorField:
    """delta w = -nabla^i w_i on 1-forms, so that delta d is nonnegative."""
    ctx.check(w, Valence.ONE_FORM)
    nw = nabla(ctx, w.components, 1)
    return ctx.scalar(-np.einsum("ab...,ab...->...", ctx.g_inv, nw))


def sym_derivative(ctx: ManifoldContext, w: TensorField) -> TensorField:
    """(delta* w)_ij = (nabla_i w_j + nabla_j w_i) / 2."""
    ctx.check(w, Valence.ONE_FORM)
    return ctx.sym2(ta.sym(nabla(ctx, w.components, 1)))


def hessian(ctx: ManifoldContext, f: TensorField) -> TensorField:
    ctx.check(f, Valence.SCALAR)
    df = ctx.engine.grad(f.components)
    return ctx.sym2(ta.sym(nabla(ctx, df, 1)))


def second_covariant(ctx: ManifoldContext, h: TensorField) -> np.ndarray:
    """(nabla^2 h)[b, a, i, j] = nabla_b nabla_a h_ij."""
    return nabla(ctx, nabla(ctx, h.full(), 2), 3)


def rough_laplacian(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """nabla* nabla h = -tr_g nabla^2 h."""
    ctx.check(h, Valence.SYM2)
    n2 = second_covariant(ctx, h)
    return ctx.sym2(ta.sym(-np.einsum("ab...,abij...->ij...", ctx.g_inv, n2)))


def scalar_laplacian(ctx: ManifoldContext, f: TensorField) -> TensorField:
    """Delta = delta d (nonnegative)."""
    return codifferential(ctx, exterior_d(ctx, f))


def exterior_d_1form(ctx: ManifoldContext, w: TensorField) -> np.ndarray:
    ctx.check(w, Valence.ONE_FORM)
    dw = ctx.engine.grad(w.components)
    return dw - np.swapaxes(dw, 0, 1)


def codifferential_2form(ctx: ManifoldContext, alpha: np.ndarray) -> TensorField:
    """(delta alpha)_j = -nabla^i alpha_ij."""
    na = nabla(ctx, alpha, 2)
    return ctx.one_form(-np.einsum("ab...,abj...->j...", ctx.g_inv, na))


def hodge_1form(ctx: ManifoldContext, w: TensorField) -> TensorField:
    """Delta_H = d delta + delta d on 1-forms."""
    return exterior_d(ctx, codifferential(ctx, w)) + codifferential_2form(ctx, exterior_d_1form(ctx, w))


def ricci_composition(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """Ric o h + h o Ric, with o the composition of endomorphisms via g^{-1}."""
    ctx.check(h, Valence.SYM2)
    ric = ricci_base(ctx)
    left = np.einsum("ik...,kl...,lj...->ij...", ric, ctx.g_inv, h.full())
    return ctx.sym2(left + np.swapaxes(left, 0, 1))


def lichnerowicz_connection(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """Lichnerowicz Laplacian written through commutators of covariant derivatives.

    ``Delta_L h = nabla*nabla h + C + C^T`` with
    ``C_ij = g^{kb} (nabla_b nabla_i h_jk - nabla_i nabla_b h_jk)``.  No Riemann
    tensor is involved, which makes this form independent of any curvature
    sign convention.
    """
    ctx.check(h, Valence.SYM2)
    n2 = second_covariant(ctx, h)
    rough = -np.einsum("ab...,abij...->ij...", ctx.g_inv, n2)
    comm = np.einsum("kb...,bijk...->ij...", ctx.g_inv, n2) - np.einsum("kb...,ibjk...->ij...", ctx.g_inv, n2)
    return ctx.sym2(ta.sym(rough) + comm + np.swapaxes(comm, 0, 1))


def lichnerowicz(
    ctx: ManifoldContext,
    h: TensorField,
    variant: str = "general",
    *,
    sign: Optional[int] = None,
    einstein_tol: float = DEFAULT_EINSTEIN_TOL,
) -> TensorField:
    """Lichnerowicz Laplacian.

    ``general``: rough - 2 R(h) + Ric o h + h o Ric.
    ``einstein_reduced``: rough - 2 R(h) + 2 lambda_hat h; refused when the model
    is visibly non-Einstein (residual above ``einstein_tol * max(1, |lambda_hat|)``).
    ``connection``: see :func:`lichnerowicz_connection`.
    """
    ctx.check(h, Valence.SYM2)
    if variant == "connection":
        return lichnerowicz_connection(ctx, h)
    rough = rough_laplacian(ctx, h)
    ring = second_kind_apply(ctx, h, sign)
    if variant == "general":
        return rough - 2 * ring + ricci_composition(ctx, h)
    if variant == "einstein_reduced":
        bundle = curvature(ctx, sign)
        limit = einstein_tol * max(1.0, abs(bundle.lambda_hat))
        if bundle.einstein_residual_sup > limit:
            raise PreconditionError(
                f"{ctx.model_name} is not Einstein: sup|Ric - lambda g| = "
                f"{bundle.einstein_residual_sup:.3e} > {limit:.3e}"
            )
        return rough - 2 * ring + 2 * bundle.lambda_hat * h
    raise ValueError(f"unknown Lichnerowicz variant {variant!r}")


def linearized_ricci_formula(ctx: ManifoldContext, h: TensorField, *, sign: Optional[int] = None) -> TensorField:
    """Ric'(h) = (Delta_L h - 2 delta* delta h - nabla d tr h) / 2.

    The last term is the Hessian of the trace.
    """
    lh = lichnerowicz(ctx, h, "general", sign=sign)
    gauge = sym_derivative(ctx, divergence(ctx, h))
    hess = hessian(ctx, trace(ctx, h))
    return 0.5 * (lh - 2 * gauge - hess)


def gauge_term(ctx: ManifoldContext, h: TensorField) -> TensorField:
    """-2 delta* delta h - nabla d tr h (vanishes on Chen-Nagano tensors)."""
    return -2 * sym_derivative(ctx, divergence(ctx, h)) - hessian(ctx, trace(ctx, h))


def linearized_ricci_gateaux(ctx: ManifoldContext, h: TensorField, eps: float = 1e-3) -> TensorField:
    """(Ric(g + eps h) - Ric(g - eps h)) / (2 eps), recomputing curvature at both metrics."""
    ctx.check(h, Valence.SYM2)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not np.any(h.components):
        return ctx.sym2(np.zeros((ctx.dim, ctx.dim) + ctx.grid_shape))
    ric = []
    for s in (+1, -1):
        try:
            pert = ctx.with_metric(ctx.g + s * eps * h.full(), label=f"g{'+' if s > 0 else '-'}eps*h")
        except ConstructionError as exc:
            raise PreconditionError(f"{exc}; retry with a smaller eps than {eps:g}") from exc
        ric.append(ricci_base(pert))
    return ctx.sym2(ta.sym((ric[0] - ric[1]) / (2 * eps)))


def apply_operator(ctx: ManifoldContext, op: OperatorId | str, f: TensorField) -> TensorField:
    """Dispatch by operator id (used by the CLI and spectral assembly)."""
    if isinstance(op, str):
        op = OperatorId.parse(op)
    name = op.name
    if name is OperatorName.TRACE:
        return trace(ctx, f)
    if name is OperatorName.DIVERGENCE:
        return divergence(ctx, f) if f.valence is Valence.SYM2 else codifferential(ctx, f)
    if name is OperatorName.SYM_DERIVATIVE:
        return sym_derivative(ctx, f)
    if name is OperatorName.EXTERIOR_D:
        return exterior_d(ctx, f)
    if name is OperatorName.HESSIAN:
        return hessian(ctx, f)
    if name is OperatorName.ROUGH_LAPLACIAN:
        return rough_laplacian(ctx, f)
    if name is OperatorName.SCALAR_LAPLACIAN:
        return scalar_laplacian(ctx, f)
    if name is OperatorName.HODGE_1FORM:
        return hodge_1form(ctx, f)
    if name is OperatorName.LICHNEROWICZ:
        return lichnerowicz(ctx, f, op.variant or "general")
    if name is OperatorName.RICCI_COMPOSITION:
        return ricci_composition(ctx, f)
    if name is OperatorName.LINEARIZED_RICCI:
        if op.variant == "gateaux":
            return linearized_ricci_gateaux(ctx, f)
        return linearized_ricci_formula(ctx, f)
    raise ValueError(f"unsupported operator {op}")


def input_valence(op: OperatorId) -> Valence:
    if op.name in (OperatorName.SCALAR_LAPLACIAN, OperatorName.EXTERIOR_D, OperatorName.HESSIAN):
        return Valence.SCALAR
    if op.name in (OperatorName.HODGE_1FORM, OperatorName.SYM_DERIVATIVE):
        return Valence.ONE_FORM
    return Valence.SYM2
