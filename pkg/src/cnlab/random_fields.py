"""Seeded band-limited smooth fields.

On tori the fields are trigonometric polynomials on the unit cell.  On open
charts the same construction is evaluated in chart coordinates rescaled to a
unit box, which keeps at most ``bandwidth`` oscillations across the chart.
"""

from __future__ import annotations

import itertools

import numpy as np

from .geometry import ManifoldContext, TensorField, Valence
from . import tensor as ta


def _unit_coords(ctx: ManifoldContext) -> np.ndarray:
    if ctx.is_torus:
        return ctx.coords
    centre = ctx.coords[(slice(None),) + ctx.center_index()]
    width = 2 * ctx.chart.extent
    shape = (ctx.dim,) + (1,) * ctx.dim
    return (ctx.coords - centre.reshape(shape)) / width


def _series(ctx: ManifoldContext, rng: np.random.Generator, bandwidth: int, count: int) -> np.ndarray:
    x = _unit_coords(ctx)
    out = np.zeros((count,) + ctx.grid_shape)
    modes = list(itertools.product(range(-bandwidth, bandwidth + 1), repeat=ctx.dim))
    for c in range(count):
        for k in modes:
            amp = rng.standard_normal() / (1.0 + float(np.dot(k, k)))
            phase = rng.uniform(0, 2 * np.pi)
            arg = 2 * np.pi * np.tensordot(np.asarray(k, dtype=float), x, axes=(0, 0))
            out[c] += amp * np.cos(arg + phase)
    return out


def band_limited_scalar(ctx: ManifoldContext, rng: np.random.Generator, bandwidth: int = 1) -> TensorField:
    return ctx.scalar(_series(ctx, rng, bandwidth, 1)[0])


def band_limited_one_form(ctx: ManifoldContext, rng: np.random.Generator, bandwidth: int = 1) -> TensorField:
    return ctx.one_form(_series(ctx, rng, bandwidth, ctx.dim))


def band_limited_sym2(ctx: ManifoldContext, rng: np.random.Generator, bandwidth: int = 1) -> TensorField:
    packed = _series(ctx, rng, bandwidth, ta.n_packed(ctx.dim))
    return TensorField(Valence.SYM2, packed, ctx.uid)
