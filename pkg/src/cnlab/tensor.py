"""Pointwise tensor algebra on component-first arrays."""

from __future__ import annotations

import string
from functools import lru_cache

import numpy as np


def n_packed(dim: int) -> int:
    return dim * (dim + 1) // 2


def dim_from_packed(m: int) -> int:
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise ValueError(f"{m} is not a triangular number of components")
    return n


@lru_cache(maxsize=None)
def _triu(dim: int):
    return np.triu_indices(dim)


def pack(full: np.ndarray, dim: int) -> np.ndarray:
    iu = _triu(dim)
    return full[iu[0], iu[1]]


def unpack(packed: np.ndarray) -> np.ndarray:
    dim = dim_from_packed(packed.shape[0])
    iu = _triu(dim)
    full = np.empty((dim, dim) + packed.shape[1:], dtype=packed.dtype)
    full[iu[0], iu[1]] = packed
    full[iu[1], iu[0]] = packed
    return full


def sym(t: np.ndarray) -> np.ndarray:
    """Symmetric part over the first two axes."""
    return 0.5 * (t + np.swapaxes(t, 0, 1))


def raise_all(t: np.ndarray, g_inv: np.ndarray, rank: int) -> np.ndarray:
    """Raise the first ``rank`` indices of a covariant tensor with ``g_inv``."""
    out = t
    for slot in range(rank):
        out = np.moveaxis(contract_slot(out, g_inv, slot), 0, slot)
    return out


def contract_slot(t: np.ndarray, m: np.ndarray, slot: int) -> np.ndarray:
    """``sum_k m[a, k] t[..., k (at slot), ...]`` with the new index ``a`` first."""
    rank = t.ndim - (m.ndim - 2)
    letters = string.ascii_letters[: rank + 1]
    a, rest = letters[0], letters[1:]
    t_idx = list(rest)
    k = t_idx[slot]
    out_idx = [a] + [c for i, c in enumerate(t_idx) if i != slot]
    spec = f"{a}{k}...,{''.join(t_idx)}...->{''.join(out_idx)}..."
    return np.einsum(spec, m, t)


def inner(s: np.ndarray, t: np.ndarray, g_inv: np.ndarray, rank: int) -> np.ndarray:
    """Pointwise metric inner product of two covariant rank-``rank`` tensors."""
    if rank == 0:
        return s * t
    raised = raise_all(t, g_inv, rank)
    return np.sum(s * raised, axis=tuple(range(rank)))


def pointwise_norm(t: np.ndarray, g_inv: np.ndarray, rank: int) -> np.ndarray:
    sq = inner(t, t, g_inv, rank)
    return np.sqrt(np.maximum(sq, 0.0))


def matmul_pointwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,jk...->ik...", a, b)


def inv_pointwise(g: np.ndarray) -> np.ndarray:
    moved = np.moveaxis(g, (0, 1), (-2, -1))
    return np.moveaxis(np.linalg.inv(moved), (-2, -1), (0, 1))


def det_pointwise(g: np.ndarray) -> np.ndarray:
    return np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1)))


def eigvalsh_pointwise(g: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.linalg.eigvalsh(np.moveaxis(g, (0, 1), (-2, -1))), -1, 0)


def project_algebraic_curvature(r: np.ndarray) -> np.ndarray:
    """Project onto tensors antisymmetric in (0,1), in (2,3), symmetric under pair exchange."""
    a = 0.5 * (r - np.swapaxes(r, 0, 1))
    b = 0.5 * (a - np.swapaxes(a, 2, 3))
    axes = (2, 3, 0, 1) + tuple(range(4, r.ndim))
    return 0.5 * (b + np.transpose(b, axes))
