"""Per-axis derivative engines on tensor-product grids.

Arrays are laid out with component axes first and the ``dim`` grid axes
last, so every engine differentiates along ``arr.ndim - dim + axis``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def central_weights(order: int) -> tuple[float, ...]:
    """First-derivative weights on offsets ``-order/2 .. order/2`` (unit spacing)."""
    if order % 2 or order < 2:
        raise ValueError(f"stencil order must be a positive even integer, got {order}")
    m = order // 2
    offsets = np.arange(-m, m + 1, dtype=float)
    vander = np.vander(offsets, increasing=True).T
    rhs = np.zeros(order + 1)
    rhs[1] = 1.0
    w = np.linalg.solve(vander, rhs)
    # antisymmetry is exact in exact arithmetic; enforce it in floating point
    w = 0.5 * (w - w[::-1])
    return tuple(float(x) for x in w)


class Engine:
    """Base class. ``spacing`` is the grid step along each axis."""

    kind = "abstract"

    def __init__(self, dim: int, shape: tuple[int, ...], spacing: tuple[float, ...]):
        self.dim = dim
        self.shape = tuple(shape)
        self.spacing = tuple(spacing)

    def _axis(self, arr: np.ndarray, axis: int) -> int:
        if not 0 <= axis < self.dim:
            raise ValueError(f"axis {axis} out of range for dim {self.dim}")
        return arr.ndim - self.dim + axis

    def d(self, arr: np.ndarray, axis: int) -> np.ndarray:
        raise NotImplementedError

    def grad(self, arr: np.ndarray) -> np.ndarray:
        """Stack of partial derivatives, new leading axis of length ``dim``."""
        return np.stack([self.d(arr, a) for a in range(self.dim)])

    def symbol(self, axis: int) -> np.ndarray:
        """Real ``kappa`` with ``D e^{2 pi i k x} = i kappa(k) e^{2 pi i k x}`` (periodic only)."""
        raise NotImplementedError(f"{self.kind} engine has no Fourier symbol")


class FourierEngine(Engine):
    """Exact differentiation of trigonometric polynomials on odd periodic grids."""

    kind = "fourier"

    def __init__(self, dim, shape, spacing):
        super().__init__(dim, shape, spacing)
        for n in shape:
            if n % 2 == 0:
                raise ValueError("Fourier differentiation requires odd sample counts")
        self._ik = []
        for n, h in zip(shape, spacing):
            k = np.fft.fftfreq(n, d=h)
            self._ik.append(2j * np.pi * k)

    def d(self, arr, axis):
        ax = self._axis(arr, axis)
        bshape = [1] * arr.ndim
        bshape[ax] = self.shape[axis]
        ik = self._ik[axis].reshape(bshape)
        out = np.fft.ifft(ik * np.fft.fft(arr, axis=ax), axis=ax)
        if np.isrealobj(arr):
            return out.real
        return out

    def symbol(self, axis):
        return self._ik[axis].imag.copy()


class PeriodicFD(Engine):
    """Central finite differences of even order with periodic wrap."""

    kind = "fd_periodic"

    def __init__(self, dim, shape, spacing, order: int):
        super().__init__(dim, shape, spacing)
        self.order = order
        self.weights = central_weights(order)

    def d(self, arr, axis):
        ax = self._axis(arr, axis)
        m = self.order // 2
        h = self.spacing[axis]
        out = np.zeros_like(arr)
        for j, w in zip(range(-m, m + 1), self.weights):
            if w == 0.0:
                continue
            # f(x + j h) lives at index i + j
            out += w * np.roll(arr, -j, axis=ax)
        return out / h

    def symbol(self, axis):
        n, h = self.shape[axis], self.spacing[axis]
        k = np.fft.fftfreq(n) * n
        m = self.order // 2
        kappa = np.zeros(n)
        for j, w in zip(range(-m, m + 1), self.weights):
            kappa += w * np.sin(2 * np.pi * k * j / n)
        return kappa / h


class OpenFD(Engine):
    """Central finite differences on a non-periodic grid.

    Samples whose stencil would leave the grid are set to NaN, so nested
    operators shrink the valid region by ``order/2`` samples per level and any
    leak into the evaluation region is loud rather than silently inaccurate.
    """

    kind = "fd_open"

    def __init__(self, dim, shape, spacing, order: int):
        super().__init__(dim, shape, spacing)
        self.order = order
        self.weights = central_weights(order)

    def d(self, arr, axis):
        ax = self._axis(arr, axis)
        m = self.order // 2
        n = arr.shape[ax]
        h = self.spacing[axis]
        out = np.full(arr.shape, np.nan, dtype=np.result_type(arr, float))
        core = [slice(None)] * arr.ndim
        core[ax] = slice(m, n - m)
        acc = np.zeros(out[tuple(core)].shape, dtype=out.dtype)
        for j, w in zip(range(-m, m + 1), self.weights):
            if w == 0.0:
                continue
            src = [slice(None)] * arr.ndim
            src[ax] = slice(m + j, n - m + j)
            acc += w * arr[tuple(src)]
        out[tuple(core)] = acc / h
        return out
