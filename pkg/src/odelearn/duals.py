"""Nested forward-mode dual numbers for exact directional derivatives.

A :class:`Dual` carries a primal and one tangent; components are float64
arrays or further Duals, so nesting levels compose. Three levels suffice
for the third-order contractions the modified-equation expansions need:
f'(x)u, f''(x)(u,v), f'''(x)(u,v,w).
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("re", "im")

    # keep numpy from absorbing Duals into object arrays; binary ops defer
    # to the reflected methods below instead
    __array_ufunc__ = None

    def __init__(self, re, im):
        self.re = re
        self.im = im

    # -- structure helpers ---------------------------------------------------
    def __getitem__(self, key):
        return Dual(self.re[key], self.im[key])

    @property
    def shape(self):
        return primal(self).shape

    def __len__(self):
        return len(primal(self))

    # -- arithmetic ------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.im + other.im)
        return Dual(self.re + other, self.im)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.im - other.im)
        return Dual(self.re - other, self.im)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.im)

    def __neg__(self):
        return Dual(-self.re, -self.im)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.re * other.im + self.im * other.re)
        return Dual(self.re * other, self.im * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = other._reciprocal()
            return self * inv
        return Dual(self.re / other, self.im / other)

    def __rtruediv__(self, other):
        return self._reciprocal() * other

    def _reciprocal(self):
        r = self.re._reciprocal() if isinstance(self.re, Dual) else 1.0 / self.re
        return Dual(r, -(r * r) * self.im)

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)) or n < 0:
            raise ValueError("dual power supports non-negative integers only")
        if n == 0:
            return np.ones_like(primal(self))
        out = self
        for _ in range(int(n) - 1):
            out = out * self
        return out

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                _mm(self.re, other.re),
                _mm(self.re, other.im) + _mm(self.im, other.re),
            )
        return Dual(_mm(self.re, other), _mm(self.im, other))

    def __rmatmul__(self, other):
        return Dual(_mm(other, self.re), _mm(other, self.im))

    def __repr__(self):
        return f"Dual({self.re!r}, {self.im!r})"


def _mm(a, b):
    if isinstance(a, Dual) or isinstance(b, Dual):
        if not isinstance(a, Dual):
            return Dual(_mm(a, b.re), _mm(a, b.im))
        return a.__matmul__(b)
    return np.matmul(a, b)


def primal(x):
    """Strip all tangent levels down to the underlying float array."""
    while isinstance(x, Dual):
        x = x.re
    return x


def zero_tangent(x, like):
    """A zero with x's array shape and ``like``'s nesting structure."""
    if isinstance(like, Dual):
        return Dual(zero_tangent(x, like.re), zero_tangent(x, like.im))
    return np.zeros(np.shape(np.asarray(x, dtype=float)))


def lift(x, like):
    """Embed a plain array at the nesting depth of ``like`` (zero tangents)."""
    if not isinstance(like, Dual):
        return np.asarray(x, dtype=float)
    return Dual(lift(x, like.re), zero_tangent(x, like.im))


def jvp(field, x, directions):
    """Contracted derivative of ``field`` at x: k directions give the k-th
    order symmetric contraction, exact to machine precision.

    One direction returns f'(x)u, two f''(x)(u,v), three f'''(x)(u,v,w).
    """
    directions = list(directions)
    if not 1 <= len(directions) <= 3:
        raise ValueError(
            f"jvp supports 1 to 3 directions, got {len(directions)}"
        )
    y = np.asarray(x, dtype=float)
    for u in directions:
        y = Dual(y, lift(np.asarray(u, dtype=float), y))
    out = field(y)
    for _ in directions:
        out = out.im
    return np.asarray(out, dtype=float)
