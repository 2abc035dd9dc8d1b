"""Vector-field protocol shared by built-in systems, models and oracles."""

from __future__ import annotations

import numpy as np

from .duals import Dual, lift
from .ops import primal, stack_last


class VectorField:
    """An evaluatable field y -> f(y) acting on the trailing state axis.

    Subclasses implement ``__call__``; it must accept plain float64 arrays
    of shape (..., D) and, when composed from the generic primitives in
    :mod:`odelearn.ops`, dual numbers as well. ``jacobian`` defaults to
    exact forward-mode columns and may be overridden with a closed form.
    """

    dim = None

    def __call__(self, y):
        raise NotImplementedError

    def jacobian(self, y):
        shape = np.shape(primal(y))
        cols = []
        for i in range(self.dim):
            e = np.zeros(shape)
            e[..., i] = 1.0
            cols.append(self(Dual(y, lift(e, y))).im)
        return stack_last(cols)


class FuncField(VectorField):
    """Wrap a plain callable as a field."""

    def __init__(self, fn, dim, name=None):
        self.fn = fn
        self.dim = dim
        self.name = name or getattr(fn, "__name__", "field")

    def __call__(self, y):
        return self.fn(y)


class LinearField(VectorField):
    """Affine field y -> A y + c."""

    def __init__(self, a, c=None, name="linear"):
        self.a = np.asarray(a, dtype=float)
        self.dim = self.a.shape[0]
        self.c = np.zeros(self.dim) if c is None else np.asarray(c, dtype=float)
        self.name = name

    def __call__(self, y):
        return y @ self.a.T + self.c

    def jacobian(self, y):
        shape = np.shape(primal(y))
        if len(shape) == 1:
            return self.a.copy()
        return np.broadcast_to(self.a, shape[:-1] + self.a.shape).copy()


class ZeroField(VectorField):
    def __init__(self, dim):
        self.dim = dim

    def __call__(self, y):
        return y * 0.0


class CountingField(VectorField):
    """Wrapper accumulating evaluation counts; one batch row = one eval."""

    def __init__(self, field):
        self.field = field
        self.dim = field.dim
        self.evals = 0
        self.jacobian_evals = 0

    def _count(self, y):
        shape = np.shape(primal(y))
        return int(np.prod(shape[:-1])) if len(shape) > 1 else 1

    def __call__(self, y):
        self.evals += self._count(y)
        return self.field(y)

    def jacobian(self, y):
        self.jacobian_evals += self._count(y)
        return self.field.jacobian(y)


def as_field(f, dim=None):
    if isinstance(f, VectorField):
        return f
    if callable(f):
        if dim is None:
            raise ValueError("dim is required when wrapping a plain callable")
        return FuncField(f, dim)
    raise TypeError(f"cannot interpret {type(f).__name__} as a vector field")
