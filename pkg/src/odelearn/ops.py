"""Type-generic numerical primitives.

Vector fields, models and step operators are written once against these
helpers and run unchanged on three value kinds: plain float64 arrays,
:class:`~odelearn.duals.Dual` (forward derivatives) and
:class:`~odelearn.tape.Var` (reverse-mode tape).
"""

from __future__ import annotations

import numpy as np

from . import tape as _t
from .duals import Dual, lift, primal as dual_primal


def primal(x):
    """Underlying float array of any value kind."""
    if isinstance(x, _t.Var):
        return x.value
    return dual_primal(x)


def tanh(x):
    if isinstance(x, _t.Var):
        return _t.tanh_(x)
    if isinstance(x, Dual):
        t = tanh(x.re)
        return Dual(t, x.im * (1.0 - t * t))
    return np.tanh(x)


def sin(x):
    if isinstance(x, _t.Var):
        return _t.sin_(x)
    if isinstance(x, Dual):
        return Dual(sin(x.re), x.im * cos(x.re))
    return np.sin(x)


def cos(x):
    if isinstance(x, _t.Var):
        return _t.cos_(x)
    if isinstance(x, Dual):
        return Dual(cos(x.re), -(x.im * sin(x.re)))
    return np.cos(x)


def exp(x):
    if isinstance(x, _t.Var):
        return _t.exp_(x)
    if isinstance(x, Dual):
        e = exp(x.re)
        return Dual(e, x.im * e)
    return np.exp(x)


def sqrt(x):
    if isinstance(x, _t.Var):
        return _t.sqrt_(x)
    if isinstance(x, Dual):
        r = sqrt(x.re)
        return Dual(r, x.im / (2.0 * r))
    return np.sqrt(x)


def stack_last(parts):
    """Stack scalar/batch components along a new trailing state axis."""
    if any(isinstance(p, Dual) for p in parts):
        like = next(p for p in parts if isinstance(p, Dual))
        parts = [p if isinstance(p, Dual) else lift(p, like) for p in parts]
        return Dual(
            stack_last([p.re for p in parts]),
            stack_last([p.im for p in parts]),
        )
    if any(isinstance(p, _t.Var) for p in parts):
        v = next(p for p in parts if isinstance(p, _t.Var))
        cols = []
        for p in parts:
            p = p if isinstance(p, _t.Var) else v.tape.leaf(p)
            cols.append(p.reshape(p.shape + (1,)))
        return concat(cols, axis=-1)
    return np.stack([np.asarray(p, dtype=float) for p in parts], axis=-1)


def concat(parts, axis):
    if any(isinstance(p, Dual) for p in parts):
        like = next(p for p in parts if isinstance(p, Dual))
        parts = [p if isinstance(p, Dual) else lift(p, like) for p in parts]
        return Dual(
            concat([p.re for p in parts], axis),
            concat([p.im for p in parts], axis),
        )
    if any(isinstance(p, _t.Var) for p in parts):
        return _t.concat_(parts, axis)
    return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=axis)


def matmul(a, b):
    if isinstance(a, _t.Var) or isinstance(b, _t.Var):
        return a @ b
    if isinstance(a, Dual) or isinstance(b, Dual):
        if isinstance(a, Dual):
            return a @ b
        return b.__rmatmul__(a)
    return np.matmul(a, b)


def solve(a, b):
    """Linear solve generic over value kinds.

    Dual inputs use the exact forward rule dx = A^{-1}(db - dA x), recursing
    through nesting levels; taped inputs get the adjoint-equipped tape op;
    arrays go straight to the pivoted LU kernel.
    """
    if isinstance(a, Dual) or isinstance(b, Dual):
        like = a if isinstance(a, Dual) else b
        if not isinstance(a, Dual):
            a = lift(a, like)
        if not isinstance(b, Dual):
            b = lift(b, like)
        x0 = solve(a.re, b.re)
        rhs = b.im - _matvec(a.im, x0)
        return Dual(x0, solve(a.re, rhs))
    if isinstance(a, _t.Var) or isinstance(b, _t.Var):
        return _t.solve_(a, b)
    return _t.solve_dense(a, b)


def _matvec(m, x):
    # (..., n, n) @ (..., n) for arrays or Duals
    if isinstance(m, Dual) or isinstance(x, Dual):
        if not isinstance(m, Dual):
            return Dual(_matvec(m, x.re), _matvec(m, x.im))
        if not isinstance(x, Dual):
            return Dual(_matvec(m.re, x), _matvec(m.im, x))
        return Dual(_matvec(m.re, x.re), _matvec(m.re, x.im) + _matvec(m.im, x.re))
    return np.matmul(m, x[..., None])[..., 0]


def unsqueeze_last(x):
    """Append a trailing axis of size one."""
    if isinstance(x, _t.Var):
        return x.reshape(x.shape + (1,))
    if isinstance(x, Dual):
        return Dual(unsqueeze_last(x.re), unsqueeze_last(x.im))
    return np.asarray(x)[..., None]


def all_finite(x):
    return bool(np.all(np.isfinite(primal(x))))


def to_batch(x):
    """Promote a single state (D,) to a batch (1, D); report if promoted."""
    if isinstance(x, (_t.Var, Dual)):
        single = primal(x).ndim == 1
        if single:
            if isinstance(x, _t.Var):
                return x.reshape((1,) + x.shape), True
            return _dual_reshape(x, lambda v: v[None]), True
        return x, False
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None], True
    return x, False


def from_batch(x, was_single):
    if not was_single:
        return x
    if isinstance(x, _t.Var):
        return x[0]
    if isinstance(x, Dual):
        return _dual_reshape(x, lambda v: v[0])
    return x[0]


def _dual_reshape(x, fn):
    if isinstance(x, Dual):
        return Dual(_dual_reshape(x.re, fn), _dual_reshape(x.im, fn))
    return fn(x)
