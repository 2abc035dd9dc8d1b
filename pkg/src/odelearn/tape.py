"""Reverse-mode autodiff on an append-only tape of dense float64 array ops.

A :class:`Tape` records primitive operations in topological order (every
node's inputs precede it by construction). :class:`Var` is a lightweight
handle (tape, node index) overloading arithmetic so numerical code written
with operators runs unchanged on taped values. ``backward`` replays the
tape once in reverse, accumulating exact gradients.

One tape is single-threaded; independent tapes may live on distinct
threads. Nothing here mutates shared state.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularMatrixError

_PIVOT_TOL = 1e-12


# ---------------------------------------------------------------------------
# batched dense LU with partial pivoting (n <= 16 in practice)

def lu_factor_batched(a):
    """Factor a stack of square matrices, PA = LU, vectorized over the batch.

    Returns (packed LU, row permutation). Raises SingularMatrixError when a
    pivot magnitude falls below 1e-12.
    """
    lu = np.array(a, dtype=float, copy=True)
    if lu.ndim == 2:
        lu = lu[None]
    nb, n, m = lu.shape
    if n != m:
        raise ValueError(f"expected square matrices, got {lu.shape}")
    perm = np.tile(np.arange(n), (nb, 1))
    rows = np.arange(nb)
    for k in range(n):
        piv = np.abs(lu[:, k:, k]).argmax(axis=1) + k
        mag = np.abs(lu[rows, piv, k])
        bad = np.flatnonzero(mag <= _PIVOT_TOL)
        if bad.size:
            b = int(bad[0])
            raise SingularMatrixError(k, batch_index=b, magnitude=float(mag[b]))
        swap = piv != k
        if np.any(swap):
            idx = rows[swap]
            lu[idx, k], lu[idx, piv[swap]] = (
                lu[idx, piv[swap]].copy(),
                lu[idx, k].copy(),
            )
            perm[idx, k], perm[idx, piv[swap]] = (
                perm[idx, piv[swap]].copy(),
                perm[idx, k].copy(),
            )
        if k + 1 < n:
            lu[:, k + 1 :, k] /= lu[:, k : k + 1, k]
            lu[:, k + 1 :, k + 1 :] -= (
                lu[:, k + 1 :, k : k + 1] * lu[:, k : k + 1, k + 1 :]
            )
    return lu, perm


def lu_solve_batched(lu, perm, b, trans=False):
    """Solve using a packed factorization; ``trans`` solves the transpose."""
    n = lu.shape[-1]
    x = np.array(b, dtype=float, copy=True)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None]
    if not trans:
        if perm.shape[0] == 1:
            x = x[:, perm[0]]
        else:
            x = np.take_along_axis(x, perm, axis=1)
        for i in range(1, n):
            x[:, i] -= np.sum(lu[:, i, :i] * x[:, :i], axis=1)
        for i in range(n - 1, -1, -1):
            if i + 1 < n:
                x[:, i] -= np.sum(lu[:, i, i + 1 :] * x[:, i + 1 :], axis=1)
            x[:, i] /= lu[:, i, i]
    else:
        # A^T y = b with PA = LU: solve U^T z = b, L^T w = z, y = P^T w
        for i in range(n):
            if i:
                x[:, i] -= np.sum(lu[:, :i, i] * x[:, :i], axis=1)
            x[:, i] /= lu[:, i, i]
        for i in range(n - 1, -1, -1):
            if i + 1 < n:
                x[:, i] -= np.sum(lu[:, i + 1 :, i] * x[:, i + 1 :], axis=1)
        out = np.empty_like(x)
        if perm.shape[0] == 1:
            out[:, perm[0]] = x
        else:
            np.put_along_axis(out, perm, x, axis=1)
        x = out
    return x[0] if squeeze else x


def solve_dense(a, b):
    """Plain (non-taped) linear solve through the same pivoted LU kernel."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lu, perm = lu_factor_batched(a)
    if a.ndim == 2 and b.ndim == 2:
        # one matrix, many right-hand sides as rows
        return lu_solve_batched(lu, perm, b)
    if a.ndim == 3 and b.ndim == 2:
        return lu_solve_batched(lu, perm, b)
    return lu_solve_batched(lu, perm, b)


# ---------------------------------------------------------------------------
# tape machinery

class Node:
    __slots__ = ("op", "inputs", "value", "vjp")

    def __init__(self, op, inputs, value, vjp):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp


class Tape:
    """Append-only record of operations; index order is topological order."""

    def __init__(self):
        self.nodes = []

    def _append(self, op, inputs, value, vjp=None):
        self.nodes.append(Node(op, inputs, value, vjp))
        return Var(self, len(self.nodes) - 1)

    def leaf(self, value):
        """Register an input (parameter or constant) and return its handle."""
        return self._append("leaf", (), np.asarray(value, dtype=float))

    def __len__(self):
        return len(self.nodes)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _swap(a):
    return np.swapaxes(a, -1, -2)


class Var:
    """Handle to one tape node; supports the arithmetic the steppers use."""

    __slots__ = ("tape", "idx")

    # make ndarray <op> Var dispatch to the reflected methods below
    __array_ufunc__ = None

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    def _lift(self, other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("cannot mix variables from different tapes")
            return other
        return self.tape.leaf(other)

    # -- elementwise -------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self.tape._append("add", (self.idx, other.idx), a + b, vjp)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return self.tape._append("sub", (self.idx, other.idx), a - b, vjp)

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __neg__(self):
        def vjp(g):
            return (-g,)

        return self.tape._append("neg", (self.idx,), -self.value, vjp)

    def __mul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value

        def vjp(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return self.tape._append("mul", (self.idx, other.idx), a * b, vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value

        def vjp(g):
            return (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            )

        return self.tape._append("div", (self.idx, other.idx), a / b, vjp)

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    # -- linear algebra ----------------------------------------------------
    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.value, other.value
        if a.ndim < 2 or b.ndim < 2:
            raise ValueError("taped matmul expects operands with ndim >= 2")

        def vjp(g):
            return (
                _unbroadcast(np.matmul(g, _swap(b)), a.shape),
                _unbroadcast(np.matmul(_swap(a), g), b.shape),
            )

        return self.tape._append("matmul", (self.idx, other.idx), np.matmul(a, b), vjp)

    def __rmatmul__(self, other):
        return self._lift(other).__matmul__(self)

    @property
    def T(self):
        def vjp(g):
            return (_swap(g),)

        return self.tape._append("transpose", (self.idx,), _swap(self.value), vjp)

    def __getitem__(self, key):
        src_shape = self.value.shape

        def vjp(g):
            out = np.zeros(src_shape)
            out[key] += g
            return (out,)

        return self.tape._append("getitem", (self.idx,), self.value[key], vjp)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        src_shape = self.value.shape

        def vjp(g):
            return (g.reshape(src_shape),)

        return self.tape._append(
            "reshape", (self.idx,), self.value.reshape(shape), vjp
        )

    def sum(self, axis=None, keepdims=False):
        src_shape = self.value.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, src_shape).copy(),)
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src_shape).copy(),)

        return self.tape._append(
            "sum", (self.idx,), self.value.sum(axis=axis, keepdims=keepdims), vjp
        )

    def broadcast_to(self, shape):
        src_shape = self.value.shape

        def vjp(g):
            return (_unbroadcast(g, src_shape),)

        return self.tape._append(
            "broadcast", (self.idx,), np.broadcast_to(self.value, shape).copy(), vjp
        )

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"


# elementwise nonlinearities -------------------------------------------------

def _unary(x, op, fwd, dfd):
    y = fwd(x.value)

    def vjp(g):
        return (g * dfd(x.value, y),)

    return x.tape._append(op, (x.idx,), y, vjp)


def tanh_(x):
    return _unary(x, "tanh", np.tanh, lambda v, y: 1.0 - y * y)


def sin_(x):
    return _unary(x, "sin", np.sin, lambda v, y: np.cos(v))


def cos_(x):
    return _unary(x, "cos", np.cos, lambda v, y: -np.sin(v))


def exp_(x):
    return _unary(x, "exp", np.exp, lambda v, y: y)


def sqrt_(x):
    return _unary(x, "sqrt", np.sqrt, lambda v, y: 0.5 / y)


def concat_(parts, axis):
    tape = parts[0].tape
    parts = [p if isinstance(p, Var) else tape.leaf(p) for p in parts]
    values = [p.value for p in parts]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(sizes)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return tape._append(
        "concat", tuple(p.idx for p in parts), np.concatenate(values, axis=axis), vjp
    )


def solve_(a, b):
    """Differentiable linear solve A x = b with the analytic adjoint.

    The reverse rule is b_bar = A^{-T} x_bar and A_bar = -b_bar x^T; the
    forward factorization is reused for the transpose solve.
    """
    tape = a.tape if isinstance(a, Var) else b.tape
    a = a if isinstance(a, Var) else tape.leaf(a)
    b = b if isinstance(b, Var) else tape.leaf(b)
    av, bv = a.value, b.value
    lu, perm = lu_factor_batched(av)
    x = lu_solve_batched(lu, perm, bv)

    def vjp(g):
        bbar = lu_solve_batched(lu, perm, g, trans=True)
        if x.ndim == 1:
            abar = -np.outer(bbar, x)
        else:
            abar = -bbar[..., :, None] * x[..., None, :]
        return _unbroadcast(abar, av.shape), _unbroadcast(bbar, bv.shape)

    return tape._append("solve", (a.idx, b.idx), x, vjp)


# ---------------------------------------------------------------------------

def backward(output, seed=None):
    """Reverse pass from ``output``; returns {node index: gradient array}.

    Visits every node at most once, in reverse topological order; nodes that
    do not influence the output simply never receive a gradient (zero).
    """
    tape = output.tape
    value = output.value
    if seed is None:
        seed = np.ones_like(value)
    else:
        seed = np.asarray(seed, dtype=float)
        if seed.shape != value.shape:
            raise ValueError(
                f"seed shape {seed.shape} does not match output shape {value.shape}"
            )
    grads = {output.idx: seed}
    for i in range(output.idx, -1, -1):
        g = grads.get(i)
        if g is None:
            continue
        node = tape.nodes[i]
        if node.vjp is None:
            continue
        for j, gj in zip(node.inputs, node.vjp(g)):
            if j in grads:
                grads[j] = grads[j] + gj
            else:
                grads[j] = gj
    return grads


def gradient(output, wrt, seed=None):
    """Gradients of a taped scalar/array for each Var in ``wrt``."""
    grads = backward(output, seed)
    return [grads.get(v.idx, np.zeros_like(v.value)) for v in wrt]


def matrix_exp(a, t=1.0):
    """Matrix exponential e^{At} for small dense systems (D <= 16)."""
    from scipy.linalg import expm

    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > 16:
        raise ValueError("matrix_exp supports dimensions up to 16")
    return expm(a * t)
