"""Runge-Kutta step operators: exact implicit solve and its two unrollings.

All three modes share the stage recursion

    v_i^0 = x,    v_i^l = x + h sum_j a_ij f(v_j^{l-1})            (fixed point)
    v_i^l = x + h sum_j a_ij (f(v_j^{l-1}) + f'(v_j^{l-1})(v_j^l - v_j^{l-1}))
                                                                   (Newton)

with output x + h sum_i b_i f(v_i^L). The Newton update solves the stacked
(D*I) x (D*I) block system in one batched linear solve. States may be plain
arrays (single (D,) or batched (B, D)), duals, or taped variables; the same
code path serves all three. Operators never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, ConvergenceFailure, DivergenceError
from .fields import as_field
from .tableaux import get_tableau


@dataclass(frozen=True)
class FixedPoint:
    iterations: int

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iteration count must be >= 0")


@dataclass(frozen=True)
class NewtonRaphson:
    iterations: int

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iteration count must be >= 0")


@dataclass(frozen=True)
class Exact:
    tol: float = 1e-12
    max_iters: int = 100

    def __post_init__(self):
        if self.tol <= 0:
            raise ConfigError("exact-solve tolerance must be positive")


def _check_finite(value, iteration, stage):
    if not ops.all_finite(value):
        raise DivergenceError(iteration=iteration, stage=stage)


def _combine(x, h, weights, values):
    """x + h * sum_i weights[i] * values[i], skipping zero weights."""
    acc = None
    for w, v in zip(weights, values):
        if w == 0.0:
            continue
        term = (h * w) * v
        acc = term if acc is None else acc + term
    return x if acc is None else x + acc


def step_fixed_point(field, x, h, tableau, iterations):
    """Successive substitution with a fixed iteration count (L >= 0).

    L = 0 collapses to the consistent explicit predictor
    x + h sum_i b_i f(x).
    """
    tab = get_tableau(tableau)
    a, b, n_stages = tab.a, tab.b, tab.stages
    xb, single = ops.to_batch(x)
    stages = [xb] * n_stages
    for l in range(1, iterations + 1):
        fv = [field(v) for v in stages]
        for i, v in enumerate(fv):
            _check_finite(v, l, i)
        stages = [_combine(xb, h, a[i], fv) for i in range(n_stages)]
    fv = [field(v) for v in stages]
    for i, v in enumerate(fv):
        _check_finite(v, iterations, i)
    out = _combine(xb, h, b, fv)
    return ops.from_batch(out, single)


def step_explicit(field, x, h, tableau):
    """Direct stage-by-stage evaluation; valid for explicit tableaux only."""
    tab = get_tableau(tableau)
    if not tab.is_explicit:
        raise ConfigError(f"tableau '{tab.name}' is not explicit")
    a, b = tab.a, tab.b
    fv = []
    for i in range(tab.stages):
        v = _combine(x, h, a[i, :i], fv)
        fv.append(field(v))
    return _combine(x, h, b, fv)


def _newton_system(field, xb, h, a, stages, dim):
    """Residual F(V) and block matrix F'(V) for the stacked stage system."""
    n_stages = len(stages)
    fv = [field(v) for v in stages]
    residual = ops.concat(
        [stages[i] - _combine(xb, h, a[i], fv) for i in range(n_stages)], axis=-1
    )
    batch = np.shape(ops.primal(xb))[0]
    eye = np.broadcast_to(np.eye(dim), (batch, dim, dim)).copy()
    zero = np.zeros((batch, dim, dim))
    needs_jac = [bool(np.any(a[:, j] != 0.0)) for j in range(n_stages)]
    jac = [
        field.jacobian(stages[j]) if needs_jac[j] else None
        for j in range(n_stages)
    ]
    rows = []
    for i in range(n_stages):
        blocks = []
        for j in range(n_stages):
            if a[i, j] == 0.0:
                blocks.append(eye if i == j else zero)
                continue
            block = (-h * a[i, j]) * jac[j]
            blocks.append(block + eye if i == j else block)
        rows.append(ops.concat(blocks, axis=-1))
    return residual, ops.concat(rows, axis=-2), fv


def step_newton(field, x, h, tableau, iterations):
    """Unrolled Newton-Raphson iterations on the implicit stage equations."""
    tab = get_tableau(tableau)
    a, b, n_stages = tab.a, tab.b, tab.stages
    field = as_field(field)
    dim = field.dim
    xb, single = ops.to_batch(x)
    stages = [xb] * n_stages
    for l in range(1, iterations + 1):
        residual, system, _ = _newton_system(field, xb, h, a, stages, dim)
        _check_finite(residual, l, None)
        delta = ops.solve(system, residual)
        stages = [
            stages[i] - delta[..., i * dim : (i + 1) * dim]
            for i in range(n_stages)
        ]
        for i, v in enumerate(stages):
            _check_finite(v, l, i)
    fv = [field(v) for v in stages]
    for i, v in enumerate(fv):
        _check_finite(v, iterations, i)
    out = _combine(xb, h, b, fv)
    return ops.from_batch(out, single)


def step_exact(field, x, h, tableau, tol=1e-12, max_iters=100):
    """Full Newton solve of the stage equations to a residual tolerance.

    The initial guess v_i = x matches the unrolled schemes, so in the
    contraction regime all solvers converge to the same stage root.
    """
    if tol <= 0:
        raise ConfigError("tolerance must be positive")
    tab = get_tableau(tableau)
    a, b, n_stages = tab.a, tab.b, tab.stages
    field = as_field(field)
    dim = field.dim
    xb, single = ops.to_batch(x)
    stages = [xb] * n_stages
    residual_norm = np.inf
    for l in range(max_iters + 1):
        residual, system, fv = _newton_system(field, xb, h, a, stages, dim)
        _check_finite(residual, l, None)
        residual_norm = float(np.abs(ops.primal(residual)).max())
        if residual_norm <= tol:
            out = _combine(xb, h, b, fv)
            return ops.from_batch(out, single)
        if l == max_iters:
            break
        delta = ops.solve(system, residual)
        stages = [
            stages[i] - delta[..., i * dim : (i + 1) * dim]
            for i in range(n_stages)
        ]
    raise ConvergenceFailure(residual_norm, max_iters)


@dataclass(frozen=True)
class StepOperator:
    """One scheme step of size h in a given solution mode.

    Immutable after construction; safe to share across threads.
    """

    tableau: object
    mode: object
    h: float

    def __post_init__(self):
        object.__setattr__(self, "tableau", get_tableau(self.tableau))
        if not isinstance(self.mode, (FixedPoint, NewtonRaphson, Exact)):
            raise ConfigError(f"unknown step mode {self.mode!r}")

    def __call__(self, field, x):
        field = as_field(field)
        if isinstance(self.mode, FixedPoint):
            return step_fixed_point(
                field, x, self.h, self.tableau, self.mode.iterations
            )
        if isinstance(self.mode, NewtonRaphson):
            return step_newton(field, x, self.h, self.tableau, self.mode.iterations)
        return step_exact(
            field, x, self.h, self.tableau, self.mode.tol, self.mode.max_iters
        )


def compose(step, field, x, s):
    """Apply a step operator s times (s >= 1)."""
    if s < 1:
        raise ConfigError("composition count must be >= 1")
    field = as_field(field)
    for _ in range(s):
        x = step(field, x)
    return x


def odesolve(x, field, m, dt, step, s):
    """Advance x over a horizon of m data steps: m*s applications of step.

    Requires h = dt / s to match the operator's step size.
    """
    if m < 1:
        raise ConfigError("horizon multiplier must be >= 1")
    if abs(step.h * s - dt) > 1e-12 * max(1.0, abs(dt)):
        raise ConfigError(
            f"step size {step.h} times s={s} does not equal the data step {dt}"
        )
    return compose(step, field, x, m * s)


def mode_from_config(mode, iterations=None, tol=1e-12, max_iters=100):
    """Build a step mode from config-style fields."""
    if isinstance(mode, (FixedPoint, NewtonRaphson, Exact)):
        return mode
    if mode == "fixed_point":
        if iterations is None:
            raise ConfigError("fixed_point mode needs an iteration count")
        return FixedPoint(int(iterations))
    if mode in ("newton", "newton_raphson"):
        if iterations is None:
            raise ConfigError("newton mode needs an iteration count")
        return NewtonRaphson(int(iterations))
    if mode == "exact":
        return Exact(tol=tol, max_iters=max_iters)
    raise ConfigError(f"unknown mode '{mode}'")
