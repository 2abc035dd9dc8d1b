"""Inverse-modified-equation oracles.

For a scheme step Phi_h and a true field f, the inverse modified equation
is the perturbed field f_h = f_0 + h f_1 + h^2 f_2 + ... whose numerical
step reproduces the exact time-h flow of f. Three oracles are provided:

* closed-form series for linear fields under the implicit Euler scheme,
* a scheme-agnostic solve for linear fields (any tableau / solution mode),
* closed-form order-3 truncations for two unrolled implicit Euler variants
  of a general smooth field, plus a numerical defect-correction oracle that
  works for any scheme when no closed form is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .duals import Dual, jvp
from .errors import ConfigError, OracleFailure
from .fields import FuncField, LinearField, VectorField, as_field
from .steppers import StepOperator, mode_from_config
from .systems import reference_flow
from .tape import matrix_exp, solve_dense


@dataclass
class LinearImde:
    """Perturbed affine field A_h x + c_h equivalent to f(y) = A y + b."""

    a_h: np.ndarray
    c_h: np.ndarray

    def as_field(self):
        return LinearField(self.a_h, self.c_h, name="linear_imde")

    def coefficients(self):
        """Row-major [A_h | c_h] coefficient vector (row i reads
        dy_i/dt = sum_j A[i,j] y_j + c[i])."""
        return np.hstack([self.a_h, self.c_h[:, None]]).ravel()


def _offset(a, b, a_h):
    b = np.zeros(a.shape[0]) if b is None else np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros(a.shape[0])
    try:
        return a_h @ solve_dense(a, b)
    except Exception as exc:
        raise ConfigError(
            "offset transformation needs an invertible A when b != 0"
        ) from exc


def linear_imde_implicit_euler(a, b=None, h=0.1, order=None):
    """Implicit Euler series A_h = sum_k (-1)^k h^k A^{k+1} / (k+1)!.

    ``order`` truncates at K; None sums the series in closed form,
    A_h = (I - e^{-A h}) / h.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if order is None:
        a_h = (np.eye(d) - matrix_exp(a, -h)) / h
    else:
        if order < 0:
            raise ConfigError("truncation order must be >= 0")
        a_h = np.zeros_like(a)
        power = a.copy()
        for k in range(order + 1):
            power = power if k == 0 else power @ a
            a_h += ((-1.0) ** k * h**k / math.factorial(k + 1)) * power
    return LinearImde(a_h, _offset(a, b, a_h))


def scheme_linear_map(tableau, mode, h, m):
    """The matrix S with step(field: y -> M y, x) = S x, assembled by
    running the step operator on basis vectors."""
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    step = StepOperator(tableau, mode, h)
    basis = np.eye(d)
    out = step(LinearField(m), basis)  # rows are S e_i
    return np.asarray(out).T


def linear_imde_solve(a, b=None, h=0.1, tableau="implicit_euler", mode=None,
                      tol=1e-11, max_iters=50):
    """Solve R_h(A_h) = e^{A h} for the scheme-specific linear IMDE matrix.

    Newton iteration on the D^2 entries with a finite-difference Jacobian,
    starting from A itself. ``mode`` is a step mode object or the result of
    :func:`~odelearn.steppers.mode_from_config`.
    """
    a = np.asarray(a, dtype=float)
    d = a.shape[0]
    if mode is None:
        mode = mode_from_config("exact")
    target = matrix_exp(a, h)

    def residual(m):
        return scheme_linear_map(tableau, mode, h, m) - target

    x = a.copy()
    for _ in range(max_iters):
        r = residual(x)
        if np.abs(r).max() <= tol:
            return LinearImde(x, _offset(a, b, x))
        jac = np.empty((d * d, d * d))
        base = r.ravel()
        for idx in range(d * d):
            i, j = divmod(idx, d)
            eps = 1e-7 * max(1.0, abs(x[i, j]))
            xp = x.copy()
            xp[i, j] += eps
            jac[:, idx] = (residual(xp).ravel() - base) / eps
        x = x - solve_dense(jac, base).reshape(d, d)
    raise OracleFailure(
        f"linear IMDE solve stalled at residual {np.abs(residual(x)).max():.3e} "
        f"after {max_iters} iterations"
    )


def scheme_series_coefficients(tableau, mode, order):
    """Scalar series coefficients c_j of the step map on linear fields.

    For any tableau and solution mode the step applied to y -> M y is
    S = sum_j c_j (h M)^j. Probing the step operator with a nilpotent shift
    matrix truncates every power series exactly, so the c_j come out exact
    (through j = order + 1) without any differencing.
    """
    n = order + 2
    shift = np.eye(n, k=-1)
    step = StepOperator(tableau, mode, 1.0)
    out = step(LinearField(shift), np.eye(n))  # rows are S e_i
    return np.asarray(out).T[:, 0]


def linear_imde_series(a, b=None, h=0.1, tableau="implicit_euler", mode=None,
                       order=3):
    """Truncated formal-series IMDE for a linear field under any scheme.

    Writes A_h = sum_{k<=order} gamma_k h^k A^{k+1} and solves the scalar
    composition p(q(z)) = e^z order by order, where p is the scheme's
    linear step series and q(z) = sum_k gamma_k z^{k+1}.
    """
    a = np.asarray(a, dtype=float)
    if order < 0:
        raise ConfigError("truncation order must be >= 0")
    if mode is None:
        mode = mode_from_config("exact")
    c = scheme_series_coefficients(tableau, mode, order)
    n_pow = order + 2
    gamma = np.zeros(order + 1)
    gamma[0] = 1.0

    def compose(q):
        # sum_j c_j q(z)^j truncated at z^{order+1}
        total = np.zeros(n_pow)
        total[0] = c[0]
        power = np.zeros(n_pow)
        power[0] = 1.0
        for j in range(1, n_pow):
            power = np.convolve(power, q)[:n_pow]
            total += c[j] * power
        return total

    q = np.zeros(n_pow)
    q[1] = 1.0
    for n in range(2, order + 2):
        p_now = compose(q)
        deficit = 1.0 / math.factorial(n) - p_now[n]
        gamma[n - 1] = deficit / c[1]
        q[n] = gamma[n - 1]
    a_h = np.zeros_like(a)
    power = np.eye(a.shape[0])
    for k in range(order + 1):
        power = power @ a
        a_h += gamma[k] * h**k * power
    return LinearImde(a_h, _offset(a, b, a_h))


# ---------------------------------------------------------------------------
# closed-form nonlinear truncations

class ImdeSeries(VectorField):
    """Truncated series sum_{k<=K} h^k f_k with evaluatable term fields."""

    def __init__(self, terms, h=None, name="imde_series"):
        self.terms = list(terms)
        self.h = h
        self.dim = terms[0].dim
        self.name = name

    @property
    def order(self):
        return len(self.terms) - 1

    def __call__(self, y, h=None):
        h = self.h if h is None else h
        if h is None:
            raise ConfigError("series needs a step size h to evaluate")
        out = self.terms[0](y)
        for k, term in enumerate(self.terms[1:], start=1):
            out = out + (h**k) * term(y)
        return out

    def with_h(self, h):
        return ImdeSeries(self.terms, h=h, name=self.name)


def _contractions(f, y):
    """The derivative contractions entering the order-3 coefficients."""
    fy = f(y)
    dff = jvp(f, y, [fy])                      # f' f
    d2ff = jvp(f, y, [fy, fy])                 # f''(f, f)
    out = {
        "f": fy,
        "f'f": dff,
        "f''(f,f)": d2ff,
        "f'f'f": jvp(f, y, [dff]),
        "f'''(f,f,f)": jvp(f, y, [fy, fy, fy]),
        "f''(f'f,f)": jvp(f, y, [dff, fy]),
        "f'f''(f,f)": jvp(f, y, [d2ff]),
        "f'f'f'f": jvp(f, y, [jvp(f, y, [dff])]),
    }
    return out


NONLINEAR_VARIANTS = ("implicit_euler_newton_L1", "implicit_euler_fp_L2")


def nonlinear_imde_terms(field, variant, h=None):
    """Order-3 closed forms for implicit Euler unrolled by one Newton
    iteration or by two fixed-point iterations.

    Shared terms: f0 = f, f1 = -1/2 f'f, f2 = 1/6 f''(f,f) + 1/6 f'f'f.
    The variants differ at f3.
    """
    if variant not in NONLINEAR_VARIANTS:
        raise ConfigError(
            f"unknown variant '{variant}'; choose from {NONLINEAR_VARIANTS}"
        )
    f = as_field(field)

    def f1(y):
        return -0.5 * jvp(f, y, [f(y)])

    def f2(y):
        c = _contractions(f, y)
        return (c["f''(f,f)"] + c["f'f'f"]) / 6.0

    if variant == "implicit_euler_newton_L1":

        def f3(y):
            c = _contractions(f, y)
            return (
                -c["f'''(f,f,f)"] / 24.0
                - c["f''(f'f,f)"] / 8.0
                + 11.0 * c["f'f''(f,f)"] / 24.0
                - c["f'f'f'f"] / 24.0
            )

    else:

        def f3(y):
            c = _contractions(f, y)
            return (
                -c["f'''(f,f,f)"] / 24.0
                - c["f''(f'f,f)"] / 8.0
                - c["f'f''(f,f)"] / 24.0
                + 23.0 * c["f'f'f'f"] / 24.0
            )

    terms = [
        f,
        FuncField(f1, f.dim, name="f1"),
        FuncField(f2, f.dim, name="f2"),
        FuncField(f3, f.dim, name="f3"),
    ]
    return ImdeSeries(terms, h=h, name=f"imde[{variant}]")


# ---------------------------------------------------------------------------
# numerical defect-correction oracle

class _DefectField(VectorField):
    """g + (phi_h - Phi_h[g]) / h, one correction level above ``prev``."""

    def __init__(self, true_field, prev, step, h, flow_substeps):
        self.true_field = true_field
        self.prev = prev
        self.step = step
        self.h = h
        self.flow_substeps = flow_substeps
        self.dim = prev.dim
        self._memo = {}

    def _key(self, y):
        parts = []

        def walk(v):
            if isinstance(v, Dual):
                parts.append(b"D")
                walk(v.re)
                walk(v.im)
            else:
                arr = np.asarray(v, dtype=float)
                parts.append(arr.shape.__repr__().encode() + arr.tobytes())

        walk(y)
        return b"".join(parts)

    def __call__(self, y):
        key = self._key(y)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        exact = reference_flow(self.true_field, y, self.h, self.flow_substeps)
        stepped = self.step(self.prev, y)
        out = self.prev(y) + (exact - stepped) / self.h
        self._memo[key] = out
        return out


def numeric_imde(field, tableau, mode, h, depth, flow_substeps=100):
    """Defect-correction approximation of the IMDE field for any scheme.

    Level 0 is the field itself; each level adds one corrected order, so
    the returned closure matches the true series through h^depth terms.
    Cost grows geometrically with depth (capped at 4).
    """
    if depth < 0 or depth > 4:
        raise ConfigError("correction depth must be between 0 and 4")
    f = as_field(field)
    g = f
    step = StepOperator(tableau, mode, h)
    for _ in range(depth):
        g = _DefectField(f, g, step, h, flow_substeps)
    return g


def richardson_series_terms(oracle_factory, f, x, h0, n_terms=3,
                            n_magnitudes=4, node_ratio=2.0, n_powers=None):
    """Extract per-order coefficients f_1..f_{n_terms} at x from numerical
    IMDE evaluations on the symmetric step ladder +-h0 / node_ratio^j.

    Fits r(h) = g_h(x) - f(x) against powers h^1..h^{n_powers}; the powers
    beyond n_terms absorb the oracle's own truncation error. The signed
    node pairs decouple odd and even orders, which conditions the
    extrapolation far better than a one-sided ladder.
    """
    if n_powers is None:
        n_powers = 2 * n_magnitudes
    if n_powers > 2 * n_magnitudes or n_powers <= n_terms:
        raise ConfigError("need n_terms < n_powers <= 2 * n_magnitudes")
    x = np.asarray(x, dtype=float)
    hs = []
    for j in range(n_magnitudes):
        mag = h0 / node_ratio**j
        hs += [mag, -mag]
    hs = np.array(hs)
    base = f(x)
    rows = []
    for hj in hs:
        g = oracle_factory(hj)
        rows.append(np.asarray(g(x), dtype=float) - base)
    rhs = np.stack(rows, axis=0)                      # (2 n_magnitudes, D)
    # solve in normalized nodes tau = h/h0 to keep the basis scaled
    tau = hs / h0
    vander = np.stack([tau**k for k in range(1, n_powers + 1)], axis=1)
    if n_powers == len(hs):
        coeff = solve_dense(vander, rhs.T).T          # (n_powers, D)
    else:
        coeff = np.linalg.lstsq(vander, rhs, rcond=None)[0]
    scale = np.array([h0**k for k in range(1, n_powers + 1)])
    coeff = coeff / scale[:, None]
    return [coeff[k] for k in range(n_terms)]
