"""Evaluation quantities for learned fields.

Field errors use the max norm per point, averaged over the point set; the
training loss keeps its squared 2-norm. Both metrics are pure functions.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DivergenceError
from .fields import as_field
from .systems import reference_trajectory


def field_error(g, h_ref, points):
    """Mean over points of || g(x) - h_ref(x) ||_inf."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ConfigError("points must be a non-empty (N, D) array")
    g = as_field(g, dim=points.shape[1])
    h_ref = as_field(h_ref, dim=points.shape[1])
    diff = np.asarray(g(points)) - np.asarray(h_ref(points))
    return float(np.abs(diff).max(axis=1).mean())


def field_error_pointwise(g, h_ref, points):
    points = np.asarray(points, dtype=float)
    g = as_field(g, dim=points.shape[1])
    h_ref = as_field(h_ref, dim=points.shape[1])
    return np.abs(np.asarray(g(points)) - np.asarray(h_ref(points))).max(axis=1)


def trajectory_error(f_learned, f_true, x0, horizon, dt, substeps=100):
    """(dt/T) sum_{m=1}^{T/dt} || phi_{m dt, learned}(x0) - phi_{m dt, true}(x0) ||_inf

    Both flows use the reference integrator (RK4 at dt/substeps).
    """
    n = int(round(horizon / dt))
    if n < 1:
        raise ConfigError("horizon must cover at least one data step")
    x0 = np.asarray(x0, dtype=float)
    traj_l = reference_trajectory(f_learned, x0, n, dt, substeps)
    traj_t = reference_trajectory(f_true, x0, n, dt, substeps)
    diffs = np.abs(traj_l[1:] - traj_t[1:]).max(axis=-1)
    bad = np.flatnonzero(~np.isfinite(diffs))
    if bad.size:
        raise DivergenceError(context=f"trajectory diverged at step m={bad[0] + 1}")
    return float((dt / horizon) * diffs.sum())


def fit_loglog_slope(x, y):
    """Least-squares slope of log(y) against log(x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size or x.size < 2:
        raise ConfigError("slope fit needs at least two matching points")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])
