"""Benchmark systems, reference trajectory generation, and dataset files.

Datasets are N episodes of M+1 uniformly spaced states. Consecutive states
are produced by the reference integrator: classical RK4 with a fine
sub-step of 0.01 times the data step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dc_field
from importlib import resources

import numpy as np

from . import ops
from .errors import ConfigError, DivergenceError
from .fields import FuncField, LinearField, VectorField, as_field
from .steppers import step_explicit
from .tableaux import RK4


@dataclass
class BenchmarkSystem:
    name: str
    field: VectorField
    domain: np.ndarray  # (D, 2) sampling box, rows [lo, hi]
    dt: float           # canonical data step
    horizon: float      # canonical trajectory length

    @property
    def dim(self):
        return self.field.dim


_LINEAR_SYSTEMS = {
    # name: (A, b, domain, canonical dt)
    "saddle": ([[1.0, 1.0], [1.0, -1.0]], [-2.0, 0.0], [[0, 2], [0, 2]], 0.1),
    "center": ([[1.0, 2.0], [-5.0, -1.0]], [0.0, 0.0], [[-1, 1], [-1, 1]], 0.12),
    "improper_node": ([[1.0, -4.0], [4.0, -7.0]], [0.0, 0.0], [[-1, 1], [-1, 1]], 0.12),
    "spiral": ([[-1.0, -1.0], [2.0, -1.0]], [-1.0, 5.0], [[-3, -1], [0, 2]], 0.05),
    "nodal_sink": ([[-2.0, 1.0], [1.0, -2.0]], [-2.0, 1.0], [[-2, 0], [-1, 1]], 0.12),
}

# the printed nodal-sink equations drop the p coefficient in the first row;
# the surrounding results imply -2p + q - 2, which is the default above
_NODAL_SINK_LITERAL = ([[0.0, 1.0], [1.0, -2.0]], [-4.0, 1.0])

# per-system scheme settings of the linear discovery experiments
LINEAR_EXPERIMENT_SETTINGS = {
    "saddle": {"tableau": "implicit_euler", "mode": "fixed_point", "iterations": 0, "dt": 0.1},
    "center": {"tableau": "implicit_trapezoidal", "mode": "fixed_point", "iterations": 1, "dt": 0.12},
    "improper_node": {"tableau": "implicit_midpoint", "mode": "fixed_point", "iterations": 2, "dt": 0.12},
    "spiral": {"tableau": "implicit_euler", "mode": "fixed_point", "iterations": 3, "dt": 0.05},
    "nodal_sink": {"tableau": "implicit_euler", "mode": "newton", "iterations": 1, "dt": 0.12},
}

PENDULUM_ALPHA = 0.2
PENDULUM_BETA = 8.91


def _pendulum(y):
    p = y[..., 0]
    q = y[..., 1]
    return ops.stack_last([-PENDULUM_ALPHA * p - PENDULUM_BETA * ops.sin(q), p])


def glycolysis_parameters():
    with resources.files("odelearn.data").joinpath("glycolysis.json").open() as fh:
        return json.load(fh)


def _glycolysis_field(params, s2_variant="corrected"):
    J0 = params["J0"]
    k1, k2, k3, k4, k5, k6 = (params[k] for k in ("k1", "k2", "k3", "k4", "k5", "k6"))
    k, kappa, q, K1, psi = (params[j] for j in ("k", "kappa", "q", "K1", "psi"))
    N, A = params["N"], params["A"]
    q = int(q)

    def fn(y):
        s1, s2, s3, s4, s5, s6, s7 = (y[..., i] for i in range(7))
        flux = (k1 * s1 * s6) / (1.0 + (s6 / K1) ** q)
        r2 = k2 * s2 * (N - s5)
        r3 = k3 * s3 * (A - s6)
        if s2_variant == "literal":
            damp2 = k6 * s2 + 2.0 * s5
        else:
            damp2 = k6 * s2 * s5
        return ops.stack_last(
            [
                J0 - flux,
                2.0 * flux - r2 - damp2,
                r2 - r3,
                r3 - k4 * s4 * s5 - kappa * (s4 - s7),
                r2 - k4 * s4 * s5 - k6 * s2 * s5,
                -2.0 * flux + 2.0 * r3 - k5 * s6,
                psi * kappa * (s4 - s7) - k * s7,
            ]
        )

    return FuncField(fn, 7, name="glycolysis")


def builtin(name, nodal_sink_variant="corrected", s2_variant="corrected"):
    """Benchmark system by name.

    Names: the five linear systems (saddle, center, improper_node, spiral,
    nodal_sink), pendulum, glycolysis. The two *_variant arguments select
    the literal readings of the two suspect printed terms; defaults use the
    corrected forms.
    """
    if name in _LINEAR_SYSTEMS:
        a, b, domain, dt = _LINEAR_SYSTEMS[name]
        if name == "nodal_sink" and nodal_sink_variant == "literal":
            a, b = _NODAL_SINK_LITERAL
        return BenchmarkSystem(
            name, LinearField(a, b, name=name), np.asarray(domain, float), dt, dt
        )
    if name == "pendulum":
        return BenchmarkSystem(
            "pendulum",
            FuncField(_pendulum, 2, name="pendulum"),
            np.array([[-1.5, 0.0], [-4.0, 0.0]]),
            0.04,
            4.0,
        )
    if name == "glycolysis":
        params = glycolysis_parameters()
        x0 = np.asarray(params["x0"], float)
        domain = np.stack([0.8 * x0, 1.2 * x0], axis=1)
        return BenchmarkSystem(
            "glycolysis", _glycolysis_field(params, s2_variant), domain, 0.01, 5.0
        )
    raise ConfigError(
        f"unknown system '{name}'; built-ins: "
        + ", ".join(sorted([*_LINEAR_SYSTEMS, "pendulum", "glycolysis"]))
    )


# ---------------------------------------------------------------------------
# reference integration and dataset generation

def reference_flow(field, x, dt, substeps=100):
    """phi_dt(x) via RK4 at step dt/substeps; vectorized over leading axes."""
    field = as_field(field)
    h = dt / substeps
    for _ in range(substeps):
        x = step_explicit(field, x, h, RK4)
    return x


def reference_trajectory(field, x0, n_steps, dt, substeps=100):
    """States x0, phi_dt(x0), ..., phi_{n dt}(x0) stacked on axis -2."""
    x0 = np.asarray(x0, dtype=float)
    out = np.empty(x0.shape[:-1] + (n_steps + 1, x0.shape[-1]))
    out[..., 0, :] = x0
    x = x0
    for k in range(n_steps):
        x = reference_flow(field, x, dt, substeps)
        out[..., k + 1, :] = x
    return out


@dataclass
class EpisodeDataset:
    """N episodes of (M+1) states at uniform spacing dt."""

    episodes: np.ndarray  # (N, M+1, D)
    dt: float
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.episodes = np.asarray(self.episodes, dtype=float)
        if self.episodes.ndim != 3:
            raise ConfigError(
                f"episodes must be (N, M+1, D), got shape {self.episodes.shape}"
            )

    @property
    def n_episodes(self):
        return self.episodes.shape[0]

    @property
    def n_steps(self):
        """M, the supervised steps per episode."""
        return self.episodes.shape[1] - 1

    @property
    def dim(self):
        return self.episodes.shape[2]

    def initial_states(self):
        return self.episodes[:, 0, :]

    def __len__(self):
        return self.n_episodes


def sample_initial_states(sampling, n, rng):
    """Draw initial conditions: a uniform box, listed points, or a scaled
    base point (1 + delta) * x0 with delta uniform in [lo, hi]."""
    kind = sampling[0]
    if kind == "uniform":
        box = np.asarray(sampling[1], dtype=float)
        return rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))
    if kind == "listed":
        pts = np.asarray(sampling[1], dtype=float)
        if pts.ndim != 2 or pts.shape[0] != n:
            raise ConfigError(
                f"listed initial states must be ({n}, D), got {pts.shape}"
            )
        return pts.copy()
    if kind == "scaled":
        x0 = np.asarray(sampling[1], dtype=float)
        lo, hi = sampling[2], sampling[3]
        delta = rng.uniform(lo, hi, size=(n, 1))
        return (1.0 + delta) * x0
    raise ConfigError(f"unknown sampling kind '{kind}'")


def generate(system, n_episodes, n_steps, dt, sampling=None, seed=0, substeps=100):
    """Integrate ``n_episodes`` initial states for ``n_steps`` data steps."""
    if n_episodes < 1 or n_steps < 1:
        raise ConfigError("need at least one episode and one step")
    if dt <= 0:
        raise ConfigError("data step must be positive")
    if isinstance(system, BenchmarkSystem):
        field = system.field
        if sampling is None:
            sampling = ("uniform", system.domain)
        name = system.name
    else:
        field = as_field(system)
        if sampling is None:
            raise ConfigError("sampling is required for a bare field")
        name = getattr(field, "name", "custom")
    rng = np.random.default_rng(seed)
    x0 = sample_initial_states(sampling, n_episodes, rng)
    episodes = reference_trajectory(field, x0, n_steps, dt, substeps)
    bad = np.flatnonzero(~np.isfinite(episodes).all(axis=(1, 2)))
    if bad.size:
        raise DivergenceError(context=f"episode {int(bad[0])} left the finite range")
    return EpisodeDataset(
        episodes,
        dt,
        metadata={
            "system": name,
            "generator": {"tableau": "rk4", "fine_step": 0.01 * dt},
            "seed": seed,
            "sampling": sampling[0],
        },
    )


def split_episodes(dataset, m):
    """Cut long episodes into consecutive non-overlapping windows of M+1
    states; a tail shorter than M+1 is dropped and counted in metadata."""
    if m < 1:
        raise ConfigError("episode length M must be >= 1")
    eps = dataset.episodes
    total = eps.shape[1]
    n_windows = (total - 1) // m
    dropped = (total - 1) - n_windows * m
    if n_windows == 0:
        import warnings

        warnings.warn(
            f"episodes of {total} states are too short for M={m}; empty dataset"
        )
        return EpisodeDataset(
            np.empty((0, m + 1, eps.shape[2])),
            dataset.dt,
            metadata={**dataset.metadata, "split_m": m, "dropped_states": dropped},
        )
    windows = []
    for w in range(n_windows):
        windows.append(eps[:, w * m : w * m + m + 1, :])
    out = np.concatenate(windows, axis=0)
    return EpisodeDataset(
        out,
        dataset.dt,
        metadata={**dataset.metadata, "split_m": m, "dropped_states": dropped},
    )


# ---------------------------------------------------------------------------
# persistence: CSV of states plus a JSON sidecar

def _sidecar_path(path):
    return str(path) + ".meta.json"


def save_dataset(dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dim = dataset.dim
        writer.writerow(["episode_id", "step_index"] + [f"x{i+1}" for i in range(dim)])
        for n in range(dataset.n_episodes):
            for k in range(dataset.n_steps + 1):
                writer.writerow(
                    [n, k] + [repr(float(v)) for v in dataset.episodes[n, k]]
                )
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(
            {"dt": dataset.dt, "metadata": dataset.metadata}, fh, indent=2
        )


def load_dataset(path):
    try:
        with open(_sidecar_path(path), encoding="utf-8") as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(
            f"missing dataset sidecar {_sidecar_path(path)}"
        ) from None
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["episode_id", "step_index"]:
            raise ConfigError(f"{path}: line 1: expected dataset header row")
        dim = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                n, k = int(row[0]), int(row[1])
                state = [float(v) for v in row[2 : 2 + dim]]
                if len(state) != dim:
                    raise ValueError("short row")
            except ValueError as exc:
                raise ConfigError(f"{path}: line {lineno}: {exc}") from None
            rows.setdefault(n, {})[k] = state
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    lengths = {max(steps) + 1 for steps in rows.values()}
    if len(lengths) != 1:
        raise ConfigError(f"{path}: episodes have inconsistent lengths {lengths}")
    length = lengths.pop()
    episodes = np.empty((len(rows), length, dim))
    for i, n in enumerate(sorted(rows)):
        for k in range(length):
            if k not in rows[n]:
                raise ConfigError(f"{path}: episode {n} is missing step {k}")
            episodes[i, k] = rows[n][k]
    return EpisodeDataset(
        episodes, float(sidecar["dt"]), metadata=sidecar.get("metadata", {})
    )
