"""Butcher tableaux for the Runge-Kutta schemes used here."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ButcherTableau:
    """Stage matrix a, weights b, and the classical order of the scheme.

    Consistency (sum of weights equal to one) is enforced on construction.
    The scheme counts as explicit only if a_ij = 0 whenever i <= j; with
    that convention forward Euler is classified by its all-zero stage
    matrix.
    """

    name: str
    a: np.ndarray
    b: np.ndarray
    order: int

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
            raise ConfigError(
                f"tableau '{self.name}': stage matrix {a.shape} and weights "
                f"{b.shape} are inconsistent"
            )
        if abs(b.sum() - 1.0) > 1e-12:
            raise ConfigError(
                f"tableau '{self.name}': weights sum to {b.sum()!r}, not 1"
            )
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def stages(self):
        return self.b.shape[0]

    @property
    def is_explicit(self):
        i, j = np.indices(self.a.shape)
        return bool(np.all(self.a[i <= j] == 0.0))

    @property
    def kappa(self):
        """max_i sum_j |a_ij|, the stage contraction factor."""
        return float(np.abs(self.a).sum(axis=1).max())


FORWARD_EULER = ButcherTableau("forward_euler", [[0.0]], [1.0], 1)
IMPLICIT_EULER = ButcherTableau("implicit_euler", [[1.0]], [1.0], 1)
IMPLICIT_MIDPOINT = ButcherTableau("implicit_midpoint", [[0.5]], [1.0], 2)
IMPLICIT_TRAPEZOIDAL = ButcherTableau(
    "implicit_trapezoidal", [[0.0, 0.0], [0.5, 0.5]], [0.5, 0.5], 2
)
RK4 = ButcherTableau(
    "rk4",
    [
        [0.0, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ],
    [1 / 6, 1 / 3, 1 / 3, 1 / 6],
    4,
)

BUILTIN_TABLEAUX = {
    t.name: t
    for t in (
        FORWARD_EULER,
        IMPLICIT_EULER,
        IMPLICIT_MIDPOINT,
        IMPLICIT_TRAPEZOIDAL,
        RK4,
    )
}


def get_tableau(spec):
    """Resolve a tableau from a name, an existing tableau, or (a, b) arrays."""
    if isinstance(spec, ButcherTableau):
        return spec
    if isinstance(spec, str):
        try:
            return BUILTIN_TABLEAUX[spec]
        except KeyError:
            raise ConfigError(
                f"unknown tableau '{spec}'; built-ins: "
                + ", ".join(sorted(BUILTIN_TABLEAUX))
            ) from None
    if isinstance(spec, dict):
        try:
            return ButcherTableau(
                spec.get("name", "custom"),
                spec["a"],
                spec["b"],
                int(spec.get("order", 1)),
            )
        except KeyError as exc:
            raise ConfigError(f"tableau dict missing key {exc}") from None
    raise ConfigError(f"cannot interpret {spec!r} as a tableau")
