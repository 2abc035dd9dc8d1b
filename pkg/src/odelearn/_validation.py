"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ConfigError
from .systems import EpisodeDataset


def check_states(X, dim=None):
    """Validate a 2-D batch of states (N, D) of finite float64."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if dim is not None and X.shape[1] != dim:
        raise ValueError(
            f"expected states with {dim} features, got {X.shape[1]}"
        )
    return X


def check_episodes(X, y=None, dt=None):
    """Coerce fit() input into an EpisodeDataset.

    Accepts an EpisodeDataset, a 3-D array (N, M+1, D), or a pair of 2-D
    arrays (states, next states) one data step apart.
    """
    if isinstance(X, EpisodeDataset):
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        if y is not None:
            raise ValueError("y must be None when X already holds episodes")
        if dt is None:
            raise ConfigError("dt is required when passing raw episode arrays")
        if not np.all(np.isfinite(X)):
            raise ValueError("episodes contain non-finite values")
        return EpisodeDataset(X, dt)
    if X.ndim == 2:
        if y is None:
            raise ValueError(
                "2-D X needs y (the states one data step later); "
                "or pass a (N, M+1, D) episode array"
            )
        X = check_states(X)
        y = check_states(y, dim=X.shape[1])
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        if dt is None:
            raise ConfigError("dt is required when passing state pairs")
        return EpisodeDataset(np.stack([X, y], axis=1), dt)
    raise ValueError(f"cannot interpret input with ndim={X.ndim}")
