"""Scikit-learn style estimator wrapping the unrolled-implicit trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_episodes, check_states
from .models import init_model
from .steppers import mode_from_config
from .systems import reference_flow, reference_trajectory
from .training import AdaptiveConfig, LossConfig, train


class ODENetRegressor(RegressorMixin, BaseEstimator):
    """Learn an ODE right-hand side from trajectory snapshots.

    The regressor trains a parametric vector field so that integrating it
    with an (optionally unrolled implicit) Runge-Kutta scheme reproduces
    the observed state transitions. ``predict`` maps states to the states
    one data step later under the learned field.

    Parameters
    ----------
    model : "mlp" or "affine"
    hidden : hidden width of the MLP
    tableau : scheme name or explicit (a, b) dict
    method : "fixed_point", "newton", or "exact" stage solver
    n_iterations : unrolled iteration count L (ignored for "exact")
    adaptive : grow L during training whenever loss < c * iteration gap
    c, check_every, l_max : adaptive policy knobs
    substeps : scheme compositions per data step (h = dt / substeps)
    m_steps : supervised steps per episode
    dt : data step; may be omitted when fit() receives an EpisodeDataset
    epochs : full-batch Adam updates
    schedule : "constant" or "exp_decay"
    lr : base learning rate (the constant schedule's value)
    seed : parameter initialization seed

    Attributes (after fit)
    ----------------------
    model_ : the trained parametric field
    report_ : TrainReport with loss/delta/L/evaluation histories
    n_features_in_ : state dimension
    """

    def __init__(
        self,
        model="mlp",
        hidden=32,
        tableau="implicit_euler",
        method="fixed_point",
        n_iterations=1,
        adaptive=True,
        c=1.0,
        check_every=10,
        l_max=20,
        substeps=1,
        m_steps=1,
        dt=None,
        epochs=2000,
        schedule="exp_decay",
        lr=0.01,
        seed=0,
    ):
        self.model = model
        self.hidden = hidden
        self.tableau = tableau
        self.method = method
        self.n_iterations = n_iterations
        self.adaptive = adaptive
        self.c = c
        self.check_every = check_every
        self.l_max = l_max
        self.substeps = substeps
        self.m_steps = m_steps
        self.dt = dt
        self.epochs = epochs
        self.schedule = schedule
        self.lr = lr
        self.seed = seed

    def _loss_config(self, dt):
        mode = mode_from_config(self.method, self.n_iterations)
        return LossConfig(
            dt=dt,
            tableau=self.tableau,
            mode=mode,
            m_steps=self.m_steps,
            substeps=self.substeps,
        )

    def fit(self, X, y=None):
        """Fit on an EpisodeDataset, an (N, M+1, D) episode array, or a
        pair of 2-D arrays X (states) and y (states one step later)."""
        dataset = check_episodes(X, y, dt=self.dt)
        if dataset.n_steps < self.m_steps:
            raise ValueError(
                f"episodes provide {dataset.n_steps} steps but m_steps="
                f"{self.m_steps}"
            )
        config = self._loss_config(dataset.dt)
        model = init_model(
            self.model, dataset.dim, hidden=self.hidden, seed=self.seed
        )
        adaptive = None
        if self.adaptive and self.method != "exact":
            adaptive = AdaptiveConfig(
                c=self.c, check_every=self.check_every, l_max=self.l_max
            )
        model, report = train(
            model,
            dataset,
            config,
            epochs=self.epochs,
            schedule=(self.schedule, self.lr),
            adaptive=adaptive,
        )
        self.model_ = model
        self.report_ = report
        self.dt_ = dataset.dt
        self.n_features_in_ = dataset.dim
        return self

    def predict(self, X):
        """States one data step ahead under the learned field (reference
        integrator)."""
        check_is_fitted(self, "model_")
        X = check_states(X, dim=self.n_features_in_)
        return reference_flow(self.model_, X, self.dt_)

    def vector_field(self, X):
        """Learned right-hand side evaluated at the given states."""
        check_is_fitted(self, "model_")
        X = check_states(X, dim=self.n_features_in_)
        return np.asarray(self.model_(X))

    def predict_trajectory(self, x0, n_steps):
        """Roll the learned field forward n_steps data steps from x0."""
        check_is_fitted(self, "model_")
        x0 = np.asarray(x0, dtype=float)
        return reference_trajectory(self.model_, x0, n_steps, self.dt_)
