"""Parametric vector fields: an affine map and a two-hidden-layer tanh MLP.

Model parameters live in a plain dict of float64 arrays. Evaluation takes
an optional parameter mapping so a trainer can substitute taped variables
for the stored arrays; with no argument the stored numpy parameters are
used. Parameter vectors flatten in a fixed documented order.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError
from .fields import VectorField
from .ops import primal, tanh, unsqueeze_last


def _glorot(rng, fan_out, fan_in):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class _ParamModel(VectorField):
    """Shared plumbing: flat parameter vector, binding, checkpoints."""

    param_order = ()

    def __init__(self, params):
        self.params = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    def _p(self, params):
        return self.params if params is None else params

    @property
    def n_params(self):
        return sum(self.params[k].size for k in self.param_order)

    def params_flat(self):
        return np.concatenate(
            [self.params[k].ravel() for k in self.param_order]
        )

    def load_flat(self, vector):
        vector = np.asarray(vector, dtype=float).ravel()
        if vector.size != self.n_params:
            raise ValueError(
                f"expected {self.n_params} parameters, got {vector.size}"
            )
        offset = 0
        for k in self.param_order:
            size = self.params[k].size
            self.params[k] = (
                vector[offset : offset + size].reshape(self.params[k].shape).copy()
            )
            offset += size
        return self

    def unflatten(self, vector):
        """Split a flat vector into a parameter dict (no mutation)."""
        vector = np.asarray(vector, dtype=float).ravel()
        if vector.size != self.n_params:
            raise ValueError(
                f"expected {self.n_params} parameters, got {vector.size}"
            )
        out = {}
        offset = 0
        for k in self.param_order:
            size = self.params[k].size
            out[k] = vector[offset : offset + size].reshape(self.params[k].shape)
            offset += size
        return out

    def bind(self, params):
        return _BoundModel(self, params)

    def jacobian(self, y, params=None):
        raise NotImplementedError

    # -- checkpoints --------------------------------------------------------
    def to_dict(self):
        return {
            "kind": self.kind,
            "D": self.dim,
            "H": getattr(self, "hidden", 0),
            "seed": getattr(self, "seed", None),
            "params": [float(v) for v in self.params_flat()],
        }

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    def __repr__(self):
        return f"{type(self).__name__}(D={self.dim}, n_params={self.n_params})"


class _BoundModel(VectorField):
    """Model view evaluating with substituted (e.g. taped) parameters."""

    def __init__(self, model, params):
        self.model = model
        self.params = params
        self.dim = model.dim

    def __call__(self, y):
        return self.model(y, self.params)

    def jacobian(self, y):
        return self.model.jacobian(y, self.params)


class AffineModel(_ParamModel):
    """f(x) = W x + c with D^2 + D learnable parameters."""

    kind = "affine"
    param_order = ("W", "b")

    def __init__(self, W, b, seed=None):
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or b.shape != (W.shape[0],):
            raise ConfigError(f"bad affine shapes W{W.shape}, b{b.shape}")
        super().__init__({"W": W, "b": b})
        self.dim = W.shape[0]
        self.seed = seed

    def __call__(self, y, params=None):
        p = self._p(params)
        return y @ p["W"].T + p["b"]

    def jacobian(self, y, params=None):
        p = self._p(params)
        w = p["W"]
        shape = np.shape(primal(y))
        if len(shape) == 1:
            return w if not isinstance(w, np.ndarray) else w.copy()
        target = shape[:-1] + (self.dim, self.dim)
        if isinstance(w, np.ndarray):
            return np.broadcast_to(w, target).copy()
        return w.broadcast_to(target)


class MlpModel(_ParamModel):
    """f(x) = W3 tanh(W2 tanh(W1 x + b1) + b2) + b3."""

    kind = "mlp"
    param_order = ("W1", "b1", "W2", "b2", "W3", "b3")

    def __init__(self, params, dim, hidden, seed=None):
        super().__init__(params)
        self.dim = dim
        self.hidden = hidden
        self.seed = seed

    def __call__(self, y, params=None):
        p = self._p(params)
        t1 = tanh(y @ p["W1"].T + p["b1"])
        t2 = tanh(t1 @ p["W2"].T + p["b2"])
        return t2 @ p["W3"].T + p["b3"]

    def jacobian(self, y, params=None):
        p = self._p(params)
        t1 = tanh(y @ p["W1"].T + p["b1"])
        t2 = tanh(t1 @ p["W2"].T + p["b2"])
        s1 = 1.0 - t1 * t1
        s2 = 1.0 - t2 * t2
        inner = unsqueeze_last(s1) * p["W1"]
        mid = unsqueeze_last(s2) * (p["W2"] @ inner)
        return p["W3"] @ mid


def init_model(kind, dim, hidden=128, seed=0):
    """Deterministic Glorot-uniform weights, zero biases."""
    if dim < 1:
        raise ConfigError("state dimension must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "affine":
        return AffineModel(_glorot(rng, dim, dim), np.zeros(dim), seed=seed)
    if kind == "mlp":
        if hidden < 1:
            raise ConfigError("hidden width must be >= 1")
        params = {
            "W1": _glorot(rng, hidden, dim),
            "b1": np.zeros(hidden),
            "W2": _glorot(rng, hidden, hidden),
            "b2": np.zeros(hidden),
            "W3": _glorot(rng, dim, hidden),
            "b3": np.zeros(dim),
        }
        return MlpModel(params, dim, hidden, seed=seed)
    raise ConfigError(f"unknown model kind '{kind}'")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


def model_from_dict(doc):
    try:
        kind, dim = doc["kind"], int(doc["D"])
        flat = np.asarray(doc["params"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed checkpoint: {exc}") from None
    model = init_model(kind, dim, hidden=int(doc.get("H") or 128), seed=doc.get("seed") or 0)
    model.load_flat(flat)
    return model
