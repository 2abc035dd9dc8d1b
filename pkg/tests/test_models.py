import json

import numpy as np
import pytest

from odelearn.errors import ConfigError
from odelearn.models import AffineModel, MlpModel, init_model, load_model
from odelearn.duals import jvp
from odelearn.tape import Tape, gradient


class TestAffine:
    def test_identity_model(self, rng):
        model = AffineModel(np.eye(3), np.zeros(3))
        x = rng.normal(size=(5, 3))
        assert np.all(model(x) == x)

    def test_saddle_row_value(self):
        model = AffineModel([[1.0, 1.0], [1.0, -1.0]], [-2.0, 0.0])
        assert np.allclose(model(np.zeros(2)), [-2.0, 0.0])
        assert np.allclose(model(np.array([1.0, 1.0])), [0.0, 0.0])

    def test_parameter_count(self):
        model = init_model("affine", 4, seed=0)
        assert model.n_params == 4 * 4 + 4

    def test_exact_linearity(self, rng):
        model = init_model("affine", 3, seed=1)
        b = model.params["b"]
        x, y = rng.normal(size=(2, 3))
        alpha, beta = 0.25, -1.5
        lhs = model(alpha * x + beta * y) - b
        rhs = alpha * (model(x) - b) + beta * (model(y) - b)
        assert np.allclose(lhs, rhs, atol=1e-14)

    def test_jacobian_is_weight_matrix(self, rng):
        model = init_model("affine", 2, seed=3)
        x = rng.normal(size=(4, 2))
        jac = model.jacobian(x)
        assert jac.shape == (4, 2, 2)
        assert np.all(jac == model.params["W"])


class TestMlp:
    def test_zero_weights_output_bias(self):
        model = init_model("mlp", 2, hidden=4, seed=0)
        model.load_flat(np.zeros(model.n_params))
        model.params["b3"] = np.array([1.5, -0.5])
        x = np.random.default_rng(0).normal(size=(6, 2))
        assert np.allclose(model(x), [1.5, -0.5])

    def test_parameter_count_formula(self):
        d, hidden = 2, 128
        model = init_model("mlp", d, hidden=hidden, seed=0)
        assert model.n_params == 256 * d + 128**2 + 256 + d

    def test_architecture_formula(self, rng):
        model = init_model("mlp", 2, hidden=5, seed=9)
        p = model.params
        x = rng.normal(size=(3, 2))
        t1 = np.tanh(x @ p["W1"].T + p["b1"])
        t2 = np.tanh(t1 @ p["W2"].T + p["b2"])
        assert np.allclose(model(x), t2 @ p["W3"].T + p["b3"], atol=1e-15)

    def test_output_bound(self, rng):
        model = init_model("mlp", 3, hidden=16, seed=2)
        bound = np.abs(model.params["W3"]).sum(axis=1).max() + np.abs(
            model.params["b3"]
        ).max()
        x = rng.normal(size=(100, 3)) * 50
        assert np.abs(model(x)).max() <= bound + 1e-12

    def test_jacobian_matches_forward_mode(self, rng):
        model = init_model("mlp", 2, hidden=6, seed=5)
        x = rng.normal(size=(4, 2))
        closed = model.jacobian(x)
        for i in range(2):
            e = np.zeros((4, 2))
            e[:, i] = 1.0
            col = jvp(model, x, [e])
            assert np.allclose(closed[..., i], col, atol=1e-12)


class TestInit:
    def test_deterministic_per_seed(self):
        a = init_model("mlp", 2, hidden=8, seed=11).params_flat()
        b = init_model("mlp", 2, hidden=8, seed=11).params_flat()
        assert a.tobytes() == b.tobytes()
        c = init_model("mlp", 2, hidden=8, seed=12).params_flat()
        assert a.tobytes() != c.tobytes()

    def test_glorot_envelope(self):
        model = init_model("mlp", 2, hidden=128, seed=7)
        for name, fan_in, fan_out in (
            ("W1", 2, 128),
            ("W2", 128, 128),
            ("W3", 128, 2),
        ):
            w = model.params[name]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(w).max() <= bound
            assert np.abs(w).mean() <= bound / 1.5

    def test_biases_zero(self):
        model = init_model("mlp", 2, hidden=16, seed=0)
        for name in ("b1", "b2", "b3"):
            assert np.all(model.params[name] == 0.0)

    def test_degenerate_width_rejected(self):
        with pytest.raises(ConfigError):
            init_model("mlp", 2, hidden=0, seed=0)
        with pytest.raises(ConfigError):
            init_model("affine", 0, seed=0)

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            init_model("transformer", 2)


class TestFlatParams:
    def test_round_trip_identity(self, rng):
        model = init_model("mlp", 2, hidden=4, seed=0)
        theta = rng.normal(size=model.n_params)
        model.load_flat(theta)
        assert model.params_flat().tobytes() == theta.tobytes()

    def test_length_mismatch(self):
        model = init_model("affine", 2, seed=0)
        with pytest.raises(ValueError):
            model.load_flat(np.zeros(model.n_params + 1))

    def test_gradient_aligns_with_flat_order(self, rng):
        # perturbing coordinate i changes the loss by grad[i] * eps
        model = init_model("mlp", 2, hidden=3, seed=1)
        x = rng.normal(size=(5, 2))
        target = rng.normal(size=(5, 2))

        def loss_at(flat):
            params = model.unflatten(flat)
            diff = model(x, params) - target
            return float((diff * diff).sum())

        flat0 = model.params_flat()
        tape = Tape()
        leaves = {k: tape.leaf(v) for k, v in model.unflatten(flat0).items()}
        diff = model(x, leaves) - target
        grads = gradient((diff * diff).sum(), list(leaves.values()))
        flat_grad = np.concatenate([g.ravel() for g in grads])
        for i in rng.choice(model.n_params, size=6, replace=False):
            eps = 1e-6
            up = flat0.copy()
            up[i] += eps
            down = flat0.copy()
            down[i] -= eps
            fd = (loss_at(up) - loss_at(down)) / (2 * eps)
            assert fd == pytest.approx(flat_grad[i], rel=1e-4, abs=1e-8)


class TestCheckpoints:
    def test_bit_exact_round_trip(self, tmp_path, rng):
        model = init_model("mlp", 2, hidden=4, seed=3)
        model.load_flat(rng.normal(size=model.n_params))
        path = tmp_path / "model.json"
        model.save(path)
        restored = load_model(path)
        assert restored.params_flat().tobytes() == model.params_flat().tobytes()
        assert isinstance(restored, MlpModel)
        assert restored.hidden == 4

    def test_checkpoint_schema(self, tmp_path):
        model = init_model("affine", 2, seed=1)
        path = tmp_path / "model.json"
        model.save(path)
        doc = json.loads(path.read_text())
        assert set(doc) == {"kind", "D", "H", "seed", "params"}
        assert doc["kind"] == "affine" and doc["D"] == 2
        assert len(doc["params"]) == model.n_params

    def test_malformed_checkpoint(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"kind": "mlp"}))
        with pytest.raises(ConfigError):
            load_model(path)
