"""
Unit tests for orthovae.nets module.
"""

import numpy as np
import pytest

from orthovae.config import ACTIVATIONS, TOL
from orthovae.errors import DivergenceError, ShapeError
from orthovae.nets import (
    DenseLayer,
    MlpNetwork,
    Optimizer,
    OptimizerState,
    backward,
    decoder_jacobian,
    forward,
    optimizer_step,
)


@pytest.fixture
def tanh_net():
    """Small tanh network with nonzero biases."""
    return MlpNetwork.build([3, 5, 4, 2], hidden_activation="tanh", rng=7, bias_init="uniform")


def _numeric_jacobian(fn, x, h=TOL.finite_difference_step):
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((fn(x + e) - fn(x - e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


class TestConstruction:
    """Test building and validating networks."""

    def test_build_shapes(self):
        """Layer sizes and activations follow the request; the output layer is linear."""
        net = MlpNetwork.build([2, 10, 6], hidden_activation="tanh", rng=0)
        assert net.layer_sizes == [2, 10, 6]
        assert net.activations == ["tanh", "linear"]
        assert np.all(net.layers[0].bias == 0.0)

    def test_build_reproducible(self):
        """The same seed gives identical weights."""
        a = MlpNetwork.build([3, 4, 2], rng=5)
        b = MlpNetwork.build([3, 4, 2], rng=5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)

    def test_glorot_range(self):
        """Weights lie inside the symmetric uniform limit."""
        net = MlpNetwork.build([60, 40], rng=1)
        assert np.max(np.abs(net.layers[0].weight)) <= np.sqrt(6.0 / 100.0)

    def test_shapes_must_chain(self):
        """Mismatched consecutive layers raise ShapeError."""
        with pytest.raises(ShapeError):
            MlpNetwork([DenseLayer(np.ones((3, 2)), np.zeros(3)), DenseLayer(np.ones((1, 4)), np.zeros(1))])

    def test_unknown_activation(self):
        """Unknown activations are rejected."""
        with pytest.raises(ValueError):
            MlpNetwork([DenseLayer(np.ones((1, 1)), np.zeros(1), "sigmoid")])

    def test_wrong_input_width(self, tanh_net):
        """Inputs of the wrong width raise ShapeError."""
        with pytest.raises(ShapeError):
            tanh_net.forward(np.zeros(4))


class TestForwardBackward:
    """Test evaluation, gradients and Jacobians."""

    def test_vector_and_batch_agree(self, tanh_net, rng):
        """A batch row matches the single-vector evaluation."""
        x = rng.standard_normal((4, 3))
        assert np.allclose(forward(tanh_net, x)[2], tanh_net.forward(x[2]))

    def test_linear_network_is_matrix_product(self):
        """A single linear layer computes W x + b."""
        w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        net = MlpNetwork([DenseLayer(w, np.array([1.0, 0.0, -1.0]))])
        assert np.allclose(net.forward(np.array([1.0, 1.0])), [4.0, 7.0, 10.0])

    def test_input_gradient_matches_finite_difference(self, tanh_net, rng):
        """Back-propagated input gradient equals the numeric gradient of <u, f(x)>."""
        x = rng.standard_normal(3)
        u = rng.standard_normal(2)
        grads = backward(tanh_net, x, u)
        numeric = _numeric_jacobian(lambda v: np.array([u @ tanh_net.forward(v)]), x)[0]
        assert np.allclose(grads.inputs, numeric, atol=1e-7)

    def test_weight_gradient_matches_finite_difference(self, tanh_net, rng):
        """Gradient of the first weight matrix equals a numeric estimate."""
        x = rng.standard_normal((3, 3))
        u = rng.standard_normal((3, 2))
        grads = tanh_net.backward(x, u)
        w = tanh_net.layers[0].weight
        h = TOL.finite_difference_step
        numeric = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            original = w[idx]
            w[idx] = original + h
            plus = np.sum(u * tanh_net.forward(x))
            w[idx] = original - h
            minus = np.sum(u * tanh_net.forward(x))
            w[idx] = original
            numeric[idx] = (plus - minus) / (2.0 * h)
        assert np.allclose(grads.weights[0], numeric, atol=1e-7)

    def test_upstream_shape_checked(self, tanh_net):
        """An upstream gradient of the wrong width raises ShapeError."""
        with pytest.raises(ShapeError):
            tanh_net.backward(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_jacobian_matches_finite_difference(self, tanh_net, rng):
        """Exact Jacobian equals central differences."""
        z = rng.standard_normal(3)
        assert np.allclose(decoder_jacobian(tanh_net, z), _numeric_jacobian(tanh_net.forward, z), atol=1e-7)

    def test_batched_jacobian_shape(self, tanh_net, rng):
        """Batched Jacobians stack per row."""
        z = rng.standard_normal((5, 3))
        jac = tanh_net.jacobian(z)
        assert jac.shape == (5, 2, 3)
        assert np.allclose(jac[1], tanh_net.jacobian(z[1]))

    def test_relu_network_jacobian(self, rng):
        """ReLU networks differentiate away from kinks."""
        net = MlpNetwork.build([2, 6, 3], hidden_activation="relu", rng=3, bias_init="uniform")
        z = rng.standard_normal(2)
        assert np.allclose(net.jacobian(z), _numeric_jacobian(net.forward, z), atol=1e-6)


def _relative_error(exact, numeric):
    return np.linalg.norm(exact - numeric) / max(np.linalg.norm(numeric), 1.0)


def _random_net(seed):
    gen = np.random.default_rng(seed)
    depth = int(gen.integers(1, 4))
    sizes = [int(s) for s in gen.integers(1, 9, size=depth + 1)]
    activation = ACTIVATIONS[seed % len(ACTIVATIONS)]
    return MlpNetwork.build(sizes, hidden_activation=activation, rng=seed, bias_init="uniform"), gen


class TestRandomNetworks:
    """Finite-difference agreement across seeded random architectures."""

    @pytest.mark.parametrize("seed", range(50))
    def test_input_gradient_and_jacobian(self, seed):
        """Input gradients and Jacobians agree with central differences."""
        net, gen = _random_net(seed)
        x = gen.standard_normal(net.layer_sizes[0])
        u = gen.standard_normal(net.layer_sizes[-1])
        numeric_jac = _numeric_jacobian(net.forward, x)
        assert _relative_error(decoder_jacobian(net, x), numeric_jac) <= 1e-4
        assert _relative_error(backward(net, x, u).inputs, u @ numeric_jac) <= 1e-4

    @pytest.mark.parametrize("seed", range(50))
    def test_parameter_gradients(self, seed):
        """Weight and bias gradients agree with central differences."""
        net, gen = _random_net(seed)
        x = gen.standard_normal((3, net.layer_sizes[0]))
        u = gen.standard_normal((3, net.layer_sizes[-1]))
        exact = net.backward(x, u).as_list()
        h = TOL.finite_difference_step
        for param, grad in zip(net.parameters(), exact):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                original = param[idx]
                param[idx] = original + h
                plus = np.sum(u * net.forward(x))
                param[idx] = original - h
                minus = np.sum(u * net.forward(x))
                param[idx] = original
                numeric[idx] = (plus - minus) / (2.0 * h)
            assert _relative_error(grad, numeric) <= 1e-4


class TestComposition:
    """Test composing networks with linear maps."""

    def test_compose_input(self, tanh_net, rng):
        """compose_input(q) evaluates f(q x)."""
        q = rng.standard_normal((3, 3))
        x = rng.standard_normal(3)
        assert np.allclose(tanh_net.compose_input(q).forward(x), tanh_net.forward(q @ x))

    def test_compose_output(self, tanh_net, rng):
        """compose_output(q) evaluates q f(x)."""
        q = rng.standard_normal((4, 2))
        x = rng.standard_normal(3)
        assert np.allclose(tanh_net.compose_output(q).forward(x), q @ tanh_net.forward(x))

    def test_compose_leaves_original(self, tanh_net):
        """Composition returns a new network."""
        before = tanh_net.layers[0].weight.copy()
        tanh_net.compose_input(2.0 * np.eye(3))
        assert np.array_equal(tanh_net.layers[0].weight, before)


class TestCheckpoints:
    """Test checkpoint persistence."""

    def test_roundtrip_exact(self, tanh_net, tmp_path):
        """Saved networks load with bit-identical parameters."""
        path = tanh_net.save_checkpoint(tmp_path / "net.npz")
        loaded = MlpNetwork.load_checkpoint(path)
        assert loaded.activations == tanh_net.activations
        for a, b in zip(loaded.parameters(), tanh_net.parameters()):
            assert np.array_equal(a, b)

    def test_unknown_version_rejected(self, tanh_net, tmp_path):
        """A checkpoint with another format version is rejected."""
        path = tmp_path / "old.npz"
        np.savez(path, format_version=np.array(99), **tanh_net.to_arrays())
        with pytest.raises(ValueError):
            MlpNetwork.load_checkpoint(path)

    def test_set_parameters_keeps_identity(self, tanh_net):
        """set_parameters copies values into the existing arrays."""
        params = tanh_net.parameters()
        tanh_net.set_parameters([np.zeros_like(p) for p in params])
        assert all(p is q for p, q in zip(params, tanh_net.parameters()))
        assert all(np.all(p == 0.0) for p in params)


class TestOptimizers:
    """Test Adam and AdaGrad updates."""

    def test_adam_first_step_is_learning_rate(self):
        """Bias correction makes the first Adam step lr * sign(g)."""
        p = np.array([1.0, -1.0])
        opt = Optimizer("adam", 0.1, [p])
        opt.step([np.array([2.0, -0.5])])
        assert np.allclose(p, [0.9, -0.9], atol=1e-6)
        assert opt.state.step == 1

    def test_adagrad_accumulates(self):
        """AdaGrad divides by the root of accumulated squared gradients."""
        p = np.array([0.0])
        state = OptimizerState.zeros_like("adagrad", 1.0, [p])
        optimizer_step(state, [p], [np.array([3.0])])
        optimizer_step(state, [p], [np.array([4.0])])
        assert state.second_moments[0][0] == pytest.approx(25.0)
        assert p[0] == pytest.approx(-1.0 - 4.0 / 5.0, rel=1e-6)

    def test_minimizes_quadratic(self):
        """Adam reaches the minimum of a quadratic bowl within 1e-4 in 5000 steps."""
        p = np.array([3.0, -2.0])
        opt = Optimizer("adam", 0.05, [p])
        for _ in range(5000):
            opt.step([2.0 * (p - np.array([1.0, 1.0]))])
        assert np.max(np.abs(p - 1.0)) <= 1e-4

    def test_non_finite_gradient_raises(self):
        """A NaN gradient raises DivergenceError without touching parameters."""
        p = np.array([1.0])
        opt = Optimizer("adam", 0.1, [p])
        with pytest.raises(DivergenceError):
            opt.step([np.array([np.nan])])
        assert p[0] == 1.0
        assert opt.state.step == 0

    def test_unknown_optimizer(self):
        """Only adam and adagrad are supported."""
        with pytest.raises(ValueError):
            Optimizer("sgd", 0.1, [np.zeros(1)])
