"""
Neural Network Module for orthovae.

This module implements small multilayer perceptrons in numpy with hand-written
reverse-mode gradients, exact input Jacobians, the Adam and AdaGrad
optimizers, and a versioned checkpoint format.

Nonlinearities are applied only in hidden layers; the output layer is affine.
Everything is computed in float64.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from orthovae.config import (
    ACTIVATIONS,
    ADAGRAD_EPSILON,
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    CHECKPOINT_FORMAT_VERSION,
    OPTIMIZERS,
)
from orthovae.errors import DivergenceError, ShapeError
from orthovae.utils import as_matrix, ensure_directory_exists, make_rng

logger = logging.getLogger(__name__)


# ============================================================================
# Activations
# ============================================================================

def _linear(a: np.ndarray) -> np.ndarray:
    return a


def _linear_grad(a: np.ndarray, out: np.ndarray) -> np.ndarray:
    return np.ones_like(a)


def _tanh_grad(a: np.ndarray, out: np.ndarray) -> np.ndarray:
    return 1.0 - out * out


def _relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0.0)


def _relu_grad(a: np.ndarray, out: np.ndarray) -> np.ndarray:
    return (a > 0.0).astype(np.float64)


# name -> (function, derivative given pre-activation and output)
ACTIVATION_FUNCTIONS: Dict[str, Tuple[Callable, Callable]] = {
    "linear": (_linear, _linear_grad),
    "tanh": (np.tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
}


# ============================================================================
# Network
# ============================================================================

@dataclass
class DenseLayer:
    """
    Affine layer followed by an elementwise activation.

    Attributes:
        weight: Matrix of shape (out_features, in_features)
        bias: Vector of length out_features
        activation: One of "linear", "tanh", "relu"
    """

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    @property
    def in_features(self) -> int:
        return self.weight.shape[1]

    @property
    def out_features(self) -> int:
        return self.weight.shape[0]


@dataclass
class ForwardCache:
    """Per-layer inputs, pre-activations and outputs of a batched forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)
    outputs: List[np.ndarray] = field(default_factory=list)


@dataclass
class NetworkGradients:
    """
    Gradients of a scalar loss with respect to parameters and input.

    Attributes:
        weights: One matrix per layer, shaped like the layer weight
        biases: One vector per layer
        inputs: Gradient with respect to the network input
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    inputs: np.ndarray

    def as_list(self) -> List[np.ndarray]:
        """Flatten in the order of MlpNetwork.parameters()."""
        flat = []
        for w, b in zip(self.weights, self.biases):
            flat.extend([w, b])
        return flat


class MlpNetwork:
    """
    Layered affine + activation network with gradient and Jacobian support.

    Attributes:
        layers (List[DenseLayer]): Layers in evaluation order
        input_dim (int): Width of the input
        output_dim (int): Width of the output

    Example:
        >>> net = MlpNetwork.build([2, 10, 6], hidden_activation="tanh", rng=0)
        >>> net.forward(np.zeros(2)).shape
        (6,)
    """

    def __init__(self, layers: Sequence[DenseLayer]):
        """
        Initialize the network from explicit layers.

        Args:
            layers: Non-empty list of DenseLayer whose shapes chain

        Raises:
            ShapeError: If the layer shapes do not chain
            ValueError: If an activation is unknown
        """
        if not layers:
            raise ShapeError("A network needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATION_FUNCTIONS:
                raise ValueError(
                    f"Unknown activation '{layer.activation}', expected one of {ACTIVATIONS}"
                )
            if layer.bias.shape != (layer.out_features,):
                raise ShapeError(f"Layer {k} bias shape {layer.bias.shape} does not match weight")
            if k > 0 and layer.in_features != layers[k - 1].out_features:
                raise ShapeError(
                    f"Layer {k} expects {layer.in_features} inputs but layer {k - 1} "
                    f"produces {layers[k - 1].out_features}"
                )
        self.layers = list(layers)

    @classmethod
    def build(
        cls,
        layer_sizes: Sequence[int],
        hidden_activation: str = "tanh",
        rng: Union[int, np.random.Generator, None] = None,
        bias_init: str = "zeros",
    ) -> "MlpNetwork":
        """
        Create a network with symmetric uniform (Glorot) initialization.

        Weights are drawn uniformly in +-sqrt(6 / (fan_in + fan_out)). Biases are
        zero unless bias_init="uniform", which draws them from the same range.

        Args:
            layer_sizes: Widths [input, hidden..., output]
            hidden_activation: Activation of every hidden layer
            rng: Seed or Generator
            bias_init: "zeros" or "uniform"

        Returns:
            Newly initialized MlpNetwork
        """
        if len(layer_sizes) < 2:
            raise ShapeError("layer_sizes needs at least input and output widths")
        if bias_init not in ("zeros", "uniform"):
            raise ValueError(f"Unknown bias_init '{bias_init}'")
        gen = make_rng(rng)
        layers = []
        n_layers = len(layer_sizes) - 1
        for k in range(n_layers):
            fan_in, fan_out = layer_sizes[k], layer_sizes[k + 1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weight = gen.uniform(-limit, limit, size=(fan_out, fan_in))
            if bias_init == "uniform":
                bias = gen.uniform(-limit, limit, size=fan_out)
            else:
                bias = np.zeros(fan_out)
            activation = hidden_activation if k < n_layers - 1 else "linear"
            layers.append(DenseLayer(weight, bias, activation))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_features

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_features

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_dim] + [layer.out_features for layer in self.layers]

    @property
    def activations(self) -> List[str]:
        return [layer.activation for layer in self.layers]

    # ------------------------------------------------------------------
    # Evaluation
    # ------------------------------------------------------------------

    def _as_batch(self, x: np.ndarray) -> Tuple[np.ndarray, bool]:
        arr = np.asarray(x, dtype=np.float64)
        single = arr.ndim == 1
        batch = arr[None, :] if single else arr
        if batch.ndim != 2 or batch.shape[1] != self.input_dim:
            raise ShapeError(
                f"Expected input of width {self.input_dim}, got shape {arr.shape}"
            )
        return batch, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        """
        Evaluate the network on a vector or a (batch, input_dim) array.

        Args:
            x: Input vector or batch

        Returns:
            Output vector or batch, matching the input layout
        """
        out, _ = self.forward_with_cache(x)
        return out

    def forward_with_cache(self, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """Evaluate and keep the intermediate values needed by backward()."""
        h, single = self._as_batch(x)
        cache = ForwardCache()
        for layer in self.layers:
            cache.inputs.append(h)
            pre = h @ layer.weight.T + layer.bias
            fn, _ = ACTIVATION_FUNCTIONS[layer.activation]
            h = fn(pre)
            cache.pre_activations.append(pre)
            cache.outputs.append(h)
        return (h[0] if single else h), cache

    def backward(
        self,
        x: np.ndarray,
        upstream_grad: np.ndarray,
        cache: Optional[ForwardCache] = None,
    ) -> NetworkGradients:
        """
        Back-propagate an upstream gradient through the network.

        For a batch, parameter gradients are summed over the batch rows, so the
        caller chooses the reduction by scaling upstream_grad.

        Args:
            x: Input vector or batch used in the forward pass
            upstream_grad: dLoss/dOutput, same layout as the output
            cache: Forward cache for x (recomputed if None)

        Returns:
            NetworkGradients for all weights, biases and the input
        """
        batch, single = self._as_batch(x)
        if cache is None:
            _, cache = self.forward_with_cache(batch)
        grad = np.asarray(upstream_grad, dtype=np.float64)
        grad = grad[None, :] if grad.ndim == 1 else grad
        if grad.shape != (batch.shape[0], self.output_dim):
            raise ShapeError(
                f"Upstream gradient shape {grad.shape} does not match output "
                f"({batch.shape[0]}, {self.output_dim})"
            )

        weight_grads: List[np.ndarray] = [None] * len(self.layers)
        bias_grads: List[np.ndarray] = [None] * len(self.layers)
        for k in reversed(range(len(self.layers))):
            layer = self.layers[k]
            _, dfn = ACTIVATION_FUNCTIONS[layer.activation]
            grad_pre = grad * dfn(cache.pre_activations[k], cache.outputs[k])
            weight_grads[k] = grad_pre.T @ cache.inputs[k]
            bias_grads[k] = grad_pre.sum(axis=0)
            grad = grad_pre @ layer.weight

        return NetworkGradients(
            weights=weight_grads,
            biases=bias_grads,
            inputs=grad[0] if single else grad,
        )

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        """
        Exact Jacobian of the output with respect to the input.

        Chains the per-layer Jacobians diag(act'(pre_k)) @ W_k.

        Args:
            z: Input vector or batch

        Returns:
            (output_dim, input_dim) matrix, or (batch, output_dim, input_dim)
        """
        batch, single = self._as_batch(z)
        _, cache = self.forward_with_cache(batch)
        jac = np.broadcast_to(np.eye(self.input_dim), (batch.shape[0], self.input_dim, self.input_dim))
        for k, layer in enumerate(self.layers):
            _, dfn = ACTIVATION_FUNCTIONS[layer.activation]
            local = dfn(cache.pre_activations[k], cache.outputs[k])
            jac = np.einsum("oi,bij->boj", layer.weight, jac) * local[:, :, None]
        return jac[0] if single else jac

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays (by reference) in the order [W0, b0, W1, b1, ...]."""
        params = []
        for layer in self.layers:
            params.extend([layer.weight, layer.bias])
        return params

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        """Copy values into the parameter arrays, keeping their identity."""
        own = self.parameters()
        if len(own) != len(params):
            raise ShapeError(f"Expected {len(own)} parameter arrays, got {len(params)}")
        for target, source in zip(own, params):
            if target.shape != np.shape(source):
                raise ShapeError(f"Parameter shape {np.shape(source)} != {target.shape}")
            target[...] = source

    def copy(self) -> "MlpNetwork":
        """Deep copy of the network."""
        return MlpNetwork(
            [DenseLayer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def compose_input(self, q: np.ndarray) -> "MlpNetwork":
        """
        Network computing x -> self(q @ x).

        Args:
            q: Matrix of shape (input_dim, new_input_dim)
        """
        q = as_matrix(q, "q")
        if q.shape[0] != self.input_dim:
            raise ShapeError(f"q must have {self.input_dim} rows, got {q.shape}")
        net = self.copy()
        net.layers[0].weight = net.layers[0].weight @ q
        return net

    def compose_output(self, q: np.ndarray) -> "MlpNetwork":
        """
        Network computing x -> q @ self(x).

        Requires a linear output layer, which build() always produces.

        Args:
            q: Matrix of shape (new_output_dim, output_dim)
        """
        q = as_matrix(q, "q")
        if self.layers[-1].activation != "linear":
            raise ValueError("compose_output needs a linear output layer")
        if q.shape[1] != self.output_dim:
            raise ShapeError(f"q must have {self.output_dim} columns, got {q.shape}")
        net = self.copy()
        net.layers[-1].weight = q @ net.layers[-1].weight
        net.layers[-1].bias = q @ net.layers[-1].bias
        return net

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------

    def to_arrays(self, prefix: str = "") -> Dict[str, np.ndarray]:
        """Flatten into named arrays for a checkpoint file."""
        arrays = {
            f"{prefix}activations": np.array(self.activations),
            f"{prefix}num_layers": np.array(len(self.layers)),
        }
        for k, layer in enumerate(self.layers):
            arrays[f"{prefix}W_{k}"] = layer.weight
            arrays[f"{prefix}b_{k}"] = layer.bias
        return arrays

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> "MlpNetwork":
        """Rebuild a network stored with to_arrays()."""
        activations = [str(a) for a in arrays[f"{prefix}activations"]]
        n_layers = int(arrays[f"{prefix}num_layers"])
        layers = [
            DenseLayer(
                np.array(arrays[f"{prefix}W_{k}"], dtype=np.float64),
                np.array(arrays[f"{prefix}b_{k}"], dtype=np.float64),
                activations[k],
            )
            for k in range(n_layers)
        ]
        return cls(layers)

    def save_checkpoint(self, path: Union[str, Path]) -> Path:
        """
        Save the network to a versioned .npz checkpoint (exact round trip).

        Args:
            path: Output file

        Returns:
            The written path
        """
        path = Path(path)
        ensure_directory_exists(path.parent)
        with open(path, "wb") as fh:
            np.savez(fh, format_version=np.array(CHECKPOINT_FORMAT_VERSION), **self.to_arrays())
        logger.debug(f"Saved network checkpoint to {path}")
        return path

    @classmethod
    def load_checkpoint(cls, path: Union[str, Path]) -> "MlpNetwork":
        """Load a network saved with save_checkpoint()."""
        with np.load(path, allow_pickle=False) as data:
            check_checkpoint_version(data, path)
            return cls.from_arrays(data)


def check_checkpoint_version(data, path) -> None:
    """Reject checkpoint files written by an unknown format version."""
    version = int(data["format_version"])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"Checkpoint {path} has format version {version}, "
            f"expected {CHECKPOINT_FORMAT_VERSION}"
        )


# ============================================================================
# Functional Interface
# ============================================================================

def forward(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Evaluate net on x."""
    return net.forward(x)


def backward(net: MlpNetwork, x: np.ndarray, upstream_grad: np.ndarray) -> NetworkGradients:
    """Gradients of <upstream_grad, net(x)> with respect to parameters and input."""
    return net.backward(x, upstream_grad)


def decoder_jacobian(net: MlpNetwork, z: np.ndarray) -> np.ndarray:
    """
    Jacobian of a decoder at latent point(s) z.

    Example:
        >>> w = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        >>> net = MlpNetwork([DenseLayer(w, np.zeros(3))])
        >>> np.allclose(decoder_jacobian(net, np.ones(2)), w)
        True
    """
    return net.jacobian(z)


# ============================================================================
# Optimizers
# ============================================================================

@dataclass
class OptimizerState:
    """
    State of a first-order optimizer.

    Attributes:
        kind: "adam" or "adagrad"
        learning_rate: Step size
        first_moments: Adam first moments (unused by AdaGrad)
        second_moments: Adam second moments or AdaGrad squared-gradient sums
        step: Number of updates applied so far
    """

    kind: str
    learning_rate: float
    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, kind: str, learning_rate: float, params: Sequence[np.ndarray]) -> "OptimizerState":
        """Fresh state with accumulators shaped like params."""
        if kind not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{kind}', expected one of {OPTIMIZERS}")
        if learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {learning_rate}")
        return cls(
            kind=kind,
            learning_rate=float(learning_rate),
            first_moments=[np.zeros_like(p) for p in params],
            second_moments=[np.zeros_like(p) for p in params],
        )


def optimizer_step(
    state: OptimizerState,
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
) -> Sequence[np.ndarray]:
    """
    Apply one Adam or AdaGrad update to params in place.

    Args:
        state: Optimizer state (updated in place)
        params: Parameter arrays
        grads: Gradients, shaped like params

    Returns:
        The updated params

    Raises:
        ShapeError: If the shapes do not match the accumulators
        DivergenceError: If any gradient entry is non-finite
    """
    if len(params) != len(grads) or len(params) != len(state.second_moments):
        raise ShapeError("params, grads and optimizer state must have equal length")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise ShapeError(f"Gradient {i} shape {g.shape} != parameter shape {params[i].shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"Non-finite gradient for parameter {i} at step {state.step}",
                step=state.step,
                diagnostics={"parameter_index": i, "shape": list(g.shape)},
            )

    state.step += 1
    lr = state.learning_rate
    if state.kind == "adam":
        bias1 = 1.0 - ADAM_BETA1 ** state.step
        bias2 = 1.0 - ADAM_BETA2 ** state.step
        for p, g, m, v in zip(params, grads, state.first_moments, state.second_moments):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m / bias1) / (np.sqrt(v / bias2) + ADAM_EPSILON)
    else:
        for p, g, acc in zip(params, grads, state.second_moments):
            acc += g * g
            p -= lr * g / np.sqrt(acc + ADAGRAD_EPSILON)
    return params


class Optimizer:
    """
    Optimizer bound to a fixed list of parameter arrays.

    Example:
        >>> opt = Optimizer("adam", 1e-3, net.parameters())
        >>> opt.step(grads.as_list())
    """

    def __init__(self, kind: str, learning_rate: float, params: Sequence[np.ndarray]):
        self.params = list(params)
        self.state = OptimizerState.zeros_like(kind, learning_rate, self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Update the bound parameters in place."""
        optimizer_step(self.state, self.params, grads)
