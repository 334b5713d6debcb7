import math
from itertools import pairwise

import numpy as np

from mpfm.backend.models.enum import Activation
from mpfm.backend.models.errors import RejectedInputError
from mpfm.backend.nn.tensor import Tensor, as_tensor, reshape, relu, tanh

_ACTIVATIONS = {Activation.TANH: tanh, Activation.RELU: relu}


class MLP:
    """
    Fully connected network. Hidden layers use fan-in scaled uniform
    weights and zero biases; the output layer is linear.
    """

    def __init__(
        self,
        sizes: list[int],
        activation: str = Activation.TANH,
        rng: np.random.Generator | None = None,
        zero_final: bool = False,
        name: str = "mlp",
    ):
        if len(sizes) < 2 or any(int(s) < 1 for s in sizes):
            raise RejectedInputError(f"Invalid layer sizes {sizes}")
        if activation not in _ACTIVATIONS:
            raise RejectedInputError(f"Unknown activation '{activation}'")
        rng = rng if rng is not None else np.random.default_rng(0)

        self.sizes = [int(s) for s in sizes]
        self.activation = activation
        self.name = name
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []

        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(pairwise(self.sizes)):
            bound = 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            if zero_final and i == n_layers - 1:
                w = np.zeros_like(w)
            self.weights.append(Tensor(w, requires_grad=True, name=f"{name}.w{i}"))
            self.biases.append(Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b{i}"))

    @property
    def in_features(self) -> int:
        return self.sizes[0]

    @property
    def out_features(self) -> int:
        return self.sizes[-1]

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim == 0 or x.shape[-1] != self.in_features:
            raise RejectedInputError(
                f"{self.name} expects last dimension {self.in_features}, got shape {x.shape}"
            )
        lead = x.shape[:-1]
        h = reshape(x, (-1, self.in_features)) if x.ndim != 2 else x
        act = _ACTIVATIONS[self.activation]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = act(h)
        return h if x.ndim == 2 else reshape(h, (*lead, self.out_features))

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def named_parameters(self) -> dict[str, Tensor]:
        return {p.name: p for p in self.parameters()}

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_output(self, start: int | None = None, stop: int | None = None):
        """Zero the output layer columns [start, stop) and their biases."""
        cols = slice(start, stop)
        self.weights[-1].data[:, cols] = 0.0
        self.biases[-1].data[cols] = 0.0

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        if set(state) != set(params):
            raise RejectedInputError(f"State keys do not match {self.name} parameters")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise RejectedInputError(f"Shape mismatch for {name}")
            p.data = np.array(state[name], dtype=p.data.dtype)


def mlp_forward(net: MLP, x) -> Tensor:
    return net.forward(x)
