# optim.py
#
# Copyright 2026 The mpfm contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, in version 3 of the License.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.
#

from collections.abc import Sequence

import numpy as np

from mpfm.backend.models.errors import NumericFaultError, RejectedInputError
from mpfm.backend.nn.tensor import Tensor


class AdamW:
    """
    Adaptive moment estimation with decoupled weight decay. Parameter
    groups may override the weight decay (prototype parameters use 0).
    """

    def __init__(
        self,
        param_groups: Sequence[dict] | Sequence[Tensor],
        lr: float = 2e-4,
        betas: Sequence[float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-5,
    ):
        if param_groups and isinstance(param_groups[0], Tensor):
            param_groups = [{"params": list(param_groups)}]
        self.lr = lr
        self.betas = (float(betas[0]), float(betas[1]))
        self.eps = eps
        self.param_groups = [
            {"params": list(g["params"]), "weight_decay": g.get("weight_decay", weight_decay)}
            for g in param_groups  # type: ignore[union-attr]
        ]
        self.step_count = 0
        self.state = {
            id(p): {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)} for p in self.params
        }

    @property
    def params(self) -> list[Tensor]:
        return [p for g in self.param_groups for p in g["params"]]

    def step(self, grads: Sequence[np.ndarray]):
        params = self.params
        if len(grads) != len(params):
            raise RejectedInputError(f"Expected {len(params)} gradients, got {len(grads)}")
        for p, g in zip(params, grads):
            if g.shape != p.shape:
                raise RejectedInputError(f"Gradient shape {g.shape} does not match {p.name} {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericFaultError(f"Non-finite gradient for {p.name or 'parameter'}")

        self.step_count += 1
        beta1, beta2 = self.betas
        bias_correction1 = 1 - beta1**self.step_count
        bias_correction2 = 1 - beta2**self.step_count
        step_size = self.lr / bias_correction1

        grads_by_id = {id(p): g for p, g in zip(params, grads)}
        for group in self.param_groups:
            decay = 1.0 - self.lr * group["weight_decay"]
            for p in group["params"]:
                g = grads_by_id[id(p)]
                state = self.state[id(p)]
                state["m"] = beta1 * state["m"] + (1 - beta1) * g
                state["v"] = beta2 * state["v"] + (1 - beta2) * g * g
                denom = np.sqrt(state["v"] / bias_correction2) + self.eps
                # decoupled decay, applied to the pre-update value
                p.data = p.data * decay - step_size * state["m"] / denom

    def moments(self, p: Tensor) -> tuple[np.ndarray, np.ndarray]:
        state = self.state[id(p)]
        return state["m"], state["v"]
