# field.py
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

from dataclasses import asdict, dataclass, field

import numpy as np

from mpfm.backend.flow.prototype import GMPrototype, sample_prior
from mpfm.backend.globals import Numerics
from mpfm.backend.models.enum import Activation, EndpointSource
from mpfm.backend.models.errors import RejectedInputError
from mpfm.backend.nn.mlp import MLP
from mpfm.backend.nn.tensor import (
    Tensor,
    as_tensor,
    concat,
    exp,
    log,
    log_softmax,
    logsumexp,
    maximum,
    reshape,
    square,
    tsum,
)


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear path z_t = (1 - t) z_0 + t z_T on [0, horizon]."""

    horizon: float = 1.0

    @staticmethod
    def alpha(t: float) -> float:
        return 1.0 - t

    @staticmethod
    def sigma(t: float) -> float:
        return t


def _check_time(t):
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise RejectedInputError(f"Time must lie in [0, 1], got {t}")
    return arr


def schedule_at(t: float) -> tuple[float, float]:
    _check_time(t)
    return NoiseSchedule.alpha(t), NoiseSchedule.sigma(t)


def interpolate(z0, zT, t):
    """(1 - t) z0 + t zT; t may be a scalar or one value per row."""
    z0, zT = np.asarray(z0, dtype=np.float64), np.asarray(zT, dtype=np.float64)
    if z0.shape != zT.shape:
        raise RejectedInputError(f"Endpoint shapes differ: {z0.shape} vs {zT.shape}")
    t = _check_time(t)
    if t.ndim == 1 and z0.ndim == 2:
        t = t[:, None]
    return (1.0 - t) * z0 + t * zT


def true_velocity(z0, zT) -> np.ndarray:
    z0, zT = np.asarray(z0, dtype=np.float64), np.asarray(zT, dtype=np.float64)
    if z0.shape != zT.shape:
        raise RejectedInputError(f"Endpoint shapes differ: {z0.shape} vs {zT.shape}")
    return zT - z0


@dataclass
class GMVelocity:
    """
    Predicted velocity distribution sum_k pi_k N(u; mu_k, s^2 I). Leading
    batch dimensions are allowed: log_weights (..., K), means (..., K, d).
    """

    log_weights: Tensor
    means: Tensor
    std: Tensor

    @classmethod
    def from_arrays(cls, weights, means, std: float) -> "GMVelocity":
        weights = np.maximum(np.asarray(weights, dtype=np.float64), Numerics.weight_floor)
        return cls(
            log_softmax(Tensor(np.log(weights / weights.sum(axis=-1, keepdims=True)))),
            Tensor(means),
            Tensor(std),
        )

    @property
    def n_components(self) -> int:
        return self.means.shape[-2]

    @property
    def dim(self) -> int:
        return self.means.shape[-1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights.data)

    @property
    def s(self) -> float:
        return float(self.std.data)


@dataclass
class FlowSettings:
    psi_steps: int = 8
    one_step_psi: bool = False
    t_min: float = 1e-3
    endpoint_source: str = EndpointSource.PRIOR
    repulsion_clip: float = 50.0
    per_sample_t: bool = False
    # network input (z - input_center) / input_scale, component means scaled by velocity_scale
    input_center: list[float] | None = None
    input_scale: float = 1.0
    velocity_scale: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def data_scales(z: np.ndarray) -> dict:
    """
    Preconditioning for FlowSettings from a data sample: the network sees
    roughly unit-scale inputs and its raw outputs map onto velocities of
    the size needed to carry the prior across the data.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or len(z) < 2:
        raise RejectedInputError(f"Expected at least two samples of shape (n, d), got {z.shape}")
    var = z.var(axis=0)
    input_scale = float(np.sqrt(var.mean()))
    if not np.isfinite(input_scale) or input_scale < Numerics.s_floor:
        input_scale = 1.0
    # a standard-normal draw sits at expected squared distance d + E|z|^2 from the data
    velocity_scale = float(np.sqrt(z.shape[1] + var.sum() + np.sum(z.mean(axis=0) ** 2)))
    return {
        "input_center": z.mean(axis=0).tolist(),
        "input_scale": input_scale,
        "velocity_scale": velocity_scale,
    }


@dataclass
class FlowModel:
    """Velocity network plus the prototype it transports onto."""

    net: MLP
    prototype: GMPrototype
    settings: FlowSettings = field(default_factory=FlowSettings)
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)

    @classmethod
    def create(
        cls,
        prototype: GMPrototype,
        hidden_sizes: list[int],
        activation: str = Activation.TANH,
        rng: np.random.Generator | None = None,
        settings: FlowSettings | None = None,
    ) -> "FlowModel":
        k, d = prototype.n_components, prototype.dim
        net = MLP([d + 1, *hidden_sizes, k + k * d], activation=activation, rng=rng, name="velocity")
        # uniform weights; the means keep their random init, identical means would get
        # identical gradients and never separate
        net.zero_output(0, k)
        return cls(net, prototype, settings or FlowSettings())

    @property
    def dim(self) -> int:
        return self.prototype.dim

    @property
    def n_components(self) -> int:
        return self.prototype.n_components

    def parameters(self) -> list[Tensor]:
        return self.net.parameters() + self.prototype.parameters()


def predict_velocity(model: FlowModel, z_t, t) -> GMVelocity:
    """
    Run the network on [z_t, t]; the first K outputs are weight logits,
    the rest are the K x d component means. s is the prototype's.
    """
    z = as_tensor(z_t)
    d, k = model.dim, model.n_components
    if z.ndim not in (1, 2) or z.shape[-1] != d:
        raise RejectedInputError(f"Expected state of dimension {d}, got shape {z.shape}")
    t = _check_time(t)
    single = z.ndim == 1
    if single:
        z = reshape(z, (1, d))
    n = z.shape[0]
    time = Tensor(np.broadcast_to(t.reshape(-1, 1), (n, 1)))

    settings = model.settings
    x = z if settings.input_center is None else z - np.asarray(settings.input_center)
    out = model.net(concat([x * (1.0 / settings.input_scale), time], axis=-1))
    log_weights = log_softmax(out[:, :k], axis=-1)
    means = reshape(out[:, k:], (n, k, d)) * settings.velocity_scale
    if single:
        log_weights, means = log_weights[0], means[0]
    return GMVelocity(log_weights, means, model.prototype.std_param)


def gm_nll(pred: GMVelocity, u) -> Tensor:
    """-log sum_k pi_k N(u; mu_k, s^2 I), one value per leading index of u."""
    u = as_tensor(u)
    d = pred.dim
    if u.shape != pred.means.shape[:-2] + (d,):
        raise RejectedInputError(
            f"Velocity shape {u.shape} does not match prediction {pred.means.shape}"
        )
    diff = reshape(u, (*u.shape[:-1], 1, d)) - pred.means
    sq = tsum(square(diff), axis=-1)
    var = square(pred.std)
    log_norm = (-0.5 * d) * (np.log(2 * np.pi) + log(var))
    return -logsumexp(pred.log_weights + log_norm - sq / (2.0 * var), axis=-1)


def mixture_mean(pred: GMVelocity) -> Tensor:
    """sum_k pi_k mu_k."""
    w = exp(pred.log_weights)
    return tsum(reshape(w, (*w.shape, 1)) * pred.means, axis=-2)


def draw_time(rng: np.random.Generator, n: int, t_min: float, per_sample: bool) -> np.ndarray:
    """t ~ U(t_min, 1), either one value per sample or one shared by the batch."""
    if per_sample:
        return rng.uniform(t_min, 1.0, size=n)
    return np.full(n, rng.uniform(t_min, 1.0))


def draw_endpoints(model: FlowModel, z0: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    source = model.settings.endpoint_source
    if source == EndpointSource.PRIOR:
        return sample_prior(model.prototype, rng, z0.shape[0])
    if source == EndpointSource.NOISE:
        return rng.standard_normal(z0.shape)
    if source == EndpointSource.PROTOTYPE_MEAN:
        return model.prototype.means.data[model.prototype.assign(z0)].copy()
    raise RejectedInputError(f"Unknown endpoint source '{source}'")


def _flow_nll(model: FlowModel, z0, rng, t=None, z_end=None) -> Tensor:
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim != 2 or z0.shape[0] == 0:
        raise RejectedInputError(f"Expected a nonempty batch of points, got shape {z0.shape}")
    if z0.shape[1] != model.dim:
        raise RejectedInputError(f"Expected points of dimension {model.dim}, got {z0.shape[1]}")
    n = z0.shape[0]
    if t is None:
        t = draw_time(rng, n, model.settings.t_min, model.settings.per_sample_t)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    zT = draw_endpoints(model, z0, rng) if z_end is None else np.asarray(z_end, dtype=np.float64)

    z_t = interpolate(z0, zT, t)
    pred = predict_velocity(model, z_t, t)
    return gm_nll(pred, true_velocity(z0, zT))


def loss_flow_normal(model: FlowModel, z0, rng: np.random.Generator, t=None, z_end=None) -> Tensor:
    """Batch mean of the velocity NLL on normal samples."""
    return _flow_nll(model, z0, rng, t, z_end).mean()


def loss_flow_anomaly(model: FlowModel, z0, rng: np.random.Generator, t=None, z_end=None) -> Tensor:
    """
    Batch mean of max(-nll, -B_rep): maximizing the velocity NLL on
    anomalies, bounded by the repulsion clip.
    """
    nll = _flow_nll(model, z0, rng, t, z_end)
    return maximum(-nll, -model.settings.repulsion_clip).mean()


def push_forward_psi(model: FlowModel, z0, steps: int | None = None) -> Tensor:
    """
    Transport features into the prototype space by Euler integration of
    the mixture-mean velocity from t=0 to t=1.
    """
    z = as_tensor(z0)
    if z.ndim not in (1, 2) or z.shape[-1] != model.dim:
        raise RejectedInputError(f"Expected points of dimension {model.dim}, got shape {z.shape}")
    if model.settings.one_step_psi:
        return z + mixture_mean(predict_velocity(model, z, 0.0))

    n_steps = int(model.settings.psi_steps if steps is None else steps)
    if n_steps < 1:
        raise RejectedInputError(f"Integration needs at least one step, got {n_steps}")
    dt = 1.0 / n_steps
    for i in range(n_steps):
        z = z + dt * mixture_mean(predict_velocity(model, z, i * dt))
    return z
