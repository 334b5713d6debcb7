# sampler.py
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

from dataclasses import dataclass

import numpy as np
from scipy import special

from mpfm.backend.flow.field import (
    FlowModel,
    GMVelocity,
    NoiseSchedule,
    predict_velocity,
)
from mpfm.backend.flow.prototype import draw_from_mixture
from mpfm.backend.models.errors import DegenerateTimeError, RejectedInputError

_schedule = NoiseSchedule()


def _check_step(t: float, dt: float):
    if not (np.isfinite(t) and np.isfinite(dt)) or dt <= 0 or dt > t or t > 1:
        raise RejectedInputError(f"Reverse step needs 0 < dt <= t <= 1, got t={t}, dt={dt}")


def beta(t: float, dt: float) -> float:
    """Variance of the forward transition from t - dt to t."""
    _check_step(t, dt)
    s = t - dt
    a_t, a_s = _schedule.alpha(t), _schedule.alpha(s)
    if a_s <= 0:
        raise RejectedInputError(f"Step dt={dt} is below the resolution of t={t}")
    sig_t, sig_s = _schedule.sigma(t), _schedule.sigma(s)
    return max(sig_t**2 - (a_t**2 / a_s**2) * sig_s**2, 0.0)


@dataclass(frozen=True)
class ReverseCoefficients:
    c1: float
    c2: float
    c3: float
    beta: float
    t: float
    dt: float


def reverse_coefficients(t: float, dt: float) -> ReverseCoefficients:
    b = beta(t, dt)
    s = t - dt
    a_t, a_s = _schedule.alpha(t), _schedule.alpha(s)
    var_t, var_s = _schedule.sigma(t) ** 2, _schedule.sigma(s) ** 2
    return ReverseCoefficients(
        c1=(var_s / var_t) * (a_t / a_s),
        c2=(b / var_t) * a_s,
        c3=(b / var_t) * var_s,
        beta=b,
        t=t,
        dt=dt,
    )


@dataclass
class IsotropicMixture:
    """sum_k w_k N(m_k, std^2 I), optionally with a leading batch axis."""

    weights: np.ndarray
    means: np.ndarray
    std: float

    def mean(self) -> np.ndarray:
        return np.einsum("...k,...kd->...d", self.weights, self.means)

    def covariance(self) -> np.ndarray:
        centred = self.means - self.mean()[..., None, :]
        spread = np.einsum("...k,...ki,...kj->...ij", self.weights, centred, centred)
        return self.std**2 * np.eye(self.means.shape[-1]) + spread

    def marginal_cdf(self, x: float, axis: int = 0) -> float:
        return float(np.sum(self.weights * special.ndtr((x - self.means[:, axis]) / self.std)))

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        return draw_from_mixture(self.weights, self.means, self.std, rng, size)


@dataclass
class EndpointPosterior(IsotropicMixture):
    """q(z_0 | z_t): components mu_zk = z_t - sigma_t mu_k, std s_z = sigma_t s."""


def _as_arrays(pred: GMVelocity, z_t) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    z_t = np.asarray(z_t.data if hasattr(z_t, "data") else z_t, dtype=np.float64)
    means = pred.means.data
    if z_t.shape != means.shape[:-2] + (means.shape[-1],):
        raise RejectedInputError(f"State shape {z_t.shape} does not match prediction {means.shape}")
    return pred.weights, means, z_t


def endpoint_posterior(pred: GMVelocity, z_t, t: float) -> EndpointPosterior:
    if t == 0:
        raise DegenerateTimeError("Endpoint posterior is degenerate at t = 0")
    if not 0 < t <= 1:
        raise RejectedInputError(f"Time must lie in (0, 1], got {t}")
    weights, means, z_t = _as_arrays(pred, z_t)
    sig = _schedule.sigma(t)
    return EndpointPosterior(weights.copy(), z_t[..., None, :] - sig * means, sig * pred.s)


def reverse_transition(pred: GMVelocity, z_t, t: float, dt: float) -> IsotropicMixture:
    """
    The one-step reverse kernel, itself a mixture: component k has mean
    c1 z_t + c2 mu_zk and variance c3 + c2^2 s_z^2.
    """
    coef = reverse_coefficients(t, dt)
    post = endpoint_posterior(pred, z_t, t)
    z_t = np.asarray(z_t.data if hasattr(z_t, "data") else z_t, dtype=np.float64)
    means = coef.c1 * z_t[..., None, :] + coef.c2 * post.means
    std = float(np.sqrt(coef.c3 + coef.c2**2 * post.std**2))
    return IsotropicMixture(post.weights, means, std)


def reverse_step(
    pred: GMVelocity, z_t, t: float, dt: float, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """Draw z_{t - dt} from the analytic reverse mixture."""
    return reverse_transition(pred, z_t, t, dt).sample(rng, size)


def reverse_step_composed(
    pred: GMVelocity, z_t, t: float, dt: float, rng: np.random.Generator, size: int | None = None
) -> np.ndarray:
    """
    Draw z_{t - dt} in two stages: an endpoint z_0 from the posterior,
    then the Gaussian bridge N(c1 z_t + c2 z_0, c3 I).
    """
    coef = reverse_coefficients(t, dt)
    z0 = endpoint_posterior(pred, z_t, t).sample(rng, size)
    z_t = np.asarray(z_t.data if hasattr(z_t, "data") else z_t, dtype=np.float64)
    return coef.c1 * z_t + coef.c2 * z0 + np.sqrt(coef.c3) * rng.standard_normal(z0.shape)


def sample_reverse_trajectory(
    model: FlowModel, z_start, steps: int, rng: np.random.Generator
) -> np.ndarray:
    """
    Walk from t=1 to t=0 on a uniform grid, refreshing the network
    prediction at every grid point. z_start may hold one state or a batch.
    """
    if steps < 1:
        raise RejectedInputError(f"Trajectory needs at least one step, got {steps}")
    z = np.asarray(z_start, dtype=np.float64)
    dt = 1.0 / steps
    for i in range(steps):
        t = (steps - i) / steps
        pred = predict_velocity(model, z, t)
        z = reverse_step(pred, z, t, dt, rng)
    return z
