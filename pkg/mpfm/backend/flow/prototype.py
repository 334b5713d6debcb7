# prototype.py
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

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from mpfm.backend.globals import Numerics
from mpfm.backend.logger import Logger
from mpfm.backend.models.errors import InsufficientDataError, RejectedInputError
from mpfm.backend.nn.tensor import (
    Tensor,
    as_tensor,
    exp,
    log,
    log_softmax,
    logsumexp,
    reshape,
    square,
    tsum,
)
from mpfm.backend.utils.rng import make_rng

logging = Logger()


@dataclass
class Responsibilities:
    """Posterior component probabilities p(c=k|y), one row per point."""

    values: np.ndarray

    @property
    def argmax(self) -> np.ndarray | int:
        # np.argmax keeps the first maximum, so ties go to the lowest index
        return np.argmax(self.values, axis=-1)


class GMPrototype:
    """
    Isotropic Gaussian mixture with a single shared standard deviation.

    Weights are stored as log-weights and read through a log-softmax, so
    they stay on the simplex even when they are trained. Means are always
    trainable; weights and std only when the matching flag is set.
    """

    def __init__(
        self,
        weights,
        means,
        std: float,
        learn_weights: bool = False,
        learn_std: bool = False,
    ):
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        means = np.asarray(means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] != weights.size or means.shape[0] < 1:
            raise RejectedInputError(
                f"Means must be K x d with K = {weights.size}, got shape {means.shape}"
            )
        if not np.all(np.isfinite(means)) or not np.all(np.isfinite(weights)):
            raise RejectedInputError("Prototype parameters must be finite")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise RejectedInputError("Mixture weights must be nonnegative with positive sum")
        if not std > 0:
            raise RejectedInputError(f"Shared std must be positive, got {std}")

        weights = np.maximum(weights / weights.sum(), Numerics.weight_floor)
        weights = weights / weights.sum()

        self.learn_weights = learn_weights
        self.learn_std = learn_std
        self.log_weights = Tensor(np.log(weights), requires_grad=learn_weights, name="proto.log_weights")
        self.means = Tensor(means, requires_grad=True, name="proto.means")
        self.std_param = Tensor(max(float(std), Numerics.s_floor), requires_grad=learn_std, name="proto.std")

    def __repr__(self):
        return f"<GMPrototype K={self.n_components} d={self.dim} s={self.std:.4g}>"

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights.data - np.logaddexp.reduce(self.log_weights.data))

    @property
    def std(self) -> float:
        return float(self.std_param.data)

    def parameters(self) -> list[Tensor]:
        params = [self.means]
        if self.learn_weights:
            params.append(self.log_weights)
        if self.learn_std:
            params.append(self.std_param)
        return params

    def log_pi(self) -> Tensor:
        return log_softmax(self.log_weights)

    def _points(self, y) -> tuple[Tensor, bool]:
        y = as_tensor(y)
        if y.ndim not in (1, 2) or y.shape[-1] != self.dim:
            raise RejectedInputError(f"Expected points of dimension {self.dim}, got shape {y.shape}")
        if not np.all(np.isfinite(y.data)):
            raise RejectedInputError("Points must be finite")
        single = y.ndim == 1
        return (reshape(y, (1, self.dim)) if single else y), single

    def log_joint(self, y) -> Tensor:
        """log pi_k + log N(y; mu_k, s^2 I) for every row of y, shape (B, K)."""
        y, _ = self._points(y)
        n, k, d = y.shape[0], self.n_components, self.dim
        diff = reshape(y, (n, 1, d)) - reshape(self.means, (1, k, d))
        sq = tsum(square(diff), axis=-1)
        var = square(self.std_param)
        log_norm = (-0.5 * d) * (np.log(2 * np.pi) + 2.0 * log(self.std_param))
        return reshape(self.log_pi(), (1, k)) + log_norm - sq / (2.0 * var)

    def log_prob(self, y) -> Tensor:
        y, single = self._points(y)
        out = logsumexp(self.log_joint(y), axis=-1)
        return out[0] if single else out

    def responsibilities(self, y) -> Tensor:
        y, single = self._points(y)
        out = exp(log_softmax(self.log_joint(y), axis=-1))
        return out[0] if single else out

    def assign(self, y) -> np.ndarray:
        """Most probable component per point; ties go to the lowest index."""
        y = as_tensor(y).detach()
        out = np.argmax(self.log_joint(y).data, axis=-1)
        return out[0] if y.ndim == 1 else out

    def project(self):
        """Restore the invariants after a gradient step on weights or std."""
        if self.learn_weights:
            weights = np.maximum(self.weights, Numerics.weight_floor)
            self.log_weights.data = np.log(weights / weights.sum()).astype(self.log_weights.data.dtype)
        if self.learn_std and self.std < Numerics.s_floor:
            self.std_param.data = np.array(Numerics.s_floor, dtype=self.std_param.data.dtype)

    def copy(self) -> "GMPrototype":
        return GMPrototype(self.weights, self.means.data, self.std, self.learn_weights, self.learn_std)


def log_density(proto: GMPrototype, y) -> float | np.ndarray:
    """log sum_k pi_k N(y; mu_k, s^2 I) in log-sum-exp form."""
    out = proto.log_prob(as_tensor(y).detach()).data
    return float(out) if out.ndim == 0 else out


def responsibilities(proto: GMPrototype, y) -> Responsibilities:
    return Responsibilities(proto.responsibilities(as_tensor(y).detach()).data)


def draw_from_mixture(weights, means, std, rng: np.random.Generator, size: int | None = None):
    """
    Draw from an isotropic mixture. With 1-D weights, `size` points (or a
    single point when size is None) come from the one mixture; with (B, K)
    weights and (B, K, d) means one point is drawn per row.
    """
    weights = np.asarray(weights, dtype=np.float64)
    means = np.asarray(means)
    if weights.ndim == 1:
        k = rng.choice(weights.size, size=size, p=weights / weights.sum())
        shape = means.shape[-1:] if size is None else (size, means.shape[-1])
        return means[k] + std * rng.standard_normal(shape)

    n, n_components, d = means.shape
    cdf = np.cumsum(weights, axis=-1)
    u = rng.random(n) * cdf[:, -1]
    k = np.minimum((cdf < u[:, None]).sum(axis=-1), n_components - 1)
    std = np.asarray(std, dtype=np.float64)
    scale = std.reshape(-1, 1) if std.ndim == 1 else std
    return means[np.arange(n), k] + scale * rng.standard_normal((n, d))


def sample_prior(proto: GMPrototype, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw k ~ pi, then y ~ N(mu_k, s^2 I)."""
    return draw_from_mixture(proto.weights, proto.means.data, proto.std, rng, size)


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return cdist(x, centers, metric="sqeuclidean")


def _seed_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(x, x[chosen]).reshape(-1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dist(x, x[idx : idx + 1]).reshape(-1))
    return x[chosen].copy()


def _assign(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dist = _sq_dist(x, centers)
    labels = np.argmin(dist, axis=1)
    return labels, dist[np.arange(x.shape[0]), labels]


def _reseed_empty(x, centers, labels, point_dist) -> bool:
    """Move every empty centroid onto the point farthest from its own centroid."""
    counts = np.bincount(labels, minlength=centers.shape[0])
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return False
    point_dist = point_dist.copy()
    for c in empty:
        far = int(np.argmax(point_dist))
        centers[c] = x[far]
        point_dist[far] = -1.0
    return True


def kmeanspp_init(
    features,
    n_components: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-8,
    learn_weights: bool = False,
    learn_std: bool = False,
) -> GMPrototype:
    """
    Build the prototype from k-means++ seeding followed by Lloyd
    iterations: pi_k = |C_k| / N, mu_k the centroids and
    s^2 = SSE / (d N), clamped from below by s_floor^2.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise RejectedInputError(f"Features must be an N x d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("Features must be finite")
    n, d = x.shape
    k = int(n_components)
    if k < 1:
        raise RejectedInputError(f"Component count must be >= 1, got {k}")
    if n < k:
        raise InsufficientDataError(f"Need at least {k} points to build {k} components, got {n}")

    rng = make_rng(seed, 0)
    centers = _seed_centers(x, k, rng)
    labels, point_dist = _assign(x, centers)
    sse = float(point_dist.sum())

    for it in range(max_iter):
        if _reseed_empty(x, centers, labels, point_dist):
            labels, point_dist = _assign(x, centers)
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
        labels, point_dist = _assign(x, centers)
        new_sse = float(point_dist.sum())
        converged = abs(sse - new_sse) <= tol * max(sse, np.finfo(float).tiny)
        sse = new_sse
        if converged:
            logging.debug(f"k-means converged after {it + 1} Lloyd iterations, SSE {sse:.6g}")
            break

    counts = np.bincount(labels, minlength=k).astype(np.float64)
    if np.any(counts == 0):
        logging.warning(f"{int((counts == 0).sum())} components have no members (duplicate points)")
    variance = sse / (d * n)
    std = math.sqrt(max(variance, Numerics.s_floor**2))
    return GMPrototype(counts / n, centers, std, learn_weights=learn_weights, learn_std=learn_std)
