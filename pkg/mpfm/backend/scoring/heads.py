# heads.py
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
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np

from mpfm.backend.flow.field import FlowModel, push_forward_psi
from mpfm.backend.models.enum import Activation, Pooling, Term
from mpfm.backend.models.errors import RejectedInputError
from mpfm.backend.nn.mlp import MLP
from mpfm.backend.nn.tensor import (
    Tensor,
    as_tensor,
    maximum,
    reshape,
    softplus,
    tabs,
    take,
    take_along_axis,
)


@dataclass
class FeatureSample:
    sample_id: int
    patches: np.ndarray  # P x C
    label: int = 0

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 2 or self.patches.shape[0] < 1:
            raise RejectedInputError(f"Patches must be a nonempty P x C matrix, got {self.patches.shape}")
        if self.label not in (0, 1):
            raise RejectedInputError(f"Label must be 0 or 1, got {self.label}")

    @property
    def pooled(self) -> np.ndarray:
        return self.patches.mean(axis=0)

    def __eq__(self, other):
        if not isinstance(other, FeatureSample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.label == other.label
            and self.patches.shape == other.patches.shape
            and bool(np.all(self.patches.view(np.uint64) == other.patches.view(np.uint64)))
        )


@dataclass
class FeatureBatch:
    """Samples stacked for vectorised scoring: patches (B, P, C)."""

    ids: np.ndarray
    patches: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[FeatureSample]) -> "FeatureBatch":
        if not samples:
            raise RejectedInputError("Cannot build a batch from no samples")
        shapes = {s.patches.shape for s in samples}
        if len(shapes) != 1:
            raise RejectedInputError(f"Samples have differing patch grids: {sorted(shapes)}")
        return cls(
            np.array([s.sample_id for s in samples], dtype=np.int64),
            np.stack([s.patches for s in samples]),
            np.array([s.label for s in samples], dtype=np.float64),
        )

    def __len__(self):
        return self.patches.shape[0]

    def subset(self, idx) -> "FeatureBatch":
        return FeatureBatch(self.ids[idx], self.patches[idx], self.labels[idx])

    @property
    def mean_patch(self) -> np.ndarray:
        return self.patches.mean(axis=1)

    def pooled(self, pooling: str = Pooling.MEAN) -> np.ndarray:
        """The flow input z: mean of the patches, or all patches flattened."""
        if pooling == Pooling.MEAN:
            return self.mean_patch
        if pooling == Pooling.FLATTEN:
            return self.patches.reshape(len(self), -1)
        raise RejectedInputError(f"Unknown pooling '{pooling}'")


def flow_dim(n_patches: int, n_features: int, pooling: str) -> int:
    return n_features if pooling == Pooling.MEAN else n_patches * n_features


class ScoringHeads:
    """
    head_a scores single patches, head_n the mean patch vector, head_r
    the standardised residual to the nearest prototype. gain and bias
    calibrate the global score for its training loss.
    """

    def __init__(
        self,
        n_features: int,
        flow_dim: int,
        hidden: int = 32,
        activation: str = Activation.TANH,
        rng: np.random.Generator | None = None,
    ):
        self.head_a = MLP([n_features, hidden, 1], activation, rng, zero_final=True, name="head_a")
        self.head_n = MLP([n_features, hidden, 1], activation, rng, zero_final=True, name="head_n")
        self.head_r = MLP([flow_dim, hidden, 1], activation, rng, zero_final=True, name="head_r")
        self.gain = Tensor(0.0, requires_grad=True, name="head_g.gain")
        self.bias = Tensor(0.0, requires_grad=True, name="head_g.bias")

    @property
    def n_features(self) -> int:
        return self.head_a.in_features

    @property
    def hidden(self) -> int:
        return self.head_a.sizes[1]

    def parameters(self) -> list[Tensor]:
        return (
            self.head_a.parameters()
            + self.head_n.parameters()
            + self.head_r.parameters()
            + [self.gain, self.bias]
        )

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for p in self.parameters():
            if p.name not in state or state[p.name].shape != p.shape:
                raise RejectedInputError(f"Missing or misshaped head parameter {p.name}")
            p.data = np.array(state[p.name], dtype=p.data.dtype)


def top_count(o_fraction: float, n_patches: int) -> int:
    if not 0 < o_fraction <= 1:
        raise RejectedInputError(f"o_fraction must be in (0, 1], got {o_fraction}")
    # rounding first keeps 0.3 * 10 at 3
    return max(1, math.ceil(round(o_fraction * n_patches, 9)))


# region batch scores, differentiable
def global_scores(model: FlowModel, z) -> Tensor:
    """-log p_GM(psi(z)) per row."""
    return -model.prototype.log_prob(push_forward_psi(model, z))


def local_scores(heads: ScoringHeads, patches, o_fraction: float) -> Tensor:
    """Mean of the O largest patch scores per sample."""
    patches = as_tensor(patches)
    if patches.ndim != 3 or patches.shape[1] == 0:
        raise RejectedInputError(f"Expected a (B, P, C) patch array, got shape {patches.shape}")
    n, p, c = patches.shape
    scores = reshape(heads.head_a(reshape(patches, (n * p, c))), (n, p))
    o = top_count(o_fraction, p)
    top = np.argsort(-scores.data, axis=1, kind="stable")[:, :o]
    return take_along_axis(scores, top, axis=1).mean(axis=1)


def normal_scores(heads: ScoringHeads, mean_patch) -> Tensor:
    out = heads.head_n(mean_patch)
    return reshape(out, out.shape[:-1])


def residual_scores(model: FlowModel, heads: ScoringHeads, y) -> Tensor:
    """head_r((y - mu_c*) / s) with c* the most probable component of y."""
    proto = model.prototype
    nearest = proto.assign(as_tensor(y).detach())
    residual = (as_tensor(y) - take(proto.means, np.atleast_1d(nearest))) / proto.std_param
    out = heads.head_r(residual)
    return reshape(out, out.shape[:-1])


# endregion


@dataclass
class ScoreBreakdown:
    sample_id: int
    S_g: float
    S_a: float
    S_n: float
    S_r: float
    S: float
    label: int | None = None

    @classmethod
    def combine(cls, sample_id, s_g, s_a, s_n, s_r, label=None) -> "ScoreBreakdown":
        return cls(sample_id, s_g, s_a, s_n, s_r, s_g + s_a + s_r - s_n, label)

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "S_g": self.S_g,
            "S_a": self.S_a,
            "S_n": self.S_n,
            "S_r": self.S_r,
            "S": self.S,
            "label": self.label,
        }


def score_batch(
    model: FlowModel,
    heads: ScoringHeads,
    batch: FeatureBatch,
    o_fraction: float = 0.10,
    pooling: str = Pooling.MEAN,
    disabled: Iterable[str] = (),
) -> list[ScoreBreakdown]:
    disabled = set(disabled)
    n = len(batch)
    zeros = np.zeros(n)
    need_psi = Term.GLOBAL not in disabled or Term.RESIDUAL not in disabled
    y = push_forward_psi(model, batch.pooled(pooling)).detach() if need_psi else None

    s_g = zeros if Term.GLOBAL in disabled else -model.prototype.log_prob(y).data
    s_a = zeros if Term.LOCAL in disabled else local_scores(heads, batch.patches, o_fraction).data
    s_n = zeros if Term.NORMAL in disabled else normal_scores(heads, batch.mean_patch).data
    s_r = zeros if Term.RESIDUAL in disabled else residual_scores(model, heads, y).data
    return [
        ScoreBreakdown.combine(
            int(batch.ids[i]),
            float(s_g[i]),
            float(s_a[i]),
            float(s_n[i]),
            float(s_r[i]),
            int(batch.labels[i]),
        )
        for i in range(n)
    ]


def _single(sample: FeatureSample) -> FeatureBatch:
    return FeatureBatch.from_samples([sample])


def score_global(model: FlowModel, sample: FeatureSample, pooling: str = Pooling.MEAN) -> float:
    return float(global_scores(model, _single(sample).pooled(pooling)).data[0])


def score_local(heads: ScoringHeads, sample: FeatureSample, o_fraction: float = 0.10) -> float:
    return float(local_scores(heads, sample.patches[None], o_fraction).data[0])


def score_normal(heads: ScoringHeads, sample: FeatureSample) -> float:
    return float(normal_scores(heads, sample.pooled[None]).data[0])


def score_residual(
    model: FlowModel, heads: ScoringHeads, sample: FeatureSample, pooling: str = Pooling.MEAN
) -> float:
    y = push_forward_psi(model, _single(sample).pooled(pooling)).detach()
    return float(residual_scores(model, heads, y).data[0])


def combined_score(
    model: FlowModel,
    heads: ScoringHeads,
    sample: FeatureSample,
    o_fraction: float = 0.10,
    pooling: str = Pooling.MEAN,
    disabled: Iterable[str] = (),
) -> ScoreBreakdown:
    return score_batch(model, heads, _single(sample), o_fraction, pooling, disabled)[0]


def _check_labels(raw: Tensor, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.float64)
    if not np.all((labels == 0) | (labels == 1)):
        raise RejectedInputError("Labels must be 0 or 1")
    if labels.shape != raw.shape and labels.size != 1:
        raise RejectedInputError(f"Got {labels.size} labels for scores of shape {raw.shape}")
    return labels


def binary_score_loss(raw, labels) -> Tensor:
    """Logistic loss softplus(raw) - y * raw, averaged over the batch."""
    raw = as_tensor(raw)
    labels = _check_labels(raw, labels)
    return (softplus(raw) - labels * raw).mean()


def deviation_loss(raw, labels, margin: float = 5.0) -> Tensor:
    """
    Deviation loss against a standard normal reference score: normals
    are pulled to the reference mean, anomalies pushed at least `margin`
    reference deviations above it.
    """
    raw = as_tensor(raw)
    labels = _check_labels(raw, labels)
    return ((1.0 - labels) * tabs(raw) + labels * maximum(margin - raw, 0.0)).mean()


def write_score_file(path: str, scores: Iterable[ScoreBreakdown]):
    with open(path, "w", encoding="utf-8") as f:
        f.write("sample_id,S_g,S_a,S_n,S_r,S,label\n")
        for s in scores:
            label = "" if s.label is None else str(s.label)
            values = ",".join(format(v, ".17g") for v in (s.S_g, s.S_a, s.S_n, s.S_r, s.S))
            f.write(f"{s.sample_id},{values},{label}\n")


def read_score_file(path: str) -> list[ScoreBreakdown]:
    out = []
    with open(path, encoding="utf-8") as f:
        next(f)
        for line in f:
            sid, s_g, s_a, s_n, s_r, s, label = line.rstrip("\n").split(",")
            out.append(
                ScoreBreakdown(
                    int(sid), float(s_g), float(s_a), float(s_n), float(s_r), float(s),
                    int(label) if label else None,
                )
            )
    return out
