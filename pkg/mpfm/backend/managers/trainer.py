# trainer.py
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

import os
import traceback
from dataclasses import dataclass, field

import numpy as np

from mpfm.backend.flow.field import (
    FlowModel,
    FlowSettings,
    data_scales,
    draw_time,
    loss_flow_anomaly,
    loss_flow_normal,
    push_forward_psi,
)
from mpfm.backend.flow.mimr import mimr_loss
from mpfm.backend.flow.prototype import kmeanspp_init
from mpfm.backend.logger import Logger
from mpfm.backend.managers.journal import MetricsJournal
from mpfm.backend.managers.snapshot import SnapshotManager
from mpfm.backend.models.config import ModeFlags, TrainConfig
from mpfm.backend.models.enum import BinaryLoss, Term
from mpfm.backend.models.errors import NumericFaultError, RejectedInputError
from mpfm.backend.nn.optim import AdamW
from mpfm.backend.nn.tensor import Tensor, backward, concat, set_precision
from mpfm.backend.scoring.heads import (
    FeatureBatch,
    ScoringHeads,
    binary_score_loss,
    deviation_loss,
    flow_dim,
    local_scores,
    normal_scores,
    residual_scores,
)
from mpfm.backend.utils.rng import make_rng

logging = Logger()

# rng stream ids under the training seed
_STREAM_INIT = 1
_STREAM_STEP = 2


@dataclass
class TrainState:
    model: FlowModel
    heads: ScoringHeads
    optimizer: AdamW
    config: TrainConfig
    modes: ModeFlags = field(default_factory=ModeFlags)
    step: int = 0
    history: list[dict] = field(default_factory=list)

    @property
    def parameters(self) -> list[Tensor]:
        return self.optimizer.params


@dataclass
class LossReport:
    terms: dict[str, float]
    mi_estimate: float | None
    usage: list[float]

    @property
    def total(self) -> float:
        return self.terms["total"]

    def to_dict(self) -> dict:
        return {**self.terms, "mi_estimate": self.mi_estimate, "usage": self.usage}


def build_state(
    config: TrainConfig,
    normal: FeatureBatch,
    modes: ModeFlags | None = None,
) -> TrainState:
    """k-means++ prototype on the pooled normals, fresh networks and optimizer."""
    modes = modes or ModeFlags()
    set_precision(config.precision)
    pooled = normal.pooled(config.pooling)
    prototype = kmeanspp_init(
        pooled,
        config.n_components,
        seed=config.seed,
        max_iter=config.kmeans_max_iter,
        tol=config.kmeans_tol,
        learn_weights=modes.learn_mixture_weights,
        learn_std=modes.learn_std,
    )
    settings = FlowSettings(
        psi_steps=config.psi_steps,
        one_step_psi=modes.one_step_psi,
        t_min=config.t_min,
        endpoint_source=config.endpoint_source,
        repulsion_clip=config.repulsion_clip,
        per_sample_t=modes.per_sample_t,
        **(data_scales(pooled) if config.precondition else {}),
    )
    rng = make_rng(config.seed, _STREAM_INIT)
    model = FlowModel.create(prototype, config.hidden_sizes, config.activation, rng, settings)
    _, n_patches, n_features = normal.patches.shape
    heads = ScoringHeads(
        n_features,
        flow_dim(n_patches, n_features, config.pooling),
        config.head_hidden,
        config.activation,
        rng,
    )
    optimizer = AdamW(
        [
            {"params": model.net.parameters() + heads.parameters()},
            {"params": prototype.parameters(), "weight_decay": 0.0},
        ],
        lr=config.learning_rate,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    return TrainState(model, heads, optimizer, config, modes)


def _binary(config: TrainConfig, raw: Tensor, labels) -> Tensor:
    if config.binary_loss == BinaryLoss.DEVIATION:
        return deviation_loss(raw, labels, config.deviation_margin)
    return binary_score_loss(raw, labels)


def total_loss(
    state: TrainState,
    normal: FeatureBatch,
    anomaly: FeatureBatch,
    rng: np.random.Generator,
) -> tuple[Tensor, LossReport]:
    """
    Sum of the flow losses, the four scoring-head losses and lambda times
    the MI regularizer. Disabled terms are left out of the sum and
    reported as zero.
    """
    if len(normal) == 0:
        raise RejectedInputError("The normal batch is empty")
    if len(anomaly) == 0:
        raise RejectedInputError("The anomaly batch is empty")
    config, modes, model, heads = state.config, state.modes, state.model, state.heads
    z_n, z_a = normal.pooled(config.pooling), anomaly.pooled(config.pooling)
    labels = np.concatenate([normal.labels, anomaly.labels])
    n_normal = len(normal)

    terms: dict[str, Tensor] = {}
    if config.enabled(Term.FLOW):
        # one t per batch unless per-sample t is on, shared by both streams
        t = draw_time(rng, n_normal + len(anomaly), config.t_min, modes.per_sample_t)
        terms["flow_normal"] = loss_flow_normal(model, z_n, rng, t=t[:n_normal])
        terms["flow_anomaly"] = loss_flow_anomaly(model, z_a, rng, t=t[n_normal:])

    needs_psi = any(config.enabled(x) for x in (Term.GLOBAL, Term.RESIDUAL, Term.MIMR))
    y = push_forward_psi(model, concat([z_n, z_a], axis=0)) if needs_psi else None

    mimr = None
    if config.enabled(Term.MIMR):
        mimr = mimr_loss(
            model.prototype,
            y[:n_normal],
            literal=modes.literal_mimr_sign,
            batch_marginal=modes.batch_marginal_mimr,
        )
        terms["mimr"] = mimr.loss
    if config.enabled(Term.GLOBAL):
        s_g = -model.prototype.log_prob(y)
        terms["g"] = _binary(config, heads.gain * s_g + heads.bias, labels)
    if config.enabled(Term.LOCAL):
        patches = np.concatenate([normal.patches, anomaly.patches])
        terms["a"] = _binary(config, local_scores(heads, patches, config.o_fraction), labels)
    if config.enabled(Term.NORMAL):
        mean_patch = np.concatenate([normal.mean_patch, anomaly.mean_patch])
        terms["n"] = _binary(config, normal_scores(heads, mean_patch), 1.0 - labels)
    if config.enabled(Term.RESIDUAL):
        terms["r"] = _binary(config, residual_scores(model, heads, y), labels)

    total: Tensor | None = None
    for name, value in terms.items():
        value = config.lambda_mim * value if name == "mimr" else value
        total = value if total is None else total + value
    if total is None:
        raise RejectedInputError("Every loss term is disabled")

    report = {name: 0.0 for name in ("flow_normal", "flow_anomaly", "mimr", "g", "a", "n", "r")}
    report.update({name: value.item() for name, value in terms.items()})
    report["total"] = total.item()
    return total, LossReport(
        report,
        mimr.mi_estimate if mimr is not None else None,
        mimr.usage.tolist() if mimr is not None else [],
    )


def optimizer_step(state: TrainState, gradients: list[np.ndarray]) -> TrainState:
    """One AdamW update; the state is left untouched on a non-finite gradient."""
    state.optimizer.step(gradients)
    state.model.prototype.project()
    state.step += 1
    return state


@dataclass
class TrainResult:
    model: FlowModel
    heads: ScoringHeads
    metrics: list[dict]


class TrainManager:
    """
    Runs the fixed epochs x iterations budget over resampled batches.
    Normals are drawn without replacement within a batch, anomalies with
    replacement so a single labelled anomaly still fills its stream.
    """

    def __init__(
        self,
        config: TrainConfig,
        modes: ModeFlags | None = None,
        run_dir: str | None = None,
        journal: MetricsJournal | None = None,
    ):
        self.config = config
        self.modes = modes or ModeFlags()
        self.run_dir = run_dir
        self.journal = journal or MetricsJournal()

    def _batches(self, rng, n_normal: int, n_anomaly: int) -> tuple[np.ndarray, np.ndarray]:
        size = min(self.config.normal_batch, n_normal)
        normal_idx = np.sort(rng.choice(n_normal, size=size, replace=False))
        anomaly_idx = rng.integers(n_anomaly, size=self.config.anomaly_batch)
        return normal_idx, anomaly_idx

    def _save(self, state: TrainState, name: str) -> str | None:
        if not self.run_dir:
            return None
        return SnapshotManager.save(os.path.join(self.run_dir, name), state.model, state.heads)

    def train(self, normal: FeatureBatch, anomaly: FeatureBatch) -> TrainResult:
        config = self.config
        if len(anomaly) < 1:
            raise RejectedInputError("Training needs at least one labelled anomaly")
        state = build_state(config, normal, self.modes)
        params = state.parameters
        logging.info(
            f"Training K={config.n_components} on {len(normal)} normals and {len(anomaly)} "
            f"anomalies for {config.epochs}x{config.iterations} steps"
        )

        for epoch in range(config.epochs):
            epoch_totals, epoch_mi = [], []
            for _ in range(config.iterations):
                rng = make_rng(config.seed, _STREAM_STEP, state.step)
                normal_idx, anomaly_idx = self._batches(rng, len(normal), len(anomaly))
                try:
                    loss, report = total_loss(
                        state, normal.subset(normal_idx), anomaly.subset(anomaly_idx), rng
                    )
                    optimizer_step(state, backward(loss, params))
                except NumericFaultError as e:
                    self._abort(state, e)
                    raise

                entry = {"step": state.step, "epoch": epoch, **report.to_dict()}
                state.history.append(entry)
                self.journal.record(entry)
                epoch_totals.append(report.total)
                if report.mi_estimate is not None:
                    epoch_mi.append(report.mi_estimate)

                if config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
                    self._save(state, f"checkpoint-{state.step:06d}.npz")

            mi = f", MI {np.mean(epoch_mi):.4f}" if epoch_mi else ""
            logging.info(f"Epoch {epoch + 1}/{config.epochs}: loss {np.mean(epoch_totals):.4f}{mi}")
            self.journal.flush()

        return TrainResult(state.model, state.heads, state.history)

    def _abort(self, state: TrainState, error: NumericFaultError):
        logging.error(f"Training diverged at step {state.step}: {error}")
        path = self._save(state, "last-valid.npz")
        if path:
            logging.error(f"Last valid state saved to {path}")
        if self.run_dir:
            Logger.write_log(traceback.format_exception(error), self.run_dir)


def train(
    config: TrainConfig,
    normal: FeatureBatch,
    anomaly: FeatureBatch,
    modes: ModeFlags | None = None,
    run_dir: str | None = None,
    journal: MetricsJournal | None = None,
) -> TrainResult:
    return TrainManager(config, modes, run_dir, journal).train(normal, anomaly)
