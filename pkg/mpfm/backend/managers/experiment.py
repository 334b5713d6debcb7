# experiment.py
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
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from mpfm.backend.logger import Logger
from mpfm.backend.managers.data import DataManager, Dataset
from mpfm.backend.managers.journal import MetricsJournal
from mpfm.backend.managers.snapshot import SnapshotManager
from mpfm.backend.managers.trainer import TrainManager, TrainResult
from mpfm.backend.models.config import RunConfig, TrainConfig
from mpfm.backend.models.enum import Term
from mpfm.backend.models.errors import (
    ConfigError,
    ExperimentError,
)
from mpfm.backend.scoring.heads import ScoreBreakdown, score_batch, write_score_file
from mpfm.backend.utils import yaml
from mpfm.backend.utils.metrics import roc_auc

logging = Logger()


class Stage:
    DATA = "data"
    TRAIN = "train"
    SCORE = "score"
    EVALUATE = "evaluate"
    WRITE = "write"


@dataclass
class EvalReport:
    auc: float
    auc_std: float | None
    aucs: list[float]
    untrained_auc: float
    untrained_aucs: list[float]
    head_aucs: dict[str, float | None]
    n_scores: int
    n_positive: int
    config_digest: str
    seed: int
    repeat: int
    sweep_parameter: str = ""
    sweep_value: object = None
    run_dirs: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def head_aucs(scores: list[ScoreBreakdown], disabled=()) -> dict[str, float | None]:
    """AUC of every head on its own; S_n enters the total negated, so it is ranked as -S_n."""
    labels = [s.label for s in scores]
    columns = {
        Term.GLOBAL: [s.S_g for s in scores],
        Term.LOCAL: [s.S_a for s in scores],
        Term.NORMAL: [-s.S_n for s in scores],
        Term.RESIDUAL: [s.S_r for s in scores],
    }
    return {k: None if k in disabled else roc_auc(v, labels) for k, v in columns.items()}


def _mean_std(values: list[float]) -> tuple[float, float | None]:
    mean = float(np.mean(values))
    return mean, float(np.std(values, ddof=1)) if len(values) > 1 else None


class ExperimentManager:
    """
    data -> train -> score -> evaluate -> write, repeated over seeds
    (and over sweep values when a sweep is configured). Each stage
    failure is re-raised as ExperimentError naming the stage.
    """

    def __init__(self, config: RunConfig, out_dir: str | None = None):
        self.config = config
        self.out_dir = out_dir or config.paths.out_dir

    def run(self) -> list[EvalReport]:
        sweep = self.config.sweep
        if not sweep.parameter:
            return [self.run_single(self.config, self.out_dir)]

        reports = []
        for i, value in enumerate(sweep.values):
            try:
                config = self.config.with_override(sweep.parameter, value)
            except ConfigError as e:
                raise ExperimentError(Stage.DATA, e) from e
            logging.info(f"Sweep {sweep.parameter} = {value} ({i + 1}/{len(sweep.values)})")
            report = self.run_single(config, os.path.join(self.out_dir, f"sweep-{i:02d}"))
            report.sweep_parameter, report.sweep_value = sweep.parameter, value
            reports.append(report)
        self._write(os.path.join(self.out_dir, "sweep.yaml"), [r.to_dict() for r in reports])
        return reports

    @staticmethod
    def _stage(stage: str, fn, *args):
        try:
            return fn(*args)
        except ExperimentError:
            raise
        except Exception as e:
            raise ExperimentError(stage, e) from e

    @staticmethod
    def _write(path: str, data):
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as f:
            yaml.dump(data, f, sort_keys=False, indent=4)

    def _train(self, config: RunConfig, train_config: TrainConfig, datasets, run_dir) -> TrainResult:
        train_normal, train_anomaly, _ = datasets
        journal = MetricsJournal(os.path.join(run_dir, "metrics.jsonl") if run_dir else None)
        with journal:
            manager = TrainManager(train_config, config.modes, run_dir, journal)
            return manager.train(train_normal.as_batch(), train_anomaly.as_batch())

    @staticmethod
    def _score(config: TrainConfig, result: TrainResult, test: Dataset) -> list[ScoreBreakdown]:
        return score_batch(
            result.model,
            result.heads,
            test.as_batch(),
            config.o_fraction,
            config.pooling,
            config.disabled_terms,
        )

    def run_seed(self, config: RunConfig, index: int, out_dir: str) -> dict:
        seed = config.seed + index
        train_config, data_spec = config.for_seed(index)
        run_dir = os.path.join(out_dir, f"run-{seed}")

        datasets = self._stage(Stage.DATA, DataManager(data_spec, config.paths.data_dir).get)
        test = datasets[2]
        result = self._stage(Stage.TRAIN, self._train, config, train_config, datasets, run_dir)
        scores = self._stage(Stage.SCORE, self._score, train_config, result, test)

        baseline_config = replace(train_config, epochs=0)
        baseline = self._stage(Stage.TRAIN, self._train, config, baseline_config, datasets, None)
        baseline_scores = self._stage(Stage.SCORE, self._score, baseline_config, baseline, test)

        def evaluate():
            labels = [s.label for s in scores]
            return {
                "auc": roc_auc([s.S for s in scores], labels),
                "untrained_auc": roc_auc([s.S for s in baseline_scores], labels),
                "heads": head_aucs(scores, train_config.disabled_terms),
                "n_scores": len(scores),
                "n_positive": int(sum(labels)),
            }

        outcome = self._stage(Stage.EVALUATE, evaluate)

        def write():
            write_score_file(os.path.join(run_dir, "scores.csv"), scores)
            SnapshotManager.save(os.path.join(run_dir, "model.npz"), result.model, result.heads)

        self._stage(Stage.WRITE, write)
        outcome["run_dir"] = run_dir
        logging.info(
            f"Seed {seed}: AUC {outcome['auc']:.4f} (untrained {outcome['untrained_auc']:.4f})"
        )
        return outcome

    def run_single(self, config: RunConfig, out_dir: str) -> EvalReport:
        outcomes = [self.run_seed(config, i, out_dir) for i in range(config.repeat)]

        auc, auc_std = _mean_std([o["auc"] for o in outcomes])
        heads: dict[str, float | None] = {}
        for name in outcomes[0]["heads"]:
            values = [o["heads"][name] for o in outcomes]
            heads[name] = None if values[0] is None else float(np.mean(values))

        report = EvalReport(
            auc=auc,
            auc_std=auc_std,
            aucs=[o["auc"] for o in outcomes],
            untrained_auc=float(np.mean([o["untrained_auc"] for o in outcomes])),
            untrained_aucs=[o["untrained_auc"] for o in outcomes],
            head_aucs=heads,
            n_scores=outcomes[0]["n_scores"],
            n_positive=outcomes[0]["n_positive"],
            config_digest=config.digest(),
            seed=config.seed,
            repeat=config.repeat,
            run_dirs=[o["run_dir"] for o in outcomes],
        )
        self._stage(Stage.WRITE, self._write, os.path.join(out_dir, "report.yaml"), report.to_dict())
        return report


def run_experiment(config: RunConfig, out_dir: str | None = None) -> list[EvalReport]:
    return ExperimentManager(config, out_dir).run()
