# cli.py
#
# Copyright 2026 The mpfm contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

import argparse
import os
import sys

import numpy as np

from mpfm.backend.checks import InvariantChecker
from mpfm.backend.flow.prototype import log_density, sample_prior
from mpfm.backend.flow.sampler import sample_reverse_trajectory
from mpfm.backend.logger import Logger
from mpfm.backend.managers import data as data_io
from mpfm.backend.managers.data import DataManager
from mpfm.backend.managers.experiment import run_experiment
from mpfm.backend.managers.journal import MetricsJournal
from mpfm.backend.managers.snapshot import SnapshotManager
from mpfm.backend.managers.trainer import TrainManager
from mpfm.backend.models.config import ModeFlags, RunConfig
from mpfm.backend.models.errors import (
    ConfigError,
    ExperimentError,
    FormatVersionError,
    NumericFaultError,
)
from mpfm.backend.models.samples import Samples
from mpfm.backend.nn.tensor import set_precision
from mpfm.backend.params import APP_NAME, APP_VERSION
from mpfm.backend.scoring.heads import score_batch, write_score_file
from mpfm.backend.utils import json, yaml
from mpfm.backend.utils.metrics import roc_auc
from mpfm.backend.utils.rng import make_rng

logging = Logger()


class ExitCode:
    SUCCESS = 0
    FAILURE = 1
    CONFIG = 2
    NUMERIC = 3


def parse_mode(text: str) -> tuple[str, bool]:
    """'name' or 'name=bool' as used by --mode."""
    name, sep, value = text.partition("=")
    if name not in ModeFlags.__dataclass_fields__:
        raise ConfigError(f"Unknown mode '{name}'")
    if not sep:
        return name, True
    if value.lower() in ("1", "true", "yes", "on"):
        return name, True
    if value.lower() in ("0", "false", "no", "off"):
        return name, False
    raise ConfigError(f"Mode '{name}' expects a boolean, got '{value}'")


class CLI:
    def __init__(self, argv: list[str] | None = None):
        self.argv = argv
        self.parser = argparse.ArgumentParser(
            prog=APP_NAME,
            description="Mixture prototype flow matching for open-set anomaly detection",
        )
        self.parser.add_argument(
            "-v", "--version", action="version", version=f"{APP_NAME} {APP_VERSION}"
        )
        self.parser.add_argument(
            "-j", "--json", action="store_true", help="Outputs in JSON format"
        )

        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", help="Path to a YAML run configuration")
        common.add_argument(
            "--preset", choices=sorted(Samples.presets), help="Start from a built-in configuration"
        )
        common.add_argument("--seed", type=int, help="Override the run seed")
        common.add_argument("--repeat", type=int, help="Override the number of seeds")
        common.add_argument("--out", help="Override the output directory")
        common.add_argument(
            "--mode",
            action="append",
            default=[],
            metavar="NAME[=BOOL]",
            help="Switch a mode flag (e.g. '--mode batch_marginal_mimr')",
        )

        subparsers = self.parser.add_subparsers(dest="command", help="sub-command help")

        subparsers.add_parser("gen-data", parents=[common], help="Generate the synthetic splits")
        subparsers.add_parser("train", parents=[common], help="Train a model")

        score_parser = subparsers.add_parser("score", parents=[common], help="Score a dataset")
        score_parser.add_argument("--model", help="Model snapshot (.npz)")
        score_parser.add_argument("--data", help="Dataset file to score, default the test split")

        subparsers.add_parser(
            "eval", parents=[common], help="Train, score and report AUC over seeds and sweeps"
        )

        sample_parser = subparsers.add_parser(
            "sample", parents=[common], help="Draw reverse-time samples from a model"
        )
        sample_parser.add_argument("--model", help="Model snapshot (.npz)")
        sample_parser.add_argument("--count", type=int, default=100, help="Number of samples")
        sample_parser.add_argument("--steps", type=int, default=10, help="Reverse steps")

        subparsers.add_parser("check", parents=[common], help="Run the invariant suite")

    def run(self) -> int:
        self.args = self.parser.parse_args(self.argv)
        if self.args.json:
            logging.set_silent()
        try:
            return self.__process_args()
        except ConfigError as e:
            logging.error(f"Configuration error: {e}")
            return ExitCode.CONFIG
        except NumericFaultError as e:
            logging.error(f"Numeric fault: {e}")
            return ExitCode.NUMERIC
        except ExperimentError as e:
            logging.error(str(e))
            if isinstance(e.cause, ConfigError):
                return ExitCode.CONFIG
            if isinstance(e.cause, NumericFaultError):
                return ExitCode.NUMERIC
            return ExitCode.FAILURE
        except (OSError, ValueError, FormatVersionError) as e:
            logging.error(str(e))
            return ExitCode.FAILURE

    def __process_args(self) -> int:
        # GEN-DATA parser
        if self.args.command == "gen-data":
            return self.generate_data()

        # TRAIN parser
        elif self.args.command == "train":
            return self.train()

        # SCORE parser
        elif self.args.command == "score":
            return self.score()

        # EVAL parser
        elif self.args.command == "eval":
            return self.evaluate()

        # SAMPLE parser
        elif self.args.command == "sample":
            return self.sample()

        # CHECK parser
        elif self.args.command == "check":
            return self.check()

        self.parser.print_help()
        return ExitCode.SUCCESS

    # region helpers
    def load_config(self) -> RunConfig:
        if self.args.config:
            result = RunConfig.load(self.args.config)
        elif self.args.preset:
            result = RunConfig.from_dict(Samples.presets[self.args.preset])
        else:
            result = RunConfig.from_dict({})
        config = result.unwrap()

        if self.args.seed is not None:
            config.seed = self.args.seed
        if self.args.repeat is not None:
            config.repeat = self.args.repeat
        if self.args.out:
            config.paths.out_dir = self.args.out
        for text in self.args.mode:
            name, value = parse_mode(text)
            config.modes[name] = value
        config.validate()
        set_precision(config.train.precision)
        return config

    def write(self, data, plain: str | None = None):
        if self.args.json:
            sys.stdout.write(json.dumps(data) + "\n")
        else:
            sys.stdout.write(plain if plain is not None else yaml.dump(data, sort_keys=False, indent=4))

    # endregion

    # region GEN-DATA
    def generate_data(self) -> int:
        config = self.load_config()
        manager = DataManager(config.for_seed()[1])
        paths = manager.write(os.path.join(config.paths.out_dir, "data"), data_io.generate(manager.spec))
        self.write({"files": paths}, "".join(f"{p}\n" for p in paths))
        return ExitCode.SUCCESS

    # endregion

    # region TRAIN
    def train(self) -> int:
        config = self.load_config()
        train_config, data_spec = config.for_seed()
        train_normal, train_anomaly, _ = DataManager(data_spec, config.paths.data_dir).get()
        run_dir = config.paths.out_dir
        with MetricsJournal(os.path.join(run_dir, "metrics.jsonl")) as journal:
            result = TrainManager(train_config, config.modes, run_dir, journal).train(
                train_normal.as_batch(), train_anomaly.as_batch()
            )
        path = SnapshotManager.save(os.path.join(run_dir, "model.npz"), result.model, result.heads)
        final = result.metrics[-1]["total"] if result.metrics else None
        self.write(
            {"model": path, "steps": len(result.metrics), "final_loss": final},
            f"Model saved to {path}\n",
        )
        return ExitCode.SUCCESS

    # endregion

    # region SCORE
    def _load_model(self, config: RunConfig):
        path = self.args.model or config.paths.model
        if not path:
            raise ConfigError("No model given, pass --model or set paths.model")
        return SnapshotManager.try_load(path).unwrap()

    def score(self) -> int:
        config = self.load_config()
        model, heads = self._load_model(config)
        if self.args.data:
            dataset = data_io.load(self.args.data)
        else:
            dataset = DataManager(config.for_seed()[1], config.paths.data_dir).get()[2]

        scores = score_batch(
            model,
            heads,
            dataset.as_batch(),
            config.train.o_fraction,
            config.train.pooling,
            config.train.disabled_terms,
        )
        os.makedirs(config.paths.out_dir, exist_ok=True)
        path = os.path.join(config.paths.out_dir, "scores.csv")
        write_score_file(path, scores)

        labels = dataset.labels
        auc = roc_auc([s.S for s in scores], labels) if 0 < labels.sum() < labels.size else None
        self.write({"scores": path, "count": len(scores), "auc": auc})
        return ExitCode.SUCCESS

    # endregion

    # region EVAL
    def evaluate(self) -> int:
        config = self.load_config()
        reports = run_experiment(config)
        data = [r.to_dict() for r in reports]
        self.write(data if len(data) > 1 else data[0])
        return ExitCode.SUCCESS

    # endregion

    # region SAMPLE
    def sample(self) -> int:
        config = self.load_config()
        model, _ = self._load_model(config)
        if self.args.count < 1 or self.args.steps < 1:
            raise ConfigError("--count and --steps must be >= 1")
        rng = make_rng(config.seed, 3)
        start = sample_prior(model.prototype, rng, self.args.count)
        samples = sample_reverse_trajectory(model, start, self.args.steps, rng)

        os.makedirs(config.paths.out_dir, exist_ok=True)
        path = os.path.join(config.paths.out_dir, "samples.csv")
        header = ",".join(f"f{i}" for i in range(model.dim))
        np.savetxt(path, samples, fmt="%.17g", delimiter=",", header=header, comments="")
        self.write(
            {
                "samples": path,
                "count": int(samples.shape[0]),
                "mean_prototype_log_density": float(np.mean(log_density(model.prototype, samples))),
            }
        )
        return ExitCode.SUCCESS

    # endregion

    # region CHECK
    def check(self) -> int:
        config = self.load_config()
        checker = InvariantChecker(seed=config.seed)
        if self.args.json:
            sys.stdout.write(json.dumps(checker.get_results()) + "\n")
        else:
            sys.stdout.write(checker.get_results(plain=True))
        return ExitCode.SUCCESS if checker.passed else ExitCode.FAILURE

    # endregion


def main(argv: list[str] | None = None):
    sys.exit(CLI(argv).run())


if __name__ == "__main__":
    main()
