import dataclasses
import hashlib
import inspect
import logging
import os
import typing
from collections.abc import Container, ItemsView
from dataclasses import asdict, dataclass, field, is_dataclass, replace
from io import IOBase
from typing import IO, Optional

from mpfm.backend.models.enum import (
    Activation,
    BinaryLoss,
    EndpointSource,
    Pooling,
    Precision,
    Term,
    UnseenKind,
)
from mpfm.backend.models.errors import ConfigError
from mpfm.backend.models.result import Result
from mpfm.backend.utils import yaml


# noinspection PyDataclass
class DictCompatMixIn:
    """Mapping-style access on config dataclasses."""

    @staticmethod
    def yaml_serialize_handler(dumper, data):
        return dumper.represent_dict(data.to_dict())

    def to_dict(self) -> dict:
        return asdict(self)

    def items(self) -> ItemsView[str, Container]:
        return self.to_dict().items()

    def get(self, key, default=None):
        return getattr(self, key, default)

    def __iter__(self):
        return iter(self.__dict__)

    def __getitem__(self, item):
        return getattr(self, item)

    def __setitem__(self, key, value):
        setattr(self, key, value)


def _require(condition: bool, message: str):
    if not condition:
        raise ConfigError(message)


@dataclass
class TrainConfig(DictCompatMixIn):
    n_components: int = 32
    lambda_mim: float = 0.1
    o_fraction: float = 0.10
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    eps: float = 1e-8
    epochs: int = 50
    iterations: int = 20
    normal_batch: int = 32
    anomaly_batch: int = 32
    seed: int = 0
    hidden_sizes: list[int] = field(default_factory=lambda: [64, 64])
    head_hidden: int = 32
    activation: str = Activation.TANH
    psi_steps: int = 8
    repulsion_clip: float = 50.0
    t_min: float = 1e-3
    precision: str = Precision.FLOAT64
    endpoint_source: str = EndpointSource.PRIOR
    binary_loss: str = BinaryLoss.LOGISTIC
    deviation_margin: float = 5.0
    pooling: str = Pooling.MEAN
    precondition: bool = True
    disabled_terms: list[str] = field(default_factory=list)
    kmeans_max_iter: int = 100
    kmeans_tol: float = 1e-8
    checkpoint_interval: int = 0

    def validate(self):
        _require(self.n_components >= 1, "n_components must be >= 1")
        _require(self.lambda_mim >= 0, "lambda_mim must be >= 0")
        _require(0 < self.o_fraction <= 1, "o_fraction must be in (0, 1]")
        _require(self.learning_rate > 0, "learning_rate must be positive")
        _require(self.weight_decay >= 0, "weight_decay must be >= 0")
        _require(len(self.betas) == 2, "betas needs exactly two values")
        _require(all(0 <= b < 1 for b in self.betas), "betas must be in [0, 1)")
        _require(self.eps > 0, "eps must be positive")
        _require(self.epochs >= 0 and self.iterations >= 1, "invalid step budget")
        _require(self.normal_batch >= 1, "normal_batch must be >= 1")
        _require(self.anomaly_batch >= 1, "anomaly_batch must be >= 1")
        _require(all(h >= 1 for h in self.hidden_sizes), "hidden sizes must be >= 1")
        _require(self.head_hidden >= 1, "head_hidden must be >= 1")
        _require(self.psi_steps >= 1, "psi_steps must be >= 1")
        _require(self.repulsion_clip > 0, "repulsion_clip must be positive")
        _require(0 < self.t_min < 1, "t_min must be in (0, 1)")
        _require(
            self.activation in (Activation.TANH, Activation.RELU),
            f"unknown activation '{self.activation}'",
        )
        _require(
            self.precision in (Precision.FLOAT64, Precision.FLOAT32),
            f"unknown precision '{self.precision}'",
        )
        _require(
            self.endpoint_source
            in (
                EndpointSource.PRIOR,
                EndpointSource.NOISE,
                EndpointSource.PROTOTYPE_MEAN,
            ),
            f"unknown endpoint_source '{self.endpoint_source}'",
        )
        _require(
            self.binary_loss in (BinaryLoss.LOGISTIC, BinaryLoss.DEVIATION),
            f"unknown binary_loss '{self.binary_loss}'",
        )
        _require(
            self.pooling in (Pooling.MEAN, Pooling.FLATTEN),
            f"unknown pooling '{self.pooling}'",
        )
        for term in self.disabled_terms:
            _require(term in Term.ALL, f"unknown disabled term '{term}'")
        _require(self.checkpoint_interval >= 0, "checkpoint_interval must be >= 0")

    def enabled(self, term: str) -> bool:
        return term not in self.disabled_terms


@dataclass
class SyntheticSpec(DictCompatMixIn):
    feature_dim: int = 8
    n_patches: int = 16
    n_modes: int = 4
    mode_distance: float = 10.0
    mode_spread: float = 1.0
    anomalous_patch_fraction: float = 0.25
    seen_axis: int = -1
    seen_magnitude: float = 8.0
    unseen_kind: str = UnseenKind.TWO_SIDED_OFFSET
    unseen_axis: int = -2
    unseen_magnitude: float = 16.0
    seen_kind_in_test: bool = False
    # share of unseen test anomalies drawn between the normal modes
    mode_gap_fraction: float = 0.25
    n_train_normal: int = 2000
    n_train_anomaly: int = 10
    n_test_normal: int = 500
    n_test_anomaly: int = 100
    seed: int = 0

    def validate(self):
        c = self.feature_dim
        _require(c >= 1 and self.n_patches >= 1, "feature_dim and n_patches must be >= 1")
        _require(self.n_modes >= 1, "n_modes must be >= 1")
        _require(self.mode_spread >= 0, "mode_spread must be >= 0")
        _require(
            self.n_modes == 1 or self.mode_distance >= 6 * self.mode_spread,
            "modes must be separated by at least 6x their spread",
        )
        _require(self.mode_distance > 0, "mode_distance must be positive")
        _require(
            0 < self.anomalous_patch_fraction <= 1,
            "anomalous_patch_fraction must be in (0, 1]",
        )
        _require(-c <= self.seen_axis < c, "seen_axis out of range")
        _require(-c <= self.unseen_axis < c, "unseen_axis out of range")
        seen, unseen = self.seen_axis % c, self.unseen_axis % c
        _require(seen != unseen, "seen and unseen generators must be disjoint")
        _require(
            seen >= self.n_modes and unseen >= self.n_modes,
            "anomaly axes must not coincide with mode axes",
        )
        _require(
            self.unseen_kind
            in (UnseenKind.HELD_OUT_MODE, UnseenKind.LARGE_OFFSET, UnseenKind.TWO_SIDED_OFFSET),
            f"unknown unseen_kind '{self.unseen_kind}'",
        )
        if self.unseen_kind == UnseenKind.TWO_SIDED_OFFSET:
            _require(self.n_patches >= 2, "two_sided_offset needs at least two patches")
            _require(
                self.unseen_magnitude != self.seen_magnitude,
                "two_sided_offset magnitude must differ from the seen one",
            )
        _require(0 <= self.mode_gap_fraction <= 1, "mode_gap_fraction must be in [0, 1]")
        _require(
            self.mode_gap_fraction == 0 or self.n_modes >= 2,
            "mode_gap_fraction needs at least two modes",
        )
        _require(self.n_train_normal >= 0 and self.n_train_anomaly >= 0, "negative count")
        _require(self.n_test_normal >= 0 and self.n_test_anomaly >= 0, "negative count")


@dataclass
class ModeFlags(DictCompatMixIn):
    literal_mimr_sign: bool = False
    batch_marginal_mimr: bool = False
    per_sample_t: bool = False
    one_step_psi: bool = False
    learn_mixture_weights: bool = False
    learn_std: bool = False


@dataclass
class PathsConfig(DictCompatMixIn):
    data_dir: str = ""
    out_dir: str = "runs/default"
    model: str = ""


@dataclass
class SweepConfig(DictCompatMixIn):
    parameter: str = ""  # dotted, e.g. "train.lambda_mim" or "data.n_train_anomaly"
    values: list = field(default_factory=list)

    def validate(self):
        if not self.parameter:
            return
        section, _, name = self.parameter.partition(".")
        _require(section in ("train", "data"), "sweep parameter must start with train. or data.")
        owner = TrainConfig if section == "train" else SyntheticSpec
        _require(
            name in inspect.signature(owner).parameters,
            f"unknown sweep parameter '{self.parameter}'",
        )
        _require(len(self.values) >= 1, "sweep needs at least one value")


@dataclass
class RunConfig(DictCompatMixIn):
    name: str = "mpfm"
    seed: int = 0
    repeat: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    modes: ModeFlags = field(default_factory=ModeFlags)
    paths: PathsConfig = field(default_factory=PathsConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def validate(self) -> "RunConfig":
        _require(self.repeat >= 1, "repeat must be >= 1")
        self.train.validate()
        self.data.validate()
        self.sweep.validate()
        return self

    def for_seed(self, index: int = 0) -> tuple[TrainConfig, SyntheticSpec]:
        """Train and data sections with the run seed (plus index) folded in."""
        seed = self.seed + index
        return (
            replace(self.train, seed=self.train.seed + seed),
            replace(self.data, seed=self.data.seed + seed),
        )

    def with_override(self, parameter: str, value) -> "RunConfig":
        """Validated copy with one dotted train.x or data.x field replaced."""
        section, _, name = parameter.partition(".")
        owner = {"train": TrainConfig, "data": SyntheticSpec}.get(section)
        if owner is None or name not in {f.name for f in dataclasses.fields(owner)}:
            raise ConfigError(f"Unknown parameter '{parameter}'")
        coerced = _coerce(value, typing.get_type_hints(owner)[name], parameter)
        part = replace(getattr(self, section), **{name: coerced})
        return replace(self, **{section: part}).validate()

    def digest(self) -> str:
        """SHA-256 of the canonical YAML dump."""
        text = yaml.dump(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def dump(self, file: str | IO, mode="w", encoding=None, indent=4) -> Result:
        """
        Dump config to file

        :param file: filepath str or IO-like object.
        :param mode: when param 'file' is filepath, use this mode to open file, otherwise ignored.
               default is 'w'
        :param encoding: file content encoding, default is None(Decide by Python IO)
        :param indent: file indent width, default is 4
        """
        f = file if isinstance(file, IOBase) else open(file, mode=mode)
        try:
            yaml.dump(self.to_dict(), f, indent=indent, encoding=encoding, sort_keys=False)
            return Result(True)
        except Exception as e:
            logging.exception(e)
            return Result(False, message=str(e), error=type(e))
        finally:
            f.close()

    @classmethod
    def load(cls, file: str | IO, mode="r") -> Result[Optional["RunConfig"]]:
        """
        Load config from file

        :param file: filepath str or IO-like object.
        :param mode: when param 'file' is filepath, use this mode to open file, otherwise ignored.
               default is 'r'
        """
        f = None
        try:
            if not isinstance(file, IOBase) and not os.path.exists(file):
                raise ConfigError(f"Config file {file} does not exist")

            f = file if isinstance(file, IOBase) else open(file, mode=mode)

            data = yaml.load(f)
            if data is None:
                data = {}
            if not isinstance(data, dict):
                raise ConfigError(
                    "Config data should be dict type, but it was %s" % type(data)
                )
            return cls.from_dict(data)
        except yaml.YAMLError as e:
            return Result(False, message=f"Malformed YAML: {e}", error=ConfigError)
        except ConfigError as e:
            return Result(False, message=str(e), error=ConfigError)
        finally:
            if f:
                f.close()

    @classmethod
    def from_dict(cls, data: dict) -> Result[Optional["RunConfig"]]:
        try:
            config = _fill(cls, data, "")
            return Result(True, data=config.validate())
        except ConfigError as e:
            return Result(False, message=str(e), error=ConfigError)


def _coerce(value, annotation, where: str):
    origin = typing.get_origin(annotation)
    if origin is list or annotation is list:
        if not isinstance(value, list):
            raise ConfigError(f"'{where}' expects a list, got {type(value).__name__}")
        (item_type,) = typing.get_args(annotation) or (None,)
        if item_type is None:
            return list(value)
        return [_coerce(v, item_type, f"{where}[{i}]") for i, v in enumerate(value)]
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"'{where}' expects true/false, got {value!r}")
        return value
    if annotation in (int, float):
        if isinstance(value, bool):
            raise ConfigError(f"'{where}' expects a number, got {value!r}")
        try:
            number = annotation(value)
        except (TypeError, ValueError):
            raise ConfigError(f"'{where}' expects a number, got {value!r}") from None
        if annotation is int and isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"'{where}' expects an integer, got {value!r}")
        return number
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"'{where}' expects a string, got {value!r}")
        return value
    return value


def _fill(clazz, data, prefix: str):
    """Build a dataclass from a dict, rejecting unexpected keys recursively."""
    if not isinstance(data, dict):
        raise ConfigError(f"'{prefix or 'root'}' expects a mapping")
    expected = {f.name: f for f in dataclasses.fields(clazz)}
    hints = typing.get_type_hints(clazz)
    kwargs = {}
    for key, value in data.items():
        where = f"{prefix}{key}"
        if key not in expected:
            raise ConfigError(f"Unexpected config key '{where}' in {clazz.__name__}")
        annotation = hints[key]
        if is_dataclass(annotation):
            kwargs[key] = _fill(annotation, {} if value is None else value, f"{where}.")
        else:
            kwargs[key] = _coerce(value, annotation, where)
    return clazz(**kwargs)


yaml.register_config_type(RunConfig)
