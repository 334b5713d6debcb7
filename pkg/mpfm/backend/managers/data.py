# data.py
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
import os
from dataclasses import dataclass, field

import numpy as np

from mpfm.backend.logger import Logger
from mpfm.backend.models.config import SyntheticSpec
from mpfm.backend.models.enum import Split, UnseenKind
from mpfm.backend.models.errors import (
    ConfigError,
    DatasetParseError,
    FormatVersionError,
    RejectedInputError,
)
from mpfm.backend.params import DATASET_FORMAT, DATASET_VERSION
from mpfm.backend.scoring.heads import FeatureBatch, FeatureSample
from mpfm.backend.utils.rng import make_rng

logging = Logger()

SPLITS = (Split.TRAIN_NORMAL, Split.TRAIN_ANOMALY, Split.TEST)


@dataclass
class Dataset:
    samples: list[FeatureSample] = field(default_factory=list)
    split: str = Split.TEST
    provenance: str = ""

    def __post_init__(self):
        if self.split not in SPLITS:
            raise RejectedInputError(f"Unknown split '{self.split}'")
        ids = [s.sample_id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise RejectedInputError("Sample ids must be unique")
        if self.split == Split.TRAIN_NORMAL and any(s.label for s in self.samples):
            raise RejectedInputError("The train-normal split only holds normal samples")

    def __len__(self):
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    @property
    def feature_dim(self) -> int:
        return self.samples[0].patches.shape[1] if self.samples else 0

    def as_batch(self) -> FeatureBatch:
        return FeatureBatch.from_samples(self.samples)


def _spec_provenance(spec: SyntheticSpec) -> str:
    return f"synthetic seed={spec.seed} modes={spec.n_modes} C={spec.feature_dim} P={spec.n_patches}"


class _Generator:
    """Draws samples for one split; sample ids continue across splits."""

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec
        c = spec.feature_dim
        self.scale = spec.mode_distance / math.sqrt(2.0)
        self.centers = self.scale * np.eye(c)[: spec.n_modes]
        self.seen_axis = np.eye(c)[spec.seen_axis]
        self.unseen_axis = np.eye(c)[spec.unseen_axis]
        self.held_out = -self.scale * np.eye(c)[0]
        self.mode_gap = self.centers.mean(axis=0)
        self.n_offset = max(1, round(spec.anomalous_patch_fraction * spec.n_patches))
        self.next_id = 0

    def _take_id(self) -> int:
        self.next_id += 1
        return self.next_id - 1

    def _around(self, center, rng) -> np.ndarray:
        noise = rng.standard_normal((self.spec.n_patches, self.spec.feature_dim))
        return center + self.spec.mode_spread * noise

    def normal(self, rng) -> FeatureSample:
        mode = int(rng.integers(self.spec.n_modes))
        return FeatureSample(self._take_id(), self._around(self.centers[mode], rng), 0)

    def _offset(self, rng, direction, magnitude) -> FeatureSample:
        mode = int(rng.integers(self.spec.n_modes))
        patches = self._around(self.centers[mode], rng)
        hit = rng.choice(self.spec.n_patches, size=self.n_offset, replace=False)
        patches[hit] += magnitude * direction
        return FeatureSample(self._take_id(), patches, 1)

    def seen(self, rng) -> FeatureSample:
        return self._offset(rng, self.seen_axis, self.spec.seen_magnitude)

    def _two_sided(self, rng) -> FeatureSample:
        # equal +m and -m shifts along the seen axis leave the mean patch unchanged
        half = max(1, self.n_offset // 2)
        mode = int(rng.integers(self.spec.n_modes))
        patches = self._around(self.centers[mode], rng)
        hit = rng.choice(self.spec.n_patches, size=2 * half, replace=False)
        step = self.spec.unseen_magnitude * self.seen_axis
        patches[hit[:half]] += step
        patches[hit[half:]] -= step
        return FeatureSample(self._take_id(), patches, 1)

    def between_modes(self, rng) -> FeatureSample:
        return FeatureSample(self._take_id(), self._around(self.mode_gap, rng), 1)

    def unseen(self, rng) -> FeatureSample:
        kind = self.spec.unseen_kind
        if kind == UnseenKind.HELD_OUT_MODE:
            return FeatureSample(self._take_id(), self._around(self.held_out, rng), 1)
        if kind == UnseenKind.TWO_SIDED_OFFSET:
            return self._two_sided(rng)
        return self._offset(rng, self.unseen_axis, self.spec.unseen_magnitude)


def generate(spec: SyntheticSpec) -> tuple[Dataset, Dataset, Dataset]:
    """
    Build the open-set splits: normals come from the modes a * e_k, train
    anomalies shift a subset of patches along the seen axis, and test
    anomalies come from the unseen generator only (plus seen-type ones
    when seen_kind_in_test is set). A mode_gap_fraction share of the unseen
    ones sits between the modes, at the centroid of the mode centers.
    """
    try:
        spec.validate()
    except ConfigError as e:
        raise RejectedInputError(str(e)) from e

    gen = _Generator(spec)
    provenance = _spec_provenance(spec)

    rng = make_rng(spec.seed, 0)
    train_normal = [gen.normal(rng) for _ in range(spec.n_train_normal)]
    rng = make_rng(spec.seed, 1)
    train_anomaly = [gen.seen(rng) for _ in range(spec.n_train_anomaly)]

    rng = make_rng(spec.seed, 2)
    test = [gen.normal(rng) for _ in range(spec.n_test_normal)]
    n_seen = spec.n_test_anomaly // 2 if spec.seen_kind_in_test else 0
    n_unseen = spec.n_test_anomaly - n_seen
    n_gap = round(spec.mode_gap_fraction * n_unseen)
    test += [gen.seen(rng) for _ in range(n_seen)]
    test += [gen.between_modes(rng) for _ in range(n_gap)]
    test += [gen.unseen(rng) for _ in range(n_unseen - n_gap)]

    logging.info(
        f"Generated {len(train_normal)} train normals, {len(train_anomaly)} train anomalies, "
        f"{len(test)} test samples ({provenance})"
    )
    return (
        Dataset(train_normal, Split.TRAIN_NORMAL, provenance),
        Dataset(train_anomaly, Split.TRAIN_ANOMALY, provenance),
        Dataset(test, Split.TEST, provenance),
    )


def save(dataset: Dataset, path: str):
    """One row per patch, ordered by (sample_id, patch_id), 17 significant digits."""
    c = dataset.feature_dim
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"{DATASET_FORMAT},{DATASET_VERSION},{dataset.split},{dataset.provenance}\n")
        f.write(",".join(["sample_id", "patch_id", "label"] + [f"f{i}" for i in range(c)]) + "\n")
        for sample in sorted(dataset.samples, key=lambda s: s.sample_id):
            for pid, row in enumerate(sample.patches):
                values = ",".join(format(v, ".17g") for v in row)
                f.write(f"{sample.sample_id},{pid},{sample.label},{values}\n")


def _parse_int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise DatasetParseError(line, f"{what} '{text}' is not an integer") from None


def load(path: str) -> Dataset:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise DatasetParseError(1, "missing version line")

    tag = lines[0].split(",", 3)
    if len(tag) < 3 or tag[0] != DATASET_FORMAT:
        raise DatasetParseError(1, f"expected '{DATASET_FORMAT},<version>,<split>,<provenance>'")
    if tag[1] != str(DATASET_VERSION):
        raise FormatVersionError(f"Dataset version {tag[1]} is not supported (expected {DATASET_VERSION})")
    split = tag[2]
    if split not in SPLITS:
        raise DatasetParseError(1, f"unknown split '{split}'")
    provenance = tag[3] if len(tag) > 3 else ""

    if len(lines) < 2:
        raise DatasetParseError(2, "missing header")
    header = lines[1].split(",")
    c = len(header) - 3
    if header[:3] != ["sample_id", "patch_id", "label"] or header[3:] != [f"f{i}" for i in range(c)]:
        raise DatasetParseError(2, "header must be sample_id,patch_id,label,f0..")

    samples: list[FeatureSample] = []
    rows: list[list[float]] = []
    current: tuple[int, int] | None = None

    def flush():
        if current is not None:
            samples.append(FeatureSample(current[0], np.array(rows, dtype=np.float64), current[1]))

    for number, text in enumerate(lines[2:], start=3):
        if not text:
            continue
        fields = text.split(",")
        if len(fields) != c + 3:
            raise DatasetParseError(number, f"expected {c + 3} fields, got {len(fields)}")
        sid = _parse_int(fields[0], "sample_id", number)
        pid = _parse_int(fields[1], "patch_id", number)
        label = _parse_int(fields[2], "label", number)
        if label not in (0, 1):
            raise DatasetParseError(number, f"label must be 0 or 1, got {label}")
        try:
            values = [float(v) for v in fields[3:]]
        except ValueError:
            raise DatasetParseError(number, "feature value is not a number") from None
        if not all(math.isfinite(v) for v in values):
            raise DatasetParseError(number, "feature value is not finite")

        if current is None or sid != current[0]:
            if current is not None and sid < current[0]:
                raise DatasetParseError(number, "rows must be ordered by sample_id")
            if pid != 0:
                raise DatasetParseError(number, f"sample {sid} must start at patch 0")
            flush()
            current, rows = (sid, label), []
        elif pid != len(rows):
            raise DatasetParseError(number, f"expected patch {len(rows)}, got {pid}")
        elif label != current[1]:
            raise DatasetParseError(number, f"label changes within sample {sid}")
        rows.append(values)
    flush()

    try:
        return Dataset(samples, split, provenance)
    except RejectedInputError as e:
        raise DatasetParseError(len(lines), str(e)) from e


class DataManager:
    """Generate the synthetic splits, or load them from a data directory."""

    file_names = {
        Split.TRAIN_NORMAL: "train-normal.csv",
        Split.TRAIN_ANOMALY: "train-anomaly.csv",
        Split.TEST: "test.csv",
    }

    def __init__(self, spec: SyntheticSpec, data_dir: str = ""):
        self.spec = spec
        self.data_dir = data_dir

    def get(self) -> tuple[Dataset, Dataset, Dataset]:
        if self.data_dir:
            logging.info(f"Loading datasets from {self.data_dir}")
            train_normal, train_anomaly, test = (
                load(os.path.join(self.data_dir, self.file_names[split])) for split in SPLITS
            )
            return train_normal, train_anomaly, test
        return generate(self.spec)

    def write(self, out_dir: str, datasets: tuple[Dataset, Dataset, Dataset]) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        for dataset in datasets:
            path = os.path.join(out_dir, self.file_names[dataset.split])
            save(dataset, path)
            paths.append(path)
        return paths
